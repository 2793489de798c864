fn main() {
    std::process::exit(kge_core::cli::run(std::env::args_os()));
}
