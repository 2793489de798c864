//! The `kge` command-line tool. Machine-readable output goes to standard
//! output as JSON lines; human summaries go to standard error.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::{coverage, read_token_cache, select_global_anchors, write_token_cache, Tokenization};
use crate::config::{all_keys, resolve, Layers, RunConfig, ENV_PREFIX, PRESETS};
use crate::encoder::Combiner;
use crate::eval::{evaluate_split, load_candidate_sets, CandidateSets, EvalOptions, Protocol};
use crate::gradcheck::{check_block, check_encoder, check_kernel, GradReport};
use crate::graph::{load_triples, read_store_dir, write_store_dir, TripleFormat, TripleStore};
use crate::real::Real;
use crate::scoring::ModelKind;
use crate::training::{train, Checkpoint, EntityRepr, TrainError, TrainOptions};

pub const EXPORT_MAGIC: &[u8; 4] = b"KGEX";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files; exit code 2.
    Usage(Vec<String>),
    /// Anything else; exit code 1.
    Internal(String),
    /// A verification command found a failure; exit code 3.
    Verify(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
            CliError::Verify(_) => 3,
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(vec![msg.into()])
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(errs) => {
                for e in errs {
                    writeln!(f, "error: {e}")?;
                }
                Ok(())
            }
            CliError::Internal(e) => writeln!(f, "internal error: {e}"),
            CliError::Verify(e) => writeln!(f, "verification failed: {e}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(errs) => CliError::Usage(errs),
            e @ (TrainError::Checkpoint(_)
            | TrainError::DimensionMismatch(_)
            | TrainError::MissingTokens
            | TrainError::TokenMismatch(_)) => CliError::usage(e.to_string()),
            e => CliError::Internal(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "kge",
    version,
    about = "Knowledge-graph embeddings: InterHT, InterHT+ and baselines"
)]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, reproducible run; metric logs omit wall-clock times
    #[arg(long, global = true)]
    deterministic: bool,
    /// Raise log verbosity (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset applied before the config file
    #[arg(long)]
    preset: Option<String>,
    /// Override one key (repeatable); also accepted as bare KEY=VALUE arguments
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse triple files and write a binary store plus vocabularies (keys: data, format, store)
    Ingest(ConfigArgs),
    /// Select anchors and write the token cache (keys: store, tokens, anchors, k_*)
    Tokenize(ConfigArgs),
    /// Train a model (keys: store, checkpoint_dir, tokens, resume, metrics_log, ...)
    Train(ConfigArgs),
    /// Rank a split with a checkpoint and print the report (keys: store, checkpoint, split, ...)
    Eval(ConfigArgs),
    /// Finite-difference checks of every kernel, the transformer block and the encoder
    Gradcheck(GradcheckArgs),
    /// Write an embedding table as header + little-endian float rows
    Export(ExportArgs),
    /// List every configuration key
    Keys,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random instances per kernel and for the block
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Largest embedding dimension drawn
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output file
    #[arg(long)]
    out: PathBuf,
    /// entity | relation
    #[arg(long, default_value = "entity")]
    table: String,
}

fn keys_help() -> String {
    let mut s = String::from("Configuration keys (set in --config files, as KEY=VALUE, or via ");
    s.push_str(ENV_PREFIX);
    s.push_str("<KEY> environment variables; command line beats environment beats file beats preset):\n");
    for (k, d) in all_keys() {
        s.push_str(&format!("  {k:<18} {d}\n"));
    }
    s.push_str("Presets: ");
    s.push_str(&PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "));
    s.push_str(" (gamma and adv_alpha must be given explicitly)\n");
    s
}

fn command() -> clap::Command {
    let help = keys_help();
    let mut cmd = Cli::command().after_help(help.clone());
    for name in ["ingest", "tokenize", "train", "eval", "export", "keys"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_help(help.clone()));
    }
    cmd
}

/// Runs the tool and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    let ctx = Ctx {
        threads,
        deterministic: cli.deterministic,
    };
    let result = match cli.command {
        Command::Ingest(a) => config(&a).and_then(|c| cmd_ingest(&c)),
        Command::Tokenize(a) => config(&a).and_then(|c| cmd_tokenize(&c, &ctx)),
        Command::Train(a) => config(&a).and_then(|c| cmd_train(&c, &ctx)),
        Command::Eval(a) => config(&a).and_then(|c| cmd_eval(&c, &ctx)),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Export(a) => config(&a.config).and_then(|c| cmd_export(&c, &a.out, &a.table, &ctx)),
        Command::Keys => {
            print!("{}", keys_help());
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprint!("{e}");
            e.code()
        }
    }
}

struct Ctx {
    threads: usize,
    deterministic: bool,
}

fn config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let file = match &args.config {
        Some(p) => Some((
            p.display().to_string(),
            fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
        )),
        None => None,
    };
    let layers = Layers {
        preset: args.preset.clone(),
        file,
        env: std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect(),
        overrides: args.set.iter().chain(&args.overrides).cloned().collect(),
    };
    resolve(&layers).map_err(CliError::Usage)
}

/// Collects every missing required key at once.
fn require<'a>(pairs: &[(&str, &'a Option<PathBuf>)]) -> CliResult<Vec<&'a Path>> {
    let missing: Vec<String> = pairs
        .iter()
        .filter(|(_, p)| p.is_none())
        .map(|(k, _)| format!("missing required key `{k}`"))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(missing));
    }
    Ok(pairs.iter().map(|(_, p)| p.as_deref().unwrap()).collect())
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn println_json(v: &impl serde::Serialize) -> CliResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, v).map_err(internal)?;
    writeln!(out).map_err(internal)
}

fn load_store(path: &Path) -> CliResult<TripleStore> {
    read_store_dir(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_tokens(path: &Path, store: &TripleStore) -> CliResult<Tokenization> {
    let tok = read_token_cache(open(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if tok.num_entities() != store.num_entities() {
        return Err(CliError::usage(format!(
            "{}: token cache covers {} entities, store has {}",
            path.display(),
            tok.num_entities(),
            store.num_entities()
        )));
    }
    Ok(tok)
}

fn cmd_ingest(cfg: &RunConfig) -> CliResult {
    let [data, out]: [&Path; 2] = require(&[("data", &cfg.data), ("store", &cfg.store)])?
        .try_into()
        .unwrap();
    // A directory holds train/valid/test files; a single file is the train split.
    let files: [Option<PathBuf>; 3] = if data.is_dir() {
        let train = data.join("train.txt");
        if !train.exists() {
            return Err(CliError::usage(format!("{}: not found", train.display())));
        }
        let opt = |n: &str| Some(data.join(n)).filter(|p| p.exists());
        [Some(train), opt("valid.txt"), opt("test.txt")]
    } else {
        [Some(data.to_path_buf()), None, None]
    };
    let mut sources: Vec<Box<dyn io::BufRead>> = Vec::new();
    for f in &files {
        sources.push(match f {
            Some(p) => Box::new(open(p)?),
            None => Box::new(io::empty()),
        });
    }
    let sources: [Box<dyn io::BufRead>; 3] = sources.try_into().ok().unwrap();
    let format = if cfg.numeric {
        TripleFormat::Numeric {
            num_entities: None,
            num_relations: None,
        }
    } else {
        TripleFormat::Labels
    };
    let store = load_triples(sources, format).map_err(|e| CliError::usage(e.to_string()))?;
    write_store_dir(&store, out).map_err(internal)?;
    eprintln!("{}", store.stats_line());
    println_json(&serde_json::json!({
        "entities": store.num_entities(),
        "relations": store.num_relations(),
        "train": store.train.len(),
        "valid": store.valid.len(),
        "test": store.test.len(),
        "duplicates": {
            "train": store.duplicates[0],
            "valid": store.duplicates[1],
            "test": store.duplicates[2],
        },
    }))
}

fn cmd_tokenize(cfg: &RunConfig, ctx: &Ctx) -> CliResult {
    let [store_dir, out]: [&Path; 2] = require(&[("store", &cfg.store), ("tokens", &cfg.tokens)])?
        .try_into()
        .unwrap();
    let store = load_store(store_dir)?;
    let count = cfg.anchors.min(store.num_entities());
    let anchors = select_global_anchors(&store, count, cfg.anchor_strategy());
    let tok = Tokenization::build(&store, anchors, cfg.token_config(), cfg.token_seed, ctx.threads);
    let mut w = create(out)?;
    write_token_cache(&tok, &mut w).map_err(internal)?;
    w.flush().map_err(internal)?;
    let report = coverage(&store, &tok);
    eprintln!(
        "anchors={} one-hop coverage={:.4} center-only={}",
        tok.anchors.len(),
        report.one_hop_fraction,
        report.center_only
    );
    println_json(&report)
}

fn load_candidates(cfg: &RunConfig, triples: &[crate::graph::Triple]) -> CliResult<Option<CandidateSets>> {
    if cfg.train.protocol != Protocol::CandidateSet {
        return Ok(None);
    }
    let path = require(&[("candidates", &cfg.candidates)])?[0];
    load_candidate_sets(open(path)?, triples)
        .map(Some)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn cmd_train(cfg: &RunConfig, ctx: &Ctx) -> CliResult {
    let mut required = vec![("store", &cfg.store), ("checkpoint_dir", &cfg.checkpoint_dir)];
    if cfg.train.entity_repr == EntityRepr::Tokens {
        required.push(("tokens", &cfg.tokens));
    }
    let paths = require(&required)?;
    let (store_dir, ck_dir) = (paths[0], paths[1]);
    let store = load_store(store_dir)?;
    let tokens = match cfg.train.entity_repr {
        EntityRepr::Tokens => Some(load_tokens(paths[2], &store)?),
        EntityRepr::Direct => None,
    };
    let candidates = if store.valid.is_empty() {
        None
    } else {
        load_candidates(cfg, &store.valid)?
    };
    let start = match &cfg.resume {
        Some(p) => Some(Checkpoint::<f32>::load(open(p)?, Some(&cfg.train))?),
        None => None,
    };
    fs::create_dir_all(ck_dir).map_err(internal)?;
    fs::write(ck_dir.join("run.conf"), cfg.to_text()).map_err(internal)?;

    let mut sink: Box<dyn Write> = match &cfg.metrics_log {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let opts = TrainOptions {
        threads: ctx.threads,
        deterministic: ctx.deterministic,
        valid_candidates: candidates.as_ref(),
    };
    let out = train::<f32>(&store, tokens.as_ref(), &cfg.train, start, &opts, &mut |r| {
        serde_json::to_writer(&mut sink, r)?;
        writeln!(sink)
    })?;
    sink.flush().map_err(internal)?;
    drop(sink);

    let save = |name: &str, ck: &Checkpoint<f32>| -> CliResult<PathBuf> {
        let p = ck_dir.join(name);
        let mut w = create(&p)?;
        ck.save(&mut w).map_err(internal)?;
        w.flush().map_err(internal)?;
        Ok(p)
    };
    let last = save("last.ckpt", &out.last)?;
    eprintln!("step={} last={}", out.last.step, last.display());
    if let Some((mrr, best)) = &out.best {
        let p = save("best.ckpt", best)?;
        eprintln!("best valid mrr={mrr:.4} at step {} -> {}", best.step, p.display());
    }
    if let Some(l) = out.losses.last() {
        eprintln!("final batch loss={l:.6}");
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, ctx: &Ctx) -> CliResult {
    let [store_dir, ck_path]: [&Path; 2] = require(&[("store", &cfg.store), ("checkpoint", &cfg.checkpoint)])?
        .try_into()
        .unwrap();
    let store = load_store(store_dir)?;
    let ck = Checkpoint::<f32>::load(open(ck_path)?, None)?;
    check_model_fits(&ck, &store)?;
    let tokens = match ck.config.entity_repr {
        EntityRepr::Tokens => Some(load_tokens(require(&[("tokens", &cfg.tokens)])?[0], &store)?),
        EntityRepr::Direct => None,
    };
    let triples = store.split(cfg.split);
    if triples.is_empty() {
        return Err(CliError::usage(format!("split `{}` is empty", cfg.split.name())));
    }
    let candidates = load_candidates(cfg, triples)?;
    let table = ck.model.entity_table(tokens.as_ref(), ctx.threads)?;
    let scorer = ck.model.scorer(&table);
    let opts = EvalOptions {
        protocol: cfg.train.protocol,
        tie_policy: cfg.train.tie_policy,
        both_directions: cfg.train.both_directions,
        max_queries: 0,
        threads: ctx.threads,
    };
    let report = evaluate_split(&scorer, &store, triples, &opts, candidates.as_ref())
        .map_err(|e| CliError::usage(e.to_string()))?;
    eprintln!(
        "{} {} queries: mrr={:.4} hits@1={:.4} hits@3={:.4} hits@10={:.4} ({}, ties={})",
        cfg.split.name(),
        report.count,
        report.mrr,
        report.hits(1).unwrap_or(0.0),
        report.hits(3).unwrap_or(0.0),
        report.hits(10).unwrap_or(0.0),
        report.protocol.name(),
        report.tie_policy.name()
    );
    let mut v = serde_json::to_value(&report).map_err(internal)?;
    v["split"] = cfg.split.name().into();
    v["model"] = ck.config.model.name().into();
    v["step"] = ck.step.into();
    println_json(&v)
}

fn check_model_fits(ck: &Checkpoint<f32>, store: &TripleStore) -> CliResult {
    if ck.model.num_entities() != store.num_entities() || ck.model.num_relations() != store.num_relations() {
        return Err(CliError::usage(format!(
            "checkpoint has {} entities / {} relations, store has {} / {}",
            ck.model.num_entities(),
            ck.model.num_relations(),
            store.num_entities(),
            store.num_relations()
        )));
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult {
    if args.instances == 0 || args.dim < 2 {
        return Err(CliError::usage("gradcheck needs --instances ≥ 1 and --dim ≥ 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut reports: Vec<GradReport> = ModelKind::ALL
        .iter()
        .map(|&k| check_kernel(k, args.instances, args.dim, &mut rng))
        .collect();
    reports.push(check_block(args.instances, &mut rng));
    let enc = (args.instances / 5).max(1);
    reports.push(check_encoder(enc, Combiner::Transformer, &mut rng));
    reports.push(check_encoder(enc, Combiner::MeanPool, &mut rng));

    eprintln!(
        "{:<22} {:>9} {:>7} {:>12} {:>9}  result",
        "target", "instances", "kinks", "max rel err", "tol"
    );
    for r in &reports {
        eprintln!(
            "{:<22} {:>9} {:>7} {:>12.3e} {:>9.0e}  {}",
            r.target,
            r.instances,
            r.skipped_kinks,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
        println_json(r)?;
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.target.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

/// Writes `rows × cols` values after a small header.
pub fn write_export<T: Real, W: Write>(name: &str, rows: usize, cols: usize, data: &[T], mut w: W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(32 + data.len() * T::DTYPE as usize);
    buf.extend_from_slice(EXPORT_MAGIC);
    buf.extend_from_slice(&EXPORT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(T::DTYPE as u32).to_le_bytes());
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    for x in data {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)
}

fn cmd_export(cfg: &RunConfig, out: &Path, table: &str, ctx: &Ctx) -> CliResult {
    let ck_path = require(&[("checkpoint", &cfg.checkpoint)])?[0];
    let ck = Checkpoint::<f32>::load(open(ck_path)?, None)?;
    let mut w = create(out)?;
    match table {
        "entity" => {
            let tokens = match ck.config.entity_repr {
                EntityRepr::Tokens => {
                    let [store_dir, tok]: [&Path; 2] = require(&[("store", &cfg.store), ("tokens", &cfg.tokens)])?
                        .try_into()
                        .unwrap();
                    Some(load_tokens(tok, &load_store(store_dir)?)?)
                }
                EntityRepr::Direct => None,
            };
            let t = ck.model.entity_table(tokens.as_ref(), ctx.threads)?;
            write_export("entity", t.rows, t.cols, &t.data, &mut w).map_err(internal)?;
            eprintln!("wrote {} entity rows of width {} to {}", t.rows, t.cols, out.display());
        }
        "relation" => {
            let t = &ck.model.relation;
            write_export("relation", t.rows, t.cols, &t.data, &mut w).map_err(internal)?;
            eprintln!(
                "wrote {} relation rows of width {} to {}",
                t.rows,
                t.cols,
                out.display()
            );
        }
        other => {
            return Err(CliError::usage(format!(
                "--table must be entity or relation, got `{other}`"
            )))
        }
    }
    w.flush().map_err(internal)
}
