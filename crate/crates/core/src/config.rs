//! Layered `key=value` run configuration: defaults, then a preset, then a
//! file, then `KGE_*` environment variables, then command-line overrides.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::anchors::{AnchorStrategy, TokenConfig};
use crate::graph::Split;
use crate::training::{TrainConfig, TRAIN_KEYS};

pub const ENV_PREFIX: &str = "KGE_";

/// Keys beyond the training keys: paths and tokenization settings.
pub const RUN_KEYS: &[(&str, &str)] = &[
    (
        "data",
        "directory holding train.txt, valid.txt, test.txt (tab-separated triples)",
    ),
    ("format", "triple file format: labels | numeric"),
    ("store", "ingested triple store directory"),
    ("tokens", "token cache file"),
    ("anchors", "number of global anchors"),
    ("anchor_strategy", "anchor selection: degree | random"),
    ("k_anc", "anchor slots per entity"),
    ("k_in", "incoming-neighbor slots per entity"),
    ("k_out", "outgoing-neighbor slots per entity"),
    ("use_center", "give every entity its own center token (true/false)"),
    ("token_seed", "seed of neighbor sampling and random anchors"),
    ("checkpoint_dir", "directory receiving last.ckpt and best.ckpt"),
    ("checkpoint", "checkpoint file to evaluate or export"),
    ("resume", "checkpoint file to continue training from"),
    ("metrics_log", "JSON-lines metrics file (default: standard output)"),
    ("candidates", "candidate-set file for protocol=candidate-set"),
    ("split", "split evaluated by `eval`: train | valid | test"),
];

/// Keys a preset leaves to the user.
pub const PRESET_REQUIRED: &[&str] = &["gamma", "adv_alpha"];

const INTERHT_WIKIKG2: &str = "\
model=interht
dim=200
norm=1
u=0.05
lr=0.0005
batch_size=512
neg_size=128
neg_mode=both
filter_negatives=false
steps_max=500000
valid_every=20000
log_every=100
seed=0
entity_repr=tokens
d_tok=200
heads=4
ffn_mult=2
combiner=transformer
protocol=filtered-full
tie_policy=mean
both_directions=true
valid_max_queries=0
anchors=20000
anchor_strategy=degree
k_anc=20
k_in=5
k_out=5
use_center=true
token_seed=0
";

const INTERHT_PLUS_WIKIKG2: &str = "\
model=interht-plus
dim=512
norm=1
u=0.05
lr=0.0005
batch_size=512
neg_size=128
neg_mode=both
filter_negatives=false
steps_max=500000
valid_every=20000
log_every=100
seed=0
entity_repr=tokens
d_tok=512
heads=4
ffn_mult=2
combiner=transformer
protocol=filtered-full
tie_policy=mean
both_directions=true
valid_max_queries=0
anchors=20000
anchor_strategy=degree
k_anc=20
k_in=5
k_out=5
use_center=true
token_seed=0
";

pub const PRESETS: &[(&str, &str)] = &[
    ("interht-wikikg2", INTERHT_WIKIKG2),
    ("interht-plus-wikikg2", INTERHT_PLUS_WIKIKG2),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub numeric: bool,
    pub store: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub anchors: usize,
    pub random_anchors: bool,
    pub k_anc: usize,
    pub k_in: usize,
    pub k_out: usize,
    pub use_center: bool,
    pub token_seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tok = TokenConfig::default();
        RunConfig {
            train: TrainConfig::default(),
            data: None,
            numeric: false,
            store: None,
            tokens: None,
            anchors: 20_000,
            random_anchors: false,
            k_anc: tok.k_anc,
            k_in: tok.k_in,
            k_out: tok.k_out,
            use_center: tok.use_center,
            token_seed: 0,
            checkpoint_dir: None,
            checkpoint: None,
            resume: None,
            metrics_log: None,
            candidates: None,
            split: Split::Test,
        }
    }
}

/// Every accepted key with its description, training keys first.
pub fn all_keys() -> impl Iterator<Item = (&'static str, &'static str)> {
    TRAIN_KEYS.iter().chain(RUN_KEYS).copied()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got `{v}`")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        if self.train.set(key, v)? {
            return Ok(());
        }
        match key {
            "data" => self.data = path(v),
            "format" => {
                self.numeric = match v {
                    "labels" => false,
                    "numeric" => true,
                    _ => return Err(format!("format: expected labels | numeric, got `{v}`")),
                }
            }
            "store" => self.store = path(v),
            "tokens" => self.tokens = path(v),
            "anchors" => self.anchors = parse_num(key, v)?,
            "anchor_strategy" => {
                self.random_anchors = match v {
                    "degree" => false,
                    "random" => true,
                    _ => return Err(format!("anchor_strategy: expected degree | random, got `{v}`")),
                }
            }
            "k_anc" => self.k_anc = parse_num(key, v)?,
            "k_in" => self.k_in = parse_num(key, v)?,
            "k_out" => self.k_out = parse_num(key, v)?,
            "use_center" => self.use_center = parse_bool(key, v)?,
            "token_seed" => self.token_seed = parse_num(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "resume" => self.resume = path(v),
            "metrics_log" => self.metrics_log = path(v),
            "candidates" => self.candidates = path(v),
            "split" => self.split = v.parse().map_err(|e| format!("split: {e}"))?,
            _ => return Err(format!("unknown config key `{key}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.train.get(key) {
            return Some(v);
        }
        Some(match key {
            "data" => show(&self.data),
            "format" => if self.numeric { "numeric" } else { "labels" }.to_owned(),
            "store" => show(&self.store),
            "tokens" => show(&self.tokens),
            "anchors" => self.anchors.to_string(),
            "anchor_strategy" => if self.random_anchors { "random" } else { "degree" }.to_owned(),
            "k_anc" => self.k_anc.to_string(),
            "k_in" => self.k_in.to_string(),
            "k_out" => self.k_out.to_string(),
            "use_center" => self.use_center.to_string(),
            "token_seed" => self.token_seed.to_string(),
            "checkpoint_dir" => show(&self.checkpoint_dir),
            "checkpoint" => show(&self.checkpoint),
            "resume" => show(&self.resume),
            "metrics_log" => show(&self.metrics_log),
            "candidates" => show(&self.candidates),
            "split" => self.split.name().to_owned(),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in all_keys() {
            let _ = writeln!(out, "{k}={}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn token_config(&self) -> TokenConfig {
        TokenConfig {
            k_anc: self.k_anc,
            k_in: self.k_in,
            k_out: self.k_out,
            use_center: self.use_center,
        }
    }

    pub fn anchor_strategy(&self) -> AnchorStrategy {
        if self.random_anchors {
            AnchorStrategy::Random { seed: self.token_seed }
        } else {
            AnchorStrategy::Degree
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.train.validate();
        if self.k_anc + self.k_in + self.k_out == 0 && !self.use_center {
            errs.push("token records would be empty: raise k_anc/k_in/k_out or set use_center=true".into());
        }
        errs
    }
}

/// Parses `key=value` lines; `#` starts a comment line. Errors carry `origin:line`.
pub fn parse_lines(text: &str, origin: &str) -> Result<Vec<(String, String)>, Vec<String>> {
    let mut out = Vec::new();
    let mut errs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_owned(), v.trim().to_owned())),
            None => errs.push(format!("{origin}:{}: expected key=value, got `{line}`", i + 1)),
        }
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(errs)
    }
}

/// Inputs of [`resolve`], lowest precedence first.
#[derive(Clone, Debug, Default)]
pub struct Layers {
    pub preset: Option<String>,
    /// `(origin, text)` of a config file.
    pub file: Option<(String, String)>,
    /// Raw process environment; only `KGE_*` entries are used.
    pub env: Vec<(String, String)>,
    /// `key=value` overrides from the command line.
    pub overrides: Vec<String>,
}

/// Builds a `RunConfig`, collecting every problem instead of stopping at the first.
pub fn resolve(layers: &Layers) -> Result<RunConfig, Vec<String>> {
    let mut cfg = RunConfig::default();
    let mut errs = Vec::new();
    let mut explicit: Vec<String> = Vec::new();
    fn apply(
        cfg: &mut RunConfig,
        pairs: Vec<(String, String)>,
        origin: &str,
        explicit: &mut Vec<String>,
        errs: &mut Vec<String>,
    ) {
        for (k, v) in pairs {
            match cfg.set(&k, &v) {
                Ok(()) => explicit.push(k),
                Err(e) => errs.push(format!("{origin}: {e}")),
            }
        }
    }

    if let Some(name) = &layers.preset {
        match PRESETS.iter().find(|(n, _)| n == name) {
            Some((_, text)) => {
                let pairs = parse_lines(text, name).expect("presets are well formed");
                apply(&mut cfg, pairs, name, &mut Vec::new(), &mut errs);
            }
            None => {
                let known: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
                errs.push(format!("unknown preset `{name}` (known: {})", known.join(", ")));
            }
        }
    }
    if let Some((origin, text)) = &layers.file {
        match parse_lines(text, origin) {
            Ok(pairs) => apply(&mut cfg, pairs, origin, &mut explicit, &mut errs),
            Err(e) => errs.extend(e),
        }
    }
    let env_pairs: Vec<(String, String)> = layers
        .env
        .iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            if all_keys().any(|(name, _)| name == key) {
                Some((key, v.clone()))
            } else {
                log::warn!("ignoring environment variable {k}: not a config key");
                None
            }
        })
        .collect();
    apply(&mut cfg, env_pairs, "environment", &mut explicit, &mut errs);
    let mut cli_pairs = Vec::new();
    for o in &layers.overrides {
        match o.split_once('=') {
            Some((k, v)) => cli_pairs.push((k.trim().to_owned(), v.trim().to_owned())),
            None => errs.push(format!("override `{o}` is not key=value")),
        }
    }
    apply(&mut cfg, cli_pairs, "command line", &mut explicit, &mut errs);

    if let Some(name) = &layers.preset {
        for key in PRESET_REQUIRED {
            if !explicit.iter().any(|k| k == key) {
                errs.push(format!("preset `{name}` requires an explicit value for `{key}`"));
            }
        }
    }
    errs.extend(cfg.validate());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}
