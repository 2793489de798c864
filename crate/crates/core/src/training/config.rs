use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::encoder::Combiner;
use crate::eval::{Protocol, TiePolicy};
use crate::graph::Direction;
use crate::scoring::{ModelKind, Norm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NegativeMode {
    CorruptHead,
    CorruptTail,
    /// Tail corruption on even steps, head corruption on odd steps.
    Alternate,
}

impl NegativeMode {
    pub fn name(self) -> &'static str {
        match self {
            NegativeMode::CorruptHead => "head",
            NegativeMode::CorruptTail => "tail",
            NegativeMode::Alternate => "both",
        }
    }

    /// Side corrupted at 0-based optimizer step `step`.
    pub fn side_for_step(self, step: u64) -> Direction {
        match self {
            NegativeMode::CorruptHead => Direction::Head,
            NegativeMode::CorruptTail => Direction::Tail,
            NegativeMode::Alternate if step.is_multiple_of(2) => Direction::Tail,
            NegativeMode::Alternate => Direction::Head,
        }
    }
}

impl FromStr for NegativeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(NegativeMode::CorruptHead),
            "tail" => Ok(NegativeMode::CorruptTail),
            "both" | "alternate" => Ok(NegativeMode::Alternate),
            other => Err(format!("unknown negative mode `{other}` (head | tail | both)")),
        }
    }
}

/// How entity vectors are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntityRepr {
    /// One learnable row per entity.
    Direct,
    /// Encoded from a token cache.
    Tokens,
}

impl FromStr for EntityRepr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(EntityRepr::Direct),
            "tokens" => Ok(EntityRepr::Tokens),
            other => Err(format!("unknown entity representation `{other}` (direct | tokens)")),
        }
    }
}

/// Everything that determines a training run's numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub norm: Norm,
    pub gamma: f64,
    pub adv_alpha: f64,
    pub u: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub neg_size: usize,
    pub neg_mode: NegativeMode,
    pub filter_negatives: bool,
    pub steps_max: usize,
    pub valid_every: usize,
    pub log_every: usize,
    pub seed: u64,
    pub entity_repr: EntityRepr,
    pub d_tok: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub combiner: Combiner,
    pub protocol: Protocol,
    pub tie_policy: TiePolicy,
    pub both_directions: bool,
    /// Cap on validation queries per evaluation (0 = whole split).
    pub valid_max_queries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::InterHT,
            dim: 200,
            norm: Norm::L1,
            gamma: 10.0,
            adv_alpha: 1.0,
            u: 0.05,
            lr: 5e-4,
            batch_size: 512,
            neg_size: 128,
            neg_mode: NegativeMode::Alternate,
            filter_negatives: false,
            steps_max: 500_000,
            valid_every: 20_000,
            log_every: 100,
            seed: 0,
            entity_repr: EntityRepr::Direct,
            d_tok: 200,
            heads: 4,
            ffn_mult: 2,
            combiner: Combiner::Transformer,
            protocol: Protocol::FilteredFull,
            tie_policy: TiePolicy::Mean,
            both_directions: true,
            valid_max_queries: 0,
        }
    }
}

/// `(key, description)` for every training key, in canonical order.
pub const TRAIN_KEYS: &[(&str, &str)] = &[
    (
        "model",
        "scoring function: transe rotate pairre triplere-v1 triplere-v2 distmult complex interht interht-plus",
    ),
    ("dim", "entity embedding dimension d"),
    ("norm", "residual norm order, 1 or 2"),
    ("gamma", "margin γ of the loss"),
    (
        "adv_alpha",
        "self-adversarial temperature α (0 = uniform 1/k weighting)",
    ),
    ("u", "constant u of InterHT+ / TripleRE v2"),
    ("lr", "Adam learning rate"),
    ("batch_size", "positive triples per step"),
    ("neg_size", "negatives per positive k"),
    ("neg_mode", "negative corruption: head | tail | both (alternating)"),
    (
        "filter_negatives",
        "reject negatives that are train triples (true/false)",
    ),
    ("steps_max", "training steps"),
    ("valid_every", "steps between validation runs"),
    ("log_every", "steps between metric log lines"),
    ("seed", "RNG seed"),
    (
        "entity_repr",
        "direct (lookup table) | tokens (encoder over token cache)",
    ),
    ("d_tok", "token embedding width of the encoder"),
    ("heads", "attention heads of the encoder"),
    ("ffn_mult", "feed-forward expansion factor of the encoder"),
    ("combiner", "transformer | mean (pool token embeddings directly)"),
    ("protocol", "evaluation protocol: filtered-full | candidate-set"),
    ("tie_policy", "rank under score ties: optimistic | pessimistic | mean"),
    ("both_directions", "evaluate head and tail queries (true/false)"),
    ("valid_max_queries", "cap on validation triples per evaluation, 0 = all"),
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, String>
where
    V::Err: std::fmt::Display,
{
    value
        .parse::<V>()
        .map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got `{value}`")),
    }
}

impl TrainConfig {
    /// Sets one key; `Ok(false)` if the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        match key {
            "model" => self.model = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "norm" => self.norm = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "adv_alpha" => self.adv_alpha = parse(key, value)?,
            "u" => self.u = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "neg_size" => self.neg_size = parse(key, value)?,
            "neg_mode" => self.neg_mode = parse(key, value)?,
            "filter_negatives" => self.filter_negatives = parse_bool(key, value)?,
            "steps_max" => self.steps_max = parse(key, value)?,
            "valid_every" => self.valid_every = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "entity_repr" => self.entity_repr = parse(key, value)?,
            "d_tok" => self.d_tok = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ffn_mult" => self.ffn_mult = parse(key, value)?,
            "combiner" => self.combiner = parse(key, value)?,
            "protocol" => self.protocol = parse(key, value)?,
            "tie_policy" => self.tie_policy = parse(key, value)?,
            "both_directions" => self.both_directions = parse_bool(key, value)?,
            "valid_max_queries" => self.valid_max_queries = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "model" => self.model.name().to_owned(),
            "dim" => self.dim.to_string(),
            "norm" => self.norm.order().to_string(),
            "gamma" => self.gamma.to_string(),
            "adv_alpha" => self.adv_alpha.to_string(),
            "u" => self.u.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "neg_size" => self.neg_size.to_string(),
            "neg_mode" => self.neg_mode.name().to_owned(),
            "filter_negatives" => self.filter_negatives.to_string(),
            "steps_max" => self.steps_max.to_string(),
            "valid_every" => self.valid_every.to_string(),
            "log_every" => self.log_every.to_string(),
            "seed" => self.seed.to_string(),
            "entity_repr" => match self.entity_repr {
                EntityRepr::Direct => "direct".to_owned(),
                EntityRepr::Tokens => "tokens".to_owned(),
            },
            "d_tok" => self.d_tok.to_string(),
            "heads" => self.heads.to_string(),
            "ffn_mult" => self.ffn_mult.to_string(),
            "combiner" => self.combiner.name().to_owned(),
            "protocol" => self.protocol.name().to_owned(),
            "tie_policy" => self.tie_policy.name().to_owned(),
            "both_directions" => self.both_directions.to_string(),
            "valid_max_queries" => self.valid_max_queries.to_string(),
            _ => return None,
        })
    }

    /// Canonical `key=value` lines in [`TRAIN_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in TRAIN_KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut cfg = TrainConfig::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("bad config line `{line}`"))?;
            if !cfg.set(k, v)? {
                return Err(format!("unknown config key `{k}`"));
            }
        }
        Ok(cfg)
    }

    /// First 8 bytes of SHA-256 over the canonical text.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_owned());
            }
        };
        need(self.dim > 0, "dim must be positive");
        need(
            !self.model.needs_even_dim() || self.dim.is_multiple_of(2),
            "dim must be even for rotate/complex",
        );
        need(self.gamma > 0.0 && self.gamma.is_finite(), "gamma must be positive");
        need(
            self.adv_alpha >= 0.0 && self.adv_alpha.is_finite(),
            "adv_alpha must be non-negative",
        );
        need(self.u >= 0.0 && self.u.is_finite(), "u must be non-negative");
        need(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        need(self.batch_size > 0, "batch_size must be positive");
        need(self.neg_size > 0, "neg_size must be positive");
        need(self.valid_every > 0, "valid_every must be positive");
        need(self.log_every > 0, "log_every must be positive");
        if self.entity_repr == EntityRepr::Tokens {
            need(self.d_tok > 0, "d_tok must be positive");
            need(
                self.heads > 0 && self.d_tok.is_multiple_of(self.heads.max(1)),
                "d_tok must be divisible by heads",
            );
            need(self.ffn_mult > 0, "ffn_mult must be positive");
        }
        errs
    }
}
