use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    adam_step, loss_and_grads, sample_negatives, AdamHyper, AdamState, Batch, Checkpoint, Model, NegativeWeights,
    RngState, TrainConfig, TrainError,
};
use crate::anchors::Tokenization;
use crate::eval::{evaluate_split, CandidateSets, EvalOptions, EvalReport};
use crate::graph::{TripleStore, TrueIndex};
use crate::real::Real;

/// One JSON-lines record emitted while training.
#[derive(Clone, Debug, Serialize)]
pub struct MetricRecord {
    pub step: u64,
    /// Mean loss over the steps since the previous training record.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<EvalReport>,
    /// Wall-clock seconds; omitted in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

pub struct TrainOptions<'a> {
    pub threads: usize,
    pub deterministic: bool,
    pub valid_candidates: Option<&'a CandidateSets>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            threads: 1,
            deterministic: true,
            valid_candidates: None,
        }
    }
}

pub struct TrainOutcome<T> {
    pub last: Checkpoint<T>,
    /// Snapshot with the highest validation MRR seen in this run.
    pub best: Option<(f64, Checkpoint<T>)>,
    /// Mean batch loss of every step taken in this run.
    pub losses: Vec<f64>,
}

/// Fresh checkpoint at step 0, drawing initial parameters from the training RNG.
pub fn initial_checkpoint<T: Real>(
    store: &TripleStore,
    tokens: Option<&Tokenization>,
    cfg: &TrainConfig,
) -> Result<Checkpoint<T>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::init(cfg, store.num_entities(), store.num_relations(), tokens, &mut rng)?;
    let optimizer = Some(AdamState::new(&model));
    Ok(Checkpoint {
        config: cfg.clone(),
        step: 0,
        model,
        optimizer,
        rng: RngState::capture(&rng),
    })
}

fn eval_options(cfg: &TrainConfig, threads: usize) -> EvalOptions {
    EvalOptions {
        protocol: cfg.protocol,
        tie_policy: cfg.tie_policy,
        both_directions: cfg.both_directions,
        max_queries: cfg.valid_max_queries,
        threads,
    }
}

/// Validation report for a model on the store's valid split.
pub fn validate<T: Real>(
    model: &Model<T>,
    store: &TripleStore,
    tokens: Option<&Tokenization>,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<EvalReport, TrainError> {
    let table = model.entity_table(tokens, opts.threads)?;
    let scorer = model.scorer(&table);
    Ok(evaluate_split(
        &scorer,
        store,
        &store.valid,
        &eval_options(cfg, opts.threads),
        opts.valid_candidates,
    )?)
}

/// Runs training from `start` (or a fresh initialization) up to `cfg.steps_max`.
pub fn train<T: Real>(
    store: &TripleStore,
    tokens: Option<&Tokenization>,
    cfg: &TrainConfig,
    start: Option<Checkpoint<T>>,
    opts: &TrainOptions<'_>,
    sink: &mut dyn FnMut(&MetricRecord) -> std::io::Result<()>,
) -> Result<TrainOutcome<T>, TrainError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(TrainError::Config(errs));
    }
    if store.train.is_empty() {
        return Err(TrainError::Batch("training split is empty".into()));
    }
    if store.num_entities() == 1 {
        log::warn!("graph has a single entity; every negative equals its positive");
    }
    let ck = match start {
        Some(ck) => ck,
        None => initial_checkpoint(store, tokens, cfg)?,
    };
    let Checkpoint {
        mut step,
        mut model,
        optimizer,
        rng,
        ..
    } = ck;
    let mut rng = rng.restore();
    let mut adam = optimizer.unwrap_or_else(|| AdamState::new(&model));
    let hp = AdamHyper::with_lr(cfg.lr);
    let filter = cfg.filter_negatives.then(|| TrueIndex::build(store.train.iter()));
    let gamma = T::of(cfg.gamma);
    let alpha = T::of(cfg.adv_alpha);
    let clock = Instant::now();
    let elapsed = || (!opts.deterministic).then(|| clock.elapsed().as_secs_f64());

    let mut losses = Vec::new();
    let mut window = (0.0f64, 0usize);
    let mut best: Option<(f64, Checkpoint<T>)> = None;
    let n_train = store.train.len();
    let snapshot = |step: u64, model: &Model<T>, adam: &AdamState<T>, rng: &ChaCha8Rng| Checkpoint {
        config: cfg.clone(),
        step,
        model: model.clone(),
        optimizer: Some(adam.clone()),
        rng: RngState::capture(rng),
    };

    while (step as usize) < cfg.steps_max {
        let positives: Vec<_> = (0..cfg.batch_size)
            .map(|_| store.train[rng.gen_range(0..n_train)])
            .collect();
        let side = cfg.neg_mode.side_for_step(step);
        let negatives = sample_negatives(
            store.num_entities(),
            &positives,
            cfg.neg_size,
            side,
            filter.as_ref(),
            &mut rng,
        );
        let batch = Batch {
            positives: &positives,
            negatives: &negatives,
            side,
        };
        let (loss, grads) = loss_and_grads(
            &model,
            tokens,
            &batch,
            gamma,
            NegativeWeights::Adversarial(alpha),
            opts.threads,
        )
        .map_err(|e| match e {
            TrainError::NonFinite { triple } => TrainError::NonFiniteAt { triple, step },
            other => other,
        })?;
        adam_step(&mut model, &grads, &mut adam, &hp);
        step += 1;

        let loss = loss.to_f64().unwrap_or(f64::NAN);
        losses.push(loss);
        window.0 += loss;
        window.1 += 1;
        let last = step as usize == cfg.steps_max;
        if cfg.log_every > 0 && ((step as usize).is_multiple_of(cfg.log_every) || last) {
            sink(&MetricRecord {
                step,
                loss: Some(window.0 / window.1 as f64),
                valid: None,
                elapsed_s: elapsed(),
            })?;
            window = (0.0, 0);
        }
        if cfg.valid_every > 0 && (step as usize).is_multiple_of(cfg.valid_every) && !store.valid.is_empty() {
            let report = validate(&model, store, tokens, cfg, opts)?;
            let mrr = report.mrr;
            sink(&MetricRecord {
                step,
                loss: None,
                valid: Some(report),
                elapsed_s: elapsed(),
            })?;
            if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
                best = Some((mrr, snapshot(step, &model, &adam, &rng)));
            }
        }
    }
    let last = snapshot(step, &model, &adam, &rng);
    Ok(TrainOutcome { last, best, losses })
}
