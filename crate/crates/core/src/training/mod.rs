mod adam;
mod checkpoint;
pub mod config;
mod loss;
mod model;
mod negatives;
mod train_loop;

use std::ops::Range;

use thiserror::Error;

pub use adam::{adam_step, AdamHyper, AdamState, AdamTable};
pub use checkpoint::{Checkpoint, RngState};
pub use config::{EntityRepr, NegativeMode, TrainConfig, TRAIN_KEYS};
pub use loss::{loss_and_grads, margin_loss, self_adversarial_weights, Batch, NegativeWeights};
pub use model::{Gradients, Model};
pub use negatives::sample_negatives;
pub use train_loop::{initial_checkpoint, train, validate, MetricRecord, TrainOptions, TrainOutcome};

use crate::encoder::EncoderError;
use crate::eval::EvalError;
use crate::graph::Triple;
use crate::scoring::ScoreError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("non-finite loss on triple {triple}")]
    NonFinite { triple: Triple },
    #[error("non-finite loss on triple {triple} at step {step}")]
    NonFiniteAt { triple: Triple, step: u64 },
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("entity_repr=tokens needs a token cache")]
    MissingTokens,
    #[error("token cache does not fit the graph: {0}")]
    TokenMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits `0..n` into fixed-size chunks, runs `f` on them over up to
/// `threads` workers and returns results in chunk order.
pub(crate) fn ordered_chunks<O, F>(n: usize, chunk: usize, threads: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(Range<usize>) -> O + Sync,
{
    let ranges: Vec<Range<usize>> = (0..n).step_by(chunk.max(1)).map(|s| s..(s + chunk).min(n)).collect();
    let threads = threads.max(1).min(ranges.len().max(1));
    if threads == 1 {
        return ranges.into_iter().map(f).collect();
    }
    let f = &f;
    let ranges = &ranges;
    let mut slots: Vec<Option<O>> = (0..ranges.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|tid| {
                s.spawn(move || {
                    (tid..ranges.len())
                        .step_by(threads)
                        .map(|i| (i, f(ranges[i].clone())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, o) in h.join().expect("worker panicked") {
                slots[i] = Some(o);
            }
        }
    });
    slots.into_iter().map(|o| o.expect("every chunk ran")).collect()
}
