use std::collections::BTreeMap;

use super::{ordered_chunks, Gradients, Model, TrainError};
use crate::anchors::Tokenization;
use crate::encoder::{encode_backward, encode_entity, EncodedEntity, EncoderGrads};
use crate::graph::{Direction, Triple};
use crate::real::{log_sigmoid, sigmoid, Real};
use crate::scoring::{score_for_loss, score_for_loss_grad};

/// Positives per work unit. Fixed so that results do not depend on the
/// number of threads.
const CHUNK: usize = 16;

/// `softmax(α·(γ − d_i))` over one positive's negatives.
pub fn self_adversarial_weights<T: Real>(neg_d: &[T], alpha: T, gamma: T) -> Vec<T> {
    if neg_d.is_empty() {
        return Vec::new();
    }
    let logits: Vec<T> = neg_d.iter().map(|&d| alpha * (gamma - d)).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Margin loss of one positive and its negatives under fixed weights.
pub fn margin_loss<T: Real>(d_pos: T, neg_d: &[T], weights: &[T], gamma: T) -> T {
    let neg: T = neg_d
        .iter()
        .zip(weights)
        .map(|(&d, &w)| w * log_sigmoid(d - gamma))
        .sum();
    -log_sigmoid(gamma - d_pos) - neg
}

/// One training batch: `negatives[i*k..(i+1)*k]` corrupt `positives[i]` on `side`.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub positives: &'a [Triple],
    pub negatives: &'a [u32],
    pub side: Direction,
}

impl Batch<'_> {
    pub fn neg_size(&self) -> usize {
        if self.positives.is_empty() {
            0
        } else {
            self.negatives.len() / self.positives.len()
        }
    }

    fn entities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .positives
            .iter()
            .flat_map(|t| [t.head, t.tail])
            .chain(self.negatives.iter().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// How negatives are weighted in the loss.
#[derive(Clone, Copy, Debug)]
pub enum NegativeWeights<'a, T> {
    /// Self-adversarial weights with temperature `α`, treated as constants.
    Adversarial(T),
    /// Caller-supplied weights, laid out like `Batch::negatives`.
    Fixed(&'a [T]),
}

enum Lookup<'a, T> {
    Table(&'a crate::encoder::Mat<T>),
    Encoded(BTreeMap<u32, EncodedEntity<T>>),
}

impl<T: Real> Lookup<'_, T> {
    fn row(&self, e: u32) -> &[T] {
        match self {
            Lookup::Table(m) => m.row(e as usize),
            Lookup::Encoded(map) => &map[&e].vector,
        }
    }
}

struct ChunkOut<T> {
    losses: Vec<T>,
    grads: Gradients<T>,
}

/// Mean batch loss and its gradients with respect to every parameter touched.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    tokens: Option<&Tokenization>,
    batch: &Batch<'_>,
    gamma: T,
    weights: NegativeWeights<'_, T>,
    threads: usize,
) -> Result<(T, Gradients<T>), TrainError> {
    let bsz = batch.positives.len();
    if bsz == 0 {
        return Ok((T::zero(), Gradients::empty()));
    }
    let k = batch.neg_size();
    if batch.negatives.len() != bsz * k {
        return Err(TrainError::Batch(format!(
            "{} negatives for {bsz} positives",
            batch.negatives.len()
        )));
    }
    if let NegativeWeights::Fixed(w) = weights {
        if w.len() != batch.negatives.len() {
            return Err(TrainError::Batch(format!(
                "{} weights for {} negatives",
                w.len(),
                batch.negatives.len()
            )));
        }
    }

    let lookup = match (&model.entity, &model.encoder) {
        (Some(table), _) => Lookup::Table(table),
        (None, Some(enc)) => {
            let tok = tokens.ok_or(TrainError::MissingTokens)?;
            let ids = batch.entities();
            let dim = model.layout.dim;
            let parts = ordered_chunks(ids.len(), CHUNK, threads, |range| {
                ids[range]
                    .iter()
                    .map(|&e| {
                        let rec = tok
                            .tokens
                            .get(e as usize)
                            .ok_or_else(|| TrainError::TokenMismatch(format!("no token record for entity {e}")))?;
                        Ok((e, encode_entity(enc, &tok.anchors, rec, dim)?))
                    })
                    .collect::<Result<Vec<_>, TrainError>>()
            });
            let mut map = BTreeMap::new();
            for p in parts {
                map.extend(p?);
            }
            Lookup::Encoded(map)
        }
        (None, None) => unreachable!("model has entity table or encoder"),
    };

    let layout = model.layout;
    let kind = layout.kind;
    let inv_b = T::one() / T::of(bsz as f64);
    let ew = layout.entity_width();
    let rw = layout.relation_width();
    let lookup_ref = &lookup;
    let d_r = |t: &Triple| {
        let inp = layout.inputs(
            lookup_ref.row(t.head),
            model.relation.row(t.relation as usize),
            lookup_ref.row(t.tail),
            model.u,
            model.norm,
        );
        score_for_loss(kind, &inp)
    };

    let parts = ordered_chunks(bsz, CHUNK, threads, |range| -> Result<ChunkOut<T>, TrainError> {
        let mut out = ChunkOut {
            losses: Vec::with_capacity(range.len()),
            grads: Gradients::empty(),
        };
        let (mut dh, mut dt, mut dr) = (vec![T::zero(); ew], vec![T::zero(); ew], vec![T::zero(); rw]);
        for i in range {
            let pos = batch.positives[i];
            let negs: Vec<Triple> = batch.negatives[i * k..(i + 1) * k]
                .iter()
                .map(|&e| batch.side.substitute(&pos, e))
                .collect();
            let d_pos = d_r(&pos)?;
            let neg_d = negs.iter().map(&d_r).collect::<Result<Vec<T>, _>>()?;
            let w = match weights {
                NegativeWeights::Adversarial(alpha) => self_adversarial_weights(&neg_d, alpha, gamma),
                NegativeWeights::Fixed(all) => all[i * k..(i + 1) * k].to_vec(),
            };
            let loss = margin_loss(d_pos, &neg_d, &w, gamma);
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { triple: pos });
            }
            out.losses.push(loss);

            let ups = std::iter::once((pos, sigmoid(d_pos - gamma) * inv_b)).chain(
                negs.iter()
                    .zip(neg_d.iter().zip(&w))
                    .map(|(t, (&d, &wj))| (*t, -wj * sigmoid(gamma - d) * inv_b)),
            );
            for (t, up) in ups {
                dh.iter_mut()
                    .chain(dt.iter_mut())
                    .chain(dr.iter_mut())
                    .for_each(|x| *x = T::zero());
                let inp = layout.inputs(
                    lookup_ref.row(t.head),
                    model.relation.row(t.relation as usize),
                    lookup_ref.row(t.tail),
                    model.u,
                    model.norm,
                );
                score_for_loss_grad(kind, &inp, up, &mut layout.grads(&mut dh, &mut dr, &mut dt))?;
                super::model::add_row(&mut out.grads.entity_rows, t.head, &dh);
                super::model::add_row(&mut out.grads.entity_rows, t.tail, &dt);
                super::model::add_row(&mut out.grads.relation_rows, t.relation, &dr);
            }
        }
        Ok(out)
    });

    let mut losses = Vec::with_capacity(bsz);
    let mut grads = Gradients::empty();
    for p in parts {
        let p = p?;
        losses.extend(p.losses);
        grads.merge(p.grads);
    }
    let loss = losses.into_iter().sum::<T>() * inv_b;

    if let (Lookup::Encoded(encoded), Some(enc)) = (&lookup, &model.encoder) {
        let rows: Vec<(u32, Vec<T>)> = std::mem::take(&mut grads.entity_rows).into_iter().collect();
        let parts = ordered_chunks(
            rows.len(),
            CHUNK,
            threads,
            |range| -> Result<EncoderGrads<T>, TrainError> {
                let mut g = EncoderGrads::zeros_like(enc);
                for (e, d) in &rows[range] {
                    encode_backward(enc, &encoded[e], d, &mut g)?;
                }
                Ok(g)
            },
        );
        let mut total = EncoderGrads::zeros_like(enc);
        for p in parts {
            total.merge(p?);
        }
        grads.encoder = Some(total);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_uniform_at_zero_alpha() {
        let w = self_adversarial_weights(&[1.0f64, 5.0, -3.0, 2.0], 0.0, 10.0);
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn weights_favor_low_distance() {
        let w = self_adversarial_weights(&[1.0f64, 5.0], 1.0, 10.0);
        assert!(w[0] > w[1]);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn margin_loss_at_gamma() {
        let l = margin_loss(3.0f64, &[3.0, 3.0], &[0.5, 0.5], 3.0);
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }
}
