//! Scoring functions with analytic gradients.
//!
//! Every kernel is a pure function of a [`ScoreInputs`] view. Distance models
//! return a norm of a residual (lower is more plausible); bilinear models
//! return a score (higher is more plausible). [`score_for_loss`] folds both
//! into one lower-is-better quantity `d_r`.
//!
//! Complex-valued models (RotatE, ComplEx) read a `d`-vector as `d/2` complex
//! numbers with the real parts in the first half and imaginary parts in the
//! second half.

mod kernels;

pub use kernels::{
    complex_score, distmult_score, evaluate, interht_distance, interht_plus_distance, pairre_distance, rotate_distance,
    score_for_loss, score_for_loss_grad, transe_distance, triplere_distance,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TransE,
    RotatE,
    PairRE,
    TripleReV1,
    TripleReV2,
    DistMult,
    ComplEx,
    InterHT,
    InterHTPlus,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::TransE,
        ModelKind::RotatE,
        ModelKind::PairRE,
        ModelKind::TripleReV1,
        ModelKind::TripleReV2,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::InterHT,
        ModelKind::InterHTPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::RotatE => "rotate",
            ModelKind::PairRE => "pairre",
            ModelKind::TripleReV1 => "triplere-v1",
            ModelKind::TripleReV2 => "triplere-v2",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
            ModelKind::InterHT => "interht",
            ModelKind::InterHTPlus => "interht-plus",
        }
    }

    pub fn is_bilinear(self) -> bool {
        matches!(self, ModelKind::DistMult | ModelKind::ComplEx)
    }

    pub fn needs_even_dim(self) -> bool {
        matches!(self, ModelKind::RotatE | ModelKind::ComplEx)
    }

    /// Whether entities carry an auxiliary vector next to the base vector.
    pub fn uses_entity_aux(self) -> bool {
        self == ModelKind::InterHT
    }

    /// Whether the relation row carries head/tail-side vectors.
    pub fn uses_relation_pair(self) -> bool {
        matches!(
            self,
            ModelKind::PairRE | ModelKind::TripleReV1 | ModelKind::TripleReV2 | ModelKind::InterHTPlus
        )
    }

    /// Whether the relation row carries a translation / plain relation vector.
    pub fn uses_relation_vector(self) -> bool {
        self != ModelKind::PairRE
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown model kind `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "l1" | "L1" => Ok(Norm::L1),
            "2" | "l2" | "L2" => Ok(Norm::L2),
            other => Err(format!("norm order must be 1 or 2, got `{other}`")),
        }
    }
}

impl Norm {
    pub fn order(self) -> u8 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

/// Borrowed inputs of one scoring call. Fields a model does not read are
/// left empty.
///
/// * `rel` is the translation `r` (TransE, InterHT, InterHT+), the middle
///   translation `r_m` (TripleRE), the diagonal relation (DistMult, ComplEx)
///   or the rotation phases (RotatE, length `d/2`).
/// * `rel_head` / `rel_tail` are the head-side and tail-side relation vectors.
#[derive(Clone, Copy, Debug)]
pub struct ScoreInputs<'a, T> {
    pub head: &'a [T],
    pub tail: &'a [T],
    pub head_aux: &'a [T],
    pub tail_aux: &'a [T],
    pub rel: &'a [T],
    pub rel_head: &'a [T],
    pub rel_tail: &'a [T],
    pub u: T,
    pub norm: Norm,
}

impl<'a, T: Real> ScoreInputs<'a, T> {
    pub fn new(head: &'a [T], rel: &'a [T], tail: &'a [T]) -> Self {
        ScoreInputs {
            head,
            tail,
            head_aux: &[],
            tail_aux: &[],
            rel,
            rel_head: &[],
            rel_tail: &[],
            u: T::zero(),
            norm: Norm::L1,
        }
    }
}

/// Mutable gradient buffers congruent with a [`ScoreInputs`].
#[derive(Debug)]
pub struct GradsMut<'a, T> {
    pub head: &'a mut [T],
    pub tail: &'a mut [T],
    pub head_aux: &'a mut [T],
    pub tail_aux: &'a mut [T],
    pub rel: &'a mut [T],
    pub rel_head: &'a mut [T],
    pub rel_tail: &'a mut [T],
}

/// Value of a scoring call with the gradient for every input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrad<T> {
    pub value: T,
    pub head: Vec<T>,
    pub tail: Vec<T>,
    pub head_aux: Vec<T>,
    pub tail_aux: Vec<T>,
    pub rel: Vec<T>,
    pub rel_head: Vec<T>,
    pub rel_tail: Vec<T>,
}

impl<T: Real> ScoreGrad<T> {
    fn zeros_like(inp: &ScoreInputs<'_, T>) -> Self {
        let z = |s: &[T]| vec![T::zero(); s.len()];
        ScoreGrad {
            value: T::zero(),
            head: z(inp.head),
            tail: z(inp.tail),
            head_aux: z(inp.head_aux),
            tail_aux: z(inp.tail_aux),
            rel: z(inp.rel),
            rel_head: z(inp.rel_head),
            rel_tail: z(inp.rel_tail),
        }
    }

    pub fn as_mut(&mut self) -> GradsMut<'_, T> {
        GradsMut {
            head: &mut self.head,
            tail: &mut self.tail,
            head_aux: &mut self.head_aux,
            tail_aux: &mut self.tail_aux,
            rel: &mut self.rel,
            rel_head: &mut self.rel_head,
            rel_tail: &mut self.rel_tail,
        }
    }
}

/// Packed row layout of a model: entity rows are `[base | aux]`, relation
/// rows are `[rel | rel_head | rel_tail]` with absent parts omitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowLayout {
    pub kind: ModelKind,
    pub dim: usize,
}

impl RowLayout {
    pub fn new(kind: ModelKind, dim: usize) -> Result<Self, ScoreError> {
        if dim == 0 || (kind.needs_even_dim() && !dim.is_multiple_of(2)) {
            return Err(ScoreError::BadDimension { kind, dim });
        }
        Ok(RowLayout { kind, dim })
    }

    pub fn entity_width(&self) -> usize {
        if self.kind.uses_entity_aux() {
            2 * self.dim
        } else {
            self.dim
        }
    }

    fn rel_len(&self) -> usize {
        match self.kind {
            ModelKind::RotatE => self.dim / 2,
            k if k.uses_relation_vector() => self.dim,
            _ => 0,
        }
    }

    fn pair_len(&self) -> usize {
        if self.kind.uses_relation_pair() {
            self.dim
        } else {
            0
        }
    }

    pub fn relation_width(&self) -> usize {
        self.rel_len() + 2 * self.pair_len()
    }

    pub fn inputs<'a, T: Real>(
        &self,
        head: &'a [T],
        rel: &'a [T],
        tail: &'a [T],
        u: T,
        norm: Norm,
    ) -> ScoreInputs<'a, T> {
        let d = self.dim;
        let (hb, ha) = head.split_at(d);
        let (tb, ta) = tail.split_at(d);
        let (r, pair) = rel.split_at(self.rel_len());
        let (rh, rt) = pair.split_at(self.pair_len());
        ScoreInputs {
            head: hb,
            tail: tb,
            head_aux: ha,
            tail_aux: ta,
            rel: r,
            rel_head: rh,
            rel_tail: rt,
            u,
            norm,
        }
    }

    pub fn grads<'a, T: Real>(&self, head: &'a mut [T], rel: &'a mut [T], tail: &'a mut [T]) -> GradsMut<'a, T> {
        let d = self.dim;
        let (hb, ha) = head.split_at_mut(d);
        let (tb, ta) = tail.split_at_mut(d);
        let (r, pair) = rel.split_at_mut(self.rel_len());
        let (rh, rt) = pair.split_at_mut(self.pair_len());
        GradsMut {
            head: hb,
            tail: tb,
            head_aux: ha,
            tail_aux: ta,
            rel: r,
            rel_head: rh,
            rel_tail: rt,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("{kind}: `{field}` has length {found}, expected {expected}")]
    DimensionMismatch {
        kind: ModelKind,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{kind}: invalid dimension {dim}")]
    BadDimension { kind: ModelKind, dim: usize },
}
