//! Entity encoder over [`SubgraphTokens`]: token + segment embeddings, one
//! transformer block, mean pooling over real tokens and an output projection
//! to the packed `[base | aux]` entity vector.

mod block;
mod mat;

pub use block::{transformer_block, transformer_block_backward, BlockCache, BlockWeights};
pub use mat::Mat;

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::anchors::{AnchorSet, Segment, SubgraphTokens};
use crate::real::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncoderError {
    #[error("token record has no real token")]
    AllPad,
    #[error("token {entity} in {segment:?} segment is outside the vocabulary")]
    TokenOutOfRange { segment: Segment, entity: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Combiner {
    /// Transformer block, then mean pooling.
    Transformer,
    /// Mean pooling of the token embeddings directly.
    MeanPool,
}

impl FromStr for Combiner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transformer" => Ok(Combiner::Transformer),
            "mean" | "mean-pool" => Ok(Combiner::MeanPool),
            other => Err(format!("unknown combiner `{other}` (transformer | mean)")),
        }
    }
}

impl Combiner {
    pub fn name(self) -> &'static str {
        match self {
            Combiner::Transformer => "transformer",
            Combiner::MeanPool => "mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub d_tok: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub combiner: Combiner,
    /// Width of the produced entity vector (base plus optional aux).
    pub out_dim: usize,
}

/// Learnable encoder parameters.
///
/// Token rows are laid out as `[anchors | entities | pad]`; the pad row is
/// zero and never receives a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub config: EncoderConfig,
    pub num_anchors: usize,
    pub num_entities: usize,
    pub token_table: Mat<T>,
    pub type_table: Mat<T>,
    pub block: BlockWeights<T>,
    pub out_w: Mat<T>,
    pub out_b: Vec<T>,
}

pub const DENSE_TENSOR_COUNT: usize = 15;

fn uniform<T: Real, R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect()
}

impl<T: Real> EncoderWeights<T> {
    pub fn init<R: Rng>(config: EncoderConfig, num_anchors: usize, num_entities: usize, rng: &mut R) -> Self {
        let d = config.d_tok;
        let hidden = config.ffn_mult * d;
        let vocab = num_anchors + num_entities + 1;
        let emb = 0.5 / (d as f64).sqrt();
        let mut token_table = Mat::from_vec(vocab, d, uniform(rng, vocab * d, emb));
        token_table.row_mut(vocab - 1).fill(T::zero());
        let type_table = Mat::from_vec(4, d, uniform(rng, 4 * d, emb));
        let lin = |rng: &mut R, fan_in: usize, fan_out: usize| {
            Mat::from_vec(
                fan_in,
                fan_out,
                uniform(rng, fan_in * fan_out, (1.0 / fan_in as f64).sqrt()),
            )
        };
        let block = BlockWeights {
            ln1_g: vec![T::one(); d],
            ln1_b: vec![T::zero(); d],
            wq: lin(rng, d, d),
            wk: lin(rng, d, d),
            wv: lin(rng, d, d),
            wo: lin(rng, d, d),
            ln2_g: vec![T::one(); d],
            ln2_b: vec![T::zero(); d],
            w1: lin(rng, d, hidden),
            b1: vec![T::zero(); hidden],
            w2: lin(rng, hidden, d),
            b2: vec![T::zero(); d],
        };
        let out_w = lin(rng, d, config.out_dim);
        EncoderWeights {
            config,
            num_anchors,
            num_entities,
            token_table,
            type_table,
            block,
            out_w,
            out_b: vec![T::zero(); config.out_dim],
        }
    }

    pub fn pad_row(&self) -> usize {
        self.token_table.rows - 1
    }

    fn token_row(&self, anchors: &AnchorSet, segment: Segment, entity: u32) -> Result<usize, EncoderError> {
        let oob = EncoderError::TokenOutOfRange { segment, entity };
        match segment {
            Segment::Anchor => anchors
                .anchor_index(entity)
                .map(|i| i as usize)
                .filter(|&i| i < self.num_anchors)
                .ok_or(oob),
            _ if (entity as usize) < self.num_entities => Ok(self.num_anchors + entity as usize),
            _ => Err(oob),
        }
    }

    pub fn dense_tensors(&self) -> [&[T]; DENSE_TENSOR_COUNT] {
        let [a, b, c, d, e, f, g, h, i, j, k, l] = self.block.tensors();
        [
            &self.type_table.data,
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            h,
            i,
            j,
            k,
            l,
            &self.out_w.data,
            &self.out_b,
        ]
    }

    pub fn dense_tensors_mut(&mut self) -> [&mut [T]; DENSE_TENSOR_COUNT] {
        let [a, b, c, d, e, f, g, h, i, j, k, l] = self.block.tensors_mut();
        [
            &mut self.type_table.data,
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            h,
            i,
            j,
            k,
            l,
            &mut self.out_w.data,
            &mut self.out_b,
        ]
    }

    /// Token table plus every dense tensor, mutably and at once.
    pub fn all_tensors_mut(&mut self) -> (&mut [T], [&mut [T]; DENSE_TENSOR_COUNT]) {
        let [a, b, c, d, e, f, g, h, i, j, k, l] = self.block.tensors_mut();
        (
            &mut self.token_table.data,
            [
                &mut self.type_table.data,
                a,
                b,
                c,
                d,
                e,
                f,
                g,
                h,
                i,
                j,
                k,
                l,
                &mut self.out_w.data,
                &mut self.out_b,
            ],
        )
    }

    pub fn dense_tensor_names() -> [&'static str; DENSE_TENSOR_COUNT] {
        let b = BlockWeights::<T>::TENSOR_NAMES;
        [
            "type_table",
            b[0],
            b[1],
            b[2],
            b[3],
            b[4],
            b[5],
            b[6],
            b[7],
            b[8],
            b[9],
            b[10],
            b[11],
            "out.w",
            "out.b",
        ]
    }
}

/// Token matrix of one record: one row per slot, pad rows zero.
#[derive(Clone, Debug)]
pub struct EmbeddedTokens<T> {
    pub rows: Mat<T>,
    pub mask: Vec<bool>,
    /// `(slot, segment, token row)` for every real slot.
    pub real: Vec<(usize, Segment, usize)>,
}

/// Row = token embedding + segment embedding.
pub fn embed_tokens<T: Real>(
    w: &EncoderWeights<T>,
    anchors: &AnchorSet,
    tokens: &SubgraphTokens,
) -> Result<EmbeddedTokens<T>, EncoderError> {
    let d = w.config.d_tok;
    let mut rows = Mat::zeros(tokens.slots.len(), d);
    let mut real = Vec::new();
    for (slot, seg, entity) in tokens.real_slots() {
        let tr = w.token_row(anchors, seg, entity)?;
        for ((o, &a), &b) in rows
            .row_mut(slot)
            .iter_mut()
            .zip(w.token_table.row(tr))
            .zip(w.type_table.row(seg as usize))
        {
            *o = a + b;
        }
        real.push((slot, seg, tr));
    }
    Ok(EmbeddedTokens {
        rows,
        mask: tokens.mask(),
        real,
    })
}

#[derive(Clone, Debug)]
pub struct EncodeCache<T> {
    embedded: EmbeddedTokens<T>,
    block: Option<BlockCache<T>>,
    pooled: Vec<T>,
}

/// Packed `[base | aux]` entity vector; `aux` is empty for models without one.
#[derive(Clone, Debug)]
pub struct EncodedEntity<T> {
    pub vector: Vec<T>,
    pub base_dim: usize,
    pub cache: Option<EncodeCache<T>>,
}

impl<T: Real> EncodedEntity<T> {
    pub fn base(&self) -> &[T] {
        &self.vector[..self.base_dim]
    }

    pub fn aux(&self) -> &[T] {
        &self.vector[self.base_dim..]
    }
}

pub fn encode_entity<T: Real>(
    w: &EncoderWeights<T>,
    anchors: &AnchorSet,
    tokens: &SubgraphTokens,
    base_dim: usize,
) -> Result<EncodedEntity<T>, EncoderError> {
    let embedded = embed_tokens(w, anchors, tokens)?;
    if embedded.real.is_empty() {
        return Err(EncoderError::AllPad);
    }
    let (hidden, block) = match w.config.combiner {
        Combiner::Transformer => {
            let (y, c) = transformer_block(&w.block, w.config.heads, &embedded.rows, &embedded.mask)?;
            (Some(y), Some(c))
        }
        Combiner::MeanPool => (None, None),
    };
    let src = hidden.as_ref().unwrap_or(&embedded.rows);
    let d = w.config.d_tok;
    let inv_n = T::one() / T::of(embedded.real.len() as f64);
    let mut pooled = vec![T::zero(); d];
    for &(slot, _, _) in &embedded.real {
        for (p, &v) in pooled.iter_mut().zip(src.row(slot)) {
            *p += v;
        }
    }
    pooled.iter_mut().for_each(|p| *p *= inv_n);
    let mut vector = w.out_b.clone();
    for (k, &p) in pooled.iter().enumerate() {
        for (o, &wv) in vector.iter_mut().zip(w.out_w.row(k)) {
            *o += p * wv;
        }
    }
    Ok(EncodedEntity {
        vector,
        base_dim,
        cache: Some(EncodeCache {
            embedded,
            block,
            pooled,
        }),
    })
}

/// Gradients of encoder parameters; token rows are accumulated sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads<T> {
    pub token_rows: BTreeMap<u32, Vec<T>>,
    pub dense: EncoderWeights<T>,
}

impl<T: Real> EncoderGrads<T> {
    pub fn zeros_like(w: &EncoderWeights<T>) -> Self {
        let c = w.config;
        EncoderGrads {
            token_rows: BTreeMap::new(),
            dense: EncoderWeights {
                config: c,
                num_anchors: 0,
                num_entities: 0,
                token_table: Mat::zeros(0, c.d_tok),
                type_table: Mat::zeros(4, c.d_tok),
                block: BlockWeights::zeros(c.d_tok, c.ffn_mult * c.d_tok),
                out_w: Mat::zeros(c.d_tok, c.out_dim),
                out_b: vec![T::zero(); c.out_dim],
            },
        }
    }

    pub fn merge(&mut self, other: EncoderGrads<T>) {
        for (row, g) in other.token_rows {
            match self.token_rows.entry(row) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(g);
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    o.get_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
        }
        for (a, b) in self
            .dense
            .dense_tensors_mut()
            .into_iter()
            .zip(other.dense.dense_tensors())
        {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }
}

/// Accumulates `∂(d_vector · vector)/∂θ` into `grads`.
pub fn encode_backward<T: Real>(
    w: &EncoderWeights<T>,
    encoded: &EncodedEntity<T>,
    d_vector: &[T],
    grads: &mut EncoderGrads<T>,
) -> Result<(), EncoderError> {
    let cache = encoded
        .cache
        .as_ref()
        .ok_or_else(|| EncoderError::Shape("entity was not produced by the encoder".into()))?;
    if d_vector.len() != w.config.out_dim {
        return Err(EncoderError::Shape(format!(
            "gradient width {} != output width {}",
            d_vector.len(),
            w.config.out_dim
        )));
    }
    let d = w.config.d_tok;
    let g = &mut grads.dense;
    let mut dpooled = vec![T::zero(); d];
    for k in 0..d {
        let p = cache.pooled[k];
        let wrow = w.out_w.row(k);
        let grow = g.out_w.row_mut(k);
        let mut acc = T::zero();
        for j in 0..d_vector.len() {
            grow[j] += p * d_vector[j];
            acc += wrow[j] * d_vector[j];
        }
        dpooled[k] = acc;
    }
    g.out_b.iter_mut().zip(d_vector).for_each(|(a, &b)| *a += b);

    let emb = &cache.embedded;
    let inv_n = T::one() / T::of(emb.real.len() as f64);
    let mut dhidden = Mat::zeros(emb.rows.rows, d);
    for &(slot, _, _) in &emb.real {
        for (o, &v) in dhidden.row_mut(slot).iter_mut().zip(&dpooled) {
            *o = v * inv_n;
        }
    }
    let dx = match &cache.block {
        Some(bc) => {
            let (dx, gw) = transformer_block_backward(&w.block, bc, &dhidden)?;
            for (a, b) in g.block.tensors_mut().into_iter().zip(gw.tensors()) {
                a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
            }
            dx
        }
        None => dhidden,
    };
    for &(slot, seg, row) in &emb.real {
        let src = dx.row(slot);
        g.type_table
            .row_mut(seg as usize)
            .iter_mut()
            .zip(src)
            .for_each(|(a, &b)| *a += b);
        let acc = grads.token_rows.entry(row as u32).or_insert_with(|| vec![T::zero(); d]);
        acc.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
    }
    Ok(())
}

/// Plain lookup of a packed entity row; no encoder involved.
pub fn encode_entity_direct<T: Real>(table: &Mat<T>, entity: u32, base_dim: usize) -> EncodedEntity<T> {
    EncodedEntity {
        vector: table.row(entity as usize).to_vec(),
        base_dim,
        cache: None,
    }
}
