use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;

use super::{EntityRepr, TrainConfig, TrainError};
use crate::anchors::Tokenization;
use crate::encoder::{encode_entity, EncoderConfig, EncoderGrads, EncoderWeights, Mat};
use crate::eval::Scorer;
use crate::real::Real;
use crate::scoring::{ModelKind, Norm, RowLayout};

/// All learnable parameters of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub layout: RowLayout,
    pub u: T,
    pub norm: Norm,
    /// Packed `[base | aux]` rows; present for direct lookup.
    pub entity: Option<Mat<T>>,
    /// Packed `[rel | rel_head | rel_tail]` rows.
    pub relation: Mat<T>,
    /// Present when entities are encoded from tokens.
    pub encoder: Option<EncoderWeights<T>>,
}

fn uniform_table<T: Real, R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Mat<T> {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| T::of(rng.gen_range(-bound..=bound))).collect(),
    )
}

impl<T: Real> Model<T> {
    /// Uniform `[-0.5/√d, 0.5/√d]` embeddings; RotatE phases uniform in `[-π, π]`.
    pub fn init<R: Rng>(
        cfg: &TrainConfig,
        num_entities: usize,
        num_relations: usize,
        tokens: Option<&Tokenization>,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(TrainError::Config(errs));
        }
        let layout = RowLayout::new(cfg.model, cfg.dim)?;
        let bound = 0.5 / (cfg.dim as f64).sqrt();
        let (entity, encoder) = match cfg.entity_repr {
            EntityRepr::Direct => (
                Some(uniform_table(num_entities, layout.entity_width(), bound, rng)),
                None,
            ),
            EntityRepr::Tokens => {
                let tok = tokens.ok_or(TrainError::MissingTokens)?;
                if tok.num_entities() != num_entities {
                    return Err(TrainError::TokenMismatch(format!(
                        "token cache has {} entities, graph has {num_entities}",
                        tok.num_entities()
                    )));
                }
                let ecfg = EncoderConfig {
                    d_tok: cfg.d_tok,
                    heads: cfg.heads,
                    ffn_mult: cfg.ffn_mult,
                    combiner: cfg.combiner,
                    out_dim: layout.entity_width(),
                };
                (
                    None,
                    Some(EncoderWeights::init(ecfg, tok.anchors.len(), num_entities, rng)),
                )
            }
        };
        let relation = if cfg.model == ModelKind::RotatE {
            uniform_table(num_relations, layout.relation_width(), std::f64::consts::PI, rng)
        } else {
            uniform_table(num_relations, layout.relation_width(), bound, rng)
        };
        Ok(Model {
            layout,
            u: T::of(cfg.u),
            norm: cfg.norm,
            entity,
            relation,
            encoder,
        })
    }

    pub fn num_entities(&self) -> usize {
        match (&self.entity, &self.encoder) {
            (Some(e), _) => e.rows,
            (None, Some(enc)) => enc.num_entities,
            _ => 0,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.relation.rows
    }

    /// Entity rows for every entity: borrowed for direct lookup, encoded otherwise.
    pub fn entity_table(&self, tokens: Option<&Tokenization>, threads: usize) -> Result<Cow<'_, Mat<T>>, TrainError> {
        if let Some(e) = &self.entity {
            return Ok(Cow::Borrowed(e));
        }
        let enc = self.encoder.as_ref().expect("model has entity table or encoder");
        let tok = tokens.ok_or(TrainError::MissingTokens)?;
        let n = enc.num_entities;
        let width = self.layout.entity_width();
        let chunk = n.div_ceil(threads.max(1)).max(1);
        let dim = self.layout.dim;
        let mut data = Vec::with_capacity(n * width);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    s.spawn(move || -> Result<Vec<T>, TrainError> {
                        let mut out = Vec::new();
                        for e in start..(start + chunk).min(n) {
                            out.extend(encode_entity(enc, &tok.anchors, &tok.tokens[e], dim)?.vector);
                        }
                        Ok(out)
                    })
                })
                .collect();
            for h in handles {
                data.extend(h.join().expect("encoder worker panicked")?);
            }
            Ok::<_, TrainError>(())
        })?;
        Ok(Cow::Owned(Mat::from_vec(n, width, data)))
    }

    pub fn scorer<'a>(&'a self, entity: &'a Mat<T>) -> Scorer<'a, T> {
        Scorer {
            layout: self.layout,
            u: self.u,
            norm: self.norm,
            entity,
            relation: &self.relation,
        }
    }

    /// `(name, rows, cols)` of every parameter table in serialization order.
    pub fn table_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        if let Some(e) = &self.entity {
            out.push(("entity".to_owned(), e.rows, e.cols));
        }
        out.push(("relation".to_owned(), self.relation.rows, self.relation.cols));
        if let Some(enc) = &self.encoder {
            out.push((
                "encoder.token_table".to_owned(),
                enc.token_table.rows,
                enc.token_table.cols,
            ));
            for (name, t) in EncoderWeights::<T>::dense_tensor_names()
                .iter()
                .zip(enc.dense_tensors())
            {
                out.push((format!("encoder.{name}"), 1, t.len()));
            }
        }
        out
    }

    pub fn tables(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        if let Some(e) = &self.entity {
            out.push(&e.data);
        }
        out.push(&self.relation.data);
        if let Some(enc) = &self.encoder {
            out.push(&enc.token_table.data);
            out.extend(enc.dense_tensors());
        }
        out
    }

    pub fn tables_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        if let Some(e) = &mut self.entity {
            out.push(&mut e.data);
        }
        out.push(&mut self.relation.data);
        if let Some(enc) = &mut self.encoder {
            let (token, dense) = enc.all_tensors_mut();
            out.push(token);
            out.extend(dense);
        }
        out
    }
}

/// Gradients of one batch. Entity rows are keyed by entity id and refer to
/// packed entity vectors (for token models they are pushed through the
/// encoder into `encoder`).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub entity_rows: BTreeMap<u32, Vec<T>>,
    pub relation_rows: BTreeMap<u32, Vec<T>>,
    pub encoder: Option<EncoderGrads<T>>,
}

pub(crate) fn add_row<T: Real>(map: &mut BTreeMap<u32, Vec<T>>, key: u32, g: &[T]) {
    match map.get_mut(&key) {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => {
            map.insert(key, g.to_vec());
        }
    }
}

impl<T: Real> Gradients<T> {
    pub fn empty() -> Self {
        Gradients {
            entity_rows: BTreeMap::new(),
            relation_rows: BTreeMap::new(),
            encoder: None,
        }
    }

    pub fn merge(&mut self, other: Gradients<T>) {
        for (k, g) in other.entity_rows {
            add_row(&mut self.entity_rows, k, &g);
        }
        for (k, g) in other.relation_rows {
            add_row(&mut self.relation_rows, k, &g);
        }
        match (&mut self.encoder, other.encoder) {
            (Some(a), Some(b)) => a.merge(b),
            (None, Some(b)) => self.encoder = Some(b),
            _ => {}
        }
    }
}
