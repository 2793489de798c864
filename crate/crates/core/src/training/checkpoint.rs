use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, EntityRepr, Model, TrainConfig, TrainError};
use crate::encoder::{EncoderConfig, EncoderWeights, Mat};
use crate::real::{Dtype, Real};
use crate::scoring::RowLayout;

const MAGIC: &[u8; 4] = b"KGEC";
const VERSION: u32 = 1;

/// Position of the training RNG, enough to resume the exact stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub model: Model<T>,
    pub optimizer: Option<AdamState<T>>,
    pub rng: RngState,
}

struct Writer<'a>(&'a mut Vec<u8>);

impl Writer<'_> {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn reals<T: Real>(&mut self, v: &[T]) {
        for x in v {
            x.write_le(self.0);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TrainError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, TrainError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Checkpoint("invalid utf-8 string".into()))
    }
    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>, TrainError> {
        let w = T::DTYPE as usize;
        let bytes = self.take(
            n.checked_mul(w)
                .ok_or_else(|| TrainError::Checkpoint("table too large".into()))?,
        )?;
        Ok(bytes.chunks_exact(w).map(T::read_le).collect())
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut w = Writer(&mut buf);
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(T::DTYPE as u32);
        w.str(self.model.layout.kind.name());
        w.u32(self.model.layout.dim as u32);
        w.u32(self.model.num_entities() as u32);
        w.u32(self.model.num_relations() as u32);
        w.u64(self.config.hash());
        w.u64(self.step);
        w.str(&self.config.to_text());

        let shapes = self.model.table_shapes();
        w.u32(shapes.len() as u32);
        for ((name, rows, cols), data) in shapes.iter().zip(self.model.tables()) {
            w.str(name);
            w.u64(*rows as u64);
            w.u64(*cols as u64);
            w.reals(data);
        }
        match &self.optimizer {
            None => w.u32(0),
            Some(opt) => {
                w.u32(1);
                for t in &opt.tables {
                    for &s in &t.steps {
                        w.u32(s);
                    }
                    w.reals(&t.m);
                    w.reals(&t.v);
                }
            }
        }
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        buf
    }

    pub fn save<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&self.to_bytes())
    }

    /// Parses a checkpoint. When `expected` is given, a differing model shape
    /// is an error while any other config difference only logs a warning.
    pub fn from_bytes(bytes: &[u8], expected: Option<&TrainConfig>) -> Result<Self, TrainError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TrainError::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let dtype = r.u32()?;
        if u8::try_from(dtype).ok().and_then(Dtype::from_tag) != Some(T::DTYPE) {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint dtype tag {dtype} does not match requested {:?}",
                T::DTYPE
            )));
        }
        let kind_name = r.str()?;
        let dim = r.u32()? as usize;
        let num_entities = r.u32()? as usize;
        let num_relations = r.u32()? as usize;
        let hash = r.u64()?;
        let step = r.u64()?;
        let config = TrainConfig::from_text(&r.str()?).map_err(TrainError::Checkpoint)?;
        if config.model.name() != kind_name || config.dim != dim {
            return Err(TrainError::Checkpoint("header disagrees with stored config".into()));
        }
        if config.hash() != hash {
            log::warn!("checkpoint config hash does not match its stored config text");
        }
        if let Some(exp) = expected {
            let shape = |c: &TrainConfig| (c.model, c.dim, c.entity_repr, c.d_tok, c.heads, c.ffn_mult, c.combiner);
            if shape(exp) != shape(&config) {
                return Err(TrainError::DimensionMismatch(format!(
                    "checkpoint has model={} dim={} entity_repr={:?} d_tok={}, config asks for model={} dim={} entity_repr={:?} d_tok={}",
                    config.model, config.dim, config.entity_repr, config.d_tok, exp.model, exp.dim, exp.entity_repr, exp.d_tok
                )));
            }
            if exp.hash() != hash {
                log::warn!(
                    "config hash {:016x} differs from checkpoint hash {hash:016x}",
                    exp.hash()
                );
            }
        }

        let layout = RowLayout::new(config.model, dim)?;
        let ntables = r.u32()? as usize;
        let mut tables = Vec::with_capacity(ntables);
        for _ in 0..ntables {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let data = r.reals::<T>(rows.saturating_mul(cols))?;
            tables.push((name, rows, cols, data));
        }
        let mut model = skeleton::<T>(&config, layout, num_entities, num_relations, &tables)?;
        let shapes = model.table_shapes();
        if shapes.len() != tables.len() {
            return Err(TrainError::Checkpoint(format!(
                "expected {} tables, found {}",
                shapes.len(),
                tables.len()
            )));
        }
        for ((name, rows, cols), (tname, trows, tcols, _)) in shapes.iter().zip(&tables) {
            if (name, rows, cols) != (tname, trows, tcols) {
                return Err(TrainError::DimensionMismatch(format!(
                    "table {tname} is {trows}x{tcols}, expected {name} {rows}x{cols}"
                )));
            }
        }
        for (dst, (_, _, _, src)) in model.tables_mut().into_iter().zip(&tables) {
            dst.copy_from_slice(src);
        }

        let optimizer = match r.u32()? {
            0 => None,
            1 => {
                let mut opt = AdamState::new(&model);
                for t in &mut opt.tables {
                    for s in t.steps.iter_mut() {
                        *s = r.u32()?;
                    }
                    let n = t.m.len();
                    t.m = r.reals(n)?;
                    t.v = r.reals(n)?;
                }
                Some(opt)
            }
            f => return Err(TrainError::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(TrainError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            step,
            model,
            optimizer,
            rng: RngState { seed, stream, word_pos },
        })
    }

    pub fn load<R: Read>(mut input: R, expected: Option<&TrainConfig>) -> Result<Self, TrainError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_bytes(&buf, expected)
    }
}

/// Zero-filled model with the shapes implied by the config and stored tables.
fn skeleton<T: Real>(
    config: &TrainConfig,
    layout: RowLayout,
    num_entities: usize,
    num_relations: usize,
    tables: &[(String, usize, usize, Vec<T>)],
) -> Result<Model<T>, TrainError> {
    let encoder = match config.entity_repr {
        EntityRepr::Direct => None,
        EntityRepr::Tokens => {
            let vocab = tables
                .iter()
                .find(|t| t.0 == "encoder.token_table")
                .map(|t| t.1)
                .ok_or_else(|| TrainError::Checkpoint("missing encoder.token_table".into()))?;
            let num_anchors = vocab
                .checked_sub(num_entities + 1)
                .ok_or_else(|| TrainError::DimensionMismatch(format!("token table has {vocab} rows")))?;
            let cfg = EncoderConfig {
                d_tok: config.d_tok,
                heads: config.heads,
                ffn_mult: config.ffn_mult,
                combiner: config.combiner,
                out_dim: layout.entity_width(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Some(EncoderWeights::init(cfg, num_anchors, num_entities, &mut rng))
        }
    };
    Ok(Model {
        layout,
        u: T::of(config.u),
        norm: config.norm,
        entity: encoder
            .is_none()
            .then(|| Mat::zeros(num_entities, layout.entity_width())),
        relation: Mat::zeros(num_relations, layout.relation_width()),
        encoder,
    })
}
