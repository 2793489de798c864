//! Binary token cache.
//!
//! Layout (little-endian):
//! `"DGPT"`, version u32, k_anc u32, k_in u32, k_out u32, seed u64,
//! flags u32 (bit 0: center slot used), num_entities u32, num_anchors u32,
//! anchor ids `[u32; num_anchors]`, then per entity `width` slot ids
//! (`u32::MAX` = pad) followed by `ceil(width / 8)` mask bytes, LSB first.

use std::io::{Read, Write};

use super::{AnchorSet, SubgraphTokens, TokenConfig, TokenError, Tokenization, PAD};

const MAGIC: &[u8; 4] = b"DGPT";
const VERSION: u32 = 1;

pub fn write_token_cache<W: Write>(tok: &Tokenization, mut sink: W) -> Result<(), TokenError> {
    let cfg = &tok.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, cfg.k_anc as u32, cfg.k_in as u32, cfg.k_out as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&tok.seed.to_le_bytes());
    buf.extend_from_slice(&u32::from(cfg.use_center).to_le_bytes());
    buf.extend_from_slice(&(tok.tokens.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(tok.anchors.len() as u32).to_le_bytes());
    for a in tok.anchors.ids() {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    let width = cfg.width();
    for t in &tok.tokens {
        for s in &t.slots {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        let mut mask = vec![0u8; width.div_ceil(8)];
        for (i, &s) in t.slots.iter().enumerate() {
            if s != PAD {
                mask[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&mask);
    }
    sink.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TokenError> {
        if self.0.len() < n {
            return Err(TokenError::Format("truncated".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, TokenError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_token_cache<R: Read>(mut source: R) -> Result<Tokenization, TokenError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor(&bytes);
    if cur.take(4)? != MAGIC {
        return Err(TokenError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(TokenError::Format(format!("unsupported version {version}")));
    }
    let k_anc = cur.u32()? as usize;
    let k_in = cur.u32()? as usize;
    let k_out = cur.u32()? as usize;
    let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let flags = cur.u32()?;
    let config = TokenConfig {
        k_anc,
        k_in,
        k_out,
        use_center: flags & 1 == 1,
    };
    let n = cur.u32()? as usize;
    let na = cur.u32()? as usize;
    let anchor_ids = (0..na).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
    let anchors = AnchorSet::from_ids(n, anchor_ids)?;
    let width = config.width();
    let mut tokens = Vec::with_capacity(n);
    for e in 0..n {
        let slots = (0..width).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let mask = cur.take(width.div_ceil(8))?;
        for (i, &s) in slots.iter().enumerate() {
            let bit = mask[i / 8] >> (i % 8) & 1 == 1;
            if bit != (s != PAD) {
                return Err(TokenError::Format(format!(
                    "mask disagrees with slot {i} of entity {e}"
                )));
            }
            if s != PAD && s as usize >= n {
                return Err(TokenError::Format(format!("entity {e} slot {i} out of range")));
            }
            if i < k_anc && s != PAD && !anchors.is_anchor(s) {
                return Err(TokenError::Format(format!(
                    "entity {e} anchor slot holds non-anchor {s}"
                )));
            }
        }
        tokens.push(SubgraphTokens { config, slots });
    }
    if !cur.0.is_empty() {
        return Err(TokenError::Format("trailing bytes".into()));
    }
    Ok(Tokenization {
        config,
        seed,
        anchors,
        tokens,
    })
}
