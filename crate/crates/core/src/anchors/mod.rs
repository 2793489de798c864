//! Anchor-based entity tokenization.
//!
//! Every entity is described by a fixed-width token set with four segments:
//! anchors (global hub entities near the node, one-hop first, then two-hop
//! anchors ordered by how many of the node's non-anchor neighbors reach them),
//! sampled in-direction neighbors (heads of incoming edges), sampled
//! out-direction neighbors (tails of outgoing edges), and the center node.

mod cache;

pub use cache::{read_token_cache, write_token_cache};

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::graph::TripleStore;

/// Slot value for padding.
pub const PAD: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorStrategy {
    /// Highest total degree first, ties by ascending id.
    Degree,
    /// Seeded uniform draw.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorSet {
    anchor_ids: Vec<u32>,
    /// `slot[e]` is the position of `e` in `anchor_ids`, or `PAD`.
    slot: Vec<u32>,
}

impl AnchorSet {
    pub fn from_ids(num_entities: usize, anchor_ids: Vec<u32>) -> Result<Self, TokenError> {
        let mut slot = vec![PAD; num_entities];
        for (i, &a) in anchor_ids.iter().enumerate() {
            let s = slot
                .get_mut(a as usize)
                .ok_or(TokenError::Format(format!("anchor {a} out of range")))?;
            if *s != PAD {
                return Err(TokenError::Format(format!("duplicate anchor {a}")));
            }
            *s = i as u32;
        }
        Ok(AnchorSet { anchor_ids, slot })
    }

    pub fn ids(&self) -> &[u32] {
        &self.anchor_ids
    }

    pub fn len(&self) -> usize {
        self.anchor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_ids.is_empty()
    }

    pub fn is_anchor(&self, entity: u32) -> bool {
        self.slot.get(entity as usize).is_some_and(|&s| s != PAD)
    }

    /// Index of `entity` in the anchor vocabulary.
    pub fn anchor_index(&self, entity: u32) -> Option<u32> {
        self.slot.get(entity as usize).copied().filter(|&s| s != PAD)
    }
}

/// Picks `count` global anchors (all entities if fewer).
pub fn select_global_anchors(store: &TripleStore, count: usize, strategy: AnchorStrategy) -> AnchorSet {
    let n = store.num_entities();
    let count = count.min(n);
    let ids = match strategy {
        AnchorStrategy::Degree => {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by_key(|&e| (std::cmp::Reverse(store.degree(e)), e));
            order.truncate(count);
            order
        }
        AnchorStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ids: Vec<u32> = index::sample(&mut rng, n, count)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            ids.sort_unstable();
            ids
        }
    };
    AnchorSet::from_ids(n, ids).expect("selected anchors are distinct and in range")
}

/// Anchor slots for `node`: one-hop anchors by id, then two-hop anchors by
/// descending count of connecting non-anchor one-hop neighbors (ties by id),
/// padded to `k_anc`.
pub fn assign_node_anchors(store: &TripleStore, anchors: &AnchorSet, node: u32, k_anc: usize) -> Vec<u32> {
    let one_hop = store.undirected_neighbors(node);
    let mut out: Vec<u32> = one_hop
        .iter()
        .copied()
        .filter(|&n| anchors.is_anchor(n))
        .take(k_anc)
        .collect();
    if out.len() < k_anc {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &mid in &one_hop {
            let via_non_anchor = !anchors.is_anchor(mid);
            for far in store.undirected_neighbors(mid) {
                if far == node || !anchors.is_anchor(far) || one_hop.binary_search(&far).is_ok() {
                    continue;
                }
                *counts.entry(far).or_default() += usize::from(via_non_anchor);
            }
        }
        let mut two_hop: Vec<(u32, usize)> = counts.into_iter().collect();
        two_hop.sort_by_key(|&(id, c)| (std::cmp::Reverse(c), id));
        let room = k_anc - out.len();
        out.extend(two_hop.into_iter().take(room).map(|(id, _)| id));
    }
    out.resize(k_anc, PAD);
    out
}

fn node_rng(seed: u64, node: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(node));
    rng
}

fn sample_padded(rng: &mut ChaCha8Rng, pool: &[u32], k: usize) -> Vec<u32> {
    let mut out = if pool.len() <= k {
        pool.to_vec()
    } else {
        let mut picks = index::sample(rng, pool.len(), k).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| pool[i]).collect()
    };
    out.resize(k, PAD);
    out
}

/// Uniform draws without replacement from the distinct heads of incoming
/// edges and tails of outgoing edges; kept in ascending id order.
pub fn sample_direction_neighbors(
    store: &TripleStore,
    node: u32,
    k_in: usize,
    k_out: usize,
    seed: u64,
) -> (Vec<u32>, Vec<u32>) {
    let mut rng = node_rng(seed, node);
    let heads = store.in_adjacency.distinct_neighbors(node);
    let tails = store.out_adjacency.distinct_neighbors(node);
    let ins = sample_padded(&mut rng, &heads, k_in);
    let outs = sample_padded(&mut rng, &tails, k_out);
    (ins, outs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenConfig {
    pub k_anc: usize,
    pub k_in: usize,
    pub k_out: usize,
    /// Whether the node itself occupies the center slot.
    pub use_center: bool,
}

impl Default for TokenConfig {
    fn default() -> Self {
        TokenConfig {
            k_anc: 20,
            k_in: 5,
            k_out: 5,
            use_center: true,
        }
    }
}

impl TokenConfig {
    pub fn width(&self) -> usize {
        self.k_anc + self.k_in + self.k_out + 1
    }

    pub fn segment_of(&self, slot: usize) -> Segment {
        if slot < self.k_anc {
            Segment::Anchor
        } else if slot < self.k_anc + self.k_in {
            Segment::In
        } else if slot < self.k_anc + self.k_in + self.k_out {
            Segment::Out
        } else {
            Segment::Center
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Anchor = 0,
    In = 1,
    Out = 2,
    Center = 3,
}

/// Fixed-width token record for one entity. Slots are laid out as
/// `[anchors | in-neighbors | out-neighbors | center]` and hold entity ids;
/// `PAD` marks an empty slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgraphTokens {
    pub config: TokenConfig,
    pub slots: Vec<u32>,
}

impl SubgraphTokens {
    pub fn anchors(&self) -> &[u32] {
        &self.slots[..self.config.k_anc]
    }

    pub fn in_neighbors(&self) -> &[u32] {
        &self.slots[self.config.k_anc..self.config.k_anc + self.config.k_in]
    }

    pub fn out_neighbors(&self) -> &[u32] {
        let s = self.config.k_anc + self.config.k_in;
        &self.slots[s..s + self.config.k_out]
    }

    pub fn center(&self) -> u32 {
        self.slots[self.slots.len() - 1]
    }

    pub fn mask(&self) -> Vec<bool> {
        self.slots.iter().map(|&s| s != PAD).collect()
    }

    pub fn num_real(&self) -> usize {
        self.slots.iter().filter(|&&s| s != PAD).count()
    }

    /// `(slot index, segment, entity id)` for every non-pad slot.
    pub fn real_slots(&self) -> impl Iterator<Item = (usize, Segment, u32)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != PAD)
            .map(|(i, &e)| (i, self.config.segment_of(i), e))
    }
}

pub fn build_subgraph_tokens(
    store: &TripleStore,
    anchors: &AnchorSet,
    node: u32,
    config: &TokenConfig,
    seed: u64,
) -> SubgraphTokens {
    let mut slots = assign_node_anchors(store, anchors, node, config.k_anc);
    let (ins, outs) = sample_direction_neighbors(store, node, config.k_in, config.k_out, seed);
    slots.extend(ins);
    slots.extend(outs);
    slots.push(if config.use_center { node } else { PAD });
    SubgraphTokens { config: *config, slots }
}

/// Token records for every entity plus the anchor vocabulary they refer to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenization {
    pub config: TokenConfig,
    pub seed: u64,
    pub anchors: AnchorSet,
    pub tokens: Vec<SubgraphTokens>,
}

impl Tokenization {
    /// Tokenizes all entities, fanning out over `threads` workers. Output is
    /// independent of the thread count.
    pub fn build(store: &TripleStore, anchors: AnchorSet, config: TokenConfig, seed: u64, threads: usize) -> Self {
        let n = store.num_entities();
        let threads = threads.max(1).min(n.max(1));
        let chunk = n.div_ceil(threads).max(1);
        let anchors_ref = &anchors;
        let mut tokens = Vec::with_capacity(n);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let end = (start + chunk).min(n);
                    scope.spawn(move || {
                        (start..end)
                            .map(|v| build_subgraph_tokens(store, anchors_ref, v as u32, &config, seed))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                tokens.extend(h.join().expect("tokenizer worker panicked"));
            }
        });
        Tokenization {
            config,
            seed,
            anchors,
            tokens,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub nodes: usize,
    /// Nodes with at least one anchor among their one-hop neighbors.
    pub one_hop_covered: usize,
    pub one_hop_fraction: f64,
    /// Nodes whose record has no anchor or neighbor token.
    pub center_only: usize,
    /// `histogram[k]` = nodes with exactly `k` filled anchor slots.
    pub anchor_slot_histogram: Vec<usize>,
}

pub fn coverage(store: &TripleStore, tok: &Tokenization) -> CoverageReport {
    let mut hist = vec![0usize; tok.config.k_anc + 1];
    let mut covered = 0;
    let mut center_only = 0;
    for (v, t) in tok.tokens.iter().enumerate() {
        let filled = t.anchors().iter().filter(|&&a| a != PAD).count();
        hist[filled] += 1;
        if store
            .undirected_neighbors(v as u32)
            .iter()
            .any(|&n| tok.anchors.is_anchor(n))
        {
            covered += 1;
        }
        let non_center = t.slots[..t.slots.len() - 1].iter().all(|&s| s == PAD);
        if non_center {
            center_only += 1;
        }
    }
    let nodes = tok.tokens.len();
    CoverageReport {
        nodes,
        one_hop_covered: covered,
        one_hop_fraction: if nodes == 0 { 0.0 } else { covered as f64 / nodes as f64 },
        center_only,
        anchor_slot_histogram: hist,
    }
}

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("token cache: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
