//! Link-prediction ranking: filtered full ranking over all entities or
//! ranking against supplied candidate lists, reported as MRR and Hits@K.

mod candidates;

pub use candidates::{load_candidate_sets, write_candidate_sets, CandidateSets};

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::encoder::Mat;
use crate::graph::{Direction, Triple, TripleStore};
use crate::real::Real;
use crate::scoring::{score_for_loss, Norm, RowLayout};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0} has no candidates")]
    EmptyCandidates(Triple),
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("candidate sets: {0}")]
    Candidates(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Every entity is a candidate except other known completions.
    FilteredFull,
    /// Candidates come from a supplied per-query list.
    CandidateSet,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::FilteredFull => "filtered-full",
            Protocol::CandidateSet => "candidate-set",
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filtered-full" => Ok(Protocol::FilteredFull),
            "candidate-set" => Ok(Protocol::CandidateSet),
            other => Err(format!("unknown protocol `{other}` (filtered-full | candidate-set)")),
        }
    }
}

impl Serialize for Protocol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TiePolicy {
    /// `1 + #strictly better`
    Optimistic,
    /// `1 + #strictly better + #tied`
    Pessimistic,
    /// Average of the two.
    Mean,
}

impl TiePolicy {
    pub const ALL: [TiePolicy; 3] = [TiePolicy::Optimistic, TiePolicy::Pessimistic, TiePolicy::Mean];

    pub fn name(self) -> &'static str {
        match self {
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Pessimistic => "pessimistic",
            TiePolicy::Mean => "mean",
        }
    }

    pub fn rank(self, better: usize, tied: usize) -> f64 {
        let opt = 1.0 + better as f64;
        let pes = opt + tied as f64;
        match self {
            TiePolicy::Optimistic => opt,
            TiePolicy::Pessimistic => pes,
            TiePolicy::Mean => 0.5 * (opt + pes),
        }
    }
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TiePolicy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown tie policy `{s}` (optimistic | pessimistic | mean)"))
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for TiePolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Read-only view of materialized embeddings that yields `d_r` per triple.
#[derive(Clone, Copy, Debug)]
pub struct Scorer<'a, T> {
    pub layout: RowLayout,
    pub u: T,
    pub norm: Norm,
    pub entity: &'a Mat<T>,
    pub relation: &'a Mat<T>,
}

impl<T: Real> Scorer<'_, T> {
    pub fn d_r(&self, t: &Triple) -> T {
        let inp = self.layout.inputs(
            self.entity.row(t.head as usize),
            self.relation.row(t.relation as usize),
            self.entity.row(t.tail as usize),
            self.u,
            self.norm,
        );
        score_for_loss(self.layout.kind, &inp).expect("rows match layout")
    }

    pub fn num_entities(&self) -> usize {
        self.entity.rows
    }
}

/// Which entities compete with the gold one.
#[derive(Clone, Copy, Debug)]
pub enum Candidates<'a> {
    /// All entities minus other known completions.
    FilteredFull,
    /// All entities.
    Unfiltered,
    /// An explicit list; the gold entity is added if absent and never counted twice.
    List(&'a [u32]),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankResult {
    #[serde(skip)]
    pub triple: Triple,
    pub direction: Direction,
    pub rank: f64,
    pub num_candidates: usize,
}

pub fn rank_query<T: Real>(
    scorer: &Scorer<'_, T>,
    store: &TripleStore,
    triple: &Triple,
    direction: Direction,
    candidates: Candidates<'_>,
    tie: TiePolicy,
) -> Result<RankResult, EvalError> {
    let gold = direction.gold(triple);
    let gold_score = scorer.d_r(triple);
    let (mut better, mut tied, mut total) = (0usize, 0usize, 1usize);
    let mut visit = |e: u32| {
        if e == gold {
            return;
        }
        let s = scorer.d_r(&direction.substitute(triple, e));
        total += 1;
        if s < gold_score {
            better += 1;
        } else if s == gold_score {
            tied += 1;
        }
    };
    match candidates {
        Candidates::FilteredFull | Candidates::Unfiltered => {
            let known: &[u32] = match candidates {
                Candidates::FilteredFull => store.true_set.completions(triple, direction),
                _ => &[],
            };
            for e in 0..scorer.num_entities() as u32 {
                if known.binary_search(&e).is_err() {
                    visit(e);
                }
            }
        }
        Candidates::List(list) => {
            if list.is_empty() {
                return Err(EvalError::EmptyCandidates(*triple));
            }
            list.iter().copied().for_each(&mut visit);
        }
    }
    Ok(RankResult {
        triple: *triple,
        direction,
        rank: tie.rank(better, tied),
        num_candidates: total,
    })
}

fn ser_f64_map<S: Serializer>(v: &[(u32, f64)], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(v.len()))?;
    for (k, x) in v {
        m.serialize_entry(&format!("hits@{k}"), x)?;
    }
    m.end()
}

pub const HITS_AT: [u32; 3] = [1, 3, 10];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mrr: f64,
    #[serde(serialize_with = "ser_f64_map", rename = "hits")]
    pub hits_at: Vec<(u32, f64)>,
    pub count: usize,
    pub protocol: Protocol,
    pub tie_policy: TiePolicy,
    #[serde(skip)]
    pub ranks: Vec<RankResult>,
}

impl EvalReport {
    /// Aggregates in input order with `f64` accumulation.
    pub fn from_ranks(ranks: Vec<RankResult>, protocol: Protocol, tie_policy: TiePolicy) -> Self {
        let n = ranks.len().max(1) as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r.rank).sum::<f64>() / n;
        let hits_at = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|r| r.rank <= k as f64).count() as f64 / n))
            .collect();
        EvalReport {
            mrr,
            hits_at,
            count: ranks.len(),
            protocol,
            tie_policy,
            ranks,
        }
    }

    pub fn hits(&self, k: u32) -> Option<f64> {
        self.hits_at.iter().find(|(kk, _)| *kk == k).map(|&(_, v)| v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub protocol: Protocol,
    pub tie_policy: TiePolicy,
    pub both_directions: bool,
    /// Evaluate only the first `n` triples (0 = all).
    pub max_queries: usize,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            protocol: Protocol::FilteredFull,
            tie_policy: TiePolicy::Mean,
            both_directions: true,
            max_queries: 0,
            threads: 1,
        }
    }
}

/// Ranks every query of `triples` (tail queries, plus head queries when
/// `both_directions`), fanning out over `opts.threads`; results are reduced in
/// query order so reports do not depend on the thread count.
pub fn evaluate_split<T: Real>(
    scorer: &Scorer<'_, T>,
    store: &TripleStore,
    triples: &[Triple],
    opts: &EvalOptions,
    candidate_sets: Option<&CandidateSets>,
) -> Result<EvalReport, EvalError> {
    if triples.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let limit = if opts.max_queries == 0 {
        triples.len()
    } else {
        opts.max_queries.min(triples.len())
    };
    if opts.protocol == Protocol::CandidateSet {
        let sets = candidate_sets
            .ok_or_else(|| EvalError::Candidates("candidate-set protocol needs candidate lists".into()))?;
        sets.check_covers(triples.len(), opts.both_directions)?;
    }
    let mut queries: Vec<(usize, Direction)> = Vec::with_capacity(limit * 2);
    for i in 0..limit {
        queries.push((i, Direction::Tail));
        if opts.both_directions {
            queries.push((i, Direction::Head));
        }
    }
    let run = |&(i, dir): &(usize, Direction)| -> Result<RankResult, EvalError> {
        let cands = match opts.protocol {
            Protocol::FilteredFull => Candidates::FilteredFull,
            Protocol::CandidateSet => Candidates::List(candidate_sets.unwrap().get(i, dir).unwrap_or(&[])),
        };
        rank_query(scorer, store, &triples[i], dir, cands, opts.tie_policy)
    };
    let threads = opts.threads.max(1);
    let ranks: Vec<RankResult> = if threads == 1 || queries.len() < 2 * threads {
        queries.iter().map(run).collect::<Result<_, _>>()?
    } else {
        let chunk = queries.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = queries
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(run).collect::<Result<Vec<_>, _>>()))
                .collect();
            let mut out = Vec::with_capacity(queries.len());
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, EvalError>(out)
        })?
    };
    Ok(EvalReport::from_ranks(ranks, opts.protocol, opts.tie_policy))
}
