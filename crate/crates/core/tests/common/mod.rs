#![allow(dead_code)]

use kge_core::graph::{Triple, TripleStore, Vocab};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID_W: i64 = 20;
pub const GRID_H: i64 = 15;
/// Offsets of the translation relations; several are sums of others.
pub const GRID_OFFSETS: [(i64, i64); 12] = [
    (1, 0),
    (0, 1),
    (2, 0),
    (0, 2),
    (1, 1),
    (1, -1),
    (3, 0),
    (0, 3),
    (2, 1),
    (1, 2),
    (2, 2),
    (3, 1),
];

/// 300 entities on a 20x15 grid, one relation per offset. `holdout` of the
/// triples go to test, the rest to train.
pub fn grid_kg(seed: u64, holdout: f64) -> TripleStore {
    let id = |x: i64, y: i64| (y * GRID_W + x) as u32;
    let mut all = Vec::new();
    for (r, &(dx, dy)) in GRID_OFFSETS.iter().enumerate() {
        for y in 0..GRID_H {
            for x in 0..GRID_W {
                let (tx, ty) = (x + dx, y + dy);
                if (0..GRID_W).contains(&tx) && (0..GRID_H).contains(&ty) {
                    all.push(Triple::new(id(x, y), r as u32, id(tx, ty)));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let n_test = (all.len() as f64 * holdout).round() as usize;
    let test = all.split_off(all.len() - n_test);
    TripleStore::new(
        Vocab::numeric((GRID_W * GRID_H) as u32),
        Vocab::numeric(GRID_OFFSETS.len() as u32),
        all,
        Vec::new(),
        test,
    )
    .expect("grid triples are valid")
}

/// Uniformly random triples without duplicates.
pub fn random_kg(seed: u64, entities: u32, relations: u32, triples: usize) -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = std::collections::BTreeSet::new();
    let mut train = Vec::new();
    while train.len() < triples {
        let t = Triple::new(
            rng.gen_range(0..entities),
            rng.gen_range(0..relations),
            rng.gen_range(0..entities),
        );
        if set.insert(t) {
            train.push(t);
        }
    }
    TripleStore::new(
        Vocab::numeric(entities),
        Vocab::numeric(relations),
        train,
        Vec::new(),
        Vec::new(),
    )
    .unwrap()
}

use kge_core::encoder::Mat;
use kge_core::eval::TiePolicy;
use kge_core::graph::Direction;
use kge_core::scoring::{ModelKind, Norm, RowLayout};
use kge_core::training::Model;
use std::collections::HashSet;

/// Direct-lookup model whose parameters are small integers, so distance ties
/// are common. Only TransE and InterHT are supported by [`oracle_distance`].
pub fn integer_model(kind: ModelKind, entities: usize, relations: usize, dim: usize, seed: u64) -> Model<f64> {
    let layout = RowLayout::new(kind, dim).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |rows: usize, cols: usize| {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-2i32..=2) as f64).collect(),
        )
    };
    Model {
        layout,
        u: 0.0,
        norm: Norm::L1,
        entity: Some(table(entities, layout.entity_width())),
        relation: table(relations, layout.relation_width()),
        encoder: None,
    }
}

/// L1 distance written out from the formulas, without the kernels.
pub fn oracle_distance(model: &Model<f64>, t: &Triple) -> f64 {
    let d = model.layout.dim;
    let e = model.entity.as_ref().unwrap();
    let h = e.row(t.head as usize);
    let tl = e.row(t.tail as usize);
    let r = model.relation.row(t.relation as usize);
    match model.layout.kind {
        ModelKind::TransE => (0..d).map(|i| (h[i] + r[i] - tl[i]).abs()).sum(),
        ModelKind::InterHT => (0..d)
            .map(|i| (h[i] * (tl[d + i] + 1.0) - tl[i] * (h[d + i] + 1.0) + r[i]).abs())
            .sum(),
        other => panic!("no oracle for {other}"),
    }
}

/// Rank of the gold entity by sorting every candidate's distance.
pub fn oracle_rank(
    model: &Model<f64>,
    known: &HashSet<Triple>,
    t: &Triple,
    dir: Direction,
    filtered: bool,
    candidates: Option<&[u32]>,
    tie: TiePolicy,
) -> f64 {
    let gold = dir.gold(t);
    let n = model.entity.as_ref().unwrap().rows as u32;
    let mut pool: Vec<u32> = match candidates {
        Some(c) => c.iter().copied().filter(|&e| e != gold).collect(),
        None => (0..n).filter(|&e| e != gold).collect(),
    };
    pool.sort_unstable();
    pool.dedup();
    if filtered && candidates.is_none() {
        pool.retain(|&e| !known.contains(&dir.substitute(t, e)));
    }
    pool.push(gold);
    let mut scored: Vec<(f64, u32)> = pool
        .iter()
        .map(|&e| (oracle_distance(model, &dir.substitute(t, e)), e))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let g = oracle_distance(model, t);
    let first = scored.iter().position(|s| s.0 == g).unwrap() as f64 + 1.0;
    let last = scored.iter().rposition(|s| s.0 == g).unwrap() as f64 + 1.0;
    match tie {
        TiePolicy::Optimistic => first,
        TiePolicy::Pessimistic => last,
        TiePolicy::Mean => (first + last) / 2.0,
    }
}

/// Random KG split 160/20/20 with distinct triples.
pub fn random_split_kg(seed: u64, entities: u32, relations: u32, triples: usize) -> TripleStore {
    let base = random_kg(seed, entities, relations, triples);
    let mut all = base.train.clone();
    let test = all.split_off(triples * 9 / 10);
    let valid = all.split_off(triples * 8 / 10);
    TripleStore::new(base.entities.clone(), base.relations.clone(), all, valid, test).unwrap()
}

pub fn known_triples(store: &TripleStore) -> HashSet<Triple> {
    store
        .train
        .iter()
        .chain(&store.valid)
        .chain(&store.test)
        .copied()
        .collect()
}
