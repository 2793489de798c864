//! Fixed candidate lists for OGB-style evaluation.
//!
//! TSV, one line per query: `tail<TAB>id<TAB>id...` or `head<TAB>id...`.
//! The n-th `tail` line belongs to the n-th triple of the split, likewise for
//! `head`. Every line carries the same number of ids.

use std::io::{BufRead, Write};

use log::warn;

use super::EvalError;
use crate::graph::{Direction, Triple};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSets {
    pub head: Vec<Vec<u32>>,
    pub tail: Vec<Vec<u32>>,
}

impl CandidateSets {
    pub fn get(&self, query: usize, direction: Direction) -> Option<&[u32]> {
        match direction {
            Direction::Head => self.head.get(query),
            Direction::Tail => self.tail.get(query),
        }
        .map(Vec::as_slice)
    }

    pub(crate) fn check_covers(&self, queries: usize, both_directions: bool) -> Result<(), EvalError> {
        if self.tail.len() < queries || (both_directions && self.head.len() < queries) {
            return Err(EvalError::Candidates(format!(
                "{} tail / {} head lists for {queries} queries",
                self.tail.len(),
                self.head.len()
            )));
        }
        Ok(())
    }
}

/// Parses candidate lists for `split`, dropping gold ids found in a list.
pub fn load_candidate_sets<R: BufRead>(source: R, split: &[Triple]) -> Result<CandidateSets, EvalError> {
    let mut sets = CandidateSets::default();
    let mut width: Option<usize> = None;
    let mut gold_dropped = 0usize;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let bad = |m: String| EvalError::Candidates(format!("line {}: {m}", i + 1));
        let mut fields = line.split('\t');
        let dir = match fields.next() {
            Some("head") => Direction::Head,
            Some("tail") => Direction::Tail,
            other => return Err(bad(format!("expected `head` or `tail`, found {other:?}"))),
        };
        let ids = fields
            .map(|f| f.parse::<u32>().map_err(|_| bad(format!("bad id `{f}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        match width {
            None => width = Some(ids.len()),
            Some(w) if w != ids.len() => return Err(bad(format!("{} ids, expected {w}", ids.len()))),
            _ => {}
        }
        let lists = match dir {
            Direction::Head => &mut sets.head,
            Direction::Tail => &mut sets.tail,
        };
        let q = lists.len();
        let triple = split
            .get(q)
            .ok_or_else(|| bad(format!("more {dir:?} lists than the {} split triples", split.len())))?;
        let gold = dir.gold(triple);
        let before = ids.len();
        let ids: Vec<u32> = ids.into_iter().filter(|&e| e != gold).collect();
        gold_dropped += before - ids.len();
        lists.push(ids);
    }
    for (name, lists) in [("head", &sets.head), ("tail", &sets.tail)] {
        if !lists.is_empty() && lists.len() != split.len() {
            return Err(EvalError::Candidates(format!(
                "{} {name} lists for {} split triples",
                lists.len(),
                split.len()
            )));
        }
    }
    if gold_dropped > 0 {
        warn!("removed {gold_dropped} gold ids from candidate lists");
    }
    Ok(sets)
}

pub fn write_candidate_sets<W: Write>(sets: &CandidateSets, mut sink: W) -> std::io::Result<()> {
    for (name, lists) in [("tail", &sets.tail), ("head", &sets.head)] {
        for list in lists {
            write!(sink, "{name}")?;
            for id in list {
                write!(sink, "\t{id}")?;
            }
            writeln!(sink)?;
        }
    }
    Ok(())
}
