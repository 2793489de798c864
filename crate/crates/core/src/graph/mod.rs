//! Knowledge-graph storage: vocabularies, triple splits, directed adjacency
//! and the true-triple index used for filtered ranking.

mod io;
mod store;

pub use io::{load_triples, read_store_dir, write_store_dir, TripleFormat};
pub use store::{Adjacency, TripleStore, TrueIndex};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// A single fact `(head, relation, tail)` over dense integer ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple { head, relation, tail }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Which side of a triple a link-prediction query asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(?, r, t)`
    Head,
    /// `(h, r, ?)`
    Tail,
}

impl Direction {
    /// The entity id the query hides.
    pub fn gold(self, triple: &Triple) -> u32 {
        match self {
            Direction::Head => triple.head,
            Direction::Tail => triple.tail,
        }
    }

    /// `triple` with the hidden side replaced by `entity`.
    pub fn substitute(self, triple: &Triple, entity: u32) -> Triple {
        match self {
            Direction::Head => Triple::new(entity, triple.relation, triple.tail),
            Direction::Tail => Triple::new(triple.head, triple.relation, entity),
        }
    }
}

/// Bijection between string labels and dense ids assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary whose labels are the decimal ids `0..n`.
    pub fn numeric(n: u32) -> Self {
        let mut v = Vocab::new();
        for i in 0..n {
            v.intern(&i.to_string());
        }
        v
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{split} line {line}: {reason}")]
    Malformed {
        split: &'static str,
        line: usize,
        reason: String,
    },
    #[error("{split} line {line}: {kind} id {id} out of range (limit {limit})")]
    IdOutOfRange {
        split: &'static str,
        line: usize,
        kind: &'static str,
        id: u64,
        limit: u64,
    },
    #[error("train split is empty")]
    EmptyTrain,
    #[error("triple {triple} in {split} references ids outside the vocabulary")]
    InvalidTriple { split: &'static str, triple: Triple },
    #[error("store file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
