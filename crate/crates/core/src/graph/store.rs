use std::collections::HashMap;

use log::warn;

use super::{Direction, GraphError, Split, Triple, Vocab};

/// Per-node `(neighbor, relation)` lists in CSR layout, sorted by
/// `(neighbor, relation)` within each node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    entries: Vec<(u32, u32)>,
}

impl Adjacency {
    fn from_pairs(num_nodes: usize, pairs: impl Iterator<Item = (u32, (u32, u32))>) -> Self {
        let pairs: Vec<(u32, (u32, u32))> = pairs.collect();
        let mut counts = vec![0usize; num_nodes + 1];
        for (node, _) in &pairs {
            counts[*node as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut entries = vec![(0u32, 0u32); pairs.len()];
        for (node, entry) in pairs {
            let slot = &mut cursor[node as usize];
            entries[*slot] = entry;
            *slot += 1;
        }
        for v in 0..num_nodes {
            entries[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Adjacency { offsets, entries }
    }

    /// Builds `(in, out)` adjacency from the train split: `in[t]` holds
    /// `(h, r)` and `out[h]` holds `(t, r)` for every `(h, r, t)`.
    pub fn build(num_entities: usize, train: &[Triple]) -> (Adjacency, Adjacency) {
        let incoming = Adjacency::from_pairs(num_entities, train.iter().map(|t| (t.tail, (t.head, t.relation))));
        let outgoing = Adjacency::from_pairs(num_entities, train.iter().map(|t| (t.head, (t.tail, t.relation))));
        (incoming, outgoing)
    }

    pub fn neighbors(&self, node: u32) -> &[(u32, u32)] {
        let v = node as usize;
        &self.entries[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Distinct neighbor ids of `node`, ascending.
    pub fn distinct_neighbors(&self, node: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.neighbors(node).iter().map(|&(n, _)| n).collect();
        out.dedup();
        out
    }

    pub fn degree(&self, node: u32) -> usize {
        let v = node as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }
}

/// Membership over all splits, indexed for both query directions.
#[derive(Clone, Debug, Default)]
pub struct TrueIndex {
    tails: HashMap<(u32, u32), Vec<u32>>,
    heads: HashMap<(u32, u32), Vec<u32>>,
}

impl TrueIndex {
    pub fn build<'a>(triples: impl Iterator<Item = &'a Triple>) -> Self {
        let mut idx = TrueIndex::default();
        for t in triples {
            idx.tails.entry((t.head, t.relation)).or_default().push(t.tail);
            idx.heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }
        for list in idx.tails.values_mut().chain(idx.heads.values_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        idx
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails
            .get(&(t.head, t.relation))
            .is_some_and(|l| l.binary_search(&t.tail).is_ok())
    }

    /// Every entity that completes the query into a known triple (gold included), ascending.
    pub fn completions(&self, query: &Triple, direction: Direction) -> &[u32] {
        let found = match direction {
            Direction::Tail => self.tails.get(&(query.head, query.relation)),
            Direction::Head => self.heads.get(&(query.relation, query.tail)),
        };
        found.map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.tails.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }
}

/// Immutable knowledge graph with splits and derived indices.
#[derive(Clone, Debug)]
pub struct TripleStore {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub in_adjacency: Adjacency,
    pub out_adjacency: Adjacency,
    pub true_set: TrueIndex,
    /// Duplicate triples found per split (train, valid, test).
    pub duplicates: [usize; 3],
}

impl TripleStore {
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, GraphError> {
        if train.is_empty() {
            return Err(GraphError::EmptyTrain);
        }
        let (ne, nr) = (entities.len() as u32, relations.len() as u32);
        let mut duplicates = [0usize; 3];
        for (i, (split, list)) in [(Split::Train, &train), (Split::Valid, &valid), (Split::Test, &test)]
            .into_iter()
            .enumerate()
        {
            if let Some(bad) = list.iter().find(|t| t.head >= ne || t.tail >= ne || t.relation >= nr) {
                return Err(GraphError::InvalidTriple {
                    split: split.name(),
                    triple: *bad,
                });
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            duplicates[i] = sorted.windows(2).filter(|w| w[0] == w[1]).count();
            if duplicates[i] > 0 {
                warn!("{} duplicate triples kept in {} split", duplicates[i], split.name());
            }
        }
        let (in_adjacency, out_adjacency) = Adjacency::build(entities.len(), &train);
        let true_set = TrueIndex::build(train.iter().chain(&valid).chain(&test));
        Ok(TripleStore {
            entities,
            relations,
            train,
            valid,
            test,
            in_adjacency,
            out_adjacency,
            true_set,
            duplicates,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Known completions of the query other than its own gold entity.
    pub fn filtered_candidates(&self, query: &Triple, direction: Direction) -> Vec<u32> {
        let gold = direction.gold(query);
        self.true_set
            .completions(query, direction)
            .iter()
            .copied()
            .filter(|&e| e != gold)
            .collect()
    }

    /// Total degree (in + out) over the train split.
    pub fn degree(&self, node: u32) -> usize {
        self.in_adjacency.degree(node) + self.out_adjacency.degree(node)
    }

    /// Distinct one-hop neighbors over both directions, excluding `node` itself.
    pub fn undirected_neighbors(&self, node: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .in_adjacency
            .neighbors(node)
            .iter()
            .chain(self.out_adjacency.neighbors(node))
            .map(|&(n, _)| n)
            .filter(|&n| n != node)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn stats_line(&self) -> String {
        format!(
            "entities={} relations={} train={} valid={} test={}",
            self.num_entities(),
            self.num_relations(),
            self.train.len(),
            self.valid.len(),
            self.test.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: u32, train: &[(u32, u32, u32)]) -> TripleStore {
        let nr = train.iter().map(|t| t.1).max().unwrap_or(0) + 1;
        TripleStore::new(
            Vocab::numeric(n),
            Vocab::numeric(nr),
            train.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn single_edge_adjacency() {
        let s = store(3, &[(0, 0, 1)]);
        assert_eq!(s.in_adjacency.neighbors(1), &[(0, 0)]);
        assert_eq!(s.out_adjacency.neighbors(0), &[(1, 0)]);
        for v in [0, 2] {
            assert!(s.in_adjacency.neighbors(v).is_empty());
        }
        for v in [1, 2] {
            assert!(s.out_adjacency.neighbors(v).is_empty());
        }
    }

    #[test]
    fn adjacency_lists_are_sorted() {
        let s = store(3, &[(2, 1, 1), (0, 0, 1)]);
        assert_eq!(s.in_adjacency.neighbors(1), &[(0, 0), (2, 1)]);
    }

    #[test]
    fn chain_adjacency() {
        // a=0 -> b=1 -> c=2
        let s = store(3, &[(0, 0, 1), (1, 0, 2)]);
        assert_eq!(s.out_adjacency.neighbors(1), &[(2, 0)]);
        assert_eq!(s.in_adjacency.neighbors(1), &[(0, 0)]);
    }

    #[test]
    fn filtered_excludes_other_completions_only() {
        let s = store(3, &[(0, 0, 1), (0, 0, 2)]);
        assert_eq!(s.filtered_candidates(&Triple::new(0, 0, 1), Direction::Tail), vec![2]);
        let s = store(3, &[(0, 0, 1)]);
        assert!(s.filtered_candidates(&Triple::new(0, 0, 1), Direction::Tail).is_empty());
    }

    #[test]
    fn empty_train_is_rejected() {
        let err = TripleStore::new(Vocab::numeric(2), Vocab::numeric(1), vec![], vec![], vec![]);
        assert!(matches!(err, Err(GraphError::EmptyTrain)));
    }

    #[test]
    fn duplicates_are_kept_and_counted() {
        let s = store(2, &[(0, 0, 1), (0, 0, 1)]);
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.duplicates[0], 1);
        assert_eq!(s.in_adjacency.num_entries(), 2);
    }
}
