use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GraphError, Split, Triple, TripleStore, Vocab};

const STORE_MAGIC: &[u8; 4] = b"KGTS";
const STORE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleFormat {
    /// Arbitrary string labels; ids assigned in first-seen order across train, valid, test.
    Labels,
    /// Decimal ids. Declared counts bound the ids; otherwise counts are `max id + 1`.
    Numeric {
        num_entities: Option<u32>,
        num_relations: Option<u32>,
    },
}

fn split_line(split: Split, lineno: usize, line: &str) -> Result<[&str; 3], GraphError> {
    let malformed = |reason: String| GraphError::Malformed {
        split: split.name(),
        line: lineno,
        reason,
    };
    if line.starts_with('#') {
        return Err(malformed("comment lines are not allowed".into()));
    }
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(malformed(format!(
            "expected 3 tab-separated fields, found {}",
            fields.len()
        )));
    }
    if let Some(f) = fields.iter().find(|f| f.is_empty()) {
        return Err(malformed(format!("empty field `{f}`")));
    }
    Ok([fields[0], fields[1], fields[2]])
}

fn read_lines<R: BufRead>(
    split: Split,
    source: R,
    mut on_fields: impl FnMut(usize, [&str; 3]) -> Result<(), GraphError>,
) -> Result<(), GraphError> {
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        on_fields(i + 1, split_line(split, i + 1, line)?)?;
    }
    Ok(())
}

/// Parses train/valid/test sources into a fully indexed [`TripleStore`].
pub fn load_triples<R: BufRead>(sources: [R; 3], format: TripleFormat) -> Result<TripleStore, GraphError> {
    let mut splits: [Vec<Triple>; 3] = Default::default();
    match format {
        TripleFormat::Labels => {
            let mut entities = Vocab::new();
            let mut relations = Vocab::new();
            for ((split, src), out) in Split::ALL.into_iter().zip(sources).zip(splits.iter_mut()) {
                read_lines(split, src, |_, [h, r, t]| {
                    let h = entities.intern(h);
                    let r = relations.intern(r);
                    let t = entities.intern(t);
                    out.push(Triple::new(h, r, t));
                    Ok(())
                })?;
            }
            let [train, valid, test] = splits;
            TripleStore::new(entities, relations, train, valid, test)
        }
        TripleFormat::Numeric {
            num_entities,
            num_relations,
        } => {
            let ent_limit = num_entities.map_or(u32::MAX as u64, u64::from);
            let rel_limit = num_relations.map_or(u32::MAX as u64, u64::from);
            for ((split, src), out) in Split::ALL.into_iter().zip(sources).zip(splits.iter_mut()) {
                read_lines(split, src, |line, fields| {
                    let mut ids = [0u32; 3];
                    for (k, field) in fields.iter().enumerate() {
                        let (kind, limit) = if k == 1 {
                            ("relation", rel_limit)
                        } else {
                            ("entity", ent_limit)
                        };
                        let id: u64 = field.parse().map_err(|_| GraphError::Malformed {
                            split: split.name(),
                            line,
                            reason: format!("`{field}` is not a non-negative integer id"),
                        })?;
                        if id >= limit {
                            return Err(GraphError::IdOutOfRange {
                                split: split.name(),
                                line,
                                kind,
                                id,
                                limit,
                            });
                        }
                        ids[k] = id as u32;
                    }
                    out.push(Triple::new(ids[0], ids[1], ids[2]));
                    Ok(())
                })?;
            }
            let all = splits.iter().flatten();
            let ne = num_entities.unwrap_or_else(|| all.clone().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0));
            let nr = num_relations.unwrap_or_else(|| all.map(|t| t.relation + 1).max().unwrap_or(0));
            let [train, valid, test] = splits;
            TripleStore::new(Vocab::numeric(ne), Vocab::numeric(nr), train, valid, test)
        }
    }
}

fn write_vocab(path: &Path, vocab: &Vocab) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, label) in vocab.labels().iter().enumerate() {
        writeln!(w, "{label}\t{id}")?;
    }
    w.flush()
}

fn read_vocab(path: &Path) -> Result<Vocab, GraphError> {
    let mut vocab = Vocab::new();
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |reason: &str| GraphError::Format(format!("{}:{}: {reason}", path.display(), i + 1));
        let (label, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected `label<TAB>id`"))?;
        let id: usize = id.parse().map_err(|_| bad("bad id"))?;
        if id != vocab.len() || vocab.get(label).is_some() {
            return Err(bad("ids must be dense, unique and in order"));
        }
        vocab.intern(label);
    }
    Ok(vocab)
}

/// Persists the store as `store.bin` plus `entities.tsv` / `relations.tsv`.
pub fn write_store_dir(store: &TripleStore, dir: &Path) -> Result<(), GraphError> {
    std::fs::create_dir_all(dir)?;
    write_vocab(&dir.join("entities.tsv"), &store.entities)?;
    write_vocab(&dir.join("relations.tsv"), &store.relations)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.num_entities() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.num_relations() as u32).to_le_bytes());
    for split in Split::ALL {
        let list = store.split(split);
        buf.extend_from_slice(&(list.len() as u64).to_le_bytes());
        for t in list {
            for id in [t.head, t.relation, t.tail] {
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
    }
    std::fs::write(dir.join("store.bin"), buf)?;
    Ok(())
}

pub fn read_store_dir(dir: &Path) -> Result<TripleStore, GraphError> {
    let entities = read_vocab(&dir.join("entities.tsv"))?;
    let relations = read_vocab(&dir.join("relations.tsv"))?;
    let mut bytes = Vec::new();
    File::open(dir.join("store.bin"))?.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8], GraphError> {
        if cur.len() < n {
            return Err(GraphError::Format("store.bin is truncated".into()));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != STORE_MAGIC {
        return Err(GraphError::Format("bad magic in store.bin".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != STORE_VERSION {
        return Err(GraphError::Format(format!("unsupported store version {version}")));
    }
    let ne = u32_at(take(4)?) as usize;
    let nr = u32_at(take(4)?) as usize;
    if ne != entities.len() || nr != relations.len() {
        return Err(GraphError::Format("vocabulary sizes disagree with store.bin".into()));
    }
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for list in splits.iter_mut() {
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let body = take(
            n.checked_mul(12)
                .ok_or_else(|| GraphError::Format("bad count".into()))?,
        )?;
        list.extend(
            body.chunks_exact(12)
                .map(|c| Triple::new(u32_at(&c[0..4]), u32_at(&c[4..8]), u32_at(&c[8..12]))),
        );
    }
    if !cur.is_empty() {
        return Err(GraphError::Format("trailing bytes in store.bin".into()));
    }
    let [train, valid, test] = splits;
    TripleStore::new(entities, relations, train, valid, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(train: &str, format: TripleFormat) -> Result<TripleStore, GraphError> {
        load_triples([train.as_bytes(), b"".as_slice(), b"".as_slice()], format)
    }

    #[test]
    fn three_line_label_file() {
        let s = load("a\tr1\tb\nb\tr1\tc\na\tr2\tc\n", TripleFormat::Labels).unwrap();
        assert_eq!((s.num_entities(), s.num_relations(), s.train.len()), (3, 2, 3));
        assert_eq!(s.entities.get("c"), Some(2));
        assert_eq!(s.stats_line(), "entities=3 relations=2 train=3 valid=0 test=0");
    }

    #[test]
    fn arity_violation_reports_line() {
        match load("a\tr1\n", TripleFormat::Labels) {
            Err(GraphError::Malformed { line, split, .. }) => {
                assert_eq!((line, split), (1, "train"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match load("a\tr\tb\n\nb\tr\n", TripleFormat::Labels) {
            Err(GraphError::Malformed { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(load("a\tr\tb\n\n", TripleFormat::Labels).unwrap().train.len(), 1);
    }

    #[test]
    fn numeric_range_is_checked() {
        let fmt = TripleFormat::Numeric {
            num_entities: Some(3),
            num_relations: Some(1),
        };
        assert!(load("0\t0\t2\n", fmt).is_ok());
        assert!(matches!(
            load("0\t0\t3\n", fmt),
            Err(GraphError::IdOutOfRange {
                id: 3,
                kind: "entity",
                ..
            })
        ));
        assert!(matches!(
            load("0\t1\t2\n", fmt),
            Err(GraphError::IdOutOfRange { kind: "relation", .. })
        ));
        let inferred = load(
            "0\t4\t9\n",
            TripleFormat::Numeric {
                num_entities: None,
                num_relations: None,
            },
        )
        .unwrap();
        assert_eq!((inferred.num_entities(), inferred.num_relations()), (10, 5));
    }

    #[test]
    fn empty_train_rejected() {
        assert!(matches!(load("", TripleFormat::Labels), Err(GraphError::EmptyTrain)));
    }

    #[test]
    fn store_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = load_triples(
            [
                b"x\tp\ty\ny\tq\tz\n".as_slice(),
                b"z\tp\tw\n".as_slice(),
                b"w\tq\tx\n".as_slice(),
            ],
            TripleFormat::Labels,
        )
        .unwrap();
        write_store_dir(&s, dir.path()).unwrap();
        let back = read_store_dir(dir.path()).unwrap();
        assert_eq!(back.entities, s.entities);
        assert_eq!(back.relations, s.relations);
        assert_eq!(
            (back.train.clone(), back.valid.clone(), back.test.clone()),
            (s.train, s.valid, s.test)
        );
        std::fs::write(dir.path().join("store.bin"), b"nope").unwrap();
        assert!(read_store_dir(dir.path()).is_err());
    }
}
