//! Triple store: entity/relation dictionaries, train/valid/test splits and
//! link-prediction queries.
//!
//! Identifiers are dense indices assigned in first-appearance order while
//! reading train, then valid, then test. Loading the same files twice always
//! yields the same assignment.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which slot of the triple a query leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `<h, r, ?>`
    Tail,
    /// `<?, r, t>`
    Head,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        }
    }
}

/// A link-prediction query together with its gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub direction: Direction,
    /// The entity that is given (head for tail queries, tail for head queries).
    pub entity: EntityId,
    pub relation: RelationId,
    pub gold: EntityId,
}

impl Query {
    /// The triple obtained by filling the open slot with `candidate`.
    pub fn triple_for(&self, candidate: EntityId) -> Triple {
        match self.direction {
            Direction::Tail => Triple {
                head: self.entity,
                relation: self.relation,
                tail: candidate,
            },
            Direction::Head => Triple {
                head: candidate,
                relation: self.relation,
                tail: self.entity,
            },
        }
    }

    pub fn gold_triple(&self) -> Triple {
        self.triple_for(self.gold)
    }

    fn key(&self) -> (Direction, EntityId, RelationId) {
        (self.direction, self.entity, self.relation)
    }
}

/// Bijection between string labels and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get_or_insert(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Writes `id<TAB>label` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, label) in self.labels.iter().enumerate() {
            writeln!(out, "{id}\t{label}")?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`Dictionary::write_tsv`]. Ids must be
    /// contiguous and start at zero.
    pub fn read_tsv<R: BufRead>(input: R, name: &str) -> Result<Self> {
        let mut dict = Dictionary::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: name.to_owned(),
                line: lineno + 1,
                message,
            };
            let (id, label) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `id<TAB>label`".into()))?;
            let id: u32 = id
                .parse()
                .map_err(|_| parse_err(format!("bad id `{id}`")))?;
            if id as usize != dict.len() {
                return Err(parse_err(format!("id {id} out of sequence")));
            }
            if dict.id(label).is_some() {
                return Err(parse_err(format!("duplicate label `{label}`")));
            }
            dict.get_or_insert(label);
        }
        Ok(dict)
    }
}

/// Labelled triples of one split, as read from a file.
pub type LabeledTriples = Vec<(String, String, String)>;

/// An indexed knowledge graph. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Dictionary,
    relations: Dictionary,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    known_true: HashSet<Triple>,
    answers: HashMap<(Direction, EntityId, RelationId), Vec<EntityId>>,
    duplicates_dropped: [usize; 3],
    hash: String,
}

impl KnowledgeGraph {
    /// Builds a graph from labelled splits. Duplicates inside a split are
    /// dropped; a triple appearing in two splits is an error.
    pub fn from_labeled(
        train: &[(String, String, String)],
        valid: &[(String, String, String)],
        test: &[(String, String, String)],
    ) -> Result<Self> {
        let mut entities = Dictionary::new();
        let mut relations = Dictionary::new();
        let mut encode = |rows: &[(String, String, String)]| -> Vec<Triple> {
            rows.iter()
                .map(|(h, r, t)| Triple {
                    head: EntityId(entities.get_or_insert(h)),
                    relation: RelationId(relations.get_or_insert(r)),
                    tail: EntityId(entities.get_or_insert(t)),
                })
                .collect()
        };
        let splits = [encode(train), encode(valid), encode(test)];
        Self::assemble(entities, relations, splits)
    }

    /// Builds a graph directly from id triples over `num_entities` entities
    /// and `num_relations` relations, labelled `e<i>` and `r<i>`.
    pub fn from_ids(
        num_entities: u32,
        num_relations: u32,
        train: &[Triple],
        valid: &[Triple],
        test: &[Triple],
    ) -> Result<Self> {
        let mut entities = Dictionary::new();
        for i in 0..num_entities {
            entities.get_or_insert(&format!("e{i}"));
        }
        let mut relations = Dictionary::new();
        for i in 0..num_relations {
            relations.get_or_insert(&format!("r{i}"));
        }
        Self::assemble(entities, relations, [train.to_vec(), valid.to_vec(), test.to_vec()])
    }

    fn assemble(
        entities: Dictionary,
        relations: Dictionary,
        raw: [Vec<Triple>; 3],
    ) -> Result<Self> {
        let mut owner: HashMap<Triple, Split> = HashMap::new();
        let mut splits: [Vec<Triple>; 3] = Default::default();
        let mut duplicates_dropped = [0usize; 3];
        let mut hasher = Sha256::new();

        for (slot, rows) in raw.iter().enumerate() {
            let split = Split::ALL[slot];
            for triple in rows {
                let (h, r, t) = match (
                    entities.label(triple.head.0),
                    relations.label(triple.relation.0),
                    entities.label(triple.tail.0),
                ) {
                    (Some(h), Some(r), Some(t)) => (h, r, t),
                    _ => {
                        return Err(Error::InvalidDataset(format!(
                            "triple {triple:?} references an unknown id"
                        )))
                    }
                };
                match owner.get(triple) {
                    Some(&prev) if prev == split => duplicates_dropped[slot] += 1,
                    Some(prev) => {
                        return Err(Error::InvalidDataset(format!(
                            "splits not disjoint: `{h}\t{r}\t{t}` appears in {prev} and {split}"
                        )))
                    }
                    None => {
                        owner.insert(*triple, split);
                        splits[slot].push(*triple);
                        hasher.update(format!("{split}\t{h}\t{r}\t{t}\n").as_bytes());
                    }
                }
            }
        }
        if splits[0].is_empty() {
            return Err(Error::InvalidDataset("training split is empty".into()));
        }
        for (slot, &n) in duplicates_dropped.iter().enumerate() {
            if n > 0 {
                log::warn!("dropped {n} duplicate triples in {} split", Split::ALL[slot]);
            }
        }

        let [train, valid, test] = splits;
        let mut answers: HashMap<_, Vec<EntityId>> = HashMap::new();
        for t in train.iter().chain(&valid).chain(&test) {
            answers
                .entry((Direction::Tail, t.head, t.relation))
                .or_default()
                .push(t.tail);
            answers
                .entry((Direction::Head, t.tail, t.relation))
                .or_default()
                .push(t.head);
        }

        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            known_true: owner.into_keys().collect(),
            answers,
            duplicates_dropped,
            hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Dictionary {
        &self.entities
    }

    pub fn relations(&self) -> &Dictionary {
        &self.relations
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn known_true(&self) -> &HashSet<Triple> {
        &self.known_true
    }

    pub fn is_known(&self, triple: &Triple) -> bool {
        self.known_true.contains(triple)
    }

    /// Duplicate lines dropped per split (train, valid, test).
    pub fn duplicates_dropped(&self) -> [usize; 3] {
        self.duplicates_dropped
    }

    /// SHA-256 over the deduplicated labelled splits.
    pub fn dataset_hash(&self) -> &str {
        &self.hash
    }

    /// All known-true answers to the query's open slot, gold included.
    pub fn known_answers(&self, query: &Query) -> &[EntityId] {
        self.answers
            .get(&query.key())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Mask for the filtered setting: `true` marks known-true answers other
    /// than the gold one.
    pub fn filter_mask(&self, query: &Query) -> Vec<bool> {
        let mut mask = vec![false; self.num_entities()];
        for e in self.known_answers(query) {
            mask[e.index()] = true;
        }
        mask[query.gold.index()] = false;
        mask
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        let ne = self.num_entities();
        for e in [t.head, t.tail] {
            if e.index() >= ne {
                return Err(Error::OutOfBounds {
                    kind: "entity",
                    id: e.index(),
                    len: ne,
                });
            }
        }
        if t.relation.index() >= self.num_relations() {
            return Err(Error::OutOfBounds {
                kind: "relation",
                id: t.relation.index(),
                len: self.num_relations(),
            });
        }
        Ok(())
    }
}

/// Reads one `head<TAB>relation<TAB>tail` file. Blank lines are skipped.
pub fn read_triples(path: &Path) -> Result<LabeledTriples> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triples(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn parse_triples<R: BufRead>(input: R, name: &str) -> Result<LabeledTriples> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::Parse {
                path: name.to_owned(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        out.push((cols[0].to_owned(), cols[1].to_owned(), cols[2].to_owned()));
    }
    Ok(out)
}

pub fn load_graph(train: &Path, valid: &Path, test: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::from_labeled(
        &read_triples(train)?,
        &read_triples(valid)?,
        &read_triples(test)?,
    )
}

/// Two queries per triple, in file order, tail query first.
pub fn queries_from_split(graph: &KnowledgeGraph, split: Split) -> Vec<Query> {
    graph
        .split(split)
        .iter()
        .flat_map(|t| {
            [
                Query {
                    direction: Direction::Tail,
                    entity: t.head,
                    relation: t.relation,
                    gold: t.tail,
                },
                Query {
                    direction: Direction::Head,
                    entity: t.tail,
                    relation: t.relation,
                    gold: t.head,
                },
            ]
        })
        .collect()
}

/// Occurrences of each entity (as head or tail) in the training split.
pub fn entity_frequency(graph: &KnowledgeGraph) -> Vec<usize> {
    let mut counts = vec![0; graph.num_entities()];
    for t in graph.split(Split::Train) {
        counts[t.head.index()] += 1;
        counts[t.tail.index()] += 1;
    }
    counts
}

/// Occurrences of each relation in the training split.
pub fn relation_frequency(graph: &KnowledgeGraph) -> Vec<usize> {
    let mut counts = vec![0; graph.num_relations()];
    for t in graph.split(Split::Train) {
        counts[t.relation.index()] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(lines: &[(&str, &str, &str)]) -> LabeledTriples {
        lines
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect()
    }

    #[test]
    fn small_graph_counts() {
        let train = rows(&[("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]);
        let g = KnowledgeGraph::from_labeled(&train, &[], &[]).unwrap();
        assert_eq!(g.num_entities(), 4);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.known_true().len(), 3);
    }

    #[test]
    fn cross_split_duplicate_is_rejected() {
        let one = rows(&[("a", "r", "a")]);
        let err = KnowledgeGraph::from_labeled(&one, &one, &one).unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)), "{err}");
    }

    #[test]
    fn within_split_duplicates_are_dropped() {
        let train = rows(&[("a", "r", "b"), ("a", "r", "b"), ("b", "r", "a")]);
        let g = KnowledgeGraph::from_labeled(&train, &[], &[]).unwrap();
        assert_eq!(g.split(Split::Train).len(), 2);
        assert_eq!(g.duplicates_dropped(), [1, 0, 0]);
    }

    #[test]
    fn empty_train_is_invalid() {
        let err = KnowledgeGraph::from_labeled(&[], &rows(&[("a", "r", "b")]), &[]).unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "a\tr\tb\nbroken line\n";
        let err = parse_triples(text.as_bytes(), "train.txt").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn queries_two_per_triple() {
        let g = KnowledgeGraph::from_ids(2, 1, &[Triple::new(0, 0, 1)], &[], &[Triple::new(1, 0, 0)])
            .unwrap();
        let q = queries_from_split(&g, Split::Train);
        assert_eq!(
            q,
            vec![
                Query {
                    direction: Direction::Tail,
                    entity: EntityId(0),
                    relation: RelationId(0),
                    gold: EntityId(1)
                },
                Query {
                    direction: Direction::Head,
                    entity: EntityId(1),
                    relation: RelationId(0),
                    gold: EntityId(0)
                },
            ]
        );
        assert!(queries_from_split(&g, Split::Valid).is_empty());
        for query in &q {
            assert!(g.is_known(&query.gold_triple()));
        }
    }

    #[test]
    fn frequencies_over_train() {
        let g = KnowledgeGraph::from_ids(
            3,
            2,
            &[Triple::new(0, 0, 1), Triple::new(0, 0, 2)],
            &[],
            &[Triple::new(1, 1, 2)],
        )
        .unwrap();
        assert_eq!(entity_frequency(&g), vec![2, 1, 1]);
        assert_eq!(relation_frequency(&g), vec![2, 0]);
    }

    #[test]
    fn from_ids_keeps_given_indices() {
        let g = KnowledgeGraph::from_ids(5, 3, &[Triple::new(4, 2, 3)], &[], &[]).unwrap();
        assert_eq!(g.split(Split::Train), &[Triple::new(4, 2, 3)]);
        assert_eq!(g.entities().label(4), Some("e4"));
        assert_eq!(g.num_entities(), 5);
    }

    #[test]
    fn filter_mask_keeps_gold() {
        let g = KnowledgeGraph::from_ids(
            4,
            1,
            &[Triple::new(0, 0, 1), Triple::new(0, 0, 2)],
            &[],
            &[Triple::new(0, 0, 3)],
        )
        .unwrap();
        let q = queries_from_split(&g, Split::Test)[0];
        assert_eq!(g.filter_mask(&q), vec![false, true, true, false]);
    }

    #[test]
    fn dictionary_round_trip() {
        let train = rows(&[("x", "p", "y"), ("y", "q", "z")]);
        let g = KnowledgeGraph::from_labeled(&train, &[], &[]).unwrap();
        let mut buf = Vec::new();
        g.entities().write_tsv(&mut buf).unwrap();
        let back = Dictionary::read_tsv(buf.as_slice(), "dict").unwrap();
        assert_eq!(&back, g.entities());
    }
}
