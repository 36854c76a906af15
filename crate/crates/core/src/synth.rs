//! Synthetic knowledge graphs with controllable relation frequencies.
//!
//! Entities are split into equally sized clusters. Each relation permutes
//! the clusters, and its triples link an entity to members of the cluster
//! its own cluster is mapped to. A relation's training count controls how much of its
//! cluster map a model can see, so rare relations are learned poorly.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::train::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_entities: usize,
    pub num_clusters: usize,
    /// Training triples per relation; the length sets the relation count.
    pub train_counts: Vec<usize>,
    pub valid_per_relation: usize,
    pub test_per_relation: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Eight relations whose training counts range from 3 to 180.
    pub fn rare_and_frequent(seed: u64) -> Self {
        SyntheticSpec {
            num_entities: 40,
            num_clusters: 8,
            train_counts: vec![3, 6, 12, 25, 50, 100, 150, 180],
            valid_per_relation: 3,
            test_per_relation: 4,
            seed,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<KnowledgeGraph> {
    let ne = spec.num_entities;
    let c = spec.num_clusters;
    if c == 0 || ne < 2 || ne % c != 0 {
        return Err(Error::Parameter(format!(
            "{ne} entities cannot be split into {c} equal clusters"
        )));
    }
    let size = ne / c;
    let mut rng = stream_rng(spec.seed, 0);
    let mut cluster_of: Vec<usize> = (0..ne).map(|e| e % c).collect();
    cluster_of.shuffle(&mut rng);
    let mut members = vec![Vec::new(); c];
    for (e, &k) in cluster_of.iter().enumerate() {
        members[k].push(e as u32);
    }

    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (r, &count) in spec.train_counts.iter().enumerate() {
        let need = count + spec.valid_per_relation + spec.test_per_relation;
        if need > ne * size {
            return Err(Error::Parameter(format!(
                "relation {r} needs {need} triples but only {} exist",
                ne * size
            )));
        }
        let mut target: Vec<usize> = (0..c).collect();
        target.shuffle(&mut rng);
        let mut pool: Vec<Triple> = (0..ne as u32)
            .flat_map(|h| {
                members[target[cluster_of[h as usize]]]
                    .iter()
                    .filter(move |&&t| t != h)
                    .map(move |&t| Triple::new(h, r as u32, t))
            })
            .collect();
        pool.shuffle(&mut rng);
        let mut it = pool.into_iter();
        test.extend(it.by_ref().take(spec.test_per_relation));
        valid.extend(it.by_ref().take(spec.valid_per_relation));
        train.extend(it.by_ref().take(count));
    }
    KnowledgeGraph::from_ids(ne as u32, spec.train_counts.len() as u32, &train, &valid, &test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{relation_frequency, Split};

    #[test]
    fn counts_and_determinism() {
        let spec = SyntheticSpec::rare_and_frequent(3);
        let g = generate(&spec).unwrap();
        assert_eq!(g.num_entities(), 40);
        assert_eq!(relation_frequency(&g), spec.train_counts);
        assert_eq!(g.split(Split::Test).len(), 32);
        let again = generate(&spec).unwrap();
        assert_eq!(g.dataset_hash(), again.dataset_hash());
    }

    #[test]
    fn rejects_uneven_clusters() {
        let mut spec = SyntheticSpec::rare_and_frequent(0);
        spec.num_clusters = 7;
        assert!(generate(&spec).is_err());
    }
}
