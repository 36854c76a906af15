//! Dataset loading and evaluation properties on Nations and random graphs.

mod common;

use common::*;
use multikge::train::initialise;
use multikge::{hits_at_k, load_graph, queries_from_split, EvalOptions, Method, ModelConfig, Split, TieMode};
use rand::Rng;

fn nations() -> multikge::KnowledgeGraph {
    let d = data_dir().join("nations");
    load_graph(&d.join("train.txt"), &d.join("valid.txt"), &d.join("test.txt")).unwrap()
}

#[test]
fn nations_has_expected_shape() {
    let g = nations();
    assert_eq!(g.num_entities(), 14);
    assert_eq!(g.num_relations(), 55);
    assert_eq!(g.split(Split::Train).len(), 1592);
    assert_eq!(g.split(Split::Valid).len(), 199);
    assert_eq!(g.split(Split::Test).len(), 201);
    assert_eq!(queries_from_split(&g, Split::Test).len(), 402);
    assert_eq!(g.dataset_hash().len(), 64);
}

#[test]
fn hits_is_monotone_in_k_and_filtering_never_hurts() {
    for seed in 0..30 {
        let mut r = rng(7000 + seed);
        let graph = random_graph(&mut r, 10, 3);
        let method = METHODS[r.random_range(0..METHODS.len())];
        let model = initialise(&graph, &random_config(&mut r, method));
        let queries = queries_from_split(&graph, Split::Test);
        let mut prev = 0.0;
        for k in 1..=graph.num_entities() {
            let mut by_setting = [0.0; 2];
            for (i, filtered) in [true, false].into_iter().enumerate() {
                let opts = EvalOptions { k, filtered, ties: TieMode::Optimistic };
                by_setting[i] = hits_at_k(&model, &graph, &queries, opts).unwrap().hits_at_k;
            }
            assert!(by_setting[0] >= by_setting[1], "seed {seed} k {k}");
            assert!(by_setting[0] >= prev);
            prev = by_setting[0];
        }
        assert_eq!(prev, 1.0);
    }
}

#[test]
fn tie_modes_are_ordered() {
    let g = nations();
    let queries = queries_from_split(&g, Split::Test);
    // A zero model ties every candidate, the extreme case for tie handling.
    let model = multikge::EmbeddingModel::zeros(ModelConfig::new(Method::DistMult, 4), &g);
    let hits = |ties| {
        hits_at_k(&model, &g, &queries, EvalOptions { k: 3, filtered: true, ties })
            .unwrap()
            .hits_at_k
    };
    assert_eq!(hits(TieMode::Optimistic), 1.0);
    assert!(hits(TieMode::Pessimistic) <= hits(TieMode::Mean));
    assert!(hits(TieMode::Mean) <= 1.0);
}

#[test]
fn trained_model_beats_chance_on_nations() {
    let g = nations();
    let mut config = ModelConfig::new(Method::DistMult, 16);
    config.epochs = 30;
    config.loss = multikge::LossKind::CrossEntropy;
    config.optimizer = multikge::OptimizerKind::Adagrad;
    config.learning_rate = 0.1;
    let run = multikge::train(&g, &config).unwrap();
    let losses = &run.model.epoch_losses;
    assert!(losses.last().unwrap() < losses.first().unwrap());
    let opts = EvalOptions { k: 3, ..EvalOptions::default() };
    let h = hits_at_k(&run.model, &g, &queries_from_split(&g, Split::Test), opts).unwrap();
    // Three of 14 candidates by chance is about 0.21.
    assert!(h.hits_at_k > 0.5, "{}", h.hits_at_k);
}
