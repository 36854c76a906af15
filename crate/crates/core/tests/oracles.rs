//! Library results against brute-force recomputation on random small
//! instances.

mod common;

use common::*;
use multikge::stats::spearman;
use multikge::voting::{ballot_points, Ballot};
use multikge::VotingRule;
use rand::Rng;

const INSTANCES: u64 = 100;

#[test]
fn ranks_and_hits_match_brute_force() {
    let failures = check_rank_instances(0, INSTANCES);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn rank_of_handles_tied_scores() {
    let failures = check_tied_rank_instances(1000, INSTANCES);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn borda_totals_match_brute_force() {
    let failures = check_borda_instances(2000, INSTANCES);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn spearman_matches_brute_force() {
    let failures = check_spearman_instances(3000, INSTANCES);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn answer_sets_match_brute_force() {
    let failures = check_answer_set_instances(4000, INSTANCES);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn ballot_points_sum_to_fixed_totals() {
    for seed in 0..INSTANCES {
        let mut r = rng(2500 + seed);
        let m = r.random_range(2..=6);
        let scores: Vec<f64> = (0..m).map(|_| r.random_range(0..6) as f64).collect();
        let b = Ballot::from_scores(scores).unwrap();
        let m = m as f64;
        let borda: f64 = ballot_points(VotingRule::Borda, &b).unwrap().iter().sum();
        assert_eq!(borda, m * (m - 1.0) / 2.0);
        let majority: f64 = ballot_points(VotingRule::Majority, &b).unwrap().iter().sum();
        assert!((majority - 1.0).abs() <= 1e-12);
    }
}

/// Reference values from an established statistics package.
#[test]
fn spearman_reference_values() {
    let cases: [(&[f64], &[f64], f64, f64); 4] = [
        (&[1., 2., 3., 4., 5.], &[2., 1., 4., 3., 5.], 0.7999999999999999, 0.10408803866182788),
        (&[1., 2., 2., 3., 7., 8.], &[3., 3., 1., 5., 6., 2.], 0.1911764705882353, 0.7167288952778343),
        (
            &[0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5],
            &[7., 6., 6., 4., 5., 1., 2.],
            -0.9189562119494703,
            0.003436626156217532,
        ),
        (
            &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.],
            &[1., 3., 2., 5., 4., 7., 6., 9., 8., 10.],
            0.9515151515151514,
            2.279854920641689e-05,
        ),
    ];
    for (x, y, rho, p) in cases {
        let c = spearman(x, y).unwrap();
        assert!((c.rho - rho).abs() <= 1e-12, "{x:?}");
        assert!((c.p_value - p).abs() <= 1e-9, "{x:?}: {} vs {p}", c.p_value);
    }
}
