//! The `multikge` binary: exit codes, output locations and the aggregate
//! subcommand.

use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
name = "cli-tiny"
master_seed = 5
output_dir = "from-spec"

[dataset]
kind = "synthetic"
num_entities = 20
num_clusters = 4
train_counts = [4, 10, 25, 50]
valid_per_relation = 2
test_per_relation = 3
seed = 2

[model]
method = "distmult"
embedding_dim = 8
loss = { kind = "cross_entropy" }
negatives_per_positive = 4
learning_rate = 0.1
epochs = 30
seed = 1
optimizer = "adagrad"

[audit]
k = 3
epsilon = 0.1
n_competitors = 2
n_aggregate = 2
rules = ["borda", "range"]
"#;

const PROFILES: &str = "query_id,voter_id,entity_id,raw_score,position\n\
q1,m1,0,1,4\nq1,m1,1,8,2\nq1,m1,2,100,1\nq1,m1,3,6,3\n\
q1,m2,0,5,4\nq1,m2,1,8,1\nq1,m2,2,6,3\nq1,m2,3,7,2\n\
q1,m3,0,2,3\nq1,m3,1,40,1\nq1,m3,2,10,2\nq1,m3,3,1,4\n";

fn multikge(args: &[&str], output_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_multikge"));
    cmd.args(args).env_remove("MULTIKGE_OUTPUT_DIR");
    if let Some(dir) = output_dir {
        cmd.env("MULTIKGE_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn write_spec(dir: &Path, text: &str) -> String {
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn missing_and_malformed_specs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = multikge(&["audit", "--spec", missing.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));

    let bad = write_spec(dir.path(), &SPEC.replace("epochs = 30", "epochs = \"many\""));
    let out = multikge(&["train", "--spec", &bad], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let invalid = write_spec(dir.path(), &SPEC.replace("k = 3", "k = 0"));
    assert_eq!(multikge(&["audit", "--spec", &invalid], None).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out_dir = dir.path().join("out");
    // No audit has been run, so there is no query table to correlate.
    let out = multikge(&["correlate", "--spec", &spec], Some(&out_dir));
    assert_eq!(out.status.code(), Some(2));
    let status = std::fs::read_to_string(out_dir.join("correlate/status.json")).unwrap();
    assert!(status.contains("partial"));
}

#[test]
fn audit_honours_output_override_and_report_matches() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out_dir = dir.path().join("override");
    let out = multikge(&["audit", "--spec", &spec], Some(&out_dir));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("from-spec").exists());
    for f in ["metrics.csv", "summary.txt", "report.json", "queries_none.csv", "queries_range.csv", "status.json"] {
        assert!(out_dir.join("audit").join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(out_dir.join("audit/summary.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), summary);
    assert!(summary.contains("w/o") && summary.contains("borda") && summary.contains("range"));

    let report = multikge(&["report", "--spec", &spec], Some(&out_dir));
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&report.stdout), summary);

    let corr = multikge(&["correlate", "--spec", &spec], Some(&out_dir));
    assert_eq!(corr.status.code(), Some(0), "{}", String::from_utf8_lossy(&corr.stderr));
    assert!(out_dir.join("correlate/correlations.csv").exists());
}

#[test]
fn train_writes_checkpoint_and_hits() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out = multikge(&["--threads", "1", "train", "--spec", &spec], None);
    assert_eq!(out.status.code(), Some(0));
    let root = dir.path().join("from-spec/train");
    assert!(root.join("checkpoint.json").exists());
    let hits = std::fs::read_to_string(root.join("hits.csv")).unwrap();
    assert!(hits.starts_with("split,setting,k,hits\n"));
    assert_eq!(hits.lines().count(), 5);
    let losses = std::fs::read_to_string(root.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 31);
}

#[test]
fn aggregate_ranks_example_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.csv");
    std::fs::write(&profiles, PROFILES).unwrap();
    let p = profiles.to_str().unwrap();

    let out = multikge(&["aggregate", "--profiles", p, "--rule", "borda"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "query_id,position,entity_id,total,indifferent_with_next");
    let entities: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!(entities, ["1", "2", "3", "0"]);
    assert!(rows[1].contains(",8,") || rows[1].contains(",8.0,"), "{}", rows[1]);

    let majority_file = dir.path().join("majority.csv");
    let out = multikge(
        &["aggregate", "--profiles", p, "--rule", "majority", "--output", majority_file.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let majority = std::fs::read_to_string(&majority_file).unwrap();
    let last_two: Vec<&str> = majority.lines().skip(3).collect();
    assert_eq!(last_two.len(), 2);
    assert!(last_two[0].ends_with(",1"), "{majority}");
    assert!(last_two[1].ends_with(",0"), "{majority}");
}

#[test]
fn aggregate_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("bad.csv");
    std::fs::write(&profiles, "query_id,voter_id,entity_id,raw_score,position\nq1,m1,x,1,1\n").unwrap();
    let out = multikge(&["aggregate", "--profiles", profiles.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    let out = multikge(&["aggregate", "--profiles", "/nonexistent.csv"], None);
    assert_eq!(out.status.code(), Some(1));
}
