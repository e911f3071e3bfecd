//! End-to-end checks of the `ose` binary: exit codes, report determinism,
//! sidecar layout, and flag/config interplay. Every invocation runs with the
//! working directory inside a fresh temp dir and relative `--out` paths so
//! the echoed configs are byte-comparable across runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ose")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("the binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Report text with the one timestamp line removed; everything else is
/// expected to be reproducible byte for byte.
fn strip_timestamp(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.contains("generated_at_epoch_s"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

const TWO_POINT_CSV: &str = "1,1\n-1,0\n";

/// One weight in total: h is pinned to 1 and the lone dense layer has no
/// bias, so the network computes `w * x`.
const ONE_WEIGHT_CONFIG: &str = r#"{
  "template": {
    "input_dim": 1,
    "variables": [{ "name": "h", "role": "dimension", "domain": [1] }],
    "layers": [{ "kind": "dense", "input": "p", "output": "h", "bias": false }]
  },
  "dataset": "two_point.csv",
  "thetas": [{ "eta": 0.5 }],
  "epsilon": 1,
  "steps": 40,
  "master_seed": 3,
  "jobs": 1,
  "oracle": { "grid": [-1.0, 0.0, 1.0], "k_e": 0.0 }
}"#;

#[test]
fn gen_data_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let gen = |name: &str, seed: &str| {
        let out = run_in(
            dir.path(),
            &[
                "gen-data", "--kind", "xor", "--rows", "30", "--features", "3", "--noise", "0.2",
                "--seed", seed, "--out", name,
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(dir.path().join(name)).unwrap()
    };
    let a = gen("a.csv", "5");
    let b = gen("b.csv", "5");
    let c = gen("c.csv", "6");
    assert_eq!(a, b, "same seed must give identical bytes");
    assert_ne!(a, c, "a different seed must change the data");
}

#[test]
fn gen_data_rejects_xor_with_one_feature() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &["gen-data", "--kind", "xor", "--rows", "8", "--features", "1", "--out", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("xor"), "{}", stderr(&out));
}

#[test]
fn validate_accepts_the_shipped_example_config() {
    let dir = TempDir::new().unwrap();
    let config = repo_config("example1.json");
    let out = run_in(dir.path(), &["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("\"well_posed\": true"), "{text}");
    assert!(text.contains("\"matches_input_dim\": true"), "{text}");
}

#[test]
fn validate_accepts_the_shipped_chain_config() {
    let dir = TempDir::new().unwrap();
    let config = repo_config("chain.json");
    let out = run_in(dir.path(), &["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn validate_flags_a_feature_count_mismatch() {
    let dir = TempDir::new().unwrap();
    // The one-weight template wants 1 feature; hand it 2.
    write(dir.path(), "two_point.csv", "1,0.5,1\n-1,0.5,0\n");
    write(dir.path(), "run.json", ONE_WEIGHT_CONFIG);
    let out = run_in(dir.path(), &["validate", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"matches_input_dim\": false"));
}

#[test]
fn a_missing_dataset_file_is_a_clean_input_error() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.json", ONE_WEIGHT_CONFIG);
    let out = run_in(dir.path(), &["validate", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("two_point.csv"),
        "the error should name the missing file: {}",
        stderr(&out)
    );
}

fn setup_extract_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::copy(repo_config("example1.json"), dir.path().join("example1.json")).unwrap();
    fs::copy(repo_config("example1.csv"), dir.path().join("example1.csv")).unwrap();
    dir
}

struct ExtractRun {
    report: String,
    weights: Vec<u8>,
    manifest: Vec<u8>,
}

fn extract_with(dir: &Path, extra: &[&str]) -> ExtractRun {
    let mut args = vec!["extract", "--config", "example1.json", "--out", "run.json"];
    args.extend_from_slice(extra);
    let out = run_in(dir, &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    ExtractRun {
        report: fs::read_to_string(dir.join("run.json")).unwrap(),
        weights: fs::read(dir.join("run.weights.bin")).unwrap(),
        manifest: fs::read(dir.join("run.weights.json")).unwrap(),
    }
}

#[test]
fn extract_reports_are_reproducible() {
    let first = extract_with(setup_extract_dir().path(), &[]);
    let second = extract_with(setup_extract_dir().path(), &[]);
    assert_eq!(
        strip_timestamp(&first.report),
        strip_timestamp(&second.report),
        "reports must match once the timestamp line is dropped"
    );
    assert_eq!(first.weights, second.weights, "weight sidecars must be byte-identical");
    assert_eq!(first.manifest, second.manifest, "shape manifests must be byte-identical");
}

#[test]
fn worker_count_does_not_change_the_answer() {
    let one = extract_with(setup_extract_dir().path(), &["--jobs", "1"]);
    let four = extract_with(setup_extract_dir().path(), &["--jobs", "4"]);
    // The echoed config differs in `jobs`, so compare the result payloads.
    let parse = |run: &ExtractRun| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&run.report).unwrap()["report"].clone()
    };
    assert_eq!(parse(&one), parse(&four));
    assert_eq!(one.weights, four.weights);
    assert_eq!(one.manifest, four.manifest);
}

#[test]
fn flag_overrides_are_echoed_in_the_report() {
    let dir = setup_extract_dir();
    let run = extract_with(dir.path(), &["--epsilon", "2", "--seed", "99"]);
    let doc: serde_json::Value = serde_json::from_str(&run.report).unwrap();
    assert_eq!(doc["config"]["epsilon"], 2);
    assert_eq!(doc["config"]["master_seed"], 99);
    assert_eq!(doc["report"]["result"]["epsilon"], 2);
}

#[test]
fn a_family_that_cannot_train_exits_three() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "two_point.csv", TWO_POINT_CSV);
    // An unbounded linear output plus a colossal learning rate: every
    // candidate diverges, so there is nothing to return.
    write(
        dir.path(),
        "run.json",
        &ONE_WEIGHT_CONFIG.replace("\"eta\": 0.5", "\"eta\": 1e308"),
    );
    let out = run_in(dir.path(), &["extract", "--config", "run.json", "--out", "run.json.out"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("failed to train"),
        "the error should say why: {}",
        stderr(&out)
    );
}

#[test]
fn metrics_counts_the_attention_example() {
    let dir = TempDir::new().unwrap();
    let config = repo_config("example1.json");
    let out = run_in(dir.path(), &["metrics", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let counts = doc["report"]["counts"].as_array().unwrap();
    assert_eq!(counts.len(), 4);
    assert_eq!(counts[0]["params"], 27);
    assert_eq!(counts[0]["inference"], 71);
    assert_eq!(doc["report"]["max_point"]["p_t"], 53);
    assert_eq!(doc["report"]["max_point"]["i_t"], 205);
}

#[test]
fn shortest_path_picks_the_cheapest_assignment() {
    let dir = TempDir::new().unwrap();
    let config = repo_config("example1.json");
    let out = run_in(
        dir.path(),
        &["oracle", "shortest-path", "--config", config.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // Both H=2 assignments cost 27 + 71 = 98; the first in space order wins.
    assert_eq!(doc["report"]["cost"], 98);
    assert_eq!(doc["report"]["assignment"]["H"], 2);
    assert_eq!(doc["report"]["assignment"]["A"], 1);
}

#[test]
fn decision_oracle_finds_the_one_weight_witness() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "two_point.csv", TWO_POINT_CSV);
    write(dir.path(), "run.json", ONE_WEIGHT_CONFIG);
    let out = run_in(dir.path(), &["oracle", "dec", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["report"]["answer"]["answer"], "yes");
    let witness = &doc["report"]["answer"]["witness"];
    assert_eq!(witness["e_errors"], 0);
    assert_eq!(witness["e_total"], 2);
    assert_eq!(witness["p"], 1);
}

#[test]
fn reduction_demands_a_singleton_family() {
    let dir = TempDir::new().unwrap();
    fs::copy(repo_config("example1.json"), dir.path().join("example1.json")).unwrap();
    fs::copy(repo_config("example1.csv"), dir.path().join("example1.csv")).unwrap();
    let out = run_in(dir.path(), &["oracle", "reduce", "--config", "example1.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("exactly one architecture"), "{}", stderr(&out));
}

#[test]
fn reduction_answers_on_a_singleton_family() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "two_point.csv", TWO_POINT_CSV);
    write(dir.path(), "run.json", ONE_WEIGHT_CONFIG);
    let out = run_in(dir.path(), &["oracle", "reduce", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["report"]["answer"]["answer"], "yes");
    assert_eq!(doc["report"]["instance"]["k_p"], "unbounded");
    assert_eq!(doc["report"]["instance"]["k_i"], "unbounded");
}

#[test]
fn abnc_check_passes_on_the_shipped_chain_family() {
    let dir = TempDir::new().unwrap();
    let config = repo_config("chain.json");
    let out = run_in(dir.path(), &["abnc-check", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["report"]["abnc"]["weak_holds"]["holds"], true);
    assert!(doc["report"]["abnc"]["strong_estimate"]["l_hat"].is_number());
}

#[test]
fn an_unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "two_point.csv", TWO_POINT_CSV);
    write(
        dir.path(),
        "run.json",
        &ONE_WEIGHT_CONFIG.replace("\"epsilon\": 1", "\"epsilon\": 1, \"typo_field\": true"),
    );
    let out = run_in(dir.path(), &["validate", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("typo_field"), "{}", stderr(&out));
}
