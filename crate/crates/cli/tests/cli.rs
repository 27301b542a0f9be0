use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn dalab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dalab")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, command: &str, config: Option<&Value>, extra: &[&str]) -> Output {
    let mut args = vec![command.to_string(), "--out".into(), dir.display().to_string()];
    if let Some(c) = config {
        std::fs::create_dir_all(dir).unwrap();
        let path = dir.join("run_config.json");
        std::fs::write(&path, serde_json::to_string(c).unwrap()).unwrap();
        args.push("--config".into());
        args.push(path.display().to_string());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    dalab(&refs)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn quick_theory() -> Value {
    json!({
        "version": 1,
        "theory": {
            "monte_carlo": {"d_in": 16, "d_ff": 64, "d_out": 32, "n_samples": 2000, "seed": 1, "i_star": 0,
                            "v_std": 1.0, "resample_inputs": false, "workers": 2},
            "fd_points": 20, "fd_step": 1e-5, "fd_rel_tol": 1e-5, "perturbation_scale": 1e-2,
            "recursion_steps": 100, "zero_increment_tokens": 500, "divergence_tokens": 100,
            "good_mapping": {"alpha": 0.3, "support_threshold": 0.05, "k": 4, "width": 64, "margin": 0.3, "samples": 100},
            "seed": 3
        }
    })
}

fn quick_train() -> Value {
    json!({"version": 1, "train": {"steps": 5, "lr": 1.0, "batch_size": 2, "seq_len": 32, "seed": 9}})
}

#[test]
fn every_subcommand_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, Option<Value>); 5] = [
        ("train", Some(quick_train())),
        ("verify-theory", Some(quick_theory())),
        ("sparsify", None),
        ("fig2", None),
        ("ablate", None),
    ];
    for (command, config) in cases {
        let (a, b) = (tmp.path().join(format!("{command}_a")), tmp.path().join(format!("{command}_b")));
        let ra = run_in(&a, command, config.as_ref(), &[]);
        let rb = run_in(&b, command, config.as_ref(), &[]);
        assert_eq!(ra.status.code(), Some(0), "{command}: {}", String::from_utf8_lossy(&ra.stderr));
        assert_eq!(rb.status.code(), Some(0));
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{command} outputs differ");
    }
}

#[test]
fn stamp_adds_a_timestamp() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("stamped");
    assert_eq!(run_in(&dir, "ablate", None, &["--stamp"]).status.code(), Some(0));
    assert!(report(&dir, "ablate_report.json")["generated_at_unix"].as_u64().is_some());
    let plain = tmp.path().join("plain");
    run_in(&plain, "ablate", None, &[]);
    assert!(report(&plain, "ablate_report.json").get("generated_at_unix").is_none());
}

#[test]
fn default_theory_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "verify-theory", None, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "theory_report.json");
    let checks = r["report"]["checks"].as_array().unwrap();
    for name in ["relu_gradient_sign", "swiglu_gradient_sign", "relu_above_swiglu", "recursion_exact"] {
        assert!(checks.iter().any(|c| c["name"] == name && c["pass"] == true), "{name}");
    }
    assert_eq!(r["report"]["monte_carlo"]["relu"]["sign"], "positive");
}

#[test]
fn injected_sign_flip_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "verify-theory", Some(&quick_theory()), &["--inject-sign-flip"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(tmp.path(), "theory_report.json")["report"]["all_pass"], false);
}

#[test]
fn too_few_monte_carlo_samples_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick_theory();
    c["theory"]["monte_carlo"]["n_samples"] = json!(99);
    let out = run_in(tmp.path(), "verify-theory", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_samples"));
}

#[test]
fn missing_corpus_exits_two_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let c = json!({"version": 1, "corpus": {"train": "/nonexistent/corpus.txt"}});
    let out = run_in(&tmp.path().join("o"), "train", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/corpus.txt"));
}

#[test]
fn bad_usage_and_config_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dalab(&["no-such-command"]).status.code(), Some(2));
    let c = json!({"version": 2});
    assert_eq!(run_in(&tmp.path().join("v"), "fig2", Some(&c), &[]).status.code(), Some(2));
    let c = json!({"version": 1, "unknown_key": 1});
    assert_eq!(run_in(&tmp.path().join("u"), "fig2", Some(&c), &[]).status.code(), Some(2));
}

#[test]
fn training_with_zero_steps_writes_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick_train();
    c["train"]["steps"] = json!(0);
    let out = run_in(tmp.path(), "train", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(0));
    let init = dalab::model::ToyTransformer::init(&dalab::model::ModelConfig::default()).unwrap();
    assert_eq!(std::fs::read_to_string(tmp.path().join("checkpoint.json")).unwrap(), init.to_checkpoint().to_json());
    assert_eq!(std::fs::read_to_string(tmp.path().join("train_log.csv")).unwrap(), "step,loss\n");
}

#[test]
fn trained_checkpoint_feeds_the_other_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    assert_eq!(run_in(&train_dir, "train", Some(&quick_train()), &[]).status.code(), Some(0));
    let log = std::fs::read_to_string(train_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let c = json!({"version": 1, "checkpoint": train_dir.join("checkpoint.json")});
    let out = run_in(&tmp.path().join("ablate"), "ablate", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sparsify_matches_golden_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "sparsify", None, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(tmp.path().join("sparsify.csv")).unwrap();
    assert_eq!(table, golden("sparsify.csv"));
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let dense = &rows[0];
    assert_eq!(dense[0], "dense");
    assert_eq!(dense[2], "0.000000");
    assert_eq!(dense[3], dense[4]);
}

#[test]
fn full_width_topk_row_equals_dense_row() {
    let tmp = tempfile::tempdir().unwrap();
    let c = json!({"version": 1, "sparsify": {
        "strategies": [{"kind": "dense"}, {"kind": "rida_token", "k": 256}],
        "eval": {"prompt_len": 32},
        "router": serde_json::to_value(dalab::dasparse::RouterConfig::default()).unwrap()
    }});
    assert_eq!(run_in(tmp.path(), "sparsify", Some(&c), &[]).status.code(), Some(0));
    let table = std::fs::read_to_string(tmp.path().join("sparsify.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][1..], rows[1][1..]);
}

#[test]
fn fig2_passes_on_bundled_assets_and_matches_golden_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "fig2", None, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for cell in ["sentence_parallel", "sentence_sequential", "random_parallel", "random_sequential"] {
        let name = format!("heatmap_{cell}.csv");
        assert!(std::fs::read_to_string(tmp.path().join(&name)).unwrap() == golden(&name), "{name} differs from golden");
    }
}

#[test]
fn fig2_with_swapped_corpora_inverts_concentration_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let assets = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/assets");
    let c = json!({"version": 1, "corpus": {
        "sentence": assets.join("random_words.txt"),
        "random_words": assets.join("sentence.txt")
    }});
    let out = run_in(tmp.path(), "fig2", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(1));
    let o = &report(tmp.path(), "fig2_report.json")["report"]["fig2"]["orderings"];
    assert_eq!(o["random_sequential_more_concentrated"], false);
}

#[test]
fn layer_out_of_range_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_in(tmp.path(), "fig2", None, &["--layer", "2"]).status.code(), Some(2));
    assert_eq!(run_in(tmp.path(), "ablate", None, &["--layer", "7"]).status.code(), Some(2));
}

#[test]
fn two_token_ablation_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("short.txt");
    std::fs::write(&seq, "ab").unwrap();
    let c = json!({"version": 1, "corpus": {"ablation": seq}});
    let out = run_in(&tmp.path().join("o"), "ablate", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn high_threshold_ablation_reports_none() {
    let tmp = tempfile::tempdir().unwrap();
    let c = json!({"version": 1, "inertia": {"q": 0.05, "support_threshold": 0.99, "layer": null, "normalization": "per_token_max"}});
    let out = run_in(tmp.path(), "ablate", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(tmp.path(), "ablate_report.json");
    assert_eq!(r["report"]["ablation"]["status"], "none");
    assert!(r["report"]["ablation"]["removed_position"].is_null());
}

#[test]
fn ablation_identifies_a_heavy_hitter_in_a_short_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq.txt");
    std::fs::write(&seq, "7The old ").unwrap();
    let c = json!({"version": 1, "corpus": {"ablation": seq}});
    let out = run_in(&tmp.path().join("o"), "ablate", Some(&c), &[]);
    assert_eq!(out.status.code(), Some(0));
    let a = &report(&tmp.path().join("o"), "ablate_report.json")["report"]["ablation"];
    assert_eq!(a["status"], "ablated");
    assert_eq!(a["removed_position"], 1);
    assert!(a["persistence_delta"].as_f64().unwrap() < 0.0);
}
