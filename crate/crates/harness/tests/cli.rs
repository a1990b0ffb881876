use std::path::Path;
use std::process::Command;

use spinml_harness::run::RunResults;

const SMALL: &str = r#"{
  "model": {"model": "xysg", "L": 8, "alpha": 3.0, "seed": 0},
  "tree": {"builder": "binary", "spf_per_layer": [16, 4]},
  "ensemble": {"num_realizations": 3, "base_seed": 4},
  "observables": {"correlations": ["x"], "entropy": true}
}"#;

fn spinml(args: &[&str], env: &[(&str, &str)]) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spinml"));
    cmd.args(args).env_remove("SPINML_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("small.run.json");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn numeric_csvs(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn ensemble_run_is_reproducible_and_aggregates_match() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let (code, text) = spinml(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--compare-ed"], &[]);
        assert_eq!(code, 0, "{text}");
    }
    let csv_a = numeric_csvs(&a);
    assert!(csv_a.iter().any(|f| f.0 == "trace_seed6.csv"));
    assert_eq!(csv_a, numeric_csvs(&b));

    let res = RunResults::load(&a).unwrap();
    assert_eq!(res.seeds(), vec![4, 5, 6]);
    let mean = res.realizations.iter().map(|r| r.energy).sum::<f64>() / 3.0;
    assert!((res.aggregates.energy.mean[0] - mean).abs() < 1e-12);
    let prof = &res.aggregates.correlation_profiles[0].1.mean;
    for (k, p) in prof.iter().enumerate() {
        let hand = res
            .realizations
            .iter()
            .map(|r| r.observables.correlations[0].profile.as_ref().unwrap()[k])
            .sum::<f64>()
            / 3.0;
        assert!((p - hand).abs() < 1e-12);
    }
    assert!(res.realizations.iter().all(|r| r.comparison.as_ref().unwrap().delta_e_rel < 1e-12));
    let compare = std::fs::read_to_string(a.join("compare.csv")).unwrap();
    assert_eq!(compare.lines().count(), 4);

    let figs = tmp.path().join("figs");
    let (code, text) = spinml(&["figures", "--from", a.to_str().unwrap(), "--out", figs.to_str().unwrap()], &[]);
    assert_eq!(code, 0, "{text}");
    let entropy = std::fs::read_to_string(figs.join("entropy.csv")).unwrap();
    assert_eq!(entropy.lines().count(), 1 + 7);
    let conv = std::fs::read_to_string(figs.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().next().unwrap(), format!("seed,{}", spinml_core::relax::TRACE_HEADER));
    let energy = std::fs::read_to_string(figs.join("energy_vs_L.csv")).unwrap();
    assert_eq!(energy.lines().count(), 1 + 3);
}

#[test]
fn seed_variable_overrides_the_base_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("\"num_realizations\": 3", "\"num_realizations\": 1"));
    let out = tmp.path().join("o");
    let (code, text) = spinml(&["relax", "--config", &cfg, "--out", out.to_str().unwrap()], &[("SPINML_SEED", "9")]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(RunResults::load(&out).unwrap().seeds(), vec![9]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["unverified"], true);
    assert_eq!(summary["seeds"][0], 9);

    let (code, _) = spinml(&["relax", "--config", &cfg], &[("SPINML_SEED", "nine")]);
    assert_eq!(code, 3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), r#"{"model": {"model": "sr_tfim", "L": 6, "h_x": 1.0}, "tree": {"builder": "binary", "spf_per_layer": []}}"#);
    assert_eq!(spinml(&["relax", "--config", &bad], &[]).0, 3);
    assert_eq!(spinml(&["relax", "--config", "/no/such.run.json"], &[]).0, 3);
    assert_eq!(spinml(&["relax", "--preset", "nope"], &[]).0, 3);

    let starved = write_config(
        tmp.path(),
        r#"{"model": {"model": "sr_tfim", "L": 8, "h_x": 1.0}, "tree": {"builder": "binary", "spf_per_layer": [3, 3]},
            "relax": {"max_steps": 2}}"#,
    );
    let out = tmp.path().join("s");
    let (code, text) = spinml(&["relax", "--config", &starved, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("seeds [0]"), "{text}");
    assert!(out.join("trace_seed0.csv").exists());
}

#[test]
fn tree_validation_and_ed() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("g.tree.json");
    std::fs::write(&good, r#"{"m":1,"children":[{"m":4,"children":[{"site":1},{"site":2}]},{"site":3}]}"#).unwrap();
    let (code, text) = spinml(&["validate-tree", "--tree", good.to_str().unwrap()], &[]);
    assert_eq!(code, 0, "{text}");
    let bad = tmp.path().join("b.tree.json");
    std::fs::write(&bad, r#"{"m":1,"children":[{"m":5,"children":[{"site":1},{"site":2}]},{"site":2}]}"#).unwrap();
    let (code, text) = spinml(&["validate-tree", "--tree", bad.to_str().unwrap()], &[]);
    assert_eq!(code, 3, "{text}");

    // h_x = 0: the all-up product state is exact
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"model": "sr_tfim", "L": 4, "h_x": 0.0, "h_z": 0.01}, "tree": {"builder": "binary", "spf_per_layer": []}}"#,
    );
    let out = tmp.path().join("ed");
    let (code, text) = spinml(&["ed", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code, 0, "{text}");
    assert!(out.join("ed_seed0_level0.edstate").exists());
    let (code, text) = spinml(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code, 0, "{text}");
    let res = RunResults::load(&out).unwrap();
    let c = res.realizations[0].comparison.as_ref().unwrap();
    assert!((c.e_ed + 3.04).abs() < 1e-12 && c.delta_e_rel < 1e-12, "{c:?}");
}
