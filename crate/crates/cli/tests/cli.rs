use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matchbench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn matchbench")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(root: &Path, n: u64) -> PathBuf {
    let d = root.join("data");
    let o = run(&["synth", "--out", s(&d), "--sequences", &n.to_string(), "--seed", "3", "--width", "160", "--height", "128", "--warp", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    d
}

fn extract(data: &Path, out: &Path) -> Output {
    run(&["extract", "--dataset", s(data), "--no-exclusions", "--out", s(out)])
}

#[test]
fn extract_writes_one_file_per_image_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let out = tmp.path().join("feats");
    assert!(extract(&data, &out).status.success());
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    assert_eq!(names[0], "v_synthetic_3_1.feat");
    let first = fs::read(out.join(&names[2])).unwrap();
    assert!(extract(&data, &out).status.success());
    assert_eq!(fs::read(out.join(&names[2])).unwrap(), first);
}

#[test]
fn unreadable_image_exits_2_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let bad = data.join("v_synthetic_3").join("3.png");
    fs::write(&bad, b"not an image").unwrap();
    let o = extract(&data, &tmp.path().join("feats"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3.png"));
}

#[test]
fn sweep_over_feature_dir_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 2);
    let feats = tmp.path().join("feats");
    assert!(extract(&data, &feats).status.success());
    let out = tmp.path().join("out");
    let args = ["sweep", "--dataset", s(&data), "--no-exclusions", "--features", s(&feats), "--method", "ratio", "--sweep", "0.1:1.0:0.1", "--output", s(&out)];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sweep.csv", "sweep.json", "sweep.txt", "sweep_plot_sweep.csv", "sweep_plot_best.csv", "config.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 10);
    let cfg: serde_json::Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["method"], "ratio");
    assert_eq!(cfg["sweep"], "0.1:1.0:0.1");
    assert_eq!(cfg["max_iters"], 5000);

    // same inputs, different worker count: identical stdout and JSON
    let out2 = tmp.path().join("out2");
    let mut args2 = args.to_vec();
    args2[11] = s(&out2);
    args2.extend(["--jobs", "1"]);
    let o2 = run(&args2);
    assert!(o2.status.success());
    assert_eq!(o.stdout, o2.stdout);
    assert_eq!(fs::read(out.join("sweep.json")).unwrap(), fs::read(out2.join("sweep.json")).unwrap());
}

#[test]
fn single_value_sweep_equals_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let common = ["--dataset", s(&data), "--no-exclusions", "--builtin"];
    let o = run(&[&["sweep"][..], &common, &["--sweep", "0.5:0.5:0.1", "--output", s(&a)]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[&["evaluate"][..], &common, &["--threshold", "0.5", "--output", s(&b)]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("sweep.json")).unwrap(), fs::read(b.join("sweep.json")).unwrap());
}

#[test]
fn malformed_sweep_spec_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let o = run(&["sweep", "--dataset", s(&data), "--builtin", "--sweep", "1:0:-1", "--output", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_match_file_exits_3_naming_the_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let feats = tmp.path().join("feats");
    assert!(extract(&data, &feats).status.success());
    let m = tmp.path().join("matches");
    fs::create_dir_all(&m).unwrap();
    for k in [2, 3, 5, 6] {
        let o = run(&[
            "match",
            "--a",
            s(&feats.join("v_synthetic_3_1.feat")),
            "--b",
            s(&feats.join(format!("v_synthetic_3_{k}.feat"))),
            "--out",
            s(&m.join(format!("v_synthetic_3_1_{k}.mtch"))),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["evaluate", "--dataset", s(&data), "--no-exclusions", "--matches", s(&m), "--threshold", "0.8", "--output", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("v_synthetic_3_1_4"));
}

#[test]
fn missing_dataset_exits_3_and_source_conflict_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    let o = run(&["evaluate", "--dataset", s(&tmp.path().join("nope")), "--builtin", "--threshold", "0.5", "--output", out]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["evaluate", "--dataset", out, "--builtin", "--features", out, "--threshold", "0.5", "--output", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_merges_with_flags_winning() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let cfg = tmp.path().join("run.json");
    let out = tmp.path().join("out");
    fs::write(
        &cfg,
        serde_json::json!({"dataset": data, "no_exclusions": true, "builtin": true, "seed": 11, "max_iters": 100, "threshold": 0.9, "output": out})
            .to_string(),
    )
    .unwrap();
    let o = run(&["evaluate", "--config", s(&cfg), "--seed", "12"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echoed: serde_json::Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 12);
    assert_eq!(echoed["max_iters"], 100);
    assert_eq!(echoed["threshold"], 0.9);
    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(run(&["evaluate", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn report_and_convert_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1);
    let out = tmp.path().join("out");
    let o = run(&["sweep", "--dataset", s(&data), "--no-exclusions", "--builtin", "--sweep", "0.6:0.8:0.1", "--output", s(&out)]);
    assert!(o.status.success());
    let table = o.stdout;
    let o = run(&["report", "--input", s(&out.join("sweep.csv"))]);
    assert!(o.status.success());
    assert_eq!(o.stdout, table);
    let re = tmp.path().join("re");
    assert!(run(&["report", "--input", s(&out.join("sweep.json")), "--out", s(&re), "--format", "json", "--stem", "sweep"]).status.success());
    assert_eq!(fs::read(re.join("sweep.json")).unwrap(), fs::read(out.join("sweep.json")).unwrap());

    let feats = tmp.path().join("feats");
    assert!(extract(&data, &feats).status.success());
    let bin_path = feats.join("v_synthetic_3_2.feat");
    let json_path = tmp.path().join("f.json");
    let back = tmp.path().join("back.feat");
    assert!(run(&["convert", "--input", s(&bin_path), "--output", s(&json_path)]).status.success());
    assert!(run(&["convert", "--input", s(&json_path), "--output", s(&back)]).status.success());
    assert_eq!(fs::read(&bin_path).unwrap(), fs::read(&back).unwrap());
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["sweep", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--dataset", "--features", "--matches", "--builtin", "--method", "--sweep", "--grid", "--reproj-threshold", "--max-iters",
        "--confidence", "--seed", "--output", "--exclusions", "--no-exclusions", "--jobs", "--config", "--fast-threshold",
        "--pattern-seed",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}
