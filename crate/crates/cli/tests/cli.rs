use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CATALOG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/catalog.csv");
const GROUPS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/placement_groups.csv");

/// Four synthetic days, two held out; a transformer small enough for a test.
const TINY: &[&str] = &[
    "synth_days=4",
    "test_ticks=96",
    "window_len=48",
    "periods=288,48",
    "hw_period=288",
    "d_model=16",
    "heads=2",
    "encoder_layers=1",
    "decoder_layers=1",
    "train_steps=15",
    "warmup_steps=10",
    "batch_size=4",
    "dropout=0.1",
];

fn autoscale(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_autoscale"));
    cmd.args(args).arg("--out").arg(out).args(["--set", &format!("catalog={CATALOG}")]);
    for kv in TINY.iter().chain(extra) {
        cmd.args(["--set", kv]);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let o = autoscale(out, args, extra);
    assert!(
        o.status.success(),
        "autoscale {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn report_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in report:\n{text}"))
        .to_string()
}

#[test]
fn static_simulation_has_equal_mse_and_pmse() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"], &[]);
    ok(dir.path(), &["simulate", "--policy", "static"], &[]);
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(report_value(&report, "policy"), "static");
    assert_eq!(report_value(&report, "mse"), report_value(&report, "pmse"));
    assert_eq!(report_value(&report, "violation_ticks"), "0");
    let per_tick = fs::read_to_string(dir.path().join("per_tick.csv")).unwrap();
    // 96 ticks x 15 catalog buckets plus header
    assert_eq!(per_tick.lines().count(), 1 + 96 * 15);
}

#[test]
fn ingest_reproduces_generated_series() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"], &[]);
    let trace = dir.path().join("trace.csv");
    let again = dir.path().join("again.txt");
    ok(
        dir.path(),
        &["ingest"],
        &[&format!("trace={}", trace.display()), &format!("series={}", again.display())],
    );
    assert_eq!(
        fs::read(dir.path().join("series.txt")).unwrap(),
        fs::read(&again).unwrap()
    );
}

#[test]
fn prediction_below_usage_falls_back_to_on_demand() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"], &[]);
    ok(dir.path(), &["train"], &["predictor=static"]);
    let current = vec!["1000"; 15].join(",");
    let o = ok(dir.path(), &["predict", "--current", &current], &[&format!("groups={GROUPS}")]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("on-demand fallback"));
    let plan = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    let deltas: Vec<&str> = plan
        .lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(deltas, vec!["0"; 15]);
}

#[test]
fn prediction_above_usage_requests_placeholders() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"], &[]);
    ok(dir.path(), &["train"], &["predictor=static"]);
    let o = ok(dir.path(), &["predict", "--current", &vec!["0"; 15].join(",")], &[]);
    assert!(!String::from_utf8_lossy(&o.stderr).contains("on-demand fallback"));
    let plan = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    assert!(plan.contains("group,bucket,size"));
}

#[test]
fn training_and_simulation_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["generate", "--seed", "3"], &[]);
        ok(d, &["train", "--seed", "3"], &[]);
        ok(d, &["simulate", "--seed", "3", "--policy", "predictive"], &[]);
    }
    for f in ["series.txt", "model.ckpt", "train_log.csv", "report.txt", "per_tick.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn compare_lists_every_model() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"], &[]);
    ok(
        dir.path(),
        &["compare", "--models", "static,holt-winters,arima,on-demand,ladder,oracle"],
        &[],
    );
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["static", "holt-winters", "arima", "on-demand", "ladder", "oracle"]);
    assert!(!csv.contains("-0"), "negative zero in {csv}");
}

#[test]
fn attention_export_writes_encoder_weights() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"], &[]);
    ok(dir.path(), &["train"], &[]);
    ok(dir.path(), &["export-attention"], &[]);
    let csv = fs::read_to_string(dir.path().join("attention.csv")).unwrap();
    assert!(csv.starts_with("layer,head,query_pos,key_pos,weight\n"));
    // 1 layer x 2 heads x 48 x 48
    assert_eq!(csv.lines().count(), 1 + 2 * 48 * 48);
}

#[test]
fn unknown_configuration_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = autoscale(dir.path(), &["simulate"], &["learning_rate=0.1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "seed = 1\nwarmup = 10\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_autoscale"))
        .args(["config", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("warmup") && err.contains("line 2"), "{err}");
}

#[test]
fn config_file_values_reach_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# tiny run\nwindow_len = 24\nseed = 5\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_autoscale"))
        .args(["config", "--seed", "6", "--set", "d_model=8", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("window_len = 24\n"));
    assert!(text.contains("seed = 6\n"));
    assert!(text.contains("d_model = 8\n"));
}

#[test]
fn missing_inputs_give_readable_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = autoscale(dir.path(), &["simulate"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("series"));
    let o = autoscale(dir.path(), &["ingest"], &[]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trace"));
}
