use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nfseg(args);
    assert!(
        out.status.success(),
        "nfseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = nfseg(args);
    assert!(!out.status.success(), "nfseg {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The shipped one-object scene at a lower event rate.
fn light_scene(dir: &TempDir) -> PathBuf {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/one_object.toml");
    let text = fs::read_to_string(shipped).unwrap();
    let path = dir.path().join("scene.toml");
    fs::write(&path, text.replace("event_rate = 200.0", "event_rate = 60.0")).unwrap();
    path
}

fn simulate(dir: &TempDir, name: &str, steps: usize, seed: u64) -> PathBuf {
    let out = dir.path().join(name);
    let scene = light_scene(dir);
    ok(&["simulate", s(&scene), "--steps", &steps.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    out
}

#[test]
fn simulate_run_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let rec = simulate(&dir, "rec.nfseg", 4, 1);

    let summary = ok(&["inspect", s(&rec)]);
    assert!(summary.contains("sensor: 320x240"), "{summary}");
    assert!(summary.contains("slices: 4"), "{summary}");
    assert!(summary.contains("labels: yes"), "{summary}");

    let outputs = dir.path().join("run.json");
    ok(&["run", s(&rec), "--out", s(&outputs)]);

    let report = dir.path().join("report.json");
    let text = ok(&["eval", s(&outputs), s(&rec), "--out", s(&report)]);
    let line = text.lines().find(|l| l.starts_with("mean IoU: ")).expect("mean IoU line");
    let value = line.trim_start_matches("mean IoU: ");
    assert_eq!(value.split('.').nth(1).map(str::len), Some(4), "{line}");
    assert!(value.parse::<f64>().unwrap() > 0.5, "{line}");

    let csv = ok(&["eval", s(&outputs), s(&rec), "--format", "csv"]);
    assert!(csv.starts_with("frame,iou,"));
    assert_eq!(csv.lines().count(), 5);

    let plots = dir.path().join("plots");
    ok(&["plot", s(&report), "--out", s(&plots), "--recording", s(&rec), "--outputs", s(&outputs)]);
    for name in ["segmentation_0000.png", "segmentation_0003.png", "velocity_x.png", "object_1_dx.png"] {
        assert!(plots.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir, "a.nfseg", 2, 7);
    let b = simulate(&dir, "b.nfseg", 2, 7);
    let c = simulate(&dir, "c.nfseg", 2, 8);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let (ra, rb) = (dir.path().join("ra.json"), dir.path().join("rb.json"));
    ok(&["run", s(&a), "--out", s(&ra)]);
    ok(&["run", s(&b), "--out", s(&rb)]);
    assert_eq!(fs::read(&ra).unwrap(), fs::read(&rb).unwrap());
    assert_eq!(
        ok(&["eval", s(&ra), s(&a)]),
        ok(&["eval", s(&rb), s(&b)])
    );
}

#[test]
fn run_honours_config_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let rec = simulate(&dir, "rec.nfseg", 1, 2);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[clustering]\nk = 12\n").unwrap();
    let out = dir.path().join("run.json");
    ok(&["run", s(&rec), "--config", s(&cfg), "--seed", "5", "--out", s(&out)]);
    let json = fs::read_to_string(&out).unwrap();
    assert!(json.contains("\"k\": 12"));
    assert!(json.contains("\"seed\": 5"));

    fs::write(&cfg, "[clustering]\nclusters = 12\n").unwrap();
    let err = fails(&["run", s(&rec), "--config", s(&cfg), "--out", s(&out)]);
    assert!(err.contains("cfg.toml") && err.contains("clusters"), "{err}");
}

#[test]
fn eval_rejects_outputs_of_another_recording() {
    let dir = tempfile::tempdir().unwrap();
    let short = simulate(&dir, "short.nfseg", 1, 1);
    let long = simulate(&dir, "long.nfseg", 2, 1);
    let outputs = dir.path().join("run.json");
    ok(&["run", s(&short), "--out", s(&outputs)]);
    let err = fails(&["eval", s(&outputs), s(&long)]);
    assert!(err.contains("run steps") && err.contains("recording slices"), "{err}");
}

#[test]
fn plot_refuses_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("empty.json");
    fs::write(
        &report,
        r#"{"frames": [], "mean_iou": null, "velocity_rmse": null, "object_motion": [], "id_switches": 0, "failed_steps": 0}"#,
    )
    .unwrap();
    let err = fails(&["plot", s(&report), "--out", s(&dir.path().join("plots"))]);
    assert!(err.contains("no frames"), "{err}");
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.nfseg");
    let err = fails(&["inspect", s(&missing)]);
    assert!(err.contains("missing.nfseg"), "{err}");

    let junk = dir.path().join("junk.nfseg");
    fs::write(&junk, b"not a recording").unwrap();
    let err = fails(&["inspect", s(&junk)]);
    assert!(err.contains("malformed recording"), "{err}");

    let scene = dir.path().join("bad.toml");
    fs::write(&scene, "width = 320\nwobble = 1\n").unwrap();
    fails(&["simulate", s(&scene), "--out", s(&dir.path().join("x.nfseg"))]);

    // --recording needs --outputs
    fails(&["plot", s(&scene), "--out", s(dir.path()), "--recording", s(&junk)]);
}
