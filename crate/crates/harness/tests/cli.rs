use std::path::Path;
use std::process::{Command, Output};

use pupiltrack_harness::dataset::{load_labels, DatasetManifest};
use pupiltrack_harness::eval::load_results;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pupiltrack")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = "frames = 30\nnoise_sigma = 2.0\n\n[eyelid]\nenabled = false\n";

#[test]
fn synth_detect_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    let data = dir.path().join("data");
    ok(&["synth", s(&spec), "--seed", "4", "--out", s(&data), "--trials", "2"]);

    let manifest_path = data.join("manifest.json");
    let m = DatasetManifest::load(&manifest_path).unwrap();
    assert_eq!(m.trials.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), ["seed4", "seed5"]);
    assert_eq!(m.frame_paths(&m.trials[0]).unwrap().len(), 30);

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let stdout = ok(&[
            "detect",
            s(&manifest_path),
            "--zero-timing",
            "--dump-state",
            "--dump-fits",
            "--results-dir",
            s(out),
        ]);
        assert!(stdout.contains("seed4: "), "{stdout}");
    }
    for id in ["seed4", "seed5"] {
        let a = std::fs::read(out_a.join(format!("{id}.jsonl"))).unwrap();
        assert_eq!(a, std::fs::read(out_b.join(format!("{id}.jsonl"))).unwrap());
        assert!(out_a.join(format!("{id}.state.jsonl")).is_file());
        assert!(out_a.join(format!("{id}.fits.jsonl")).is_file());
    }

    let results = out_a.join("seed4.jsonl");
    let records = load_results(&results).unwrap();
    assert_eq!(records.len(), 30);
    let line: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&results).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(line.as_object().unwrap().len(), 10);

    let labels = m.labels_path(&m.trials[0]);
    let timing = dir.path().join("timing.csv");
    let csv = ok(&["eval", s(&results), s(&labels), "--thresholds", "0:4:1", "--timing", s(&timing)]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "threshold_px,detection_rate,mean_error_px");
    assert_eq!(rows.len(), 6);
    let rates: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    assert!(rates[4] > 0.5, "{csv}");
    assert!(std::fs::read_to_string(&timing).unwrap().starts_with("bin_start_ms,frames\n"));

    // Labels written by the synthesizer are accepted unchanged by eval.
    assert_eq!(load_labels(&labels).unwrap().len(), 30);
}

#[test]
fn eval_refuses_misaligned_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.jsonl");
    std::fs::write(
        &results,
        "{\"frame\":0,\"detected\":true,\"cx\":1.0,\"cy\":1.0,\"circumference\":100.0,\"aspect_ratio\":1.0,\
         \"angle_deg\":0.0,\"c_pos\":0.0,\"c_app\":0.0,\"time_us\":5}\n",
    )
    .unwrap();
    let labels = dir.path().join("l.json");
    std::fs::write(&labels, "[{\"frame\":1,\"cx\":1.0,\"cy\":1.0,\"a\":5.0,\"b\":4.0,\"angle\":0.0}]").unwrap();
    let out = cli(&["eval", s(&results), s(&labels)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame 1"));
}

#[test]
fn bad_overrides_and_specs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "frames = 5\n[eyelid]\nenabled = false\n").unwrap();
    let data = dir.path().join("data");
    ok(&["synth", s(&spec), "--out", s(&data)]);
    let manifest = data.join("manifest.json");

    let out = cli(&["detect", s(&manifest), "--set", "estimator.no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = cli(&["calibrate-classifier", s(&manifest), "--out", s(&dir.path().join("cal.txt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 1000"));

    std::fs::write(&spec, "circumference = [20.0, 30.0]\n").unwrap();
    let out = cli(&["synth", s(&spec), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
}
