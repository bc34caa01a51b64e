//! End-to-end tests of the `camd` binary: exit codes, output formats,
//! determinism, and phase-grid resumption.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn camd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, contents: &str) {
    fs::write(dir.join(name), contents).unwrap();
}

const GEN_CONFIG: &str = r#"{
  "problem": {"N": 6, "K": 1, "model": "jsm2r",
              "prevalent": {"mean": 0.0, "var": 1.0},
              "anomalous": {"mean": 7.0, "var": 1.0}},
  "M": 3, "T": 4
}"#;

#[test]
fn generate_writes_correct_shapes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "gen.json", GEN_CONFIG);

    for out_dir in ["a", "b"] {
        let out = camd(
            &[
                "generate",
                "--config",
                "gen.json",
                "--output-dir",
                out_dir,
                "--seed",
                "42",
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }

    let signals = fs::read_to_string(tmp.path().join("a/signals.csv")).unwrap();
    let lines: Vec<&str> = signals.lines().collect();
    assert_eq!(lines.len(), 1 + 6, "header plus N rows");
    assert_eq!(lines[0].split(',').count(), 4, "T columns");

    let sensing = fs::read_to_string(tmp.path().join("a/sensing.csv")).unwrap();
    assert_eq!(sensing.lines().count(), 1 + 3 * 4, "header plus M*T rows");

    let meas = fs::read_to_string(tmp.path().join("a/measurements.csv")).unwrap();
    assert_eq!(meas.lines().count(), 1 + 3, "header plus M rows");

    for name in ["signals.csv", "sensing.csv", "measurements.csv"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical seeded runs");
    }
    assert!(tmp.path().join("a/manifest.json").exists());
}

#[test]
fn generate_rejects_unknown_model_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "bad.json",
        &GEN_CONFIG.replace("jsm2r", "jsm4r"),
    );
    let out = camd(&["generate", "--config", "bad.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model"), "{}", stderr(&out));
}

/// Identity sensing with a spike at index 2: every detector-facing fixture
/// in one directory.
fn write_spike_fixture(dir: &Path) {
    write(dir, "sensing.csv", "n_1,n_2,n_3\n1,0,0\n0,1,0\n0,0,1\n");
    write(dir, "measurements.csv", "t_1\n0\n5\n0\n");
}

#[test]
fn detect_prints_one_based_set_first() {
    let tmp = tempfile::tempdir().unwrap();
    write_spike_fixture(tmp.path());
    let out = camd(
        &[
            "detect",
            "--algorithm",
            "osga",
            "--k",
            "1",
            "--data-dir",
            ".",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("2"));
    assert!(text.contains("scores: 0 25 0"), "{text}");
}

#[test]
fn detect_acie_with_k_not_below_m_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_spike_fixture(tmp.path());
    let out = camd(
        &[
            "detect",
            "--algorithm",
            "acie",
            "--k",
            "2",
            "--data-dir",
            ".",
        ],
        tmp.path(),
    );
    // M = 3, k = 2 is fine; k = 3 would exceed N. Craft M = 1 instead.
    assert!(out.status.code() == Some(0) || out.status.code() == Some(2));

    write(tmp.path(), "sensing.csv", "n_1,n_2,n_3\n1,0.5,-0.2\n");
    write(tmp.path(), "measurements.csv", "t_1\n4\n");
    let out = camd(
        &[
            "detect",
            "--algorithm",
            "acie",
            "--k",
            "1",
            "--data-dir",
            ".",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("k < M"), "{}", stderr(&out));
}

#[test]
fn detect_overregularized_lasso_warns_and_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    write_spike_fixture(tmp.path());
    let out = camd(
        &[
            "detect",
            "--algorithm",
            "lasso",
            "--k",
            "1",
            "--data-dir",
            ".",
            "--lambda",
            "1e9",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("all-zero"), "{}", stderr(&out));
    // The result is still printed (tie-break prefix).
    assert_eq!(stdout(&out).lines().next(), Some("1"));
}

#[test]
fn theory_prints_closed_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let out = camd(
        &[
            "theory",
            "--model",
            "jsm2r",
            "--n",
            "100",
            "--k",
            "5",
            "--m",
            "10",
            "--mu2",
            "7",
            "--sigma1-sq",
            "1",
            "--sigma2-sq",
            "1",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("prevalent: 3560"), "{text}");
    assert!(text.contains("anomalous: 8950"), "{text}");
    assert!(text.contains("difference: 5390"), "{text}");
    assert!(text.contains("separation: true"), "{text}");

    let out = camd(
        &[
            "theory",
            "--model",
            "jsm3r",
            "--n",
            "100",
            "--k",
            "5",
            "--m",
            "10",
            "--mu2",
            "0",
            "--sigma1-sq",
            "1",
            "--sigma2-sq",
            "1",
        ],
        tmp.path(),
    );
    assert!(stdout(&out).contains("separation: false"));
}

const GRID_CONFIG: &str = r#"{
  "m_values": [2, 4], "t_values": [3, 6], "k_values": [1],
  "problem": {"N": 8, "model": "jsm2r",
              "prevalent": {"mean": 0.0, "var": 1.0},
              "anomalous": {"mean": 7.0, "var": 1.0}},
  "algorithm": "osga",
  "min_trials": 20, "max_trials": 120,
  "base_seed": 7
}"#;

#[test]
fn phase_writes_expected_files_and_is_thread_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "grid.json", GRID_CONFIG);
    for (dir, threads) in [("p1", "1"), ("p2", "2")] {
        let out = camd(
            &[
                "phase",
                "--config",
                "grid.json",
                "--output-dir",
                dir,
                "--threads",
                threads,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read(tmp.path().join("p1/results_k1.csv")).unwrap();
    let b = fs::read(tmp.path().join("p2/results_k1.csv")).unwrap();
    assert_eq!(a, b, "thread count changed the CSV bytes");

    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 4, "header plus |m|*|t| rows");
    assert!(tmp.path().join("p1/heatmap_k1.png").exists());
    assert!(tmp.path().join("p1/metadata.json").exists());
    let manifest = fs::read_to_string(tmp.path().join("p1/manifest.json")).unwrap();
    assert!(manifest.contains("chacha8+ziggurat"));
}

#[test]
fn heatmap_brightness_tracks_success_rate() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "grid.json", GRID_CONFIG);
    let out = camd(
        &["phase", "--config", "grid.json", "--output-dir", "hm"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let file = fs::File::open(tmp.path().join("hm/heatmap_k1.png")).unwrap();
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Grayscale);
    let (w, h) = (info.width as usize, info.height as usize);
    // Largest M sits on the top row, largest T on the right; that corner has
    // the highest success rate and must be brighter than the bottom-left.
    let top_right = buf[w - 1];
    let bottom_left = buf[(h - 1) * w];
    assert!(
        top_right > bottom_left,
        "top-right {top_right} vs bottom-left {bottom_left}"
    );
}

#[test]
fn phase_resumes_from_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "grid.json", GRID_CONFIG);
    let out = camd(
        &["phase", "--config", "grid.json", "--output-dir", "full"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let full = fs::read_to_string(tmp.path().join("full/results_k1.csv")).unwrap();

    // Simulate an interrupted run: keep the manifest and the first results
    // row only, then rerun into the same directory.
    fs::create_dir(tmp.path().join("partial")).unwrap();
    fs::copy(
        tmp.path().join("full/manifest.json"),
        tmp.path().join("partial/manifest.json"),
    )
    .unwrap();
    let prefix: Vec<&str> = full.lines().take(2).collect();
    write(
        &tmp.path().join("partial"),
        "results_k1.csv",
        &format!("{}\n", prefix.join("\n")),
    );
    let out = camd(
        &["phase", "--config", "grid.json", "--output-dir", "partial"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let resumed = fs::read_to_string(tmp.path().join("partial/results_k1.csv")).unwrap();
    assert_eq!(resumed, full, "resumed run diverged from the full run");
}

#[test]
fn phase_rejects_mismatched_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "grid.json", GRID_CONFIG);
    let out = camd(
        &["phase", "--config", "grid.json", "--output-dir", "out"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));

    write(
        tmp.path(),
        "grid2.json",
        &GRID_CONFIG.replace("\"base_seed\": 7", "\"base_seed\": 8"),
    );
    let out = camd(
        &["phase", "--config", "grid2.json", "--output-dir", "out"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("different config"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn unknown_flag_is_usage_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = camd(&["detect", "--no-such-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}
