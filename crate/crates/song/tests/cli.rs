//! Black-box checks of the `song` binary: exit codes, warnings, and the
//! generate -> fit -> replay -> compare pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use song::io;
use song::trace::{SocialGraph, UserId};

fn song(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_song"))
        .args(args)
        .output()
        .expect("spawn song")
}

fn expect_ok(args: &[&str]) -> Output {
    let out = song(args);
    assert!(
        out.status.success(),
        "song {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ring_graph(dir: &Path, users: u64) -> PathBuf {
    let edges: Vec<(UserId, UserId)> = (1..=users)
        .map(|u| (UserId(u % users + 1), UserId(u)))
        .collect();
    let path = dir.join("ring.graph");
    io::save_graph(&SocialGraph::from_edges(edges).unwrap(), &path).unwrap();
    path
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = song(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = song(&["generate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_duration_is_a_usage_error() {
    let out = song(&["generate", "--horizon", "5parsecs"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let out = song(&["analyze", "/nonexistent/path.trace"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("error:"));
}

#[test]
fn replay_without_trace_or_ramp_is_rejected() {
    let out = song(&["replay"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("trace"));
}

#[test]
fn generate_warns_about_the_default_template() {
    let out = expect_ok(&[
        "generate",
        "--horizon",
        "1h",
        "--users",
        "100",
        "--seed",
        "3",
    ]);
    assert!(stderr_of(&out).contains("default"));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("#song-trace v1"));
}

#[test]
fn seeds_change_output_and_out_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.trace");
    let arg = path.display().to_string();
    let piped = expect_ok(&[
        "generate",
        "--horizon",
        "1h",
        "--users",
        "100",
        "--seed",
        "1",
    ]);
    expect_ok(&[
        "generate",
        "--horizon",
        "1h",
        "--users",
        "100",
        "--seed",
        "1",
        "--out",
        &arg,
    ]);
    assert_eq!(piped.stdout, std::fs::read(&path).unwrap());

    let other = expect_ok(&[
        "generate",
        "--horizon",
        "1h",
        "--users",
        "100",
        "--seed",
        "2",
    ]);
    assert_ne!(piped.stdout, other.stdout);
}

#[test]
fn scale_two_roughly_doubles_volume() {
    let base = expect_ok(&[
        "generate",
        "--horizon",
        "6h",
        "--users",
        "500",
        "--seed",
        "4",
    ]);
    let scaled = expect_ok(&[
        "generate",
        "--horizon",
        "6h",
        "--users",
        "500",
        "--seed",
        "4",
        "--scale",
        "2",
    ]);
    let count = |bytes: &[u8]| bytes.iter().filter(|&&b| b == b'\n').count() as f64 - 1.0;
    let ratio = count(&scaled.stdout) / count(&base.stdout);
    assert!(
        (ratio - 2.0).abs() < 0.1,
        "scale 2 gave volume ratio {ratio}"
    );
}

#[test]
fn pipeline_generate_fit_generate_replay_compare() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();

    let trace = p("observed.trace");
    expect_ok(&[
        "generate",
        "--horizon",
        "2d",
        "--users",
        "800",
        "--seed",
        "11",
        "--out",
        &trace,
    ]);

    let model = p("fitted.model");
    let fit = expect_ok(&["fit", &trace, "--seed", "11", "--out", &model]);
    assert!(stderr_of(&fit).contains("kept"));
    let fitted = song::generate::ModelFile::load(&model).unwrap();
    assert_eq!(fitted.users(), 800);

    let synthetic = p("synthetic.trace");
    expect_ok(&[
        "generate",
        "--model",
        &model,
        "--horizon",
        "2d",
        "--seed",
        "12",
        "--out",
        &synthetic,
    ]);

    let graph = ring_graph(dir.path(), 800).display().to_string();
    let fast = p("fast.report");
    let slow = p("slow.report");
    expect_ok(&[
        "replay",
        &synthetic,
        "--graph",
        &graph,
        "--backend-capacity",
        "5000",
        "--out",
        &fast,
    ]);
    expect_ok(&[
        "replay",
        &synthetic,
        "--graph",
        &graph,
        "--backend-capacity",
        "60",
        "--base-latency",
        "2000",
        "--out",
        &slow,
    ]);

    let cmp = expect_ok(&["compare", &fast, &slow]);
    let text = String::from_utf8(cmp.stdout).unwrap();
    assert!(text.starts_with("#song-comparison v1"));
    assert!(text.contains("[p95_latency]"));
}

#[test]
fn analyze_emits_a_characterization_document() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace").display().to_string();
    expect_ok(&[
        "generate",
        "--horizon",
        "12h",
        "--users",
        "300",
        "--seed",
        "21",
        "--out",
        &trace,
    ]);
    let out = expect_ok(&["analyze", &trace, "--seed", "21", "--top-k", "10"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("#song-analysis v1"));
    assert!(text.contains("[trace]"));
    assert!(text.contains("[activity_lognormal]"));
    assert!(text.contains("[self_similarity]"));
}

#[test]
fn ramp_mode_reports_per_step_rates() {
    let out = expect_ok(&[
        "replay",
        "--ramp",
        "300,0,300,40",
        "--backend-capacity",
        "2000",
        "--seed",
        "8",
    ]);
    assert!(stderr_of(&out).contains("default"));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[ramp]"));
    assert_eq!(text.matches("step = ").count(), 2);
}

#[test]
fn timeseries_file_has_the_contractual_columns() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace").display().to_string();
    expect_ok(&[
        "generate",
        "--horizon",
        "1h",
        "--users",
        "100",
        "--seed",
        "5",
        "--out",
        &trace,
    ]);
    let series = dir.path().join("t.series").display().to_string();
    expect_ok(&["replay", &trace, "--timeseries", &series]);
    let text = std::fs::read_to_string(&series).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("#song-timeseries v1"));
    assert_eq!(
        lines.next(),
        Some("bin_start_ms,offered,completed,p50_us,p95_us,p99_us")
    );
    assert!(lines.next().is_some());
}
