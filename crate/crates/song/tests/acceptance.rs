//! End-to-end acceptance checks. Each test prints one PASS/FAIL line
//! (run with `--nocapture` to see them all).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use song::characterize;
use song::diurnal::{Component, DiurnalModel, Selection};
use song::generate::{self, ActivityModel, Burst, ModelFile, PopulationShift, ScenarioSpec};
use song::noise::{self, derive_seed, NoiseModel};
use song::replay::{self, BackendConfig, RampSchedule, RampStep, ReplayOptions};
use song::trace::{EventTrace, SocialGraph, TimeRange, UserId};

fn criterion(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n:2} [{}] {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn rel(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

const WEEK_BINS: usize = 2016;
const BIN_MS: u64 = 300_000;
const WEEK_FREQS: [usize; 3] = [7, 14, 21];
const WEEK_AMPS: [f64; 3] = [300.0, 150.0, 75.0];
const WEEK_PHASES: [f64; 3] = [0.4, -0.8, 1.9];
const ACTIVITY_MU: f64 = 2.05;
const ACTIVITY_SIGMA: f64 = 0.9921;
const WEEK_USERS: u64 = 100_000;

/// Mean level chosen so expected weekly volume equals the population's
/// expected per-user volume: N * exp(mu + sigma^2 / 2) / bins.
fn week_mean_level() -> f64 {
    WEEK_USERS as f64 * (ACTIVITY_MU + ACTIVITY_SIGMA * ACTIVITY_SIGMA / 2.0).exp()
        / WEEK_BINS as f64
}

fn week_model(peakedness: f64, seed: u64) -> ModelFile {
    let components = WEEK_FREQS
        .iter()
        .zip(WEEK_AMPS)
        .zip(WEEK_PHASES)
        .map(|((&frequency, amplitude), phase)| Component {
            frequency,
            amplitude,
            phase,
        })
        .collect();
    let diurnal = DiurnalModel::new(BIN_MS, WEEK_BINS, week_mean_level(), components, 1.0).unwrap();
    ModelFile::new(
        diurnal,
        NoiseModel::wgn(peakedness, seed).unwrap(),
        ActivityModel::new(ACTIVITY_MU, ACTIVITY_SIGMA).unwrap(),
        WEEK_USERS,
        seed,
    )
    .unwrap()
}

fn constant_model(mean: f64, bin_ms: u64, bins: usize, noise: NoiseModel, users: u64) -> ModelFile {
    let diurnal = DiurnalModel::new(bin_ms, bins, mean, vec![], 1.0).unwrap();
    ModelFile::new(
        diurnal,
        noise,
        ActivityModel::new(ACTIVITY_MU, ACTIVITY_SIGMA).unwrap(),
        users,
        0,
    )
    .unwrap()
}

/// Follower counts log-normal around a median of 8 with heavy tail
/// (mean a few dozen), follower sets uniform.
fn skewed_graph(n_users: u64, seed: u64) -> SocialGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = LogNormal::new(8.0f64.ln(), (2.0 * 8.0f64.ln()).sqrt()).unwrap();
    let mut edges = Vec::new();
    for followee in 1..=n_users {
        let want = (dist.sample(&mut rng).round() as u64).min(n_users - 1);
        let mut chosen = std::collections::BTreeSet::new();
        while (chosen.len() as u64) < want {
            let f = rng.gen_range(1..=n_users);
            if f != followee {
                chosen.insert(f);
            }
        }
        for f in chosen {
            edges.push((UserId(f), UserId(followee)));
        }
    }
    SocialGraph::from_edges(edges).unwrap()
}

fn brute_force_messages(trace: &EventTrace, graph: &SocialGraph) -> u64 {
    trace
        .events()
        .iter()
        .map(|e| 1 + graph.follower_count(e.user))
        .sum()
}

#[test]
fn criterion_01_parameter_recovery_round_trip() {
    let started = Instant::now();
    let model = week_model(3.4, 20);
    let horizon = TimeRange::new(0, WEEK_BINS as u64 * BIN_MS).unwrap();
    let generated = generate::generate(&model, &ScenarioSpec::default(), horizon, 20).unwrap();

    let series = generated.trace.bin(BIN_MS).unwrap();
    let fitted = song::diurnal::fit_diurnal(&series, Selection::TopK(3)).unwrap();
    let freqs: Vec<usize> = fitted.components().iter().map(|c| c.frequency).collect();
    let freqs_ok = freqs == WEEK_FREQS;
    let mut worst_amp = 0.0f64;
    for (component, expected) in fitted.components().iter().zip(WEEK_AMPS) {
        worst_amp = worst_amp.max(rel(component.amplitude, expected));
    }

    let residual = noise::extract_residual(&series, &fitted).unwrap();
    let peakedness = noise::estimate_peakedness(&residual).unwrap();

    let counts = characterize::per_user_counts(&generated.trace).unwrap();
    let values: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let activity = characterize::fit_lognormal(&values).unwrap();

    let elapsed = started.elapsed().as_secs_f64();
    let ok = freqs_ok
        && worst_amp < 0.05
        && rel(peakedness, 3.4) < 0.10
        && rel(activity.mu, ACTIVITY_MU) < 0.05
        && rel(activity.sigma, ACTIVITY_SIGMA) < 0.05
        && elapsed < 60.0;
    criterion(
        1,
        "parameter recovery round trip",
        ok,
        &format!(
            "freqs {freqs:?}, worst amp err {:.2}%, a {peakedness:.3}, mu {:.4}, sigma {:.4}, {elapsed:.1}s",
            100.0 * worst_amp,
            activity.mu,
            activity.sigma
        ),
    );
}

#[test]
fn criterion_02_variance_identity() {
    let started = Instant::now();
    let model = constant_model(1_000.0, 1_000, 10_000, NoiseModel::wgn(3.4, 0).unwrap(), 1);
    let horizon = TimeRange::new(0, 10_000_000).unwrap();
    let (series, _) =
        generate::generate_counts(&model, &ScenarioSpec::default(), horizon, 6).unwrap();
    let values = series.values();
    let var = {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
    };
    let ratio = var / 1_000.0;
    let elapsed = started.elapsed().as_secs_f64();
    let ok = (3.06..=3.74).contains(&ratio) && elapsed < 5.0;
    criterion(
        2,
        "variance identity Var(x)/m",
        ok,
        &format!("ratio {ratio:.3} over 10^4 bins (target 3.4 +/- 10%), {elapsed:.1}s"),
    );
}

#[test]
fn criterion_03_zero_noise_identity() {
    let model = week_model(0.0, 5);
    let horizon = TimeRange::new(0, WEEK_BINS as u64 * BIN_MS).unwrap();
    let (series, clamped) =
        generate::generate_counts(&model, &ScenarioSpec::default(), horizon, 5).unwrap();
    let mut mismatches = 0usize;
    for (t, &count) in series.counts().iter().enumerate() {
        let expected = model.diurnal().evaluate(t as f64).round_ties_even() as u64;
        if count != expected {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0 && clamped == 0;
    criterion(
        3,
        "zero-noise counts equal rounded mean",
        ok,
        &format!("{mismatches} mismatched bins of {WEEK_BINS}"),
    );
}

#[test]
fn criterion_04_self_similarity_diagnostics() {
    let started = Instant::now();
    let n = 1 << 16;
    let horizon = TimeRange::new(0, n as u64 * 1_000).unwrap();

    let wgn_model = constant_model(1_000.0, 1_000, n, NoiseModel::wgn(3.4, 0).unwrap(), 1);
    let (wgn_series, _) =
        generate::generate_counts(&wgn_model, &ScenarioSpec::default(), horizon, 40).unwrap();
    let sizes = characterize::default_block_sizes(n);
    let wgn_vt = characterize::variance_time_values(&wgn_series.values(), &sizes).unwrap();

    let fgn_model = constant_model(1_000.0, 1_000, n, NoiseModel::fgn(3.4, 0.8, 0).unwrap(), 1);
    let (fgn_series, _) =
        generate::generate_counts(&fgn_model, &ScenarioSpec::default(), horizon, 41).unwrap();
    let fgn_vt = characterize::variance_time_values(&fgn_series.values(), &sizes).unwrap();

    let elapsed = started.elapsed().as_secs_f64();
    let ok =
        (wgn_vt.slope + 1.0).abs() <= 0.1 && (fgn_vt.slope + 0.4).abs() <= 0.1 && elapsed < 30.0;
    criterion(
        4,
        "variance-time slopes",
        ok,
        &format!(
            "wgn slope {:.3} (target -1), fgn H=0.8 slope {:.3} (target -0.4), {elapsed:.1}s",
            wgn_vt.slope, fgn_vt.slope
        ),
    );
}

#[test]
fn criterion_05_distribution_fitter_calibration() {
    // Pareto tail recovery.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(50, 1));
    let alpha = 2.5;
    let pareto: Vec<f64> = (0..100_000)
        .map(|_| {
            let u: f64 = rng.gen();
            (1.0 - u).powf(-1.0 / (alpha - 1.0))
        })
        .collect();
    let pl = characterize::fit_powerlaw(&pareto).unwrap();

    // Log-normal MLE recovery.
    let dist = LogNormal::new(1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(50, 2));
    let samples: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
    let ln_fit = characterize::fit_lognormal_with(
        &samples,
        &characterize::KsOptions {
            resamples: 20,
            ..characterize::KsOptions::default()
        },
    )
    .unwrap();

    // Size of the 5% normality test on actually normal data.
    let trials = 200;
    let mut passes = 0;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(50, 100 + i));
        let z: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        if noise::normality_check(&z).unwrap().ad_pass {
            passes += 1;
        }
    }
    let pass_rate = passes as f64 / trials as f64;

    let ok = (pl.alpha - 2.5).abs() <= 0.05
        && (ln_fit.mu - 1.0).abs() <= 0.01
        && (ln_fit.sigma - 0.5).abs() <= 0.01
        && (pass_rate - 0.95).abs() <= 0.04;
    criterion(
        5,
        "distribution fitter calibration",
        ok,
        &format!(
            "alpha {:.3} (target 2.5), lognormal ({:.4}, {:.4}), AD pass rate {:.1}%",
            pl.alpha,
            ln_fit.mu,
            ln_fit.sigma,
            100.0 * pass_rate
        ),
    );
}

#[test]
fn criterion_06_conservation_suite() {
    let model = constant_model(200.0, 1_000, 500, NoiseModel::wgn(2.0, 0).unwrap(), 5_000);
    let horizon = TimeRange::new(0, 500_000).unwrap();
    let generated = generate::generate(&model, &ScenarioSpec::default(), horizon, 60).unwrap();
    let trace = &generated.trace;
    let series = trace.bin(1_000).unwrap();
    let per_user: u64 = trace.user_write_counts().values().sum();
    let counts_ok = series.total() == trace.len() as u64 && per_user == trace.len() as u64;

    let graph = skewed_graph(300, 61);
    let replay_model = constant_model(40.0, 1_000, 60, NoiseModel::wgn(1.0, 0).unwrap(), 300);
    let small_horizon = TimeRange::new(0, 60_000).unwrap();
    let small =
        generate::generate(&replay_model, &ScenarioSpec::default(), small_horizon, 62).unwrap();
    let report = replay::replay(
        &small.trace,
        &graph,
        &BackendConfig::default(),
        &ReplayOptions::default(),
    )
    .unwrap();
    let expected = brute_force_messages(&small.trace, &graph);
    let replay_ok = report.total_messages == expected;

    let ok = counts_ok && replay_ok;
    criterion(
        6,
        "conservation suite",
        ok,
        &format!(
            "bins/events/per-user all {} events; replay {} messages vs brute force {expected}",
            trace.len(),
            report.total_messages
        ),
    );
}

#[test]
fn criterion_07_burst_and_shift_scenarios() {
    // Burst lift on a constant profile.
    let model = constant_model(1_000.0, 1_000, 1_000, NoiseModel::wgn(3.4, 0).unwrap(), 1);
    let horizon = TimeRange::new(0, 1_000_000).unwrap();
    let scenario = ScenarioSpec::default().with_burst(Burst {
        start_ms: 100_000,
        end_ms: 110_000,
        rate_per_bin: 500.0,
    });
    let (series, _) = generate::generate_counts(&model, &scenario, horizon, 70).unwrap();
    let window_mean: f64 = series.counts()[100..110].iter().sum::<u64>() as f64 / 10.0;
    let lift = window_mean - 1_000.0;
    let tolerance = 3.0 * (3.4f64 * 1_000.0 / 10.0).sqrt();
    let burst_ok = (lift - 500.0).abs() <= tolerance;

    // Opposed half-weight populations cancel the daily tone.
    let two_weeks = 4_032;
    let tone = DiurnalModel::new(
        BIN_MS,
        two_weeks,
        600.0,
        vec![Component {
            frequency: 14,
            amplitude: 300.0,
            phase: 0.7,
        }],
        1.0,
    )
    .unwrap();
    let tone_model = ModelFile::new(
        tone,
        NoiseModel::wgn(3.4, 0).unwrap(),
        ActivityModel::new(ACTIVITY_MU, ACTIVITY_SIGMA).unwrap(),
        1,
        0,
    )
    .unwrap();
    let tone_horizon = TimeRange::new(0, two_weeks as u64 * BIN_MS).unwrap();
    let opposed = ScenarioSpec::default()
        .with_shift(PopulationShift {
            offset_ms: 0,
            weight: 0.5,
        })
        .with_shift(PopulationShift {
            offset_ms: 43_200_000,
            weight: 0.5,
        });
    let (cancelled, _) =
        generate::generate_counts(&tone_model, &opposed, tone_horizon, 71).unwrap();
    let leftover = dft_amplitude(&cancelled.values(), 14);
    let (plain, _) =
        generate::generate_counts(&tone_model, &ScenarioSpec::default(), tone_horizon, 71).unwrap();
    let original = dft_amplitude(&plain.values(), 14);
    let shift_ok = original > 285.0 && leftover < 0.01 * 300.0;

    let ok = burst_ok && shift_ok;
    criterion(
        7,
        "burst and shift scenarios",
        ok,
        &format!(
            "burst lift {lift:.1} (500 +/- {tolerance:.1}); tone amp {original:.1} -> {leftover:.2} after opposed shifts"
        ),
    );
}

fn dft_amplitude(values: &[f64], frequency: usize) -> f64 {
    let n = values.len() as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for (t, &v) in values.iter().enumerate() {
        let angle = std::f64::consts::TAU * frequency as f64 * t as f64 / n;
        re += v * angle.cos();
        im -= v * angle.sin();
    }
    2.0 * (re * re + im * im).sqrt() / n
}

#[test]
fn criterion_08_ramp_stress_analog() {
    let started = Instant::now();
    let model = constant_model(25.0, 1_000, 1_800, NoiseModel::wgn(0.0, 0).unwrap(), 1_000);
    let schedule = RampSchedule::new(
        [0.0, 25.0, 50.0, 75.0, 100.0, 125.0]
            .into_iter()
            .map(|added_per_s| RampStep {
                duration_s: 300,
                added_per_s,
            })
            .collect(),
    )
    .unwrap();
    let config = BackendConfig {
        capacity_ops_per_sec: 100.0,
        base_latency_us: 500_000,
        shards: 1,
    };
    let outcome = replay::ramp_stress(
        &model,
        &ScenarioSpec::default(),
        &schedule,
        &SocialGraph::empty(),
        &config,
        80,
        &ReplayOptions::default(),
    )
    .unwrap();

    // Total write rates per step are 25..150; the first step past the
    // 100 ops/s capacity is index 4.
    let detected = outcome.saturated_step;
    let sat_ok = matches!(detected, Some(step) if (3..=5).contains(&step));
    let mut below_ok = true;
    for step in &outcome.steps[0..3] {
        if step.p95_us as f64 > 1.2 * 500_000.0 {
            below_ok = false;
        }
    }
    let mut monotone = true;
    let mut bounded = true;
    for bin in &outcome.report.bins {
        monotone &= bin.p50_us <= bin.p95_us && bin.p95_us <= bin.p99_us;
        bounded &= bin.completed <= bin.offered;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = sat_ok && below_ok && monotone && bounded && elapsed < 60.0;
    criterion(
        8,
        "ramp stress saturation",
        ok,
        &format!(
            "saturated at step {detected:?} (rate crossing at 4), below-capacity p95s {:?} us, {elapsed:.1}s",
            outcome.steps[0..3].iter().map(|s| s.p95_us).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_09_cli_determinism() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_song");
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let run = |args: &[&str]| {
        let output = Command::new(bin).args(args).output().unwrap();
        assert!(
            output.status.success(),
            "song {args:?} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        output.stdout
    };

    let trace_a = path("a.trace");
    let trace_b = path("b.trace");
    let gen_args = |out: &std::path::Path| {
        vec![
            "generate".to_string(),
            "--horizon".into(),
            "2h".into(),
            "--users".into(),
            "400".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    for out in [&trace_a, &trace_b] {
        let args: Vec<String> = gen_args(out);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&args);
    }
    let generate_ok = std::fs::read(&trace_a).unwrap() == std::fs::read(&trace_b).unwrap();

    let trace = trace_a.display().to_string();
    let fit_1 = run(&["fit", &trace, "--seed", "9", "--bin-width", "60s"]);
    let fit_2 = run(&["fit", &trace, "--seed", "9", "--bin-width", "60s"]);
    let analyze_1 = run(&[
        "analyze",
        &trace,
        "--seed",
        "9",
        "--bin-width",
        "60s",
        "--top-k",
        "5",
    ]);
    let analyze_2 = run(&[
        "analyze",
        &trace,
        "--seed",
        "9",
        "--bin-width",
        "60s",
        "--top-k",
        "5",
    ]);

    let graph_path = path("g.graph");
    let graph = skewed_graph(400, 90);
    song::io::save_graph(&graph, &graph_path).unwrap();
    let graph_arg = graph_path.display().to_string();
    let replay_1 = run(&[
        "replay",
        &trace,
        "--graph",
        &graph_arg,
        "--shards",
        "8",
        "--workers",
        "1",
    ]);
    let replay_4 = run(&[
        "replay",
        &trace,
        "--graph",
        &graph_arg,
        "--shards",
        "8",
        "--workers",
        "4",
    ]);
    let report_a = path("ra.report");
    std::fs::write(&report_a, &replay_1).unwrap();
    let report_arg = report_a.display().to_string();
    let compare_1 = run(&["compare", &report_arg, &report_arg]);
    let compare_2 = run(&["compare", &report_arg, &report_arg]);

    let ok = generate_ok
        && fit_1 == fit_2
        && analyze_1 == analyze_2
        && replay_1 == replay_4
        && compare_1 == compare_2;
    criterion(
        9,
        "cli determinism",
        ok,
        &format!(
            "generate {generate_ok}, fit {}, analyze {}, replay workers 1 vs 4 {}, compare {}",
            fit_1 == fit_2,
            analyze_1 == analyze_2,
            replay_1 == replay_4,
            compare_1 == compare_2
        ),
    );
}

#[test]
fn criterion_10_baseline_contrast() {
    let users = 2_000u64;
    let graph = skewed_graph(users, 100);
    let mut followers: Vec<u64> = (1..=users)
        .map(|u| graph.follower_count(UserId(u)))
        .collect();
    followers.sort_unstable();
    let median = followers[(users / 2) as usize] as f64;
    let mean = followers.iter().sum::<u64>() as f64 / users as f64;
    let regime_ok = (6.0..=10.0).contains(&median) && (35.0..=90.0).contains(&mean);

    let day_bins = 288;
    let expected_volume =
        users as f64 * (ACTIVITY_MU + ACTIVITY_SIGMA * ACTIVITY_SIGMA / 2.0).exp();
    let model = constant_model(
        expected_volume / day_bins as f64,
        BIN_MS,
        day_bins,
        NoiseModel::wgn(3.4, 0).unwrap(),
        users,
    );
    let horizon = TimeRange::new(0, day_bins as u64 * BIN_MS).unwrap();
    let (counts, _) =
        generate::generate_counts(&model, &ScenarioSpec::default(), horizon, 101).unwrap();
    let realistic = generate::assign_users(&counts, &model, 101).unwrap();
    let baseline = generate::random_baseline(&counts, users, 101).unwrap();

    let config = BackendConfig {
        capacity_ops_per_sec: 50_000.0,
        ..BackendConfig::default()
    };
    let options = ReplayOptions::default();
    let report_real = replay::replay(&realistic.trace, &graph, &config, &options).unwrap();
    let report_base = replay::replay(&baseline.trace, &graph, &config, &options).unwrap();

    let brute_real = brute_force_messages(&realistic.trace, &graph);
    let brute_base = brute_force_messages(&baseline.trace, &graph);
    let totals_ok =
        report_real.total_messages == brute_real && report_base.total_messages == brute_base;

    let summary = replay::compare(&report_real, &report_base).unwrap();
    let expected_rel = (brute_base as f64 - brute_real as f64) / brute_real as f64;
    let compare_ok = summary.total_messages.left == brute_real as f64
        && summary.total_messages.right == brute_base as f64
        && summary.total_messages.relative == expected_rel
        && brute_real != brute_base;

    let ok = regime_ok && totals_ok && compare_ok;
    criterion(
        10,
        "baseline contrast",
        ok,
        &format!(
            "graph median {median:.0} mean {mean:.1}; messages {brute_real} vs {brute_base} ({:+.2}% uniform vs skewed), reports match brute force: {totals_ok}",
            100.0 * expected_rel
        ),
    );
}
