//! The `song` binary: analyze, fit, generate, replay, compare.
//!
//! Data goes to `--out` (or stdout); warnings and progress notes go to
//! stderr, so piped output stays clean.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::characterize::{self, AnalysisOptions, KsOptions};
use crate::diurnal::Selection;
use crate::error::{Error, Result};
use crate::generate::{self, Burst, ModelFile, PopulationShift, ScenarioSpec};
use crate::io::{self, Document};
use crate::noise::{self, NoiseModel};
use crate::replay::{self, BackendConfig, Clock, RampSchedule, ReplayOptions};
use crate::trace::{self, SocialGraph, TimeRange};
use crate::DEFAULT_SEED;

/// Population used when generating without a fitted model.
const DEFAULT_TEMPLATE_USERS: u64 = 100_000;
const DEFAULT_ENERGY_TARGET: f64 = 0.9;
/// Fitted residuals with a variance-time Hurst estimate above this keep
/// their long-range dependence in the model.
const FGN_HURST_CUTOFF: f64 = 0.6;
const FGN_HURST_CAP: f64 = 0.95;

#[derive(Parser)]
#[command(
    name = "song",
    version,
    about = "Fit, synthesize, and replay social-network write workloads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Random seed; omit for the built-in default (generate falls back
    /// to the seed stored in the model)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bin width for counting writes, e.g. 300000, 300s or 5m
    #[arg(long, global = true, value_parser = parse_duration_flag)]
    bin_width: Option<u64>,
    /// Write the main output here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Characterize a trace: activity fits, gaps, correlation, self-similarity
    Analyze {
        trace: PathBuf,
        /// Follow graph, needed for spam filtering
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Drop likely-automated writers before analyzing
        #[arg(long)]
        filter_spam: bool,
        /// How many top writers get a per-user gap fit (0 skips it)
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Fit the generative model (mean profile, noise, activity) to a trace
    Fit {
        trace: PathBuf,
        /// Keep frequencies until this fraction of detrended energy is explained
        #[arg(long, conflicts_with = "top_k")]
        energy: Option<f64>,
        /// Keep exactly this many frequencies instead
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Synthesize a trace from a model under an optional scenario
    Generate {
        /// Fitted model file; omitted = built-in template (with a warning)
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Length of the generated trace, e.g. 7d, 24h or a count of ms
        #[arg(long, value_parser = parse_duration_flag)]
        horizon: u64,
        /// Override the model's population size
        #[arg(long)]
        users: Option<u64>,
        /// Multiply the mean profile (never burst load)
        #[arg(long)]
        scale: Option<f64>,
        /// Extra load window start,end,rate_per_bin; repeatable
        #[arg(long)]
        burst: Vec<String>,
        /// Shifted population copy offset,weight; repeatable
        #[arg(long)]
        shift: Vec<String>,
    },
    /// Replay a trace (or a ramped synthetic load) against the simulated backend
    Replay {
        /// Trace to replay; omit when using --ramp
        trace: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Total backend capacity in operations per second
        #[arg(long)]
        backend_capacity: Option<f64>,
        /// Per-operation base latency in microseconds
        #[arg(long)]
        base_latency: Option<u64>,
        #[arg(long)]
        shards: Option<usize>,
        /// Speed-up factor for the replay clock (2 = twice as fast)
        #[arg(long)]
        time_scale: Option<f64>,
        /// Ramp schedule duration_s,added_rate,... generated from --model
        #[arg(long)]
        ramp: Option<String>,
        /// Model for --ramp; omitted = built-in template (with a warning)
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scenario for --ramp; may also carry a [backend] section
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Report bin width on the replay clock (default 5s)
        #[arg(long, value_parser = parse_duration_flag)]
        report_bin: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Pace dispatch against the OS clock instead of the virtual one
        #[arg(long)]
        wall_clock: bool,
        /// Also write the per-bin time series here
        #[arg(long)]
        timeseries: Option<PathBuf>,
    },
    /// Relative differences between two replay reports
    Compare { left: PathBuf, right: PathBuf },
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let bin_width = cli.bin_width;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Analyze {
            trace,
            graph,
            filter_spam,
            top_k,
        } => cmd_analyze(
            &trace,
            graph.as_deref(),
            filter_spam,
            top_k,
            seed,
            bin_width,
            out,
        ),
        Command::Fit {
            trace,
            energy,
            top_k,
        } => cmd_fit(&trace, energy, top_k, seed, bin_width, out),
        Command::Generate {
            model,
            scenario,
            horizon,
            users,
            scale,
            burst,
            shift,
        } => cmd_generate(
            model.as_deref(),
            scenario.as_deref(),
            horizon,
            users,
            scale,
            &burst,
            &shift,
            seed,
            out,
        ),
        Command::Replay {
            trace,
            graph,
            backend_capacity,
            base_latency,
            shards,
            time_scale,
            ramp,
            model,
            scenario,
            report_bin,
            workers,
            wall_clock,
            timeseries,
        } => cmd_replay(ReplayInvocation {
            trace: trace.as_deref(),
            graph: graph.as_deref(),
            backend_capacity,
            base_latency,
            shards,
            time_scale,
            ramp: ramp.as_deref(),
            model: model.as_deref(),
            scenario: scenario.as_deref(),
            report_bin,
            workers,
            wall_clock,
            timeseries: timeseries.as_deref(),
            seed,
            out,
        }),
        Command::Compare { left, right } => cmd_compare(&left, &right, out),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_analyze(
    trace_path: &Path,
    graph_path: Option<&Path>,
    filter_spam: bool,
    top_k: Option<usize>,
    seed: Option<u64>,
    bin_width: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let mut trace = io::load_trace(trace_path)?;
    let graph = graph_path.map(io::load_graph).transpose()?;
    let mut spam_outcome = None;
    if filter_spam {
        let graph = graph.as_ref().ok_or_else(|| {
            Error::InvalidInput("--filter-spam needs --graph for follower counts".into())
        })?;
        let outcome = trace::filter_spammers(
            &trace,
            graph,
            trace::SPAM_WRITE_FRACTION,
            trace::SPAM_FOLLOWER_QUANTILE,
        )?;
        eprintln!(
            "note: spam filter removed {} of {} writers",
            outcome.removed.len(),
            trace.user_count()
        );
        trace = outcome.trace.clone();
        spam_outcome = Some(outcome);
    }
    let defaults = AnalysisOptions::default();
    let opts = AnalysisOptions {
        bin_width_ms: bin_width.unwrap_or(defaults.bin_width_ms),
        top_k: top_k.unwrap_or(defaults.top_k),
        ks: KsOptions {
            seed: seed.unwrap_or(DEFAULT_SEED),
            ..KsOptions::default()
        },
        ..defaults
    };
    let characterization = characterize::characterize_trace(&trace, &opts)?;
    for note in &characterization.notes {
        eprintln!("note: {note}");
    }
    let mut doc = characterization.to_document();
    if let Some(outcome) = spam_outcome {
        doc.push("spam", "removed", outcome.removed.len());
        doc.push("spam", "write_cutoff", outcome.thresholds.write_cutoff);
        doc.push(
            "spam",
            "follower_cutoff",
            outcome.thresholds.follower_cutoff,
        );
    }
    emit(&doc.to_text(), out)
}

fn cmd_fit(
    trace_path: &Path,
    energy: Option<f64>,
    top_k: Option<usize>,
    seed: Option<u64>,
    bin_width: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let trace = io::load_trace(trace_path)?;
    let width = bin_width.unwrap_or(AnalysisOptions::default().bin_width_ms);
    let series = trace.bin(width)?;
    let selection = match top_k {
        Some(k) => Selection::TopK(k),
        None => Selection::TargetEnergy(energy.unwrap_or(DEFAULT_ENERGY_TARGET)),
    };
    let diurnal = crate::diurnal::fit_diurnal(&series, selection)?;
    eprintln!(
        "note: kept {} frequencies explaining {:.1}% of detrended energy",
        diurnal.components().len(),
        100.0 * diurnal.energy_fraction()
    );

    let residual = noise::extract_residual(&series, &diurnal)?;
    let peakedness = noise::estimate_peakedness(&residual)?;
    match noise::normality_report(&residual) {
        Ok(report) => eprintln!(
            "note: residual normality A2 = {:.3} ({})",
            report.ad_statistic,
            if report.ad_pass { "pass" } else { "fail" }
        ),
        Err(e) => eprintln!("note: residual normality check skipped: {e}"),
    }
    let block_sizes = characterize::default_block_sizes(residual.values.len());
    let noise_model = match characterize::variance_time_values(&residual.values, &block_sizes) {
        Ok(vt) if vt.hurst_estimate > FGN_HURST_CUTOFF => {
            let hurst = vt.hurst_estimate.min(FGN_HURST_CAP);
            eprintln!(
                "note: residuals look long-range dependent (H = {:.3}); keeping fractional noise",
                vt.hurst_estimate
            );
            NoiseModel::fgn(peakedness, hurst, seed)?
        }
        Ok(_) => NoiseModel::wgn(peakedness, seed)?,
        Err(e) => {
            eprintln!("note: self-similarity estimate skipped ({e}); assuming white noise");
            NoiseModel::wgn(peakedness, seed)?
        }
    };

    let counts = characterize::per_user_counts(&trace)?;
    let values: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let ks = KsOptions {
        seed,
        ..KsOptions::default()
    };
    let activity_fit = characterize::fit_lognormal_with(&values, &ks)?;
    eprintln!(
        "note: activity log-normal ({:.4}, {:.4}), KS {}",
        activity_fit.mu,
        activity_fit.sigma,
        if activity_fit.ks.pass { "pass" } else { "fail" }
    );
    let activity = generate::ActivityModel::from_fit(&activity_fit)?;

    let model = ModelFile::new(
        diurnal,
        noise_model,
        activity,
        trace.user_count() as u64,
        seed,
    )?;
    emit(&model.to_document().to_text(), out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    model_path: Option<&Path>,
    scenario_path: Option<&Path>,
    horizon_ms: u64,
    users: Option<u64>,
    scale: Option<f64>,
    burst_flags: &[String],
    shift_flags: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let mut model = match model_path {
        Some(path) => ModelFile::load(path)?,
        None => {
            eprintln!("warning: no model given; using the built-in default template");
            generate::default_model(
                users.unwrap_or(DEFAULT_TEMPLATE_USERS),
                seed.unwrap_or(DEFAULT_SEED),
            )
        }
    };
    if let Some(n) = users {
        model = ModelFile::new(
            model.diurnal().clone(),
            model.noise().clone(),
            model.activity(),
            n,
            model.seed(),
        )?;
    }
    let mut scenario = match scenario_path {
        Some(path) => ScenarioSpec::load(path)?,
        None => ScenarioSpec::default(),
    };
    if let Some(s) = scale {
        scenario.mean_scale = s;
    }
    for raw in burst_flags {
        scenario.bursts.push(parse_burst_flag(raw)?);
    }
    for raw in shift_flags {
        scenario.shifts.push(parse_shift_flag(raw)?);
    }
    let seed = seed.unwrap_or(model.seed());
    let horizon = TimeRange::new(0, horizon_ms)?;
    let generated = generate::generate(&model, &scenario, horizon, seed)?;
    if generated.meta.clamped_bins > 0 {
        eprintln!(
            "warning: {} bins clamped at zero (mean and noise drove them negative)",
            generated.meta.clamped_bins
        );
    }
    eprintln!(
        "note: {} events over {} bins, model {}",
        generated.trace.len(),
        horizon_ms / model.bin_width_ms(),
        &generated.meta.model_digest.as_deref().unwrap_or("-")[..12],
    );
    match out {
        Some(path) => io::save_trace(&generated.trace, path),
        None => {
            let stdout = std::io::stdout();
            io::write_trace(&generated.trace, stdout.lock())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

struct ReplayInvocation<'a> {
    trace: Option<&'a Path>,
    graph: Option<&'a Path>,
    backend_capacity: Option<f64>,
    base_latency: Option<u64>,
    shards: Option<usize>,
    time_scale: Option<f64>,
    ramp: Option<&'a str>,
    model: Option<&'a Path>,
    scenario: Option<&'a Path>,
    report_bin: Option<u64>,
    workers: Option<usize>,
    wall_clock: bool,
    timeseries: Option<&'a Path>,
    seed: Option<u64>,
    out: Option<&'a Path>,
}

fn cmd_replay(args: ReplayInvocation) -> Result<()> {
    let graph = match args.graph {
        Some(path) => io::load_graph(path)?,
        None => {
            eprintln!("warning: no --graph given; replaying with no followers (writes only)");
            SocialGraph::empty()
        }
    };
    let scenario_doc = args
        .scenario
        .map(|p| Document::load(p, io::SCENARIO_HEADER))
        .transpose()?;
    let mut config = match &scenario_doc {
        Some(doc) => BackendConfig::from_document(doc)?,
        None => BackendConfig::default(),
    };
    if let Some(c) = args.backend_capacity {
        config.capacity_ops_per_sec = c;
    }
    if let Some(b) = args.base_latency {
        config.base_latency_us = b;
    }
    if let Some(s) = args.shards {
        config.shards = s;
    }
    let defaults = ReplayOptions::default();
    let options = ReplayOptions {
        time_scale: args.time_scale.unwrap_or(defaults.time_scale),
        report_bin_ms: args.report_bin.unwrap_or(defaults.report_bin_ms),
        clock: if args.wall_clock {
            Clock::WallClock
        } else {
            Clock::Simulated
        },
        workers: args.workers.unwrap_or(defaults.workers),
    };

    let (report, ramp_outcome) = match args.ramp {
        Some(ramp_text) => {
            let schedule = RampSchedule::parse(ramp_text)?;
            let model = match args.model {
                Some(path) => ModelFile::load(path)?,
                None => {
                    eprintln!("warning: no model given; ramping the built-in default template");
                    generate::default_model(
                        DEFAULT_TEMPLATE_USERS,
                        args.seed.unwrap_or(DEFAULT_SEED),
                    )
                }
            };
            let scenario = match &scenario_doc {
                Some(doc) => ScenarioSpec::from_document(doc)?,
                None => ScenarioSpec::default(),
            };
            let seed = args.seed.unwrap_or(model.seed());
            let outcome = replay::ramp_stress(
                &model, &scenario, &schedule, &graph, &config, seed, &options,
            )?;
            (outcome.report.clone(), Some(outcome))
        }
        None => {
            let trace_path = args.trace.ok_or_else(|| {
                Error::InvalidInput("replay needs a trace file (or --ramp with a model)".into())
            })?;
            let trace = io::load_trace(trace_path)?;
            let report = replay::replay(&trace, &graph, &config, &options)?;
            (report, None)
        }
    };

    match report.saturation {
        Some(sat) => eprintln!(
            "note: saturated from bin {} (t = {} ms on the replay clock)",
            sat.bin_index, sat.bin_start_ms
        ),
        None => eprintln!("note: no saturation detected"),
    }
    let mut doc = report.to_document();
    if let Some(outcome) = &ramp_outcome {
        for (i, step) in outcome.steps.iter().enumerate() {
            doc.push(
                "ramp",
                "step",
                format!(
                    "{},{},{},{},{}",
                    i, step.added_per_s, step.offered_ops_per_sec, step.p95_us, step.mean_us
                ),
            );
        }
        if let Some(step) = outcome.saturated_step {
            doc.push("ramp", "saturated_step", step);
            eprintln!(
                "note: saturation maps to ramp step {} (+{}/s)",
                step, outcome.steps[step].added_per_s
            );
        }
    }
    emit(&doc.to_text(), args.out)?;
    if let Some(path) = args.timeseries {
        report.save_timeseries(path)?;
    }
    Ok(())
}

fn cmd_compare(left: &Path, right: &Path, out: Option<&Path>) -> Result<()> {
    let left = replay::ReplayReport::load(left)?;
    let right = replay::ReplayReport::load(right)?;
    let summary = replay::compare(&left, &right)?;
    emit(&summary.to_document().to_text(), out)
}

/// Durations for flags: a bare number is milliseconds; `ms`, `s`, `m`,
/// `h`, `d` and `w` suffixes scale, and segments concatenate (`2d12h`).
fn parse_duration_ms(text: &str) -> Result<u64> {
    let overflow = || Error::InvalidInput(format!("duration {text:?} overflows"));
    let mut rest = text.trim();
    if rest.is_empty() || !rest.starts_with(|c: char| c.is_ascii_digit()) {
        return Err(Error::InvalidInput(format!("bad duration {text:?}")));
    }
    let mut total: u64 = 0;
    let mut first = true;
    while !rest.is_empty() {
        let split = rest
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(rest.len());
        let (digits, tail) = rest.split_at(split);
        let value: u64 = digits
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad duration {text:?}")))?;
        let unit_end = tail
            .find(|c: char| c.is_ascii_digit())
            .unwrap_or(tail.len());
        let (unit, next) = tail.split_at(unit_end);
        // a unitless number means milliseconds and must stand alone
        if unit.is_empty() && !(first && next.is_empty()) {
            return Err(Error::InvalidInput(format!("bad duration {text:?}")));
        }
        let factor = match unit {
            "" | "ms" => 1,
            "s" => 1_000,
            "m" => 60_000,
            "h" => 3_600_000,
            "d" => 86_400_000,
            "w" => 604_800_000,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown duration unit {other:?} in {text:?}"
                )))
            }
        };
        let part = value.checked_mul(factor).ok_or_else(overflow)?;
        total = total.checked_add(part).ok_or_else(overflow)?;
        rest = next;
        first = false;
    }
    Ok(total)
}

fn parse_duration_flag(text: &str) -> std::result::Result<u64, String> {
    parse_duration_ms(text).map_err(|e| e.to_string())
}

fn parse_burst_flag(text: &str) -> Result<Burst> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "--burst wants start,end,rate_per_bin, got {text:?}"
        )));
    }
    Ok(Burst {
        start_ms: parse_duration_ms(parts[0])?,
        end_ms: parse_duration_ms(parts[1])?,
        rate_per_bin: parts[2]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad burst rate {:?}", parts[2])))?,
    })
}

fn parse_shift_flag(text: &str) -> Result<PopulationShift> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "--shift wants offset,weight, got {text:?}"
        )));
    }
    let (negative, raw_offset) = match parts[0].strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, parts[0]),
    };
    let magnitude = parse_duration_ms(raw_offset)? as i64;
    Ok(PopulationShift {
        offset_ms: if negative { -magnitude } else { magnitude },
        weight: parts[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad shift weight {:?}", parts[1])))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_parse_with_units() {
        assert_eq!(parse_duration_ms("500").unwrap(), 500);
        assert_eq!(parse_duration_ms("300s").unwrap(), 300_000);
        assert_eq!(parse_duration_ms("5m").unwrap(), 300_000);
        assert_eq!(parse_duration_ms("24h").unwrap(), 86_400_000);
        assert_eq!(parse_duration_ms("7d").unwrap(), 7 * 86_400_000);
        assert_eq!(parse_duration_ms("1w").unwrap(), 604_800_000);
        assert_eq!(parse_duration_ms("2d12h").unwrap(), 216_000_000);
        assert_eq!(parse_duration_ms("1h30m15s").unwrap(), 5_415_000);
        assert!(parse_duration_ms("10x").is_err());
        assert!(parse_duration_ms("").is_err());
        assert!(parse_duration_ms("5m30").is_err());
        assert!(parse_duration_ms("h5").is_err());
    }

    #[test]
    fn burst_flag_parses() {
        let b = parse_burst_flag("1h,2h,50.5").unwrap();
        assert_eq!(b.start_ms, 3_600_000);
        assert_eq!(b.end_ms, 7_200_000);
        assert_eq!(b.rate_per_bin, 50.5);
        assert!(parse_burst_flag("1h,2h").is_err());
        assert!(parse_burst_flag("1h,2h,abc").is_err());
    }

    #[test]
    fn shift_flag_parses_signed_offsets() {
        let s = parse_shift_flag("-3h,0.5").unwrap();
        assert_eq!(s.offset_ms, -10_800_000);
        assert_eq!(s.weight, 0.5);
        let s = parse_shift_flag("90m,1").unwrap();
        assert_eq!(s.offset_ms, 5_400_000);
        assert!(parse_shift_flag("3h").is_err());
    }

    #[test]
    fn command_line_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
