//! Trace characterization: per-user activity fits, inter-write gap
//! diagnostics, correlation structure, and self-similarity estimation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::error::{Error, Result};
use crate::noise::derive_seed;
use crate::stats;
use crate::trace::{BinnedSeries, EventTrace, TimeRange, UserId};

pub const MIN_LOGNORMAL_SAMPLES: usize = 10;
pub const MIN_EXPONENTIAL_SAMPLES: usize = 10;
pub const MIN_POWERLAW_SAMPLES: usize = 50;
pub const MIN_POWERLAW_TAIL: usize = 10;
const XMIN_CANDIDATE_CAP: usize = 500;

/// Decision rule for goodness-of-fit when parameters are estimated from
/// the same sample: critical values come from a parametric bootstrap, and
/// the fit passes when the observed distance falls below the bootstrap
/// `1 - level` quantile.
#[derive(Debug, Clone, Copy)]
pub struct KsOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for KsOptions {
    fn default() -> Self {
        KsOptions {
            level: 0.05,
            resamples: 200,
            seed: crate::DEFAULT_SEED,
        }
    }
}

impl KsOptions {
    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "significance level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.resamples < 20 {
            return Err(Error::InvalidInput(
                "bootstrap needs at least 20 resamples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KsOutcome {
    /// Observed KS distance between sample and fitted CDF.
    pub statistic: f64,
    /// Bootstrap critical value at the configured level.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub ks: KsOutcome,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: f64,
    pub n_tail: usize,
    pub n: usize,
    /// KS distance over the tail `x >= xmin`; no pass flag because the
    /// cutoff search optimizes this very statistic.
    pub ks_stat: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ExponentialFit {
    /// Events per second.
    pub rate: f64,
    pub n: usize,
    pub ks: KsOutcome,
}

/// Writes per user, keyed in user-id order.
pub fn per_user_counts(trace: &EventTrace) -> Result<BTreeMap<UserId, u64>> {
    if trace.is_empty() {
        return Err(Error::InsufficientData(
            "cannot count writers of an empty trace".into(),
        ));
    }
    Ok(trace.user_write_counts())
}

/// Empirical CDF of the per-user write counts as (count, fraction <= count)
/// points, for external plotting.
pub fn user_count_cdf(trace: &EventTrace) -> Result<Vec<(u64, f64)>> {
    let counts = per_user_counts(trace)?;
    let mut values: Vec<u64> = counts.values().copied().collect();
    values.sort_unstable();
    let n = values.len() as f64;
    let mut points = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if i + 1 == values.len() || values[i + 1] != v {
            points.push((v, (i + 1) as f64 / n));
        }
    }
    Ok(points)
}

fn check_positive(samples: &[f64], what: &str) -> Result<()> {
    for &x in samples {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{what} fit needs positive finite samples, got {x}"
            )));
        }
    }
    Ok(())
}

fn bootstrap_ks<D, F>(observed: f64, n: usize, opts: &KsOptions, dist: &D, refit: F) -> KsOutcome
where
    D: Distribution<f64>,
    F: Fn(&mut Vec<f64>) -> Option<f64>,
{
    let mut distances = Vec::with_capacity(opts.resamples);
    for b in 0..opts.resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, b as u64));
        let mut sample: Vec<f64> = dist.sample_iter(&mut rng).take(n).collect();
        if let Some(d) = refit(&mut sample) {
            distances.push(d);
        }
    }
    distances.sort_by(f64::total_cmp);
    let threshold = stats::quantile_sorted(&distances, 1.0 - opts.level).unwrap_or(f64::INFINITY);
    KsOutcome {
        statistic: observed,
        threshold,
        pass: observed < threshold,
    }
}

fn lognormal_ks(sample: &mut Vec<f64>) -> Option<f64> {
    let lns: Vec<f64> = sample.iter().map(|x| x.ln()).collect();
    let mu = stats::mean(&lns);
    let sigma = stats::population_variance(&lns).sqrt();
    if sigma == 0.0 {
        return None;
    }
    sample.sort_by(f64::total_cmp);
    Some(stats::ks_statistic(sample, |x| {
        stats::standard_normal_cdf((x.ln() - mu) / sigma)
    }))
}

pub fn fit_lognormal(samples: &[f64]) -> Result<LogNormalFit> {
    fit_lognormal_with(samples, &KsOptions::default())
}

/// Maximum-likelihood log-normal fit: `mu` and `sigma` are the mean and
/// (population) standard deviation of the log sample.
pub fn fit_lognormal_with(samples: &[f64], opts: &KsOptions) -> Result<LogNormalFit> {
    opts.validate()?;
    if samples.len() < MIN_LOGNORMAL_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "log-normal fit needs at least {MIN_LOGNORMAL_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_positive(samples, "log-normal")?;
    let lns: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let mu = stats::mean(&lns);
    let sigma = stats::population_variance(&lns).sqrt();
    if sigma == 0.0 {
        return Err(Error::InsufficientData(
            "all samples equal; log-normal fit is degenerate".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let observed = stats::ks_statistic(&sorted, |x| {
        stats::standard_normal_cdf((x.ln() - mu) / sigma)
    });
    // Unit-scale log-normal, then shift: sampling exp(mu + sigma Z) directly.
    let dist = LogNormal::new(mu, sigma)
        .map_err(|e| Error::InvalidInput(format!("log-normal({mu}, {sigma}): {e}")))?;
    let ks = bootstrap_ks(observed, samples.len(), opts, &dist, lognormal_ks);
    Ok(LogNormalFit {
        mu,
        sigma,
        n: samples.len(),
        ks,
    })
}

fn exponential_ks(sample: &mut Vec<f64>) -> Option<f64> {
    let m = stats::mean(sample);
    if m <= 0.0 {
        return None;
    }
    let rate = 1.0 / m;
    sample.sort_by(f64::total_cmp);
    Some(stats::ks_statistic(sample, |x| 1.0 - (-rate * x).exp()))
}

pub fn fit_exponential(samples: &[f64]) -> Result<ExponentialFit> {
    fit_exponential_with(samples, &KsOptions::default())
}

pub fn fit_exponential_with(samples: &[f64], opts: &KsOptions) -> Result<ExponentialFit> {
    opts.validate()?;
    if samples.len() < MIN_EXPONENTIAL_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "exponential fit needs at least {MIN_EXPONENTIAL_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_positive(samples, "exponential")?;
    let rate = 1.0 / stats::mean(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let observed = stats::ks_statistic(&sorted, |x| 1.0 - (-rate * x).exp());
    let dist = Exp::new(rate).map_err(|e| Error::InvalidInput(format!("exp({rate}): {e}")))?;
    let ks = bootstrap_ks(observed, samples.len(), opts, &dist, exponential_ks);
    Ok(ExponentialFit {
        rate,
        n: samples.len(),
        ks,
    })
}

/// Power-law tail fit for continuous positive samples: the cutoff is the
/// sample value minimizing the KS distance of the tail against its own
/// maximum-likelihood exponent.
pub fn fit_powerlaw(samples: &[f64]) -> Result<PowerLawFit> {
    fit_powerlaw_inner(samples, false)
}

/// Power-law fit for integer count data, using the continuous
/// approximation `alpha = 1 + n / sum ln(x / (xmin - 1/2))`.
pub fn fit_powerlaw_counts(samples: &[f64]) -> Result<PowerLawFit> {
    fit_powerlaw_inner(samples, true)
}

fn fit_powerlaw_inner(samples: &[f64], discrete: bool) -> Result<PowerLawFit> {
    if samples.len() < MIN_POWERLAW_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs at least {MIN_POWERLAW_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_positive(samples, "power-law")?;
    if discrete {
        if let Some(&bad) = samples.iter().find(|&&x| x < 1.0) {
            return Err(Error::InvalidInput(format!(
                "count data must be >= 1, got {bad}"
            )));
        }
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(
            "all samples equal; power-law fit is degenerate".into(),
        ));
    }
    // Candidate cutoffs are distinct sample values, thinned evenly when the
    // grid would be large.
    let candidates: Vec<f64> = if distinct.len() > XMIN_CANDIDATE_CAP {
        (0..XMIN_CANDIDATE_CAP)
            .map(|i| distinct[i * (distinct.len() - 1) / (XMIN_CANDIDATE_CAP - 1)])
            .collect()
    } else {
        distinct
    };
    let mut best: Option<PowerLawFit> = None;
    for &xmin in &candidates {
        let start = sorted.partition_point(|&x| x < xmin);
        let tail = &sorted[start..];
        if tail.len() < MIN_POWERLAW_TAIL {
            continue;
        }
        let denom_ref = if discrete { xmin - 0.5 } else { xmin };
        let log_sum: f64 = tail.iter().map(|&x| (x / denom_ref).ln()).sum();
        if log_sum <= 0.0 {
            continue;
        }
        let alpha = 1.0 + tail.len() as f64 / log_sum;
        let d = stats::ks_statistic(tail, |x| 1.0 - (xmin / x).powf(alpha - 1.0));
        let better = match &best {
            Some(b) => d < b.ks_stat,
            None => true,
        };
        if better {
            best = Some(PowerLawFit {
                alpha,
                xmin,
                n_tail: tail.len(),
                n: samples.len(),
                ks_stat: d,
            });
        }
    }
    best.ok_or_else(|| {
        Error::InsufficientData(format!(
            "fewer than {MIN_POWERLAW_TAIL} tail samples at every candidate cutoff"
        ))
    })
}

/// Gaps between a user's successive writes, in seconds. Same-millisecond
/// writes are separated by a deterministic 1 ms so every gap is positive.
pub fn inter_write_times(trace: &EventTrace, user: UserId) -> Result<Vec<f64>> {
    let stamps: Vec<u64> = trace
        .events()
        .iter()
        .filter(|e| e.user == user)
        .map(|e| e.timestamp_ms)
        .collect();
    if stamps.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "user {user} has {} write(s); gaps need at least 2",
            stamps.len()
        )));
    }
    Ok(stamps
        .windows(2)
        .map(|w| (w[1] - w[0]).max(1) as f64 / 1_000.0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapFamily {
    LogNormal,
    Exponential,
}

pub fn ks_pass_rate(trace: &EventTrace, top_k: usize, family: GapFamily) -> Result<f64> {
    ks_pass_rate_with(trace, top_k, family, &KsOptions::default())
}

/// Fraction of the `top_k` most-active users whose inter-write gaps pass
/// the bootstrap KS test for the family. Users with too few gaps to fit
/// count as failures.
pub fn ks_pass_rate_with(
    trace: &EventTrace,
    top_k: usize,
    family: GapFamily,
    opts: &KsOptions,
) -> Result<f64> {
    opts.validate()?;
    if top_k == 0 {
        return Err(Error::InvalidInput("top_k must be positive".into()));
    }
    let counts = per_user_counts(trace)?;
    if top_k > counts.len() {
        return Err(Error::InvalidInput(format!(
            "top_k {top_k} exceeds the {} distinct writers",
            counts.len()
        )));
    }
    let mut ranked: Vec<(UserId, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut passes = 0usize;
    for &(user, _) in ranked.iter().take(top_k) {
        let Ok(gaps) = inter_write_times(trace, user) else {
            continue;
        };
        let pass = match family {
            GapFamily::LogNormal => fit_lognormal_with(&gaps, opts)
                .map(|f| f.ks.pass)
                .unwrap_or(false),
            GapFamily::Exponential => fit_exponential_with(&gaps, opts)
                .map(|f| f.ks.pass)
                .unwrap_or(false),
        };
        if pass {
            passes += 1;
        }
    }
    Ok(passes as f64 / top_k as f64)
}

/// Sample autocorrelation through `max_lag`; the lag-0 coefficient is 1
/// by construction.
pub fn autocorrelation(series: &BinnedSeries, max_lag: usize) -> Result<Vec<f64>> {
    autocorrelation_values(&series.values(), max_lag)
}

pub fn autocorrelation_values(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if values.len() <= max_lag {
        return Err(Error::InsufficientData(format!(
            "series of {} bins cannot support lag {max_lag}",
            values.len()
        )));
    }
    let m = stats::mean(values);
    let denom: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    if denom == 0.0 {
        return Err(Error::InsufficientData(
            "constant series has undefined autocorrelation".into(),
        ));
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    for lag in 1..=max_lag {
        let num: f64 = values[lag..]
            .iter()
            .zip(values)
            .map(|(a, b)| (a - m) * (b - m))
            .sum();
        acf.push(num / denom);
    }
    Ok(acf)
}

/// Variance of the block-aggregated series per block size, the slope of
/// the log10-log10 decay, and the implied Hurst estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarityReport {
    pub block_sizes: Vec<usize>,
    pub variances: Vec<f64>,
    pub slope: f64,
    pub hurst_estimate: f64,
}

/// Geometric block sizes 1, 2, 4, ... capped at a tenth of the length, so
/// the largest size still averages ten or more blocks.
pub fn default_block_sizes(len: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut m = 1usize;
    while m <= len / 10 {
        sizes.push(m);
        m *= 2;
    }
    sizes
}

pub fn variance_time(series: &BinnedSeries, block_sizes: &[usize]) -> Result<SelfSimilarityReport> {
    variance_time_values(&series.values(), block_sizes)
}

pub fn variance_time_values(values: &[f64], block_sizes: &[usize]) -> Result<SelfSimilarityReport> {
    let distinct: std::collections::BTreeSet<usize> = block_sizes.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(
            "variance-time slope needs at least two distinct block sizes".into(),
        ));
    }
    let mut log_m = Vec::new();
    let mut log_var = Vec::new();
    let mut variances = Vec::new();
    let sizes: Vec<usize> = distinct.into_iter().collect();
    for &m in &sizes {
        if m == 0 {
            return Err(Error::InvalidInput("block size must be positive".into()));
        }
        if m > values.len() / 10 {
            return Err(Error::InvalidInput(format!(
                "block size {m} leaves fewer than 10 blocks in {} bins",
                values.len()
            )));
        }
        let blocks = values.len() / m;
        let means: Vec<f64> = (0..blocks)
            .map(|b| stats::mean(&values[b * m..(b + 1) * m]))
            .collect();
        let var = stats::sample_variance(&means);
        if var <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "aggregated series at block size {m} is constant"
            )));
        }
        variances.push(var);
        log_m.push((m as f64).log10());
        log_var.push(var.log10());
    }
    let (slope, _) = stats::linear_fit(&log_m, &log_var)?;
    Ok(SelfSimilarityReport {
        block_sizes: sizes,
        variances,
        slope,
        hurst_estimate: 1.0 + slope / 2.0,
    })
}

/// Knobs for whole-trace characterization.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub bin_width_ms: u64,
    /// Most-active users to gap-fit; 0 skips the (slow) per-user KS pass.
    pub top_k: usize,
    pub max_lag: usize,
    pub ks: KsOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            bin_width_ms: 300_000,
            top_k: 100,
            max_lag: 10,
            ks: KsOptions::default(),
        }
    }
}

/// Everything the `analyze` command reports. Individual fits that cannot
/// be carried out on the given trace are skipped with a note instead of
/// failing the whole analysis.
#[derive(Debug, Clone)]
pub struct Characterization {
    pub range: TimeRange,
    pub events: u64,
    pub users: u64,
    pub bin_width_ms: u64,
    pub activity_lognormal: Option<LogNormalFit>,
    pub activity_powerlaw: Option<PowerLawFit>,
    pub gap_top_k: usize,
    pub gap_lognormal_rate: Option<f64>,
    pub gap_exponential_rate: Option<f64>,
    pub acf: Option<Vec<f64>>,
    pub self_similarity: Option<SelfSimilarityReport>,
    pub notes: Vec<String>,
}

pub fn characterize_trace(trace: &EventTrace, opts: &AnalysisOptions) -> Result<Characterization> {
    opts.ks.validate()?;
    let counts = per_user_counts(trace)?;
    let count_values: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let mut notes = Vec::new();

    let activity_lognormal = match fit_lognormal_with(&count_values, &opts.ks) {
        Ok(fit) => Some(fit),
        Err(e) => {
            notes.push(format!("activity log-normal fit skipped: {e}"));
            None
        }
    };
    let activity_powerlaw = match fit_powerlaw_counts(&count_values) {
        Ok(fit) => Some(fit),
        Err(e) => {
            notes.push(format!("activity power-law fit skipped: {e}"));
            None
        }
    };

    let (gap_lognormal_rate, gap_exponential_rate) = if opts.top_k == 0 {
        (None, None)
    } else {
        let k = opts.top_k.min(counts.len());
        if k < opts.top_k {
            notes.push(format!(
                "gap fits limited to the {k} available writers (asked for {})",
                opts.top_k
            ));
        }
        (
            Some(ks_pass_rate_with(trace, k, GapFamily::LogNormal, &opts.ks)?),
            Some(ks_pass_rate_with(
                trace,
                k,
                GapFamily::Exponential,
                &opts.ks,
            )?),
        )
    };
    let gap_top_k = if opts.top_k == 0 {
        0
    } else {
        opts.top_k.min(counts.len())
    };

    let series = trace.bin(opts.bin_width_ms)?;
    let acf = match autocorrelation(&series, opts.max_lag.min(series.len().saturating_sub(1))) {
        Ok(acf) => Some(acf),
        Err(e) => {
            notes.push(format!("autocorrelation skipped: {e}"));
            None
        }
    };
    let self_similarity = {
        let sizes = default_block_sizes(series.len());
        if sizes.len() < 2 {
            notes.push(format!(
                "variance-time slope skipped: only {} bins at width {} ms",
                series.len(),
                opts.bin_width_ms
            ));
            None
        } else {
            match variance_time(&series, &sizes) {
                Ok(r) => Some(r),
                Err(e) => {
                    notes.push(format!("variance-time slope skipped: {e}"));
                    None
                }
            }
        }
    };

    Ok(Characterization {
        range: trace.range(),
        events: trace.len() as u64,
        users: counts.len() as u64,
        bin_width_ms: opts.bin_width_ms,
        activity_lognormal,
        activity_powerlaw,
        gap_top_k,
        gap_lognormal_rate,
        gap_exponential_rate,
        acf,
        self_similarity,
        notes,
    })
}

impl Characterization {
    pub fn to_document(&self) -> crate::io::Document {
        let mut doc = crate::io::Document::new(crate::io::ANALYSIS_HEADER);
        doc.push("trace", "start_ms", self.range.start_ms());
        doc.push("trace", "end_ms", self.range.end_ms());
        doc.push("trace", "events", self.events);
        doc.push("trace", "users", self.users);
        doc.push("trace", "bin_width_ms", self.bin_width_ms);
        if let Some(f) = &self.activity_lognormal {
            doc.push("activity_lognormal", "mu", f.mu);
            doc.push("activity_lognormal", "sigma", f.sigma);
            doc.push("activity_lognormal", "n", f.n);
            doc.push("activity_lognormal", "ks_stat", f.ks.statistic);
            doc.push("activity_lognormal", "ks_threshold", f.ks.threshold);
            doc.push("activity_lognormal", "ks_pass", f.ks.pass);
        }
        if let Some(f) = &self.activity_powerlaw {
            doc.push("activity_powerlaw", "alpha", f.alpha);
            doc.push("activity_powerlaw", "xmin", f.xmin);
            doc.push("activity_powerlaw", "n_tail", f.n_tail);
            doc.push("activity_powerlaw", "ks_stat", f.ks_stat);
        }
        if self.gap_top_k > 0 {
            doc.push("gaps", "top_k", self.gap_top_k);
            if let Some(r) = self.gap_lognormal_rate {
                doc.push("gaps", "lognormal_pass_rate", r);
            }
            if let Some(r) = self.gap_exponential_rate {
                doc.push("gaps", "exponential_pass_rate", r);
            }
        }
        if let Some(acf) = &self.acf {
            for (lag, v) in acf.iter().enumerate() {
                doc.push("correlation", "acf", format!("{lag},{v}"));
            }
        }
        if let Some(ss) = &self.self_similarity {
            for (m, var) in ss.block_sizes.iter().zip(&ss.variances) {
                doc.push("self_similarity", "point", format!("{m},{var}"));
            }
            doc.push("self_similarity", "slope", ss.slope);
            doc.push("self_similarity", "hurst", ss.hurst_estimate);
        }
        for note in &self.notes {
            doc.push("notes", "note", note);
        }
        doc
    }
}
