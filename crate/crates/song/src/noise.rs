//! The stochastic half of the count model: residual extraction and
//! peakedness estimation from data, normality diagnostics, and seeded
//! synthesis of white or fractional Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::diurnal::DiurnalModel;
use crate::error::{Error, Result};
use crate::stats;
use crate::trace::BinnedSeries;

/// Stream-splitting rule: every independent random stream hashes the user
/// seed with a stream index (splitmix-style finalizer), so one `--seed`
/// value fans out into decorrelated generators in a documented way.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bins where the fitted mean is at or below this are excluded from
/// residual normalization (the division by sqrt(mean) blows up).
pub const MEAN_EPSILON: f64 = 1e-6;

const MIN_RESIDUAL_POINTS: usize = 30;
const MIN_NORMALITY_POINTS: usize = 30;

/// 5% critical value for the size-adjusted Anderson-Darling statistic
/// when both mean and variance are estimated from the sample.
pub const AD_CRITICAL_5PCT: f64 = 0.787;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    /// Independent bins.
    Wgn,
    /// Long-range dependent bins; 0.5 < hurst < 1.
    Fgn { hurst: f64 },
}

/// Zero-mean unit-variance bin noise plus the peakedness that scales it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    family: NoiseFamily,
    peakedness: f64,
    seed: u64,
}

impl NoiseModel {
    pub fn wgn(peakedness: f64, seed: u64) -> Result<Self> {
        if !(peakedness >= 0.0) || !peakedness.is_finite() {
            return Err(Error::InvalidInput(format!(
                "peakedness must be finite and non-negative, got {peakedness}"
            )));
        }
        Ok(NoiseModel {
            family: NoiseFamily::Wgn,
            peakedness,
            seed,
        })
    }

    pub fn fgn(peakedness: f64, hurst: f64, seed: u64) -> Result<Self> {
        let base = NoiseModel::wgn(peakedness, seed)?;
        check_hurst(hurst)?;
        Ok(NoiseModel {
            family: NoiseFamily::Fgn { hurst },
            ..base
        })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn peakedness(&self) -> f64 {
        self.peakedness
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unit-variance noise sequence for this family. The peakedness is on
    /// purpose not applied here; the generator owns the sqrt(a * m) scaling.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        match self.family {
            NoiseFamily::Wgn => Ok(sample_wgn(n, seed)),
            NoiseFamily::Fgn { hurst } => sample_fgn(n, hurst, seed),
        }
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(Error::InvalidInput(format!(
            "hurst must lie strictly between 0.5 and 1, got {hurst}"
        )));
    }
    Ok(())
}

/// Normalized deviations of a count series from a fitted mean profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    /// z_t = (x_t - m_t) / sqrt(m_t), for bins where m_t is usable.
    pub values: Vec<f64>,
    pub bin_width_ms: u64,
    /// Bins dropped because the fitted mean was at or below the epsilon.
    pub skipped_bins: usize,
}

/// Subtracts the fitted mean from each bin and rescales by its square
/// root, so under the count model the result has variance `a` everywhere.
pub fn extract_residual(series: &BinnedSeries, model: &DiurnalModel) -> Result<ResidualSeries> {
    if series.bin_width_ms() != model.bin_width_ms() {
        return Err(Error::InvalidInput(format!(
            "series bins are {} ms but the model was fitted at {} ms",
            series.bin_width_ms(),
            model.bin_width_ms()
        )));
    }
    if series.len() != model.length() {
        return Err(Error::InvalidInput(format!(
            "series has {} bins but the model period is {} bins",
            series.len(),
            model.length()
        )));
    }
    let mut values = Vec::with_capacity(series.len());
    let mut skipped_bins = 0;
    for (t, &x) in series.counts().iter().enumerate() {
        let m = model.evaluate(t as f64);
        if m > MEAN_EPSILON {
            values.push((x as f64 - m) / m.sqrt());
        } else {
            skipped_bins += 1;
        }
    }
    Ok(ResidualSeries {
        values,
        bin_width_ms: series.bin_width_ms(),
        skipped_bins,
    })
}

/// Peakedness estimate: the sample variance of the residuals.
pub fn estimate_peakedness(residual: &ResidualSeries) -> Result<f64> {
    if residual.values.len() < MIN_RESIDUAL_POINTS {
        return Err(Error::InsufficientData(format!(
            "peakedness needs at least {MIN_RESIDUAL_POINTS} residual points, got {}",
            residual.values.len()
        )));
    }
    Ok(stats::sample_variance(&residual.values))
}

#[derive(Debug, Clone)]
pub struct NormalityReport {
    /// Anderson-Darling statistic, size-adjusted for estimated parameters.
    pub ad_statistic: f64,
    /// True when the statistic is below [`AD_CRITICAL_5PCT`].
    pub ad_pass: bool,
    pub n: usize,
    /// (theoretical, empirical) standardized quantile pairs for plotting.
    pub qq_points: Vec<(f64, f64)>,
}

pub fn normality_report(residual: &ResidualSeries) -> Result<NormalityReport> {
    normality_check(&residual.values)
}

/// Anderson-Darling test of normality with mean and variance estimated
/// from the sample, plus QQ data against the standard normal.
pub fn normality_check(values: &[f64]) -> Result<NormalityReport> {
    let n = values.len();
    if n < MIN_NORMALITY_POINTS {
        return Err(Error::InsufficientData(format!(
            "normality check needs at least {MIN_NORMALITY_POINTS} points, got {n}"
        )));
    }
    let mean = stats::mean(values);
    let sd = stats::sample_variance(values).sqrt();
    if sd == 0.0 {
        return Err(Error::InsufficientData(
            "constant sample has no distribution shape to test".into(),
        ));
    }
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        // ln(1 - cdf(x)) computed as ln(cdf(-x)) to keep precision in the tail.
        let lo = stats::standard_normal_cdf(z[i]).max(f64::MIN_POSITIVE).ln();
        let hi = stats::standard_normal_cdf(-z[n - 1 - i])
            .max(f64::MIN_POSITIVE)
            .ln();
        sum += (2.0 * i as f64 + 1.0) * (lo + hi);
    }
    let a2 = -nf - sum / nf;
    let adjusted = a2 * (1.0 + 4.0 / nf - 25.0 / (nf * nf));
    let qq_points = z
        .iter()
        .enumerate()
        .map(|(i, &e)| (stats::standard_normal_quantile((i as f64 + 0.5) / nf), e))
        .collect();
    Ok(NormalityReport {
        ad_statistic: adjusted,
        ad_pass: adjusted < AD_CRITICAL_5PCT,
        n,
        qq_points,
    })
}

/// Independent standard normal draws; deterministic in the seed.
pub fn sample_wgn(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Theoretical autocovariance of unit-variance fractional Gaussian noise.
pub fn fgn_autocovariance(hurst: f64, lag: u64) -> f64 {
    let k = lag as f64;
    let p = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(p) - 2.0 * k.powf(p) + (k - 1.0).abs().powf(p))
}

/// Stationary Gaussian sequence with the FGN autocovariance, synthesized
/// exactly by circulant embedding: the covariance is embedded in a
/// circulant matrix whose eigenvalues are the FFT of its first row, and a
/// complex Gaussian vector shaped by those eigenvalues transforms back
/// into the real sample. A rare negative eigenvalue triggers padding.
pub fn sample_fgn(n: usize, hurst: f64, seed: u64) -> Result<Vec<f64>> {
    check_hurst(hurst)?;
    if n <= 1 {
        // Marginals are standard normal; there is no dependence to model.
        return Ok(sample_wgn(n, seed));
    }
    let mut m = n;
    loop {
        match try_embedding(n, m, hurst, seed) {
            Some(sample) => return Ok(sample),
            None => {
                m *= 2;
                if m > 4 * n {
                    return Err(Error::Synthesis(format!(
                        "circulant embedding for hurst {hurst} kept a negative \
                         eigenvalue even after padding to 4x the length"
                    )));
                }
            }
        }
    }
}

fn try_embedding(n: usize, m: usize, hurst: f64, seed: u64) -> Option<Vec<f64>> {
    let big = 2 * m;
    let mut row: Vec<Complex<f64>> = Vec::with_capacity(big);
    for k in 0..=m {
        row.push(Complex::new(fgn_autocovariance(hurst, k as u64), 0.0));
    }
    for k in (1..m).rev() {
        row.push(Complex::new(fgn_autocovariance(hurst, k as u64), 0.0));
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(big);
    fft.process(&mut row);
    let eigs: Vec<f64> = row.iter().map(|c| c.re).collect();
    let max_eig = eigs.iter().fold(0.0f64, |a, &b| a.max(b));
    if eigs.iter().any(|&e| e < -1e-10 * max_eig) {
        return None;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let mut v = vec![Complex::new(0.0, 0.0); big];
    v[0] = Complex::new((eigs[0].max(0.0)).sqrt() * draw(&mut rng), 0.0);
    v[m] = Complex::new((eigs[m].max(0.0)).sqrt() * draw(&mut rng), 0.0);
    for k in 1..m {
        let scale = (eigs[k].max(0.0) / 2.0).sqrt();
        let re = scale * draw(&mut rng);
        let im = scale * draw(&mut rng);
        v[k] = Complex::new(re, im);
        v[big - k] = Complex::new(re, -im);
    }
    fft.process(&mut v);
    let norm = (big as f64).sqrt();
    Some(v[..n].iter().map(|c| c.re / norm).collect())
}
