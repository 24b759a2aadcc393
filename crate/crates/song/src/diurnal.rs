//! The slowly varying daily mean: a truncated Fourier series fitted from
//! binned counts, or built from scratch out of named waves.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::trace::BinnedSeries;

/// One retained frequency: `amplitude * cos(2 pi k t / length + phase)`.
/// A conjugate DFT pair collapses into one such physical component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    /// Cycles per model length (the DFT bin index k).
    pub frequency: usize,
    pub amplitude: f64,
    pub phase: f64,
}

/// Deterministic mean profile `m_t`, periodic with `length` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DiurnalModel {
    bin_width_ms: u64,
    length: usize,
    mean_level: f64,
    components: Vec<Component>,
    energy_fraction: f64,
}

/// How many frequency components to keep when fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Keep the largest components until they hold this fraction of the
    /// series variance.
    TargetEnergy(f64),
    /// Keep exactly this many (fewer when the spectrum runs out).
    TopK(usize),
}

impl DiurnalModel {
    pub fn new(
        bin_width_ms: u64,
        length: usize,
        mean_level: f64,
        mut components: Vec<Component>,
        energy_fraction: f64,
    ) -> Result<Self> {
        if bin_width_ms == 0 {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        if length == 0 {
            return Err(Error::InvalidInput("model length must be positive".into()));
        }
        if !(mean_level >= 0.0) || !mean_level.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mean level must be finite and non-negative, got {mean_level}"
            )));
        }
        components.sort_by_key(|c| c.frequency);
        for pair in components.windows(2) {
            if pair[0].frequency == pair[1].frequency {
                return Err(Error::InvalidInput(format!(
                    "duplicate frequency index {}",
                    pair[0].frequency
                )));
            }
        }
        for c in &components {
            if c.frequency == 0 || c.frequency > length / 2 {
                return Err(Error::InvalidInput(format!(
                    "frequency index {} outside 1..={} for length {length}",
                    c.frequency,
                    length / 2
                )));
            }
            if !(c.amplitude >= 0.0) || !c.amplitude.is_finite() || !c.phase.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "component at frequency {} has invalid amplitude or phase",
                    c.frequency
                )));
            }
        }
        Ok(DiurnalModel {
            bin_width_ms,
            length,
            mean_level,
            components,
            energy_fraction,
        })
    }

    pub fn bin_width_ms(&self) -> u64 {
        self.bin_width_ms
    }

    /// Bins per period of definition.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn mean_level(&self) -> f64 {
        self.mean_level
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Fraction of the fitted series' variance held by the retained
    /// components (1.0 for built models).
    pub fn energy_fraction(&self) -> f64 {
        self.energy_fraction
    }

    /// The raw series value; may undershoot zero at troughs.
    pub fn evaluate_unclamped(&self, t_bins: f64) -> f64 {
        let w = std::f64::consts::TAU * t_bins / self.length as f64;
        self.mean_level
            + self
                .components
                .iter()
                .map(|c| c.amplitude * (c.frequency as f64 * w + c.phase).cos())
                .sum::<f64>()
    }

    /// Mean writes per bin, clamped to zero; periodic beyond the window.
    pub fn evaluate(&self, t_bins: f64) -> f64 {
        self.evaluate_unclamped(t_bins).max(0.0)
    }

    pub fn evaluate_bins(&self, n: usize) -> Vec<f64> {
        (0..n).map(|t| self.evaluate(t as f64)).collect()
    }
}

pub fn fit_diurnal(series: &BinnedSeries, selection: Selection) -> Result<DiurnalModel> {
    fit_values(&series.values(), series.bin_width_ms(), selection)
}

/// Fits the mean profile by discrete Fourier analysis of the full series:
/// the DC bin becomes `mean_level` and the largest remaining components
/// are kept greedily until the selection rule is satisfied.
pub fn fit_values(values: &[f64], bin_width_ms: u64, selection: Selection) -> Result<DiurnalModel> {
    match selection {
        Selection::TargetEnergy(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "energy target must lie in (0, 1], got {f}"
                )));
            }
        }
        Selection::TopK(k) => {
            if k == 0 {
                return Err(Error::InvalidInput("top_k must be positive".into()));
            }
        }
    }
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "diurnal fit needs at least two bins".into(),
        ));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::InsufficientData(
            "all-zero series has no diurnal structure".into(),
        ));
    }
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mean_level = buf[0].re / n as f64;

    // One candidate per physical frequency; at the Nyquist bin (even n)
    // the conjugate pair degenerates to a single real coefficient.
    struct Candidate {
        frequency: usize,
        amplitude: f64,
        phase: f64,
        energy: f64,
    }
    let mut candidates = Vec::with_capacity(n / 2);
    for k in 1..=n / 2 {
        let coeff = buf[k];
        let (amplitude, energy) = if n % 2 == 0 && k == n / 2 {
            let a = coeff.norm() / n as f64;
            (a, a * a)
        } else {
            let a = 2.0 * coeff.norm() / n as f64;
            (a, a * a / 2.0)
        };
        candidates.push(Candidate {
            frequency: k,
            amplitude,
            phase: coeff.arg(),
            energy,
        });
    }
    let total_energy: f64 = candidates.iter().map(|c| c.energy).sum();
    candidates.sort_by(|a, b| {
        b.energy
            .total_cmp(&a.energy)
            .then(a.frequency.cmp(&b.frequency))
    });

    let mut kept = Vec::new();
    let mut cum = 0.0;
    for c in candidates {
        if c.energy == 0.0 {
            break;
        }
        match selection {
            Selection::TargetEnergy(f) => {
                if total_energy == 0.0 || cum >= (f - 1e-12) * total_energy {
                    break;
                }
            }
            Selection::TopK(k) => {
                if kept.len() == k {
                    break;
                }
            }
        }
        cum += c.energy;
        kept.push(Component {
            frequency: c.frequency,
            amplitude: c.amplitude,
            phase: c.phase,
        });
    }
    let energy_fraction = if total_energy == 0.0 {
        1.0
    } else {
        cum / total_energy
    };
    DiurnalModel::new(bin_width_ms, n, mean_level, kept, energy_fraction)
}

/// A wave requested by period rather than frequency index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub period_s: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Things build_offtheshelf had to adjust; surfaced as warnings.
#[derive(Debug, Clone, PartialEq)]
pub enum BuildNote {
    /// Requested period rounded to a whole number of bins.
    SnappedPeriod { requested_s: f64, snapped_s: f64 },
    /// The wave sum undershoots zero; evaluation clamps the trough.
    ClampedTrough { min_value: f64 },
}

impl std::fmt::Display for BuildNote {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BuildNote::SnappedPeriod {
                requested_s,
                snapped_s,
            } => write!(f, "period {requested_s} s snapped to {snapped_s} s"),
            BuildNote::ClampedTrough { min_value } => write!(
                f,
                "wave sum reaches {min_value} writes/bin; troughs clamp to 0"
            ),
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

const MAX_BUILT_LENGTH: u64 = 10_000_000;

/// Builds a mean profile from named waves. Periods snap to whole bins and
/// the model length becomes their least common multiple; waves landing on
/// the same frequency merge exactly (phasor addition).
pub fn build_offtheshelf(
    mean_level: f64,
    waves: &[Wave],
    bin_width_ms: u64,
) -> Result<(DiurnalModel, Vec<BuildNote>)> {
    if bin_width_ms == 0 {
        return Err(Error::InvalidInput("bin width must be positive".into()));
    }
    if !(mean_level >= 0.0) || !mean_level.is_finite() {
        return Err(Error::InvalidInput(format!(
            "mean level must be finite and non-negative, got {mean_level}"
        )));
    }
    let mut notes = Vec::new();
    let mut period_bins = Vec::with_capacity(waves.len());
    for w in waves {
        if !(w.amplitude >= 0.0) || !w.amplitude.is_finite() {
            return Err(Error::InvalidInput(format!(
                "wave amplitude must be non-negative, got {}",
                w.amplitude
            )));
        }
        if !(w.period_s > 0.0) || !w.period_s.is_finite() {
            return Err(Error::InvalidInput(format!(
                "wave period must be positive, got {} s",
                w.period_s
            )));
        }
        let bins = (w.period_s * 1_000.0 / bin_width_ms as f64)
            .round()
            .max(1.0) as u64;
        let snapped_s = bins as f64 * bin_width_ms as f64 / 1_000.0;
        if (snapped_s - w.period_s).abs() > 1e-9 * w.period_s.max(1.0) {
            notes.push(BuildNote::SnappedPeriod {
                requested_s: w.period_s,
                snapped_s,
            });
        }
        period_bins.push(bins);
    }
    let mut length: u64 = 1;
    for &p in &period_bins {
        length = length / gcd(length, p) * p;
        if length > MAX_BUILT_LENGTH {
            return Err(Error::InvalidInput(format!(
                "wave periods are too incommensurate: common period exceeds \
                 {MAX_BUILT_LENGTH} bins"
            )));
        }
    }
    // Merge same-frequency waves by adding their phasors.
    let mut phasors: std::collections::BTreeMap<usize, Complex<f64>> =
        std::collections::BTreeMap::new();
    for (w, &p) in waves.iter().zip(&period_bins) {
        let k = (length / p) as usize;
        let phasor = Complex::from_polar(w.amplitude, w.phase);
        *phasors.entry(k).or_insert(Complex::new(0.0, 0.0)) += phasor;
    }
    let components: Vec<Component> = phasors
        .into_iter()
        .map(|(k, z)| Component {
            frequency: k,
            amplitude: z.norm(),
            phase: if z.norm() == 0.0 { 0.0 } else { z.arg() },
        })
        .collect();
    let model = DiurnalModel::new(bin_width_ms, length as usize, mean_level, components, 1.0)?;
    let min_value = (0..model.length())
        .map(|t| model.evaluate_unclamped(t as f64))
        .fold(f64::INFINITY, f64::min);
    if min_value < 0.0 {
        notes.push(BuildNote::ClampedTrough { min_value });
    }
    Ok((model, notes))
}
