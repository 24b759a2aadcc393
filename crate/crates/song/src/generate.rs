//! Synthetic trace generation: counts from the fitted model under
//! optional what-if scenarios, then attribution of each write to a user.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;

use crate::diurnal::{Component, DiurnalModel};
use crate::error::{Error, Result};
use crate::io::Document;
use crate::noise::{derive_seed, NoiseFamily, NoiseModel};
use crate::trace::{BinnedSeries, EventId, EventTrace, TimeRange, UserId, WriteEvent};

// Independent random streams split off the one generation seed.
const STREAM_NOISE: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;
const STREAM_ASSIGN: u64 = 3;
const STREAM_BASELINE: u64 = 4;

/// Log-normal distribution of per-user write volume, used as assignment
/// weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityModel {
    mu: f64,
    sigma: f64,
}

impl ActivityModel {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "activity log-normal needs finite mu and positive sigma, got ({mu}, {sigma})"
            )));
        }
        Ok(ActivityModel { mu, sigma })
    }

    pub fn from_fit(fit: &crate::characterize::LogNormalFit) -> Result<Self> {
        ActivityModel::new(fit.mu, fit.sigma)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Everything needed to synthesize traces: mean profile, noise model,
/// per-user activity distribution, population size, and a default seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    diurnal: DiurnalModel,
    noise: NoiseModel,
    activity: ActivityModel,
    users: u64,
    seed: u64,
}

impl ModelFile {
    pub fn new(
        diurnal: DiurnalModel,
        noise: NoiseModel,
        activity: ActivityModel,
        users: u64,
        seed: u64,
    ) -> Result<Self> {
        if users == 0 {
            return Err(Error::InvalidInput("population must be at least 1".into()));
        }
        Ok(ModelFile {
            diurnal,
            noise,
            activity,
            users,
            seed,
        })
    }

    pub fn diurnal(&self) -> &DiurnalModel {
        &self.diurnal
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn activity(&self) -> ActivityModel {
        self.activity
    }

    pub fn users(&self) -> u64 {
        self.users
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bin_width_ms(&self) -> u64 {
        self.diurnal.bin_width_ms()
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new(crate::io::MODEL_HEADER);
        doc.push("model", "users", self.users);
        doc.push("model", "seed", self.seed);
        doc.push("profile", "bin_width_ms", self.diurnal.bin_width_ms());
        doc.push("profile", "length", self.diurnal.length());
        doc.push("profile", "mean_level", self.diurnal.mean_level());
        doc.push("profile", "energy_fraction", self.diurnal.energy_fraction());
        for c in self.diurnal.components() {
            doc.push(
                "profile",
                "component",
                format!("{},{},{}", c.frequency, c.amplitude, c.phase),
            );
        }
        match self.noise.family() {
            NoiseFamily::Wgn => doc.push("noise", "family", "wgn"),
            NoiseFamily::Fgn { hurst } => {
                doc.push("noise", "family", "fgn");
                doc.push("noise", "hurst", hurst);
            }
        }
        doc.push("noise", "peakedness", self.noise.peakedness());
        doc.push("noise", "seed", self.noise.seed());
        doc.push("activity", "mu", self.activity.mu);
        doc.push("activity", "sigma", self.activity.sigma);
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let users = doc.parse_value("model", "users")?;
        let seed = doc.parse_value("model", "seed")?;
        let bin_width_ms = doc.parse_value("profile", "bin_width_ms")?;
        let length = doc.parse_value("profile", "length")?;
        let mean_level = doc.parse_value("profile", "mean_level")?;
        let energy_fraction = doc.parse_value("profile", "energy_fraction")?;
        let mut components = Vec::new();
        for raw in doc.values("profile", "component") {
            let mut parts = raw.split(',');
            let bad =
                || Error::InvalidInput(format!("component must be k,amplitude,phase: {raw:?}"));
            let frequency = parts.next().ok_or_else(bad)?.trim();
            let amplitude = parts.next().ok_or_else(bad)?.trim();
            let phase = parts.next().ok_or_else(bad)?.trim();
            if parts.next().is_some() {
                return Err(bad());
            }
            components.push(Component {
                frequency: frequency.parse().map_err(|_| bad())?,
                amplitude: amplitude.parse().map_err(|_| bad())?,
                phase: phase.parse().map_err(|_| bad())?,
            });
        }
        let diurnal = DiurnalModel::new(
            bin_width_ms,
            length,
            mean_level,
            components,
            energy_fraction,
        )?;
        let peakedness = doc.parse_value("noise", "peakedness")?;
        let noise_seed = doc.parse_value("noise", "seed")?;
        let noise = match doc.require("noise", "family")? {
            "wgn" => NoiseModel::wgn(peakedness, noise_seed)?,
            "fgn" => NoiseModel::fgn(peakedness, doc.parse_value("noise", "hurst")?, noise_seed)?,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown noise family {other:?} (expected wgn or fgn)"
                )))
            }
        };
        let activity = ActivityModel::new(
            doc.parse_value("activity", "mu")?,
            doc.parse_value("activity", "sigma")?,
        )?;
        ModelFile::new(diurnal, noise, activity, users, seed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_document(&Document::load(path, crate::io::MODEL_HEADER)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_document().save(path)
    }

    /// Content hash of the serialized model, recorded in generation
    /// metadata so a trace can be tied back to the exact model.
    pub fn digest(&self) -> String {
        hex_digest(self.to_document().to_text().as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// A transient extra-load window: adds `rate_per_bin` writes to every bin
/// it covers (proportionally at partial overlaps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub start_ms: u64,
    pub end_ms: u64,
    pub rate_per_bin: f64,
}

/// A copy of the population whose daily rhythm is offset in time, for
/// mixing regions that peak at different hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationShift {
    pub offset_ms: i64,
    /// Fraction (or multiple) of the base mean this population carries.
    pub weight: f64,
}

/// What-if transformations applied on top of a model at generation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Multiplies the mean profile; never applies to burst rates.
    pub mean_scale: f64,
    pub bursts: Vec<Burst>,
    /// Empty means one unshifted population with weight 1.
    pub shifts: Vec<PopulationShift>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            mean_scale: 1.0,
            bursts: Vec::new(),
            shifts: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn with_scale(mut self, mean_scale: f64) -> Self {
        self.mean_scale = mean_scale;
        self
    }

    pub fn with_burst(mut self, burst: Burst) -> Self {
        self.bursts.push(burst);
        self
    }

    pub fn with_shift(mut self, shift: PopulationShift) -> Self {
        self.shifts.push(shift);
        self
    }

    pub fn validate(&self, horizon: TimeRange) -> Result<()> {
        if !(self.mean_scale > 0.0) || !self.mean_scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mean scale must be positive, got {}",
                self.mean_scale
            )));
        }
        for b in &self.bursts {
            if b.start_ms >= b.end_ms {
                return Err(Error::InvalidInput(format!(
                    "burst window [{}, {}) is empty",
                    b.start_ms, b.end_ms
                )));
            }
            if b.start_ms < horizon.start_ms() || b.end_ms > horizon.end_ms() {
                return Err(Error::InvalidInput(format!(
                    "burst [{}, {}) leaves the horizon [{}, {})",
                    b.start_ms,
                    b.end_ms,
                    horizon.start_ms(),
                    horizon.end_ms()
                )));
            }
            if !(b.rate_per_bin >= 0.0) || !b.rate_per_bin.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "burst rate must be non-negative, got {}",
                    b.rate_per_bin
                )));
            }
        }
        for s in &self.shifts {
            if !(s.weight > 0.0) || !s.weight.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "population weight must be positive, got {}",
                    s.weight
                )));
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new(crate::io::SCENARIO_HEADER);
        doc.push("scenario", "mean_scale", self.mean_scale);
        for b in &self.bursts {
            doc.push(
                "scenario",
                "burst",
                format!("{},{},{}", b.start_ms, b.end_ms, b.rate_per_bin),
            );
        }
        for s in &self.shifts {
            doc.push("scenario", "shift", format!("{},{}", s.offset_ms, s.weight));
        }
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let mean_scale = doc.parse_optional("scenario", "mean_scale")?.unwrap_or(1.0);
        let mut bursts = Vec::new();
        for raw in doc.values("scenario", "burst") {
            let bad =
                || Error::InvalidInput(format!("burst must be start_ms,end_ms,rate: {raw:?}"));
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            bursts.push(Burst {
                start_ms: parts[0].parse().map_err(|_| bad())?,
                end_ms: parts[1].parse().map_err(|_| bad())?,
                rate_per_bin: parts[2].parse().map_err(|_| bad())?,
            });
        }
        let mut shifts = Vec::new();
        for raw in doc.values("scenario", "shift") {
            let bad = || Error::InvalidInput(format!("shift must be offset_ms,weight: {raw:?}"));
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(bad());
            }
            shifts.push(PopulationShift {
                offset_ms: parts[0].parse().map_err(|_| bad())?,
                weight: parts[1].parse().map_err(|_| bad())?,
            });
        }
        Ok(ScenarioSpec {
            mean_scale,
            bursts,
            shifts,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_document(&Document::load(path, crate::io::SCENARIO_HEADER)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_document().save(path)
    }

    pub fn digest(&self) -> String {
        hex_digest(self.to_document().to_text().as_bytes())
    }
}

/// How a trace was produced; written into trace-adjacent reports so runs
/// can be reproduced and attributed.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationMeta {
    pub model_digest: Option<String>,
    pub scenario_digest: Option<String>,
    pub seed: u64,
    /// Bins whose pre-rounding value went negative and was pulled to zero.
    pub clamped_bins: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedTrace {
    pub trace: EventTrace,
    pub meta: GenerationMeta,
}

/// Draws the per-bin write counts: scaled, shifted copies of the mean
/// profile, plus sqrt(a * m) times the unit noise, plus burst load, with
/// negatives clamped and values rounded half-to-even. Returns the series
/// and the clamped-bin count.
pub fn generate_counts(
    model: &ModelFile,
    scenario: &ScenarioSpec,
    horizon: TimeRange,
    seed: u64,
) -> Result<(BinnedSeries, usize)> {
    scenario.validate(horizon)?;
    let width = model.bin_width_ms();
    if horizon.duration_ms() % width != 0 {
        return Err(Error::InvalidInput(format!(
            "horizon of {} ms is not a whole number of {} ms bins",
            horizon.duration_ms(),
            width
        )));
    }
    let n = (horizon.duration_ms() / width) as usize;
    let one_population = [PopulationShift {
        offset_ms: 0,
        weight: 1.0,
    }];
    let populations: &[PopulationShift] = if scenario.shifts.is_empty() {
        &one_population
    } else {
        &scenario.shifts
    };

    let noise = model.noise().sample(n, derive_seed(seed, STREAM_NOISE))?;
    let a = model.noise().peakedness();

    let mut burst_load = vec![0.0f64; n];
    for b in &scenario.bursts {
        let first = ((b.start_ms - horizon.start_ms()) / width) as usize;
        let last = ((b.end_ms - 1 - horizon.start_ms()) / width) as usize;
        for (k, load) in burst_load.iter_mut().enumerate().take(last + 1).skip(first) {
            let bin_start = horizon.start_ms() + k as u64 * width;
            let overlap = b.end_ms.min(bin_start + width) - b.start_ms.max(bin_start);
            *load += b.rate_per_bin * overlap as f64 / width as f64;
        }
    }

    let mut counts = Vec::with_capacity(n);
    let mut clamped = 0usize;
    for t in 0..n {
        let mut m = 0.0;
        for p in populations {
            let t_shifted = t as f64 - p.offset_ms as f64 / width as f64;
            m += p.weight * scenario.mean_scale * model.diurnal().evaluate(t_shifted);
        }
        let x = m + (a * m).sqrt() * noise[t] + burst_load[t];
        if x < 0.0 {
            clamped += 1;
        }
        counts.push(x.max(0.0).round_ties_even() as u64);
    }
    let series = BinnedSeries::new(horizon.start_ms(), width, counts)?;
    Ok((series, clamped))
}

fn assign_by_cumulative(
    counts: &BinnedSeries,
    users: &[UserId],
    cumulative: &[f64],
    seed: u64,
    stream: u64,
) -> Result<EventTrace> {
    let total = *cumulative.last().expect("non-empty weights");
    let width = counts.bin_width_ms();
    let mut events = Vec::with_capacity(counts.total() as usize);
    let bin_stream = derive_seed(seed, stream);
    for (k, &count) in counts.counts().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(bin_stream, k as u64));
        let bin_start = counts.bin_start_ms(k);
        for _ in 0..count {
            let u = rng.gen_range(0.0..total);
            let idx = cumulative.partition_point(|&c| c <= u);
            let timestamp_ms = bin_start + rng.gen_range(0..width);
            events.push(WriteEvent {
                timestamp_ms,
                user: users[idx],
                event: EventId(0),
            });
        }
    }
    events.sort_by_key(|e| e.timestamp_ms);
    for (i, e) in events.iter_mut().enumerate() {
        e.event = EventId(i as u64 + 1);
    }
    let end = counts.start_ms() + counts.len() as u64 * width;
    EventTrace::new(events, TimeRange::new(counts.start_ms(), end)?)
}

/// Attributes each counted write to a user by inverse-transform sampling:
/// one log-normal weight per user, then a binary search of the cumulative
/// weight table per event. Timestamps land uniformly inside their bin.
pub fn assign_users(counts: &BinnedSeries, model: &ModelFile, seed: u64) -> Result<GeneratedTrace> {
    let n = model.users();
    let activity = model.activity();
    let dist = LogNormal::new(activity.mu(), activity.sigma())
        .map_err(|e| Error::InvalidInput(format!("activity distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_WEIGHTS));
    let mut cumulative = Vec::with_capacity(n as usize);
    let mut running = 0.0f64;
    for _ in 0..n {
        running += dist.sample(&mut rng);
        cumulative.push(running);
    }
    let users: Vec<UserId> = (1..=n).map(UserId).collect();
    let trace = assign_by_cumulative(counts, &users, &cumulative, seed, STREAM_ASSIGN)?;
    Ok(GeneratedTrace {
        trace,
        meta: GenerationMeta {
            model_digest: Some(model.digest()),
            scenario_digest: None,
            seed,
            clamped_bins: 0,
        },
    })
}

/// Like [`assign_users`] but with caller-supplied weights (degree counts,
/// pagerank scores, or anything else loaded from a weights file).
pub fn assign_with_weights(
    counts: &BinnedSeries,
    weights: &[(UserId, f64)],
    seed: u64,
) -> Result<GeneratedTrace> {
    if weights.is_empty() {
        return Err(Error::InvalidInput("weights list is empty".into()));
    }
    let mut seen = BTreeSet::new();
    let mut users = Vec::with_capacity(weights.len());
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut running = 0.0f64;
    for &(user, w) in weights {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidInput(format!(
                "weight for user {user} must be positive, got {w}"
            )));
        }
        if !seen.insert(user) {
            return Err(Error::InvalidInput(format!(
                "duplicate weight entry for user {user}"
            )));
        }
        users.push(user);
        running += w;
        cumulative.push(running);
    }
    let trace = assign_by_cumulative(counts, &users, &cumulative, seed, STREAM_ASSIGN)?;
    Ok(GeneratedTrace {
        trace,
        meta: GenerationMeta {
            model_digest: None,
            scenario_digest: None,
            seed,
            clamped_bins: 0,
        },
    })
}

/// The common-practice baseline: every write goes to a uniformly random
/// user. Same counts, none of the per-user skew.
pub fn random_baseline(counts: &BinnedSeries, users: u64, seed: u64) -> Result<GeneratedTrace> {
    if users == 0 {
        return Err(Error::InvalidInput("population must be at least 1".into()));
    }
    let width = counts.bin_width_ms();
    let mut events = Vec::with_capacity(counts.total() as usize);
    let bin_stream = derive_seed(seed, STREAM_BASELINE);
    for (k, &count) in counts.counts().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(bin_stream, k as u64));
        let bin_start = counts.bin_start_ms(k);
        for _ in 0..count {
            let user = UserId(rng.gen_range(1..=users));
            let timestamp_ms = bin_start + rng.gen_range(0..width);
            events.push(WriteEvent {
                timestamp_ms,
                user,
                event: EventId(0),
            });
        }
    }
    events.sort_by_key(|e| e.timestamp_ms);
    for (i, e) in events.iter_mut().enumerate() {
        e.event = EventId(i as u64 + 1);
    }
    let end = counts.start_ms() + counts.len() as u64 * width;
    let trace = EventTrace::new(events, TimeRange::new(counts.start_ms(), end)?)?;
    Ok(GeneratedTrace {
        trace,
        meta: GenerationMeta {
            model_digest: None,
            scenario_digest: None,
            seed,
            clamped_bins: 0,
        },
    })
}

/// Counts plus attribution in one call; the usual entry point.
pub fn generate(
    model: &ModelFile,
    scenario: &ScenarioSpec,
    horizon: TimeRange,
    seed: u64,
) -> Result<GeneratedTrace> {
    let (counts, clamped_bins) = generate_counts(model, scenario, horizon, seed)?;
    let mut generated = assign_users(&counts, model, seed)?;
    generated.meta.scenario_digest = Some(scenario.digest());
    generated.meta.clamped_bins = clamped_bins;
    Ok(generated)
}

/// Ready-made model for runs without fitted data: a 24 h wave, a weaker
/// 12 h harmonic, moderate peakedness, and the reference activity
/// distribution.
pub fn default_model(users: u64, seed: u64) -> ModelFile {
    let waves = [
        crate::diurnal::Wave {
            period_s: 86_400.0,
            amplitude: 600.0,
            phase: 0.0,
        },
        crate::diurnal::Wave {
            period_s: 43_200.0,
            amplitude: 200.0,
            phase: 0.0,
        },
    ];
    let (diurnal, _) = crate::diurnal::build_offtheshelf(1_000.0, &waves, 300_000)
        .expect("static template is valid");
    let noise = NoiseModel::wgn(3.4, seed).expect("static template is valid");
    let activity = ActivityModel::new(2.05, 0.9921).expect("static template is valid");
    ModelFile::new(diurnal, noise, activity, users, seed).expect("static template is valid")
}
