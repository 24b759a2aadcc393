//! A small pub-sub clone and the load harness that replays traces
//! against it: follow graph, fan-out on write, capped home timelines,
//! and a capacity-limited service model so saturation is observable.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::generate::{self, Burst, ModelFile, ScenarioSpec};
use crate::io::Document;
use crate::noise::derive_seed;
use crate::stats;
use crate::trace::{EventTrace, SocialGraph, TimeRange, UserId, WriteEvent};

/// Home timelines keep this many updates per followee.
pub const TIMELINE_CAP: usize = 20;

/// A report bin counts as saturated when its p95 response time exceeds
/// this multiple of the configured base latency.
pub const SATURATION_FACTOR: f64 = 10.0;

const SHARD_SALT: u64 = 0x7368_6172;

/// Service model of the simulated store: total capacity split evenly
/// across FIFO shards, plus a fixed per-operation base latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendConfig {
    pub capacity_ops_per_sec: f64,
    pub base_latency_us: u64,
    pub shards: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            capacity_ops_per_sec: 1_000.0,
            base_latency_us: 500,
            shards: 1,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_ops_per_sec > 0.0) || !self.capacity_ops_per_sec.is_finite() {
            return Err(Error::InvalidInput(format!(
                "backend capacity must be positive, got {}",
                self.capacity_ops_per_sec
            )));
        }
        if self.shards == 0 {
            return Err(Error::InvalidInput(
                "backend needs at least one shard".into(),
            ));
        }
        Ok(())
    }

    /// Reads the optional `[backend]` section of a scenario or config
    /// document; missing keys keep their defaults.
    pub fn from_document(doc: &Document) -> Result<Self> {
        let defaults = BackendConfig::default();
        let config = BackendConfig {
            capacity_ops_per_sec: doc
                .parse_optional("backend", "capacity_ops_per_sec")?
                .unwrap_or(defaults.capacity_ops_per_sec),
            base_latency_us: doc
                .parse_optional("backend", "base_latency_us")?
                .unwrap_or(defaults.base_latency_us),
            shards: doc
                .parse_optional("backend", "shards")?
                .unwrap_or(defaults.shards),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn write_into(&self, doc: &mut Document) {
        doc.push("backend", "capacity_ops_per_sec", self.capacity_ops_per_sec);
        doc.push("backend", "base_latency_us", self.base_latency_us);
        doc.push("backend", "shards", self.shards);
    }

    fn service_us(&self) -> f64 {
        1_000_000.0 * self.shards as f64 / self.capacity_ops_per_sec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEntry {
    pub timestamp_ms: u64,
    pub author: UserId,
    pub event: crate::trace::EventId,
}

/// The stored state of the clone: per-(reader, followee) timelines and
/// message counters. Service timing lives in the replay harness; this
/// type answers correctness questions (what does a home read return,
/// how many messages were processed).
pub struct CloneBackend<'g> {
    graph: &'g SocialGraph,
    timelines: BTreeMap<(UserId, UserId), VecDeque<TimelineEntry>>,
    writes: u64,
    deliveries: u64,
}

impl<'g> CloneBackend<'g> {
    pub fn new(graph: &'g SocialGraph) -> Self {
        CloneBackend {
            graph,
            timelines: BTreeMap::new(),
            writes: 0,
            deliveries: 0,
        }
    }

    /// Fan-out on write: one store plus one delivery per follower.
    pub fn post(&mut self, event: &WriteEvent) {
        self.writes += 1;
        let entry = TimelineEntry {
            timestamp_ms: event.timestamp_ms,
            author: event.user,
            event: event.event,
        };
        for &follower in self.graph.followers(event.user) {
            let feed = self.timelines.entry((follower, event.user)).or_default();
            if feed.len() == TIMELINE_CAP {
                feed.pop_front();
            }
            feed.push_back(entry);
            self.deliveries += 1;
        }
    }

    /// Newest-first home read: the last [`TIMELINE_CAP`] updates of every
    /// followee, merged.
    pub fn read_home(&self, user: UserId) -> Vec<TimelineEntry> {
        let mut out = Vec::new();
        for &followee in self.graph.followees(user) {
            if let Some(feed) = self.timelines.get(&(user, followee)) {
                out.extend(feed.iter().copied());
            }
        }
        out.sort_by(|a, b| (b.timestamp_ms, b.event.0).cmp(&(a.timestamp_ms, a.event.0)));
        out
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    pub fn deliveries(&self) -> u64 {
        self.deliveries
    }

    pub fn processed_messages(&self) -> u64 {
        self.writes + self.deliveries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Arrivals advance a virtual clock; runs as fast as the math allows
    /// and produces identical reports for any worker count.
    Simulated,
    /// Dispatch is paced against the OS clock (after time scaling).
    /// Timing becomes approximate; conservation still holds.
    WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    /// Divides trace time: 1 replays in real time, 10 is ten times faster.
    pub time_scale: f64,
    /// Width of one report bin on the replay clock.
    pub report_bin_ms: u64,
    pub clock: Clock,
    pub workers: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            time_scale: 1.0,
            report_bin_ms: 5_000,
            clock: Clock::Simulated,
            workers: 1,
        }
    }
}

impl ReplayOptions {
    fn validate(&self) -> Result<()> {
        if !(self.time_scale > 0.0) || !self.time_scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "time scale must be positive, got {}",
                self.time_scale
            )));
        }
        if self.report_bin_ms == 0 {
            return Err(Error::InvalidInput(
                "report bin width must be positive".into(),
            ));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput(
                "worker count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportBin {
    pub start_ms: u64,
    pub offered: u64,
    /// Operations that arrived in this bin and finished inside it.
    pub completed: u64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub mean_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationPoint {
    pub bin_index: usize,
    pub bin_start_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Replay-clock origin, scaled from the trace start.
    pub start_ms: u64,
    pub bin_width_ms: u64,
    pub bins: Vec<ReportBin>,
    pub writes: u64,
    pub deliveries: u64,
    pub total_messages: u64,
    pub base_latency_us: u64,
    /// Offered operations per second over the whole replay.
    pub mean_load: f64,
    pub mean_latency_us: f64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub saturation: Option<SaturationPoint>,
}

impl ReplayReport {
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new(crate::io::REPORT_HEADER);
        doc.push("report", "start_ms", self.start_ms);
        doc.push("report", "bin_width_ms", self.bin_width_ms);
        doc.push("report", "writes", self.writes);
        doc.push("report", "deliveries", self.deliveries);
        doc.push("report", "total_messages", self.total_messages);
        doc.push("report", "base_latency_us", self.base_latency_us);
        doc.push("report", "mean_load_ops_per_sec", self.mean_load);
        doc.push("report", "mean_latency_us", self.mean_latency_us);
        doc.push("report", "p50_us", self.p50_us);
        doc.push("report", "p95_us", self.p95_us);
        doc.push("report", "p99_us", self.p99_us);
        if let Some(sat) = self.saturation {
            doc.push("report", "saturation_bin", sat.bin_index);
            doc.push("report", "saturation_start_ms", sat.bin_start_ms);
        }
        for b in &self.bins {
            doc.push(
                "bins",
                "bin",
                format!(
                    "{},{},{},{},{},{},{}",
                    b.start_ms, b.offered, b.completed, b.p50_us, b.p95_us, b.p99_us, b.mean_us
                ),
            );
        }
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let mut bins = Vec::new();
        for raw in doc.values("bins", "bin") {
            let bad = || {
                Error::InvalidInput(format!(
                    "bin must be start,offered,completed,p50,p95,p99,mean: {raw:?}"
                ))
            };
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != 7 {
                return Err(bad());
            }
            bins.push(ReportBin {
                start_ms: parts[0].parse().map_err(|_| bad())?,
                offered: parts[1].parse().map_err(|_| bad())?,
                completed: parts[2].parse().map_err(|_| bad())?,
                p50_us: parts[3].parse().map_err(|_| bad())?,
                p95_us: parts[4].parse().map_err(|_| bad())?,
                p99_us: parts[5].parse().map_err(|_| bad())?,
                mean_us: parts[6].parse().map_err(|_| bad())?,
            });
        }
        let saturation = match doc.parse_optional("report", "saturation_bin")? {
            Some(bin_index) => Some(SaturationPoint {
                bin_index,
                bin_start_ms: doc.parse_value("report", "saturation_start_ms")?,
            }),
            None => None,
        };
        Ok(ReplayReport {
            start_ms: doc.parse_value("report", "start_ms")?,
            bin_width_ms: doc.parse_value("report", "bin_width_ms")?,
            bins,
            writes: doc.parse_value("report", "writes")?,
            deliveries: doc.parse_value("report", "deliveries")?,
            total_messages: doc.parse_value("report", "total_messages")?,
            base_latency_us: doc.parse_value("report", "base_latency_us")?,
            mean_load: doc.parse_value("report", "mean_load_ops_per_sec")?,
            mean_latency_us: doc.parse_value("report", "mean_latency_us")?,
            p50_us: doc.parse_value("report", "p50_us")?,
            p95_us: doc.parse_value("report", "p95_us")?,
            p99_us: doc.parse_value("report", "p99_us")?,
            saturation,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_document(&Document::load(path, crate::io::REPORT_HEADER)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_document().save(path)
    }

    pub fn timeseries_text(&self) -> String {
        let mut out = format!("#{}\n", crate::io::TIMESERIES_HEADER);
        out.push_str("bin_start_ms,offered,completed,p50_us,p95_us,p99_us\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.start_ms, b.offered, b.completed, b.p50_us, b.p95_us, b.p99_us
            ));
        }
        out
    }

    pub fn save_timeseries(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.timeseries_text()).map_err(|e| Error::io(path, e))
    }
}

fn pct(samples: &[u64], q: f64) -> u64 {
    stats::percentile_u64(samples, q).expect("samples checked non-empty")
}

struct ShardServer {
    next_free_us: f64,
    service_us: f64,
}

impl ShardServer {
    fn serve(&mut self, arrival_us: f64) -> f64 {
        let start = arrival_us.max(self.next_free_us);
        self.next_free_us = start + self.service_us;
        start - arrival_us
    }
}

struct Op {
    arrival_us: f64,
    shard: usize,
}

fn shard_of(user: UserId, shards: usize) -> usize {
    (derive_seed(user.0, SHARD_SALT) % shards as u64) as usize
}

fn build_ops(trace: &EventTrace, graph: &SocialGraph, shards: usize, time_scale: f64) -> Vec<Op> {
    let mut ops = Vec::new();
    for event in trace.events() {
        let arrival_us = event.timestamp_ms as f64 * 1_000.0 / time_scale;
        ops.push(Op {
            arrival_us,
            shard: shard_of(event.user, shards),
        });
        for &follower in graph.followers(event.user) {
            ops.push(Op {
                arrival_us,
                shard: shard_of(follower, shards),
            });
        }
    }
    ops
}

fn simulated_latencies(ops: &[Op], config: &BackendConfig, workers: usize) -> Vec<f64> {
    let mut by_shard: Vec<Vec<usize>> = vec![Vec::new(); config.shards];
    for (i, op) in ops.iter().enumerate() {
        by_shard[op.shard].push(i);
    }
    let mut latencies = vec![0.0f64; ops.len()];
    let service_us = config.service_us();
    let run_shard = |indices: &[usize], out: &mut Vec<(usize, f64)>| {
        let mut server = ShardServer {
            next_free_us: 0.0,
            service_us,
        };
        for &i in indices {
            out.push((i, server.serve(ops[i].arrival_us)));
        }
    };
    if workers <= 1 || config.shards == 1 {
        let mut out = Vec::with_capacity(ops.len());
        for indices in &by_shard {
            run_shard(indices, &mut out);
        }
        for (i, wait) in out {
            latencies[i] = wait;
        }
    } else {
        // Shards are independent queues; splitting them across workers
        // cannot change any per-shard result.
        let next = AtomicUsize::new(0);
        let merged = Mutex::new(Vec::with_capacity(ops.len()));
        std::thread::scope(|scope| {
            for _ in 0..workers.min(config.shards) {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let s = next.fetch_add(1, Ordering::Relaxed);
                        if s >= by_shard.len() {
                            break;
                        }
                        run_shard(&by_shard[s], &mut local);
                    }
                    merged.lock().unwrap().extend(local);
                });
            }
        });
        for (i, wait) in merged.into_inner().unwrap() {
            latencies[i] = wait;
        }
    }
    let base = config.base_latency_us as f64;
    for l in &mut latencies {
        *l += base;
    }
    latencies
}

fn wall_clock_latencies(
    trace: &EventTrace,
    graph: &SocialGraph,
    config: &BackendConfig,
    time_scale: f64,
    workers: usize,
) -> (Vec<Op>, Vec<f64>) {
    let shards = config.shards;
    let events = trace.events();
    let origin_us = trace.range().start_ms() as f64 * 1_000.0 / time_scale;
    let servers: Vec<Mutex<ShardServer>> = (0..shards)
        .map(|_| {
            Mutex::new(ShardServer {
                next_free_us: 0.0,
                service_us: config.service_us(),
            })
        })
        .collect();
    let next_event = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    let started = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut local: Vec<(usize, Op, f64)> = Vec::new();
                loop {
                    let i = next_event.fetch_add(1, Ordering::SeqCst);
                    if i >= events.len() {
                        break;
                    }
                    let event = &events[i];
                    let target_us = event.timestamp_ms as f64 * 1_000.0 / time_scale - origin_us;
                    let now_us = started.elapsed().as_micros() as f64;
                    if now_us < target_us {
                        std::thread::sleep(Duration::from_micros((target_us - now_us) as u64));
                    }
                    let mut users = vec![event.user];
                    users.extend_from_slice(graph.followers(event.user));
                    for (j, &user) in users.iter().enumerate() {
                        let arrival_us = origin_us + started.elapsed().as_micros() as f64;
                        let shard = shard_of(user, shards);
                        let wait = servers[shard].lock().unwrap().serve(arrival_us);
                        let latency = wait + config.base_latency_us as f64;
                        local.push((
                            i * (1 + graph.node_count()) + j,
                            Op { arrival_us, shard },
                            latency,
                        ));
                    }
                }
                results.lock().unwrap().extend(local);
            });
        }
    });
    let mut collected = results.into_inner().unwrap();
    collected.sort_by(|a, b| a.0.cmp(&b.0));
    let mut ops = Vec::with_capacity(collected.len());
    let mut latencies = Vec::with_capacity(collected.len());
    for (_, op, latency) in collected {
        ops.push(op);
        latencies.push(latency);
    }
    (ops, latencies)
}

fn build_report(
    ops: &[Op],
    latencies: &[f64],
    trace: &EventTrace,
    writes: u64,
    deliveries: u64,
    config: &BackendConfig,
    options: &ReplayOptions,
) -> Result<ReplayReport> {
    let start_ms = (trace.range().start_ms() as f64 / options.time_scale).floor() as u64;
    let scaled_end_ms = (trace.range().end_ms() as f64 / options.time_scale).ceil() as u64;
    let width = options.report_bin_ms;
    let mut n_bins =
        ((scaled_end_ms.max(start_ms + 1) - start_ms) as usize).div_ceil(width as usize);
    for op in ops {
        let bin = ((op.arrival_us / 1_000.0 - start_ms as f64) / width as f64) as usize;
        n_bins = n_bins.max(bin + 1);
    }
    let mut offered = vec![0u64; n_bins];
    let mut completed = vec![0u64; n_bins];
    let mut samples: Vec<Vec<u64>> = vec![Vec::new(); n_bins];
    for (op, &latency) in ops.iter().zip(latencies) {
        let rel_ms = op.arrival_us / 1_000.0 - start_ms as f64;
        let bin = (rel_ms / width as f64) as usize;
        offered[bin] += 1;
        let bin_end_us = (start_ms + (bin as u64 + 1) * width) as f64 * 1_000.0;
        if op.arrival_us + latency <= bin_end_us {
            completed[bin] += 1;
        }
        samples[bin].push(latency.round() as u64);
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut saturation = None;
    let threshold = SATURATION_FACTOR * config.base_latency_us as f64;
    for (k, mut lat) in samples.into_iter().enumerate() {
        lat.sort_unstable();
        let bin_start = start_ms + k as u64 * width;
        let (p50, p95, p99, mean) = if lat.is_empty() {
            (0, 0, 0, 0.0)
        } else {
            let mean = lat.iter().sum::<u64>() as f64 / lat.len() as f64;
            (pct(&lat, 0.50), pct(&lat, 0.95), pct(&lat, 0.99), mean)
        };
        if saturation.is_none() && !lat.is_empty() && p95 as f64 > threshold {
            saturation = Some(SaturationPoint {
                bin_index: k,
                bin_start_ms: bin_start,
            });
        }
        bins.push(ReportBin {
            start_ms: bin_start,
            offered: offered[k],
            completed: completed[k],
            p50_us: p50,
            p95_us: p95,
            p99_us: p99,
            mean_us: mean,
        });
    }
    let mut all: Vec<u64> = latencies.iter().map(|l| l.round() as u64).collect();
    all.sort_unstable();
    let (p50_us, p95_us, p99_us, mean_latency_us) = if all.is_empty() {
        (0, 0, 0, 0.0)
    } else {
        (
            pct(&all, 0.50),
            pct(&all, 0.95),
            pct(&all, 0.99),
            all.iter().sum::<u64>() as f64 / all.len() as f64,
        )
    };
    let duration_s = (n_bins as u64 * width) as f64 / 1_000.0;
    Ok(ReplayReport {
        start_ms,
        bin_width_ms: width,
        bins,
        writes,
        deliveries,
        total_messages: writes + deliveries,
        base_latency_us: config.base_latency_us,
        mean_load: ops.len() as f64 / duration_s,
        mean_latency_us,
        p50_us,
        p95_us,
        p99_us,
        saturation,
    })
}

/// Replays a trace against the simulated backend and aggregates response
/// times per report bin. Every operation is queued and measured; nothing
/// is ever dropped.
pub fn replay(
    trace: &EventTrace,
    graph: &SocialGraph,
    config: &BackendConfig,
    options: &ReplayOptions,
) -> Result<ReplayReport> {
    config.validate()?;
    options.validate()?;
    let mut backend = CloneBackend::new(graph);
    for event in trace.events() {
        backend.post(event);
    }
    let (ops, latencies) = match options.clock {
        Clock::Simulated => {
            let ops = build_ops(trace, graph, config.shards, options.time_scale);
            let latencies = simulated_latencies(&ops, config, options.workers);
            (ops, latencies)
        }
        Clock::WallClock => {
            wall_clock_latencies(trace, graph, config, options.time_scale, options.workers)
        }
    };
    build_report(
        &ops,
        &latencies,
        trace,
        backend.writes(),
        backend.deliveries(),
        config,
        options,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampStep {
    pub duration_s: u64,
    pub added_per_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RampSchedule {
    steps: Vec<RampStep>,
}

impl RampSchedule {
    pub fn new(steps: Vec<RampStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidInput("ramp schedule has no steps".into()));
        }
        for s in &steps {
            if s.duration_s == 0 {
                return Err(Error::InvalidInput(
                    "ramp step duration must be positive".into(),
                ));
            }
            if !(s.added_per_s >= 0.0) || !s.added_per_s.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "ramp step rate must be non-negative, got {}",
                    s.added_per_s
                )));
            }
        }
        Ok(RampSchedule { steps })
    }

    /// Parses the flag form `dur_s,add_rate,dur_s,add_rate,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() % 2 != 0 {
            return Err(Error::InvalidInput(
                "ramp needs duration,rate pairs (even number of values)".into(),
            ));
        }
        let mut steps = Vec::new();
        for pair in parts.chunks(2) {
            let duration_s = pair[0]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad ramp duration {:?}", pair[0])))?;
            let added_per_s = pair[1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad ramp rate {:?}", pair[1])))?;
            steps.push(RampStep {
                duration_s,
                added_per_s,
            });
        }
        RampSchedule::new(steps)
    }

    pub fn steps(&self) -> &[RampStep] {
        &self.steps
    }

    pub fn total_duration_s(&self) -> u64 {
        self.steps.iter().map(|s| s.duration_s).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampStepSummary {
    pub added_per_s: f64,
    pub start_ms: u64,
    pub duration_s: u64,
    pub offered_ops_per_sec: f64,
    pub p95_us: u64,
    pub mean_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RampOutcome {
    pub report: ReplayReport,
    pub steps: Vec<RampStepSummary>,
    /// Index into `steps` of the first saturated step, if any.
    pub saturated_step: Option<usize>,
}

/// Generates a trace whose load climbs by the schedule (each step adds
/// writes through the burst mechanism, attributed by the same activity
/// distribution) and replays it.
pub fn ramp_stress(
    model: &ModelFile,
    scenario_base: &ScenarioSpec,
    schedule: &RampSchedule,
    graph: &SocialGraph,
    config: &BackendConfig,
    seed: u64,
    options: &ReplayOptions,
) -> Result<RampOutcome> {
    config.validate()?;
    options.validate()?;
    let width = model.bin_width_ms();
    let total_ms = schedule.total_duration_s() * 1_000;
    if total_ms % width != 0 {
        return Err(Error::InvalidInput(format!(
            "schedule covers {total_ms} ms, not a whole number of {width} ms bins"
        )));
    }
    let mut scenario = scenario_base.clone();
    let mut step_starts_ms = Vec::with_capacity(schedule.steps().len());
    let mut cursor_ms = 0u64;
    for step in schedule.steps() {
        step_starts_ms.push(cursor_ms);
        let end_ms = cursor_ms + step.duration_s * 1_000;
        if step.added_per_s > 0.0 {
            scenario = scenario.with_burst(Burst {
                start_ms: cursor_ms,
                end_ms,
                rate_per_bin: step.added_per_s * width as f64 / 1_000.0,
            });
        }
        cursor_ms = end_ms;
    }
    let horizon = TimeRange::new(0, total_ms)?;
    let generated = generate::generate(model, &scenario, horizon, seed)?;

    let trace = &generated.trace;
    let mut backend = CloneBackend::new(graph);
    for event in trace.events() {
        backend.post(event);
    }
    let (ops, latencies) = match options.clock {
        Clock::Simulated => {
            let ops = build_ops(trace, graph, config.shards, options.time_scale);
            let latencies = simulated_latencies(&ops, config, options.workers);
            (ops, latencies)
        }
        Clock::WallClock => {
            wall_clock_latencies(trace, graph, config, options.time_scale, options.workers)
        }
    };
    let report = build_report(
        &ops,
        &latencies,
        trace,
        backend.writes(),
        backend.deliveries(),
        config,
        options,
    )?;

    // Pool raw latencies per step for the trajectory summary.
    let mut steps = Vec::with_capacity(schedule.steps().len());
    for (i, step) in schedule.steps().iter().enumerate() {
        let start_us = step_starts_ms[i] as f64 * 1_000.0 / options.time_scale;
        let end_us =
            (step_starts_ms[i] + step.duration_s * 1_000) as f64 * 1_000.0 / options.time_scale;
        let mut pooled: Vec<u64> = ops
            .iter()
            .zip(&latencies)
            .filter(|(op, _)| op.arrival_us >= start_us && op.arrival_us < end_us)
            .map(|(_, &l)| l.round() as u64)
            .collect();
        pooled.sort_unstable();
        let (p95, mean) = if pooled.is_empty() {
            (0, 0.0)
        } else {
            (
                pct(&pooled, 0.95),
                pooled.iter().sum::<u64>() as f64 / pooled.len() as f64,
            )
        };
        steps.push(RampStepSummary {
            added_per_s: step.added_per_s,
            start_ms: step_starts_ms[i],
            duration_s: step.duration_s,
            offered_ops_per_sec: pooled.len() as f64 / step.duration_s as f64 * options.time_scale,
            p95_us: p95,
            mean_us: mean,
        });
    }
    let saturated_step = report.saturation.map(|sat| {
        let sat_trace_ms = sat.bin_start_ms as f64 * options.time_scale;
        match step_starts_ms
            .iter()
            .rposition(|&s| (s as f64) <= sat_trace_ms + 1e-9)
        {
            Some(i) => i,
            None => 0,
        }
    });
    Ok(RampOutcome {
        report,
        steps,
        saturated_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDiff {
    pub left: f64,
    pub right: f64,
    /// (right - left) / left; zero when both sides are zero.
    pub relative: f64,
}

impl MetricDiff {
    fn new(left: f64, right: f64) -> Self {
        let relative = if left == right {
            0.0
        } else if left == 0.0 {
            f64::INFINITY
        } else {
            (right - left) / left
        };
        MetricDiff {
            left,
            right,
            relative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonSummary {
    pub mean_load: MetricDiff,
    pub p95_latency: MetricDiff,
    pub total_messages: MetricDiff,
}

impl ComparisonSummary {
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new(crate::io::COMPARISON_HEADER);
        for (name, m) in [
            ("mean_load", self.mean_load),
            ("p95_latency", self.p95_latency),
            ("total_messages", self.total_messages),
        ] {
            doc.push(name, "left", m.left);
            doc.push(name, "right", m.right);
            doc.push(name, "relative", m.relative);
        }
        doc
    }
}

/// Relative differences between two replay reports covering the same
/// horizon.
pub fn compare(left: &ReplayReport, right: &ReplayReport) -> Result<ComparisonSummary> {
    if left.start_ms != right.start_ms
        || left.bin_width_ms != right.bin_width_ms
        || left.bins.len() != right.bins.len()
    {
        return Err(Error::InvalidInput(format!(
            "reports cover different horizons: {} bins of {} ms from {} vs {} bins of {} ms from {}",
            left.bins.len(),
            left.bin_width_ms,
            left.start_ms,
            right.bins.len(),
            right.bin_width_ms,
            right.start_ms
        )));
    }
    Ok(ComparisonSummary {
        mean_load: MetricDiff::new(left.mean_load, right.mean_load),
        p95_latency: MetricDiff::new(left.p95_us as f64, right.p95_us as f64),
        total_messages: MetricDiff::new(left.total_messages as f64, right.total_messages as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EventId, TimeRange};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(edges: &[(u64, u64)]) -> SocialGraph {
        let pairs: Vec<(UserId, UserId)> =
            edges.iter().map(|&(f, e)| (UserId(f), UserId(e))).collect();
        SocialGraph::from_edges(pairs).unwrap()
    }

    fn trace_of(events: &[(u64, u64)], end_ms: u64) -> EventTrace {
        let events: Vec<WriteEvent> = events
            .iter()
            .enumerate()
            .map(|(i, &(ts, user))| WriteEvent {
                timestamp_ms: ts,
                user: UserId(user),
                event: EventId(i as u64 + 1),
            })
            .collect();
        EventTrace::new(events, TimeRange::new(0, end_ms).unwrap()).unwrap()
    }

    fn uniform_trace(rate_per_s: u64, seconds: u64, users: u64, seed: u64) -> EventTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        let mut id = 1;
        for s in 0..seconds {
            for _ in 0..rate_per_s {
                events.push(WriteEvent {
                    timestamp_ms: s * 1_000 + rng.gen_range(0..1_000),
                    user: UserId(rng.gen_range(1..=users)),
                    event: EventId(id),
                });
                id += 1;
            }
        }
        EventTrace::new(events, TimeRange::new(0, seconds * 1_000).unwrap()).unwrap()
    }

    #[test]
    fn one_write_three_followers_four_messages() {
        let g = graph(&[(2, 1), (3, 1), (4, 1)]);
        let t = trace_of(&[(100, 1)], 1_000);
        let report = replay(&t, &g, &BackendConfig::default(), &ReplayOptions::default()).unwrap();
        assert_eq!(report.writes, 1);
        assert_eq!(report.deliveries, 3);
        assert_eq!(report.total_messages, 4);
    }

    #[test]
    fn conservation_matches_per_event_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut edges = Vec::new();
        for follower in 1..=30u64 {
            for followee in 1..=30u64 {
                if follower != followee && rng.gen_bool(0.15) {
                    edges.push((follower, followee));
                }
            }
        }
        let g = graph(&edges);
        let t = uniform_trace(20, 10, 30, 9);
        let report = replay(&t, &g, &BackendConfig::default(), &ReplayOptions::default()).unwrap();
        let expected: u64 = t
            .events()
            .iter()
            .map(|e| 1 + g.follower_count(e.user))
            .sum();
        assert_eq!(report.total_messages, expected);
        assert_eq!(report.writes, t.len() as u64);
        let offered: u64 = report.bins.iter().map(|b| b.offered).sum();
        assert_eq!(offered, expected);
    }

    #[test]
    fn home_read_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut edges = Vec::new();
        for follower in 1..=40u64 {
            for followee in 1..=40u64 {
                if follower != followee && rng.gen_bool(0.1) {
                    edges.push((follower, followee));
                }
            }
        }
        let g = graph(&edges);
        let t = uniform_trace(50, 12, 40, 4);
        let mut backend = CloneBackend::new(&g);
        for e in t.events() {
            backend.post(e);
        }
        for reader in 1..=40u64 {
            let reader = UserId(reader);
            let mut expected = Vec::new();
            for &followee in g.followees(reader) {
                let mut theirs: Vec<&WriteEvent> =
                    t.events().iter().filter(|e| e.user == followee).collect();
                theirs.sort_by_key(|e| (e.timestamp_ms, e.event.0));
                for e in theirs.iter().rev().take(TIMELINE_CAP) {
                    expected.push(TimelineEntry {
                        timestamp_ms: e.timestamp_ms,
                        author: e.user,
                        event: e.event,
                    });
                }
            }
            expected.sort_by(|a, b| (b.timestamp_ms, b.event.0).cmp(&(a.timestamp_ms, a.event.0)));
            assert_eq!(backend.read_home(reader), expected, "reader {reader}");
        }
    }

    #[test]
    fn timeline_caps_at_twenty() {
        let g = graph(&[(2, 1)]);
        let events: Vec<(u64, u64)> = (0..30).map(|i| (i * 10, 1)).collect();
        let t = trace_of(&events, 1_000);
        let mut backend = CloneBackend::new(&g);
        for e in t.events() {
            backend.post(e);
        }
        let home = backend.read_home(UserId(2));
        assert_eq!(home.len(), TIMELINE_CAP);
        assert_eq!(home[0].timestamp_ms, 290);
        assert_eq!(home.last().unwrap().timestamp_ms, 100);
    }

    #[test]
    fn light_traffic_latency_stays_near_base() {
        let g = SocialGraph::empty();
        let t = uniform_trace(10, 30, 5, 2);
        let config = BackendConfig {
            capacity_ops_per_sec: 1_000.0,
            base_latency_us: 500,
            shards: 1,
        };
        let report = replay(&t, &g, &config, &ReplayOptions::default()).unwrap();
        for b in &report.bins {
            if b.offered > 0 {
                assert!(
                    (b.p95_us as f64) <= 1.2 * 500.0,
                    "p95 {} in bin {}",
                    b.p95_us,
                    b.start_ms
                );
            }
        }
        assert!(report.saturation.is_none());
    }

    #[test]
    fn report_invariants_hold_per_bin() {
        let g = graph(&[(2, 1), (3, 1), (1, 2), (3, 2)]);
        let t = uniform_trace(80, 20, 3, 6);
        let config = BackendConfig {
            capacity_ops_per_sec: 150.0,
            base_latency_us: 1_000,
            shards: 2,
        };
        let report = replay(&t, &g, &config, &ReplayOptions::default()).unwrap();
        let mut cum_offered = 0u64;
        let mut cum_completed = 0u64;
        for b in &report.bins {
            assert!(b.completed <= b.offered, "bin {}", b.start_ms);
            assert!(
                b.p50_us <= b.p95_us && b.p95_us <= b.p99_us,
                "bin {}",
                b.start_ms
            );
            cum_offered += b.offered;
            cum_completed += b.completed;
            assert!(cum_completed <= cum_offered);
        }
        assert!(report.p50_us <= report.p95_us && report.p95_us <= report.p99_us);
    }

    #[test]
    fn overload_is_flagged_and_underload_is_not() {
        let g = SocialGraph::empty();
        // Base far above sub-capacity queueing jitter, so only a real
        // backlog can cross the ten-times-base line.
        let config = BackendConfig {
            capacity_ops_per_sec: 100.0,
            base_latency_us: 100_000,
            shards: 1,
        };
        let hot = uniform_trace(200, 60, 10, 12);
        let report = replay(&hot, &g, &config, &ReplayOptions::default()).unwrap();
        assert!(report.saturation.is_some());
        let cool = uniform_trace(40, 60, 10, 12);
        let report = replay(&cool, &g, &config, &ReplayOptions::default()).unwrap();
        assert!(report.saturation.is_none());
    }

    #[test]
    fn worker_count_cannot_change_a_simulated_report() {
        let g = graph(&[(2, 1), (3, 1), (4, 2), (1, 3), (2, 3)]);
        let t = uniform_trace(60, 15, 4, 20);
        let config = BackendConfig {
            capacity_ops_per_sec: 120.0,
            base_latency_us: 800,
            shards: 8,
        };
        let base = ReplayOptions::default();
        let one = replay(&t, &g, &config, &ReplayOptions { workers: 1, ..base }).unwrap();
        let four = replay(&t, &g, &config, &ReplayOptions { workers: 4, ..base }).unwrap();
        let many = replay(
            &t,
            &g,
            &config,
            &ReplayOptions {
                workers: 13,
                ..base
            },
        )
        .unwrap();
        assert_eq!(one, four);
        assert_eq!(one, many);
    }

    #[test]
    fn time_scale_preserves_message_totals() {
        let g = graph(&[(2, 1), (3, 1)]);
        let t = uniform_trace(30, 20, 3, 5);
        let config = BackendConfig::default();
        let real = replay(&t, &g, &config, &ReplayOptions::default()).unwrap();
        let fast = replay(
            &t,
            &g,
            &config,
            &ReplayOptions {
                time_scale: 1_000.0,
                ..ReplayOptions::default()
            },
        )
        .unwrap();
        assert_eq!(real.total_messages, fast.total_messages);
        assert_eq!(real.writes, fast.writes);
        assert!(fast.bins.len() < real.bins.len());
    }

    #[test]
    fn wall_clock_keeps_conservation() {
        let g = graph(&[(2, 1), (3, 1)]);
        let t = uniform_trace(25, 2, 3, 7);
        let config = BackendConfig::default();
        let simulated = replay(&t, &g, &config, &ReplayOptions::default()).unwrap();
        let walled = replay(
            &t,
            &g,
            &config,
            &ReplayOptions {
                clock: Clock::WallClock,
                time_scale: 50.0,
                workers: 3,
                ..ReplayOptions::default()
            },
        )
        .unwrap();
        assert_eq!(walled.total_messages, simulated.total_messages);
        let offered: u64 = walled.bins.iter().map(|b| b.offered).sum();
        assert_eq!(offered, simulated.total_messages);
    }

    #[test]
    fn ramp_saturates_where_rate_crosses_capacity() {
        let model = ramp_model(10.0);
        let schedule = RampSchedule::new(vec![
            RampStep {
                duration_s: 30,
                added_per_s: 0.0,
            },
            RampStep {
                duration_s: 30,
                added_per_s: 20.0,
            },
            RampStep {
                duration_s: 30,
                added_per_s: 60.0,
            },
        ])
        .unwrap();
        let config = BackendConfig {
            capacity_ops_per_sec: 50.0,
            base_latency_us: 100_000,
            shards: 1,
        };
        let outcome = ramp_stress(
            &model,
            &ScenarioSpec::default(),
            &schedule,
            &SocialGraph::empty(),
            &config,
            4,
            &ReplayOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.saturated_step, Some(2), "{:?}", outcome.steps);
        assert!(outcome.steps[0].offered_ops_per_sec < 15.0);
        assert!(outcome.steps[2].offered_ops_per_sec > 60.0);
    }

    fn ramp_model(mean_per_s: f64) -> ModelFile {
        let diurnal =
            crate::diurnal::DiurnalModel::new(1_000, 60, mean_per_s, vec![], 1.0).unwrap();
        let noise = crate::noise::NoiseModel::wgn(0.0, 0).unwrap();
        let activity = crate::generate::ActivityModel::new(2.05, 0.9921).unwrap();
        ModelFile::new(diurnal, noise, activity, 50, 0).unwrap()
    }

    #[test]
    fn calm_ramp_never_saturates() {
        let model = ramp_model(5.0);
        let schedule = RampSchedule::new(vec![
            RampStep {
                duration_s: 20,
                added_per_s: 0.0,
            },
            RampStep {
                duration_s: 20,
                added_per_s: 5.0,
            },
        ])
        .unwrap();
        let config = BackendConfig {
            capacity_ops_per_sec: 100.0,
            base_latency_us: 50_000,
            shards: 1,
        };
        let outcome = ramp_stress(
            &model,
            &ScenarioSpec::default(),
            &schedule,
            &SocialGraph::empty(),
            &config,
            4,
            &ReplayOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.saturated_step, None);
        assert!(outcome.report.saturation.is_none());
    }

    #[test]
    fn empty_schedule_is_rejected() {
        assert!(RampSchedule::new(vec![]).is_err());
        assert!(RampSchedule::new(vec![RampStep {
            duration_s: 0,
            added_per_s: 1.0
        }])
        .is_err());
        assert!(RampSchedule::new(vec![RampStep {
            duration_s: 1,
            added_per_s: -1.0
        }])
        .is_err());
    }

    #[test]
    fn ramp_flag_form_parses() {
        let s = RampSchedule::parse("300,0,300,25,300,50").unwrap();
        assert_eq!(s.steps().len(), 3);
        assert_eq!(s.steps()[1].added_per_s, 25.0);
        assert_eq!(s.total_duration_s(), 900);
        assert!(RampSchedule::parse("300,0,300").is_err());
        assert!(RampSchedule::parse("").is_err());
    }

    #[test]
    fn compare_report_with_itself_is_zero() {
        let g = graph(&[(2, 1)]);
        let t = uniform_trace(10, 10, 2, 1);
        let report = replay(&t, &g, &BackendConfig::default(), &ReplayOptions::default()).unwrap();
        let summary = compare(&report, &report).unwrap();
        assert_eq!(summary.mean_load.relative, 0.0);
        assert_eq!(summary.p95_latency.relative, 0.0);
        assert_eq!(summary.total_messages.relative, 0.0);
    }

    #[test]
    fn compare_rejects_mismatched_horizons() {
        let g = SocialGraph::empty();
        let short = uniform_trace(10, 10, 2, 1);
        let long = uniform_trace(10, 20, 2, 1);
        let config = BackendConfig::default();
        let a = replay(&short, &g, &config, &ReplayOptions::default()).unwrap();
        let b = replay(&long, &g, &config, &ReplayOptions::default()).unwrap();
        let err = compare(&a, &b).unwrap_err().to_string();
        assert!(err.contains("different horizons"), "{err}");
    }

    #[test]
    fn report_document_round_trips() {
        let g = graph(&[(2, 1), (3, 2)]);
        let t = uniform_trace(50, 12, 3, 15);
        let config = BackendConfig {
            capacity_ops_per_sec: 60.0,
            base_latency_us: 700,
            shards: 2,
        };
        let report = replay(&t, &g, &config, &ReplayOptions::default()).unwrap();
        let back = ReplayReport::from_document(&report.to_document()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn timeseries_has_the_fixed_columns() {
        let g = SocialGraph::empty();
        let t = uniform_trace(5, 10, 2, 3);
        let report = replay(&t, &g, &BackendConfig::default(), &ReplayOptions::default()).unwrap();
        let text = report.timeseries_text();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "#song-timeseries v1");
        assert_eq!(
            lines.next().unwrap(),
            "bin_start_ms,offered,completed,p50_us,p95_us,p99_us"
        );
        for line in lines {
            assert_eq!(line.split(',').count(), 6, "{line}");
        }
        assert_eq!(text.lines().count(), 2 + report.bins.len());
    }

    #[test]
    fn backend_config_reads_from_scenario_document() {
        let mut doc = Document::new(crate::io::SCENARIO_HEADER);
        doc.push("scenario", "mean_scale", 1.0);
        let defaults = BackendConfig::from_document(&doc).unwrap();
        assert_eq!(defaults, BackendConfig::default());
        let custom = BackendConfig {
            capacity_ops_per_sec: 250.0,
            base_latency_us: 900,
            shards: 4,
        };
        custom.write_into(&mut doc);
        assert_eq!(BackendConfig::from_document(&doc).unwrap(), custom);
    }
}
