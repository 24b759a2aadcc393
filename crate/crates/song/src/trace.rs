//! Event traces, social graphs, binned series, and trace cleaning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// Identifies a user. Ids are opaque; nothing assumes density or ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Identifies a single write event, unique within a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Half-open observation window `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    start_ms: u64,
    end_ms: u64,
}

impl TimeRange {
    pub fn new(start_ms: u64, end_ms: u64) -> Result<Self> {
        if end_ms <= start_ms {
            return Err(Error::InvalidInput(format!(
                "time range must be non-empty, got [{start_ms}, {end_ms})"
            )));
        }
        Ok(TimeRange { start_ms, end_ms })
    }

    pub fn start_ms(&self) -> u64 {
        self.start_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.end_ms
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn contains(&self, timestamp_ms: u64) -> bool {
        timestamp_ms >= self.start_ms && timestamp_ms < self.end_ms
    }
}

/// One write: a user posted something at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteEvent {
    pub timestamp_ms: u64,
    pub user: UserId,
    pub event: EventId,
}

/// A time-ordered log of writes inside a fixed observation window.
///
/// Construction sorts events by `(timestamp, event id)` and enforces the
/// trace invariants: every timestamp inside the window, event ids unique.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    events: Vec<WriteEvent>,
    range: TimeRange,
}

impl EventTrace {
    pub fn new(mut events: Vec<WriteEvent>, range: TimeRange) -> Result<Self> {
        for e in &events {
            if !range.contains(e.timestamp_ms) {
                return Err(Error::InvalidInput(format!(
                    "event {} at {} ms falls outside [{}, {})",
                    e.event,
                    e.timestamp_ms,
                    range.start_ms(),
                    range.end_ms()
                )));
            }
        }
        events.sort_by_key(|e| (e.timestamp_ms, e.event));
        let mut ids: Vec<u64> = events.iter().map(|e| e.event.0).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate event id {}", w[0])));
        }
        Ok(EventTrace { events, range })
    }

    pub fn events(&self) -> &[WriteEvent] {
        &self.events
    }

    pub fn range(&self) -> TimeRange {
        self.range
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Distinct writers in the trace.
    pub fn user_count(&self) -> usize {
        self.events
            .iter()
            .map(|e| e.user)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Writes per user, keyed in user-id order.
    pub fn user_write_counts(&self) -> BTreeMap<UserId, u64> {
        let mut counts = BTreeMap::new();
        for e in &self.events {
            *counts.entry(e.user).or_insert(0u64) += 1;
        }
        counts
    }

    /// Counts events into fixed-width bins covering the whole window.
    ///
    /// The last bin may be shorter when the window is not a multiple of the
    /// width; every event lands in exactly one bin.
    pub fn bin(&self, bin_width_ms: u64) -> Result<BinnedSeries> {
        if bin_width_ms == 0 {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        let n = self.range.duration_ms().div_ceil(bin_width_ms) as usize;
        let mut counts = vec![0u64; n];
        for e in &self.events {
            let k = ((e.timestamp_ms - self.range.start_ms()) / bin_width_ms) as usize;
            counts[k] += 1;
        }
        Ok(BinnedSeries {
            start_ms: self.range.start_ms(),
            bin_width_ms,
            counts,
        })
    }
}

/// Write counts per fixed-width time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    start_ms: u64,
    bin_width_ms: u64,
    counts: Vec<u64>,
}

impl BinnedSeries {
    pub fn new(start_ms: u64, bin_width_ms: u64, counts: Vec<u64>) -> Result<Self> {
        if bin_width_ms == 0 {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput(
                "binned series must be non-empty".into(),
            ));
        }
        Ok(BinnedSeries {
            start_ms,
            bin_width_ms,
            counts,
        })
    }

    pub fn start_ms(&self) -> u64 {
        self.start_ms
    }

    pub fn bin_width_ms(&self) -> u64 {
        self.bin_width_ms
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start_ms(&self, index: usize) -> u64 {
        self.start_ms + index as u64 * self.bin_width_ms
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.counts.len() as f64
    }
}

/// Directed follow graph: an edge `(a, b)` means `a` follows `b`, so a
/// write by `b` is delivered to `a`.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    // Keyed by followee: who has to receive this user's writes.
    followers: HashMap<UserId, Vec<UserId>>,
    followees: HashMap<UserId, Vec<UserId>>,
    nodes: BTreeSet<UserId>,
    edge_count: u64,
}

impl SocialGraph {
    /// Builds a graph from `(follower, followee)` pairs. Duplicate edges
    /// collapse; a self-follow is rejected.
    pub fn from_edges<I>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (UserId, UserId)>,
    {
        let mut set = BTreeSet::new();
        for (follower, followee) in edges {
            if follower == followee {
                return Err(Error::InvalidInput(format!(
                    "user {follower} cannot follow themselves"
                )));
            }
            set.insert((followee, follower));
        }
        let mut followers: HashMap<UserId, Vec<UserId>> = HashMap::new();
        let mut followees: HashMap<UserId, Vec<UserId>> = HashMap::new();
        let mut nodes = BTreeSet::new();
        let edge_count = set.len() as u64;
        for (followee, follower) in set {
            followers.entry(followee).or_default().push(follower);
            followees.entry(follower).or_default().push(followee);
            nodes.insert(followee);
            nodes.insert(follower);
        }
        for list in followees.values_mut() {
            list.sort_unstable();
        }
        Ok(SocialGraph {
            followers,
            followees,
            nodes,
            edge_count,
        })
    }

    pub fn empty() -> Self {
        SocialGraph {
            followers: HashMap::new(),
            followees: HashMap::new(),
            nodes: BTreeSet::new(),
            edge_count: 0,
        }
    }

    /// Users following `user`, sorted by id. Unknown users are isolated.
    pub fn followers(&self, user: UserId) -> &[UserId] {
        self.followers.get(&user).map_or(&[], Vec::as_slice)
    }

    pub fn followees(&self, user: UserId) -> &[UserId] {
        self.followees.get(&user).map_or(&[], Vec::as_slice)
    }

    pub fn follower_count(&self, user: UserId) -> u64 {
        self.followers(user).len() as u64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> u64 {
        self.edge_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = UserId> + '_ {
        self.nodes.iter().copied()
    }

    /// Edges as `(follower, followee)`, sorted by followee then follower.
    pub fn edges(&self) -> impl Iterator<Item = (UserId, UserId)> + '_ {
        let mut followees: Vec<_> = self.followers.keys().copied().collect();
        followees.sort_unstable();
        followees
            .into_iter()
            .flat_map(move |fe| self.followers(fe).iter().map(move |&fr| (fr, fe)))
    }
}

/// Cutoffs for the bulk-writer filter, frozen so the same rule can be
/// re-applied to other traces (re-applying it to its own output must be a
/// no-op, which recomputing from the filtered trace would not be).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpamThresholds {
    /// Users writing strictly more than this are spam candidates.
    pub write_cutoff: f64,
    /// ...unless they have at least this many followers.
    pub follower_cutoff: f64,
}

/// Result of removing likely-automated writers from a trace.
#[derive(Debug, Clone)]
pub struct SpamFilterOutcome {
    pub trace: EventTrace,
    pub removed: BTreeSet<UserId>,
    pub thresholds: SpamThresholds,
}

/// Default fraction of the maximum per-user volume above which a writer
/// is suspect.
pub const SPAM_WRITE_FRACTION: f64 = 0.8;
/// Default follower-count quantile below which a suspect is removed.
pub const SPAM_FOLLOWER_QUANTILE: f64 = 0.5;

/// Computes filter cutoffs from a trace and its graph.
///
/// The write cutoff is `max_frac` times the largest per-user write count;
/// the follower cutoff is the `follower_quantile` quantile of the writers'
/// follower counts. Heavy writers almost nobody follows are the ones whose
/// volume looks automated rather than popular.
pub fn spam_thresholds(
    trace: &EventTrace,
    graph: &SocialGraph,
    max_frac: f64,
    follower_quantile: f64,
) -> Result<SpamThresholds> {
    if !(0.0..=1.0).contains(&max_frac) || !max_frac.is_finite() {
        return Err(Error::InvalidInput(format!(
            "write fraction must lie in [0, 1], got {max_frac}"
        )));
    }
    if !(0.0..=1.0).contains(&follower_quantile) || !follower_quantile.is_finite() {
        return Err(Error::InvalidInput(format!(
            "follower quantile must lie in [0, 1], got {follower_quantile}"
        )));
    }
    let counts = trace.user_write_counts();
    if counts.is_empty() {
        return Err(Error::InsufficientData(
            "cannot size spam cutoffs on an empty trace".into(),
        ));
    }
    let max_writes = counts.values().copied().max().unwrap_or(0);
    let mut followers: Vec<f64> = counts
        .keys()
        .map(|&u| graph.follower_count(u) as f64)
        .collect();
    followers.sort_by(f64::total_cmp);
    let follower_cutoff = crate::stats::quantile_sorted(&followers, follower_quantile)?;
    Ok(SpamThresholds {
        write_cutoff: max_frac * max_writes as f64,
        follower_cutoff,
    })
}

/// Removes suspect writers with cutoffs computed from this very trace.
/// See [`spam_thresholds`] and [`filter_with_thresholds`].
pub fn filter_spammers(
    trace: &EventTrace,
    graph: &SocialGraph,
    max_frac: f64,
    follower_quantile: f64,
) -> Result<SpamFilterOutcome> {
    let thresholds = spam_thresholds(trace, graph, max_frac, follower_quantile)?;
    filter_with_thresholds(trace, graph, thresholds)
}

/// Removes every user who either (a) wrote strictly more than the write
/// cutoff while having strictly fewer followers than the follower cutoff,
/// or (b) wrote exactly once. Single-write accounts carry no inter-write
/// information and are dominated by drive-by registrations.
pub fn filter_with_thresholds(
    trace: &EventTrace,
    graph: &SocialGraph,
    thresholds: SpamThresholds,
) -> Result<SpamFilterOutcome> {
    let counts = trace.user_write_counts();
    let mut removed = BTreeSet::new();
    for (&user, &writes) in &counts {
        let spammy = (writes as f64) > thresholds.write_cutoff
            && (graph.follower_count(user) as f64) < thresholds.follower_cutoff;
        if spammy || writes == 1 {
            removed.insert(user);
        }
    }
    let kept: Vec<WriteEvent> = trace
        .events()
        .iter()
        .filter(|e| !removed.contains(&e.user))
        .copied()
        .collect();
    let trace = EventTrace::new(kept, trace.range())?;
    Ok(SpamFilterOutcome {
        trace,
        removed,
        thresholds,
    })
}
