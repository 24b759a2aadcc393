//! File formats: traces, graphs, and the sectioned key-value documents
//! used for models, scenarios, and replay reports.
//!
//! All formats are line-oriented UTF-8. The first line is a `#`-prefixed
//! header naming the format and version; later `#` lines and blank lines
//! are ignored. Numbers use plain decimal notation; floats are written
//! with Rust's shortest round-trip formatting, so saving and reloading is
//! lossless.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trace::{EventId, EventTrace, SocialGraph, TimeRange, UserId, WriteEvent};

pub const TRACE_HEADER: &str = "song-trace v1";
pub const GRAPH_HEADER: &str = "song-graph v1";
pub const MODEL_HEADER: &str = "song-model v1";
pub const SCENARIO_HEADER: &str = "song-scenario v1";
pub const REPORT_HEADER: &str = "song-report v1";
pub const TIMESERIES_HEADER: &str = "song-timeseries v1";
pub const COMPARISON_HEADER: &str = "song-comparison v1";
pub const ANALYSIS_HEADER: &str = "song-analysis v1";

/// Loads a trace file: `#song-trace v1 start=<ms> end=<ms>` followed by
/// one `timestamp_ms,user_id,event_id` line per event.
pub fn load_trace(path: impl AsRef<Path>) -> Result<EventTrace> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "empty file, expected trace header")),
    };
    let range = parse_trace_header(path, &header)?;
    let mut events = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let (t, u, id) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(u), Some(id), None) => (t, u, id),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    "expected timestamp_ms,user_id,event_id",
                ))
            }
        };
        events.push(WriteEvent {
            timestamp_ms: parse_field(path, lineno, "timestamp", t)?,
            user: UserId(parse_field(path, lineno, "user id", u)?),
            event: EventId(parse_field(path, lineno, "event id", id)?),
        });
    }
    EventTrace::new(events, range)
}

pub fn write_trace(trace: &EventTrace, mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "#{TRACE_HEADER} start={} end={}",
        trace.range().start_ms(),
        trace.range().end_ms()
    )?;
    for e in trace.events() {
        writeln!(w, "{},{},{}", e.timestamp_ms, e.user, e.event)?;
    }
    w.flush()
}

pub fn save_trace(trace: &EventTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(trace, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn parse_trace_header(path: &Path, header: &str) -> Result<TimeRange> {
    let rest = header
        .strip_prefix('#')
        .and_then(|h| h.strip_prefix(TRACE_HEADER))
        .ok_or_else(|| {
            Error::parse(
                path,
                1,
                format!("expected #{TRACE_HEADER} header, found {header:?}"),
            )
        })?;
    let mut start = None;
    let mut end = None;
    for token in rest.split_whitespace() {
        if let Some(v) = token.strip_prefix("start=") {
            start = Some(parse_field(path, 1, "start", v)?);
        } else if let Some(v) = token.strip_prefix("end=") {
            end = Some(parse_field(path, 1, "end", v)?);
        } else {
            return Err(Error::parse(path, 1, format!("unexpected token {token:?}")));
        }
    }
    match (start, end) {
        (Some(s), Some(e)) => TimeRange::new(s, e),
        _ => Err(Error::parse(
            path,
            1,
            "trace header needs start=<ms> end=<ms>",
        )),
    }
}

/// Loads a follow graph: `#song-graph v1` followed by one
/// `follower_id,followee_id` line per edge.
pub fn load_graph(path: impl AsRef<Path>) -> Result<SocialGraph> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "empty file, expected graph header")),
    };
    if header.strip_prefix('#').map(str::trim) != Some(GRAPH_HEADER) {
        return Err(Error::parse(
            path,
            1,
            format!("expected #{GRAPH_HEADER} header, found {header:?}"),
        ));
    }
    let mut edges = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let (follower, followee) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    "expected follower_id,followee_id",
                ))
            }
        };
        edges.push((
            UserId(parse_field(path, lineno, "follower id", follower)?),
            UserId(parse_field(path, lineno, "followee id", followee)?),
        ));
    }
    SocialGraph::from_edges(edges)
}

pub fn save_graph(graph: &SocialGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(w, "#{GRAPH_HEADER}").map_err(io_err)?;
    for (follower, followee) in graph.edges() {
        writeln!(w, "{follower},{followee}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn parse_field<T: FromStr>(path: &Path, lineno: usize, what: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| {
        Error::parse(
            path,
            lineno,
            format!("{what} is not a valid number: {raw:?}"),
        )
    })
}

/// A sectioned key-value document, the base of the model, scenario, report,
/// and analysis formats.
///
/// ```text
/// #song-model v1
/// [profile]
/// bin_width_ms = 300000
/// component = 7,311.2,-0.41
/// component = 14,148.9,2.11
/// ```
///
/// Section names are unique; keys within a section may repeat (lists such
/// as components or bursts are written as repeated keys, order preserved).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    header: String,
    sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Section {
    name: String,
    entries: Vec<(String, String)>,
}

impl Document {
    pub fn new(header: &str) -> Self {
        Document {
            header: header.to_string(),
            sections: Vec::new(),
        }
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    /// Appends `key = value` to a section, creating the section on first use.
    pub fn push(&mut self, section: &str, key: &str, value: impl ToString) {
        let entry = (key.to_string(), value.to_string());
        match self.sections.iter_mut().find(|s| s.name == section) {
            Some(s) => s.entries.push(entry),
            None => self.sections.push(Section {
                name: section.to_string(),
                entries: vec![entry],
            }),
        }
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|s| s.name == section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.name.as_str())
    }

    /// First value for a key, if present.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.values(section, key).next()
    }

    /// Every value recorded for a key, in file order.
    pub fn values<'a>(&'a self, section: &str, key: &str) -> impl Iterator<Item = &'a str> + 'a {
        let section = section.to_string();
        let key = key.to_string();
        self.sections
            .iter()
            .filter(move |s| s.name == section)
            .flat_map(|s| s.entries.iter())
            .filter(move |(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} document is missing [{section}] {key}",
                self.header
            ))
        })
    }

    /// Parses the first value for a key, failing with location context.
    pub fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self.require(section, key)?;
        raw.parse().map_err(|_| {
            Error::InvalidInput(format!("[{section}] {key} has unparseable value {raw:?}"))
        })
    }

    pub fn parse_optional<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::InvalidInput(format!("[{section}] {key} has unparseable value {raw:?}"))
            }),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#{}", self.header);
        for s in &self.sections {
            let _ = writeln!(out, "\n[{}]", s.name);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, expected_header: &str) -> Result<Self> {
        Self::parse_named(text, expected_header, Path::new("<string>"))
    }

    pub fn load(path: impl AsRef<Path>, expected_header: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, expected_header, path)
    }

    fn parse_named(text: &str, expected_header: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, line)) if line.trim().is_empty() => continue,
                Some((_, line)) => break line.trim(),
                None => {
                    return Err(Error::parse(
                        path,
                        1,
                        format!("empty document, expected #{expected_header}"),
                    ))
                }
            }
        };
        if header.strip_prefix('#').map(str::trim) != Some(expected_header) {
            return Err(Error::parse(
                path,
                1,
                format!("expected #{expected_header} header, found {header:?}"),
            ));
        }
        let mut doc = Document::new(expected_header);
        let mut current: Option<String> = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::parse(path, lineno, format!("unterminated section {line:?}"))
                })?;
                current = Some(name.trim().to_string());
                // Materialize even if it stays empty.
                if !doc.has_section(name.trim()) {
                    doc.sections.push(Section {
                        name: name.trim().to_string(),
                        entries: Vec::new(),
                    });
                }
                continue;
            }
            let section = current.as_deref().ok_or_else(|| {
                Error::parse(path, lineno, format!("{line:?} appears before any section"))
            })?;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    path,
                    lineno,
                    format!("expected key = value, found {line:?}"),
                )
            })?;
            doc.push(section, key.trim(), value.trim());
        }
        Ok(doc)
    }
}
