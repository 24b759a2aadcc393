//! Write-activity modeling for social feed workloads.
//!
//! This crate turns a log of timestamped user writes into a compact
//! statistical model, synthesizes new traces from that model (optionally
//! under what-if scenarios), and replays traces against a simulated
//! fan-out-on-write feed backend to find its saturation point.
//!
//! The model splits binned write counts into a deterministic daily profile
//! plus stochastic bin noise,
//!
//! ```text
//! x_t = m_t + sqrt(a * m_t) * w_t + i_t
//! ```
//!
//! where `m_t` is a truncated Fourier series over the day, `a` is the
//! peakedness of the residual, `w_t` is zero-mean unit-variance noise
//! (white or self-similar), and `i_t` is an optional scenario term for
//! flash events. Per-user write volumes get a fitted heavy-tailed
//! distribution so synthetic events can be attributed to synthetic users.
//!
//! Everything downstream of a seed is deterministic: the same model,
//! scenario, and seed always produce byte-identical traces and reports.

pub mod characterize;
pub mod diurnal;
mod error;
pub mod generate;
pub mod io;
pub mod noise;
pub mod replay;
pub mod stats;
pub mod trace;

pub mod cli;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;

/// Seed used by every entry point when the caller does not supply one.
///
/// Spells "SONG" in ASCII. Invented constants would do just as well; this
/// one is merely easy to recognize in reports.
pub const DEFAULT_SEED: u64 = 0x534F_4E47;
