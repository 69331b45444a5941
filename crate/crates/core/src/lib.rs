//! Simulation and calibration toolkit for nanosecond-scale wavelength
//! switching of a multi-section tunable laser.
//!
//! The crate models the full test bench in software: a phenomenological
//! plant for a 12-section tunable laser ([`plant`]), coherent-receiver
//! signal processing ([`dsp`]), arbitrary-waveform synthesis with
//! pre-emphasis taps ([`waveform`]), a regression optimiser that learns
//! those taps from measured frequency error ([`optimizer`]), ITU channel
//! planning over the laser's tuning map ([`channels`]), and a campaign
//! runner that calibrates every ordered pair of a worst-case channel set
//! and reports switch-time statistics ([`campaign`]).
//!
//! The optimiser only ever sees the plant through the [`optimizer::Testbed`]
//! trait, so the same calibration loop can later drive real hardware.

pub mod campaign;
pub mod channels;
pub mod config;
pub mod dsp;
pub mod optimizer;
pub mod plant;
pub mod report;
pub mod testbed;
pub mod waveform;

use std::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A requested section current lies outside the section's drive range.
    CurrentOutOfRange {
        section: &'static str,
        value_ma: f64,
        min_ma: f64,
        max_ma: f64,
    },
    /// A voltage cannot be mapped back to a section current.
    VoltageOutOfRange {
        section: &'static str,
        value_v: f64,
    },
    /// Front pair index outside 1..=7.
    InvalidFrontPair { pair: u8 },
    /// Pre-emphasis weights with the wrong tap count or sign for their mode.
    InvalidWeights { reason: String },
    /// A capture holds fewer target bursts than the requested average.
    TooFewBursts { have: usize, need: usize },
    /// No seed candidate brought the laser into the receiver band.
    SeedSearchFailed { detail: String },
    /// No feasible placement for an ITU channel frequency.
    InfeasibleChannel { frequency_thz: f64 },
    /// A front pair hosts too few channels to pick min/max rear points.
    TooFewChannels { pair: u8, count: usize },
    /// Report generation needs at least one record.
    EmptyReport,
    /// Two sequences that must agree in length do not.
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    /// Configuration file could not be parsed.
    Config(String),
    /// Underlying I/O failure, stringified to keep the type cloneable.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::CurrentOutOfRange {
                section,
                value_ma,
                min_ma,
                max_ma,
            } => write!(
                f,
                "{section} current {value_ma:.3} mA outside [{min_ma:.1}, {max_ma:.1}] mA"
            ),
            Error::VoltageOutOfRange { section, value_v } => {
                write!(f, "{section} voltage {value_v:.4} V not invertible")
            }
            Error::InvalidFrontPair { pair } => {
                write!(f, "front pair {pair} outside 1..=7")
            }
            Error::InvalidWeights { reason } => write!(f, "invalid weights: {reason}"),
            Error::TooFewBursts { have, need } => {
                write!(f, "capture holds {have} target bursts, need {need}")
            }
            Error::SeedSearchFailed { detail } => write!(f, "seed search failed: {detail}"),
            Error::InfeasibleChannel { frequency_thz } => {
                write!(f, "no feasible placement for {frequency_thz:.5} THz")
            }
            Error::TooFewChannels { pair, count } => {
                write!(f, "front pair {pair} hosts {count} channels, need at least 2")
            }
            Error::EmptyReport => write!(f, "cannot build a report from zero records"),
            Error::LengthMismatch { what, left, right } => {
                write!(f, "{what}: length mismatch {left} vs {right}")
            }
            Error::Config(msg) => write!(f, "config: {msg}"),
            Error::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
