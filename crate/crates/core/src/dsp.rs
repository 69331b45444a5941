//! Offset estimation and trace analysis for captured beat signals.
//!
//! The estimator differentiates the beat phase sample-to-sample and smooths
//! the result with a centred 1 ns moving average, so each output sample is
//! an instantaneous frequency offset in GHz. Samples are valid only where
//! the smoothed beat power clears a threshold; offsets are meaningful
//! within the receiver's Nyquist range of +/-25 GHz.
//!
//! Captures hold alternating target and source bursts. Each target burst is
//! estimated on its own slice of the raw record, so burst boundaries never
//! leak through the smoothing window. Aligned bursts average into one
//! representative trace; switch time, mode-hop detection and binned errors
//! run on either per-burst or averaged traces.

use std::io::{BufRead, BufReader, Read, Write};

use crate::plant::RawCapture;
use crate::{Error, Result};

/// Moving-average window for smoothing and power detection, samples (1 ns).
pub const SMOOTH_WINDOW: usize = 50;
/// Smoothed-power floor below which a sample carries no usable offset.
pub const VALIDITY_POWER: f64 = 0.1;
/// Substituted error magnitude for bins with no valid samples, GHz; the
/// Nyquist edge of the receiver.
pub const FALLBACK_GHZ: f64 = 25.0;

/// Frequency-offset trace with per-sample validity.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTrace {
    pub offset_ghz: Vec<f64>,
    pub valid: Vec<bool>,
    pub dt_ns: f64,
}

impl OffsetTrace {
    pub fn len(&self) -> usize {
        self.offset_ghz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset_ghz.is_empty()
    }

    pub fn duration_ns(&self) -> f64 {
        self.len() as f64 * self.dt_ns
    }
}

/// Centred moving average with windows truncated at the ends.
fn smooth(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Estimate per-sample frequency offsets from one contiguous I/Q segment.
pub fn estimate_offsets(iq: &[(f64, f64)], dt_ns: f64) -> OffsetTrace {
    let n = iq.len();
    let mut inst = vec![0.0; n];
    let mut power = vec![0.0; n];
    for i in 0..n {
        let (zi, zq) = iq[i];
        power[i] = zi * zi + zq * zq;
        if i > 0 {
            let (pi, pq) = iq[i - 1];
            // arg(z[i] * conj(z[i-1])) in cycles per sample.
            let re = zi * pi + zq * pq;
            let im = zq * pi - zi * pq;
            inst[i] = im.atan2(re) / (2.0 * std::f64::consts::PI * dt_ns);
        }
    }
    if n > 1 {
        inst[0] = inst[1];
    }
    let offset_ghz = smooth(&inst, SMOOTH_WINDOW);
    let valid = smooth(&power, SMOOTH_WINDOW)
        .iter()
        .map(|p| *p > VALIDITY_POWER)
        .collect();
    OffsetTrace {
        offset_ghz,
        valid,
        dt_ns,
    }
}

/// Estimate the target burst of every period, each from its own I/Q slice.
/// Burst k starts at the k-th source-to-target switch.
pub fn target_bursts(cap: &RawCapture) -> Vec<OffsetTrace> {
    (0..cap.n_periods)
        .map(|k| {
            let lo = k * 2 * cap.samples_per_burst;
            let hi = lo + cap.samples_per_burst;
            estimate_offsets(&cap.iq[lo..hi], cap.dt_ns)
        })
        .collect()
}

/// Average `n_average` aligned bursts sample-by-sample over their valid
/// subsets. A sample of the result is valid when at least half the bursts
/// are valid there.
pub fn average_bursts(bursts: &[OffsetTrace], n_average: usize) -> Result<OffsetTrace> {
    if bursts.len() < n_average || n_average == 0 {
        return Err(Error::TooFewBursts {
            have: bursts.len(),
            need: n_average.max(1),
        });
    }
    let bursts = &bursts[..n_average];
    let n = bursts[0].len();
    for b in bursts {
        if b.len() != n {
            return Err(Error::LengthMismatch {
                what: "burst",
                left: n,
                right: b.len(),
            });
        }
    }
    let quorum = n_average.div_ceil(2);
    let mut offset_ghz = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let mut acc = 0.0;
        let mut count = 0usize;
        for b in bursts {
            if b.valid[i] {
                acc += b.offset_ghz[i];
                count += 1;
            }
        }
        if count >= quorum {
            offset_ghz[i] = acc / count as f64;
            valid[i] = true;
        }
    }
    Ok(OffsetTrace {
        offset_ghz,
        valid,
        dt_ns: bursts[0].dt_ns,
    })
}

/// Earliest time after which the trace stays valid and within
/// `threshold_ghz` of zero for the rest of the burst, ns. `None` when even
/// the last sample has not settled.
pub fn measure_switch_time(trace: &OffsetTrace, threshold_ghz: f64) -> Option<f64> {
    let end = trace.len();
    if end == 0 {
        return None;
    }
    let ok = |i: usize| trace.valid[i] && trace.offset_ghz[i].abs() <= threshold_ghz;
    if !ok(end - 1) {
        return None;
    }
    let mut first = end - 1;
    while first > 0 && ok(first - 1) {
        first -= 1;
    }
    Some(first as f64 * trace.dt_ns)
}

/// Time of the first valid sample, ns.
pub fn first_valid_ns(trace: &OffsetTrace) -> Option<f64> {
    trace
        .valid
        .iter()
        .position(|v| *v)
        .map(|i| i as f64 * trace.dt_ns)
}

/// Time of the first valid sample within `band_ghz` of zero, ns.
pub fn band_entry_ns(trace: &OffsetTrace, band_ghz: f64) -> Option<f64> {
    (0..trace.len())
        .find(|&i| trace.valid[i] && trace.offset_ghz[i].abs() <= band_ghz)
        .map(|i| i as f64 * trace.dt_ns)
}

/// Settled band used as the mode-hop reference, GHz.
pub const HOP_BAND_GHZ: f64 = 10.0;
/// Offset past which a valid sample counts as having left the settled band
/// for a neighbouring mode rather than residual settling, GHz.
pub const HOP_EXCURSION_GHZ: f64 = 32.5;
/// Minimum departure length that counts as a mode transition, ns.
pub const HOP_DWELL_NS: f64 = 2.0;

/// Detect a transient mode hop and return its departure window, ns.
///
/// After the trace first enters the settled band, a hop is a departure
/// (invalid, or valid beyond the excursion limit) lasting at least
/// [`HOP_DWELL_NS`], followed by a return into the band. The window spans
/// from the first departed sample to the sample of return.
pub fn detect_mode_hop(trace: &OffsetTrace) -> Option<(f64, f64)> {
    let in_band = |i: usize| trace.valid[i] && trace.offset_ghz[i].abs() <= HOP_BAND_GHZ;
    let departed = |i: usize| !trace.valid[i] || trace.offset_ghz[i].abs() > HOP_EXCURSION_GHZ;
    let entry = (0..trace.len()).find(|&i| in_band(i))?;
    let min_dwell = (HOP_DWELL_NS / trace.dt_ns).round() as usize;
    let mut run_start: Option<usize> = None;
    let mut run_len = 0usize;
    let mut window_start: Option<usize> = None;
    for i in entry..trace.len() {
        if departed(i) {
            if run_start.is_none() {
                run_start = Some(i);
            }
            run_len += 1;
            if run_len >= min_dwell && window_start.is_none() {
                window_start = run_start;
            }
        } else {
            run_start = None;
            run_len = 0;
            if in_band(i) {
                if let Some(start) = window_start {
                    return Some((start as f64 * trace.dt_ns, i as f64 * trace.dt_ns));
                }
            }
        }
    }
    None
}

/// Mean offset error per correction bin over the leading drive samples of a
/// burst.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinnedError {
    /// Mean offset per bin, GHz; blind bins carry the signed fallback.
    pub e: Vec<f64>,
    /// Bin width, ns.
    pub bin_ns: f64,
    /// Whether each bin held at least one valid sample.
    pub filled: Vec<bool>,
}

impl BinnedError {
    /// True when at least one bin saw a valid sample.
    pub fn any_filled(&self) -> bool {
        self.filled.iter().any(|f| *f)
    }

    /// Largest bin magnitude, GHz.
    pub fn max_abs(&self) -> f64 {
        self.e.iter().fold(0.0, |m, e| m.max(e.abs()))
    }
}

/// Mean offset error in each of the first `k` bins of `bin_ns` each, GHz.
///
/// Bins with no valid samples take the +/-25 GHz fallback: the sign of the
/// next later bin holding a valid mean, otherwise of the nearest earlier
/// one, and +25 when the whole window is blind.
pub fn bin_errors(trace: &OffsetTrace, k: usize, bin_ns: f64) -> BinnedError {
    let per_bin = (bin_ns / trace.dt_ns).round() as usize;
    let mut means: Vec<Option<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let lo = (j * per_bin).min(trace.len());
        let hi = ((j + 1) * per_bin).min(trace.len());
        let mut acc = 0.0;
        let mut count = 0usize;
        for i in lo..hi {
            if trace.valid[i] {
                acc += trace.offset_ghz[i];
                count += 1;
            }
        }
        means.push((count > 0).then(|| acc / count as f64));
    }
    let e = (0..k)
        .map(|j| match means[j] {
            Some(m) => m,
            None => {
                let later = means[j + 1..].iter().flatten().next();
                let earlier = means[..j].iter().rev().flatten().next();
                let sign = later.or(earlier).map(|m| m.signum()).unwrap_or(1.0);
                sign * FALLBACK_GHZ
            }
        })
        .collect();
    BinnedError {
        e,
        bin_ns,
        filled: means.iter().map(|m| m.is_some()).collect(),
    }
}

/// Write a trace as `time_ns,offset_ghz,valid` rows.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &OffsetTrace) -> Result<()> {
    writeln!(w, "time_ns,offset_ghz,valid")?;
    for i in 0..trace.len() {
        writeln!(
            w,
            "{:.4},{:.6},{}",
            i as f64 * trace.dt_ns,
            trace.offset_ghz[i],
            u8::from(trace.valid[i])
        )?;
    }
    Ok(())
}

/// Read a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: Read>(r: R) -> Result<OffsetTrace> {
    let mut offset_ghz = Vec::new();
    let mut valid = Vec::new();
    let mut times = Vec::new();
    for (k, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if k == 0 {
            continue;
        }
        let mut cols = line.split(',');
        let mut next = || {
            cols.next()
                .ok_or_else(|| Error::Config(format!("trace row {k} is short")))
        };
        let t: f64 = next()?
            .parse()
            .map_err(|e| Error::Config(format!("trace row {k}: {e}")))?;
        let off: f64 = next()?
            .parse()
            .map_err(|e| Error::Config(format!("trace row {k}: {e}")))?;
        let v = next()? == "1";
        times.push(t);
        offset_ghz.push(off);
        valid.push(v);
    }
    if times.len() < 2 {
        return Err(Error::Config("trace has fewer than two rows".into()));
    }
    Ok(OffsetTrace {
        offset_ghz,
        valid,
        dt_ns: times[1] - times[0],
    })
}
