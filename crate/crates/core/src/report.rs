//! Campaign reporting: summary statistics and CSV extracts from switch
//! records.
//!
//! Every writer takes the record list in campaign order and emits rows in
//! that order (or sorted by settle time for distribution files), so a rerun
//! with the same configuration and seed reproduces each report byte for
//! byte.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::campaign::SwitchRecord;
use crate::waveform::Edge;
use crate::{Error, Result};

/// Fractional ranks with ties sharing their average rank, starting at 1.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "rank samples",
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::EmptyReport);
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        vx += (a - mean).powi(2);
        vy += (b - mean).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::EmptyReport);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Campaign-level statistics distilled from the record list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub transitions: usize,
    pub failed: usize,
    /// Failed transitions as "src -> dst: message".
    pub failures: Vec<String>,
    /// Rear-stage settle-time statistics at the 10 GHz threshold, ns.
    pub rear_settled: usize,
    pub rear_within_10ns_fraction: f64,
    pub rear_within_20ns_fraction: f64,
    pub rear_p95_ns: f64,
    pub rear_max_ns: f64,
    /// Final-stage (escalation included) statistics, ns.
    pub final_settled: usize,
    pub final_within_10ns_fraction: f64,
    pub final_p95_ns: f64,
    pub final_max_ns: f64,
    pub escalated: usize,
    pub mode_hops_corrected: usize,
    pub hops_unresolved: usize,
    /// Spearman correlation of |rear step| against rear-stage settle time.
    pub step_time_spearman: f64,
    /// Largest |offset| read 15 ns after a switch on a final capture, GHz.
    pub max_offset_at_15ns_ghz: f64,
    pub offsets_at_15ns_read: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Distil the campaign summary. Settle fractions divide by the number of
/// calibrated transitions, so an unsettled transition counts against them.
pub fn summarize(records: &[SwitchRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    let failures: Vec<String> = records
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("{} -> {}: {e}", r.src_index, r.dst_index))
        })
        .collect();
    let cals: Vec<_> = records.iter().filter_map(|r| r.cal.as_ref()).collect();
    let denominator = cals.len().max(1) as f64;

    let mut rear: Vec<f64> = cals.iter().filter_map(|c| c.rear_t10_ns).collect();
    rear.sort_by(f64::total_cmp);
    let mut fin: Vec<f64> = cals.iter().filter_map(|c| c.final_t10_ns).collect();
    fin.sort_by(f64::total_cmp);

    let within = |sorted: &[f64], limit: f64| {
        sorted.iter().take_while(|t| **t <= limit).count() as f64 / denominator
    };

    let mut steps = Vec::new();
    let mut times = Vec::new();
    for r in records {
        if let Some(t) = r.cal.as_ref().and_then(|c| c.rear_t10_ns) {
            steps.push(r.delta_rear_ma.abs());
            times.push(t);
        }
    }

    let offsets: Vec<f64> = cals.iter().filter_map(|c| c.offset_at_15ns_ghz).collect();

    Ok(Summary {
        transitions: records.len(),
        failed: failures.len(),
        failures,
        rear_settled: rear.len(),
        rear_within_10ns_fraction: within(&rear, 10.0),
        rear_within_20ns_fraction: within(&rear, 20.0),
        rear_p95_ns: quantile(&rear, 0.95),
        rear_max_ns: rear.last().copied().unwrap_or(f64::NAN),
        final_settled: fin.len(),
        final_within_10ns_fraction: within(&fin, 10.0),
        final_p95_ns: quantile(&fin, 0.95),
        final_max_ns: fin.last().copied().unwrap_or(f64::NAN),
        escalated: cals.iter().filter(|c| c.escalated).count(),
        mode_hops_corrected: cals.iter().filter(|c| c.mode_hop_corrected).count(),
        hops_unresolved: cals
            .iter()
            .filter(|c| c.phase.as_ref().is_some_and(|p| p.unresolved))
            .count(),
        step_time_spearman: spearman(&steps, &times)?,
        max_offset_at_15ns_ghz: offsets.iter().fold(0.0, |m, o| m.max(o.abs())),
        offsets_at_15ns_read: offsets.len(),
    })
}

/// Write settle-time distributions as `stage,threshold_ghz,time_ns,fraction`
/// rows: both stages, both thresholds, times ascending. Fractions divide by
/// all calibrated transitions, so curves plateau below 1 when some never
/// settle.
pub fn write_cdf_csv<W: Write>(mut w: W, records: &[SwitchRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    writeln!(w, "stage,threshold_ghz,time_ns,fraction")?;
    let cals: Vec<_> = records.iter().filter_map(|r| r.cal.as_ref()).collect();
    let denominator = cals.len().max(1) as f64;
    let groups: [(&str, f64, Box<dyn Fn(&crate::campaign::Calibration) -> Option<f64>>); 4] = [
        ("rear", 10.0, Box::new(|c| c.rear_t10_ns)),
        ("rear", 5.0, Box::new(|c| c.rear_t5_ns)),
        ("final", 10.0, Box::new(|c| c.final_t10_ns)),
        ("final", 5.0, Box::new(|c| c.final_t5_ns)),
    ];
    for (stage, threshold, pick) in &groups {
        let mut times: Vec<f64> = cals.iter().filter_map(|c| pick(c)).collect();
        times.sort_by(f64::total_cmp);
        for (i, t) in times.iter().enumerate() {
            writeln!(
                w,
                "{stage},{threshold},{t:.4},{:.6}",
                (i + 1) as f64 / denominator
            )?;
        }
    }
    Ok(())
}

/// Write the step-size scatter as
/// `src,dst,delta_rear_ma,rear_t10_ns,escalated` rows in campaign order.
/// Transitions that never settled or failed are skipped.
pub fn write_scatter_csv<W: Write>(mut w: W, records: &[SwitchRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    writeln!(w, "src,dst,delta_rear_ma,rear_t10_ns,escalated")?;
    for r in records {
        let Some(cal) = r.cal.as_ref() else { continue };
        let Some(t) = cal.rear_t10_ns else { continue };
        writeln!(
            w,
            "{},{},{:.4},{t:.4},{}",
            r.src_index,
            r.dst_index,
            r.delta_rear_ma,
            u8::from(cal.escalated)
        )?;
    }
    Ok(())
}

/// Write refined rear taps for one edge direction as
/// `src,dst,delta_rear_ma,h1..` rows in campaign order.
pub fn write_weights_csv<W: Write>(mut w: W, records: &[SwitchRecord], edge: Edge) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    let k = match edge {
        Edge::Rising => 2,
        Edge::Falling => 4,
    };
    let header: Vec<String> = (1..=k).map(|i| format!("h{i}")).collect();
    writeln!(w, "src,dst,delta_rear_ma,{}", header.join(","))?;
    for r in records {
        if r.edge != edge {
            continue;
        }
        let Some(cal) = r.cal.as_ref() else { continue };
        let taps: Vec<String> = cal.rear_weights.iter().map(|h| format!("{h:.6}")).collect();
        writeln!(
            w,
            "{},{},{:.4},{}",
            r.src_index,
            r.dst_index,
            r.delta_rear_ma,
            taps.join(",")
        )?;
    }
    Ok(())
}

/// Serialize the full record list as pretty JSON.
pub fn write_records_json<W: Write>(w: W, records: &[SwitchRecord]) -> Result<()> {
    serde_json::to_writer_pretty(w, records).map_err(|e| Error::Io(e.to_string()))
}

/// Read a record list written by [`write_records_json`].
pub fn read_records_json<R: Read>(r: R) -> Result<Vec<SwitchRecord>> {
    serde_json::from_reader(BufReader::new(r)).map_err(|e| Error::Config(e.to_string()))
}

/// Serialize the summary as pretty JSON.
pub fn write_summary_json<W: Write>(w: W, summary: &Summary) -> Result<()> {
    serde_json::to_writer_pretty(w, summary).map_err(|e| Error::Io(e.to_string()))
}

/// Count data rows (excluding the header) of a CSV.
pub fn csv_rows<R: Read>(r: R) -> Result<usize> {
    Ok(BufReader::new(r).lines().count().saturating_sub(1))
}
