//! Gradient adaptation of pre-emphasis taps from binned offset errors.
//!
//! Each tap aligns with one 4 ns drive sample, and each capture yields one
//! mean offset error per tap bin. A tap moves against the product of its
//! bin error and its drive input, so a residual offset whose sign matches
//! the input grows the correction and one that opposes it shrinks it. Bins
//! the receiver cannot read substitute a Nyquist-edge error whose sign is
//! borrowed from the nearest readable bin, which keeps the loop pushing
//! through dropouts instead of stalling on them.
//!
//! The rear section adapts additive taps seeded by a grid search on the
//! first tap; the phase section adapts multiplicative taps from unity.
//! Every tap stays inside a hard magnitude limit, and both sections log
//! their full weight and error trajectories for the calibration record.

use crate::dsp::{bin_errors, first_valid_ns, measure_switch_time, BinnedError, OffsetTrace};
use crate::waveform::{Edge, PreEmphasisWeights};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Gains, grids, and limits for tap adaptation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Rear gradient gain, 1 / (GHz * V).
    pub mu: f64,
    /// Phase gradient gain, 1 / (GHz * V). The phase loop has one capture
    /// window to cancel a comb disturbance, so it converges harder.
    pub phase_mu: f64,
    /// Gradient steps per section after seeding.
    pub n_updates: usize,
    /// Number of rear seed candidates; the first tap sweeps up from zero.
    pub n_seeds: usize,
    /// Rear seed grid spacing.
    pub seed_step: f64,
    /// Error bin width, ns; one bin per tap.
    pub bin_ns: f64,
    /// Settled-band threshold used to judge a finished switch, GHz.
    pub settle_threshold_ghz: f64,
    /// Hard magnitude limit applied to every tap after each update.
    pub tap_limit: f64,
    /// Multiplicative phase taps never drop below this floor.
    pub phase_tap_min: f64,
    /// Largest move a phase tap may make in one update. Substituted errors
    /// from unreadable bins would otherwise stride a tap straight through
    /// the narrow window where the comb is readable again.
    pub phase_step_limit: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            mu: 5e-4,
            phase_mu: 2.5e-3,
            n_updates: 10,
            n_seeds: 10,
            seed_step: 0.2,
            bin_ns: 4.0,
            settle_threshold_ghz: 10.0,
            tap_limit: 3.0,
            phase_tap_min: 0.1,
            phase_step_limit: 0.05,
        }
    }
}

impl OptimizerConfig {
    pub fn validated(&self) -> Result<()> {
        for (name, mu) in [("rear", self.mu), ("phase", self.phase_mu)] {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} gradient gain {mu} must be positive"
                )));
            }
        }
        if self.n_seeds == 0 || !(self.seed_step > 0.0) {
            return Err(Error::Config("rear seed grid is empty".into()));
        }
        if !(self.bin_ns > 0.0) {
            return Err(Error::Config("bin width must be positive".into()));
        }
        if !(self.tap_limit > 0.0) {
            return Err(Error::Config("tap limit must be positive".into()));
        }
        if !(self.phase_tap_min > 0.0 && self.phase_tap_min < self.tap_limit) {
            return Err(Error::Config(format!(
                "phase tap floor {} must sit inside (0, {})",
                self.phase_tap_min, self.tap_limit
            )));
        }
        if !(self.phase_step_limit > 0.0) {
            return Err(Error::Config("phase step limit must be positive".into()));
        }
        Ok(())
    }

    fn seed_grid(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_seeds).map(move |i| i as f64 * self.seed_step)
    }
}

/// One gradient step: `taps[k] -= mu * errors[k] * inputs[k]`, elementwise.
pub fn update_step(taps: &mut [f64], errors_ghz: &[f64], inputs_v: &[f64], mu: f64) -> Result<()> {
    if taps.len() != errors_ghz.len() {
        return Err(Error::LengthMismatch {
            what: "error bins",
            left: taps.len(),
            right: errors_ghz.len(),
        });
    }
    if taps.len() != inputs_v.len() {
        return Err(Error::LengthMismatch {
            what: "tap inputs",
            left: taps.len(),
            right: inputs_v.len(),
        });
    }
    for ((t, e), x) in taps.iter_mut().zip(errors_ghz).zip(inputs_v) {
        *t -= mu * e * x;
    }
    Ok(())
}

/// Clamp every tap into `[lo, hi]`; true when any tap moved.
fn clamp_taps(taps: &mut [f64], lo: f64, hi: f64) -> bool {
    let mut hit = false;
    for t in taps.iter_mut() {
        let c = t.clamp(lo, hi);
        if c != *t {
            *t = c;
            hit = true;
        }
    }
    hit
}

/// Largest loss of a bin's readable fraction tolerated before the tap
/// move behind it is undone.
const READBACK_DROP: f64 = 0.05;

/// Readable fraction of each adaptation bin, over the same samples
/// `bin_errors` averages.
fn bin_valid_fraction(trace: &OffsetTrace, k: usize, bin_ns: f64) -> Vec<f64> {
    let per_bin = (bin_ns / trace.dt_ns).round() as usize;
    (0..k)
        .map(|j| {
            let lo = (j * per_bin).min(trace.len());
            let hi = ((j + 1) * per_bin).min(trace.len());
            if hi == lo {
                return 0.0;
            }
            let valid = trace.valid[lo..hi].iter().filter(|v| **v).count();
            valid as f64 / (hi - lo) as f64
        })
        .collect()
}

/// Rank a measured trace for final tap selection: settle time first,
/// then the count of unreadable samples. Traces that never settle rank
/// as infinite.
fn capture_score(trace: &OffsetTrace, threshold_ghz: f64) -> (f64, usize) {
    let settle = measure_switch_time(trace, threshold_ghz).unwrap_or(f64::INFINITY);
    let dark = trace.valid.iter().filter(|v| !**v).count();
    (settle, dark)
}

/// Clamp every tap to within `limit` of its previous value; true when any
/// tap moved.
fn clamp_deltas(taps: &mut [f64], prev: &[f64], limit: f64) -> bool {
    let mut hit = false;
    for (t, p) in taps.iter_mut().zip(prev) {
        let c = t.clamp(p - limit, p + limit);
        if c != *t {
            *t = c;
            hit = true;
        }
    }
    hit
}

/// Adaptation trajectory of one section: the tap vector before and after
/// every update, and the binned errors that drove each step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adaptation {
    /// Tap vectors, seed first, one entry per update after it.
    pub weight_history: Vec<Vec<f64>>,
    /// Binned errors measured before each update.
    pub error_history: Vec<BinnedError>,
    /// Updates on which a limit or a dark-bin fallback constrained at
    /// least one tap.
    pub clamped_updates: usize,
}

/// Result of seeding and refining the rear taps for one transition.
#[derive(Debug, Clone)]
pub struct RearOptimization {
    pub weights: PreEmphasisWeights,
    /// Winning first-tap seed.
    pub seed_tap: f64,
    /// First readable beat sample the winning seed achieved, ns.
    pub seed_entry_ns: f64,
    pub adaptation: Adaptation,
}

fn rear_taps(edge: Edge, seed: f64) -> Vec<f64> {
    let k = match edge {
        Edge::Rising => 2,
        Edge::Falling => 4,
    };
    let mut taps = vec![0.0; k];
    taps[0] = seed;
    taps
}

/// Adapt the additive rear taps for one transition.
///
/// `measure` applies candidate weights and returns the averaged target
/// trace. Each seed candidate is measured exactly once and ranked on the
/// measured settle time, ties going to the earliest readable beat sample
/// and then to the smaller tap; the search fails only when no candidate
/// produces any readable sample, and the error names the transition
/// through `label`. The winning seed then takes `n_updates` gradient steps
/// with the signed rear swing as every tap's input, so both edge
/// directions adapt with the same rule. The returned taps are the measured
/// vector that settled fastest, unreadable samples breaking ties and later
/// captures winning exact ones; a trailing capture makes the last update
/// eligible.
pub fn optimize_rear<F>(
    cfg: &OptimizerConfig,
    label: &str,
    rear_delta_v: f64,
    mut measure: F,
) -> Result<RearOptimization>
where
    F: FnMut(&PreEmphasisWeights) -> Result<OffsetTrace>,
{
    let edge = Edge::of_delta(rear_delta_v);
    let mut best: Option<(f64, f64, f64)> = None;
    for seed in cfg.seed_grid() {
        let w = PreEmphasisWeights::additive(edge, rear_taps(edge, seed))?;
        let trace = measure(&w)?;
        let Some(entry) = first_valid_ns(&trace) else {
            continue;
        };
        let settle =
            measure_switch_time(&trace, cfg.settle_threshold_ghz).unwrap_or(f64::INFINITY);
        let better = match best {
            None => true,
            Some((bs, be, _)) => settle < bs || (settle == bs && entry < be),
        };
        if better {
            best = Some((settle, entry, seed));
        }
    }
    let Some((_, seed_entry_ns, seed_tap)) = best else {
        return Err(Error::SeedSearchFailed {
            detail: format!(
                "{label}: no rear seed produced a readable beat on a {} edge of {:+.3} V",
                edge.name(),
                rear_delta_v
            ),
        });
    };

    let mut taps = rear_taps(edge, seed_tap);
    let inputs = vec![rear_delta_v; taps.len()];
    let mut adaptation = Adaptation {
        weight_history: vec![taps.clone()],
        error_history: Vec::with_capacity(cfg.n_updates),
        clamped_updates: 0,
    };
    let mut best_score = (f64::INFINITY, usize::MAX);
    let mut best_weights = taps.clone();
    for _ in 0..cfg.n_updates {
        let w = PreEmphasisWeights::additive(edge, taps.clone())?;
        let trace = measure(&w)?;
        let score = capture_score(&trace, cfg.settle_threshold_ghz);
        if score <= best_score {
            best_score = score;
            best_weights = taps.clone();
        }
        let binned = bin_errors(&trace, taps.len(), cfg.bin_ns);
        update_step(&mut taps, &binned.e, &inputs, cfg.mu)?;
        if clamp_taps(&mut taps, -cfg.tap_limit, cfg.tap_limit) {
            adaptation.clamped_updates += 1;
        }
        adaptation.weight_history.push(taps.clone());
        adaptation.error_history.push(binned);
    }
    let w = PreEmphasisWeights::additive(edge, taps.clone())?;
    let trace = measure(&w)?;
    if capture_score(&trace, cfg.settle_threshold_ghz) <= best_score {
        best_weights = taps;
    }
    Ok(RearOptimization {
        weights: PreEmphasisWeights::additive(edge, best_weights)?,
        seed_tap,
        seed_entry_ns,
        adaptation,
    })
}

/// Result of adapting the phase taps for one transition.
#[derive(Debug, Clone)]
pub struct PhaseOptimization {
    pub weights: PreEmphasisWeights,
    pub adaptation: Adaptation,
}

/// Adapt the multiplicative phase taps for one transition, starting from
/// unity. Every step is clamped to `phase_step_limit` around the previous
/// taps and the result into `[phase_tap_min, tap_limit]`.
///
/// The input to every tap is the target phase plateau voltage, so a
/// negative bin error (frequency low, comb pulled down) raises the tap
/// and recentres the comb during the disturbance window.
///
/// Substituted errors may bootstrap a tap whose bin has never read.
/// Corrections must never cost a bin readable samples: each bin's
/// readable fraction is ratcheted, and a tap move that drops the
/// fraction below the ratchet is undone, pinning the tap at the last
/// value that kept the bin readable.
///
/// The returned taps are the measured vector that settled fastest, with
/// unreadable samples breaking ties and later captures winning exact
/// ones; a trailing capture makes the last update eligible.
pub fn optimize_phase<F>(
    cfg: &OptimizerConfig,
    edge: Edge,
    phase_plateau_v: f64,
    mut measure: F,
) -> Result<PhaseOptimization>
where
    F: FnMut(&PreEmphasisWeights) -> Result<OffsetTrace>,
{
    let mut taps = PreEmphasisWeights::unity_multiplicative(edge).taps;
    let inputs = vec![phase_plateau_v; taps.len()];
    let mut adaptation = Adaptation {
        weight_history: vec![taps.clone()],
        error_history: Vec::with_capacity(cfg.n_updates),
        clamped_updates: 0,
    };
    let mut best_tap = taps.clone();
    let mut best_fraction = vec![0.0f64; taps.len()];
    let mut frozen = vec![false; taps.len()];
    let mut best_score = (f64::INFINITY, usize::MAX);
    let mut best_weights = taps.clone();
    for _ in 0..cfg.n_updates {
        let w = PreEmphasisWeights::multiplicative(edge, taps.clone())?;
        let trace = measure(&w)?;
        let score = capture_score(&trace, cfg.settle_threshold_ghz);
        if score <= best_score {
            best_score = score;
            best_weights = taps.clone();
        }
        let fraction = bin_valid_fraction(&trace, taps.len(), cfg.bin_ns);
        let mut constrained = false;
        for k in 0..taps.len() {
            if fraction[k] + READBACK_DROP < best_fraction[k] {
                taps[k] = best_tap[k];
                frozen[k] = true;
                constrained = true;
            } else {
                best_tap[k] = taps[k];
                best_fraction[k] = best_fraction[k].max(fraction[k]);
            }
        }
        let binned = bin_errors(&trace, taps.len(), cfg.bin_ns);
        let prev = taps.clone();
        update_step(&mut taps, &binned.e, &inputs, cfg.phase_mu)?;
        constrained |= clamp_deltas(&mut taps, &prev, cfg.phase_step_limit);
        for k in 0..taps.len() {
            if frozen[k] && taps[k] != best_tap[k] {
                taps[k] = best_tap[k];
                constrained = true;
            }
        }
        if clamp_taps(&mut taps, cfg.phase_tap_min, cfg.tap_limit) || constrained {
            adaptation.clamped_updates += 1;
        }
        adaptation.weight_history.push(taps.clone());
        adaptation.error_history.push(binned);
    }
    let w = PreEmphasisWeights::multiplicative(edge, taps.clone())?;
    let trace = measure(&w)?;
    if capture_score(&trace, cfg.settle_threshold_ghz) <= best_score {
        best_weights = taps;
    }
    Ok(PhaseOptimization {
        weights: PreEmphasisWeights::multiplicative(edge, best_weights)?,
        adaptation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn update_step_matches_the_elementwise_rule_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let n = rng.gen_range(1..=4);
            let mu: f64 = rng.gen_range(1e-6..1e-2);
            let taps: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(-25.0..25.0)).collect();
            let inputs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut got = taps.clone();
            update_step(&mut got, &errors, &inputs, mu).unwrap();
            for k in 0..n {
                let want = taps[k] - mu * errors[k] * inputs[k];
                assert_eq!(got[k].to_bits(), want.to_bits(), "tap {k}");
            }
        }
    }

    #[test]
    fn update_step_worked_example() {
        let mut taps = vec![0.5, 0.2];
        update_step(&mut taps, &[10.0, -5.0], &[1.0, 1.0], 0.001).unwrap();
        assert!((taps[0] - 0.49).abs() < 1e-12);
        assert!((taps[1] - 0.205).abs() < 1e-12);
    }

    #[test]
    fn zero_error_is_an_exact_fixed_point() {
        let before = vec![0.731, -1.25, 2.999, 0.0];
        let mut taps = before.clone();
        for _ in 0..100 {
            update_step(&mut taps, &[0.0; 4], &[1.3; 4], 5e-4).unwrap();
        }
        for (t, b) in taps.iter().zip(&before) {
            assert_eq!(t.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scaling_gain_against_error_leaves_the_trajectory_unchanged() {
        // mu * 8 with errors / 8 multiplies and divides by an exact power
        // of two, so the trajectories agree bit for bit.
        let mut a = vec![0.4, -0.7, 1.1];
        let mut b = a.clone();
        let inputs = [1.9, -0.3, 0.8];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let e: Vec<f64> = (0..3).map(|_| rng.gen_range(-25.0..25.0)).collect();
            let e_scaled: Vec<f64> = e.iter().map(|v| v / 8.0).collect();
            update_step(&mut a, &e, &inputs, 5e-4).unwrap();
            update_step(&mut b, &e_scaled, &inputs, 5e-4 * 8.0).unwrap();
        }
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn update_step_rejects_mismatched_lengths() {
        let mut taps = vec![0.0; 2];
        assert!(update_step(&mut taps, &[1.0], &[1.0, 1.0], 1e-3).is_err());
        assert!(update_step(&mut taps, &[1.0, 1.0], &[1.0], 1e-3).is_err());
    }

    /// Trace whose bins read a constant error everywhere.
    fn flat_error_trace(errors: &[f64]) -> OffsetTrace {
        let per_bin = (4.0 / 0.02) as usize;
        let mut offset = Vec::new();
        for e in errors {
            offset.extend(std::iter::repeat(*e).take(per_bin));
        }
        let n = offset.len();
        OffsetTrace {
            offset_ghz: offset,
            valid: vec![true; n],
            dt_ns: 0.02,
        }
    }

    /// Mark the first `ns` of a trace unreadable.
    fn burn(mut trace: OffsetTrace, ns: f64) -> OffsetTrace {
        let n = ((ns / trace.dt_ns) as usize).min(trace.len());
        for v in trace.valid[..n].iter_mut() {
            *v = false;
        }
        trace
    }

    /// Mark `lo_ns..hi_ns` of a trace unreadable.
    fn burn_window(mut trace: OffsetTrace, lo_ns: f64, hi_ns: f64) -> OffsetTrace {
        let lo = ((lo_ns / trace.dt_ns) as usize).min(trace.len());
        let hi = ((hi_ns / trace.dt_ns) as usize).min(trace.len());
        for v in trace.valid[lo..hi].iter_mut() {
            *v = false;
        }
        trace
    }

    #[test]
    fn rear_seed_takes_the_fastest_settling_candidate_and_ties_go_low() {
        // A burned prefix over flat zeros settles the moment it reads, so
        // the settle ranking dips to a plateau shared by seeds 0.6 and 0.8.
        let entry_ns = |s: f64| (s - 0.7).abs().max(0.1) * 40.0;
        let mut polled = Vec::new();
        let cfg = OptimizerConfig {
            n_updates: 0,
            ..OptimizerConfig::default()
        };
        let result = optimize_rear(&cfg, "test", 0.5, |w| {
            let s = w.taps[0];
            polled.push(s);
            Ok(burn(flat_error_trace(&[0.0, 0.0]), entry_ns(s)))
        })
        .unwrap();
        // Every candidate is measured exactly once, then the returned
        // vector gets its trailing capture.
        assert_eq!(polled.len(), cfg.n_seeds + 1);
        let mut sorted = polled[..cfg.n_seeds].to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), cfg.n_seeds);
        let grid_point = 3.0 * cfg.seed_step;
        assert_eq!(result.seed_tap, grid_point);
        assert!((result.seed_entry_ns - 4.0).abs() < 0.05);
        assert_eq!(result.weights.taps, vec![grid_point, 0.0]);
    }

    #[test]
    fn rear_seed_ranking_prefers_a_fast_settle_over_an_early_entry() {
        // One candidate reads late but lands settled; the rest read from
        // the start yet ring outside the band for three bins.
        let cfg = OptimizerConfig {
            n_updates: 0,
            ..OptimizerConfig::default()
        };
        let winner = 2.0 * cfg.seed_step;
        let result = optimize_rear(&cfg, "test", 0.5, |w| {
            Ok(if w.taps[0] == winner {
                burn(flat_error_trace(&[0.0, 0.0, 0.0, 0.0]), 8.0)
            } else {
                flat_error_trace(&[15.0, 15.0, 15.0, 0.0])
            })
        })
        .unwrap();
        assert_eq!(result.seed_tap, winner);
        assert!((result.seed_entry_ns - 8.0).abs() < 0.05);
    }

    #[test]
    fn rear_search_failure_names_the_transition() {
        let cfg = OptimizerConfig::default();
        let err = optimize_rear(&cfg, "ch 7 -> ch 12", 0.5, |_| {
            Ok(burn(flat_error_trace(&[0.0, 0.0]), 1e9))
        })
        .unwrap_err();
        match err {
            Error::SeedSearchFailed { detail } => {
                assert!(detail.contains("ch 7 -> ch 12"), "{detail}")
            }
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn rear_updates_move_against_the_signed_error() {
        // Falling edge: a positive residual must deepen the undershoot.
        let cfg = OptimizerConfig {
            n_updates: 1,
            ..OptimizerConfig::default()
        };
        let delta_v = -1.5;
        let result = optimize_rear(&cfg, "test", delta_v, |_| {
            Ok(flat_error_trace(&[8.0, 8.0, 8.0, 8.0]))
        })
        .unwrap();
        let expect = 0.0 - cfg.mu * 8.0 * delta_v;
        for (k, t) in result.weights.taps.iter().enumerate().skip(1) {
            assert!((t - expect).abs() < 1e-15, "tap {k} = {t}");
        }
        assert!(result.weights.taps[0] > result.seed_tap);
    }

    #[test]
    fn rear_taps_stop_at_the_magnitude_limit() {
        let cfg = OptimizerConfig {
            mu: 1.0,
            ..OptimizerConfig::default()
        };
        let result = optimize_rear(&cfg, "test", -1.5, |_| {
            Ok(flat_error_trace(&[25.0, 25.0, 25.0, 25.0]))
        })
        .unwrap();
        assert!(result.weights.taps.iter().all(|t| *t == cfg.tap_limit));
        assert_eq!(result.adaptation.clamped_updates, cfg.n_updates);
    }

    #[test]
    fn adaptation_histories_are_complete() {
        let cfg = OptimizerConfig::default();
        let result = optimize_rear(&cfg, "test", 0.5, |_| {
            Ok(flat_error_trace(&[2.0, -1.0]))
        })
        .unwrap();
        let a = &result.adaptation;
        assert_eq!(a.weight_history.len(), cfg.n_updates + 1);
        assert_eq!(a.error_history.len(), cfg.n_updates);
        assert_eq!(a.weight_history[0], vec![result.seed_tap, 0.0]);
        assert!(a.weight_history.iter().all(|w| w.len() == 2));
        assert!(a.error_history.iter().all(|e| e.e.len() == 2));
        // The recorded tail must be the returned weights.
        assert_eq!(a.weight_history.last().unwrap(), &result.weights.taps);
    }

    #[test]
    fn phase_updates_raise_taps_on_low_frequency_and_stay_clamped() {
        let cfg = OptimizerConfig::default();
        let result = optimize_phase(&cfg, Edge::Rising, 1.35, |w| {
            assert_eq!(w.taps.len(), 4);
            Ok(flat_error_trace(&[-5.0, -5.0, -5.0, -5.0]))
        })
        .unwrap();
        let expect = 1.0 + 10.0 * cfg.phase_mu * 5.0 * 1.35;
        for t in &result.weights.taps {
            assert!((t - expect).abs() < 1e-12, "tap {t}");
        }
        assert_eq!(result.adaptation.weight_history.len(), cfg.n_updates + 1);
        assert_eq!(result.adaptation.weight_history[0], vec![1.0; 4]);

        // A huge persistent positive error cannot push taps below the floor.
        let cfg = OptimizerConfig {
            phase_mu: 1.0,
            phase_step_limit: 10.0,
            ..OptimizerConfig::default()
        };
        let result = optimize_phase(&cfg, Edge::Rising, 1.35, |_| {
            Ok(flat_error_trace(&[25.0, 25.0, 25.0, 25.0]))
        })
        .unwrap();
        assert!(result.weights.taps.iter().all(|t| *t == cfg.phase_tap_min));
        assert_eq!(result.adaptation.clamped_updates, cfg.n_updates);
    }

    #[test]
    fn phase_steps_never_exceed_the_trust_region() {
        // A deep persistent error must walk the taps one bounded step per
        // update instead of striding past the readable window.
        let cfg = OptimizerConfig {
            n_updates: 3,
            ..OptimizerConfig::default()
        };
        assert!(cfg.phase_mu * 25.0 * 1.35 > cfg.phase_step_limit);
        let result = optimize_phase(&cfg, Edge::Rising, 1.35, |_| {
            Ok(flat_error_trace(&[-25.0, -25.0, -25.0, -25.0]))
        })
        .unwrap();
        for (i, w) in result.adaptation.weight_history.iter().enumerate() {
            let expect = 1.0 + i as f64 * cfg.phase_step_limit;
            assert!(
                w.iter().all(|t| (t - expect).abs() < 1e-12),
                "update {i}: {w:?}"
            );
        }
        assert_eq!(result.adaptation.clamped_updates, cfg.n_updates);
    }

    #[test]
    fn a_bin_that_goes_dark_after_reading_reverts_its_tap() {
        // Bins 1 and 2 read on the first capture and vanish afterwards;
        // their taps must fall back to the value that produced the reading
        // while the still-readable bins keep adapting. The first capture
        // is also the only one that settles, so it wins the selection.
        let cfg = OptimizerConfig {
            n_updates: 2,
            phase_mu: 1e-3,
            ..OptimizerConfig::default()
        };
        let mut call = 0;
        let result = optimize_phase(&cfg, Edge::Rising, 1.0, |_| {
            call += 1;
            Ok(if call == 1 {
                flat_error_trace(&[-5.0, -5.0, -5.0, -5.0])
            } else {
                burn(flat_error_trace(&[0.0, 0.0, -5.0, -5.0]), 8.0)
            })
        })
        .unwrap();
        let last = result.adaptation.weight_history.last().unwrap();
        let one_step = cfg.phase_mu * 5.0;
        assert!((last[0] - 1.0).abs() < 1e-12, "reverted tap {}", last[0]);
        assert!((last[1] - 1.0).abs() < 1e-12, "reverted tap {}", last[1]);
        assert!((last[2] - (1.0 + 2.0 * one_step)).abs() < 1e-12);
        assert!((last[3] - (1.0 + 2.0 * one_step)).abs() < 1e-12);
        assert_eq!(result.weights.taps, vec![1.0; 4]);
    }

    #[test]
    fn a_tap_move_that_costs_readable_samples_is_undone_and_pinned() {
        // Bin 2 still fills on the second capture, but a quarter of its
        // samples stop reading and its surviving mean keeps the same sign.
        // The ratchet must hand the tap back and hold it there while fully
        // readable bins keep adapting.
        let cfg = OptimizerConfig {
            n_updates: 3,
            phase_mu: 1e-3,
            ..OptimizerConfig::default()
        };
        let mut call = 0;
        let result = optimize_phase(&cfg, Edge::Rising, 1.0, |_| {
            call += 1;
            let trace = flat_error_trace(&[-5.0, -5.0, -5.0, -5.0]);
            Ok(if call == 2 {
                burn_window(trace, 11.0, 12.0)
            } else {
                trace
            })
        })
        .unwrap();
        let taps = &result.weights.taps;
        let one_step = cfg.phase_mu * 5.0;
        assert!((taps[2] - 1.0).abs() < 1e-12, "pinned tap {}", taps[2]);
        for k in [0, 1, 3] {
            assert!((taps[k] - (1.0 + 3.0 * one_step)).abs() < 1e-12);
        }
        assert!(result.adaptation.error_history[1].filled[2]);
        assert!(result.adaptation.clamped_updates >= 2);
    }

    #[test]
    fn blind_bins_inherit_the_sign_of_the_readable_tail() {
        // First two bins invalid, tail reads low: fallback must push all
        // taps up, not freeze the blind ones.
        let cfg = OptimizerConfig {
            n_updates: 1,
            phase_mu: 1e-3,
            ..OptimizerConfig::default()
        };
        let result = optimize_phase(&cfg, Edge::Rising, 1.0, |_| {
            Ok(burn(flat_error_trace(&[0.0, 0.0, -5.0, -5.0]), 8.0))
        })
        .unwrap();
        let taps = &result.weights.taps;
        assert!(taps[0] > 1.0 && taps[1] > 1.0);
        assert!((taps[0] - (1.0 + cfg.phase_mu * 25.0)).abs() < 1e-12);
        assert!((taps[2] - (1.0 + cfg.phase_mu * 5.0)).abs() < 1e-12);
        let errs = &result.adaptation.error_history[0];
        assert_eq!(errs.filled, vec![false, false, true, true]);
    }
}
