//! ITU grid planning: operating points for every channel and the reduced
//! switching set used by the switching campaign.
//!
//! Placement works back from the target frequency. The front pair and its
//! scaled-grating current position the grating peak coarsely, the rear
//! current closes the remaining gap, and the phase current centres a
//! cavity mode on the result. Grating currents are quantised to AWG codes
//! before the phase current is solved, so the only residual error left is
//! the phase quantisation step scaled down by the pulling factor.

use crate::plant::TuningMap;
use crate::waveform::{OperatingPoint, Section, SectionCurrents, N_FRONT_PAIRS};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Frequency grid to plan: `count` channels from `first_ghz` upward.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub first_ghz: f64,
    pub spacing_ghz: f64,
    pub count: usize,
    /// Rear drive ceiling for a valid placement, mA.
    pub max_rear_ma: f64,
    /// Largest tolerable settled frequency error, GHz.
    pub max_static_error_ghz: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            first_ghz: 190_650.0,
            spacing_ghz: 50.0,
            count: 122,
            max_rear_ma: 47.5,
            max_static_error_ghz: 0.3,
        }
    }
}

/// One planned channel: grid position, drive currents, and the settled
/// frequency error those currents leave behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Channel {
    pub index: usize,
    pub frequency_ghz: f64,
    pub op: OperatingPoint,
    pub static_error_ghz: f64,
}

/// Plan drive currents for every channel of the grid.
pub fn plan_channels(map: &TuningMap, grid: &GridConfig) -> Result<Vec<Channel>> {
    (0..grid.count)
        .map(|index| {
            let frequency_ghz = grid.first_ghz + index as f64 * grid.spacing_ghz;
            let op = place(map, frequency_ghz, grid)?;
            let static_error_ghz = map.steady_frequency_ghz(&op) - frequency_ghz;
            if static_error_ghz.abs() > grid.max_static_error_ghz {
                return Err(Error::InfeasibleChannel {
                    frequency_thz: frequency_ghz / 1000.0,
                });
            }
            Ok(Channel {
                index,
                frequency_ghz,
                op,
                static_error_ghz,
            })
        })
        .collect()
}

/// Solve one frequency: pair, then front, then rear, then phase.
fn place(map: &TuningMap, frequency_ghz: f64, grid: &GridConfig) -> Result<OperatingPoint> {
    let infeasible = || Error::InfeasibleChannel {
        frequency_thz: frequency_ghz / 1000.0,
    };
    let q_target = frequency_ghz - map.base_ghz;
    if q_target < 0.0 {
        return Err(infeasible());
    }
    let pair = ((q_target / map.pair_step_ghz) as usize + 1).min(usize::from(N_FRONT_PAIRS)) as u8;
    let residual = q_target - (pair - 1) as f64 * map.pair_step_ghz;

    // Front sweep absorbs the residual first; the rear closes the rest.
    let front_ghz = residual.min(map.front_span_ghz);
    let front_ma = Section::FrontEven.quantize_current_ma(5.0 * front_ghz / map.front_span_ghz)?;
    // Front quantisation can overshoot the residual by a fraction of an
    // LSB; the rear cannot run backwards, so its target floors at zero.
    let rear_ideal = map.rear_for_tuning_ma((residual - map.front_span_ghz * front_ma / 5.0).max(0.0));
    if rear_ideal > grid.max_rear_ma {
        return Err(infeasible());
    }
    let rear_ma = Section::Rear.quantize_current_ma(rear_ideal)?;

    // Solve the phase against the quantised grating so its own error is
    // the only one left, then keep the comb inside half a mode spacing.
    let q_actual = map.grating_offset_ghz(pair, front_ma, rear_ma);
    let unpulled = (frequency_ghz - map.base_ghz - map.pulling * q_actual) / (1.0 - map.pulling);
    let mode = (unpulled / map.mode_spacing_ghz).round();
    let comb_ghz = unpulled - mode * map.mode_spacing_ghz;
    let phase_ma = Section::Phase.quantize_current_ma(map.phase_for_comb_ma(comb_ghz))?;

    Ok(OperatingPoint {
        front_pair: pair,
        currents: SectionCurrents::new(rear_ma, phase_ma, front_ma),
    })
}

/// Switching-set selection: which channels beyond the per-pair rear
/// extremes join the campaign set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SetConfig {
    /// Explicit grid indices for the extra members. Empty picks eight
    /// spread evenly across the grid.
    pub extra_indices: Vec<usize>,
}

impl SetConfig {
    fn extras(&self, n: usize) -> Result<Vec<usize>> {
        if self.extra_indices.is_empty() {
            return Ok((1..=8).map(|k| ((k * (n - 1)) as f64 / 9.0).round() as usize).collect());
        }
        for &idx in &self.extra_indices {
            if idx >= n {
                return Err(Error::Config(format!(
                    "switching-set extra index {idx} is outside the {n}-channel grid"
                )));
            }
        }
        Ok(self.extra_indices.clone())
    }
}

/// Pick the switching set: the rear extremes of every front pair plus the
/// configured extras, 22 channels with the default plan.
///
/// Per pair, the channels with the lowest and highest rear current enter
/// first (frequency order breaks ties). An extra already present walks
/// forward to the next free index so the set size never collapses.
pub fn worst_case_set(channels: &[Channel], set: &SetConfig) -> Result<Vec<Channel>> {
    let mut picked: Vec<usize> = Vec::new();
    for pair in 1..=N_FRONT_PAIRS as u8 {
        let members: Vec<&Channel> = channels.iter().filter(|c| c.op.front_pair == pair).collect();
        if members.len() < 2 {
            return Err(Error::TooFewChannels {
                pair,
                count: members.len(),
            });
        }
        let lowest = members
            .iter()
            .min_by(|a, b| {
                (a.op.currents.rear_ma, a.index)
                    .partial_cmp(&(b.op.currents.rear_ma, b.index))
                    .unwrap()
            })
            .unwrap();
        let highest = members
            .iter()
            .max_by(|a, b| {
                (a.op.currents.rear_ma, -(a.index as i64))
                    .partial_cmp(&(b.op.currents.rear_ma, -(b.index as i64)))
                    .unwrap()
            })
            .unwrap();
        picked.push(lowest.index);
        picked.push(highest.index);
    }

    let n = channels.len();
    for mut idx in set.extras(n)? {
        while picked.contains(&idx) {
            idx = (idx + 1) % n;
        }
        picked.push(idx);
    }

    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| channels[i].clone()).collect())
}

/// Sweep resolutions for mapping the steady-state tuning surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub rear_step_ma: f64,
    pub front_step_ma: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rear_step_ma: 0.5,
            front_step_ma: 0.25,
        }
    }
}

/// One settled sweep sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pair: u8,
    pub front_ma: f64,
    pub rear_ma: f64,
    pub freq_thz: f64,
}

/// Steady-state tuning surface sampled over pair, front, and rear drive.
#[derive(Debug, Clone)]
pub struct TuningGrid {
    pub points: Vec<SweepPoint>,
}

/// Sample the settled frequency over every front pair, front current, and
/// rear current at the configured resolutions, phase held at its centre.
pub fn sweep_map(map: &TuningMap, sweep: &SweepConfig) -> Result<TuningGrid> {
    if !(sweep.rear_step_ma > 0.0 && sweep.front_step_ma > 0.0) {
        return Err(Error::Config("sweep steps must be positive".into()));
    }
    let steps = |hi: f64, step: f64| (0..=(hi / step).round() as usize).map(move |i| i as f64 * step);
    let mut points = Vec::new();
    for pair in 1..=N_FRONT_PAIRS as u8 {
        for front_ma in steps(5.0, sweep.front_step_ma) {
            for rear_ma in steps(60.0, sweep.rear_step_ma) {
                let op = OperatingPoint {
                    front_pair: pair,
                    currents: SectionCurrents::new(rear_ma, map.comb_center_ma, front_ma),
                };
                points.push(SweepPoint {
                    pair,
                    front_ma,
                    rear_ma,
                    freq_thz: map.steady_frequency_ghz(&op) / 1000.0,
                });
            }
        }
    }
    Ok(TuningGrid { points })
}

/// Write a sweep as `pair,front_mA,rear_mA,freq_THz` rows.
pub fn write_sweep_csv<W: std::io::Write>(mut w: W, grid: &TuningGrid) -> Result<()> {
    writeln!(w, "pair,front_mA,rear_mA,freq_THz")?;
    for p in &grid.points {
        writeln!(w, "{},{:.3},{:.3},{:.6}", p.pair, p.front_ma, p.rear_ma, p.freq_thz)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantConfig;

    fn planned() -> (TuningMap, Vec<Channel>) {
        let map = PlantConfig::default().map;
        let grid = GridConfig::default();
        let channels = plan_channels(&map, &grid).unwrap();
        (map, channels)
    }

    #[test]
    fn grid_has_122_channels_with_exact_spacing() {
        let (_, channels) = planned();
        assert_eq!(channels.len(), 122);
        assert_eq!(channels[0].frequency_ghz, 190_650.0);
        assert_eq!(channels[121].frequency_ghz, 196_700.0);
        for w in channels.windows(2) {
            assert_eq!(w[1].frequency_ghz - w[0].frequency_ghz, 50.0);
        }
    }

    #[test]
    fn every_placement_settles_within_tolerance() {
        let (map, channels) = planned();
        for c in &channels {
            assert!(
                c.static_error_ghz.abs() <= 0.3,
                "channel {} err {}",
                c.index,
                c.static_error_ghz
            );
            let again = map.steady_frequency_ghz(&c.op) - c.frequency_ghz;
            assert_eq!(again, c.static_error_ghz);
        }
    }

    #[test]
    fn drive_currents_stay_inside_section_limits() {
        let (_, channels) = planned();
        for c in &channels {
            let i = &c.op.currents;
            assert!((0.0..=47.5).contains(&i.rear_ma), "rear {}", i.rear_ma);
            assert!((0.0..=5.0).contains(&i.front_ma), "front {}", i.front_ma);
            assert!((0.0..=12.0).contains(&i.phase_ma), "phase {}", i.phase_ma);
            assert!((1..=7).contains(&c.op.front_pair));
        }
    }

    #[test]
    fn placement_is_an_oracle_inverse_of_the_tuning_map() {
        // Independent check: reconstruct the grating peak from the chosen
        // currents and confirm it lands within a front-current LSB of the
        // coarse target.
        let (map, channels) = planned();
        for c in &channels {
            let q = map.grating_offset_ghz(c.op.front_pair, c.op.currents.front_ma, c.op.currents.rear_ma);
            let q_target = c.frequency_ghz - map.base_ghz;
            assert!((q - q_target).abs() < 1.0, "channel {}: q {} vs {}", c.index, q, q_target);
        }
    }

    #[test]
    fn pairs_partition_the_grid_in_frequency_order() {
        let (_, channels) = planned();
        for w in channels.windows(2) {
            assert!(w[1].op.front_pair >= w[0].op.front_pair);
        }
        for pair in 1..=7u8 {
            assert!(channels.iter().any(|c| c.op.front_pair == pair), "pair {pair} unused");
        }
    }

    #[test]
    fn switching_set_has_22_unique_members_with_pair_extremes() {
        let (_, channels) = planned();
        let set = worst_case_set(&channels, &SetConfig::default()).unwrap();
        assert_eq!(set.len(), 22);
        let mut idx: Vec<usize> = set.iter().map(|c| c.index).collect();
        idx.dedup();
        assert_eq!(idx.len(), 22);
        for pair in 1..=7u8 {
            let members: Vec<&Channel> = channels.iter().filter(|c| c.op.front_pair == pair).collect();
            let min = members
                .iter()
                .map(|c| c.op.currents.rear_ma)
                .fold(f64::INFINITY, f64::min);
            let max = members
                .iter()
                .map(|c| c.op.currents.rear_ma)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(set
                .iter()
                .any(|c| c.op.front_pair == pair && c.op.currents.rear_ma == min));
            assert!(set
                .iter()
                .any(|c| c.op.front_pair == pair && c.op.currents.rear_ma == max));
        }
    }

    #[test]
    fn switching_set_is_stable_for_a_fixed_plan() {
        let (_, channels) = planned();
        let a = worst_case_set(&channels, &SetConfig::default()).unwrap();
        let b = worst_case_set(&channels, &SetConfig::default()).unwrap();
        let ia: Vec<usize> = a.iter().map(|c| c.index).collect();
        let ib: Vec<usize> = b.iter().map(|c| c.index).collect();
        assert_eq!(ia, ib);
    }

    #[test]
    fn explicit_extras_are_honoured_and_collisions_walk_forward() {
        let (_, channels) = planned();
        let default_set = worst_case_set(&channels, &SetConfig::default()).unwrap();
        let taken = default_set[0].index;
        let set = worst_case_set(
            &channels,
            &SetConfig {
                extra_indices: vec![taken, 57],
            },
        )
        .unwrap();
        assert_eq!(set.len(), 16);
        assert!(set.iter().any(|c| c.index == 57));
        // The collision walked forward to a free slot, keeping the count.
        let mut idx: Vec<usize> = set.iter().map(|c| c.index).collect();
        idx.dedup();
        assert_eq!(idx.len(), 16);

        let err = worst_case_set(
            &channels,
            &SetConfig {
                extra_indices: vec![channels.len()],
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn sweep_covers_the_drive_space_and_rises_with_rear() {
        let (map, _) = planned();
        let sweep = SweepConfig::default();
        let grid = sweep_map(&map, &sweep).unwrap();
        let fronts = (5.0 / sweep.front_step_ma) as usize + 1;
        let rears = (60.0 / sweep.rear_step_ma) as usize + 1;
        assert_eq!(grid.points.len(), 7 * fronts * rears);
        for w in grid.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.pair == b.pair && a.front_ma == b.front_ma {
                assert!(b.freq_thz >= a.freq_thz, "sweep dips at rear {}", b.rear_ma);
            }
        }
        let mut csv = Vec::new();
        write_sweep_csv(&mut csv, &grid).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("pair,front_mA,rear_mA,freq_THz\n"));
        assert_eq!(text.lines().count(), grid.points.len() + 1);
    }
}
