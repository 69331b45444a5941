//! Laser and measurement-chain simulation behind the [`crate::testbed`]
//! interface.
//!
//! The simulated device has a grating reflection peak tuned by the rear and
//! front sections, and a cavity mode comb positioned by the phase section.
//! The lasing line sits on the comb mode nearest the reflection peak and is
//! pulled part-way toward it; when the peak drifts more than just over half
//! a mode spacing from the current mode, the line hops to the next one.
//!
//! Section currents follow the drive voltage through an RC input stage, the
//! static diode curve, and a settling model. The rear section carries a
//! slow stored-charge tail whose release rate depends on the instantaneous
//! drive current: it drains quickly when the drive is pulled toward zero
//! and slowly when parked at a low plateau, which is what overshoot and
//! undershoot taps exploit. Each switching edge also kicks a decaying
//! crosstalk transient onto the cavity comb; large rising rear steps can
//! push the comb far enough to cause a transient mode hop. The phase
//! section cancels that comb displacement, so shaping its drive both
//! recenters the line and removes the hop.
//!
//! The measurement chain beats the laser against a fixed reference, applies
//! the receiver's low-pass response, adds oscillator phase noise and
//! receiver noise, and samples I/Q at 50 GS/s.

use crate::waveform::{
    DriveWaveform, OperatingPoint, Section, AWG_SAMPLE_NS, SAMPLES_PER_BURST,
};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Receiver sampling interval, ns (50 GS/s).
pub const RX_SAMPLE_NS: f64 = 0.02;
/// Integrator steps per AWG sample.
const STEPS_PER_AWG_SAMPLE: usize = (AWG_SAMPLE_NS / RX_SAMPLE_NS) as usize;
const _: () = assert!(STEPS_PER_AWG_SAMPLE == 200);
/// Receiver samples per 100 ns burst.
pub const RX_SAMPLES_PER_BURST: usize = SAMPLES_PER_BURST * STEPS_PER_AWG_SAMPLE;

/// Static tuning algebra: section currents to grating peak, comb position,
/// and steady-state lasing frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningMap {
    /// Lasing frequency at pair 1, zero front and rear current, centred
    /// phase current, GHz.
    pub base_ghz: f64,
    /// Grating peak step per front pair, GHz.
    pub pair_step_ghz: f64,
    /// Grating peak travel over the full front current range, GHz.
    pub front_span_ghz: f64,
    /// Rear tuning scale: peak moves by this per e-fold of (1 + I/knee).
    pub rear_scale_ghz: f64,
    /// Rear tuning knee current, mA.
    pub rear_knee_ma: f64,
    /// Cavity mode spacing, GHz.
    pub mode_spacing_ghz: f64,
    /// Comb shift per mA of phase current, GHz.
    pub comb_ghz_per_ma: f64,
    /// Phase current at which the comb shift is zero, mA.
    pub comb_center_ma: f64,
    /// Fraction of the peak-to-mode detuning pulled into the lasing line.
    pub pulling: f64,
}

impl Default for TuningMap {
    fn default() -> Self {
        TuningMap {
            base_ghz: 190_650.0,
            pair_step_ghz: 6_050.0 / 7.0,
            front_span_ghz: 160.0,
            rear_scale_ghz: 500.0,
            rear_knee_ma: 15.0,
            mode_spacing_ghz: 45.0,
            comb_ghz_per_ma: 3.75,
            comb_center_ma: 6.0,
            pulling: 0.3,
        }
    }
}

impl TuningMap {
    /// Grating peak shift from the rear section alone, GHz.
    pub fn rear_tuning_ghz(&self, rear_ma: f64) -> f64 {
        self.rear_scale_ghz * (1.0 + rear_ma / self.rear_knee_ma).ln()
    }

    /// Rear current that produces a given rear tuning shift, mA.
    pub fn rear_for_tuning_ma(&self, ghz: f64) -> f64 {
        self.rear_knee_ma * ((ghz / self.rear_scale_ghz).exp() - 1.0)
    }

    /// Grating peak offset from `base_ghz`, GHz.
    pub fn grating_offset_ghz(&self, front_pair: u8, front_ma: f64, rear_ma: f64) -> f64 {
        (front_pair - 1) as f64 * self.pair_step_ghz
            + self.front_span_ghz * front_ma / 5.0
            + self.rear_tuning_ghz(rear_ma)
    }

    /// Comb offset from `base_ghz`, GHz.
    pub fn comb_offset_ghz(&self, phase_ma: f64) -> f64 {
        self.comb_ghz_per_ma * (phase_ma - self.comb_center_ma)
    }

    /// Phase current for a comb offset, mA (unclamped).
    pub fn phase_for_comb_ma(&self, comb_ghz: f64) -> f64 {
        self.comb_center_ma + comb_ghz / self.comb_ghz_per_ma
    }

    /// Index of the comb mode nearest the grating peak.
    pub fn mode_index(&self, grating_ghz: f64, comb_ghz: f64) -> i64 {
        ((grating_ghz - comb_ghz) / self.mode_spacing_ghz).round() as i64
    }

    /// Steady-state lasing frequency at an operating point, GHz.
    pub fn steady_frequency_ghz(&self, op: &OperatingPoint) -> f64 {
        let q = self.grating_offset_ghz(op.front_pair, op.currents.front_ma, op.currents.rear_ma);
        let p = self.comb_offset_ghz(op.currents.phase_ma);
        let m = self.mode_index(q, p) as f64;
        let detune = q - p - m * self.mode_spacing_ghz;
        self.base_ghz + p + m * self.mode_spacing_ghz + self.pulling * detune
    }
}

/// Settling model for the phase and front sections: an RC input stage, then
/// fast and slow first-order responses mixed by `slow_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearResponse {
    pub rc_tau_ns: f64,
    pub fast_tau_ns: f64,
    pub slow_tau_ns: f64,
    pub slow_fraction: f64,
}

/// Settling model for the rear section: an RC input stage, a fast
/// first-order response, and a stored-charge tail whose time constant
/// depends on the instantaneous drive current.
///
/// The tail charges toward the drive at `charge_floor + charge_slope *
/// (rail - drive)` and discharges at `discharge_floor + discharge_slope *
/// drive` (ns), both capped at `tau_cap_ns` where the carrier lifetime
/// saturates. Injection keeps the charge path fast at any drive level;
/// discharge is recombination limited, so stored charge drains quickly
/// only when the drive is pulled toward zero and lingers on a plateau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RearResponse {
    pub rc_tau_ns: f64,
    pub fast_tau_ns: f64,
    pub tail_fraction: f64,
    pub charge_floor_ns: f64,
    pub charge_slope_ns_per_ma: f64,
    pub discharge_floor_ns: f64,
    pub discharge_slope_ns_per_ma: f64,
    pub tau_cap_ns: f64,
}

impl Default for RearResponse {
    fn default() -> Self {
        RearResponse {
            rc_tau_ns: 1.273,
            fast_tau_ns: 1.5,
            tail_fraction: 0.06,
            charge_floor_ns: 3.0,
            charge_slope_ns_per_ma: 0.1,
            discharge_floor_ns: 2.2,
            discharge_slope_ns_per_ma: 4.6,
            tau_cap_ns: 16.0,
        }
    }
}

impl Default for LinearResponse {
    fn default() -> Self {
        LinearResponse {
            rc_tau_ns: 1.273,
            fast_tau_ns: 1.5,
            slow_tau_ns: 10.0,
            slow_fraction: 0.04,
        }
    }
}

/// Switching-edge crosstalk onto the cavity comb.
///
/// Each plateau transition kicks the comb by `peak * tanh(|dI|/step_scale)
/// ^ step_shape * xi`, downward for rising rear steps and upward (scaled by
/// `falling_gain`) for falling ones. `xi` is a per-transition disorder
/// factor drawn deterministically from the transition endpoints. The kick
/// rises after `onset_ns`, peaks `rise_ns` later, then decays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkSpec {
    pub peak_ghz: f64,
    pub step_scale_ma: f64,
    pub step_shape: f64,
    pub falling_gain: f64,
    pub onset_ns: f64,
    pub rise_ns: f64,
    pub decay_ns: f64,
    pub xi_floor: f64,
    pub xi_span: f64,
    pub xi_shape: f64,
}

impl Default for CrosstalkSpec {
    fn default() -> Self {
        CrosstalkSpec {
            peak_ghz: 42.0,
            step_scale_ma: 20.0,
            step_shape: 1.5,
            falling_gain: 0.25,
            onset_ns: 5.5,
            rise_ns: 3.0,
            decay_ns: 3.8,
            xi_floor: 0.35,
            xi_span: 0.55,
            xi_shape: 4.0,
        }
    }
}

impl CrosstalkSpec {
    /// Disorder factor for a transition, from a hash of its endpoints.
    fn xi(&self, hash: u64) -> f64 {
        let r = (hash >> 11) as f64 / (1u64 << 53) as f64;
        self.xi_floor + self.xi_span * r.powf(self.xi_shape)
    }

    /// Signed kick amplitude for a rear plateau step, GHz.
    fn amplitude_ghz(&self, delta_i_rear_ma: f64, xi: f64) -> f64 {
        let size = (delta_i_rear_ma.abs() / self.step_scale_ma)
            .tanh()
            .powf(self.step_shape);
        if delta_i_rear_ma > 0.0 {
            -self.peak_ghz * size * xi
        } else {
            self.falling_gain * self.peak_ghz * size * xi
        }
    }

    /// Kick envelope at `tau` ns after the edge; peaks at 1.
    fn envelope(&self, tau: f64) -> f64 {
        if tau <= self.onset_ns {
            return 0.0;
        }
        let r = (tau - self.onset_ns) / self.rise_ns;
        if r < 1.0 {
            r * r * (3.0 - 2.0 * r)
        } else {
            (-(tau - self.onset_ns - self.rise_ns) / self.decay_ns).exp()
        }
    }
}

/// Coherent receiver: beat against a reference, low-pass, add noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSpec {
    /// 3 dB bandwidth of the receiver response, GHz.
    pub bandwidth_ghz: f64,
    /// Roll-off order: |H|^2 = 1 / (1 + (f/bw)^order).
    pub rolloff_order: i32,
    /// Signal-to-noise ratio of an in-band unit tone, dB.
    pub snr_db: f64,
    /// Combined beat linewidth driving the phase random walk, GHz.
    pub linewidth_ghz: f64,
}

impl Default for ReceiverSpec {
    fn default() -> Self {
        ReceiverSpec {
            bandwidth_ghz: 22.0,
            rolloff_order: 16,
            snr_db: 20.0,
            linewidth_ghz: 1.0e-3,
        }
    }
}

/// Mode-boundary behaviour: hop hysteresis and near-boundary extinction.
///
/// The line leaves mode m when |u - m| exceeds 0.5 + `hop_margin`, where u
/// is the peak-to-comb detuning in mode spacings. Beat amplitude collapses
/// as the boundary is approached: full below `suppress_start`, zero above
/// `suppress_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub hop_margin: f64,
    pub suppress_start: f64,
    pub suppress_end: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec {
            hop_margin: 0.1,
            suppress_start: 0.30,
            suppress_end: 0.34,
        }
    }
}

/// Full plant parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub map: TuningMap,
    pub rear: RearResponse,
    pub phase: LinearResponse,
    pub front: LinearResponse,
    pub crosstalk: CrosstalkSpec,
    pub receiver: ReceiverSpec,
    pub boundary: BoundarySpec,
    /// Front multiplexer routing delay range after a pair change, ns.
    pub mux_delay_min_ns: f64,
    pub mux_delay_max_ns: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            map: TuningMap::default(),
            rear: RearResponse::default(),
            // The phase electrode is the shortest section and reacts well
            // inside one drive sample, which keeps tap adaptation aligned
            // with its own error bin.
            phase: LinearResponse {
                rc_tau_ns: 0.5,
                fast_tau_ns: 0.8,
                ..LinearResponse::default()
            },
            front: LinearResponse::default(),
            crosstalk: CrosstalkSpec::default(),
            receiver: ReceiverSpec::default(),
            boundary: BoundarySpec::default(),
            mux_delay_min_ns: 2.0,
            mux_delay_max_ns: 5.0,
        }
    }
}

impl PlantConfig {
    pub fn validated(self) -> Result<Self> {
        if !(0.0..1.0).contains(&self.map.pulling) {
            return Err(Error::Config(format!(
                "pulling fraction {} outside [0, 1)",
                self.map.pulling
            )));
        }
        if self.boundary.suppress_end <= self.boundary.suppress_start {
            return Err(Error::Config(
                "suppression window must have positive width".into(),
            ));
        }
        if self.mux_delay_max_ns < self.mux_delay_min_ns {
            return Err(Error::Config("mux delay range is inverted".into()));
        }
        if self.rear.tau_cap_ns < self.rear.charge_floor_ns.max(self.rear.discharge_floor_ns) {
            return Err(Error::Config(format!(
                "tail time-constant cap {} ns sits below the charge floors",
                self.rear.tau_cap_ns
            )));
        }
        Ok(self)
    }
}

/// Raw I/Q capture from the receiver, sampled at 50 GS/s.
///
/// Sample 0 is the switch onto the target channel; bursts alternate target,
/// source, each [`RX_SAMPLES_PER_BURST`] samples long.
#[derive(Debug, Clone)]
pub struct RawCapture {
    pub iq: Vec<(f64, f64)>,
    pub dt_ns: f64,
    pub samples_per_burst: usize,
    pub n_periods: usize,
}

/// One integrator step's lasing state, fed to trace sinks.
#[derive(Debug, Clone, Copy)]
struct StepState {
    freq_ghz: f64,
    /// Distance from the mode centre, |u - m|, in mode spacings.
    boundary_dist: f64,
}

/// Noiseless frequency sample from [`Plant::trace_frequency`].
#[derive(Debug, Clone, Copy)]
pub struct FreqSample {
    pub t_ns: f64,
    pub freq_ghz: f64,
    pub boundary_dist: f64,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn hash_chain(seed: u64, words: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for w in words {
        h = splitmix64(h ^ *w);
    }
    h
}

/// Per-channel voltage inverse lookup, linear interpolation over a uniform
/// voltage grid spanning the section's drive range.
#[derive(Debug, Clone)]
struct InverseIv {
    v_lo: f64,
    v_step: f64,
    current_ma: Vec<f64>,
}

impl InverseIv {
    fn build(section: Section, points: usize) -> InverseIv {
        let (v_lo, v_hi) = section.voltage_range();
        let (i_lo, i_hi) = section.current_range_ma();
        let iv = section.iv();
        let v_step = (v_hi - v_lo) / (points - 1) as f64;
        let current_ma = (0..points)
            .map(|k| {
                let v = v_lo + v_step * k as f64;
                // Bisection against the forward curve; the grid is fine
                // enough that interpolation error stays below 1e-3 mA.
                let (mut lo, mut hi) = (i_lo, i_hi);
                for _ in 0..52 {
                    let mid = 0.5 * (lo + hi);
                    if iv.voltage(mid) < v {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        InverseIv {
            v_lo,
            v_step,
            current_ma,
        }
    }

    fn current(&self, v: f64) -> f64 {
        let x = ((v - self.v_lo) / self.v_step).clamp(0.0, (self.current_ma.len() - 1) as f64);
        let k = (x as usize).min(self.current_ma.len() - 2);
        let frac = x - k as f64;
        self.current_ma[k] + frac * (self.current_ma[k + 1] - self.current_ma[k])
    }
}

/// One driven channel's electrical state.
#[derive(Debug, Clone, Copy)]
struct ChannelState {
    v_rc: f64,
    fast_ma: f64,
    /// Slow-pole state for linear sections, stored-charge tail for rear.
    tail_ma: f64,
}

impl ChannelState {
    fn settled(current_ma: f64, voltage: f64) -> ChannelState {
        ChannelState {
            v_rc: voltage,
            fast_ma: current_ma,
            tail_ma: current_ma,
        }
    }
}

/// The simulated laser plus measurement chain. Immutable once built; all
/// run-to-run variation comes from the RNG handed to each capture.
#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    /// Seed for per-transition disorder (crosstalk strength).
    disorder_seed: u64,
    inv_rear: InverseIv,
    inv_phase: InverseIv,
    inv_front: InverseIv,
}

impl Plant {
    pub fn new(cfg: PlantConfig, disorder_seed: u64) -> Result<Plant> {
        let cfg = cfg.validated()?;
        Ok(Plant {
            cfg,
            disorder_seed,
            inv_rear: InverseIv::build(Section::Rear, 4096),
            inv_phase: InverseIv::build(Section::Phase, 4096),
            inv_front: InverseIv::build(Section::FrontEven, 4096),
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn map(&self) -> &TuningMap {
        &self.cfg.map
    }

    /// Crosstalk kick amplitude a transition would receive, GHz (signed).
    /// Exposed so demonstration cases can select susceptible transitions.
    pub fn crosstalk_amplitude_ghz(&self, wave: &DriveWaveform) -> f64 {
        let geo = WaveGeometry::derive(self, wave);
        geo.kick_fwd_ghz
    }

    /// Beat the laser against `reference_ghz` while replaying the waveform
    /// for `n_periods` switching periods, and capture receiver I/Q.
    ///
    /// The capture starts at a source-to-target switch with the plant
    /// settled at the source operating point. The RNG drives mux-delay
    /// draws, then the per-sample noise stream, in that fixed order.
    pub fn capture(
        &self,
        wave: &DriveWaveform,
        reference_ghz: f64,
        n_periods: usize,
        rng: &mut ChaCha8Rng,
    ) -> RawCapture {
        let rx = self.cfg.receiver;
        let noise_sigma = (10f64.powf(-rx.snr_db / 10.0) / 2.0).sqrt();
        let phase_sigma_cycles =
            (2.0 * std::f64::consts::PI * rx.linewidth_ghz * RX_SAMPLE_NS).sqrt()
                / (2.0 * std::f64::consts::PI);

        let mut iq = Vec::with_capacity(n_periods * 2 * RX_SAMPLES_PER_BURST);
        let mut phase_cycles: f64 = rng.gen::<f64>();

        self.run(wave, n_periods, rng, |state, rng| {
            let offset = state.freq_ghz - reference_ghz;
            let bw = (offset / rx.bandwidth_ghz).abs();
            let gain = 1.0 / (1.0 + bw.powi(rx.rolloff_order)).sqrt();
            let b = &self.cfg.boundary;
            let suppress = ((b.suppress_end - state.boundary_dist)
                / (b.suppress_end - b.suppress_start))
                .clamp(0.0, 1.0);
            let amp = gain * suppress;

            let dphi: f64 = rng.sample::<f64, _>(StandardNormal) * phase_sigma_cycles;
            phase_cycles = (phase_cycles + offset * RX_SAMPLE_NS + dphi).fract();
            let theta = 2.0 * std::f64::consts::PI * phase_cycles;
            let ni: f64 = rng.sample(StandardNormal);
            let nq: f64 = rng.sample(StandardNormal);
            iq.push((
                amp * theta.cos() + noise_sigma * ni,
                amp * theta.sin() + noise_sigma * nq,
            ));
        });

        RawCapture {
            iq,
            dt_ns: RX_SAMPLE_NS,
            samples_per_burst: RX_SAMPLES_PER_BURST,
            n_periods,
        }
    }

    /// Noise-free lasing frequency trace for the same replay, for
    /// diagnostics and tests. Mux-delay draws consume RNG exactly as in
    /// [`Plant::capture`].
    pub fn trace_frequency(
        &self,
        wave: &DriveWaveform,
        n_periods: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<FreqSample> {
        let mut out = Vec::with_capacity(n_periods * 2 * RX_SAMPLES_PER_BURST);
        self.run(wave, n_periods, rng, |state, _| {
            out.push(FreqSample {
                t_ns: out.len() as f64 * RX_SAMPLE_NS,
                freq_ghz: state.freq_ghz,
                boundary_dist: state.boundary_dist,
            });
        });
        out
    }

    fn run<F: FnMut(StepState, &mut ChaCha8Rng)>(
        &self,
        wave: &DriveWaveform,
        n_periods: usize,
        rng: &mut ChaCha8Rng,
        mut sink: F,
    ) {
        let cfg = &self.cfg;
        let map = &cfg.map;
        let geo = WaveGeometry::derive(self, wave);

        // Mux delays for every edge, drawn up front so the noise stream
        // layout does not depend on plant parameters.
        let mux: Vec<(f64, f64)> = (0..n_periods)
            .map(|_| {
                let span = cfg.mux_delay_max_ns - cfg.mux_delay_min_ns;
                (
                    cfg.mux_delay_min_ns + span * rng.gen::<f64>(),
                    cfg.mux_delay_min_ns + span * rng.gen::<f64>(),
                )
            })
            .collect();

        let dt = RX_SAMPLE_NS;
        let a_rc_rear = 1.0 - (-dt / cfg.rear.rc_tau_ns).exp();
        let a_fast_rear = 1.0 - (-dt / cfg.rear.fast_tau_ns).exp();
        let a_rc_phase = 1.0 - (-dt / cfg.phase.rc_tau_ns).exp();
        let a_fast_phase = 1.0 - (-dt / cfg.phase.fast_tau_ns).exp();
        let a_slow_phase = 1.0 - (-dt / cfg.phase.slow_tau_ns).exp();
        let a_rc_front = 1.0 - (-dt / cfg.front.rc_tau_ns).exp();
        let a_fast_front = 1.0 - (-dt / cfg.front.fast_tau_ns).exp();
        let a_slow_front = 1.0 - (-dt / cfg.front.slow_tau_ns).exp();

        let mut rear = ChannelState::settled(geo.src_rear_ma, geo.src_v[0]);
        let mut phase = ChannelState::settled(geo.src_phase_ma, geo.src_v[1]);
        let mut front_even = ChannelState::settled(self.inv_front.current(geo.src_v[2]), geo.src_v[2]);
        let mut front_odd = ChannelState::settled(self.inv_front.current(geo.src_v[3]), geo.src_v[3]);

        let q0 = map.grating_offset_ghz(geo.src_pair, geo.src_front_ma, geo.src_rear_ma);
        let p0 = map.comb_offset_ghz(geo.src_phase_ma);
        let mut mode = map.mode_index(q0, p0);

        let period_samples = 2 * RX_SAMPLES_PER_BURST;
        let spacing = map.mode_spacing_ghz;
        let hop_at = 0.5 + cfg.boundary.hop_margin;

        for period in 0..n_periods {
            let (mux_fwd, mux_rev) = mux[period];
            for s in 0..period_samples {
                let t_in_period = s as f64 * dt;
                let awg_idx = (s / STEPS_PER_AWG_SAMPLE) % (2 * SAMPLES_PER_BURST);

                rear.v_rc += a_rc_rear * (wave.rear_v[awg_idx] - rear.v_rc);
                let rear_drive = self.inv_rear.current(rear.v_rc);
                rear.fast_ma += a_fast_rear * (rear_drive - rear.fast_ma);
                let tau = if rear_drive >= rear.tail_ma {
                    cfg.rear.charge_floor_ns
                        + cfg.rear.charge_slope_ns_per_ma * (60.0 - rear_drive)
                } else {
                    cfg.rear.discharge_floor_ns
                        + cfg.rear.discharge_slope_ns_per_ma * rear_drive
                }
                .min(cfg.rear.tau_cap_ns);
                rear.tail_ma += (dt / tau) * (rear_drive - rear.tail_ma);
                let i_rear = (1.0 - cfg.rear.tail_fraction) * rear.fast_ma
                    + cfg.rear.tail_fraction * rear.tail_ma;

                phase.v_rc += a_rc_phase * (wave.phase_v[awg_idx] - phase.v_rc);
                let phase_drive = self.inv_phase.current(phase.v_rc);
                phase.fast_ma += a_fast_phase * (phase_drive - phase.fast_ma);
                phase.tail_ma += a_slow_phase * (phase_drive - phase.tail_ma);
                let i_phase = (1.0 - cfg.phase.slow_fraction) * phase.fast_ma
                    + cfg.phase.slow_fraction * phase.tail_ma;

                front_even.v_rc += a_rc_front * (wave.front_even_v[awg_idx] - front_even.v_rc);
                let fe_drive = self.inv_front.current(front_even.v_rc);
                front_even.fast_ma += a_fast_front * (fe_drive - front_even.fast_ma);
                front_even.tail_ma += a_slow_front * (fe_drive - front_even.tail_ma);
                let i_fe = (1.0 - cfg.front.slow_fraction) * front_even.fast_ma
                    + cfg.front.slow_fraction * front_even.tail_ma;

                front_odd.v_rc += a_rc_front * (wave.front_odd_v[awg_idx] - front_odd.v_rc);
                let fo_drive = self.inv_front.current(front_odd.v_rc);
                front_odd.fast_ma += a_fast_front * (fo_drive - front_odd.fast_ma);
                front_odd.tail_ma += a_slow_front * (fo_drive - front_odd.tail_ma);
                let i_fo = (1.0 - cfg.front.slow_fraction) * front_odd.fast_ma
                    + cfg.front.slow_fraction * front_odd.tail_ma;

                // Front routing: the active pair's contribution is frozen at
                // the previous plateau until the mux settles.
                let in_target_half = s < RX_SAMPLES_PER_BURST;
                let q_front = if in_target_half {
                    if geo.pair_change && t_in_period < mux_fwd {
                        geo.src_q_front
                    } else {
                        geo.dst_front_base
                            + map.front_span_ghz / 5.0
                                * geo.dst_scaled(i_fe, i_fo)
                    }
                } else {
                    let t_since_rev = t_in_period - 100.0;
                    if geo.pair_change && t_since_rev < mux_rev {
                        geo.dst_q_front
                    } else {
                        geo.src_front_base
                            + map.front_span_ghz / 5.0
                                * geo.src_scaled(i_fe, i_fo)
                    }
                };

                let q = q_front + map.rear_tuning_ghz(i_rear);
                let p = map.comb_offset_ghz(i_phase);

                // Comb crosstalk from this period's two edges; earlier
                // periods' kicks have fully decayed.
                let mut w = geo.kick_fwd_ghz * cfg.crosstalk.envelope(t_in_period);
                if !in_target_half {
                    w += geo.kick_rev_ghz * cfg.crosstalk.envelope(t_in_period - 100.0);
                }

                let u = (q - p - w) / spacing;
                if (u - mode as f64).abs() > hop_at {
                    mode = u.round() as i64;
                }
                let detune = q - p - w - mode as f64 * spacing;
                let freq = map.base_ghz + p + w + mode as f64 * spacing + map.pulling * detune;

                sink(
                    StepState {
                        freq_ghz: freq,
                        boundary_dist: (u - mode as f64).abs(),
                    },
                    rng,
                );
            }
        }
    }
}

/// Plateau geometry extracted from a waveform: operating currents, pair
/// routing, and the crosstalk kicks for both edges.
#[derive(Debug, Clone)]
struct WaveGeometry {
    src_v: [f64; 4],
    src_rear_ma: f64,
    src_phase_ma: f64,
    src_front_ma: f64,
    src_pair: u8,
    pair_change: bool,
    src_front_base: f64,
    dst_front_base: f64,
    /// Steady front contribution of each side, used while the mux settles.
    src_q_front: f64,
    dst_q_front: f64,
    src_scaled_even: bool,
    dst_scaled_even: bool,
    kick_fwd_ghz: f64,
    kick_rev_ghz: f64,
}

impl WaveGeometry {
    fn derive(plant: &Plant, wave: &DriveWaveform) -> WaveGeometry {
        use crate::waveform::scaled_grating_is_even;
        let map = &plant.cfg.map;
        let last = 2 * SAMPLES_PER_BURST - 1;
        let src_v = [
            wave.rear_v[last],
            wave.phase_v[last],
            wave.front_even_v[last],
            wave.front_odd_v[last],
        ];
        let dst_v = [
            wave.rear_v[SAMPLES_PER_BURST - 1],
            wave.phase_v[SAMPLES_PER_BURST - 1],
            wave.front_even_v[SAMPLES_PER_BURST - 1],
            wave.front_odd_v[SAMPLES_PER_BURST - 1],
        ];
        let dst_pair = wave.select[0].front_pair().unwrap_or(1);
        let src_pair = wave.select[1].front_pair().unwrap_or(1);
        let src_scaled_even = scaled_grating_is_even(src_pair);
        let dst_scaled_even = scaled_grating_is_even(dst_pair);

        let src_rear_ma = plant.inv_rear.current(src_v[0]);
        let dst_rear_ma = plant.inv_rear.current(dst_v[0]);
        let src_phase_ma = plant.inv_phase.current(src_v[1]);
        let src_front_ma =
            plant
                .inv_front
                .current(if src_scaled_even { src_v[2] } else { src_v[3] });
        let dst_front_ma =
            plant
                .inv_front
                .current(if dst_scaled_even { dst_v[2] } else { dst_v[3] });

        let lsb = crate::waveform::awg_lsb_v();
        let code = |v: f64| (v / lsb).round() as u64;
        let fwd_words = [
            code(src_v[0]),
            code(dst_v[0]),
            src_pair as u64,
            dst_pair as u64,
        ];
        let rev_words = [
            code(dst_v[0]),
            code(src_v[0]),
            dst_pair as u64,
            src_pair as u64,
        ];
        let ct = &plant.cfg.crosstalk;
        let xi_fwd = ct.xi(hash_chain(plant.disorder_seed, &fwd_words));
        let xi_rev = ct.xi(hash_chain(plant.disorder_seed, &rev_words));
        let delta_fwd = dst_rear_ma - src_rear_ma;

        let src_front_base = (src_pair - 1) as f64 * map.pair_step_ghz;
        let dst_front_base = (dst_pair - 1) as f64 * map.pair_step_ghz;

        WaveGeometry {
            src_v,
            src_rear_ma,
            src_phase_ma,
            src_front_ma,
            src_pair,
            pair_change: src_pair != dst_pair,
            src_front_base,
            dst_front_base,
            src_q_front: src_front_base + map.front_span_ghz * src_front_ma / 5.0,
            dst_q_front: dst_front_base + map.front_span_ghz * dst_front_ma / 5.0,
            src_scaled_even,
            dst_scaled_even,
            kick_fwd_ghz: ct.amplitude_ghz(delta_fwd, xi_fwd),
            kick_rev_ghz: ct.amplitude_ghz(-delta_fwd, xi_rev),
        }
    }

    fn src_scaled(&self, i_even: f64, i_odd: f64) -> f64 {
        if self.src_scaled_even {
            i_even
        } else {
            i_odd
        }
    }

    fn dst_scaled(&self, i_even: f64, i_odd: f64) -> f64 {
        if self.dst_scaled_even {
            i_even
        } else {
            i_odd
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{synthesize, OperatingPoint, SectionCurrents};
    use rand::SeedableRng;

    fn plant() -> Plant {
        Plant::new(PlantConfig::default(), 7).unwrap()
    }

    fn op(pair: u8, rear: f64, phase: f64, front: f64) -> OperatingPoint {
        OperatingPoint {
            front_pair: pair,
            currents: SectionCurrents::new(rear, phase, front),
        }
    }

    #[test]
    fn base_anchor_frequency_is_exact() {
        let map = TuningMap::default();
        let f = map.steady_frequency_ghz(&op(1, 0.0, 6.0, 0.0));
        assert!((f - 190_650.0).abs() < 1e-9, "{f}");
    }

    #[test]
    fn rear_tuning_matches_closed_form_points() {
        let map = TuningMap::default();
        // 500 * ln(1 + 47.5/15) evaluated independently.
        assert!((map.rear_tuning_ghz(47.5) - 713.558_177_8).abs() < 1e-4);
        assert!((map.rear_tuning_ghz(0.0)).abs() < 1e-12);
        let back = map.rear_for_tuning_ma(map.rear_tuning_ghz(23.4));
        assert!((back - 23.4).abs() < 1e-9);
    }

    #[test]
    fn grating_offset_is_monotonic_in_rear() {
        let map = TuningMap::default();
        let mut prev = f64::NEG_INFINITY;
        let mut i = 0.0;
        while i <= 60.0 {
            let q = map.grating_offset_ghz(3, 2.0, i);
            assert!(q > prev);
            prev = q;
            i += 0.25;
        }
    }

    #[test]
    fn steady_frequency_moves_one_spacing_per_mode() {
        let map = TuningMap::default();
        // Sweeping the comb by one spacing at a fixed peak relabels the
        // mode but leaves the frequency unchanged.
        let f1 = map.steady_frequency_ghz(&op(4, 20.0, 3.0, 2.0));
        let shift = map.mode_spacing_ghz / map.comb_ghz_per_ma;
        let f2 = map.steady_frequency_ghz(&op(4, 20.0, 3.0 + shift, 2.0));
        assert!((f2 - f1).abs() < 1e-9, "{f1} vs {f2}");
    }

    #[test]
    fn capture_is_deterministic_for_equal_seeds() {
        let plant = plant();
        let from = op(2, 30.0, 5.0, 1.0);
        let to = op(2, 10.0, 7.0, 3.0);
        let wave = synthesize(&from, &to, None, None).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let c1 = plant.capture(&wave, plant.map().steady_frequency_ghz(&to), 3, &mut r1);
        let c2 = plant.capture(&wave, plant.map().steady_frequency_ghz(&to), 3, &mut r2);
        assert_eq!(c1.iq, c2.iq);
    }

    #[test]
    fn settled_waveform_beats_near_zero() {
        let plant = plant();
        let at = op(3, 25.0, 6.0, 2.0);
        let wave = synthesize(&at, &at, None, None).unwrap();
        let f_ref = plant.map().steady_frequency_ghz(&at);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = plant.trace_frequency(&wave, 1, &mut rng);
        for s in trace.iter().skip(500) {
            assert!(
                (s.freq_ghz - f_ref).abs() < 0.5,
                "t={} off={}",
                s.t_ns,
                s.freq_ghz - f_ref
            );
        }
    }

    #[test]
    fn falling_edge_settles_slower_than_rising() {
        let plant = plant();
        // Operating points with the comb centred on a cavity mode, the way
        // channel placement leaves every planned channel. Biasing near a
        // mode boundary instead can latch a neighbouring mode and is
        // exercised separately through hop detection.
        let centred = |pair, rear_ma: f64, front_ma: f64| {
            let map = plant.map();
            let q = map.grating_offset_ghz(pair, front_ma, rear_ma);
            let comb = q - (q / map.mode_spacing_ghz).round() * map.mode_spacing_ghz;
            op(pair, rear_ma, map.phase_for_comb_ma(comb), front_ma)
        };
        let lo = centred(3, 2.0, 2.0);
        let hi = centred(3, 47.0, 2.0);
        let enter = |from: &OperatingPoint, to: &OperatingPoint| {
            let wave = synthesize(from, to, None, None).unwrap();
            let f_ref = plant.map().steady_frequency_ghz(to);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let trace = plant.trace_frequency(&wave, 1, &mut rng);
            // Last time the burst is further than 10 GHz from target.
            trace[..RX_SAMPLES_PER_BURST]
                .iter()
                .rposition(|s| (s.freq_ghz - f_ref).abs() > 10.0)
                .map(|i| i as f64 * RX_SAMPLE_NS)
                .unwrap_or(0.0)
        };
        let t_fall = enter(&hi, &lo);
        let t_rise = enter(&lo, &hi);
        assert!(
            t_fall > t_rise + 5.0,
            "fall {t_fall} ns vs rise {t_rise} ns"
        );
        assert!(t_fall > 10.0 && t_fall < 40.0, "fall {t_fall} ns");
    }

    #[test]
    fn crosstalk_kick_is_rising_dominant_and_bounded() {
        let ct = CrosstalkSpec::default();
        let up = ct.amplitude_ghz(40.0, 1.0);
        let down = ct.amplitude_ghz(-40.0, 1.0);
        assert!(up < 0.0 && down > 0.0);
        assert!(up.abs() <= ct.peak_ghz);
        assert!(down.abs() < 0.3 * up.abs());
        assert_eq!(ct.envelope(ct.onset_ns * 0.5), 0.0);
        let peak_t = ct.onset_ns + ct.rise_ns;
        assert!((ct.envelope(peak_t) - 1.0).abs() < 1e-12);
        assert!(ct.envelope(peak_t + 50.0) < 1e-3);
    }

    #[test]
    fn disorder_factor_stays_in_declared_range() {
        let ct = CrosstalkSpec::default();
        for k in 0..2000u64 {
            let xi = ct.xi(splitmix64(k));
            assert!(xi >= ct.xi_floor && xi <= ct.xi_floor + ct.xi_span);
        }
    }
}
