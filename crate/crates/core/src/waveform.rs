//! Drive-waveform synthesis for the laser's current sections.
//!
//! The arbitrary waveform generator runs at 250 MS/s (4 ns per sample) and
//! drives four analogue channels: rear grating, phase, and the two
//! multiplexed front-grating channels (one for even-numbered gratings, one
//! for odd). Four digital select lines route the front channels to one of
//! the eight front gratings, addressed as seven overlapping pairs.
//!
//! A switching waveform is a 5 MHz square wave: 100 ns on the target
//! channel, 100 ns on the source channel. Pre-emphasis taps reshape the
//! first K samples after the source-to-target transition, either additively
//! (`y = x + dv * h`, rear section) or multiplicatively (`y = h * x`, phase
//! section). Samples are clamped to each section's drive range and
//! quantised to the 12-bit converter grid.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// AWG sample period, ns (250 MS/s).
pub const AWG_SAMPLE_NS: f64 = 4.0;
/// Burst length on each channel of the square wave, ns.
pub const BURST_NS: f64 = 100.0;
/// AWG samples per burst.
pub const SAMPLES_PER_BURST: usize = (BURST_NS / AWG_SAMPLE_NS) as usize;
/// Converter resolution, bits.
pub const AWG_BITS: u32 = 12;
/// Converter full-scale output, volts.
pub const AWG_FULL_SCALE_V: f64 = 3.0;

/// Number of addressable front-grating pairs.
pub const N_FRONT_PAIRS: u8 = 7;
/// Hold current on the non-scaled grating of the active pair, mA.
pub const FRONT_HOLD_MA: f64 = 5.0;

/// One converter LSB in volts.
pub fn awg_lsb_v() -> f64 {
    AWG_FULL_SCALE_V / (1u32 << AWG_BITS) as f64
}

/// Round a voltage to the converter grid, clamped to full scale.
pub fn quantize_v(v: f64) -> f64 {
    let lsb = awg_lsb_v();
    let code = (v / lsb).round().clamp(0.0, ((1u32 << AWG_BITS) - 1) as f64);
    code * lsb
}

/// Current-driven laser sections with independent drive electronics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Section {
    Rear,
    Phase,
    /// Front multiplexer channel serving even-numbered gratings.
    FrontEven,
    /// Front multiplexer channel serving odd-numbered gratings.
    FrontOdd,
}

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::Rear => "rear",
            Section::Phase => "phase",
            Section::FrontEven => "front-even",
            Section::FrontOdd => "front-odd",
        }
    }

    /// Allowed drive current range for the section, mA.
    pub fn current_range_ma(self) -> (f64, f64) {
        match self {
            Section::Rear => (0.0, 60.0),
            Section::Phase => (0.0, 12.0),
            Section::FrontEven | Section::FrontOdd => (0.0, 5.0),
        }
    }

    /// Static diode curve of the section driver.
    pub fn iv(self) -> IvCurve {
        match self {
            Section::Rear => IvCurve {
                v0: 0.85,
                a: 0.18,
                b_ma: 6.0,
                c_v_per_ma: 0.0245,
            },
            Section::Phase => IvCurve {
                v0: 0.90,
                a: 0.12,
                b_ma: 3.0,
                c_v_per_ma: 0.008,
            },
            Section::FrontEven | Section::FrontOdd => IvCurve {
                v0: 0.88,
                a: 0.25,
                b_ma: 2.0,
                c_v_per_ma: 0.030,
            },
        }
    }

    /// Drive voltage for a current, checked against the section range.
    pub fn voltage_for(self, current_ma: f64) -> Result<f64> {
        let (lo, hi) = self.current_range_ma();
        if !(lo..=hi).contains(&current_ma) || !current_ma.is_finite() {
            return Err(Error::CurrentOutOfRange {
                section: self.name(),
                value_ma: current_ma,
                min_ma: lo,
                max_ma: hi,
            });
        }
        Ok(self.iv().voltage(current_ma))
    }

    /// Current that the section sinks at a drive voltage.
    pub fn current_for(self, voltage: f64) -> Result<f64> {
        let (lo, hi) = self.current_range_ma();
        let iv = self.iv();
        let (vlo, vhi) = (iv.voltage(lo), iv.voltage(hi));
        // Half an LSB of slack so quantised endpoint samples stay invertible.
        let slack = awg_lsb_v() * 0.5 + 1e-9;
        if voltage < vlo - slack || voltage > vhi + slack {
            return Err(Error::VoltageOutOfRange {
                section: self.name(),
                value_v: voltage,
            });
        }
        Ok(iv.current(voltage.clamp(vlo, vhi), lo, hi))
    }

    /// Voltage bounds corresponding to the section's current range.
    pub fn voltage_range(self) -> (f64, f64) {
        let (lo, hi) = self.current_range_ma();
        let iv = self.iv();
        (iv.voltage(lo), iv.voltage(hi))
    }

    /// Current the section actually sinks once its drive voltage is
    /// rounded to an AWG code.
    pub fn quantize_current_ma(self, current_ma: f64) -> Result<f64> {
        self.current_for(quantize_v(self.voltage_for(current_ma)?))
    }
}

/// Static diode curve `V(I) = v0 + a*ln(1 + I/b) + c*I`.
///
/// Strictly increasing in current, so it inverts exactly (to solver
/// tolerance) everywhere inside the drive range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvCurve {
    pub v0: f64,
    pub a: f64,
    pub b_ma: f64,
    pub c_v_per_ma: f64,
}

impl IvCurve {
    pub fn voltage(&self, current_ma: f64) -> f64 {
        self.v0 + self.a * (1.0 + current_ma / self.b_ma).ln() + self.c_v_per_ma * current_ma
    }

    /// dV/dI at a current, volts per mA.
    pub fn slope(&self, current_ma: f64) -> f64 {
        self.a / (self.b_ma + current_ma) + self.c_v_per_ma
    }

    /// Invert the curve by bisection over `[lo, hi]` mA.
    fn current(&self, voltage: f64, lo: f64, hi: f64) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.voltage(mid) < voltage {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Currents that define one static operating point of the laser.
///
/// `front_ma` is the current on the scaled grating of the active pair; the
/// other grating of the pair is held at [`FRONT_HOLD_MA`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionCurrents {
    pub rear_ma: f64,
    pub phase_ma: f64,
    pub front_ma: f64,
}

impl SectionCurrents {
    pub fn new(rear_ma: f64, phase_ma: f64, front_ma: f64) -> Self {
        SectionCurrents {
            rear_ma,
            phase_ma,
            front_ma,
        }
    }
}

/// A front pair plus the section currents that select one wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub front_pair: u8,
    pub currents: SectionCurrents,
}

/// Digital select-line state, two bits per front multiplexer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectCode {
    /// D1D2: selects the even grating 2,4,6,8 as binary 00,01,10,11.
    pub d1d2: u8,
    /// D3D4: selects the odd grating 1,3,5,7 as binary 00,01,10,11.
    pub d3d4: u8,
}

impl SelectCode {
    /// Front pair addressed by this code.
    pub fn front_pair(self) -> Result<u8> {
        let even = 2 * (self.d1d2 + 1);
        let odd = 2 * self.d3d4 + 1;
        // A valid pair uses adjacent gratings.
        if even == odd + 1 {
            Ok(odd)
        } else if odd == even + 1 {
            Ok(even)
        } else {
            Err(Error::InvalidFrontPair { pair: 0 })
        }
    }
}

/// Select-line code for a front pair.
///
/// Pair `i` drives gratings `i` and `i+1`; grating `i+1` is the scaled one.
pub fn front_pair_encoding(pair: u8) -> Result<SelectCode> {
    if !(1..=N_FRONT_PAIRS).contains(&pair) {
        return Err(Error::InvalidFrontPair { pair });
    }
    let (even, odd) = front_pair_gratings(pair);
    Ok(SelectCode {
        d1d2: even / 2 - 1,
        d3d4: (odd - 1) / 2,
    })
}

/// (even grating, odd grating) addressed by a pair.
pub fn front_pair_gratings(pair: u8) -> (u8, u8) {
    let (g_lo, g_hi) = (pair, pair + 1);
    if g_lo % 2 == 0 {
        (g_lo, g_hi)
    } else {
        (g_hi, g_lo)
    }
}

/// True when the scaled grating (`pair + 1`) of a pair is even-numbered.
pub fn scaled_grating_is_even(pair: u8) -> bool {
    (pair + 1) % 2 == 0
}

/// Transition direction of one section between two operating points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    Rising,
    Falling,
}

impl Edge {
    pub fn of_delta(delta_v: f64) -> Edge {
        if delta_v < 0.0 {
            Edge::Falling
        } else {
            Edge::Rising
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Edge::Rising => "rising",
            Edge::Falling => "falling",
        }
    }
}

/// How pre-emphasis taps combine with the base waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TapMode {
    /// `y(k) = x(k) + dv * h(k)`; used on the rear section.
    Additive,
    /// `y(k) = h(k) * x(k)`; used on the phase section.
    Multiplicative,
}

/// Per-sample pre-emphasis weights for one transition direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreEmphasisWeights {
    pub edge: Edge,
    pub mode: TapMode,
    pub taps: Vec<f64>,
}

impl PreEmphasisWeights {
    /// Additive weights: two taps on rising edges, four on falling.
    pub fn additive(edge: Edge, taps: Vec<f64>) -> Result<Self> {
        let expect = match edge {
            Edge::Rising => 2,
            Edge::Falling => 4,
        };
        if taps.len() != expect {
            return Err(Error::InvalidWeights {
                reason: format!(
                    "additive {} edge takes {} taps, got {}",
                    edge.name(),
                    expect,
                    taps.len()
                ),
            });
        }
        Ok(PreEmphasisWeights {
            edge,
            mode: TapMode::Additive,
            taps,
        })
    }

    /// Multiplicative weights: always four taps, all positive.
    pub fn multiplicative(edge: Edge, taps: Vec<f64>) -> Result<Self> {
        if taps.len() != 4 {
            return Err(Error::InvalidWeights {
                reason: format!("multiplicative mode takes 4 taps, got {}", taps.len()),
            });
        }
        if let Some(bad) = taps.iter().find(|t| **t <= 0.0) {
            return Err(Error::InvalidWeights {
                reason: format!("multiplicative tap {bad} is not positive"),
            });
        }
        Ok(PreEmphasisWeights {
            edge,
            mode: TapMode::Multiplicative,
            taps,
        })
    }

    /// Neutral multiplicative weights (no reshaping).
    pub fn unity_multiplicative(edge: Edge) -> Self {
        PreEmphasisWeights {
            edge,
            mode: TapMode::Multiplicative,
            taps: vec![1.0; 4],
        }
    }

    pub fn k(&self) -> usize {
        self.taps.len()
    }
}

/// Signed plateau voltage swing per driven section, target minus source.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SectionSwing {
    pub rear_v: f64,
    pub phase_v: f64,
    pub front_even_v: f64,
    pub front_odd_v: f64,
}

/// One period of the switching square wave, ready for upload.
///
/// Sample 0 is the switch instant onto the target channel: the first
/// [`SAMPLES_PER_BURST`] samples form the target burst, the rest the source
/// burst. All analogue samples are quantised volts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveWaveform {
    pub rear_v: Vec<f64>,
    pub phase_v: Vec<f64>,
    pub front_even_v: Vec<f64>,
    pub front_odd_v: Vec<f64>,
    /// Select-line state per burst: `[target, source]`.
    pub select: [SelectCode; 2],
    pub delta_v: SectionSwing,
    /// Set when any requested sample had to be clamped into range.
    pub clamped: bool,
}

impl DriveWaveform {
    pub fn n_samples(&self) -> usize {
        self.rear_v.len()
    }

    pub fn samples(&self, section: Section) -> &[f64] {
        match section {
            Section::Rear => &self.rear_v,
            Section::Phase => &self.phase_v,
            Section::FrontEven => &self.front_even_v,
            Section::FrontOdd => &self.front_odd_v,
        }
    }
}

/// Per-section plateau voltages for one operating point.
fn plateau_voltages(point: &OperatingPoint) -> Result<[f64; 4]> {
    if !(1..=N_FRONT_PAIRS).contains(&point.front_pair) {
        return Err(Error::InvalidFrontPair {
            pair: point.front_pair,
        });
    }
    let rear = Section::Rear.voltage_for(point.currents.rear_ma)?;
    let phase = Section::Phase.voltage_for(point.currents.phase_ma)?;
    let scaled = Section::FrontEven.voltage_for(point.currents.front_ma)?;
    let held = Section::FrontEven.voltage_for(FRONT_HOLD_MA)?;
    let (front_even, front_odd) = if scaled_grating_is_even(point.front_pair) {
        (scaled, held)
    } else {
        (held, scaled)
    };
    Ok([rear, phase, front_even, front_odd])
}

/// Build the switching waveform between two operating points.
///
/// `rear` taps are applied additively and `phase` taps multiplicatively to
/// the first K samples of the target burst; the source burst is left as a
/// plain plateau. Pass `None` to leave a section unshaped.
pub fn synthesize(
    from: &OperatingPoint,
    to: &OperatingPoint,
    rear: Option<&PreEmphasisWeights>,
    phase: Option<&PreEmphasisWeights>,
) -> Result<DriveWaveform> {
    let src = plateau_voltages(from)?;
    let dst = plateau_voltages(to)?;
    let delta = SectionSwing {
        rear_v: dst[0] - src[0],
        phase_v: dst[1] - src[1],
        front_even_v: dst[2] - src[2],
        front_odd_v: dst[3] - src[3],
    };

    if let Some(w) = rear {
        if w.mode != TapMode::Additive {
            return Err(Error::InvalidWeights {
                reason: "rear section takes additive weights".into(),
            });
        }
        if delta.rear_v != 0.0 && w.edge != Edge::of_delta(delta.rear_v) {
            return Err(Error::InvalidWeights {
                reason: format!(
                    "rear swing {:+.4} V is a {} edge, weights are {}",
                    delta.rear_v,
                    Edge::of_delta(delta.rear_v).name(),
                    w.edge.name()
                ),
            });
        }
    }
    if let Some(w) = phase {
        if w.mode != TapMode::Multiplicative {
            return Err(Error::InvalidWeights {
                reason: "phase section takes multiplicative weights".into(),
            });
        }
    }

    let mut clamped = false;
    let mut shape = |section: Section, plateau_dst: f64, plateau_src: f64, taps: &dyn Fn(usize) -> Option<f64>| {
        let (vlo, vhi) = section.voltage_range();
        let mut out = Vec::with_capacity(2 * SAMPLES_PER_BURST);
        for k in 0..SAMPLES_PER_BURST {
            let want = match taps(k) {
                Some(v) => v,
                None => plateau_dst,
            };
            let bounded = want.clamp(vlo, vhi);
            if (bounded - want).abs() > 1e-12 {
                clamped = true;
            }
            out.push(quantize_v(bounded));
        }
        out.extend(std::iter::repeat(quantize_v(plateau_src)).take(SAMPLES_PER_BURST));
        out
    };

    let rear_v = shape(Section::Rear, dst[0], src[0], &|k| {
        rear.and_then(|w| w.taps.get(k).map(|h| dst[0] + delta.rear_v * h))
    });
    let phase_v = shape(Section::Phase, dst[1], src[1], &|k| {
        phase.and_then(|w| w.taps.get(k).map(|h| h * dst[1]))
    });
    let front_even_v = shape(Section::FrontEven, dst[2], src[2], &|_| None);
    let front_odd_v = shape(Section::FrontOdd, dst[3], src[3], &|_| None);

    Ok(DriveWaveform {
        rear_v,
        phase_v,
        front_even_v,
        front_odd_v,
        select: [
            front_pair_encoding(to.front_pair)?,
            front_pair_encoding(from.front_pair)?,
        ],
        delta_v: delta,
        clamped,
    })
}
