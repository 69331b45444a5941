//! Measurement harness joining a drive source to the receiver estimator.
//!
//! A [`Testbed`] uploads one switching period, runs it, and returns the raw
//! beat capture against its current reference. The simulated implementation
//! wraps a shared plant with a private noise stream, so measurements on
//! different transitions stay independent and reproducible regardless of
//! the order they run in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{average_bursts, target_bursts, OffsetTrace};
use crate::plant::{hash_chain, Plant, RawCapture};
use crate::waveform::DriveWaveform;
use crate::Result;

/// A device that applies drive waveforms and captures beat records against
/// a settable reference.
pub trait Testbed {
    fn reference_ghz(&self) -> f64;
    fn set_reference_ghz(&mut self, freq_ghz: f64);
    /// Upload one waveform, run it, and return the capture.
    fn apply(&mut self, wave: &DriveWaveform) -> Result<RawCapture>;
}

/// Simulated testbed: a borrowed plant, a private noise stream, and a fixed
/// number of switching periods per capture.
pub struct SimTestbed<'a> {
    plant: &'a Plant,
    rng: ChaCha8Rng,
    reference_ghz: f64,
    n_periods: usize,
}

impl<'a> SimTestbed<'a> {
    pub fn new(plant: &'a Plant, noise_seed: u64, n_periods: usize) -> Self {
        SimTestbed {
            plant,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            reference_ghz: plant.config().map.base_ghz,
            n_periods,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
}

impl Testbed for SimTestbed<'_> {
    fn reference_ghz(&self) -> f64 {
        self.reference_ghz
    }

    fn set_reference_ghz(&mut self, freq_ghz: f64) {
        self.reference_ghz = freq_ghz;
    }

    fn apply(&mut self, wave: &DriveWaveform) -> Result<RawCapture> {
        Ok(self
            .plant
            .capture(wave, self.reference_ghz, self.n_periods, &mut self.rng))
    }
}

/// Deterministic noise seed for one ordered transition, independent of the
/// order transitions are measured in.
pub fn transition_seed(campaign_seed: u64, src_index: usize, dst_index: usize) -> u64 {
    hash_chain(campaign_seed, &[src_index as u64, dst_index as u64])
}

/// Apply a waveform and reduce the capture to one averaged target trace
/// over `n_average` bursts.
pub fn measure_average<T: Testbed>(
    bed: &mut T,
    wave: &DriveWaveform,
    n_average: usize,
) -> Result<OffsetTrace> {
    let cap = bed.apply(wave)?;
    average_bursts(&target_bursts(&cap), n_average)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantConfig;
    use crate::waveform::{synthesize, OperatingPoint, SectionCurrents};

    fn op(rear: f64, phase: f64) -> OperatingPoint {
        OperatingPoint {
            front_pair: 3,
            currents: SectionCurrents::new(rear, phase, 2.0),
        }
    }

    #[test]
    fn equal_seeds_reproduce_the_averaged_trace() {
        let plant = Plant::new(PlantConfig::default(), 7).unwrap();
        let wave = synthesize(&op(30.0, 5.0), &op(12.0, 7.0), None, None).unwrap();
        let f_ref = plant.map().steady_frequency_ghz(&op(12.0, 7.0));
        let run = || {
            let mut bed = SimTestbed::new(&plant, 99, 4);
            bed.set_reference_ghz(f_ref);
            measure_average(&mut bed, &wave, 4).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.offset_ghz, b.offset_ghz);
        assert_eq!(a.valid, b.valid);
    }

    #[test]
    fn settled_tone_reads_its_programmed_offset() {
        let plant = Plant::new(PlantConfig::default(), 7).unwrap();
        let at = op(25.0, 6.0);
        let wave = synthesize(&at, &at, None, None).unwrap();
        let mut bed = SimTestbed::new(&plant, 5, 8);
        bed.set_reference_ghz(plant.map().steady_frequency_ghz(&at) - 5.0);
        let trace = measure_average(&mut bed, &wave, 8).unwrap();
        let tail: Vec<f64> = trace.offset_ghz[trace.len() / 2..].to_vec();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((mean - 5.0).abs() < 0.2, "read {mean}");
        assert!(trace.valid[trace.len() / 2..].iter().all(|v| *v));
    }

    #[test]
    fn transition_seeds_depend_on_direction() {
        let a = transition_seed(1, 10, 20);
        let b = transition_seed(1, 20, 10);
        let c = transition_seed(2, 10, 20);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, transition_seed(1, 10, 20));
    }
}
