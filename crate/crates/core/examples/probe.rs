//! Scratch: noiseless plant state for one calibrated transition.
use nanotune_core::campaign::{calibrate_transition, CampaignConfig};
use nanotune_core::channels::{plan_channels, GridConfig};
use nanotune_core::optimizer::OptimizerConfig;
use nanotune_core::plant::{Plant, PlantConfig};
use nanotune_core::testbed::transition_seed;
use nanotune_core::waveform::{synthesize, Edge, PreEmphasisWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let src: usize = args[1].parse().unwrap();
    let dst: usize = args[2].parse().unwrap();

    let plant = Plant::new(PlantConfig::default(), 7).unwrap();
    let channels = plan_channels(plant.map(), &GridConfig::default()).unwrap();
    let opt = OptimizerConfig::default();
    let camp = CampaignConfig::default();
    let (rec, _) =
        calibrate_transition(&plant, &channels[src], &channels[dst], &opt, &camp, 1).unwrap();
    let cal = rec.cal.as_ref().unwrap();

    let s = &channels[src];
    let d = &channels[dst];
    let rear_w =
        PreEmphasisWeights::additive(Edge::of_delta(rec.delta_rear_ma), cal.rear_weights.clone())
            .unwrap();
    let override_taps: Option<Vec<f64>> = (args.len() >= 7)
        .then(|| args[3..7].iter().map(|a| a.parse().unwrap()).collect());
    let phase_w = cal.phase.as_ref().map(|p| {
        let pe = Edge::of_delta(d.op.currents.phase_ma - s.op.currents.phase_ma);
        let taps = override_taps.clone().unwrap_or_else(|| p.weights.clone());
        PreEmphasisWeights::multiplicative(pe, taps).unwrap()
    });
    println!("rear {:?}", cal.rear_weights);
    if let Some(p) = &cal.phase {
        println!("phase {:?} unresolved {}", p.weights, p.unresolved);
    }
    for (name, pw) in [("rear-only", None), ("final", phase_w.as_ref())] {
        let wave = synthesize(&s.op, &d.op, Some(&rear_w), pw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(transition_seed(1, src, dst));
        let trace = plant.trace_frequency(&wave, 1, &mut rng);
        println!("{name}:");
        for smp in trace.iter().take(900).skip(150).step_by(15) {
            println!(
                "  t={:6.2} off={:+9.3} bdist={:.3}",
                smp.t_ns,
                smp.freq_ghz - d.frequency_ghz,
                smp.boundary_dist
            );
        }
    }
}
