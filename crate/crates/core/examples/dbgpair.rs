//! Scratch probe for one transition: traces, hop windows, optimizer
//! histories. Not part of the shipped interface.

use nanotune_core::campaign::{calibrate_transition, CampaignConfig};
use nanotune_core::channels::{plan_channels, GridConfig};
use nanotune_core::dsp::{detect_mode_hop, first_valid_ns, measure_switch_time};
use nanotune_core::optimizer::OptimizerConfig;
use nanotune_core::plant::{Plant, PlantConfig};
use nanotune_core::testbed::{measure_average, transition_seed, SimTestbed, Testbed};
use nanotune_core::waveform::{synthesize, Edge, PreEmphasisWeights};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let src: usize = args[1].parse().unwrap();
    let dst: usize = args[2].parse().unwrap();
    let disorder: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(7);

    let plant = Plant::new(PlantConfig::default(), disorder).unwrap();
    let channels = plan_channels(plant.map(), &GridConfig::default()).unwrap();
    let opt = OptimizerConfig::default();
    let camp = CampaignConfig::default();

    // Standalone seed sweep mirroring the search inside optimize_rear.
    {
        let s = &channels[src];
        let d = &channels[dst];
        let mut bed = SimTestbed::new(&plant, transition_seed(1, s.index, d.index), camp.n_periods);
        bed.set_reference_ghz(d.frequency_ghz);
        let bare = synthesize(&s.op, &d.op, None, None).unwrap();
        let edge = Edge::of_delta(bare.delta_v.rear_v);
        let k = match edge {
            Edge::Rising => 2,
            Edge::Falling => 4,
        };
        println!("seed sweep ({:?}, drear_v {:+.3}):", edge, bare.delta_v.rear_v);
        for i in 0..opt.n_seeds {
            let seed = i as f64 * opt.seed_step;
            let mut taps = vec![0.0; k];
            taps[0] = seed;
            let w = PreEmphasisWeights::additive(edge, taps).unwrap();
            let wave = synthesize(&s.op, &d.op, Some(&w), None).unwrap();
            let trace = measure_average(&mut bed, &wave, camp.n_average).unwrap();
            let entry = first_valid_ns(&trace);
            let t10 = measure_switch_time(&trace, opt.settle_threshold_ghz);
            let tail = trace.offset_ghz[trace.len() - 1];
            let at15 = {
                let i15 = (15.0 / trace.dt_ns).round() as usize;
                if trace.valid[i15] {
                    format!("{:+7.2}", trace.offset_ghz[i15])
                } else {
                    "  blank".into()
                }
            };
            println!(
                "  seed {seed:.1}: entry {:>8} t10 {:>8} off@15 {at15} off@end {tail:+7.2} clamped {}",
                entry.map_or("none".into(), |v| format!("{v:.2}")),
                t10.map_or("none".into(), |v| format!("{v:.2}")),
                wave.clamped
            );
        }
    }

    let (rec, traces) =
        calibrate_transition(&plant, &channels[src], &channels[dst], &opt, &camp, 1).unwrap();
    let cal = rec.cal.as_ref().unwrap();
    println!(
        "{} -> {}: drear {:+.2} mA, dphase {:+.3} mA, pair {} -> {}",
        src,
        dst,
        rec.delta_rear_ma,
        channels[dst].op.currents.phase_ma - channels[src].op.currents.phase_ma,
        channels[src].op.front_pair,
        channels[dst].op.front_pair
    );
    println!(
        "seed {:.2} entry {:.2} rear_w {:?} clamped {}",
        cal.seed_tap, cal.seed_entry_ns, cal.rear_weights, cal.rear_adaptation.clamped_updates
    );
    println!(
        "unopt {:?} rear {:?} final {:?} rear_hop {:?} final_hop {:?}",
        cal.unoptimized_t10_ns, cal.rear_t10_ns, cal.final_t10_ns,
        cal.rear_hop_window_ns, cal.final_hop_window_ns
    );
    if let Some(p) = &cal.phase {
        println!("phase weights {:?} unresolved {}", p.weights, p.unresolved);
        for (i, w) in p.adaptation.weight_history.iter().enumerate() {
            let errs = p
                .adaptation
                .error_history
                .get(i.wrapping_sub(1))
                .map(|b| (b.e.clone(), b.filled.clone()));
            println!("  step {i}: w={w:?} errs={errs:?}");
        }
    }
    println!("rear weight history:");
    for (i, w) in cal.rear_adaptation.weight_history.iter().enumerate() {
        let errs = cal
            .rear_adaptation
            .error_history
            .get(i.wrapping_sub(1))
            .map(|b| b.e.clone());
        println!("  step {i}: w={w:?} errs={errs:?}");
    }

    let dump = |name: &str, tr: &nanotune_core::dsp::OffsetTrace| {
        println!("{name}: hop {:?}", detect_mode_hop(tr));
        for i in (0..tr.len().min(1500)).step_by(25) {
            let t = i as f64 * tr.dt_ns;
            println!(
                "  t={t:6.2} off={:9.3} valid={}",
                tr.offset_ghz[i], u8::from(tr.valid[i])
            );
        }
    };
    if let Some(u) = &traces.unoptimized {
        dump("unoptimized", u);
    }
    dump("rear", &traces.rear);
    dump("final", &traces.final_);
}
