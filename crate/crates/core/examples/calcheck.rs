//! Scratch calibration probe: campaign statistics against the acceptance
//! targets. Not part of the shipped interface.

use std::time::Instant;

use nanotune_core::campaign::{
    calibrate_transition, kick_case, run_campaign, slow_fall_case, CampaignConfig,
};
use nanotune_core::channels::{plan_channels, worst_case_set, GridConfig, SetConfig};
use nanotune_core::optimizer::OptimizerConfig;
use nanotune_core::plant::{Plant, PlantConfig};
use nanotune_core::report::summarize;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("all");
    let disorder: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(7);

    let plant = Plant::new(PlantConfig::default(), disorder).unwrap();
    let grid = GridConfig::default();
    let channels = plan_channels(plant.map(), &grid).unwrap();
    let set = worst_case_set(&channels, &SetConfig::default()).unwrap();
    let opt = OptimizerConfig::default();
    let camp = CampaignConfig::default();
    println!("set: {} channels", set.len());

    if mode == "fall" || mode == "all" {
        let t0 = Instant::now();
        let (src, dst) = slow_fall_case(&plant, &channels, &camp).unwrap();
        println!(
            "slow_fall_case: {} -> {} (rear {:.2} -> {:.2} mA) chosen in {:.1} s",
            src,
            dst,
            channels[src].op.currents.rear_ma,
            channels[dst].op.currents.rear_ma,
            t0.elapsed().as_secs_f64()
        );
        let t0 = Instant::now();
        let (rec, _) = calibrate_transition(&plant, &channels[src], &channels[dst], &opt, &camp, 1)
            .unwrap();
        let cal = rec.cal.as_ref().unwrap();
        println!(
            "  unopt {:?} rear {:?} final {:?} ratio {:?} escalated {} in {:.1} s",
            cal.unoptimized_t10_ns,
            cal.rear_t10_ns,
            cal.final_t10_ns,
            cal.unoptimized_t10_ns
                .zip(cal.rear_t10_ns)
                .map(|(u, r)| u / r),
            cal.escalated,
            t0.elapsed().as_secs_f64()
        );
    }

    if mode == "kick" || mode == "all" {
        let t0 = Instant::now();
        let (src, dst) = kick_case(&plant, &set, &opt, &camp, 1).unwrap();
        println!(
            "kick_case: {} -> {} (rear {:.2} -> {:.2} mA) chosen in {:.1} s",
            src,
            dst,
            channels[src].op.currents.rear_ma,
            channels[dst].op.currents.rear_ma,
            t0.elapsed().as_secs_f64()
        );
        let (rec, _) = calibrate_transition(&plant, &channels[src], &channels[dst], &opt, &camp, 1)
            .unwrap();
        let cal = rec.cal.as_ref().unwrap();
        println!(
            "  rear hop {:?} escalated {} corrected {} final hop {:?} final t10 {:?}",
            cal.rear_hop_window_ns,
            cal.escalated,
            cal.mode_hop_corrected,
            cal.final_hop_window_ns,
            cal.final_t10_ns
        );
    }

    if mode == "campaign" || mode == "all" || mode.starts_with("sub") {
        let subset: Vec<_> = if mode.starts_with("sub") {
            let n: usize = mode[3..].parse().unwrap_or(6);
            set.iter().take(n).cloned().collect()
        } else {
            set.clone()
        };
        let t0 = Instant::now();
        let records = run_campaign(&plant, &subset, &opt, &camp, 1).unwrap();
        let wall = t0.elapsed().as_secs_f64();
        println!(
            "campaign: {} transitions in {:.1} s ({:.2} s/transition)",
            records.len(),
            wall,
            wall / records.len() as f64
        );
        let s = summarize(&records).unwrap();
        println!("  failed {} escalated {}", s.failed, s.escalated);
        println!(
            "  rear: settled {} <=10ns {:.4} <=20ns {:.4} p95 {:.2} max {:.2}",
            s.rear_settled,
            s.rear_within_10ns_fraction,
            s.rear_within_20ns_fraction,
            s.rear_p95_ns,
            s.rear_max_ns
        );
        println!(
            "  final: settled {} <=10ns {:.4} p95 {:.2} max {:.2}",
            s.final_settled, s.final_within_10ns_fraction, s.final_p95_ns, s.final_max_ns
        );
        println!(
            "  spearman {:.3} max|off@15| {:.2} GHz ({} read) corrected {} unresolved {}",
            s.step_time_spearman,
            s.max_offset_at_15ns_ghz,
            s.offsets_at_15ns_read,
            s.mode_hops_corrected,
            s.hops_unresolved
        );
        for f in &s.failures {
            println!("  FAIL {f}");
        }
        // Worst rear-stage stragglers for tuning.
        let mut worst: Vec<_> = records
            .iter()
            .filter_map(|r| {
                let c = r.cal.as_ref()?;
                Some((
                    c.rear_t10_ns.unwrap_or(f64::INFINITY),
                    r.src_index,
                    r.dst_index,
                    r.delta_rear_ma,
                    c.escalated,
                    c.final_t10_ns,
                ))
            })
            .collect();
        worst.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (t, s_, d, dr, esc, ft) in worst.iter().take(12) {
            println!(
                "  rear_t10 {t:7.2}  {s_:3} -> {d:3}  drear {dr:7.2}  esc {esc}  final {ft:?}"
            );
        }
        let mut offs: Vec<_> = records
            .iter()
            .filter_map(|r| {
                let c = r.cal.as_ref()?;
                Some((c.offset_at_15ns_ghz?.abs(), r.src_index, r.dst_index, r.delta_rear_ma, c.escalated))
            })
            .collect();
        offs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (o, s_, d, dr, esc) in offs.iter().take(8) {
            println!("  off15 {o:6.2}  {s_:3} -> {d:3}  drear {dr:7.2}  esc {esc}");
        }
        for r in records {
            let Some(c) = r.cal.as_ref() else { continue };
            if !c.escalated {
                continue;
            }
            println!(
                "  ESC {:3} -> {:3}  rear_t10 {:?} rear_hop {:?} final_t10 {:?} final_hop {:?} unresolved {}",
                r.src_index, r.dst_index, c.rear_t10_ns, c.rear_hop_window_ns,
                c.final_t10_ns, c.final_hop_window_ns,
                c.phase.as_ref().map_or(false, |p| p.unresolved)
            );
        }
    }
}
