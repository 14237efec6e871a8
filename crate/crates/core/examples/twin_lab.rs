//! Scratch bench for tuning the twin experiments. Not part of the
//! test suite; run with `cargo run -p resgrad-core --example twin_lab`.

use std::time::Instant;

use resgrad_core::adapt::{adapt, AdaptVars, HmConfig};
use resgrad_core::datagen::{build_dataset, Dataset, DatasetConfig, NoiseConfig, ScheduleGenParams};
use resgrad_core::oracle::{SimOptions, Simulator};
use resgrad_core::training::{fit, TrainConfig};
use resgrad_core::twin;
use resgrad_core::units;

fn main() {

    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let hm_iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(80);

    let horizon = 300.0;
    let step = 15.0;
    let base = twin::twin_base_model(16, 16, 8, 450.0, step, 3).unwrap();
    let fluid = twin::twin_fluid();

    // A: dataset
    let t0 = Instant::now();
    let dir = std::path::PathBuf::from("/tmp/twin_lab_dataset");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = DatasetConfig {
        n_scenarios: 20,
        master_seed: 42,
        noise: NoiseConfig::default(),
        schedule: ScheduleGenParams::for_initial_pressure(units::bar_to_pa(200.0), horizon, step),
    };
    let manifest = build_dataset(&base, &fluid, &cfg, &SimOptions::default(), &dir).unwrap();
    println!(
        "[A] dataset: {} scenarios in {:.1}s",
        manifest.scenarios.len(),
        t0.elapsed().as_secs_f64()
    );

    // held-out scenario
    let held_dir = std::path::PathBuf::from("/tmp/twin_lab_heldout");
    let _ = std::fs::remove_dir_all(&held_dir);
    let held_cfg = DatasetConfig {
        n_scenarios: 1,
        master_seed: 43,
        ..cfg.clone()
    };
    build_dataset(&base, &fluid, &held_cfg, &SimOptions::default(), &held_dir).unwrap();

    // B: training
    let ds = Dataset::open(&dir).unwrap();
    let t0 = Instant::now();
    let tc = TrainConfig {
        epochs,
        learning_rate: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let fitres = fit(&ds, &tc).unwrap();
    println!(
        "[B] {} epochs in {:.1}s ({:.1}s/epoch); best epoch {}",
        epochs,
        t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() / epochs as f64,
        fitres.best_epoch
    );
    for h in fitres.history.iter().step_by(5.max(epochs / 10)) {
        println!("    epoch {}: train {:.5} val {:.5}", h.epoch, h.train_loss, h.val_loss);
    }
    let h_last = fitres.history.last().unwrap();
    println!("    final: train {:.5} val {:.5}", h_last.train_loss, h_last.val_loss);

    // C: twin A metrics on held-out
    let held = Dataset::open(&held_dir).unwrap().load_scenario(0).unwrap();
    let t0 = Instant::now();
    let simout =
        resgrad_core::surrogate::simulate(&fitres.model, &held.model, &fluid, held.states.len())
            .unwrap();
    let rollout_s = simout.rollout_seconds;
    println!("[C] surrogate rollout: {:.3}s (total {:.3}s)", rollout_s, t0.elapsed().as_secs_f64());
    let grid = &held.model.grid;
    let truth_last = held.states.last().unwrap();
    let pred_last = simout.states.last().unwrap();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut mae = 0.0;
    let mut cnt = 0usize;
    for c in 0..grid.n_cells() {
        if !grid.active[c] {
            continue;
        }
        num += (pred_last.pressure[c] - truth_last.pressure[c]).powi(2);
        den += truth_last.pressure[c].powi(2);
        mae += (pred_last.sat_water[c] - truth_last.sat_water[c]).abs();
        cnt += 1;
    }
    println!(
        "    pressure rel err {:.4}, sat MAE {:.4}",
        (num / den).sqrt(),
        mae / cnt as f64
    );

    // D: oracle wall time on the same scenario
    let t0 = Instant::now();
    let sim = Simulator::new(&held.model, &fluid, SimOptions::default()).unwrap();
    let run = sim.run(&held.report_times_days).unwrap();
    let oracle_s = t0.elapsed().as_secs_f64();
    println!(
        "[D] oracle run: {:.2}s ({} substeps); speedup x{:.1}",
        oracle_s,
        run.substeps,
        oracle_s / rollout_s
    );

    // E: twin B history matching
    let (truth_model, multipliers) = twin::twin_truth_model(&base, 0.3).unwrap();
    let tsim = Simulator::with_multipliers(&truth_model, &fluid, SimOptions::default(), Some(&multipliers)).unwrap();
    let full_times: Vec<f64> = truth_model.schedule.times_days[1..].to_vec();
    let trun = tsim.run(&full_times).unwrap();
    let mut all_times = vec![truth_model.schedule.times_days[0]];
    all_times.extend_from_slice(&full_times);
    let mut series = vec![Vec::new(); truth_model.wells.len()];
    let (w0, o0) = tsim.instantaneous_rates(&truth_model.initial, 0.0);
    for wi in 0..truth_model.wells.len() {
        series[wi].push(resgrad_core::rates::WellRates { water: w0[wi], oil: o0[wi] });
        series[wi].extend_from_slice(&trun.rates.series[wi]);
    }
    let history = resgrad_core::rates::RateTable {
        times_days: all_times,
        wells: trun.rates.wells.clone(),
        series,
    };

    let hm = HmConfig {
        max_iterations: hm_iters,
        window_steps: 20,
        seed: 1,
        ..HmConfig::default()
    };
    let t0 = Instant::now();
    let res = adapt(&fitres.model, &base, &fluid, &history, &hm, AdaptVars::Both).unwrap();
    println!(
        "[E] HM: loss {:.5} -> {:.5} ({}%) in {} iters, {:.1}s",
        res.initial_loss,
        res.final_loss,
        (100.0 * res.final_loss / res.initial_loss) as i32,
        res.iterations,
        t0.elapsed().as_secs_f64()
    );
    let show = res.loss_curve.iter().step_by(10.max(res.iterations / 8));
    for (i, l) in show.enumerate() {
        println!("    iter {}: {:.5}", i * 10.max(res.iterations / 8), l);
    }

    // correlations + forecast error
    let corrected = resgrad_core::adapt::corrected_rates(&fitres.model, &base, &fluid, &res.corrections, 30).unwrap();
    let producers: Vec<String> = vec!["P1".into(), "P2".into(), "P3".into()];
    let per_well = resgrad_core::metrics::per_well_cumulative_correlation(&corrected, &history, &producers, 0, 20);
    for (w, rw, ro) in &per_well {
        println!("    {w}: R water {rw:.4}, R oil {ro:.4}");
    }
    let (aw, ao) = resgrad_core::metrics::windowed_cumulative_error(&corrected, &history, &producers, 0, 20);
    let (fw, fo) = resgrad_core::metrics::windowed_cumulative_error(&corrected, &history, &producers, 20, 30);
    println!("    adapt err: water {aw:.4} oil {ao:.4}; forecast err: water {fw:.4} oil {fo:.4}");

    // keep dataset+model for re-runs
    resgrad_core::surrogate::save_surrogate(&fitres.model, std::path::Path::new("/tmp/twin_lab_model")).unwrap();
}
