use approx::assert_abs_diff_eq;
use tempfile::tempdir;

use crate::datagen::*;
use crate::oracle::SimOptions;
use crate::rng;
use crate::twin;
use crate::units;

#[test]
fn zero_sigma_gives_zero_field() {
    let f = correlated_noise([4, 4, 4], 0.0, 3.0, 7);
    assert!(f.iter().all(|&v| v == 0.0));
}

#[test]
fn noise_mean_is_statistically_zero() {
    // mean removal is exact by construction; verify well below the
    // 5*sigma/sqrt(N) statistical bound
    let n = 16 * 16 * 8;
    let sigma = 1.7;
    let f = correlated_noise([8, 16, 16], sigma, 2.0, 11);
    let mean: f64 = f.iter().sum::<f64>() / n as f64;
    assert!(mean.abs() < 5.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    let std: f64 = (f.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    assert_abs_diff_eq!(std, sigma, epsilon = 1e-9);
}

#[test]
fn correlation_length_raises_lag1_autocorrelation() {
    // empirical lag-1 autocorrelation along x, averaged over 10 seeds
    let lag1 = |field: &[f64], nx: usize| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for row in field.chunks(nx) {
            for w in row.windows(2) {
                num += w[0] * w[1];
            }
            for v in row {
                den += v * v;
            }
        }
        num / den
    };
    let mut smooth_sum = 0.0;
    let mut white_sum = 0.0;
    for seed in 0..10 {
        smooth_sum += lag1(&correlated_noise([4, 16, 16], 1.0, 3.0, seed), 16);
        white_sum += lag1(&correlated_noise([4, 16, 16], 1.0, 0.0, seed), 16);
    }
    assert!(
        smooth_sum / 10.0 > white_sum / 10.0 + 0.3,
        "smooth {smooth_sum} vs white {white_sum}"
    );
}

#[test]
fn randomize_static_zero_amplitude_is_identity() {
    let base = twin::twin_base_model(8, 8, 4, 60.0, 15.0, 3).unwrap();
    let zero = NoiseConfig {
        porosity_std: 0.0,
        log_perm_std: 0.0,
        pressure_std: 0.0,
        saturation_std: 0.0,
        corr_len_cells: 2.0,
    };
    let mut r = rng::stream(5, 0);
    let out = randomize_static(&base, &zero, &mut r);
    assert_eq!(out.rock.porosity, base.rock.porosity);
    assert_eq!(out.rock.perm_x, base.rock.perm_x);
    assert_eq!(out.initial.pressure, base.initial.pressure);
    assert_eq!(out.initial.sat_water, base.initial.sat_water);
}

#[test]
fn randomize_static_respects_clamps_and_determinism() {
    let base = twin::twin_base_model(8, 8, 4, 60.0, 15.0, 3).unwrap();
    let heavy = NoiseConfig {
        porosity_std: 0.8,
        log_perm_std: 0.5,
        pressure_std: units::bar_to_pa(5.0),
        saturation_std: 0.5,
        corr_len_cells: 1.0,
    };
    let out1 = randomize_static(&base, &heavy, &mut rng::stream(9, 0));
    let out2 = randomize_static(&base, &heavy, &mut rng::stream(9, 0));
    let out3 = randomize_static(&base, &heavy, &mut rng::stream(10, 0));
    for c in 0..base.grid.n_cells() {
        assert!((0.01..=0.99).contains(&out1.rock.porosity[c]));
        assert!((0.01..=0.99).contains(&out1.initial.sat_water[c]));
        assert_abs_diff_eq!(
            out1.initial.sat_water[c] + out1.initial.sat_oil[c],
            1.0,
            epsilon = 1e-12
        );
    }
    assert_eq!(out1.rock.perm_x, out2.rock.perm_x);
    assert_ne!(out1.rock.perm_x, out3.rock.perm_x);
    assert_eq!(out1.grid.active, base.grid.active);
}

#[test]
fn bhp_schedule_constant_case() {
    // e0 = 10 bar, e1 = e2 = e3 = 0, e4 = 50 bar, e5 = 0:
    // u = 10*(1 - sin 0)/2 + 50 = 55 bar at every step
    let p = ScheduleGenParams {
        eps0_pa: (units::bar_to_pa(10.0), units::bar_to_pa(10.0)),
        eps1_per_day: (0.0, 0.0),
        eps2_phase: (0.0, 0.0),
        eps3_per_day: (0.0, 0.0),
        eps4_pa: (units::bar_to_pa(50.0), units::bar_to_pa(50.0)),
        eps5_pa: (0.0, 0.0),
        horizon_days: 60.0,
        step_days: 15.0,
    };
    let s = bhp_schedule(&p, &mut rng::stream(1, 0)).unwrap();
    assert_eq!(s.len(), 5);
    for v in &s {
        assert_abs_diff_eq!(*v, units::bar_to_pa(55.0), epsilon = 1e-9);
    }
    // degenerate ranges: independent of seed
    let s2 = bhp_schedule(&p, &mut rng::stream(999, 7)).unwrap();
    assert_eq!(s, s2);
}

#[test]
fn bhp_schedule_decays_to_base_level() {
    let p = ScheduleGenParams {
        eps0_pa: (units::bar_to_pa(40.0), units::bar_to_pa(40.0)),
        eps1_per_day: (0.0, 0.0),
        eps2_phase: (std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
        eps3_per_day: (0.05, 0.05),
        eps4_pa: (units::bar_to_pa(60.0), units::bar_to_pa(60.0)),
        eps5_pa: (0.0, 0.0),
        horizon_days: 2000.0,
        step_days: 100.0,
    };
    let s = bhp_schedule(&p, &mut rng::stream(1, 0)).unwrap();
    let last = *s.last().unwrap();
    assert_abs_diff_eq!(last, units::bar_to_pa(60.0), epsilon = units::bar_to_pa(0.1));
}

#[test]
fn bhp_schedule_rejects_nonpositive() {
    let p = ScheduleGenParams {
        eps0_pa: (0.0, 0.0),
        eps1_per_day: (0.0, 0.0),
        eps2_phase: (0.0, 0.0),
        eps3_per_day: (0.0, 0.0),
        eps4_pa: (0.0, 0.0),
        eps5_pa: (0.0, 0.0),
        horizon_days: 30.0,
        step_days: 15.0,
    };
    assert!(bhp_schedule(&p, &mut rng::stream(1, 0)).is_err());
}

#[test]
fn dataset_is_deterministic_and_loads_back() {
    let base = twin::twin_base_model(8, 8, 4, 45.0, 15.0, 3).unwrap();
    let fluid = twin::twin_fluid();
    let cfg = DatasetConfig {
        n_scenarios: 2,
        master_seed: 21,
        noise: NoiseConfig::default(),
        schedule: ScheduleGenParams::for_initial_pressure(
            units::bar_to_pa(200.0),
            45.0,
            15.0,
        ),
    };
    let d1 = tempdir().unwrap();
    let d2 = tempdir().unwrap();
    build_dataset(&base, &fluid, &cfg, &SimOptions::default(), d1.path()).unwrap();
    build_dataset(&base, &fluid, &cfg, &SimOptions::default(), d2.path()).unwrap();

    // bit-identical array files across runs
    for name in ["s000/model/perm_x.f64", "s001/states/30.f64", "s000/rates.csv"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let ds = Dataset::open(d1.path()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.manifest.rng, "chacha8");
    let sc = ds.load_scenario(0).unwrap();
    assert_eq!(sc.states.len(), 3);
    assert_eq!(sc.report_times_days, vec![15.0, 30.0, 45.0]);
    // loaded rates include t0
    assert_eq!(sc.rates.times_days.len(), 4);
    // different seeds give different fields
    let sc1 = ds.load_scenario(1).unwrap();
    assert_ne!(sc.model.rock.perm_x, sc1.model.rock.perm_x);
}

#[test]
fn degenerate_noise_reproduces_plain_oracle_run() {
    let base = twin::twin_base_model(8, 8, 4, 30.0, 15.0, 3).unwrap();
    let fluid = twin::twin_fluid();
    let cfg = DatasetConfig {
        n_scenarios: 1,
        master_seed: 4,
        noise: NoiseConfig {
            porosity_std: 0.0,
            log_perm_std: 0.0,
            pressure_std: 0.0,
            saturation_std: 0.0,
            corr_len_cells: 1.0,
        },
        schedule: ScheduleGenParams::for_initial_pressure(units::bar_to_pa(200.0), 30.0, 15.0),
    };
    let dir = tempdir().unwrap();
    build_dataset(&base, &fluid, &cfg, &SimOptions::default(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let sc = ds.load_scenario(0).unwrap();
    // statics must match the base exactly; only the schedule changed
    assert_eq!(sc.model.rock.perm_x, base.rock.perm_x);
    assert_eq!(sc.model.initial.pressure, base.initial.pressure);

    // re-run the oracle on the loaded scenario: states must agree
    let sim = crate::oracle::Simulator::new(&sc.model, &fluid, SimOptions::default()).unwrap();
    let run = sim.run(&sc.report_times_days).unwrap();
    for (a, b) in run.states.iter().zip(&sc.states) {
        for c in 0..sc.model.grid.n_cells() {
            // states went through the bar-unit file format once
            assert_abs_diff_eq!(a.pressure[c], b.pressure[c], epsilon = 1e-6 * a.pressure[c]);
            assert_abs_diff_eq!(a.sat_water[c], b.sat_water[c], epsilon = 1e-12);
        }
    }
}
