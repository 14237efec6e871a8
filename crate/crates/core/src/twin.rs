//! Synthetic twin reservoir: a small heterogeneous box model with
//! three producers and one injector, used by the test suites and as a
//! self-contained demo input for the CLI pipeline.
//!
//! The "truth" variant perturbs the base model with a localized
//! permeability anomaly and one damped connection, so inverse runs can
//! measure how much of the perturbation the adaptation recovers.

use crate::datagen::correlated_field;
use crate::error::Result;
use crate::model::{
    quantize_model, ControlSchedule, GridGeometry, ReservoirModel, ReservoirState, RockProperties,
    Well, WellKind,
};
use crate::oracle::FluidProperties;
use crate::rng;
use crate::units;

pub const TWIN_NX: usize = 16;
pub const TWIN_NY: usize = 16;
pub const TWIN_NZ: usize = 8;

/// Fluid used by every twin experiment.
pub fn twin_fluid() -> FluidProperties {
    FluidProperties {
        viscosity_water: 5e-4,
        viscosity_oil: 2e-3,
        c_t: 1e-9,
        n_w: 2.0,
        n_o: 2.0,
        s_wr: 0.15,
        s_or: 0.2,
        k0_w: 0.4,
        k0_o: 0.9,
    }
}

/// Base twin model on an `nx x ny x nz` grid with 50 m x 50 m x 10 m
/// cells: smooth heterogeneous rock, uniform initial state, three
/// producers (one deviated) and one injector, and a gently varying BHP
/// schedule over `horizon_days`.
pub fn twin_base_model(
    nx: usize,
    ny: usize,
    nz: usize,
    horizon_days: f64,
    step_days: f64,
    seed: u64,
) -> Result<ReservoirModel> {
    let grid = GridGeometry {
        nx,
        ny,
        nz,
        dx: 50.0,
        dy: 50.0,
        dz: 10.0,
        active: vec![true; nx * ny * nz],
    };
    let n = grid.n_cells();
    let shape = [nz, ny, nx];

    let mut r = rng::stream(seed, 0);
    let poro_noise = correlated_field(shape, 0.03, 2.5, &mut r);
    let perm_noise = correlated_field(shape, 0.35, 2.5, &mut r);

    let porosity: Vec<f64> = poro_noise
        .iter()
        .map(|&v| (0.2 + v).clamp(0.05, 0.35))
        .collect();
    let perm_x: Vec<f64> = perm_noise
        .iter()
        .map(|&v| units::md_to_m2(150.0 * v.exp()))
        .collect();
    let perm_y = perm_x.clone();
    let perm_z: Vec<f64> = perm_x.iter().map(|&v| 0.1 * v).collect();

    let rock = RockProperties {
        porosity,
        perm_x,
        perm_y,
        perm_z,
    };
    let initial = ReservoirState {
        pressure: vec![units::bar_to_pa(200.0); n],
        sat_water: vec![0.3; n],
        sat_oil: vec![0.7; n],
    };

    let cx = |i: usize| (i as f64 + 0.5) * grid.dx;
    let cy = |j: usize| (j as f64 + 0.5) * grid.dy;
    let z_top = 0.2 * nz as f64 * grid.dz;
    let z_bot = 0.9 * nz as f64 * grid.dz;
    let wells = vec![
        Well {
            name: "P1".into(),
            kind: WellKind::Producer,
            radius: 0.1,
            trajectory: vec![[cx(3), cy(3), z_top], [cx(3), cy(3), z_bot]],
        },
        Well {
            name: "P2".into(),
            kind: WellKind::Producer,
            radius: 0.1,
            trajectory: vec![
                [cx(3 * nx / 4), cy(nx / 5), z_top],
                [cx(3 * nx / 4), cy(nx / 5), z_bot],
            ],
        },
        Well {
            name: "P3".into(),
            kind: WellKind::Producer,
            radius: 0.1,
            // deviated: drifts one cell-row sideways while descending
            trajectory: vec![
                [cx(nx / 2), cy(3 * ny / 4), z_top],
                [cx(nx / 2) + 1.5 * grid.dx, cy(3 * ny / 4) + grid.dy, z_bot],
            ],
        },
        Well {
            name: "I1".into(),
            kind: WellKind::Injector,
            radius: 0.1,
            trajectory: vec![
                [cx(7 * nx / 16), cy(ny / 2), z_top],
                [cx(7 * nx / 16), cy(ny / 2), z_bot],
            ],
        },
    ];

    let n_steps = (horizon_days / step_days).round() as usize;
    let times_days: Vec<f64> = (0..=n_steps).map(|i| i as f64 * step_days).collect();
    let p0 = units::bar_to_pa(200.0);
    let gen = crate::datagen::ScheduleGenParams::for_initial_pressure(
        p0,
        horizon_days,
        step_days,
    );
    let mut producer_bhp = Vec::new();
    for w in &wells {
        if w.kind == WellKind::Producer {
            let series = crate::datagen::bhp_schedule(&gen, &mut r)?;
            producer_bhp.push((w.name.clone(), series));
        }
    }
    let injector_rate = vec![(
        "I1".to_string(),
        vec![units::m3day_to_m3s(600.0); times_days.len()],
    )];
    let schedule = ControlSchedule {
        times_days,
        producer_bhp,
        injector_rate,
    };

    let mut model = ReservoirModel {
        grid,
        rock,
        initial,
        wells,
        schedule,
    };
    quantize_model(&mut model);
    model.validate()?;
    Ok(model)
}

/// Truth twin for the inverse experiment: the base model with a
/// +50% permeability anomaly in a block around producer P2, plus one
/// connection multiplier damped to `conn_multiplier` on P1's middle
/// connection. Returns the perturbed model and the full multiplier
/// vector aligned with `model.connections()`.
pub fn twin_truth_model(
    base: &ReservoirModel,
    conn_multiplier: f64,
) -> Result<(ReservoirModel, Vec<f64>)> {
    let mut truth = base.clone();
    let g = &truth.grid;
    // anomaly block around P2's column
    let (ci, cj) = (3 * g.nx / 4, g.nx / 5);
    let i_lo = ci.saturating_sub(2);
    let j_lo = cj.saturating_sub(2);
    for k in 0..g.nz {
        for j in j_lo..(cj + 2).min(g.ny) {
            for i in i_lo..(ci + 2).min(g.nx) {
                let c = g.flat(i, j, k);
                truth.rock.perm_x[c] *= 1.5;
                truth.rock.perm_y[c] *= 1.5;
                truth.rock.perm_z[c] *= 1.5;
            }
        }
    }
    quantize_model(&mut truth);
    truth.validate()?;

    let conns = truth.connections()?;
    let mut multipliers = vec![1.0; conns.len()];
    let p1_conns: Vec<usize> = conns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.well == "P1")
        .map(|(i, _)| i)
        .collect();
    if let Some(&mid) = p1_conns.get(p1_conns.len() / 2) {
        multipliers[mid] = conn_multiplier;
    }
    Ok((truth, multipliers))
}
