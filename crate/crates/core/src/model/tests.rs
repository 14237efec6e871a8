use approx::assert_abs_diff_eq;
use tempfile::tempdir;

use super::*;
use crate::units;

pub fn box_grid(nx: usize, ny: usize, nz: usize) -> GridGeometry {
    GridGeometry {
        nx,
        ny,
        nz,
        dx: 10.0,
        dy: 10.0,
        dz: 10.0,
        active: vec![true; nx * ny * nz],
    }
}

fn small_model() -> ReservoirModel {
    let grid = box_grid(4, 4, 2);
    let n = grid.n_cells();
    let rock = RockProperties {
        porosity: (0..n).map(|c| 0.15 + 0.001 * c as f64).collect(),
        perm_x: (0..n)
            .map(|c| units::md_to_m2(100.0 + c as f64))
            .collect(),
        perm_y: (0..n)
            .map(|c| units::md_to_m2(90.0 + c as f64))
            .collect(),
        perm_z: (0..n).map(|c| units::md_to_m2(10.0 + c as f64)).collect(),
    };
    let sw: Vec<f64> = (0..n).map(|c| 0.2 + 0.005 * (c % 7) as f64).collect();
    let initial = ReservoirState {
        pressure: (0..n)
            .map(|c| units::bar_to_pa(200.0 + 0.1 * c as f64))
            .collect(),
        sat_oil: sw.iter().map(|s| 1.0 - s).collect(),
        sat_water: sw,
    };
    let wells = vec![
        Well {
            name: "P1".into(),
            kind: WellKind::Producer,
            radius: 0.1,
            trajectory: vec![[15.0, 15.0, 2.0], [15.0, 15.0, 18.0]],
        },
        Well {
            name: "I1".into(),
            kind: WellKind::Injector,
            radius: 0.1,
            trajectory: vec![[35.0, 35.0, 2.0], [35.0, 35.0, 18.0]],
        },
    ];
    let schedule = ControlSchedule {
        times_days: vec![0.0, 10.0, 20.0],
        producer_bhp: vec![(
            "P1".into(),
            vec![
                units::bar_to_pa(150.0),
                units::bar_to_pa(140.0),
                units::bar_to_pa(145.0),
            ],
        )],
        injector_rate: vec![(
            "I1".into(),
            vec![
                units::m3day_to_m3s(50.0),
                units::m3day_to_m3s(60.0),
                units::m3day_to_m3s(55.0),
            ],
        )],
    };
    let mut model = ReservoirModel {
        grid,
        rock,
        initial,
        wells,
        schedule,
    };
    quantize_model(&mut model);
    model
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let model = small_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let loaded = load_model(dir.path()).unwrap();

    assert_eq!(model.rock.porosity, loaded.rock.porosity);
    assert_eq!(model.rock.perm_x, loaded.rock.perm_x);
    assert_eq!(model.rock.perm_y, loaded.rock.perm_y);
    assert_eq!(model.rock.perm_z, loaded.rock.perm_z);
    assert_eq!(model.initial.pressure, loaded.initial.pressure);
    assert_eq!(model.initial.sat_water, loaded.initial.sat_water);
    assert_eq!(model.initial.sat_oil, loaded.initial.sat_oil);
    assert_eq!(model.grid.active, loaded.grid.active);
    assert_eq!(model.schedule.times_days, loaded.schedule.times_days);
    assert_eq!(model.schedule.producer_bhp, loaded.schedule.producer_bhp);
    assert_eq!(model.schedule.injector_rate, loaded.schedule.injector_rate);
    assert_eq!(model.wells.len(), loaded.wells.len());
}

#[test]
fn load_rejects_extent_mismatch_naming_array() {
    let model = small_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    // truncate perm_x to 3*ny*nz elements as if nx were 3
    let bad: Vec<u8> = vec![0u8; 3 * 4 * 2 * 8];
    std::fs::write(dir.path().join("perm_x.f64"), bad).unwrap();
    let err = load_model(dir.path()).unwrap_err();
    assert!(err.to_string().contains("perm_x"), "{err}");
}

#[test]
fn load_rejects_all_inactive() {
    let model = small_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let n = model.grid.n_cells();
    std::fs::write(dir.path().join("active.u8"), vec![0u8; n]).unwrap();
    let err = load_model(dir.path()).unwrap_err();
    assert!(err.to_string().contains("no active cells"), "{err}");
}

#[test]
fn load_rejects_non_finite() {
    let model = small_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let n = model.grid.n_cells();
    let mut buf = Vec::new();
    for i in 0..n {
        let v = if i == 5 { f64::NAN } else { 0.2 };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.path().join("porosity.f64"), buf).unwrap();
    let err = load_model(dir.path()).unwrap_err();
    assert!(err.to_string().contains("non-finite"), "{err}");
}

// ---- compute_connections ----

#[test]
fn vertical_well_through_three_cells() {
    let grid = box_grid(3, 3, 3);
    let well = Well {
        name: "W".into(),
        kind: WellKind::Producer,
        radius: 0.1,
        trajectory: vec![[15.0, 15.0, 0.0], [15.0, 15.0, 30.0]],
    };
    let conns = compute_connections(&well, &grid);
    assert_eq!(conns.len(), 3);
    for (k, c) in conns.iter().enumerate() {
        assert_eq!(c.cell, [1, 1, k]);
        assert_abs_diff_eq!(c.h[0], 0.0);
        assert_abs_diff_eq!(c.h[1], 0.0);
        assert_abs_diff_eq!(c.h[2], 10.0, epsilon = 1e-9);
    }
}

#[test]
fn diagonal_well_projects_onto_two_axes() {
    // 45-degree well crossing one 10 m cell in the x-z plane
    let grid = box_grid(1, 1, 1);
    let well = Well {
        name: "W".into(),
        kind: WellKind::Producer,
        radius: 0.1,
        trajectory: vec![[0.0, 5.0, 0.0], [10.0, 5.0, 10.0]],
    };
    let conns = compute_connections(&well, &grid);
    assert_eq!(conns.len(), 1);
    assert_abs_diff_eq!(conns[0].h[0], 10.0, epsilon = 1e-9);
    assert_abs_diff_eq!(conns[0].h[1], 0.0);
    assert_abs_diff_eq!(conns[0].h[2], 10.0, epsilon = 1e-9);
}

#[test]
fn inactive_cell_yields_no_connection() {
    let mut grid = box_grid(1, 1, 1);
    grid.active[0] = false;
    let well = Well {
        name: "W".into(),
        kind: WellKind::Producer,
        radius: 0.1,
        trajectory: vec![[5.0, 5.0, 0.0], [5.0, 5.0, 10.0]],
    };
    assert!(compute_connections(&well, &grid).is_empty());
}

#[test]
fn trajectory_outside_grid_yields_empty_list() {
    let grid = box_grid(2, 2, 2);
    let well = Well {
        name: "W".into(),
        kind: WellKind::Producer,
        radius: 0.1,
        trajectory: vec![[-50.0, -50.0, -10.0], [-40.0, -50.0, -10.0]],
    };
    assert!(compute_connections(&well, &grid).is_empty());
}

#[test]
fn face_grazing_segment_assigned_to_lower_cell() {
    // segment lying exactly in the plane between cells i=0 and i=1
    let grid = box_grid(2, 1, 1);
    let well = Well {
        name: "W".into(),
        kind: WellKind::Producer,
        radius: 0.1,
        trajectory: vec![[10.0, 5.0, 0.0], [10.0, 5.0, 10.0]],
    };
    let conns = compute_connections(&well, &grid);
    assert_eq!(conns.len(), 1);
    assert_eq!(conns[0].cell, [0, 0, 0]);
}

#[test]
fn projections_sum_to_in_grid_trajectory_projection() {
    let grid = box_grid(5, 4, 3);
    let well = Well {
        name: "W".into(),
        kind: WellKind::Producer,
        radius: 0.1,
        trajectory: vec![[2.0, 3.0, 1.0], [47.0, 33.0, 28.0], [49.0, 39.0, 29.0]],
    };
    let conns = compute_connections(&well, &grid);
    let mut sums = [0.0f64; 3];
    for c in &conns {
        for a in 0..3 {
            sums[a] += c.h[a];
        }
    }
    let mut expect = [0.0f64; 3];
    for seg in well.trajectory.windows(2) {
        for a in 0..3 {
            expect[a] += (seg[1][a] - seg[0][a]).abs();
        }
    }
    for a in 0..3 {
        assert_abs_diff_eq!(sums[a], expect[a], epsilon = 1e-9);
    }
}

mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Subdividing a straight segment into collinear pieces leaves
        /// the connection set unchanged.
        #[test]
        fn subdivision_invariance(
            x0 in 1.0f64..49.0, y0 in 1.0f64..39.0, z0 in 1.0f64..29.0,
            x1 in 1.0f64..49.0, y1 in 1.0f64..39.0, z1 in 1.0f64..29.0,
            t in 0.05f64..0.95,
        ) {
            let grid = box_grid(5, 4, 3);
            let p0 = [x0, y0, z0];
            let p1 = [x1, y1, z1];
            let mid = [
                p0[0] + t * (p1[0] - p0[0]),
                p0[1] + t * (p1[1] - p0[1]),
                p0[2] + t * (p1[2] - p0[2]),
            ];
            let whole = Well {
                name: "W".into(), kind: WellKind::Producer, radius: 0.1,
                trajectory: vec![p0, p1],
            };
            let split = Well {
                name: "W".into(), kind: WellKind::Producer, radius: 0.1,
                trajectory: vec![p0, mid, p1],
            };
            let a = compute_connections(&whole, &grid);
            let b = compute_connections(&split, &grid);
            prop_assert_eq!(a.len(), b.len());
            for (ca, cb) in a.iter().zip(&b) {
                prop_assert_eq!(ca.cell, cb.cell);
                for ax in 0..3 {
                    prop_assert!((ca.h[ax] - cb.h[ax]).abs() < 1e-9);
                }
            }
        }
    }
}
