use approx::assert_abs_diff_eq;

use crate::autodiff::{grad_check, Tensor};
use crate::rates::*;
use crate::units;

#[test]
fn kh_effective_examples() {
    assert_abs_diff_eq!(kh_effective(2e-13, 2e-13, 5.0), 1e-12, epsilon = 1e-24);
    assert_abs_diff_eq!(kh_effective(1e-13, 4e-13, 0.0), 0.0);
    // sqrt(4e-13 * 1e-13) = 2e-13, times h=10 -> 2e-12 m^3
    assert_abs_diff_eq!(kh_effective(4e-13, 1e-13, 10.0), 2e-12, epsilon = 1e-24);
}

#[test]
fn peaceman_isotropic_collapses_to_classic_value() {
    for d in [10.0, 50.0, 100.0] {
        let r = peaceman_radius(d, d, 1e-13, 1e-13).unwrap();
        let expect = 0.28 * d * std::f64::consts::SQRT_2 / 2.0;
        assert!((r - expect).abs() < 1e-12, "d={d}: {r} vs {expect}");
    }
}

#[test]
fn peaceman_anisotropic_matches_independent_recomputation() {
    let (d1, d2) = (100.0, 100.0);
    let k1 = units::md_to_m2(200.0);
    let k2 = units::md_to_m2(50.0);
    let r = peaceman_radius(d1, d2, k1, k2).unwrap();
    // independent recomputation straight from the definition
    let num = (d1 * d1 * (k2 / k1).sqrt() + d2 * d2 * (k1 / k2).sqrt()).sqrt();
    let den = (k2 / k1).powf(0.25) + (k1 / k2).powf(0.25);
    let expect = 0.28 * num / den;
    assert_abs_diff_eq!(r, expect, epsilon = 1e-6);
    assert_abs_diff_eq!(r, 20.87, epsilon = 5e-3);
}

#[test]
fn peaceman_symmetric_under_direction_swap() {
    let r1 = peaceman_radius(80.0, 120.0, 3e-13, 7e-14).unwrap();
    let r2 = peaceman_radius(120.0, 80.0, 7e-14, 3e-13).unwrap();
    assert_abs_diff_eq!(r1, r2, epsilon = 1e-15);
}

#[test]
fn peaceman_rejects_degenerate_anisotropy() {
    let err = peaceman_radius(10.0, 10.0, 0.0, 1e-13).unwrap_err();
    assert!(err.to_string().contains("degenerate anisotropy"));
}

#[test]
fn connection_index_vertical_only() {
    let geom = ConnectionGeometry {
        d_perp: [[10.0, 5.0], [10.0, 5.0], [10.0, 10.0]],
        k_perp: [[1e-13, 1e-14], [1e-13, 1e-14], [1e-13, 1e-13]],
        h: [0.0, 0.0, 8.0],
        r_w: 0.1,
    };
    let c = connection_index(&geom).unwrap();
    let kh = kh_effective(1e-13, 1e-13, 8.0);
    let ro = peaceman_radius(10.0, 10.0, 1e-13, 1e-13).unwrap();
    let expect = 2.0 * std::f64::consts::PI * kh / (ro / 0.1).ln();
    assert_abs_diff_eq!(c, expect, epsilon = 1e-20);
}

#[test]
fn connection_index_direct_evaluation() {
    // Kh = 2e-12 m^3, r_o/r_w = 208.7 -> C = 2*pi*2e-12/ln(208.7)
    let kh: f64 = 2e-12;
    let ratio: f64 = 208.7;
    let c = 2.0 * std::f64::consts::PI * kh / ratio.ln();
    assert_abs_diff_eq!(c, 2.353e-12, epsilon = 1e-15);
}

#[test]
fn connection_index_linear_in_perforated_length() {
    let mut geom = ConnectionGeometry {
        d_perp: [[10.0, 5.0], [10.0, 5.0], [10.0, 10.0]],
        k_perp: [[1e-13, 1e-14], [1e-13, 2e-14], [1e-13, 9e-14]],
        h: [3.0, 2.0, 8.0],
        r_w: 0.1,
    };
    let c1 = connection_index(&geom).unwrap();
    geom.h = [6.0, 4.0, 16.0];
    let c2 = connection_index(&geom).unwrap();
    assert_abs_diff_eq!(c2, 2.0 * c1, epsilon = 1e-18);
}

#[test]
fn phase_inflow_examples() {
    assert_abs_diff_eq!(phase_inflow(2e-12, 1e3, 1.5e7, 1.5e7), 0.0);
    assert_abs_diff_eq!(phase_inflow(2e-12, 1e3, 2e7, 1.9e7), 2e-3, epsilon = 1e-15);
    assert_abs_diff_eq!(phase_inflow(2e-12, 0.0, 2e7, 1e7), 0.0);
}

#[test]
fn rate_csv_round_trip() {
    let table = RateTable {
        times_days: vec![0.0, 15.0],
        wells: vec!["P1".into(), "I1".into()],
        series: vec![
            vec![
                WellRates { water: units::m3day_to_m3s(12.5), oil: units::m3day_to_m3s(80.0) },
                WellRates { water: units::m3day_to_m3s(14.0), oil: units::m3day_to_m3s(75.5) },
            ],
            vec![
                WellRates { water: units::m3day_to_m3s(-60.0), oil: 0.0 },
                WellRates { water: units::m3day_to_m3s(-60.0), oil: 0.0 },
            ],
        ],
    };
    let csv = table.to_csv();
    assert!(csv.starts_with("time_days,well,phase,rate_m3_per_day\n"));
    let back = RateTable::from_csv(&csv).unwrap();
    assert_eq!(back.wells, table.wells);
    assert_eq!(back.times_days, table.times_days);
    for (a, b) in table.series.iter().flatten().zip(back.series.iter().flatten()) {
        assert_abs_diff_eq!(a.water, b.water, epsilon = 1e-12);
        assert_abs_diff_eq!(a.oil, b.oil, epsilon = 1e-12);
    }
}

#[test]
fn unit_conversion_to_m3_per_day_is_exact_factor() {
    let q = 2.5e-3;
    assert_eq!(units::m3s_to_m3day(q), q * 86_400.0);
}

#[test]
fn corey_tensor_matches_scalar_and_passes_grad_check() {
    let fluid = crate::oracle::FluidProperties {
        viscosity_water: 5e-4,
        viscosity_oil: 2e-3,
        c_t: 1e-9,
        n_w: 2.0,
        n_o: 2.0,
        s_wr: 0.15,
        s_or: 0.2,
        k0_w: 0.4,
        k0_o: 0.9,
    };
    let sw_vals = vec![0.2, 0.35, 0.5, 0.7];
    {
        let g = crate::autodiff::Graph::inference();
        let sw = Tensor::from_vec(&[4], sw_vals.clone()).unwrap();
        let (kr_w, kr_o) = corey_tensor(&g, &sw, &fluid).unwrap();
        for (i, &s) in sw_vals.iter().enumerate() {
            let (ew, eo) = crate::oracle::relative_permeability(s, &fluid);
            assert_abs_diff_eq!(kr_w.data()[i], ew, epsilon = 1e-14);
            assert_abs_diff_eq!(kr_o.data()[i], eo, epsilon = 1e-14);
        }
    }
    // gradient of a rate-like chain w.r.t. saturation, away from the
    // clamp edges
    let sw = Tensor::from_vec(&[4], sw_vals).unwrap();
    let err = grad_check(
        |g, t| {
            let (kr_w, kr_o) = corey_tensor(g, &t[0], &fluid)?;
            let mob = g.add(
                &g.scalar_mul(&kr_w, 1.0 / fluid.viscosity_water)?,
                &g.scalar_mul(&kr_o, 1.0 / fluid.viscosity_oil)?,
            )?;
            g.mean(&g.square(&mob)?)
        },
        &[sw],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "err = {err}");
}
