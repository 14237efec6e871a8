//! Analytic well inflow from cell states.
//!
//! Inflow follows the standard linear drawdown relation
//! `q = C * m * (p_cell - p_con)` with the connection productivity
//! index `C` built from the equivalent-radius construction of
//! Peaceman (1978, "Interpretation of well-block pressures in numerical
//! reservoir simulation"). Deviated wells contribute per-axis indices
//! that sum per cell.
//!
//! Two routes share the same constants: plain f64 functions (used by
//! the finite-difference simulator and the tests) and a tensor-graph
//! route (used by the surrogate and the adaptation loop) that is
//! differentiable with respect to cell states and connection
//! multipliers.

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{Connection, GridGeometry, ReservoirModel, RockProperties, WellKind};
use crate::oracle::FluidProperties;
use crate::units;

/// Effective permeability-thickness sqrt(k1*k2)*h, m^3.
pub fn kh_effective(k1: f64, k2: f64, h: f64) -> f64 {
    (k1 * k2).sqrt() * h
}

/// Peaceman equivalent radius for an anisotropic rectangular block.
/// `d1`, `d2` are the block sizes and `k1`, `k2` the permeabilities in
/// the two directions perpendicular to the well axis.
pub fn peaceman_radius(d1: f64, d2: f64, k1: f64, k2: f64) -> Result<f64> {
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::Validation("peaceman_radius needs positive block sizes".into()));
    }
    if !(k1 > 0.0 && k2 > 0.0) {
        return Err(Error::Validation(
            "degenerate anisotropy: zero permeability perpendicular to well".into(),
        ));
    }
    let r21 = (k2 / k1).sqrt();
    let r12 = (k1 / k2).sqrt();
    let num = (d1 * d1 * r21 + d2 * d2 * r12).sqrt();
    let den = r21.sqrt() + r12.sqrt();
    Ok(0.28 * num / den)
}

/// Geometry of one connection as needed by the index formula.
#[derive(Debug, Clone)]
pub struct ConnectionGeometry {
    /// Perpendicular block sizes per axis: for axis a, the two cell
    /// sizes in the other directions, m.
    pub d_perp: [[f64; 2]; 3],
    /// Perpendicular permeabilities per axis, m^2.
    pub k_perp: [[f64; 2]; 3],
    /// Per-axis perforated lengths, m.
    pub h: [f64; 3],
    /// Well radius, m.
    pub r_w: f64,
}

/// Connection productivity index: per-axis 2*pi*Kh/ln(r_o/r_w) summed
/// over the axes with nonzero perforated length, m^3.
pub fn connection_index(geom: &ConnectionGeometry) -> Result<f64> {
    if !(geom.r_w > 0.0) {
        return Err(Error::Validation("well radius must be positive".into()));
    }
    let mut total = 0.0;
    for a in 0..3 {
        if geom.h[a] == 0.0 {
            continue;
        }
        let [k1, k2] = geom.k_perp[a];
        let [d1, d2] = geom.d_perp[a];
        let kh = kh_effective(k1, k2, geom.h[a]);
        if kh == 0.0 {
            continue;
        }
        let r_o = peaceman_radius(d1, d2, k1, k2)?;
        if r_o <= geom.r_w {
            return Err(Error::Validation(format!(
                "well radius {} exceeds equivalent radius {r_o}",
                geom.r_w
            )));
        }
        total += 2.0 * std::f64::consts::PI * kh / (r_o / geom.r_w).ln();
    }
    Ok(total)
}

/// Build the geometry of a connection from grid and rock fields and
/// evaluate its index.
pub fn connection_index_for_cell(
    grid: &GridGeometry,
    rock: &RockProperties,
    conn: &Connection,
    r_w: f64,
) -> Result<f64> {
    let c = grid.flat(conn.cell[0], conn.cell[1], conn.cell[2]);
    let (kx, ky, kz) = (rock.perm_x[c], rock.perm_y[c], rock.perm_z[c]);
    let (dx, dy, dz) = (grid.dx, grid.dy, grid.dz);
    let geom = ConnectionGeometry {
        d_perp: [[dy, dz], [dx, dz], [dx, dy]],
        k_perp: [[ky, kz], [kx, kz], [kx, ky]],
        h: conn.h,
        r_w,
    };
    connection_index(&geom)
}

/// Signed volumetric inflow to the well, m^3/s; positive = production.
pub fn phase_inflow(c_index: f64, mobility: f64, p_cell: f64, p_con: f64) -> f64 {
    c_index * mobility * (p_cell - p_con)
}

/// One well's per-phase rate at one time, m^3/s (positive = into well
/// for producers, into reservoir for injectors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellRates {
    pub water: f64,
    pub oil: f64,
}

/// Rate table: `series[well][step]`, aligned with `times_days`.
#[derive(Debug, Clone)]
pub struct RateTable {
    pub times_days: Vec<f64>,
    pub wells: Vec<String>,
    pub series: Vec<Vec<WellRates>>,
}

impl RateTable {
    pub fn rates_of(&self, well: &str) -> Option<&[WellRates]> {
        self.wells
            .iter()
            .position(|w| w == well)
            .map(|i| self.series[i].as_slice())
    }

    /// Exact CSV contract: time_days, well, phase(water|oil),
    /// rate_m3_per_day.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_days,well,phase,rate_m3_per_day\n");
        for (wi, well) in self.wells.iter().enumerate() {
            for (ti, t) in self.times_days.iter().enumerate() {
                let r = &self.series[wi][ti];
                out.push_str(&format!(
                    "{t},{well},water,{}\n",
                    units::m3s_to_m3day(r.water)
                ));
                out.push_str(&format!("{t},{well},oil,{}\n", units::m3s_to_m3day(r.oil)));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<RateTable> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "time_days,well,phase,rate_m3_per_day" {
            return Err(Error::Io(format!("unexpected rates.csv header: {header}")));
        }
        let mut times: Vec<f64> = Vec::new();
        let mut wells: Vec<String> = Vec::new();
        let mut map: std::collections::HashMap<(usize, usize), WellRates> =
            std::collections::HashMap::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Io(format!("rates.csv line {} malformed", ln + 2)));
            }
            let t: f64 = parts[0]
                .parse()
                .map_err(|_| Error::Io(format!("rates.csv line {}: bad time", ln + 2)))?;
            let well = parts[1].to_string();
            let rate_day: f64 = parts[3]
                .parse()
                .map_err(|_| Error::Io(format!("rates.csv line {}: bad rate", ln + 2)))?;
            let rate = units::m3day_to_m3s(rate_day);
            let ti = match times.iter().position(|&x| x == t) {
                Some(i) => i,
                None => {
                    times.push(t);
                    times.len() - 1
                }
            };
            let wi = match wells.iter().position(|w| *w == well) {
                Some(i) => i,
                None => {
                    wells.push(well);
                    wells.len() - 1
                }
            };
            let e = map.entry((wi, ti)).or_insert(WellRates { water: 0.0, oil: 0.0 });
            match parts[2] {
                "water" => e.water = rate,
                "oil" => e.oil = rate,
                other => {
                    return Err(Error::Io(format!(
                        "rates.csv line {}: unknown phase {other}",
                        ln + 2
                    )))
                }
            }
        }
        let series = (0..wells.len())
            .map(|wi| {
                (0..times.len())
                    .map(|ti| {
                        map.get(&(wi, ti))
                            .copied()
                            .unwrap_or(WellRates { water: 0.0, oil: 0.0 })
                    })
                    .collect()
            })
            .collect();
        Ok(RateTable {
            times_days: times,
            wells,
            series,
        })
    }
}

/// Producer rate terms as differentiable graph tensors:
/// `series[well][step]` scalar tensors for (water, oil).
pub struct TensorRates {
    pub wells: Vec<String>,
    pub water: Vec<Vec<Tensor>>,
    pub oil: Vec<Vec<Tensor>>,
}

/// Differentiable producer rates from decoded state cubes.
///
/// `states` is `[T, 3, D, H, W]` with channels (pressure Pa, sat_water,
/// sat_oil) in denormalized units; `step_of_batch` maps each batch
/// entry to its schedule interval. Per connection: Corey mobilities
/// from the cell's water saturation, drawdown clamped at zero (no
/// cross-flow through producers), multiplied by `exp(log_conn)` when
/// multipliers are given. Injectors are rate-controlled and not
/// computed here.
#[allow(clippy::too_many_arguments)]
pub fn producer_rates_tensor(
    g: &Graph,
    states: &Tensor,
    step_of_batch: &[usize],
    model: &ReservoirModel,
    connections: &[Connection],
    fluid: &FluidProperties,
    log_conn: Option<&Tensor>,
    conn_index_override: Option<&[f64]>,
) -> Result<TensorRates> {
    let grid = &model.grid;
    let spatial_shape = states.shape();
    if spatial_shape.len() != 5 || spatial_shape[1] != 3 {
        return Err(Error::Shape(format!(
            "producer rates expect [T,3,D,H,W] states, got {spatial_shape:?}"
        )));
    }
    if spatial_shape[2] != grid.nz || spatial_shape[3] != grid.ny || spatial_shape[4] != grid.nx {
        return Err(Error::Shape(format!(
            "state cube {:?} does not match grid {}x{}x{}",
            &spatial_shape[2..],
            grid.nz,
            grid.ny,
            grid.nx
        )));
    }

    let multipliers = match log_conn {
        Some(lc) => {
            if lc.numel() != connections.len() {
                return Err(Error::Shape(format!(
                    "log_conn has {} entries, {} connections",
                    lc.numel(),
                    connections.len()
                )));
            }
            Some(g.exp(lc)?)
        }
        None => None,
    };

    let producers: Vec<&crate::model::Well> = model
        .wells
        .iter()
        .filter(|w| w.kind == WellKind::Producer)
        .collect();

    let mut water = Vec::with_capacity(producers.len());
    let mut oil = Vec::with_capacity(producers.len());
    let mut names = Vec::with_capacity(producers.len());

    for well in &producers {
        // indices of this well's connections within the global list
        let conn_ids: Vec<usize> = connections
            .iter()
            .enumerate()
            .filter(|(_, c)| c.well == well.name)
            .map(|(i, _)| i)
            .collect();
        let cells: Vec<usize> = conn_ids
            .iter()
            .map(|&i| {
                let c = &connections[i];
                grid.flat(c.cell[0], c.cell[1], c.cell[2])
            })
            .collect();
        let c_index: Vec<f64> = conn_ids
            .iter()
            .map(|&i| match conn_index_override {
                Some(o) => o[i],
                None => connections[i].index_m3,
            })
            .collect();
        let bhp = model
            .schedule
            .bhp_of(&well.name)
            .ok_or_else(|| Error::Validation(format!("no BHP series for {}", well.name)))?;

        let mult_w = match &multipliers {
            Some(m) => Some(g.gather_1d(m, &conn_ids)?),
            None => None,
        };
        let c_tensor = Tensor::from_vec(&[cells.len()], c_index.clone())?;

        let mut w_series = Vec::with_capacity(step_of_batch.len());
        let mut o_series = Vec::with_capacity(step_of_batch.len());
        for (bi, &step) in step_of_batch.iter().enumerate() {
            let p = g.gather_cells(states, bi, 0, &cells)?;
            let sw = g.gather_cells(states, bi, 1, &cells)?;
            let (kr_w, kr_o) = corey_tensor(g, &sw, fluid)?;
            let mob_w = g.scalar_mul(&kr_w, 1.0 / fluid.viscosity_water)?;
            let mob_o = g.scalar_mul(&kr_o, 1.0 / fluid.viscosity_oil)?;
            // drawdown clamped at zero: no injection through a producer
            let dp = g.relu(&g.scalar_add(&p, -bhp[step])?)?;
            let base = g.mul(&c_tensor, &dp)?;
            let base = match &mult_w {
                Some(m) => g.mul(&base, m)?,
                None => base,
            };
            let qw = g.sum(&g.mul(&base, &mob_w)?)?;
            let qo = g.sum(&g.mul(&base, &mob_o)?)?;
            w_series.push(qw);
            o_series.push(qo);
        }
        water.push(w_series);
        oil.push(o_series);
        names.push(well.name.clone());
    }

    Ok(TensorRates {
        wells: names,
        water,
        oil,
    })
}

/// Corey relative permeabilities as tensor ops on a water-saturation
/// vector, matching `oracle::relative_permeability`.
pub fn corey_tensor(g: &Graph, sw: &Tensor, fluid: &FluidProperties) -> Result<(Tensor, Tensor)> {
    let span = 1.0 - fluid.s_wr - fluid.s_or;
    let se = g.clamp(
        &g.scalar_mul(&g.scalar_add(sw, -fluid.s_wr)?, 1.0 / span)?,
        0.0,
        1.0,
    )?;
    let kr_w = g.scalar_mul(&g.powf(&se, fluid.n_w)?, fluid.k0_w)?;
    let one_minus = g.scalar_add(&g.scalar_mul(&se, -1.0)?, 1.0)?;
    let kr_o = g.scalar_mul(&g.powf(&one_minus, fluid.n_o)?, fluid.k0_o)?;
    Ok((kr_w, kr_o))
}
