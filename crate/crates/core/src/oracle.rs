//! Two-phase (oil/water) finite-difference simulator.
//!
//! IMPES scheme: implicit pressure solve on two-point-flux
//! transmissibilities with harmonic inter-cell permeability averaging
//! and a slightly-compressible (single total compressibility)
//! accumulation term, then an explicit upwinded saturation update.
//! Pore volume is linearized as `pv(p) = phi*V*(1 + c_t*(p - p_ref))`
//! with `p_ref` the pressure at run start, which makes the discrete
//! per-phase volume balance close to the linear-solver residual.
//!
//! Face mobilities are upwinded by the previous-step pressure field and
//! reused when splitting the total flux into phase fluxes, so water,
//! oil and total fluxes are consistent by construction. Gravity and
//! capillary pressure are out of scope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Connection, ReservoirModel, ReservoirState, WellKind};
use crate::rates::{phase_inflow, RateTable, WellRates};
use crate::units;

/// Fluid and relative-permeability closure parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidProperties {
    /// Water viscosity, Pa*s.
    pub viscosity_water: f64,
    /// Oil viscosity, Pa*s.
    pub viscosity_oil: f64,
    /// Total (rock + fluid) compressibility, 1/Pa.
    pub c_t: f64,
    /// Corey exponent, water.
    pub n_w: f64,
    /// Corey exponent, oil.
    pub n_o: f64,
    /// Residual water saturation.
    pub s_wr: f64,
    /// Residual oil saturation.
    pub s_or: f64,
    /// Endpoint relative permeability, water.
    pub k0_w: f64,
    /// Endpoint relative permeability, oil.
    pub k0_o: f64,
}

impl FluidProperties {
    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity_water > 0.0 && self.viscosity_oil > 0.0) {
            return Err(Error::Validation("viscosities must be positive".into()));
        }
        if !(self.c_t > 0.0) {
            return Err(Error::Validation("total compressibility must be positive".into()));
        }
        if self.n_w < 1.0 || self.n_o < 1.0 {
            return Err(Error::Validation("Corey exponents must be >= 1".into()));
        }
        if !(0.0 <= self.s_wr && 0.0 <= self.s_or && self.s_wr + self.s_or < 1.0) {
            return Err(Error::Validation("residual saturations must satisfy 0 <= swr+sor < 1".into()));
        }
        if !(0.0 < self.k0_w && self.k0_w <= 1.0 && 0.0 < self.k0_o && self.k0_o <= 1.0) {
            return Err(Error::Validation("endpoint rel-perms must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Corey relative permeabilities at a water saturation.
pub fn relative_permeability(s_w: f64, fluid: &FluidProperties) -> (f64, f64) {
    let span = 1.0 - fluid.s_wr - fluid.s_or;
    let se = ((s_w - fluid.s_wr) / span).clamp(0.0, 1.0);
    let kr_w = fluid.k0_w * se.powf(fluid.n_w);
    let kr_o = fluid.k0_o * (1.0 - se).powf(fluid.n_o);
    (kr_w, kr_o)
}

/// Numerical options of the simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOptions {
    /// Target maximum saturation change per sub-step.
    pub max_sat_change: f64,
    /// Relative residual tolerance of the pressure solve.
    pub cg_tolerance: f64,
    /// CG iteration cap as a multiple of the active cell count.
    pub cg_max_iter_factor: usize,
    /// Initial sub-step length, days.
    pub initial_dt_days: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            max_sat_change: 0.02,
            cg_tolerance: 1e-10,
            cg_max_iter_factor: 10,
            initial_dt_days: 0.5,
        }
    }
}

/// Per-phase volume accounting over a run, m^3 at reservoir conditions
/// (linearized pore volume).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseBalance {
    pub initial_in_place: f64,
    pub final_in_place: f64,
    pub produced: f64,
    pub injected: f64,
}

impl PhaseBalance {
    /// |(initial - final) - (produced - injected)| / initial.
    pub fn relative_closure_error(&self) -> f64 {
        let lhs = self.initial_in_place - self.final_in_place;
        let rhs = self.produced - self.injected;
        (lhs - rhs).abs() / self.initial_in_place.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MaterialBalance {
    pub water: PhaseBalance,
    pub oil: PhaseBalance,
}

/// Result of a full run.
#[derive(Debug)]
pub struct RunResult {
    pub report_times_days: Vec<f64>,
    pub states: Vec<ReservoirState>,
    pub rates: RateTable,
    pub balance: MaterialBalance,
    pub substeps: usize,
    /// Producer connections whose drawdown reversed and were closed for
    /// a sub-step.
    pub crossflow_clamps: usize,
}

struct Face {
    a: usize,
    b: usize,
    t_geom: f64,
}

struct SimConn {
    cell: usize,
    well: usize,
    c_index: f64,
}

/// Outcome of one explicit step.
pub struct StepOutcome {
    pub state: ReservoirState,
    /// Largest water-saturation change over the step.
    pub max_sat_change: f64,
    /// Suggested stable step length (days) based on this step.
    pub stable_dt_days: f64,
    /// Producer connections closed due to reversed drawdown.
    pub crossflow_clamps: usize,
    /// Per-well rates used by this step (positive = produced).
    pub well_water: Vec<f64>,
    pub well_oil: Vec<f64>,
    /// Relative residual of the pressure solve.
    pub residual: f64,
}

/// Precomputed simulation context over one model + fluid.
pub struct Simulator<'m> {
    pub model: &'m ReservoirModel,
    pub fluid: &'m FluidProperties,
    pub options: SimOptions,
    cells: Vec<usize>,
    faces: Vec<Face>,
    conns: Vec<SimConn>,
    pv0: Vec<f64>,
    p_ref: Vec<f64>,
}

impl<'m> Simulator<'m> {
    pub fn new(
        model: &'m ReservoirModel,
        fluid: &'m FluidProperties,
        options: SimOptions,
    ) -> Result<Self> {
        Self::with_multipliers(model, fluid, options, None)
    }

    /// Like `new`, but scaling each connection's productivity index by
    /// a positive multiplier (twin-experiment truth models).
    pub fn with_multipliers(
        model: &'m ReservoirModel,
        fluid: &'m FluidProperties,
        options: SimOptions,
        conn_multipliers: Option<&[f64]>,
    ) -> Result<Self> {
        model.validate()?;
        fluid.validate()?;
        let grid = &model.grid;
        let n = grid.n_cells();
        let mut comp_of = vec![None; n];
        let mut cells = Vec::new();
        for c in 0..n {
            if grid.active[c] {
                comp_of[c] = Some(cells.len());
                cells.push(c);
            }
        }

        let mut faces = Vec::new();
        let mut add_face = |ca: usize, cb: usize, k: (&[f64], f64, f64)| {
            let (perm, area, dist) = k;
            if let (Some(a), Some(b)) = (comp_of[ca], comp_of[cb]) {
                let (ka, kb) = (perm[ca], perm[cb]);
                let harm = if ka + kb > 0.0 { 2.0 * ka * kb / (ka + kb) } else { 0.0 };
                if harm > 0.0 {
                    faces.push(Face {
                        a,
                        b,
                        t_geom: area * harm / dist,
                    });
                }
            }
        };
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let c = grid.flat(i, j, k);
                    if i + 1 < grid.nx {
                        add_face(c, grid.flat(i + 1, j, k), (&model.rock.perm_x, grid.dy * grid.dz, grid.dx));
                    }
                    if j + 1 < grid.ny {
                        add_face(c, grid.flat(i, j + 1, k), (&model.rock.perm_y, grid.dx * grid.dz, grid.dy));
                    }
                    if k + 1 < grid.nz {
                        add_face(c, grid.flat(i, j, k + 1), (&model.rock.perm_z, grid.dx * grid.dy, grid.dz));
                    }
                }
            }
        }

        let connections = model.connections()?;
        if let Some(m) = conn_multipliers {
            if m.len() != connections.len() {
                return Err(Error::Validation(format!(
                    "{} multipliers for {} connections",
                    m.len(),
                    connections.len()
                )));
            }
            if m.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Validation("connection multipliers must be positive".into()));
            }
        }
        let conns: Vec<SimConn> = connections
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let flat = grid.flat(c.cell[0], c.cell[1], c.cell[2]);
                let well = model
                    .wells
                    .iter()
                    .position(|w| w.name == c.well)
                    .expect("connection refers to a model well");
                SimConn {
                    cell: comp_of[flat].expect("connections live on active cells"),
                    well,
                    c_index: c.index_m3 * conn_multipliers.map_or(1.0, |m| m[ci]),
                }
            })
            .collect();

        let vol = grid.cell_volume();
        let pv0: Vec<f64> = cells.iter().map(|&c| model.rock.porosity[c] * vol).collect();
        let p_ref: Vec<f64> = cells.iter().map(|&c| model.initial.pressure[c]).collect();

        Ok(Simulator {
            model,
            fluid,
            options,
            cells,
            faces,
            conns,
            pv0,
            p_ref,
        })
    }

    pub fn connections(&self) -> Result<Vec<Connection>> {
        self.model.connections()
    }

    fn compact_state(&self, state: &ReservoirState) -> (Vec<f64>, Vec<f64>) {
        let p: Vec<f64> = self.cells.iter().map(|&c| state.pressure[c]).collect();
        let sw: Vec<f64> = self.cells.iter().map(|&c| state.sat_water[c]).collect();
        (p, sw)
    }

    fn expand_state(&self, template: &ReservoirState, p: &[f64], sw: &[f64]) -> ReservoirState {
        let mut out = template.clone();
        for (ci, &c) in self.cells.iter().enumerate() {
            out.pressure[c] = p[ci];
            out.sat_water[c] = sw[ci];
            out.sat_oil[c] = 1.0 - sw[ci];
        }
        out
    }

    /// Controls active at time t: (BHP Pa per well | None, rate m^3/s
    /// per well | None) aligned with `model.wells`.
    fn controls_at(&self, t_days: f64) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        let step = self.model.schedule.interval_at(t_days);
        let mut bhp = vec![None; self.model.wells.len()];
        let mut rate = vec![None; self.model.wells.len()];
        for (wi, w) in self.model.wells.iter().enumerate() {
            match w.kind {
                WellKind::Producer => {
                    bhp[wi] = self.model.schedule.bhp_of(&w.name).map(|s| s[step]);
                }
                WellKind::Injector => {
                    rate[wi] = self.model.schedule.rate_of(&w.name).map(|s| s[step]);
                }
            }
        }
        (bhp, rate)
    }

    /// One IMPES step of length `dt_days` starting at `t_days`.
    pub fn step(&self, state: &ReservoirState, t_days: f64, dt_days: f64) -> Result<StepOutcome> {
        if !(dt_days > 0.0) {
            return Err(Error::Validation("step length must be positive".into()));
        }
        let dt = dt_days * units::DAY_TO_S;
        let nc = self.cells.len();
        let (p_old, sw_old) = self.compact_state(state);
        let (bhp, rate) = self.controls_at(t_days);

        // cell mobilities at the old saturations
        let mut lam_w = vec![0.0; nc];
        let mut lam_o = vec![0.0; nc];
        for ci in 0..nc {
            let (kr_w, kr_o) = relative_permeability(sw_old[ci], self.fluid);
            lam_w[ci] = kr_w / self.fluid.viscosity_water;
            lam_o[ci] = kr_o / self.fluid.viscosity_oil;
        }

        // face mobilities upwinded by the old pressure field
        let face_lam: Vec<(f64, f64)> = self
            .faces
            .iter()
            .map(|f| {
                let up = if p_old[f.a] >= p_old[f.b] { f.a } else { f.b };
                (lam_w[up], lam_o[up])
            })
            .collect();

        let accum: Vec<f64> = self.pv0.iter().map(|&pv| pv * self.fluid.c_t / dt).collect();

        // injector per-connection rates (distributed by index)
        let mut inj_conn = vec![0.0; self.conns.len()];
        for (wi, w) in self.model.wells.iter().enumerate() {
            if w.kind != WellKind::Injector {
                continue;
            }
            let q = rate[wi].unwrap_or(0.0);
            if q == 0.0 {
                continue;
            }
            let sum_c: f64 = self
                .conns
                .iter()
                .filter(|c| c.well == wi)
                .map(|c| c.c_index)
                .sum();
            if sum_c <= 0.0 {
                return Err(Error::Numerical(format!(
                    "injector {} has zero total connection index but a nonzero rate",
                    w.name
                )));
            }
            for (k, c) in self.conns.iter().enumerate() {
                if c.well == wi {
                    inj_conn[k] = q * c.c_index / sum_c;
                }
            }
        }

        // producer deactivation loop: drop connections whose drawdown
        // reverses, then re-solve
        let mut open: Vec<bool> = self
            .conns
            .iter()
            .map(|c| self.model.wells[c.well].kind == WellKind::Producer)
            .collect();
        let mut clamps = 0usize;
        let mut p_new = p_old.clone();
        let mut residual;
        loop {
            let mut diag = accum.clone();
            let mut b: Vec<f64> = accum.iter().zip(&p_old).map(|(a, p)| a * p).collect();
            for (f, &(lw, lo)) in self.faces.iter().zip(&face_lam) {
                let lt = lw + lo;
                diag[f.a] += f.t_geom * lt;
                diag[f.b] += f.t_geom * lt;
            }
            for (k, c) in self.conns.iter().enumerate() {
                match self.model.wells[c.well].kind {
                    WellKind::Producer => {
                        if open[k] {
                            let lt = lam_w[c.cell] + lam_o[c.cell];
                            if let Some(pw) = bhp[c.well] {
                                diag[c.cell] += c.c_index * lt;
                                b[c.cell] += c.c_index * lt * pw;
                            }
                        }
                    }
                    WellKind::Injector => {
                        b[c.cell] += inj_conn[k];
                    }
                }
            }

            let matvec = |x: &[f64], y: &mut [f64]| {
                for (yi, (&d, &xi)) in y.iter_mut().zip(diag.iter().zip(x)) {
                    *yi = d * xi;
                }
                for (f, &(lw, lo)) in self.faces.iter().zip(&face_lam) {
                    let t = f.t_geom * (lw + lo);
                    y[f.a] -= t * x[f.b];
                    y[f.b] -= t * x[f.a];
                }
            };

            residual = cg_solve(
                &matvec,
                &diag,
                &b,
                &mut p_new,
                self.options.cg_tolerance,
                self.options.cg_max_iter_factor * nc.max(1),
            )?;

            // check for reversed producers
            let mut changed = false;
            for (k, c) in self.conns.iter().enumerate() {
                if open[k] {
                    if let Some(pw) = bhp[c.well] {
                        if p_new[c.cell] < pw {
                            open[k] = false;
                            changed = true;
                            clamps += 1;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
            log::debug!("producer cross-flow clamped; re-solving pressure");
        }

        // phase fluxes and explicit saturation update
        let pv_old: Vec<f64> = self
            .pv0
            .iter()
            .zip(&p_old)
            .zip(&self.p_ref)
            .map(|((pv, p), pr)| pv * (1.0 + self.fluid.c_t * (p - pr)))
            .collect();
        let pv_new: Vec<f64> = self
            .pv0
            .iter()
            .zip(&p_new)
            .zip(&self.p_ref)
            .map(|((pv, p), pr)| pv * (1.0 + self.fluid.c_t * (p - pr)))
            .collect();

        let mut water_net = vec![0.0; nc]; // m^3/s into cell
        for (f, &(lw, _)) in self.faces.iter().zip(&face_lam) {
            let fw = f.t_geom * lw * (p_new[f.b] - p_new[f.a]);
            water_net[f.a] += fw;
            water_net[f.b] -= fw;
        }
        let n_wells = self.model.wells.len();
        let mut well_water = vec![0.0; n_wells];
        let mut well_oil = vec![0.0; n_wells];
        for (k, c) in self.conns.iter().enumerate() {
            match self.model.wells[c.well].kind {
                WellKind::Producer => {
                    if open[k] {
                        if let Some(pw) = bhp[c.well] {
                            let qw = phase_inflow(c.c_index, lam_w[c.cell], p_new[c.cell], pw);
                            let qo = phase_inflow(c.c_index, lam_o[c.cell], p_new[c.cell], pw);
                            water_net[c.cell] -= qw;
                            well_water[c.well] += qw;
                            well_oil[c.well] += qo;
                        }
                    }
                }
                WellKind::Injector => {
                    water_net[c.cell] += inj_conn[k];
                    well_water[c.well] -= inj_conn[k];
                }
            }
        }

        let mut sw_new = vec![0.0; nc];
        let mut max_ds = 0.0f64;
        for ci in 0..nc {
            let raw = (pv_old[ci] * sw_old[ci] + dt * water_net[ci]) / pv_new[ci];
            if !(-1e-9..=1.0 + 1e-9).contains(&raw) {
                let bound = self.stable_dt_estimate(&pv_old, &water_net, &sw_old);
                return Err(Error::Numerical(format!(
                    "saturation {raw:.6} out of [0,1] after update at cell {}; \
                     use dt below ~{bound:.4} days",
                    self.cells[ci]
                )));
            }
            sw_new[ci] = raw.clamp(0.0, 1.0);
            max_ds = max_ds.max((sw_new[ci] - sw_old[ci]).abs());
        }

        let stable_dt_days = if max_ds > 0.0 {
            dt_days * self.options.max_sat_change / max_ds
        } else {
            f64::INFINITY
        };

        Ok(StepOutcome {
            state: self.expand_state(state, &p_new, &sw_new),
            max_sat_change: max_ds,
            stable_dt_days,
            crossflow_clamps: clamps,
            well_water,
            well_oil,
            residual,
        })
    }

    /// Conservative step-length estimate from current net fluxes.
    fn stable_dt_estimate(&self, pv: &[f64], water_net: &[f64], _sw: &[f64]) -> f64 {
        let mut dt = f64::INFINITY;
        for ci in 0..pv.len() {
            let thr = water_net[ci].abs();
            if thr > 0.0 {
                dt = dt.min(self.options.max_sat_change * pv[ci] / thr);
            }
        }
        dt / units::DAY_TO_S
    }

    /// Instantaneous per-well rates from a state (used for report-time
    /// series; producer drawdown clamped at zero).
    pub fn instantaneous_rates(&self, state: &ReservoirState, t_days: f64) -> (Vec<f64>, Vec<f64>) {
        let (bhp, rate) = self.controls_at(t_days);
        let n_wells = self.model.wells.len();
        let mut well_water = vec![0.0; n_wells];
        let mut well_oil = vec![0.0; n_wells];
        for c in &self.conns {
            let flat = self.cells[c.cell];
            match self.model.wells[c.well].kind {
                WellKind::Producer => {
                    if let Some(pw) = bhp[c.well] {
                        let dp = (state.pressure[flat] - pw).max(0.0);
                        let (kr_w, kr_o) = relative_permeability(state.sat_water[flat], self.fluid);
                        well_water[c.well] += c.c_index * (kr_w / self.fluid.viscosity_water) * dp;
                        well_oil[c.well] += c.c_index * (kr_o / self.fluid.viscosity_oil) * dp;
                    }
                }
                WellKind::Injector => {}
            }
        }
        for (wi, w) in self.model.wells.iter().enumerate() {
            if w.kind == WellKind::Injector {
                well_water[wi] = -rate[wi].unwrap_or(0.0);
            }
        }
        (well_water, well_oil)
    }

    /// Run from the model's initial state, sub-stepping adaptively, and
    /// report states and instantaneous rates at `report_times_days`.
    pub fn run(&self, report_times_days: &[f64]) -> Result<RunResult> {
        for w in report_times_days.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation("report times must be strictly increasing".into()));
            }
        }
        if let (Some(&first), Some(&last)) = (report_times_days.first(), report_times_days.last()) {
            let span = &self.model.schedule.times_days;
            if first < span[0] - 1e-9 || last > span[span.len() - 1] + 1e-9 {
                return Err(Error::Validation(
                    "report times outside the schedule span".into(),
                ));
            }
        }

        let mut state = self.model.initial.clone();
        let mut t = self.model.schedule.times_days[0];
        let mut dt_ctrl = self.options.initial_dt_days;
        let mut substeps = 0usize;
        let mut clamps = 0usize;

        let mut balance = MaterialBalance::default();
        for (ci, &c) in self.cells.iter().enumerate() {
            balance.water.initial_in_place += self.pv0[ci] * state.sat_water[c];
            balance.oil.initial_in_place += self.pv0[ci] * state.sat_oil[c];
        }

        let mut states = Vec::with_capacity(report_times_days.len());
        let mut rate_series: Vec<Vec<WellRates>> =
            vec![Vec::with_capacity(report_times_days.len()); self.model.wells.len()];
        let record = |state: &ReservoirState, t: f64, series: &mut Vec<Vec<WellRates>>| {
            let (ww, wo) = self.instantaneous_rates(state, t);
            for wi in 0..self.model.wells.len() {
                series[wi].push(WellRates {
                    water: ww[wi],
                    oil: wo[wi],
                });
            }
        };

        for &rt in report_times_days {
            while t < rt - 1e-9 {
                // never straddle a schedule timestamp: controls are
                // piecewise-constant between them
                let next_ctrl = self
                    .model
                    .schedule
                    .times_days
                    .iter()
                    .find(|&&ts| ts > t + 1e-9)
                    .copied()
                    .unwrap_or(f64::INFINITY);
                let dt = dt_ctrl.min(rt - t).min(next_ctrl - t);
                match self.step(&state, t, dt) {
                    Ok(out) => {
                        if out.max_sat_change > self.options.max_sat_change && dt > 1e-6 {
                            // too aggressive: retry with a shorter step
                            dt_ctrl = (dt * self.options.max_sat_change
                                / out.max_sat_change)
                                .max(1e-6)
                                * 0.9;
                            continue;
                        }
                        let dt_s = dt * units::DAY_TO_S;
                        for wi in 0..self.model.wells.len() {
                            let (ww, wo) = (out.well_water[wi], out.well_oil[wi]);
                            if ww >= 0.0 {
                                balance.water.produced += ww * dt_s;
                            } else {
                                balance.water.injected += -ww * dt_s;
                            }
                            balance.oil.produced += wo * dt_s;
                        }
                        clamps += out.crossflow_clamps;
                        state = out.state;
                        t += dt;
                        substeps += 1;
                        if out.max_sat_change < 0.5 * self.options.max_sat_change {
                            dt_ctrl = (dt_ctrl * 1.3).min(self.model.schedule.times_days.last().unwrap() - self.model.schedule.times_days[0]);
                        }
                    }
                    Err(Error::Numerical(msg)) => {
                        if dt <= 1e-6 {
                            return Err(Error::Numerical(format!(
                                "step failed at minimum step length: {msg}"
                            )));
                        }
                        dt_ctrl = dt * 0.5;
                    }
                    Err(e) => return Err(e),
                }
            }
            record(&state, rt, &mut rate_series);
            states.push(state.clone());
        }

        for (ci, &c) in self.cells.iter().enumerate() {
            let pv = self.pv0[ci]
                * (1.0 + self.fluid.c_t * (state.pressure[c] - self.p_ref[ci]));
            balance.water.final_in_place += pv * state.sat_water[c];
            balance.oil.final_in_place += pv * state.sat_oil[c];
        }

        let rates = RateTable {
            times_days: report_times_days.to_vec(),
            wells: self.model.wells.iter().map(|w| w.name.clone()).collect(),
            series: rate_series,
        };

        Ok(RunResult {
            report_times_days: report_times_days.to_vec(),
            states,
            rates,
            balance,
            substeps,
            crossflow_clamps: clamps,
        })
    }
}

/// Preconditioned conjugate gradients with Jacobi preconditioning.
/// Solves A x = b in place; returns the final relative residual.
fn cg_solve(
    matvec: &dyn Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let n = b.len();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0.0);
    }
    let mut ax = vec![0.0; n];
    matvec(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
    if res <= tol {
        return Ok(res);
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Numerical(
                "pressure system lost positive definiteness".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
        if res <= tol {
            return Ok(res);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!(
        "pressure solve did not converge: relative residual {res:.3e} after {max_iter} iterations"
    )))
}
