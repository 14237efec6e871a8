//! Gradient-based history matching over a frozen surrogate.
//!
//! Two correction families: additive rock corrections on a coarse grid
//! (factor-4 blocks, propagated to the full grid by trilinear
//! upsampling, acting in normalized static space) and per-connection
//! multiplicative connectivity corrections parameterized by their
//! logarithms (so the multipliers stay positive by construction).
//! Each iteration rolls the surrogate over the adaptation window,
//! compares predicted producer rates against history under a
//! log-calibrated, time-weighted squared error, backpropagates into the
//! correction tensors, and takes one Adam step. The surrogate weights
//! are bound read-only and never change.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{GridGeometry, ReservoirModel, WellKind};
use crate::oracle::FluidProperties;
use crate::rates::{producer_rates_tensor, RateTable, TensorRates, WellRates};
use crate::rng;
use crate::surrogate::{
    mask_cube, rasterize_control, state_to_cube, static_to_cube, SurrogateModel, STATE_CHANNELS,
    STATIC_CHANNELS,
};
use crate::training::{adam_update, AdamState};
use crate::units;

/// Which correction tensors the optimizer may move; the frozen family
/// stays at its identity value (zeros).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptVars {
    Both,
    RockOnly,
    ConnectivityOnly,
}

/// Correction state: plain data, serializable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionSet {
    /// Coarse spatial extents (cD, cH, cW) = ceil(grid / factor).
    pub coarse_shape: [usize; 3],
    /// `[4, cD, cH, cW]` additive corrections in normalized static
    /// space; channels (porosity, ln kx, ln ky, ln kz).
    pub rock: Vec<f64>,
    /// Log connectivity corrections, one per connection.
    pub log_conn: Vec<f64>,
}

impl CorrectionSet {
    pub fn multipliers(&self) -> Vec<f64> {
        self.log_conn.iter().map(|v| v.exp()).collect()
    }

    pub fn rock_norm_sq(&self) -> f64 {
        self.rock.iter().map(|v| v * v).sum()
    }

    pub fn conn_norm_sq(&self) -> f64 {
        self.log_conn.iter().map(|v| v * v).sum()
    }
}

/// Coarse extents for a grid under a downsampling factor.
pub fn coarse_shape(grid: &GridGeometry, factor: usize) -> [usize; 3] {
    [
        grid.nz.div_ceil(factor),
        grid.ny.div_ceil(factor),
        grid.nx.div_ceil(factor),
    ]
}

/// Zero-mean Gaussian initialization of both correction tensors;
/// `std = 0` gives the exact identity (no correction, unit multipliers).
pub fn init_corrections(
    grid: &GridGeometry,
    n_connections: usize,
    factor: usize,
    noise_std: f64,
    seed: u64,
) -> CorrectionSet {
    let cs = coarse_shape(grid, factor);
    let n_rock = STATIC_CHANNELS * cs[0] * cs[1] * cs[2];
    let mut r = rng::stream(seed, 0);
    let rock = (0..n_rock).map(|_| noise_std * rng::normal(&mut r)).collect();
    let log_conn = (0..n_connections)
        .map(|_| noise_std * rng::normal(&mut r))
        .collect();
    CorrectionSet {
        coarse_shape: cs,
        rock,
        log_conn,
    }
}

/// Upsample the coarse rock correction to the grid, add it to the
/// normalized static cube, and mask inactive/padded cells.
pub fn apply_rock_correction(
    g: &Graph,
    static_cube: &Tensor,
    rock: &Tensor,
    grid: &GridGeometry,
    padded: [usize; 3],
    padded_mask: &Tensor,
) -> Result<Tensor> {
    let up = g.trilinear_resize(rock, [grid.nz, grid.ny, grid.nx])?;
    let up_padded = g.pad_spatial(&up, padded)?;
    let corrected = g.add(static_cube, &up_padded)?;
    g.mul(&corrected, padded_mask)
}

/// Mask over the padded cube: one on active cells, zero elsewhere
/// (including the padding band).
pub fn padded_mask(grid: &GridGeometry, channels: usize, padded: [usize; 3]) -> Result<Tensor> {
    let [pd, ph, pw] = padded;
    let chan = pd * ph * pw;
    let mut buf = vec![0.0; channels * chan];
    for ch in 0..channels {
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    if grid.is_active(i, j, k) {
                        buf[ch * chan + (k * ph + j) * pw + i] = 1.0;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[1, channels, pd, ph, pw], buf)
}

/// Linear time weights w_t = 2t/(T+1) for t = 1..=T (mean exactly 1).
pub fn time_weights(t_count: usize, enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![1.0; t_count];
    }
    (1..=t_count)
        .map(|t| 2.0 * t as f64 / (t_count as f64 + 1.0))
        .collect()
}

/// Adaptation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub coarse_factor: usize,
    pub init_noise_std: f64,
    pub max_iterations: usize,
    /// Stop when relative loss improvement over this many iterations
    /// falls below `plateau_threshold`.
    pub plateau_window: usize,
    pub plateau_threshold: f64,
    pub time_weighting: bool,
    /// Reference rate of the log calibration, m^3/day.
    pub q_ref_m3_per_day: f64,
    /// Adaptation window in schedule steps; 0 uses every step the
    /// history covers.
    pub window_steps: usize,
    pub seed: u64,
}

impl Default for HmConfig {
    fn default() -> Self {
        HmConfig {
            learning_rate: 0.3,
            weight_decay: 5e-4,
            coarse_factor: 4,
            init_noise_std: 0.01,
            max_iterations: 300,
            plateau_window: 20,
            plateau_threshold: 0.01,
            time_weighting: true,
            q_ref_m3_per_day: 1.0,
            window_steps: 0,
            seed: 0,
        }
    }
}

/// Loss parts: `total` carries the full differentiable expression
/// (misfit plus the L2 penalty); the adaptation loop backpropagates
/// `misfit` only and realizes the penalty through decoupled weight
/// decay in the optimizer, so the two never double-count.
pub struct HmLoss {
    pub total: Tensor,
    pub misfit: Tensor,
    pub regularizer_value: f64,
}

/// Time-weighted log-calibrated squared rate error plus the amplitude
/// penalty. `predicted` carries producer rates in m^3/s as graph
/// scalars; `historical` is indexed the same way in m^3/day.
#[allow(clippy::too_many_arguments)]
pub fn hm_loss(
    g: &Graph,
    predicted: &TensorRates,
    historical_day: &[Vec<(f64, f64)>],
    weights: &[f64],
    rock: &Tensor,
    log_conn: &Tensor,
    weight_decay: f64,
    q_ref_m3_per_day: f64,
) -> Result<HmLoss> {
    let n_wells = predicted.wells.len();
    if historical_day.len() != n_wells {
        return Err(Error::Validation(format!(
            "history covers {} wells, prediction {}",
            historical_day.len(),
            n_wells
        )));
    }
    let t_count = weights.len();
    let mut misfit: Option<Tensor> = None;
    for (wi, _) in predicted.wells.iter().enumerate() {
        if predicted.water[wi].len() < t_count || historical_day[wi].len() < t_count {
            return Err(Error::Validation("rate series shorter than the window".into()));
        }
        for t in 0..t_count {
            let (hist_w, hist_o) = historical_day[wi][t];
            if hist_w < 0.0 || hist_o < 0.0 {
                return Err(Error::Validation(format!(
                    "negative historical rate for {} at step {}",
                    predicted.wells[wi],
                    t + 1
                )));
            }
            for (pred, hist) in [
                (&predicted.water[wi][t], hist_w),
                (&predicted.oil[wi][t], hist_o),
            ] {
                let q_day = g.scalar_mul(pred, units::DAY_TO_S / q_ref_m3_per_day)?;
                let cal = g.log1p(&q_day)?;
                let target = (hist / q_ref_m3_per_day).ln_1p();
                let d = g.scalar_add(&cal, -target)?;
                let term = g.scalar_mul(&g.square(&d)?, weights[t] / (n_wells * 2) as f64)?;
                misfit = Some(match misfit {
                    Some(acc) => g.add(&acc, &term)?,
                    None => term,
                });
            }
        }
    }
    let misfit = misfit.ok_or_else(|| Error::Validation("empty rate misfit".into()))?;
    let reg = g.scalar_mul(
        &g.add(&g.sum(&g.square(rock)?)?, &g.sum(&g.square(log_conn)?)?)?,
        weight_decay,
    )?;
    let total = g.add(&misfit, &reg)?;
    Ok(HmLoss {
        regularizer_value: reg.item(),
        total,
        misfit,
    })
}

/// Result of an adaptation run.
#[derive(Debug, Clone)]
pub struct AdaptResult {
    pub corrections: CorrectionSet,
    /// Total loss (misfit + penalty) per iteration.
    pub loss_curve: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

struct PreparedAdapt {
    z0: Tensor,
    u_hats: Vec<Tensor>,
    intervals: Vec<f64>,
    theta_base: Tensor,
    theta_mask: Tensor,
    state_mask: Tensor,
    connections: Vec<crate::model::Connection>,
    historical_day: Vec<Vec<(f64, f64)>>,
    weights: Vec<f64>,
    window: usize,
}

fn prepare(
    surrogate: &SurrogateModel,
    bound: &crate::surrogate::BoundSurrogate,
    reservoir: &ReservoirModel,
    history: &RateTable,
    cfg: &HmConfig,
) -> Result<PreparedAdapt> {
    let scfg = &surrogate.config;
    scfg.validate()?;
    let grid = &reservoir.grid;
    let schedule = &reservoir.schedule;
    let connections = reservoir.connections()?;

    // windows: schedule steps t=1.. covered by the history table
    let mut window = 0usize;
    for (i, &ts) in schedule.times_days.iter().enumerate().skip(1) {
        if history
            .times_days
            .iter()
            .any(|&ht| (ht - ts).abs() < 1e-6)
        {
            window = i;
        } else {
            break;
        }
    }
    if cfg.window_steps > 0 {
        window = window.min(cfg.window_steps);
    }
    if window == 0 {
        return Err(Error::Validation(
            "history does not cover any schedule step".into(),
        ));
    }

    let g = Graph::inference();
    let mode = BatchNormMode::Eval;
    let s0 = state_to_cube(&reservoir.initial, grid, &scfg.norm, scfg.padded_extents)?;
    let z0 = bound.encode_state(&g, &s0, mode)?;
    let mut cubes = Vec::with_capacity(window);
    for step in 0..window {
        cubes.push(rasterize_control(
            schedule,
            step,
            &connections,
            grid,
            &scfg.norm,
            scfg.padded_extents,
        )?);
    }
    let refs: Vec<&Tensor> = cubes.iter().collect();
    let u_enc = bound.encode_control(&g, &g.concat_batch(&refs)?, mode)?;
    let u_hats: Vec<Tensor> = (0..window)
        .map(|i| g.slice_batch(&u_enc, i))
        .collect::<Result<_>>()?;
    let intervals: Vec<f64> = schedule
        .times_days
        .windows(2)
        .take(window)
        .map(|w| w[1] - w[0])
        .collect();

    let theta_base = static_to_cube(&reservoir.rock, grid, &scfg.norm, scfg.padded_extents)?;
    let theta_mask = padded_mask(grid, STATIC_CHANNELS, scfg.padded_extents)?;
    let state_mask = mask_cube(grid, STATE_CHANNELS, window)?;

    // historical producer rates (m^3/day) per producer per window step
    let producers: Vec<&str> = reservoir
        .wells
        .iter()
        .filter(|w| w.kind == WellKind::Producer)
        .map(|w| w.name.as_str())
        .collect();
    let mut historical_day = Vec::with_capacity(producers.len());
    for name in &producers {
        let series = history
            .rates_of(name)
            .ok_or_else(|| Error::Validation(format!("history has no well {name}")))?;
        let mut per_t = Vec::with_capacity(window);
        for step in 1..=window {
            let ts = schedule.times_days[step];
            let hi = history
                .times_days
                .iter()
                .position(|&ht| (ht - ts).abs() < 1e-6)
                .ok_or_else(|| {
                    Error::Validation(format!("history missing time {ts} for {name}"))
                })?;
            per_t.push((
                units::m3s_to_m3day(series[hi].water),
                units::m3s_to_m3day(series[hi].oil),
            ));
        }
        historical_day.push(per_t);
    }

    Ok(PreparedAdapt {
        z0,
        u_hats,
        intervals,
        theta_base,
        theta_mask,
        state_mask,
        connections,
        historical_day,
        weights: time_weights(window, cfg.time_weighting),
        window,
    })
}

/// Run the adaptation loop. The surrogate is used in eval mode through
/// a read-only binding; `history` must carry non-negative producer
/// rates at the schedule report times. Returns the optimized
/// corrections and the per-iteration total loss.
pub fn adapt(
    surrogate: &SurrogateModel,
    reservoir: &ReservoirModel,
    fluid: &FluidProperties,
    history: &RateTable,
    cfg: &HmConfig,
    vars: AdaptVars,
) -> Result<AdaptResult> {
    let bound = surrogate.bind(false);
    let prep = prepare(surrogate, &bound, reservoir, history, cfg)?;
    let scfg = &surrogate.config;
    let grid = &reservoir.grid;

    let init = init_corrections(
        grid,
        prep.connections.len(),
        cfg.coarse_factor,
        cfg.init_noise_std,
        cfg.seed,
    );
    let cs = init.coarse_shape;
    let rock = Tensor::from_vec(&[1, STATIC_CHANNELS, cs[0], cs[1], cs[2]], init.rock.clone())?;
    let log_conn = Tensor::from_vec(&[init.log_conn.len()], init.log_conn.clone())?;
    match vars {
        AdaptVars::Both => {
            rock.set_requires_grad(true);
            log_conn.set_requires_grad(true);
        }
        AdaptVars::RockOnly => {
            rock.set_requires_grad(true);
            log_conn.set_data(&vec![0.0; log_conn.numel()]);
        }
        AdaptVars::ConnectivityOnly => {
            log_conn.set_requires_grad(true);
            rock.set_data(&vec![0.0; rock.numel()]);
        }
    }
    let trainable: Vec<Tensor> = match vars {
        AdaptVars::Both => vec![rock.clone(), log_conn.clone()],
        AdaptVars::RockOnly => vec![rock.clone()],
        AdaptVars::ConnectivityOnly => vec![log_conn.clone()],
    };
    let mut adam = AdamState::new(&trainable, cfg.learning_rate, cfg.weight_decay);

    let mut loss_curve = Vec::new();
    let mut iterations = 0usize;
    for iter in 0..cfg.max_iterations {
        let g = Graph::new();
        let theta = apply_rock_correction(
            &g,
            &prep.theta_base,
            &rock,
            grid,
            scfg.padded_extents,
            &prep.theta_mask,
        )?;
        let theta_hat = bound.encode_static(&g, &theta, BatchNormMode::Eval)?;
        let zs = bound.integrate(
            &g,
            &prep.z0,
            &prep.u_hats,
            &theta_hat,
            &prep.intervals,
            BatchNormMode::Eval,
        )?;
        let z_refs: Vec<&Tensor> = zs.iter().collect();
        let decoded = bound.decode_batch(&g, &g.concat_batch(&z_refs)?, BatchNormMode::Eval)?;
        let cropped = g.crop_spatial(&decoded, [grid.nz, grid.ny, grid.nx])?;
        let masked = g.mul(&cropped, &prep.state_mask)?;
        let denorm = scfg.norm.denormalize_state(&g, &masked)?;
        let steps: Vec<usize> = (1..=prep.window).collect();
        let rates = producer_rates_tensor(
            &g,
            &denorm,
            &steps,
            reservoir,
            &prep.connections,
            fluid,
            Some(&log_conn),
            None,
        )?;
        let loss = hm_loss(
            &g,
            &rates,
            &prep.historical_day,
            &prep.weights,
            &rock,
            &log_conn,
            cfg.weight_decay,
            cfg.q_ref_m3_per_day,
        )?;
        let total_value = loss.total.item();
        if !total_value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite adaptation loss at iteration {iter}"
            )));
        }
        loss_curve.push(total_value);
        iterations = iter + 1;

        // gradient of the misfit only; the L2 penalty acts through the
        // optimizer's decoupled decay
        g.backward(&loss.misfit)?;
        adam_update(&trainable, &mut adam)?;
        for p in &trainable {
            p.zero_grad();
        }

        if iter + 1 >= cfg.plateau_window.max(1) {
            let prev = loss_curve[iter + 1 - cfg.plateau_window.max(1)];
            let rel = (prev - total_value) / prev.abs().max(1e-300);
            if rel < cfg.plateau_threshold {
                log::info!("adaptation plateaued after {} iterations", iter + 1);
                break;
            }
        }
    }

    let corrections = CorrectionSet {
        coarse_shape: cs,
        rock: rock.data(),
        log_conn: log_conn.data(),
    };
    Ok(AdaptResult {
        initial_loss: loss_curve.first().copied().unwrap_or(0.0),
        final_loss: loss_curve.last().copied().unwrap_or(0.0),
        iterations,
        loss_curve,
        corrections,
    })
}

/// Ablation runs: adapt with one correction family frozen at identity.
pub fn ablate(
    surrogate: &SurrogateModel,
    reservoir: &ReservoirModel,
    fluid: &FluidProperties,
    history: &RateTable,
    cfg: &HmConfig,
    vars: AdaptVars,
) -> Result<AdaptResult> {
    adapt(surrogate, reservoir, fluid, history, cfg, vars)
}

/// Roll the corrected surrogate over `steps` schedule intervals and
/// return per-well rates (producers from decoded states with
/// connectivity multipliers; injectors from the schedule).
pub fn corrected_rates(
    surrogate: &SurrogateModel,
    reservoir: &ReservoirModel,
    fluid: &FluidProperties,
    corrections: &CorrectionSet,
    steps: usize,
) -> Result<RateTable> {
    let scfg = &surrogate.config;
    scfg.validate()?;
    let grid = &reservoir.grid;
    let schedule = &reservoir.schedule;
    if steps + 1 > schedule.times_days.len() {
        return Err(Error::Validation(format!(
            "requested {steps} steps, schedule has {}",
            schedule.times_days.len() - 1
        )));
    }
    let connections = reservoir.connections()?;
    let bound = surrogate.bind(false);
    let g = Graph::inference();
    let mode = BatchNormMode::Eval;

    let s0 = state_to_cube(&reservoir.initial, grid, &scfg.norm, scfg.padded_extents)?;
    let z0 = bound.encode_state(&g, &s0, mode)?;
    let theta_base = static_to_cube(&reservoir.rock, grid, &scfg.norm, scfg.padded_extents)?;
    let cs = corrections.coarse_shape;
    let rock = Tensor::from_vec(&[1, STATIC_CHANNELS, cs[0], cs[1], cs[2]], corrections.rock.clone())?;
    let mask4 = padded_mask(grid, STATIC_CHANNELS, scfg.padded_extents)?;
    let theta = apply_rock_correction(&g, &theta_base, &rock, grid, scfg.padded_extents, &mask4)?;
    let theta_hat = bound.encode_static(&g, &theta, mode)?;

    let mut cubes = Vec::with_capacity(steps);
    for step in 0..steps {
        cubes.push(rasterize_control(
            schedule,
            step,
            &connections,
            grid,
            &scfg.norm,
            scfg.padded_extents,
        )?);
    }
    let refs: Vec<&Tensor> = cubes.iter().collect();
    let u_enc = bound.encode_control(&g, &g.concat_batch(&refs)?, mode)?;
    let u_hats: Vec<Tensor> = (0..steps)
        .map(|i| g.slice_batch(&u_enc, i))
        .collect::<Result<_>>()?;
    let intervals: Vec<f64> = schedule
        .times_days
        .windows(2)
        .take(steps)
        .map(|w| w[1] - w[0])
        .collect();
    let zs = bound.integrate(&g, &z0, &u_hats, &theta_hat, &intervals, mode)?;
    let z_refs: Vec<&Tensor> = zs.iter().collect();
    let decoded = bound.decode_batch(&g, &g.concat_batch(&z_refs)?, mode)?;
    let cropped = g.crop_spatial(&decoded, [grid.nz, grid.ny, grid.nx])?;
    let masked = g.mul(&cropped, &mask_cube(grid, STATE_CHANNELS, steps)?)?;
    let denorm = scfg.norm.denormalize_state(&g, &masked)?;

    let log_conn = Tensor::from_vec(&[corrections.log_conn.len()], corrections.log_conn.clone())?;
    let step_idx: Vec<usize> = (1..=steps).collect();
    let tens = producer_rates_tensor(
        &g,
        &denorm,
        &step_idx,
        reservoir,
        &connections,
        fluid,
        Some(&log_conn),
        None,
    )?;

    let times: Vec<f64> = schedule.times_days[..=steps].to_vec();
    let multipliers = corrections.multipliers();
    let mut wells = Vec::new();
    let mut series = Vec::new();
    for w in &reservoir.wells {
        wells.push(w.name.clone());
        match w.kind {
            WellKind::Producer => {
                let pi = tens.wells.iter().position(|n| *n == w.name).expect("producer");
                let mut s = Vec::with_capacity(steps + 1);
                s.push(initial_corrected_rate(reservoir, fluid, &connections, &multipliers, &w.name)?);
                for t in 0..steps {
                    s.push(WellRates {
                        water: tens.water[pi][t].item(),
                        oil: tens.oil[pi][t].item(),
                    });
                }
                series.push(s);
            }
            WellKind::Injector => {
                let rates = schedule.rate_of(&w.name).unwrap_or(&[]);
                let s = (0..=steps)
                    .map(|i| WellRates {
                        water: -rates.get(schedule.interval_at(times[i])).copied().unwrap_or(0.0),
                        oil: 0.0,
                    })
                    .collect();
                series.push(s);
            }
        }
    }
    Ok(RateTable {
        times_days: times,
        wells,
        series,
    })
}

fn initial_corrected_rate(
    reservoir: &ReservoirModel,
    fluid: &FluidProperties,
    connections: &[crate::model::Connection],
    multipliers: &[f64],
    well: &str,
) -> Result<WellRates> {
    let bhp = reservoir
        .schedule
        .bhp_of(well)
        .ok_or_else(|| Error::Validation(format!("no BHP for {well}")))?[0];
    let mut water = 0.0;
    let mut oil = 0.0;
    for (ci, c) in connections.iter().enumerate() {
        if c.well != well {
            continue;
        }
        let flat = reservoir.grid.flat(c.cell[0], c.cell[1], c.cell[2]);
        let dp = (reservoir.initial.pressure[flat] - bhp).max(0.0);
        let (kr_w, kr_o) =
            crate::oracle::relative_permeability(reservoir.initial.sat_water[flat], fluid);
        water += multipliers[ci] * c.index_m3 * kr_w / fluid.viscosity_water * dp;
        oil += multipliers[ci] * c.index_m3 * kr_o / fluid.viscosity_oil * dp;
    }
    Ok(WellRates { water, oil })
}
