//! Supervised end-to-end fitting of the surrogate on generated
//! datasets, and the Adam optimizer shared with the adaptation loop.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, Graph, Tensor};
use crate::datagen::{Dataset, Scenario};
use crate::error::{Error, Result};
use crate::surrogate::{
    mask_cube, rasterize_control, state_to_cube, static_channel_raw, static_to_cube, NormStats,
    SurrogateConfig, SurrogateModel, STATE_CHANNELS,
};

/// Adam optimizer state. Weight decay is decoupled: applied as
/// `param -= lr * wd * param` after the bias-corrected Adam step, per
/// "Decoupled Weight Decay Regularization" (arXiv:1711.05101).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64, weight_decay: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One Adam step over `params`, reading each tensor's accumulated
/// gradient slot (missing gradients count as zero). Gradients are not
/// cleared here; callers zero them after the update.
pub fn adam_update(params: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Validation(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (pi, p) in params.iter().enumerate() {
        let grad = p.grad();
        let mut data = p.data();
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            data[i] -= state.lr * state.weight_decay * data[i];
        }
        p.set_data(&data);
    }
    Ok(())
}

/// Training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Cap on rollout length (schedule steps); 0 means the full series.
    pub rollout_steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Loss weights for (pressure, sat_water, sat_oil) channels.
    pub channel_weights: [f64; STATE_CHANNELS],
    pub seed: u64,
    /// Fraction of scenarios used for training; the rest validate.
    pub split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            rollout_steps: 0,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            channel_weights: [1.0, 1.0, 1.0],
            seed: 0,
            split: 0.8,
        }
    }
}

/// Channel-weighted MSE over active cells, averaged over time steps:
/// both tensors are `[T, 3, D, H, W]`, already masked to active cells.
pub fn rollout_loss(
    g: &Graph,
    predicted: &Tensor,
    truth: &Tensor,
    channel_weights: &[f64; STATE_CHANNELS],
    n_active: usize,
) -> Result<Tensor> {
    let ps = predicted.shape();
    if ps != truth.shape() {
        return Err(Error::Shape(format!(
            "rollout_loss shapes differ: {:?} vs {:?}",
            ps,
            truth.shape()
        )));
    }
    let t_steps = ps[0];
    let diff = g.sub(predicted, truth)?;
    let sq = g.square(&diff)?;
    let weighted = g.channel_affine(&sq, channel_weights, &[0.0; STATE_CHANNELS])?;
    let total = g.sum(&weighted)?;
    g.scalar_mul(&total, 1.0 / (t_steps as f64 * n_active as f64))
}

/// Normalization statistics over the training scenarios: state channels
/// over active cells and all report times (plus the initial state),
/// static channels over active cells, control channels over schedule
/// entries.
pub fn fit_norm_stats(scenarios: &[&Scenario]) -> Result<NormStats> {
    let mut stats = NormStats::identity();
    let acc = |values: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        let var = if n > 1 { m2 / n as f64 } else { 1.0 };
        (mean, var.sqrt().max(1e-12))
    };

    for ch in 0..STATE_CHANNELS {
        let mut it = scenarios.iter().flat_map(|sc| {
            let grid = &sc.model.grid;
            let pick = move |s: &crate::model::ReservoirState, c: usize| match ch {
                0 => s.pressure[c],
                1 => s.sat_water[c],
                _ => s.sat_oil[c],
            };
            std::iter::once(&sc.model.initial)
                .chain(sc.states.iter())
                .flat_map(move |s| {
                    (0..grid.n_cells())
                        .filter(|&c| grid.active[c])
                        .map(move |c| pick(s, c))
                        .collect::<Vec<_>>()
                })
        });
        let (mean, std) = acc(&mut it);
        stats.state_mean[ch] = mean;
        stats.state_std[ch] = std;
    }
    for ch in 0..crate::surrogate::STATIC_CHANNELS {
        let mut it = scenarios.iter().flat_map(|sc| {
            let grid = &sc.model.grid;
            (0..grid.n_cells())
                .filter(|&c| grid.active[c])
                .map(|c| static_channel_raw(&sc.model.rock, ch, c))
                .collect::<Vec<_>>()
        });
        let (mean, std) = acc(&mut it);
        stats.static_mean[ch] = mean;
        stats.static_std[ch] = std;
    }
    {
        let mut bhp = scenarios
            .iter()
            .flat_map(|sc| sc.model.schedule.producer_bhp.iter())
            .flat_map(|(_, s)| s.iter().copied());
        let (mean, std) = acc(&mut bhp);
        stats.control_mean[0] = mean;
        stats.control_std[0] = std;
        let mut inj = scenarios
            .iter()
            .flat_map(|sc| sc.model.schedule.injector_rate.iter())
            .flat_map(|(_, s)| s.iter().copied());
        let (mean, std) = acc(&mut inj);
        stats.control_mean[1] = mean;
        stats.control_std[1] = std;
    }
    stats.validate()?;
    Ok(stats)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct FitResult {
    pub model: SurrogateModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
    }
    out
}

/// Cached per-scenario tensors (constants reused across epochs).
struct PreparedScenario {
    s0: Tensor,
    theta: Tensor,
    controls: Vec<Tensor>,
    truth: Tensor,
    intervals: Vec<f64>,
    n_active: usize,
    mask: Tensor,
    grid_extents: [usize; 3],
}

fn prepare_scenario(
    sc: &Scenario,
    cfg: &SurrogateConfig,
    steps: usize,
) -> Result<PreparedScenario> {
    let grid = &sc.model.grid;
    let norm = &cfg.norm;
    let s0 = state_to_cube(&sc.model.initial, grid, norm, cfg.padded_extents)?;
    let theta = static_to_cube(&sc.model.rock, grid, norm, cfg.padded_extents)?;
    let connections = sc.model.connections()?;
    let mut controls = Vec::with_capacity(steps);
    for step in 0..steps {
        controls.push(rasterize_control(
            &sc.model.schedule,
            step,
            &connections,
            grid,
            norm,
            cfg.padded_extents,
        )?);
    }
    // truth batch [T,3,nz,ny,nx], normalized and masked
    let n = grid.n_cells();
    let mut buf = Vec::with_capacity(steps * STATE_CHANNELS * n);
    for state in sc.states.iter().take(steps) {
        for ch in 0..STATE_CHANNELS {
            let field = match ch {
                0 => &state.pressure,
                1 => &state.sat_water,
                _ => &state.sat_oil,
            };
            for c in 0..n {
                buf.push(if grid.active[c] {
                    norm.normalize_state_value(ch, field[c])
                } else {
                    0.0
                });
            }
        }
    }
    let truth = Tensor::from_vec(&[steps, STATE_CHANNELS, grid.nz, grid.ny, grid.nx], buf)?;
    let times = &sc.model.schedule.times_days;
    let intervals: Vec<f64> = times.windows(2).take(steps).map(|w| w[1] - w[0]).collect();
    Ok(PreparedScenario {
        s0,
        theta,
        controls,
        truth,
        intervals,
        n_active: grid.n_active(),
        mask: mask_cube(grid, STATE_CHANNELS, steps)?,
        grid_extents: [grid.nz, grid.ny, grid.nx],
    })
}

fn scenario_loss(
    g: &Graph,
    bound: &crate::surrogate::BoundSurrogate,
    prep: &PreparedScenario,
    mode: BatchNormMode,
    weights: &[f64; STATE_CHANNELS],
) -> Result<Tensor> {
    let z0 = bound.encode_state(g, &prep.s0, mode)?;
    let theta_hat = bound.encode_static(g, &prep.theta, mode)?;
    let refs: Vec<&Tensor> = prep.controls.iter().collect();
    let u_batch = g.concat_batch(&refs)?;
    let u_enc = bound.encode_control(g, &u_batch, mode)?;
    let u_hats: Vec<Tensor> = (0..prep.controls.len())
        .map(|i| g.slice_batch(&u_enc, i))
        .collect::<Result<_>>()?;
    let zs = bound.integrate(g, &z0, &u_hats, &theta_hat, &prep.intervals, mode)?;
    let z_refs: Vec<&Tensor> = zs.iter().collect();
    let decoded = bound.decode_batch(g, &g.concat_batch(&z_refs)?, mode)?;
    let cropped = g.crop_spatial(&decoded, prep.grid_extents)?;
    let masked = g.mul(&cropped, &prep.mask)?;
    rollout_loss(g, &masked, &prep.truth, weights, prep.n_active)
}

/// Fit a surrogate on a dataset. Scenario order, the train/validation
/// split and weight initialization derive from `config.seed`, so the
/// loss history is reproducible. The dataset itself is never mutated.
/// Returns the weights of the best-validation epoch.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    if dataset.is_empty() {
        return Err(Error::Validation("dataset has no scenarios".into()));
    }
    if !(config.split > 0.0 && config.split < 1.0) {
        return Err(Error::Validation("split must be in (0,1)".into()));
    }
    let scenarios: Vec<Scenario> = (0..dataset.len())
        .map(|i| dataset.load_scenario(i))
        .collect::<Result<_>>()?;
    let n_train = ((scenarios.len() as f64 * config.split).round() as usize)
        .clamp(1, scenarios.len().max(1) - 1)
        .max(1);
    let (train, val) = scenarios.split_at(n_train.min(scenarios.len()));
    let val: Vec<&Scenario> = if val.is_empty() {
        vec![&train[0]]
    } else {
        val.iter().collect()
    };
    let train: Vec<&Scenario> = train.iter().collect();

    let norm = fit_norm_stats(&train)?;
    let grid = &train[0].model.grid;
    let dt = dataset
        .manifest
        .report_times_days
        .first()
        .copied()
        .unwrap_or(1.0);
    let mut cfg = SurrogateConfig::for_grid(grid.nz, grid.ny, grid.nx, dt);
    cfg.norm = norm;
    let template = SurrogateModel::init(cfg.clone(), config.seed)?;
    let bound = template.bind(true);
    let params = bound.params();
    let mut adam = AdamState::new(&params, config.learning_rate, config.weight_decay);

    let full_steps = dataset.manifest.report_times_days.len();
    let steps = if config.rollout_steps == 0 {
        full_steps
    } else {
        config.rollout_steps.min(full_steps)
    };
    let prep_train: Vec<PreparedScenario> = train
        .iter()
        .map(|sc| prepare_scenario(sc, &cfg, steps))
        .collect::<Result<_>>()?;
    let prep_val: Vec<PreparedScenario> = val
        .iter()
        .map(|sc| prepare_scenario(sc, &cfg, steps))
        .collect::<Result<_>>()?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, SurrogateModel, usize)> = None;
    for epoch in 0..config.epochs {
        let mut train_sum = 0.0;
        for prep in &prep_train {
            let g = Graph::new();
            let loss = scenario_loss(&g, &bound, prep, BatchNormMode::Train, &config.channel_weights)?;
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            train_sum += lv;
            g.backward(&loss)?;
            adam_update(&params, &mut adam)?;
            for p in &params {
                p.zero_grad();
            }
        }
        let train_loss = train_sum / prep_train.len() as f64;

        let mut val_sum = 0.0;
        for prep in &prep_val {
            let g = Graph::inference();
            let loss = scenario_loss(&g, &bound, prep, BatchNormMode::Eval, &config.channel_weights)?;
            val_sum += loss.item();
        }
        let val_loss = val_sum / prep_val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        log::info!("epoch {epoch}: train {train_loss:.6}, val {val_loss:.6}");
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, bound.export(&template), epoch));
        }
    }
    let (_, model, best_epoch) = best.expect("at least one epoch");
    Ok(FitResult {
        model,
        history,
        best_epoch,
    })
}

/// Convenience: which scenario indices validate under a config.
pub fn validation_indices(n_scenarios: usize, split: f64) -> Vec<usize> {
    let n_train = ((n_scenarios as f64 * split).round() as usize)
        .clamp(1, n_scenarios.max(1) - 1)
        .max(1);
    (n_train..n_scenarios).collect()
}
