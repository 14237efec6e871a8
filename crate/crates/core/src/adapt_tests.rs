use approx::assert_abs_diff_eq;

use crate::adapt::*;
use crate::autodiff::{grad_check, BatchNormMode, Graph, Tensor};
use crate::model::ReservoirModel;
use crate::rates::producer_rates_tensor;
use crate::surrogate::{
    mask_cube, rasterize_control, state_to_cube, static_to_cube, ConvSpec, NormStats,
    SurrogateConfig, SurrogateModel, STATE_CHANNELS, STATIC_CHANNELS,
};
use crate::twin;

fn toy_surrogate(reservoir: &ReservoirModel, seed: u64) -> SurrogateModel {
    let cfg = SurrogateConfig {
        latent_channels: 2,
        encoder: vec![
            ConvSpec { out_channels: 4, kernel: 3, stride: 1 },
            ConvSpec { out_channels: 6, kernel: 3, stride: 2 },
            ConvSpec { out_channels: 6, kernel: 3, stride: 1 },
            ConvSpec { out_channels: 2, kernel: 3, stride: 2 },
        ],
        g_hidden: 8,
        g_kernel: 3,
        decoder_hidden: vec![6, 6, 6],
        decoder_kernel: 3,
        shuffle_r: 4,
        dt_days: 15.0,
        substeps: 1,
        grid_extents: [4, 8, 8],
        padded_extents: [4, 8, 8],
        norm: toy_norm(),
        ..SurrogateConfig::for_grid(4, 8, 8, 15.0)
    };
    let _ = reservoir;
    let mut model = SurrogateModel::init(cfg, seed).unwrap();
    // warm the batch-norm stats on generic O(1) inputs; the twin's
    // uniform initial state z-scores to an all-zero cube, which would
    // leave degenerate running variances
    warm_random(&mut model, seed + 100);
    // give the rhs mild generic dynamics so controls matter
    let mut r = crate::rng::stream(seed + 1, 0);
    let n = model.g_net.layers[1].kernel.len();
    model.g_net.layers[1].kernel = (0..n).map(|_| 0.02 * crate::rng::normal(&mut r)).collect();
    // scale the decoder head down so decoded fields stay in a physical
    // range (pressure above BHP, saturations off the Corey endpoints)
    let last = model.decoder.layers.last_mut().unwrap();
    for v in last.kernel.iter_mut() {
        *v *= 0.02;
    }
    model
}

fn warm_random(model: &mut SurrogateModel, seed: u64) {
    let randn = |seed: u64, n: usize| -> Vec<f64> {
        let mut r = crate::rng::stream(seed, 0);
        (0..n).map(|_| crate::rng::normal(&mut r)).collect()
    };
    let bound = model.bind(false);
    let g = Graph::inference();
    let s = Tensor::from_vec(&[2, 3, 4, 8, 8], randn(seed, 2 * 3 * 256)).unwrap();
    let th = Tensor::from_vec(&[2, 4, 4, 8, 8], randn(seed + 1, 2 * 4 * 256)).unwrap();
    let u = Tensor::from_vec(&[2, 2, 4, 8, 8], randn(seed + 2, 2 * 2 * 256)).unwrap();
    let z = bound.encode_state(&g, &s, BatchNormMode::Train).unwrap();
    let th_hat = bound.encode_static(&g, &th, BatchNormMode::Train).unwrap();
    let u_hat = bound.encode_control(&g, &u, BatchNormMode::Train).unwrap();
    let z0 = g.slice_batch(&z, 0).unwrap();
    let u0 = g.slice_batch(&u_hat, 0).unwrap();
    let t0 = g.slice_batch(&th_hat, 0).unwrap();
    let _ = bound.latent_rhs(&g, &z0, &u0, &t0, BatchNormMode::Train).unwrap();
    let zr = Tensor::from_vec(&[2, 2, 1, 2, 2], randn(seed + 3, 16)).unwrap();
    let _ = bound.decode_batch(&g, &zr, BatchNormMode::Train).unwrap();
    *model = bound.export(model);
}

fn toy_norm() -> NormStats {
    let mut n = NormStats::identity();
    n.state_mean = [2.0e7, 0.3, 0.7];
    n.state_std = [2.0e6, 0.05, 0.05];
    n.static_mean = [0.2, -29.5, -29.5, -31.8];
    n.static_std = [0.03, 0.4, 0.4, 0.4];
    n.control_mean = [1.5e7, 5.0e-3];
    n.control_std = [2.0e6, 2.0e-3];
    n
}

#[test]
fn init_corrections_identity_and_shapes() {
    let grid = crate::model::tests::box_grid(16, 16, 8);
    let set = init_corrections(&grid, 12, 4, 0.0, 3);
    assert_eq!(set.coarse_shape, [2, 4, 4]);
    assert_eq!(set.rock.len(), STATIC_CHANNELS * 2 * 4 * 4);
    assert!(set.rock.iter().all(|&v| v == 0.0));
    assert!(set.multipliers().iter().all(|&m| m == 1.0));

    let a = init_corrections(&grid, 12, 4, 0.05, 9);
    let b = init_corrections(&grid, 12, 4, 0.05, 9);
    let c = init_corrections(&grid, 12, 4, 0.05, 10);
    assert_eq!(a.rock, b.rock);
    assert_ne!(a.rock, c.rock);
    assert!(a.multipliers().iter().all(|&m| m > 0.0));
}

#[test]
fn apply_rock_correction_identity_and_constant_shift() {
    let reservoir = twin::twin_base_model(8, 8, 4, 45.0, 15.0, 3).unwrap();
    let grid = &reservoir.grid;
    let norm = toy_norm();
    let g = Graph::new();
    let cube = static_to_cube(&reservoir.rock, grid, &norm, [4, 8, 8]).unwrap();
    let mask = padded_mask(grid, STATIC_CHANNELS, [4, 8, 8]).unwrap();

    let zero = Tensor::zeros(&[1, STATIC_CHANNELS, 1, 2, 2]);
    let same = apply_rock_correction(&g, &cube, &zero, grid, [4, 8, 8], &mask).unwrap();
    assert_eq!(same.data(), cube.data());

    // constant c on channel 1 shifts that channel uniformly on active cells
    let c_shift = 0.37;
    let mut corr = vec![0.0; STATIC_CHANNELS * 4];
    for v in corr.iter_mut().skip(4).take(4) {
        *v = c_shift;
    }
    let corr = Tensor::from_vec(&[1, STATIC_CHANNELS, 1, 2, 2], corr).unwrap();
    let shifted = apply_rock_correction(&g, &cube, &corr, grid, [4, 8, 8], &mask).unwrap();
    let before = cube.data();
    let after = shifted.data();
    let chan = 4 * 8 * 8;
    for i in 0..chan {
        assert_abs_diff_eq!(after[chan + i], before[chan + i] + c_shift, epsilon = 1e-12);
        assert_abs_diff_eq!(after[i], before[i], epsilon = 1e-15); // channel 0 untouched
    }
}

#[test]
fn apply_rock_correction_gradient_matches_fd() {
    let reservoir = twin::twin_base_model(8, 8, 4, 45.0, 15.0, 3).unwrap();
    let grid = reservoir.grid.clone();
    let norm = toy_norm();
    let cube = static_to_cube(&reservoir.rock, &grid, &norm, [4, 8, 8]).unwrap();
    let mask = padded_mask(&grid, STATIC_CHANNELS, [4, 8, 8]).unwrap();
    let corr = Tensor::from_vec(
        &[1, STATIC_CHANNELS, 1, 2, 2],
        (0..16).map(|i| 0.01 * i as f64).collect(),
    )
    .unwrap();
    let err = grad_check(
        |g, t| {
            let out = apply_rock_correction(g, &cube, &t[0], &grid, [4, 8, 8], &mask)?;
            g.mean(&g.square(&out)?)
        },
        &[corr],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "err = {err}");
}

#[test]
fn time_weights_linear_and_normalized() {
    let w = time_weights(5, true);
    assert_eq!(w.len(), 5);
    let mean: f64 = w.iter().sum::<f64>() / 5.0;
    assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
    assert!(w.windows(2).all(|p| p[1] > p[0]));
    assert_abs_diff_eq!(w[0], 2.0 / 6.0, epsilon = 1e-12);
    let flat = time_weights(4, false);
    assert!(flat.iter().all(|&v| v == 1.0));
}

struct Pipeline {
    reservoir: ReservoirModel,
    surrogate: SurrogateModel,
    fluid: crate::oracle::FluidProperties,
    window: usize,
}

impl Pipeline {
    fn new(seed: u64) -> Pipeline {
        let reservoir = twin::twin_base_model(8, 8, 4, 45.0, 15.0, 3).unwrap();
        let surrogate = toy_surrogate(&reservoir, seed);
        Pipeline {
            reservoir,
            surrogate,
            fluid: twin::twin_fluid(),
            window: 2,
        }
    }

    /// hm_loss of the full pipeline at given correction tensors.
    fn loss(&self, g: &Graph, rock: &Tensor, log_conn: &Tensor) -> crate::error::Result<HmLoss> {
        let scfg = &self.surrogate.config;
        let grid = &self.reservoir.grid;
        let bound = self.surrogate.bind(false);
        let mode = BatchNormMode::Eval;
        let conns = self.reservoir.connections()?;
        let s0 = state_to_cube(&self.reservoir.initial, grid, &scfg.norm, scfg.padded_extents)?;
        let z0 = bound.encode_state(g, &s0, mode)?;
        let theta_base = static_to_cube(&self.reservoir.rock, grid, &scfg.norm, scfg.padded_extents)?;
        let mask4 = padded_mask(grid, STATIC_CHANNELS, scfg.padded_extents)?;
        let theta = apply_rock_correction(g, &theta_base, rock, grid, scfg.padded_extents, &mask4)?;
        let theta_hat = bound.encode_static(g, &theta, mode)?;
        let mut cubes = Vec::new();
        for step in 0..self.window {
            cubes.push(rasterize_control(
                &self.reservoir.schedule,
                step,
                &conns,
                grid,
                &scfg.norm,
                scfg.padded_extents,
            )?);
        }
        let refs: Vec<&Tensor> = cubes.iter().collect();
        let u_enc = bound.encode_control(g, &g.concat_batch(&refs)?, mode)?;
        let u_hats: Vec<Tensor> = (0..self.window)
            .map(|i| g.slice_batch(&u_enc, i))
            .collect::<crate::error::Result<_>>()?;
        let intervals = vec![15.0; self.window];
        let zs = bound.integrate(g, &z0, &u_hats, &theta_hat, &intervals, mode)?;
        let z_refs: Vec<&Tensor> = zs.iter().collect();
        let decoded = bound.decode_batch(g, &g.concat_batch(&z_refs)?, mode)?;
        let cropped = g.crop_spatial(&decoded, [grid.nz, grid.ny, grid.nx])?;
        let masked = g.mul(&cropped, &mask_cube(grid, STATE_CHANNELS, self.window)?)?;
        let denorm = scfg.norm.denormalize_state(g, &masked)?;
        let steps: Vec<usize> = (1..=self.window).collect();
        let rates = producer_rates_tensor(
            g,
            &denorm,
            &steps,
            &self.reservoir,
            &conns,
            &self.fluid,
            Some(log_conn),
            None,
        )?;
        // synthetic history: constant plausible positive rates
        let n_prod = rates.wells.len();
        let hist: Vec<Vec<(f64, f64)>> = (0..n_prod)
            .map(|wi| (0..self.window).map(|t| (50.0 + 10.0 * wi as f64, 300.0 + 5.0 * t as f64)).collect())
            .collect();
        hm_loss(
            g,
            &rates,
            &hist,
            &time_weights(self.window, true),
            rock,
            log_conn,
            5e-4,
            1.0,
        )
    }
}

#[test]
fn hm_loss_gradient_matches_fd_through_full_pipeline() {
    let pipe = Pipeline::new(19);
    let n_conn = pipe.reservoir.connections().unwrap().len();
    let rock = Tensor::from_vec(
        &[1, STATIC_CHANNELS, 1, 2, 2],
        (0..16).map(|i| 0.005 * (i as f64 - 8.0)).collect(),
    )
    .unwrap();
    let log_conn = Tensor::from_vec(
        &[n_conn],
        (0..n_conn).map(|i| 0.01 * (i as f64 - 2.0)).collect(),
    )
    .unwrap();
    let err = grad_check(
        |g, t| Ok(pipe.loss(g, &t[0], &t[1])?.total),
        &[rock, log_conn],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "hm_loss grad err = {err}");
}

#[test]
fn hm_loss_value_examples() {
    let pipe = Pipeline::new(23);
    let n_conn = pipe.reservoir.connections().unwrap().len();
    let g = Graph::inference();

    // regularizer isolation: with predicted == historical the loss
    // equals wd * ||corrections||^2 exactly; emulate by computing the
    // loss twice and subtracting the misfit part
    let rock = Tensor::from_vec(&[1, STATIC_CHANNELS, 1, 2, 2], vec![0.1; 16]).unwrap();
    let log_conn = Tensor::from_vec(&[n_conn], vec![-0.2; n_conn]).unwrap();
    let loss = pipe.loss(&g, &rock, &log_conn).unwrap();
    let reg_expect = 5e-4 * (16.0 * 0.01 + n_conn as f64 * 0.04);
    assert_abs_diff_eq!(loss.regularizer_value, reg_expect, epsilon = 1e-12);
    assert_abs_diff_eq!(
        loss.total.item() - loss.misfit.item(),
        reg_expect,
        epsilon = 1e-10
    );

    // predicted == historical and zero corrections -> exactly zero
    let zero_rock = Tensor::zeros(&[1, STATIC_CHANNELS, 1, 2, 2]);
    let zero_conn = Tensor::zeros(&[n_conn]);
    let conns = pipe.reservoir.connections().unwrap();
    let zero_set = CorrectionSet {
        coarse_shape: [1, 2, 2],
        rock: vec![0.0; 16],
        log_conn: vec![0.0; n_conn],
    };
    let self_rates =
        corrected_rates(&pipe.surrogate, &pipe.reservoir, &pipe.fluid, &zero_set, pipe.window)
            .unwrap();
    let producers: Vec<usize> = conns.iter().map(|_| 0).collect();
    let _ = producers;
    // feed the model's own rates back as history through hm_loss
    let g2 = Graph::inference();
    let scfg = &pipe.surrogate.config;
    let _ = scfg;
    let prod_names: Vec<String> = self_rates
        .wells
        .iter()
        .filter(|w| w.starts_with('P'))
        .cloned()
        .collect();
    let hist: Vec<Vec<(f64, f64)>> = prod_names
        .iter()
        .map(|w| {
            self_rates.rates_of(w).unwrap()[1..=pipe.window]
                .iter()
                .map(|r| {
                    (
                        crate::units::m3s_to_m3day(r.water),
                        crate::units::m3s_to_m3day(r.oil),
                    )
                })
                .collect()
        })
        .collect();
    // recompute predicted rates with identical (zero) corrections
    let bound = pipe.surrogate.bind(false);
    let _ = bound;
    let loss = {
        let pipe_loss = |g: &Graph| -> crate::error::Result<HmLoss> {
            let scfg = &pipe.surrogate.config;
            let grid = &pipe.reservoir.grid;
            let bound = pipe.surrogate.bind(false);
            let mode = BatchNormMode::Eval;
            let s0 = state_to_cube(&pipe.reservoir.initial, grid, &scfg.norm, scfg.padded_extents)?;
            let z0 = bound.encode_state(g, &s0, mode)?;
            let theta_base =
                static_to_cube(&pipe.reservoir.rock, grid, &scfg.norm, scfg.padded_extents)?;
            let mask4 = padded_mask(grid, STATIC_CHANNELS, scfg.padded_extents)?;
            let theta =
                apply_rock_correction(g, &theta_base, &zero_rock, grid, scfg.padded_extents, &mask4)?;
            let theta_hat = bound.encode_static(g, &theta, mode)?;
            let mut cubes = Vec::new();
            for step in 0..pipe.window {
                cubes.push(rasterize_control(
                    &pipe.reservoir.schedule,
                    step,
                    &conns,
                    grid,
                    &scfg.norm,
                    scfg.padded_extents,
                )?);
            }
            let refs: Vec<&Tensor> = cubes.iter().collect();
            let u_enc = bound.encode_control(g, &g.concat_batch(&refs)?, mode)?;
            let u_hats: Vec<Tensor> = (0..pipe.window)
                .map(|i| g.slice_batch(&u_enc, i))
                .collect::<crate::error::Result<_>>()?;
            let zs = bound.integrate(g, &z0, &u_hats, &theta_hat, &vec![15.0; pipe.window], mode)?;
            let z_refs: Vec<&Tensor> = zs.iter().collect();
            let decoded = bound.decode_batch(g, &g.concat_batch(&z_refs)?, mode)?;
            let cropped = g.crop_spatial(&decoded, [grid.nz, grid.ny, grid.nx])?;
            let masked = g.mul(&cropped, &mask_cube(grid, STATE_CHANNELS, pipe.window)?)?;
            let denorm = scfg.norm.denormalize_state(g, &masked)?;
            let steps: Vec<usize> = (1..=pipe.window).collect();
            let rates = producer_rates_tensor(
                g,
                &denorm,
                &steps,
                &pipe.reservoir,
                &conns,
                &pipe.fluid,
                Some(&zero_conn),
                None,
            )?;
            hm_loss(
                g,
                &rates,
                &hist,
                &time_weights(pipe.window, true),
                &zero_rock,
                &zero_conn,
                5e-4,
                1.0,
            )
        };
        pipe_loss(&g2).unwrap()
    };
    assert_abs_diff_eq!(loss.total.item(), 0.0, epsilon = 1e-16);
}

#[test]
fn hm_loss_weights_late_errors_more() {
    // doubling the error at the final step must cost more than at the
    // first step: check directly on the weight sequence
    let w = time_weights(10, true);
    assert!(w[9] > w[0]);
}

#[test]
fn hm_loss_rejects_negative_history() {
    let pipe = Pipeline::new(29);
    let n_conn = pipe.reservoir.connections().unwrap().len();
    let g = Graph::inference();
    let rock = Tensor::zeros(&[1, STATIC_CHANNELS, 1, 2, 2]);
    let log_conn = Tensor::zeros(&[n_conn]);
    let scfg = &pipe.surrogate.config;
    let grid = &pipe.reservoir.grid;
    let bound = pipe.surrogate.bind(false);
    let conns = pipe.reservoir.connections().unwrap();
    let s0 = state_to_cube(&pipe.reservoir.initial, grid, &scfg.norm, scfg.padded_extents).unwrap();
    let z0 = bound.encode_state(&g, &s0, BatchNormMode::Eval).unwrap();
    let theta_base = static_to_cube(&pipe.reservoir.rock, grid, &scfg.norm, scfg.padded_extents).unwrap();
    let theta_hat = bound.encode_static(&g, &theta_base, BatchNormMode::Eval).unwrap();
    let u0 = rasterize_control(&pipe.reservoir.schedule, 0, &conns, grid, &scfg.norm, scfg.padded_extents).unwrap();
    let u_enc = bound.encode_control(&g, &g.concat_batch(&[&u0]).unwrap(), BatchNormMode::Eval).unwrap();
    let u_hats = vec![g.slice_batch(&u_enc, 0).unwrap()];
    let zs = bound.integrate(&g, &z0, &u_hats, &theta_hat, &[15.0], BatchNormMode::Eval).unwrap();
    let z_refs: Vec<&Tensor> = zs.iter().collect();
    let decoded = bound.decode_batch(&g, &g.concat_batch(&z_refs).unwrap(), BatchNormMode::Eval).unwrap();
    let cropped = g.crop_spatial(&decoded, [grid.nz, grid.ny, grid.nx]).unwrap();
    let denorm = scfg.norm.denormalize_state(&g, &cropped).unwrap();
    let rates = producer_rates_tensor(&g, &denorm, &[1], &pipe.reservoir, &conns, &pipe.fluid, None, None).unwrap();
    let hist: Vec<Vec<(f64, f64)>> = (0..rates.wells.len()).map(|_| vec![(-1.0, 5.0)]).collect();
    let err = match hm_loss(&g, &rates, &hist, &[1.0], &rock, &log_conn, 5e-4, 1.0) {
        Err(e) => e,
        Ok(_) => panic!("negative history accepted"),
    };
    assert!(err.to_string().contains("negative historical rate"));
}

#[test]
fn adapt_already_matched_system_stays_at_zero() {
    let pipe = Pipeline::new(31);
    let conns = pipe.reservoir.connections().unwrap();
    let zero_set = CorrectionSet {
        coarse_shape: coarse_shape(&pipe.reservoir.grid, 4),
        rock: vec![0.0; STATIC_CHANNELS * 4],
        log_conn: vec![0.0; conns.len()],
    };
    let history = corrected_rates(
        &pipe.surrogate,
        &pipe.reservoir,
        &pipe.fluid,
        &zero_set,
        3,
    )
    .unwrap();
    let cfg = HmConfig {
        init_noise_std: 0.0,
        max_iterations: 30,
        plateau_window: 5,
        ..HmConfig::default()
    };
    let res = adapt(
        &pipe.surrogate,
        &pipe.reservoir,
        &pipe.fluid,
        &history,
        &cfg,
        AdaptVars::Both,
    )
    .unwrap();
    assert_abs_diff_eq!(res.initial_loss, 0.0, epsilon = 1e-18);
    assert_abs_diff_eq!(res.final_loss, 0.0, epsilon = 1e-18);
    assert!(res.corrections.rock_norm_sq() < 1e-20);
    assert!(res.corrections.conn_norm_sq() < 1e-20);
    // plateau rule fires early
    assert!(res.iterations <= cfg.plateau_window + 1);
}

#[test]
fn adapt_recovers_known_connection_damping() {
    // self-consistent inverse: history produced by the surrogate itself
    // with one damped connection; adaptation must cut the loss sharply
    let pipe = Pipeline::new(37);
    let conns = pipe.reservoir.connections().unwrap();
    let mut truth = CorrectionSet {
        coarse_shape: coarse_shape(&pipe.reservoir.grid, 4),
        rock: vec![0.0; STATIC_CHANNELS * 4],
        log_conn: vec![0.0; conns.len()],
    };
    truth.log_conn[1] = (0.3f64).ln();
    let history =
        corrected_rates(&pipe.surrogate, &pipe.reservoir, &pipe.fluid, &truth, 3).unwrap();
    // an untrained toy surrogate gives the rock path no meaningful
    // sensitivity (that path is exercised against a trained model in
    // the acceptance suite); recover through the connectivity factors,
    // which act on the rates directly
    let cfg = HmConfig {
        learning_rate: 0.1,
        max_iterations: 80,
        plateau_window: 25,
        seed: 2,
        ..HmConfig::default()
    };
    let res = adapt(
        &pipe.surrogate,
        &pipe.reservoir,
        &pipe.fluid,
        &history,
        &cfg,
        AdaptVars::ConnectivityOnly,
    )
    .unwrap();
    assert!(
        res.final_loss < 0.25 * res.initial_loss,
        "loss {} -> {} over {} iterations",
        res.initial_loss,
        res.final_loss,
        res.iterations
    );
    // multipliers stayed positive throughout (structural)
    assert!(res.corrections.multipliers().iter().all(|&m| m > 0.0));
}

#[test]
fn adapt_freezes_excluded_family_and_preserves_weights() {
    let pipe = Pipeline::new(41);
    let conns = pipe.reservoir.connections().unwrap();
    let mut truth = CorrectionSet {
        coarse_shape: coarse_shape(&pipe.reservoir.grid, 4),
        rock: vec![0.0; STATIC_CHANNELS * 4],
        log_conn: vec![0.0; conns.len()],
    };
    truth.log_conn[0] = -0.7;
    let history =
        corrected_rates(&pipe.surrogate, &pipe.reservoir, &pipe.fluid, &truth, 3).unwrap();
    let weights_before = pipe.surrogate.weight_bits();
    let cfg = HmConfig {
        max_iterations: 10,
        plateau_window: 30,
        seed: 3,
        ..HmConfig::default()
    };
    let rock_only = adapt(
        &pipe.surrogate,
        &pipe.reservoir,
        &pipe.fluid,
        &history,
        &cfg,
        AdaptVars::RockOnly,
    )
    .unwrap();
    // frozen family is exactly identity
    assert!(rock_only.corrections.conn_norm_sq() == 0.0);
    assert!(rock_only.corrections.rock_norm_sq() > 0.0);

    let conn_only = adapt(
        &pipe.surrogate,
        &pipe.reservoir,
        &pipe.fluid,
        &history,
        &cfg,
        AdaptVars::ConnectivityOnly,
    )
    .unwrap();
    assert!(conn_only.corrections.rock_norm_sq() == 0.0);
    assert!(conn_only.corrections.conn_norm_sq() > 0.0);

    // surrogate untouched by both runs
    assert_eq!(weights_before, pipe.surrogate.weight_bits());
}

#[test]
fn adapt_is_deterministic() {
    let pipe = Pipeline::new(43);
    let conns = pipe.reservoir.connections().unwrap();
    let mut truth = CorrectionSet {
        coarse_shape: coarse_shape(&pipe.reservoir.grid, 4),
        rock: vec![0.0; STATIC_CHANNELS * 4],
        log_conn: vec![0.0; conns.len()],
    };
    truth.log_conn[0] = -0.4;
    let history =
        corrected_rates(&pipe.surrogate, &pipe.reservoir, &pipe.fluid, &truth, 2).unwrap();
    let cfg = HmConfig {
        max_iterations: 6,
        plateau_window: 30,
        seed: 11,
        ..HmConfig::default()
    };
    let r1 = adapt(&pipe.surrogate, &pipe.reservoir, &pipe.fluid, &history, &cfg, AdaptVars::Both).unwrap();
    let r2 = adapt(&pipe.surrogate, &pipe.reservoir, &pipe.fluid, &history, &cfg, AdaptVars::Both).unwrap();
    assert_eq!(
        r1.loss_curve.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        r2.loss_curve.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(r1.corrections.rock, r2.corrections.rock);
}
