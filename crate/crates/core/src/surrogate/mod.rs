//! Latent-ODE convolutional surrogate of reservoir dynamics.
//!
//! Three encoders compress the initial state, the statics and the
//! per-step control rasters onto a coarse latent grid (spatial
//! reduction r via convolution strides); a two-layer convolutional
//! right-hand side advances the latent state with explicit Euler steps;
//! a stride-free decoder expands back to full resolution through a
//! voxel shuffle. The whole rollout is one differentiable graph.

mod cubes;
mod io;

pub use cubes::{mask_cube, rasterize_control, state_to_cube, static_channel_raw, static_to_cube, NormStats};
pub use io::{load_surrogate, save_surrogate};

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, BatchNormState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{Connection, ReservoirModel, ReservoirState, WellKind};
use crate::oracle::FluidProperties;
use crate::rates::{producer_rates_tensor, RateTable, WellRates};
use crate::rng;

pub const STATE_CHANNELS: usize = 3; // pressure, sat_water, sat_oil
pub const STATIC_CHANNELS: usize = 4; // porosity, ln kx, ln ky, ln kz
pub const CONTROL_CHANNELS: usize = 2; // producer BHP, injector rate

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LEAKY_SLOPE: f64 = 0.01;

/// One convolution layer spec: cubic kernel, isotropic stride.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Channels of the latent state z (and of each encoded input).
    pub latent_channels: usize,
    /// Encoder layer specs; the last layer's `out_channels` is ignored
    /// in favor of `latent_channels`. The product of strides must equal
    /// `shuffle_r`.
    pub encoder: Vec<ConvSpec>,
    /// Hidden channels of the latent right-hand side network.
    pub g_hidden: usize,
    pub g_kernel: usize,
    /// Hidden channel counts of the stride-free decoder.
    pub decoder_hidden: Vec<usize>,
    pub decoder_kernel: usize,
    /// Spatial factor between full grid and latent grid.
    pub shuffle_r: usize,
    /// Reference integrator step, days: one Euler step advances
    /// `dt_days / substeps`.
    pub dt_days: f64,
    pub substeps: usize,
    /// Grid extents (nz, ny, nx) this model was built for.
    pub grid_extents: [usize; 3],
    /// Zero-padded extents, each a multiple of `shuffle_r`.
    pub padded_extents: [usize; 3],
    pub norm: NormStats,
}

impl SurrogateConfig {
    /// Default architecture for a grid: 4 encoder layers with channels
    /// (in, 16, 32, 32, latent) and strides (1, 2, 1, 2); 2-layer rhs
    /// with 64 hidden channels; 4-layer stride-free decoder feeding a
    /// voxel shuffle of factor 4.
    pub fn for_grid(nz: usize, ny: usize, nx: usize, dt_days: f64) -> Self {
        let r = 4;
        let pad_up = |n: usize| n.div_ceil(r) * r;
        SurrogateConfig {
            latent_channels: 8,
            encoder: vec![
                ConvSpec { out_channels: 16, kernel: 3, stride: 1 },
                ConvSpec { out_channels: 32, kernel: 3, stride: 2 },
                ConvSpec { out_channels: 32, kernel: 3, stride: 1 },
                ConvSpec { out_channels: 8, kernel: 3, stride: 2 },
            ],
            g_hidden: 64,
            g_kernel: 3,
            decoder_hidden: vec![32, 32, 32],
            decoder_kernel: 3,
            shuffle_r: r,
            dt_days,
            substeps: 1,
            grid_extents: [nz, ny, nx],
            padded_extents: [pad_up(nz), pad_up(ny), pad_up(nx)],
            norm: NormStats::identity(),
        }
    }

    pub fn latent_extents(&self) -> [usize; 3] {
        [
            self.padded_extents[0] / self.shuffle_r,
            self.padded_extents[1] / self.shuffle_r,
            self.padded_extents[2] / self.shuffle_r,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let stride_product: usize = self.encoder.iter().map(|l| l.stride).product();
        if stride_product != self.shuffle_r {
            return Err(Error::Validation(format!(
                "encoder stride product {stride_product} must equal shuffle factor {}",
                self.shuffle_r
            )));
        }
        for (i, e) in self.padded_extents.iter().enumerate() {
            if e % self.shuffle_r != 0 {
                return Err(Error::Validation(format!(
                    "padded extent {e} on axis {i} not divisible by r={}; pad the grid up",
                    self.shuffle_r
                )));
            }
        }
        if !(self.dt_days > 0.0) || self.substeps == 0 {
            return Err(Error::Validation("integrator step must be positive".into()));
        }
        self.norm.validate()
    }
}

/// Plain-data weights of one conv(+BN) layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub kernel_shape: Vec<usize>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    /// (gamma, beta, running stats) when the layer carries batch norm.
    pub bn: Option<(Vec<f64>, Vec<f64>, BatchNormState)>,
    pub stride: usize,
    pub activation: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetWeights {
    pub layers: Vec<LayerWeights>,
}

/// Trained surrogate: pure data, shareable across threads, bound to
/// tensors per session via [`SurrogateModel::bind`].
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub config: SurrogateConfig,
    pub enc_state: NetWeights,
    pub enc_static: NetWeights,
    pub enc_control: NetWeights,
    pub g_net: NetWeights,
    pub decoder: NetWeights,
}

fn kaiming_layer(
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    bn_and_act: bool,
    zero_init: bool,
    r: &mut rand_chacha::ChaCha8Rng,
) -> LayerWeights {
    let n = cout * cin * kernel * kernel * kernel;
    let std = (2.0 / (cin * kernel * kernel * kernel) as f64).sqrt();
    let kernel_data: Vec<f64> = if zero_init {
        vec![0.0; n]
    } else {
        (0..n).map(|_| std * rng::normal(r)).collect()
    };
    LayerWeights {
        kernel_shape: vec![cout, cin, kernel, kernel, kernel],
        kernel: kernel_data,
        bias: vec![0.0; cout],
        bn: if bn_and_act {
            Some((vec![1.0; cout], vec![0.0; cout], BatchNormState::new(cout)))
        } else {
            None
        },
        stride,
        activation: bn_and_act,
    }
}

impl SurrogateModel {
    /// Fresh model with Kaiming-initialized encoders/decoder and a
    /// zero-initialized final rhs layer (the initial latent dynamics is
    /// the identity, which keeps early training stable).
    pub fn init(config: SurrogateConfig, seed: u64) -> Result<SurrogateModel> {
        config.validate()?;
        let mut r = rng::stream(seed, 0);
        let cz = config.latent_channels;

        let make_encoder = |cin: usize, r: &mut rand_chacha::ChaCha8Rng| -> NetWeights {
            let mut layers = Vec::new();
            let n = config.encoder.len();
            let mut c_in = cin;
            for (i, spec) in config.encoder.iter().enumerate() {
                let last = i + 1 == n;
                let c_out = if last { cz } else { spec.out_channels };
                layers.push(kaiming_layer(c_in, c_out, spec.kernel, spec.stride, !last, false, r));
                c_in = c_out;
            }
            NetWeights { layers }
        };

        let enc_state = make_encoder(STATE_CHANNELS, &mut r);
        let enc_static = make_encoder(STATIC_CHANNELS, &mut r);
        let enc_control = make_encoder(CONTROL_CHANNELS, &mut r);

        let g_in = 3 * cz;
        let g_net = NetWeights {
            layers: vec![
                kaiming_layer(g_in, config.g_hidden, config.g_kernel, 1, true, false, &mut r),
                kaiming_layer(config.g_hidden, cz, config.g_kernel, 1, false, true, &mut r),
            ],
        };

        let r3 = config.shuffle_r.pow(3);
        let mut dec_layers = Vec::new();
        let mut c_in = cz;
        for &h in &config.decoder_hidden {
            dec_layers.push(kaiming_layer(c_in, h, config.decoder_kernel, 1, true, false, &mut r));
            c_in = h;
        }
        dec_layers.push(kaiming_layer(
            c_in,
            STATE_CHANNELS * r3,
            config.decoder_kernel,
            1,
            false,
            false,
            &mut r,
        ));
        let decoder = NetWeights { layers: dec_layers };

        Ok(SurrogateModel {
            config,
            enc_state,
            enc_static,
            enc_control,
            g_net,
            decoder,
        })
    }

    /// Bind the weights to graph tensors. `requires_grad` marks every
    /// weight as trainable; the model itself is never mutated — call
    /// [`BoundSurrogate::export`] to harvest updated weights.
    pub fn bind(&self, requires_grad: bool) -> BoundSurrogate {
        let bind_net = |net: &NetWeights| BoundNet {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    let kernel = Tensor::from_vec(&l.kernel_shape, l.kernel.clone())
                        .expect("stored shapes are consistent");
                    let bias = Tensor::from_vec(&[l.kernel_shape[0]], l.bias.clone())
                        .expect("stored shapes are consistent");
                    kernel.set_requires_grad(requires_grad);
                    bias.set_requires_grad(requires_grad);
                    let bn = l.bn.as_ref().map(|(gm, bt, st)| {
                        let gamma = Tensor::from_vec(&[gm.len()], gm.clone()).expect("shape");
                        let beta = Tensor::from_vec(&[bt.len()], bt.clone()).expect("shape");
                        gamma.set_requires_grad(requires_grad);
                        beta.set_requires_grad(requires_grad);
                        BoundBn {
                            gamma,
                            beta,
                            state: RefCell::new(st.clone()),
                        }
                    });
                    BoundLayer {
                        kernel,
                        bias,
                        bn,
                        stride: l.stride,
                        activation: l.activation,
                    }
                })
                .collect(),
        };
        BoundSurrogate {
            config: self.config.clone(),
            enc_state: bind_net(&self.enc_state),
            enc_static: bind_net(&self.enc_static),
            enc_control: bind_net(&self.enc_control),
            g_net: bind_net(&self.g_net),
            decoder: bind_net(&self.decoder),
        }
    }

    /// Stable enumeration of every (net, weight tensor) for hashing and
    /// round-trip checks.
    pub fn weight_bits(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for net in [
            &self.enc_state,
            &self.enc_static,
            &self.enc_control,
            &self.g_net,
            &self.decoder,
        ] {
            for l in &net.layers {
                out.extend(l.kernel.iter().map(|v| v.to_bits()));
                out.extend(l.bias.iter().map(|v| v.to_bits()));
                if let Some((g, b, st)) = &l.bn {
                    out.extend(g.iter().map(|v| v.to_bits()));
                    out.extend(b.iter().map(|v| v.to_bits()));
                    out.extend(st.running_mean.iter().map(|v| v.to_bits()));
                    out.extend(st.running_var.iter().map(|v| v.to_bits()));
                    out.push(st.initialized as u64);
                }
            }
        }
        out
    }
}

pub struct BoundBn {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub state: RefCell<BatchNormState>,
}

pub struct BoundLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub bn: Option<BoundBn>,
    pub stride: usize,
    pub activation: bool,
}

pub struct BoundNet {
    pub layers: Vec<BoundLayer>,
}

impl BoundNet {
    pub fn forward(&self, g: &Graph, input: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            let k = layer.kernel.shape()[2];
            let pad = k / 2;
            let s = layer.stride;
            x = g.conv3d(&x, &layer.kernel, &layer.bias, [s, s, s], [pad, pad, pad])?;
            if let Some(bn) = &layer.bn {
                x = g.batch_norm(
                    &x,
                    &bn.gamma,
                    &bn.beta,
                    &mut bn.state.borrow_mut(),
                    mode,
                    BN_EPS,
                    BN_MOMENTUM,
                )?;
            }
            if layer.activation {
                x = g.leaky_relu(&x, LEAKY_SLOPE)?;
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.kernel.clone());
            out.push(l.bias.clone());
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.clone());
                out.push(bn.beta.clone());
            }
        }
        out
    }

    fn export(&self, template: &NetWeights) -> NetWeights {
        NetWeights {
            layers: self
                .layers
                .iter()
                .zip(&template.layers)
                .map(|(b, t)| LayerWeights {
                    kernel_shape: t.kernel_shape.clone(),
                    kernel: b.kernel.data(),
                    bias: b.bias.data(),
                    bn: b.bn.as_ref().map(|bn| {
                        (bn.gamma.data(), bn.beta.data(), bn.state.borrow().clone())
                    }),
                    stride: t.stride,
                    activation: t.activation,
                })
                .collect(),
        }
    }
}

/// Session-bound surrogate holding graph tensors.
pub struct BoundSurrogate {
    pub config: SurrogateConfig,
    pub enc_state: BoundNet,
    pub enc_static: BoundNet,
    pub enc_control: BoundNet,
    pub g_net: BoundNet,
    pub decoder: BoundNet,
}

impl BoundSurrogate {
    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for net in [
            &self.enc_state,
            &self.enc_static,
            &self.enc_control,
            &self.g_net,
            &self.decoder,
        ] {
            out.extend(net.params());
        }
        out
    }

    pub fn export(&self, template: &SurrogateModel) -> SurrogateModel {
        SurrogateModel {
            config: self.config.clone(),
            enc_state: self.enc_state.export(&template.enc_state),
            enc_static: self.enc_static.export(&template.enc_static),
            enc_control: self.enc_control.export(&template.enc_control),
            g_net: self.g_net.export(&template.g_net),
            decoder: self.decoder.export(&template.decoder),
        }
    }

    /// Encode a normalized padded state cube `[B, 3, D, H, W]` to the
    /// latent grid.
    pub fn encode_state(&self, g: &Graph, cube: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        self.check_divisible(cube)?;
        self.enc_state.forward(g, cube, mode)
    }

    pub fn encode_static(&self, g: &Graph, cube: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        self.check_divisible(cube)?;
        self.enc_static.forward(g, cube, mode)
    }

    /// Encode a batch of control rasters `[T, 2, D, H, W]` in one pass.
    pub fn encode_control(&self, g: &Graph, cubes: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        self.check_divisible(cubes)?;
        self.enc_control.forward(g, cubes, mode)
    }

    fn check_divisible(&self, cube: &Tensor) -> Result<()> {
        let s = cube.shape();
        if s.len() != 5 {
            return Err(Error::Shape(format!("encoder expects 5-D input, got {s:?}")));
        }
        for a in 0..3 {
            if s[2 + a] % self.config.shuffle_r != 0 {
                return Err(Error::Shape(format!(
                    "spatial extent {} on axis {a} not divisible by r={}; pad the cube up",
                    s[2 + a],
                    self.config.shuffle_r
                )));
            }
        }
        Ok(())
    }

    /// Latent right-hand side: channel-concatenate (z, u, theta) and
    /// apply the two rhs conv layers.
    pub fn latent_rhs(
        &self,
        g: &Graph,
        z: &Tensor,
        u_hat: &Tensor,
        theta_hat: &Tensor,
        mode: BatchNormMode,
    ) -> Result<Tensor> {
        let cat = g.concat_channels(&[z, u_hat, theta_hat])?;
        self.g_net.forward(g, &cat, mode)
    }

    /// Explicit Euler rollout: one schedule interval of `dt_days`
    /// advances the latent state by `substeps` equal Euler steps scaled
    /// by `dt_days / config.dt_days`. Returns z after each interval.
    pub fn integrate(
        &self,
        g: &Graph,
        z0: &Tensor,
        u_hats: &[Tensor],
        theta_hat: &Tensor,
        interval_days: &[f64],
        mode: BatchNormMode,
    ) -> Result<Vec<Tensor>> {
        if u_hats.len() < interval_days.len() {
            return Err(Error::Validation(format!(
                "{} control encodings for {} intervals",
                u_hats.len(),
                interval_days.len()
            )));
        }
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(interval_days.len());
        for (step, &dt) in interval_days.iter().enumerate() {
            let scale = dt / self.config.dt_days / self.config.substeps as f64;
            for _ in 0..self.config.substeps {
                let rhs = self.latent_rhs(g, &z, &u_hats[step], theta_hat, mode)?;
                z = g.add(&z, &g.scalar_mul(&rhs, scale)?)?;
                if !z.is_finite() {
                    return Err(Error::Numerical(format!(
                        "latent state diverged at rollout step {step}"
                    )));
                }
            }
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Decode a latent batch `[T, Cz, d, h, w]` to normalized state
    /// cubes `[T, 3, D, H, W]` on the padded grid (stride-free convs
    /// then voxel shuffle).
    pub fn decode_batch(&self, g: &Graph, z: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let y = self.decoder.forward(g, z, mode)?;
        g.voxel_shuffle(&y, self.config.shuffle_r)
    }
}

/// Output of a surrogate rollout in physical units.
pub struct SimulateOutput {
    pub times_days: Vec<f64>,
    /// Index 0 is the model's initial state passed through; later
    /// entries are decoded predictions. Saturations are raw decoder
    /// channels and need not sum to one exactly.
    pub states: Vec<ReservoirState>,
    pub rates: RateTable,
    /// Wall-clock seconds of the encode/integrate/decode core.
    pub rollout_seconds: f64,
}

/// Full surrogate pipeline on a reservoir model: encode the initial
/// state, statics and the whole control schedule, roll the latent ODE
/// over `steps` schedule intervals, decode every latent state, and
/// compute producer rates from the decoded cubes. Runs in eval mode on
/// an inference graph; the model is not mutated.
pub fn simulate(
    surrogate: &SurrogateModel,
    reservoir: &ReservoirModel,
    fluid: &FluidProperties,
    steps: usize,
) -> Result<SimulateOutput> {
    let cfg = &surrogate.config;
    cfg.validate()?;
    let schedule = &reservoir.schedule;
    if steps + 1 > schedule.times_days.len() {
        return Err(Error::Validation(format!(
            "requested {steps} rollout steps, schedule has {}",
            schedule.times_days.len() - 1
        )));
    }
    let connections = reservoir.connections()?;
    if steps == 0 {
        let mut wells = Vec::new();
        let mut series = Vec::new();
        for (wi, w) in reservoir.wells.iter().enumerate() {
            wells.push(w.name.clone());
            let r = match w.kind {
                WellKind::Producer => initial_producer_rate(reservoir, fluid, &connections, wi)?,
                WellKind::Injector => WellRates {
                    water: -reservoir.schedule.rate_of(&w.name).map_or(0.0, |s| s[0]),
                    oil: 0.0,
                },
            };
            series.push(vec![r]);
        }
        return Ok(SimulateOutput {
            times_days: vec![schedule.times_days[0]],
            states: vec![reservoir.initial.clone()],
            rates: RateTable {
                times_days: vec![schedule.times_days[0]],
                wells,
                series,
            },
            rollout_seconds: 0.0,
        });
    }
    let bound = surrogate.bind(false);
    let g = Graph::inference();
    let t_start = std::time::Instant::now();

    let mode = BatchNormMode::Eval;
    let s0 = state_to_cube(&reservoir.initial, &reservoir.grid, &cfg.norm, cfg.padded_extents)?;
    let theta = static_to_cube(&reservoir.rock, &reservoir.grid, &cfg.norm, cfg.padded_extents)?;
    let z0 = bound.encode_state(&g, &s0, mode)?;
    let theta_hat = bound.encode_static(&g, &theta, mode)?;

    let mut control_cubes = Vec::with_capacity(steps);
    for step in 0..steps {
        control_cubes.push(rasterize_control(
            schedule,
            step,
            &connections,
            &reservoir.grid,
            &cfg.norm,
            cfg.padded_extents,
        )?);
    }
    let refs: Vec<&Tensor> = control_cubes.iter().collect();
    let u_batch = g.concat_batch(&refs)?;
    let u_enc = bound.encode_control(&g, &u_batch, mode)?;
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
    let z_batch = g.concat_batch(&z_refs)?;
    let decoded = bound.decode_batch(&g, &z_batch, mode)?;
    let cropped = g.crop_spatial(
        &decoded,
        [reservoir.grid.nz, reservoir.grid.ny, reservoir.grid.nx],
    )?;
    let masked = g.mul(
        &cropped,
        &mask_cube(&reservoir.grid, STATE_CHANNELS, steps)?,
    )?;
    let denorm = cfg.norm.denormalize_state(&g, &masked)?;
    let rollout_seconds = t_start.elapsed().as_secs_f64();

    // physical states
    let n = reservoir.grid.n_cells();
    let data = denorm.data();
    let mut states = vec![reservoir.initial.clone()];
    for b in 0..steps {
        let base = b * STATE_CHANNELS * n;
        states.push(ReservoirState {
            pressure: data[base..base + n].to_vec(),
            sat_water: data[base + n..base + 2 * n].to_vec(),
            sat_oil: data[base + 2 * n..base + 3 * n].to_vec(),
        });
    }

    // rates at t0 from the true initial state, later from decoded cubes
    let step_of_batch: Vec<usize> = (1..=steps).collect();
    let tens = producer_rates_tensor(
        &g,
        &denorm,
        &step_of_batch,
        reservoir,
        &connections,
        fluid,
        None,
        None,
    )?;
    let times: Vec<f64> = schedule.times_days[..=steps].to_vec();
    let mut wells = Vec::new();
    let mut series = Vec::new();
    for (wi, w) in reservoir.wells.iter().enumerate() {
        wells.push(w.name.clone());
        let mut s = Vec::with_capacity(steps + 1);
        match w.kind {
            WellKind::Producer => {
                let pi = tens.wells.iter().position(|n| *n == w.name).expect("producer");
                s.push(initial_producer_rate(reservoir, fluid, &connections, wi)?);
                for t in 0..steps {
                    s.push(WellRates {
                        water: tens.water[pi][t].item(),
                        oil: tens.oil[pi][t].item(),
                    });
                }
            }
            WellKind::Injector => {
                let rates = schedule.rate_of(&w.name).unwrap_or(&[]);
                for step in 0..=steps {
                    let idx = schedule.interval_at(times[step]);
                    s.push(WellRates {
                        water: -rates.get(idx).copied().unwrap_or(0.0),
                        oil: 0.0,
                    });
                }
            }
        }
        series.push(s);
    }

    Ok(SimulateOutput {
        times_days: times.clone(),
        states,
        rates: RateTable {
            times_days: times,
            wells,
            series,
        },
        rollout_seconds,
    })
}

fn initial_producer_rate(
    reservoir: &ReservoirModel,
    fluid: &FluidProperties,
    connections: &[Connection],
    well_idx: usize,
) -> Result<WellRates> {
    let w = &reservoir.wells[well_idx];
    let bhp = reservoir
        .schedule
        .bhp_of(&w.name)
        .ok_or_else(|| Error::Validation(format!("no BHP for {}", w.name)))?[0];
    let mut water = 0.0;
    let mut oil = 0.0;
    for c in connections.iter().filter(|c| c.well == w.name) {
        let flat = reservoir.grid.flat(c.cell[0], c.cell[1], c.cell[2]);
        let dp = (reservoir.initial.pressure[flat] - bhp).max(0.0);
        let (kr_w, kr_o) =
            crate::oracle::relative_permeability(reservoir.initial.sat_water[flat], fluid);
        water += c.index_m3 * kr_w / fluid.viscosity_water * dp;
        oil += c.index_m3 * kr_o / fluid.viscosity_oil * dp;
    }
    Ok(WellRates { water, oil })
}
