//! Normalized input cubes for the surrogate: state, statics and
//! rasterized controls, zero-padded up to the network's extents.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{Connection, ControlSchedule, GridGeometry, ReservoirState, RockProperties};

use super::{CONTROL_CHANNELS, STATE_CHANNELS, STATIC_CHANNELS};

/// Permeability floor before taking logs, m^2 (~1e-3 mD); inactive or
/// zero-permeability cells are masked out afterwards anyway.
const PERM_LOG_FLOOR: f64 = 1e-18;

/// Per-channel z-score statistics for the three cube families.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub state_mean: [f64; STATE_CHANNELS],
    pub state_std: [f64; STATE_CHANNELS],
    /// Channels: porosity, ln kx, ln ky, ln kz.
    pub static_mean: [f64; STATIC_CHANNELS],
    pub static_std: [f64; STATIC_CHANNELS],
    /// Channels: producer BHP (Pa), injector rate (m^3/s).
    pub control_mean: [f64; CONTROL_CHANNELS],
    pub control_std: [f64; CONTROL_CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            state_mean: [0.0; STATE_CHANNELS],
            state_std: [1.0; STATE_CHANNELS],
            static_mean: [0.0; STATIC_CHANNELS],
            static_std: [1.0; STATIC_CHANNELS],
            control_mean: [0.0; CONTROL_CHANNELS],
            control_std: [1.0; CONTROL_CHANNELS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .state_std
            .iter()
            .chain(&self.static_std)
            .chain(&self.control_std);
        for s in all {
            if !(s > &0.0) {
                return Err(Error::Validation("normalization stds must be positive".into()));
            }
        }
        Ok(())
    }

    /// Denormalize a `[B, 3, ...]` state cube inside the graph.
    pub fn denormalize_state(&self, g: &Graph, cube: &Tensor) -> Result<Tensor> {
        g.channel_affine(cube, &self.state_std, &self.state_mean)
    }

    pub fn normalize_state_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.state_mean[channel]) / self.state_std[channel]
    }
}

fn padded_zeros(channels: usize, padded: [usize; 3]) -> Vec<f64> {
    vec![0.0; channels * padded[0] * padded[1] * padded[2]]
}

fn fill_channel(
    buf: &mut [f64],
    channel: usize,
    grid: &GridGeometry,
    padded: [usize; 3],
    value: impl Fn(usize) -> f64,
) {
    let [pd, ph, pw] = padded;
    let chan = pd * ph * pw;
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.flat(i, j, k);
                if !grid.active[c] {
                    continue;
                }
                buf[channel * chan + (k * ph + j) * pw + i] = value(c);
            }
        }
    }
}

/// Normalized state cube `[1, 3, D, H, W]`: channels (pressure,
/// sat_water, sat_oil), inactive and padded cells zero.
pub fn state_to_cube(
    state: &ReservoirState,
    grid: &GridGeometry,
    norm: &NormStats,
    padded: [usize; 3],
) -> Result<Tensor> {
    let mut buf = padded_zeros(STATE_CHANNELS, padded);
    fill_channel(&mut buf, 0, grid, padded, |c| {
        norm.normalize_state_value(0, state.pressure[c])
    });
    fill_channel(&mut buf, 1, grid, padded, |c| {
        norm.normalize_state_value(1, state.sat_water[c])
    });
    fill_channel(&mut buf, 2, grid, padded, |c| {
        norm.normalize_state_value(2, state.sat_oil[c])
    });
    Tensor::from_vec(&[1, STATE_CHANNELS, padded[0], padded[1], padded[2]], buf)
}

/// Normalized static cube `[1, 4, D, H, W]`: porosity and the three
/// log-permeability channels.
pub fn static_to_cube(
    rock: &RockProperties,
    grid: &GridGeometry,
    norm: &NormStats,
    padded: [usize; 3],
) -> Result<Tensor> {
    let mut buf = padded_zeros(STATIC_CHANNELS, padded);
    let fields: [&[f64]; STATIC_CHANNELS] =
        [&rock.porosity, &rock.perm_x, &rock.perm_y, &rock.perm_z];
    for (ch, field) in fields.iter().enumerate() {
        fill_channel(&mut buf, ch, grid, padded, |c| {
            let raw = if ch == 0 {
                field[c]
            } else {
                field[c].max(PERM_LOG_FLOOR).ln()
            };
            (raw - norm.static_mean[ch]) / norm.static_std[ch]
        });
    }
    Tensor::from_vec(&[1, STATIC_CHANNELS, padded[0], padded[1], padded[2]], buf)
}

/// Static channel values (porosity, ln k) without normalization, used
/// when fitting normalization statistics.
pub fn static_channel_raw(rock: &RockProperties, channel: usize, cell: usize) -> f64 {
    match channel {
        0 => rock.porosity[cell],
        1 => rock.perm_x[cell].max(PERM_LOG_FLOOR).ln(),
        2 => rock.perm_y[cell].max(PERM_LOG_FLOOR).ln(),
        3 => rock.perm_z[cell].max(PERM_LOG_FLOOR).ln(),
        _ => unreachable!("static channel"),
    }
}

/// Control raster `[1, 2, D, H, W]` for schedule interval `step`:
/// channel 0 carries the normalized BHP at producer connection cells,
/// channel 1 the normalized injection rate at injector connection
/// cells; zero elsewhere.
pub fn rasterize_control(
    schedule: &ControlSchedule,
    step: usize,
    connections: &[Connection],
    grid: &GridGeometry,
    norm: &NormStats,
    padded: [usize; 3],
) -> Result<Tensor> {
    if step >= schedule.times_days.len() {
        return Err(Error::Validation(format!(
            "control step {step} outside schedule of length {}",
            schedule.times_days.len()
        )));
    }
    let [pd, ph, pw] = padded;
    let chan = pd * ph * pw;
    let mut buf = padded_zeros(CONTROL_CHANNELS, padded);
    for conn in connections {
        let [i, j, k] = conn.cell;
        if i >= grid.nx || j >= grid.ny || k >= grid.nz {
            return Err(Error::Validation(format!(
                "connection cell {:?} outside the grid",
                conn.cell
            )));
        }
        let pos = (k * ph + j) * pw + i;
        if let Some(bhp) = schedule.bhp_of(&conn.well) {
            buf[pos] = (bhp[step] - norm.control_mean[0]) / norm.control_std[0];
        } else if let Some(rate) = schedule.rate_of(&conn.well) {
            buf[chan + pos] = (rate[step] - norm.control_mean[1]) / norm.control_std[1];
        }
    }
    Tensor::from_vec(&[1, CONTROL_CHANNELS, pd, ph, pw], buf)
}

/// Constant mask `[B, channels, D, H, W]` over the unpadded grid: one
/// on active cells, zero on inactive cells (padding is cropped before
/// the mask applies).
pub fn mask_cube(grid: &GridGeometry, channels: usize, batch: usize) -> Result<Tensor> {
    let n = grid.n_cells();
    let mut one = vec![0.0; n];
    for c in 0..n {
        if grid.active[c] {
            one[c] = 1.0;
        }
    }
    let mut buf = Vec::with_capacity(batch * channels * n);
    for _ in 0..batch * channels {
        buf.extend_from_slice(&one);
    }
    Tensor::from_vec(&[batch, channels, grid.nz, grid.ny, grid.nx], buf)
}
