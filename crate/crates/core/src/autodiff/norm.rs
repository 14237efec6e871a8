//! Batch normalization over the channel axis of `[B, C, ...]` tensors.

use serde::{Deserialize, Serialize};

/// Running statistics for one batch-norm layer. Updated in train mode,
/// read-only in eval mode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            initialized: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Saved forward context needed by the train-mode backward pass.
pub struct BatchNormSaved {
    /// Normalized values (before gamma/beta).
    pub xhat: Vec<f64>,
    /// Per-channel 1/sqrt(var + eps).
    pub inv_std: Vec<f64>,
    /// Reduction count per channel (batch * spatial).
    pub count: usize,
}

/// Per-channel mean/var over batch and spatial axes (biased variance).
pub fn channel_stats(x: &[f64], b: usize, c: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let n = (b * spatial) as f64;
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * spatial;
            let mut s = 0.0;
            for v in &x[base..base + spatial] {
                s += v;
            }
            mean[ci] += s;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * spatial;
            let m = mean[ci];
            let mut s = 0.0;
            for v in &x[base..base + spatial] {
                let d = v - m;
                s += d * d;
            }
            var[ci] += s;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

/// Train-mode input gradient through the batch statistics:
/// dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat)).
#[allow(clippy::too_many_arguments)]
pub fn backward_train(
    dout: &[f64],
    saved: &BatchNormSaved,
    gamma: &[f64],
    b: usize,
    c: usize,
    spatial: usize,
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let n = saved.count as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * spatial;
            let mut s = 0.0;
            let mut sx = 0.0;
            for i in base..base + spatial {
                s += dout[i];
                sx += dout[i] * saved.xhat[i];
            }
            sum_dy[ci] += s;
            sum_dy_xhat[ci] += sx;
        }
    }
    if !dgamma.is_empty() {
        for ci in 0..c {
            dgamma[ci] += sum_dy_xhat[ci];
        }
    }
    if !dbeta.is_empty() {
        for ci in 0..c {
            dbeta[ci] += sum_dy[ci];
        }
    }
    if dx.is_empty() {
        return;
    }
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * spatial;
            let g = gamma[ci] * saved.inv_std[ci];
            let mdy = sum_dy[ci] / n;
            let mdyx = sum_dy_xhat[ci] / n;
            for i in base..base + spatial {
                dx[i] += g * (dout[i] - mdy - saved.xhat[i] * mdyx);
            }
        }
    }
}
