//! Spatial rearrangement and resampling kernels: voxel shuffle,
//! trilinear upsampling, zero padding and cropping.

/// voxel shuffle: `[B, C*r^3, D, H, W] -> [B, C, rD, rH, rW]`.
///
/// Input channel `c*r^3 + (dz*r + dy)*r + dx` supplies the element at
/// spatial offset `(dz, dy, dx)` inside each `r x r x r` output block of
/// output channel `c`. Pure permutation, so `invert` recovers the input.
pub fn voxel_shuffle_map(
    input: &[f64],
    b: usize,
    c_out: usize,
    r: usize,
    d: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    invert: bool,
) {
    let r3 = r * r * r;
    let c_in = c_out * r3;
    let in_chan = d * h * w;
    let in_batch = in_chan * c_in;
    let (od, oh, ow) = (d * r, h * r, w * r);
    let out_chan = od * oh * ow;
    let out_batch = out_chan * c_out;

    for bi in 0..b {
        for c in 0..c_out {
            for dz in 0..r {
                for dy in 0..r {
                    for dx in 0..r {
                        let ci = c * r3 + (dz * r + dy) * r + dx;
                        let in_base = bi * in_batch + ci * in_chan;
                        for z in 0..d {
                            for y in 0..h {
                                let in_row = in_base + z * h * w + y * w;
                                let out_row = bi * out_batch
                                    + c * out_chan
                                    + (z * r + dz) * oh * ow
                                    + (y * r + dy) * ow
                                    + dx;
                                for x in 0..w {
                                    let i = in_row + x;
                                    let o = out_row + x * r;
                                    if invert {
                                        out[i] = input[o];
                                    } else {
                                        out[o] = input[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-axis interpolation taps for corner-aligned linear upsampling:
/// returns `(i0, i1, w1)` per output index, where the sample is
/// `(1-w1)*in[i0] + w1*in[i1]`. A constant input therefore maps to a
/// constant output, and a single-sample axis broadcasts.
pub fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            if n_in == 1 || n_out == 1 {
                (0, 0, 0.0)
            } else {
                let pos = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let i0 = (pos.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn trilinear_forward(
    input: &[f64],
    bc: usize,
    d: usize,
    h: usize,
    w: usize,
    od: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let tz = linear_taps(d, od);
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let in_plane = d * h * w;
    let out_plane = od * oh * ow;
    for p in 0..bc {
        let ib = p * in_plane;
        let ob = p * out_plane;
        for (zo, &(z0, z1, wz)) in tz.iter().enumerate() {
            for (yo, &(y0, y1, wy)) in ty.iter().enumerate() {
                let out_row = ob + zo * oh * ow + yo * ow;
                let r00 = ib + z0 * h * w + y0 * w;
                let r01 = ib + z0 * h * w + y1 * w;
                let r10 = ib + z1 * h * w + y0 * w;
                let r11 = ib + z1 * h * w + y1 * w;
                for (xo, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let c000 = input[r00 + x0];
                    let c001 = input[r00 + x1];
                    let c010 = input[r01 + x0];
                    let c011 = input[r01 + x1];
                    let c100 = input[r10 + x0];
                    let c101 = input[r10 + x1];
                    let c110 = input[r11 + x0];
                    let c111 = input[r11 + x1];
                    let c00 = c000 + (c001 - c000) * wx;
                    let c01 = c010 + (c011 - c010) * wx;
                    let c10 = c100 + (c101 - c100) * wx;
                    let c11 = c110 + (c111 - c110) * wx;
                    let c0 = c00 + (c01 - c00) * wy;
                    let c1 = c10 + (c11 - c10) * wy;
                    out[out_row + xo] = c0 + (c1 - c0) * wz;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn trilinear_backward(
    dout: &[f64],
    bc: usize,
    d: usize,
    h: usize,
    w: usize,
    od: usize,
    oh: usize,
    ow: usize,
    dinput: &mut [f64],
) {
    let tz = linear_taps(d, od);
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let in_plane = d * h * w;
    let out_plane = od * oh * ow;
    for p in 0..bc {
        let ib = p * in_plane;
        let ob = p * out_plane;
        for (zo, &(z0, z1, wz)) in tz.iter().enumerate() {
            for (yo, &(y0, y1, wy)) in ty.iter().enumerate() {
                let out_row = ob + zo * oh * ow + yo * ow;
                for (xo, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let g = dout[out_row + xo];
                    if g == 0.0 {
                        continue;
                    }
                    for (zi, gz) in [(z0, 1.0 - wz), (z1, wz)] {
                        if gz == 0.0 {
                            continue;
                        }
                        for (yi, gy) in [(y0, 1.0 - wy), (y1, wy)] {
                            if gy == 0.0 {
                                continue;
                            }
                            for (xi, gx) in [(x0, 1.0 - wx), (x1, wx)] {
                                if gx == 0.0 {
                                    continue;
                                }
                                dinput[ib + zi * h * w + yi * w + xi] += g * gz * gy * gx;
                            }
                        }
                    }
                }
            }
        }
    }
}
