//! Dense 3-D convolution kernels (forward and backward).
//!
//! Layout: input `[B, Cin, D, H, W]`, kernel `[Cout, Cin, kd, kh, kw]`,
//! zero padding, row-major with W fastest. The stride-1 path copies the
//! input into an explicitly zero-padded buffer once, which turns every
//! kernel tap into an unconditional slide over contiguous rows; strided
//! layers shrink the output enough that the generic path is cheap.

/// Output spatial extents for one axis.
pub fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

pub struct ConvDims {
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
    pub id: [usize; 3],
    pub kd: [usize; 3],
    pub od: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvDims {
    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.b, self.cout, self.od[0], self.od[1], self.od[2]]
    }

    fn unit_stride(&self) -> bool {
        self.stride == [1, 1, 1]
    }

    fn padded_extents(&self) -> [usize; 3] {
        [
            self.id[0] + 2 * self.pad[0],
            self.id[1] + 2 * self.pad[1],
            self.id[2] + 2 * self.pad[2],
        ]
    }
}

/// Copy `[B, C, D, H, W]` into a zero-padded `[B, C, D+2pd, H+2ph, W+2pw]`,
/// flagging which padded rows carry any nonzero value (control rasters
/// and their early encodings are extremely sparse, so whole rows skip).
fn pad_input(input: &[f64], dims: &ConvDims) -> (Vec<f64>, Vec<bool>) {
    let [d, h, w] = dims.id;
    let [pd, ph, pw] = dims.pad;
    let [dp, hp, wp] = dims.padded_extents();
    let bc = dims.b * dims.cin;
    let mut out = vec![0.0; bc * dp * hp * wp];
    let mut live = vec![false; bc * dp * hp];
    for p in 0..bc {
        let src_base = p * d * h * w;
        let dst_base = p * dp * hp * wp;
        for z in 0..d {
            for y in 0..h {
                let src = src_base + (z * h + y) * w;
                let row = &input[src..src + w];
                let any = row.iter().any(|&v| v != 0.0);
                if any {
                    let dst = dst_base + ((z + pd) * hp + y + ph) * wp + pw;
                    out[dst..dst + w].copy_from_slice(row);
                }
                live[p * dp * hp + (z + pd) * hp + y + ph] = any;
            }
        }
    }
    (out, live)
}

/// Fold a padded-gradient buffer back onto the input gradient.
fn unpad_accumulate(dpad: &[f64], dims: &ConvDims, dinput: &mut [f64]) {
    let [d, h, w] = dims.id;
    let [pd, ph, pw] = dims.pad;
    let [dp, hp, wp] = dims.padded_extents();
    let bc = dims.b * dims.cin;
    for p in 0..bc {
        let dst_base = p * d * h * w;
        let src_base = p * dp * hp * wp;
        for z in 0..d {
            for y in 0..h {
                let dst = dst_base + (z * h + y) * w;
                let src = src_base + ((z + pd) * hp + y + ph) * wp + pw;
                for i in 0..w {
                    dinput[dst + i] += dpad[src + i];
                }
            }
        }
    }
}

/// Forward convolution with bias. `out` must be zero-filled with
/// `b * cout * od * oh * ow` elements.
pub fn conv3d_forward(input: &[f64], kernel: &[f64], bias: &[f64], dims: &ConvDims, out: &mut [f64]) {
    if dims.unit_stride() {
        forward_unit_stride(input, kernel, bias, dims, out);
    } else {
        forward_generic(input, kernel, bias, dims, out);
    }
}

fn forward_unit_stride(input: &[f64], kernel: &[f64], bias: &[f64], dims: &ConvDims, out: &mut [f64]) {
    let [odp, ohp, owp] = dims.od;
    let [kdp, khp, kwp] = dims.kd;
    let [_, hp, wp] = dims.padded_extents();
    let (inpad, live) = pad_input(input, dims);
    let in_chan = dims.padded_extents().iter().product::<usize>();
    let in_batch = in_chan * dims.cin;
    let out_chan = odp * ohp * owp;
    let out_batch = out_chan * dims.cout;
    let ker_cin = kdp * khp * kwp;
    let ker_cout = ker_cin * dims.cin;

    for b in 0..dims.b {
        for co in 0..dims.cout {
            let out_base = b * out_batch + co * out_chan;
            out[out_base..out_base + out_chan].fill(bias[co]);
            for ci in 0..dims.cin {
                let in_base = b * in_batch + ci * in_chan;
                let live_base = (b * dims.cin + ci) * (in_chan / wp);
                let ker_base = co * ker_cout + ci * ker_cin;
                for kz in 0..kdp {
                    for ky in 0..khp {
                        for kx in 0..kwp {
                            let k = kernel[ker_base + (kz * khp + ky) * kwp + kx];
                            if k == 0.0 {
                                continue;
                            }
                            for od in 0..odp {
                                let in_plane = in_base + (od + kz) * hp * wp;
                                let live_plane = live_base + (od + kz) * hp;
                                let out_plane = out_base + od * ohp * owp;
                                for oh in 0..ohp {
                                    if !live[live_plane + oh + ky] {
                                        continue;
                                    }
                                    let src = in_plane + (oh + ky) * wp + kx;
                                    let dst = out_plane + oh * owp;
                                    let src_row = &inpad[src..src + owp];
                                    let dst_row = &mut out[dst..dst + owp];
                                    for (d, s) in dst_row.iter_mut().zip(src_row) {
                                        *d += k * s;
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

fn forward_generic(input: &[f64], kernel: &[f64], bias: &[f64], dims: &ConvDims, out: &mut [f64]) {
    let [idp, ihp, iwp] = dims.id;
    let [kdp, khp, kwp] = dims.kd;
    let [odp, ohp, owp] = dims.od;
    let [sd, sh, sw] = dims.stride;
    let [pd, ph, pw] = dims.pad;

    let in_chan = idp * ihp * iwp;
    let in_batch = in_chan * dims.cin;
    let out_chan = odp * ohp * owp;
    let out_batch = out_chan * dims.cout;
    let ker_cin = kdp * khp * kwp;
    let ker_cout = ker_cin * dims.cin;

    // row liveness: skip all-zero input rows (sparse control encodings)
    let n_rows = dims.b * dims.cin * idp * ihp;
    let mut live = vec![false; n_rows];
    for (r, flag) in live.iter_mut().enumerate() {
        let base = r * iwp;
        *flag = input[base..base + iwp].iter().any(|&v| v != 0.0);
    }

    for b in 0..dims.b {
        for co in 0..dims.cout {
            let out_base = b * out_batch + co * out_chan;
            out[out_base..out_base + out_chan].fill(bias[co]);
            for ci in 0..dims.cin {
                let in_base = b * in_batch + ci * in_chan;
                let live_base = (b * dims.cin + ci) * idp * ihp;
                let ker_base = co * ker_cout + ci * ker_cin;
                for od in 0..odp {
                    let idz = (od * sd) as isize - pd as isize;
                    for kz in 0..kdp {
                        let iz = idz + kz as isize;
                        if iz < 0 || iz >= idp as isize {
                            continue;
                        }
                        let iz = iz as usize;
                        for oh in 0..ohp {
                            let ihy = (oh * sh) as isize - ph as isize;
                            let out_row = out_base + od * ohp * owp + oh * owp;
                            for ky in 0..khp {
                                let iy = ihy + ky as isize;
                                if iy < 0 || iy >= ihp as isize {
                                    continue;
                                }
                                let iy = iy as usize;
                                if !live[live_base + iz * ihp + iy] {
                                    continue;
                                }
                                let in_row = in_base + iz * ihp * iwp + iy * iwp;
                                let ker_row = ker_base + kz * khp * kwp + ky * kwp;
                                for kx in 0..kwp {
                                    let k = kernel[ker_row + kx];
                                    if k == 0.0 {
                                        continue;
                                    }
                                    let off = kx as isize - pw as isize;
                                    let ow_lo = if off >= 0 {
                                        0
                                    } else {
                                        ((-off) as usize + sw - 1) / sw
                                    };
                                    let top = iwp as isize - 1 - off;
                                    if top < 0 {
                                        continue;
                                    }
                                    let ow_hi = ((top as usize) / sw).min(owp - 1);
                                    if ow_lo > ow_hi {
                                        continue;
                                    }
                                    let mut ix = ((ow_lo * sw) as isize + off) as usize;
                                    for ow in ow_lo..=ow_hi {
                                        out[out_row + ow] += k * input[in_row + ix];
                                        ix += sw;
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

/// Backward: accumulate gradients for input, kernel and bias.
/// Any of the grad buffers may be empty slices to skip that input.
pub fn conv3d_backward(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    dims: &ConvDims,
    dinput: &mut [f64],
    dkernel: &mut [f64],
    dbias: &mut [f64],
) {
    let [odp, ohp, owp] = dims.od;
    let out_chan = odp * ohp * owp;
    let out_batch = out_chan * dims.cout;
    if !dbias.is_empty() {
        for b in 0..dims.b {
            for co in 0..dims.cout {
                let base = b * out_batch + co * out_chan;
                let mut s = 0.0;
                for v in &dout[base..base + out_chan] {
                    s += v;
                }
                dbias[co] += s;
            }
        }
    }
    let want_din = !dinput.is_empty();
    let want_dk = !dkernel.is_empty();
    if !want_din && !want_dk {
        return;
    }
    if dims.unit_stride() {
        backward_unit_stride(input, kernel, dout, dims, dinput, dkernel);
    } else {
        backward_generic(input, kernel, dout, dims, dinput, dkernel);
    }
}

fn backward_unit_stride(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    dims: &ConvDims,
    dinput: &mut [f64],
    dkernel: &mut [f64],
) {
    let [odp, ohp, owp] = dims.od;
    let [kdp, khp, kwp] = dims.kd;
    let [_, hp, wp] = dims.padded_extents();
    let want_din = !dinput.is_empty();
    let want_dk = !dkernel.is_empty();
    let (inpad, live) = if want_dk {
        pad_input(input, dims)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut dpad = if want_din {
        vec![0.0; dims.b * dims.cin * dims.padded_extents().iter().product::<usize>()]
    } else {
        Vec::new()
    };
    let in_chan = dims.padded_extents().iter().product::<usize>();
    let in_batch = in_chan * dims.cin;
    let out_chan = odp * ohp * owp;
    let out_batch = out_chan * dims.cout;
    let ker_cin = kdp * khp * kwp;
    let ker_cout = ker_cin * dims.cin;

    for b in 0..dims.b {
        for co in 0..dims.cout {
            let out_base = b * out_batch + co * out_chan;
            for ci in 0..dims.cin {
                let in_base = b * in_batch + ci * in_chan;
                let ker_base = co * ker_cout + ci * ker_cin;
                for kz in 0..kdp {
                    for ky in 0..khp {
                        for kx in 0..kwp {
                            let kidx = ker_base + (kz * khp + ky) * kwp + kx;
                            let k = kernel[kidx];
                            let mut dk_acc = 0.0;
                            for od in 0..odp {
                                let in_plane = in_base + (od + kz) * hp * wp;
                                let live_plane = (b * dims.cin + ci) * (in_chan / wp) + (od + kz) * hp;
                                let out_plane = out_base + od * ohp * owp;
                                for oh in 0..ohp {
                                    let src = in_plane + (oh + ky) * wp + kx;
                                    let dst = out_plane + oh * owp;
                                    let go = &dout[dst..dst + owp];
                                    if want_din {
                                        let di = &mut dpad[src..src + owp];
                                        if want_dk {
                                            let xi = &inpad[src..src + owp];
                                            for i in 0..owp {
                                                di[i] += k * go[i];
                                                dk_acc += xi[i] * go[i];
                                            }
                                        } else if k != 0.0 {
                                            for (d, g) in di.iter_mut().zip(go) {
                                                *d += k * g;
                                            }
                                        }
                                    } else {
                                        if !live[live_plane + oh + ky] {
                                            continue;
                                        }
                                        let xi = &inpad[src..src + owp];
                                        for (x, g) in xi.iter().zip(go) {
                                            dk_acc += x * g;
                                        }
                                    }
                                }
                            }
                            if want_dk {
                                dkernel[kidx] += dk_acc;
                            }
                        }
                    }
                }
            }
        }
    }
    if want_din {
        unpad_accumulate(&dpad, dims, dinput);
    }
}

fn backward_generic(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    dims: &ConvDims,
    dinput: &mut [f64],
    dkernel: &mut [f64],
) {
    let [idp, ihp, iwp] = dims.id;
    let [kdp, khp, kwp] = dims.kd;
    let [odp, ohp, owp] = dims.od;
    let [sd, sh, sw] = dims.stride;
    let [pd, ph, pw] = dims.pad;
    let want_din = !dinput.is_empty();
    let want_dk = !dkernel.is_empty();

    let in_chan = idp * ihp * iwp;
    let in_batch = in_chan * dims.cin;
    let out_chan = odp * ohp * owp;
    let out_batch = out_chan * dims.cout;
    let ker_cin = kdp * khp * kwp;
    let ker_cout = ker_cin * dims.cin;

    for b in 0..dims.b {
        for co in 0..dims.cout {
            let out_base = b * out_batch + co * out_chan;
            for ci in 0..dims.cin {
                let in_base = b * in_batch + ci * in_chan;
                let ker_base = co * ker_cout + ci * ker_cin;
                for od in 0..odp {
                    let idz = (od * sd) as isize - pd as isize;
                    for kz in 0..kdp {
                        let iz = idz + kz as isize;
                        if iz < 0 || iz >= idp as isize {
                            continue;
                        }
                        let iz = iz as usize;
                        for oh in 0..ohp {
                            let ihy = (oh * sh) as isize - ph as isize;
                            let out_row = out_base + od * ohp * owp + oh * owp;
                            for ky in 0..khp {
                                let iy = ihy + ky as isize;
                                if iy < 0 || iy >= ihp as isize {
                                    continue;
                                }
                                let iy = iy as usize;
                                let in_row = in_base + iz * ihp * iwp + iy * iwp;
                                let ker_row = ker_base + kz * khp * kwp + ky * kwp;
                                for kx in 0..kwp {
                                    let off = kx as isize - pw as isize;
                                    let ow_lo = if off >= 0 {
                                        0
                                    } else {
                                        ((-off) as usize + sw - 1) / sw
                                    };
                                    let top = iwp as isize - 1 - off;
                                    if top < 0 {
                                        continue;
                                    }
                                    let ow_hi = ((top as usize) / sw).min(owp - 1);
                                    if ow_lo > ow_hi {
                                        continue;
                                    }
                                    let k = kernel[ker_row + kx];
                                    let mut ix = ((ow_lo * sw) as isize + off) as usize;
                                    let mut dk_acc = 0.0;
                                    for ow in ow_lo..=ow_hi {
                                        let g = dout[out_row + ow];
                                        if want_din && k != 0.0 {
                                            dinput[in_row + ix] += k * g;
                                        }
                                        dk_acc += input[in_row + ix] * g;
                                        ix += sw;
                                    }
                                    if want_dk {
                                        dkernel[ker_row + kx] += dk_acc;
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
