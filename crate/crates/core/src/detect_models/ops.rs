//! Layer primitives with hand-written backward passes.
//!
//! Activations are `[C, T, H, W]` tensors; 2D convolutions are 3D ones with
//! `T = 1` and a temporal kernel of 1.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::seed::SeededRng;

fn out_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (input >= kernel).then(|| (input - kernel) / stride + 1)
}

/// Unpadded 3D convolution. `x: [C, T, H, W]`, `w: [O, C, KT, KH, KW]`, `b: [O]`.
pub fn conv3d(x: &Tensor, w: &Tensor, b: &Tensor, stride: [usize; 3]) -> Result<Tensor> {
    let &[c, t, h, wd] = x.shape.as_slice() else {
        return Err(invalid!("conv input must be rank 4, got {:?}", x.shape));
    };
    let &[o, wc, kt, kh, kw] = w.shape.as_slice() else {
        return Err(invalid!("conv weight must be rank 5, got {:?}", w.shape));
    };
    if wc != c {
        return Err(invalid!("conv expects {wc} input channels, got {c}"));
    }
    let (Some(ot), Some(oh), Some(ow)) = (
        out_len(t, kt, stride[0]),
        out_len(h, kh, stride[1]),
        out_len(wd, kw, stride[2]),
    ) else {
        return Err(invalid!("input {:?} smaller than kernel {:?}", x.shape, w.shape));
    };
    let [st, sh, sw] = stride;
    let mut y = Tensor::zeros(&[o, ot, oh, ow]);
    let in_plane = h * wd;
    let out_plane = oh * ow;
    for oc in 0..o {
        let y_oc = &mut y.data[oc * ot * out_plane..(oc + 1) * ot * out_plane];
        y_oc.iter_mut().for_each(|v| *v = b.data[oc]);
        for ic in 0..c {
            for dt in 0..kt {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let wv = w.data[(((oc * c + ic) * kt + dt) * kh + dy) * kw + dx];
                        for yt in 0..ot {
                            let x_base = (ic * t + yt * st + dt) * in_plane;
                            let y_base = yt * out_plane;
                            for yy in 0..oh {
                                let xrow = x_base + (yy * sh + dy) * wd + dx;
                                let yrow = &mut y_oc[y_base + yy * ow..y_base + (yy + 1) * ow];
                                for (xx, out) in yrow.iter_mut().enumerate() {
                                    *out += wv * x.data[xrow + xx * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

/// Gradients of [`conv3d`] given the upstream gradient `dy`.
pub fn conv3d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, stride: [usize; 3], need_dx: bool) -> ConvGrads {
    let [c, t, h, wd] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let [o, _, kt, kh, kw] = [w.shape[0], w.shape[1], w.shape[2], w.shape[3], w.shape[4]];
    let [_, ot, oh, ow] = [dy.shape[0], dy.shape[1], dy.shape[2], dy.shape[3]];
    let [st, sh, sw] = stride;
    let in_plane = h * wd;
    let out_plane = oh * ow;
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = Tensor::zeros(&[o]);
    let mut dx = need_dx.then(|| Tensor::zeros(&x.shape));
    for oc in 0..o {
        let dy_oc = &dy.data[oc * ot * out_plane..(oc + 1) * ot * out_plane];
        db.data[oc] = dy_oc.iter().sum();
        for ic in 0..c {
            for dt in 0..kt {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = (((oc * c + ic) * kt + dt) * kh + ky) * kw + kx;
                        let wv = w.data[widx];
                        let mut acc = 0.0;
                        for yt in 0..ot {
                            let x_base = (ic * t + yt * st + dt) * in_plane;
                            let y_base = yt * out_plane;
                            for yy in 0..oh {
                                let xrow = x_base + (yy * sh + ky) * wd + kx;
                                let grow = &dy_oc[y_base + yy * ow..y_base + (yy + 1) * ow];
                                for (xx, g) in grow.iter().enumerate() {
                                    acc += g * x.data[xrow + xx * sw];
                                }
                                if let Some(dx) = dx.as_mut() {
                                    for (xx, g) in grow.iter().enumerate() {
                                        dx.data[xrow + xx * sw] += wv * g;
                                    }
                                }
                            }
                        }
                        dw.data[widx] = acc;
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

pub fn tanh_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.tanh());
}

/// `dy * (1 - y^2)` where `y = tanh(x)`.
pub fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (g, a) in dy.iter_mut().zip(y) {
        *g *= 1.0 - a * a;
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = softplus(*v));
}

/// `dy * sigmoid(x)`, recovered from `y = softplus(x)` as `1 - e^-y`.
pub fn softplus_backward(y: &[f64], dy: &mut [f64]) {
    for (g, a) in dy.iter_mut().zip(y) {
        *g *= -(-a).exp_m1();
    }
}

/// Subtracts each `(out, in)` kernel's mean over its taps, so every kernel
/// sums to zero. The map is an orthogonal projection, hence its own adjoint:
/// applying it to a gradient gives the gradient of the raw weights.
pub fn zero_sum_taps(w: &Tensor) -> Tensor {
    let taps: usize = w.shape[2..].iter().product();
    let mut out = w.clone();
    for k in out.data.chunks_exact_mut(taps.max(1)) {
        let mean = k.iter().sum::<f64>() / taps as f64;
        k.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Channel means over all non-channel axes.
pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let c = x.shape[0];
    let n = x.len() / c.max(1);
    x.data.chunks_exact(n).map(|ch| ch.iter().sum::<f64>() / n as f64).collect()
}

pub fn global_avg_pool_backward(shape: &[usize], dpooled: &[f64]) -> Tensor {
    let mut dx = Tensor::zeros(shape);
    let n = dx.len() / shape[0].max(1);
    for (ch, &g) in dx.data.chunks_exact_mut(n).zip(dpooled) {
        ch.iter_mut().for_each(|v| *v = g / n as f64);
    }
    dx
}

/// `y = W x + b` with `W: [out, in]`.
pub fn linear(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (out, inp) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.len(), inp);
    (0..out)
        .map(|o| {
            let row = &w.data[o * inp..(o + 1) * inp];
            b.data[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(x: &[f64], w: &Tensor, dy: &[f64]) -> (Vec<f64>, Tensor, Tensor) {
    let (out, inp) = (w.shape[0], w.shape[1]);
    let mut dx = vec![0.0; inp];
    let mut dw = Tensor::zeros(&w.shape);
    for o in 0..out {
        let g = dy[o];
        let row = &w.data[o * inp..(o + 1) * inp];
        let drow = &mut dw.data[o * inp..(o + 1) * inp];
        for i in 0..inp {
            drow[i] = g * x[i];
            dx[i] += g * row[i];
        }
    }
    (dx, dw, Tensor::from_vec(&[out], dy.to_vec()).expect("bias shape"))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Uniform in `±sqrt(3 / fan_in)`.
pub fn lecun_uniform(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    }
}
