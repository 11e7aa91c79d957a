//! Small convnets: two 5×5 valid convolutions, each ReLU'd and 2×2
//! max-pooled, feeding a fully connected stack.
//!
//! Convolutions are lowered to GEMM via im2col: each output position
//! becomes a row holding its receptive field, so the whole layer is one
//! matrix product against the (out_channels, in_channels·25) kernel matrix.
//! The backward pass reverses each step, scattering pooled gradients to the
//! recorded argmax positions and accumulating im2col rows back into maps.

use ndarray::{Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use super::dense::{self, FcCache};
use super::{Architecture, ConvPlan};
use crate::error::Result;

const K: usize = 5;

pub(crate) struct ConvCache {
    col1: Array2<f64>,
    z1: Array4<f64>,
    arg1: Array4<u8>,
    col2: Array2<f64>,
    z2: Array4<f64>,
    arg2: Array4<u8>,
    flat: Array2<f64>,
    pub fc: FcCache,
}

struct Dims {
    cin: usize,
    c1: usize,
    c2: usize,
    h: usize,
    w: usize,
    plan: ConvPlan,
    fc_sizes: Vec<usize>,
    /// Offsets of [conv0.w, conv0.b, conv1.w, conv1.b] and the FC stack.
    w1_off: usize,
    b1_off: usize,
    w2_off: usize,
    b2_off: usize,
    fc_off: usize,
}

fn dims(arch: &Architecture) -> Dims {
    let (in_shape, channels) = match arch {
        Architecture::Conv { in_shape, channels, .. } => (*in_shape, *channels),
        Architecture::Fc { .. } => unreachable!("conv path called with an FC architecture"),
    };
    let (cin, h, w) = in_shape;
    let (c1, c2) = channels;
    let plan = Architecture::conv_plan(h, w).expect("validated at construction");
    let w1_off = 0;
    let b1_off = w1_off + c1 * cin * K * K;
    let w2_off = b1_off + c1;
    let b2_off = w2_off + c2 * c1 * K * K;
    let fc_off = b2_off + c2;
    Dims { cin, c1, c2, h, w, plan, fc_sizes: arch.fc_sizes(), w1_off, b1_off, w2_off, b2_off, fc_off }
}

pub(crate) fn forward(
    arch: &Architecture,
    params: &[f64],
    inputs: ArrayView2<f64>,
) -> Result<ConvCache> {
    let d = dims(arch);
    let n = inputs.nrows();
    let p = d.plan;

    let x = inputs
        .to_owned()
        .into_shape_with_order((n, d.cin, d.h, d.w))
        .expect("row length equals c*h*w");

    // Layer 1: conv -> relu -> pool.
    let col1 = im2col(x.view());
    let k1 = ArrayView2::from_shape((d.c1, d.cin * K * K), &params[d.w1_off..d.b1_off])
        .expect("kernel segment matches its shape");
    let b1 = ArrayView1::from(&params[d.b1_off..d.b1_off + d.c1]);
    let mut z1m = col1.dot(&k1.t());
    z1m += &b1;
    let z1 = maps_from_rows(z1m.view(), n, d.c1, p.h1, p.w1);
    let (p1, arg1) = pool_relu(z1.view());

    // Layer 2 on the pooled maps.
    let col2 = im2col(p1.view());
    let k2 = ArrayView2::from_shape((d.c2, d.c1 * K * K), &params[d.w2_off..d.b2_off])
        .expect("kernel segment matches its shape");
    let b2 = ArrayView1::from(&params[d.b2_off..d.b2_off + d.c2]);
    let mut z2m = col2.dot(&k2.t());
    z2m += &b2;
    let z2 = maps_from_rows(z2m.view(), n, d.c2, p.h3, p.w3);
    let (p2, arg2) = pool_relu(z2.view());

    debug_assert_eq!(p1.dim(), (n, d.c1, p.h2, p.w2));
    debug_assert_eq!(p2.dim(), (n, d.c2, p.h4, p.w4));
    let flat = p2
        .into_shape_with_order((n, d.c2 * p.h4 * p.w4))
        .expect("owned maps are contiguous");
    let fc = dense::forward(&d.fc_sizes, params, d.fc_off, flat.view());
    Ok(ConvCache { col1, z1, arg1, col2, z2, arg2, flat, fc })
}

pub(crate) fn backward(
    arch: &Architecture,
    params: &[f64],
    cache: &ConvCache,
    dlogits: Array2<f64>,
    grad: &mut [f64],
) {
    let d = dims(arch);
    let n = cache.flat.nrows();
    let p = d.plan;

    let dflat = dense::backward(
        &d.fc_sizes,
        params,
        d.fc_off,
        cache.flat.view(),
        &cache.fc,
        dlogits,
        grad,
        true,
    )
    .expect("want_dinput returns the input gradient");

    // Layer 2 backward.
    let dp2 = dflat
        .into_shape_with_order((n, d.c2, p.h4, p.w4))
        .expect("gemm output is contiguous");
    let dz2 = unpool_relu(dp2.view(), cache.arg2.view(), cache.z2.view());
    let dz2m = rows_from_maps(dz2.view());
    let dk2 = dz2m.t().dot(&cache.col2);
    grad[d.w2_off..d.b2_off]
        .copy_from_slice(dk2.as_slice().expect("gemm output is contiguous"));
    let db2 = dz2m.sum_axis(Axis(0));
    grad[d.b2_off..d.b2_off + d.c2]
        .copy_from_slice(db2.as_slice().expect("sum output is contiguous"));

    // Gradient w.r.t. the pooled layer-1 maps, via col2im.
    let k2 = ArrayView2::from_shape((d.c2, d.c1 * K * K), &params[d.w2_off..d.b2_off])
        .expect("kernel segment matches its shape");
    let dcol2 = dz2m.dot(&k2);
    let dp1 = col2im(dcol2.view(), n, d.c1, p.h2, p.w2);
    let dz1 = unpool_relu(dp1.view(), cache.arg1.view(), cache.z1.view());
    let dz1m = rows_from_maps(dz1.view());
    let dk1 = dz1m.t().dot(&cache.col1);
    grad[d.w1_off..d.b1_off]
        .copy_from_slice(dk1.as_slice().expect("gemm output is contiguous"));
    let db1 = dz1m.sum_axis(Axis(0));
    grad[d.b1_off..d.b1_off + d.c1]
        .copy_from_slice(db1.as_slice().expect("sum output is contiguous"));
    // The gradient w.r.t. the raw input is never needed, so the first
    // layer's col2im is skipped on purpose.
}

/// Lowers (n, c, h, w) maps to im2col rows: row ((i·oh)+y)·ow + x holds the
/// 5×5 receptive field at (y, x) for every channel, ordered (c, ky, kx).
fn im2col(x: ArrayView4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h - K + 1, w - K + 1);
    let mut out = Array2::zeros((n * oh * ow, c * K * K));
    for i in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let row = (i * oh + y) * ow + xx;
                for cc in 0..c {
                    for ky in 0..K {
                        for kx in 0..K {
                            out[(row, (cc * K + ky) * K + kx)] = x[(i, cc, y + ky, xx + kx)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Transpose of [`im2col`]: accumulates row gradients back onto the maps
/// (receptive fields overlap, hence `+=`).
fn col2im(dcol: ArrayView2<f64>, n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
    let (oh, ow) = (h - K + 1, w - K + 1);
    let mut out = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let row = (i * oh + y) * ow + xx;
                for cc in 0..c {
                    for ky in 0..K {
                        for kx in 0..K {
                            out[(i, cc, y + ky, xx + kx)] += dcol[(row, (cc * K + ky) * K + kx)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reshapes GEMM output rows ((i·oh)+y)·ow+x by channel into (n, c, oh, ow).
fn maps_from_rows(m: ArrayView2<f64>, n: usize, c: usize, oh: usize, ow: usize) -> Array4<f64> {
    let mut out = Array4::zeros((n, c, oh, ow));
    for i in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let row = (i * oh + y) * ow + xx;
                for cc in 0..c {
                    out[(i, cc, y, xx)] = m[(row, cc)];
                }
            }
        }
    }
    out
}

/// Inverse layout change of [`maps_from_rows`].
fn rows_from_maps(x: ArrayView4<f64>) -> Array2<f64> {
    let (n, c, oh, ow) = x.dim();
    let mut out = Array2::zeros((n * oh * ow, c));
    for i in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let row = (i * oh + y) * ow + xx;
                for cc in 0..c {
                    out[(row, cc)] = x[(i, cc, y, xx)];
                }
            }
        }
    }
    out
}

/// ReLU followed by 2×2 max-pooling. Returns the pooled maps and, per
/// pooled cell, which of its four inputs won (code dy·2+dx, first on ties).
fn pool_relu(z: ArrayView4<f64>) -> (Array4<f64>, Array4<u8>) {
    let (n, c, h, w) = z.dim();
    let (ph, pw) = (h / 2, w / 2);
    let mut pooled = Array4::zeros((n, c, ph, pw));
    let mut arg = Array4::zeros((n, c, ph, pw));
    for i in 0..n {
        for cc in 0..c {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = f64::NEG_INFINITY;
                    let mut code = 0u8;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = z[(i, cc, 2 * py + dy, 2 * px + dx)].max(0.0);
                            if v > best {
                                best = v;
                                code = (dy * 2 + dx) as u8;
                            }
                        }
                    }
                    pooled[(i, cc, py, px)] = best;
                    arg[(i, cc, py, px)] = code;
                }
            }
        }
    }
    (pooled, arg)
}

/// Routes pooled-map gradients back to the argmax positions, zeroing where
/// the winning pre-activation was non-positive (ReLU was flat there).
fn unpool_relu(
    dp: ArrayView4<f64>,
    arg: ArrayView4<u8>,
    z: ArrayView4<f64>,
) -> Array4<f64> {
    let (n, c, ph, pw) = dp.dim();
    let (_, _, h, w) = z.dim();
    let mut out = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for cc in 0..c {
            for py in 0..ph {
                for px in 0..pw {
                    let code = arg[(i, cc, py, px)] as usize;
                    let (y, x) = (2 * py + code / 2, 2 * px + code % 2);
                    if z[(i, cc, y, x)] > 0.0 {
                        out[(i, cc, y, x)] += dp[(i, cc, py, px)];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{self, Batch, ParamVector};
    use crate::rng::Stream;
    use ndarray::Array2;

    /// Straightforward nested-loop convolution, used as an independent
    /// reference for the im2col route.
    fn naive_conv(
        x: &Array4<f64>,
        w: &Array2<f64>, // (cout, cin*25)
        b: &[f64],
    ) -> Array4<f64> {
        let (n, cin, h, ww) = x.dim();
        let cout = w.nrows();
        let (oh, ow) = (h - K + 1, ww - K + 1);
        let mut out = Array4::zeros((n, cout, oh, ow));
        for i in 0..n {
            for co in 0..cout {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ky in 0..K {
                                for kx in 0..K {
                                    acc += w[(co, (ci * K + ky) * K + kx)]
                                        * x[(i, ci, y + ky, xx + kx)];
                                }
                            }
                        }
                        out[(i, co, y, xx)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_naive_convolution() {
        let mut s = Stream::new(42);
        let (n, cin, h, w, cout) = (3, 2, 9, 8, 4);
        let x = Array4::from_shape_fn((n, cin, h, w), |_| s.normal());
        let wmat = Array2::from_shape_fn((cout, cin * K * K), |_| s.normal());
        let b: Vec<f64> = (0..cout).map(|_| s.normal()).collect();

        let col = im2col(x.view());
        let mut zm = col.dot(&wmat.t());
        zm += &ndarray::ArrayView1::from(&b[..]);
        let z = maps_from_rows(zm.view(), n, cout, h - K + 1, w - K + 1);

        let reference = naive_conv(&x, &wmat, &b);
        let max_err = z
            .iter()
            .zip(reference.iter())
            .map(|(a, r)| (a - r).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12, "im2col route deviates by {max_err}");
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y: the pair of
        // layout maps must be exact transposes for gradients to be right.
        let mut s = Stream::new(7);
        let (n, c, h, w) = (2, 3, 7, 9);
        let x = Array4::from_shape_fn((n, c, h, w), |_| s.normal());
        let col = im2col(x.view());
        let y = Array2::from_shape_fn(col.dim(), |_| s.normal());
        let lhs: f64 = col.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let back = col2im(y.view(), n, c, h, w);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn pooling_picks_the_max_and_routes_gradient_there() {
        let mut z = Array4::zeros((1, 1, 2, 2));
        z[(0, 0, 0, 0)] = -1.0;
        z[(0, 0, 0, 1)] = 2.0;
        z[(0, 0, 1, 0)] = 0.5;
        z[(0, 0, 1, 1)] = 1.5;
        let (p, arg) = pool_relu(z.view());
        assert_eq!(p[(0, 0, 0, 0)], 2.0);
        assert_eq!(arg[(0, 0, 0, 0)], 1);

        let mut dp = Array4::zeros((1, 1, 1, 1));
        dp[(0, 0, 0, 0)] = 3.0;
        let dz = unpool_relu(dp.view(), arg.view(), z.view());
        assert_eq!(dz[(0, 0, 0, 1)], 3.0);
        assert_eq!(dz.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn all_negative_window_pools_to_zero_and_blocks_gradient() {
        let z = Array4::from_elem((1, 1, 2, 2), -0.5);
        let (p, arg) = pool_relu(z.view());
        assert_eq!(p[(0, 0, 0, 0)], 0.0);
        let mut dp = Array4::zeros((1, 1, 1, 1));
        dp[(0, 0, 0, 0)] = 1.0;
        let dz = unpool_relu(dp.view(), arg.view(), z.view());
        assert!(dz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_runs_on_a_tiny_convnet() {
        let arch: crate::nn::Architecture = "conv:16x16x1:2-3:8-5".parse().unwrap();
        let mut s = Stream::new(1);
        let params = nn::init_params(&arch, 9);
        let inputs = Array2::from_shape_fn((4, arch.input_len()), |_| s.uniform());
        let labels = vec![0u8, 1, 2, 4];
        let batch = Batch { inputs, labels };
        let (loss, correct) = nn::forward(&arch, &params, &batch).unwrap();
        assert!(loss.is_finite());
        assert!(correct <= 4);

        // Zero parameters give uniform softmax: loss = ln(classes) exactly.
        let zero = ParamVector::zeros(arch.param_count());
        let (loss0, _) = nn::forward(&arch, &zero, &batch).unwrap();
        assert!((loss0 - (5.0f64).ln()).abs() < 1e-12);
    }
}
