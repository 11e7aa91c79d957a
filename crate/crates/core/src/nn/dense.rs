//! Fully connected ReLU stacks over a flat parameter slice.
//!
//! Layer l maps activations a (n×in) to z = a·Wᵀ + b with W stored
//! row-major as (out, in) at its segment offset, followed by ReLU on every
//! layer except the last. Matrix products go through ndarray's `dot`, which
//! dispatches to a real GEMM.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

/// Forward cache: pre-activations of each hidden layer plus the logits.
pub(crate) struct FcCache {
    pub hidden_zs: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

/// Runs the stack defined by `sizes` (= [in, h1, ..., out]) reading
/// parameters from `params[offset..]`.
pub(crate) fn forward(
    sizes: &[usize],
    params: &[f64],
    offset: usize,
    input: ArrayView2<f64>,
) -> FcCache {
    let nlayers = sizes.len() - 1;
    let mut hidden_zs = Vec::with_capacity(nlayers - 1);
    let mut off = offset;
    let mut act: Option<Array2<f64>> = None;
    for l in 0..nlayers {
        let (nin, nout) = (sizes[l], sizes[l + 1]);
        let w = ArrayView2::from_shape((nout, nin), &params[off..off + nout * nin])
            .expect("weight segment matches its shape");
        let b = ArrayView1::from(&params[off + nout * nin..off + (nin + 1) * nout]);
        off += (nin + 1) * nout;
        let mut z = match &act {
            None => input.dot(&w.t()),
            Some(a) => a.dot(&w.t()),
        };
        z += &b;
        if l + 1 < nlayers {
            act = Some(z.mapv(|v| v.max(0.0)));
            hidden_zs.push(z);
        } else {
            return FcCache { hidden_zs, logits: z };
        }
    }
    unreachable!("sizes holds at least [input, classes]");
}

/// Reverse pass. Writes weight/bias gradients into `grad` (same layout as
/// the parameter vector) and, when `want_dinput` is set, returns the
/// gradient w.r.t. the stack's input (needed when a conv front-end feeds
/// this stack).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    sizes: &[usize],
    params: &[f64],
    offset: usize,
    input: ArrayView2<f64>,
    cache: &FcCache,
    dlogits: Array2<f64>,
    grad: &mut [f64],
    want_dinput: bool,
) -> Option<Array2<f64>> {
    let nlayers = sizes.len() - 1;
    let mut offs = Vec::with_capacity(nlayers);
    let mut off = offset;
    for l in 0..nlayers {
        offs.push(off);
        off += (sizes[l] + 1) * sizes[l + 1];
    }

    let mut dz = dlogits;
    for l in (0..nlayers).rev() {
        let (nin, nout) = (sizes[l], sizes[l + 1]);
        let woff = offs[l];
        let boff = woff + nout * nin;
        let w = ArrayView2::from_shape((nout, nin), &params[woff..boff])
            .expect("weight segment matches its shape");

        // Weight grad needs the activation that fed this layer.
        let dw = if l == 0 {
            dz.t().dot(&input)
        } else {
            let a_prev = cache.hidden_zs[l - 1].mapv(|v| v.max(0.0));
            dz.t().dot(&a_prev)
        };
        grad[woff..boff].copy_from_slice(dw.as_slice().expect("gemm output is contiguous"));
        let db = dz.sum_axis(Axis(0));
        grad[boff..boff + nout].copy_from_slice(db.as_slice().expect("sum output is contiguous"));

        if l > 0 {
            // Pull the gradient through ReLU: zero wherever the
            // pre-activation was non-positive.
            let mut da = dz.dot(&w);
            da.zip_mut_with(&cache.hidden_zs[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = da;
        } else if want_dinput {
            return Some(dz.dot(&w));
        }
    }
    None
}
