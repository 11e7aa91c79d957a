//! Neural-network classifiers over a single flat `f64` parameter vector.
//!
//! Everything downstream (projections, subspace training, checkpoints)
//! treats a model as an opaque point in R^D, so the networks here expose
//! exactly that: a parameter layout, `forward` (mean softmax cross-entropy
//! loss + correct count), `backward` (the gradient as another flat vector),
//! and a finite-difference oracle used to validate `backward` end to end.
//!
//! Two families are supported, both ReLU classifiers:
//!
//! * fully connected stacks, descriptor `fc:IN-H1-...-CLASSES`;
//! * small convnets — two 5×5 valid convolutions each followed by 2×2
//!   max-pooling, then a fully connected stack. Descriptor
//!   `conv:HxWxC:C1-C2:F1-...-CLASSES`, with `lenet:HxWxC` as shorthand
//!   for the classic 6-16-120-84-10 configuration.

mod conv;
mod dense;

use ndarray::{Array2, ArrayView2, Axis};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tag;

/// A classifier architecture; the compact descriptor round-trips through
/// `FromStr` / `Display` and is what checkpoints store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// Fully connected ReLU stack; `sizes` = [input, hidden..., classes].
    Fc { sizes: Vec<usize> },
    /// conv5-pool2-conv5-pool2 feature extractor, then an FC stack.
    Conv {
        /// Input as (channels, height, width).
        in_shape: (usize, usize, usize),
        /// Channel counts of the two conv layers.
        channels: (usize, usize),
        /// Hidden sizes of the FC stack after flattening.
        fc_hidden: Vec<usize>,
        classes: usize,
    },
}

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
    /// Fan-in used for init scaling; 0 marks a bias (initialized to zero).
    pub fan_in: usize,
}

/// Flat parameter vector; the layout is given by `Architecture::segments`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector { values }
    }
}

/// A minibatch of examples: one flattened input per row.
///
/// For conv architectures each row is the (channel, y, x) row-major
/// flattening of the image; for FC architectures it is simply the input
/// vector. Labels are class indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Architecture {
    /// Flattened input length.
    pub fn input_len(&self) -> usize {
        match self {
            Architecture::Fc { sizes } => sizes[0],
            Architecture::Conv { in_shape: (c, h, w), .. } => c * h * w,
        }
    }

    /// Number of output classes.
    pub fn classes(&self) -> usize {
        match self {
            Architecture::Fc { sizes } => *sizes.last().unwrap(),
            Architecture::Conv { classes, .. } => *classes,
        }
    }

    /// The classic two-conv configuration for an H×W×C input.
    pub fn lenet(h: usize, w: usize, c: usize) -> Result<Self> {
        let arch = Architecture::Conv {
            in_shape: (c, h, w),
            channels: (6, 16),
            fc_hidden: vec![120, 84],
            classes: 10,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Spatial sizes through the conv stack:
    /// (h, w) -> conv5 -> (h-4, w-4) -> pool2 -> ... ; errors if any stage
    /// would be empty or odd-sized where pooling needs even.
    pub(crate) fn conv_plan(h: usize, w: usize) -> Result<ConvPlan> {
        let stage = |n: usize, what: &str| -> Result<(usize, usize)> {
            if n < 6 {
                return Err(Error::InvalidArgument(format!(
                    "{what} input of size {n} is too small for a 5x5 convolution plus 2x2 pooling"
                )));
            }
            let after_conv = n - 4;
            if after_conv % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{what} size {n} leaves an odd map ({after_conv}) for 2x2 pooling"
                )));
            }
            Ok((after_conv, after_conv / 2))
        };
        let (h1, h2) = stage(h, "image height")?;
        let (w1, w2) = stage(w, "image width")?;
        let (h3, h4) = stage(h2, "pooled height")?;
        let (w3, w4) = stage(w2, "pooled width")?;
        Ok(ConvPlan { h1, w1, h2, w2, h3, w3, h4, w4 })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Fc { sizes } => {
                if sizes.len() < 2 {
                    return Err(Error::InvalidArgument(
                        "an FC architecture needs at least input and class sizes".into(),
                    ));
                }
                if sizes.iter().any(|&s| s == 0) {
                    return Err(Error::InvalidArgument("layer sizes must be positive".into()));
                }
            }
            Architecture::Conv { in_shape: (c, h, w), channels, classes, fc_hidden } => {
                if *c == 0 || *h == 0 || *w == 0 || channels.0 == 0 || channels.1 == 0 {
                    return Err(Error::InvalidArgument("conv shape values must be positive".into()));
                }
                if *classes == 0 {
                    return Err(Error::InvalidArgument("need at least one class".into()));
                }
                if fc_hidden.iter().any(|&s| s == 0) {
                    return Err(Error::InvalidArgument("layer sizes must be positive".into()));
                }
                Self::conv_plan(*h, *w)?;
            }
        }
        Ok(())
    }

    /// Sizes of the FC stack, including its input and the class count.
    /// For conv architectures the stack input is the flattened feature map.
    pub(crate) fn fc_sizes(&self) -> Vec<usize> {
        match self {
            Architecture::Fc { sizes } => sizes.clone(),
            Architecture::Conv { in_shape: (_, h, w), channels, fc_hidden, classes } => {
                let plan = Self::conv_plan(*h, *w).expect("validated at construction");
                let mut sizes = vec![channels.1 * plan.h4 * plan.w4];
                sizes.extend_from_slice(fc_hidden);
                sizes.push(*classes);
                sizes
            }
        }
    }

    /// Layout of the flat parameter vector: conv kernels/biases first (conv
    /// architectures only), then alternating weight/bias per FC layer.
    pub fn segments(&self) -> Vec<Segment> {
        let mut segs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize, offset: &mut usize| {
            let len: usize = shape.iter().product();
            segs.push(Segment { name, offset: *offset, len, shape, fan_in });
            *offset += len;
        };
        if let Architecture::Conv { in_shape: (c, _, _), channels, .. } = self {
            let (c1, c2) = *channels;
            push("conv0.w".into(), vec![c1, c * 25], c * 25, &mut offset);
            push("conv0.b".into(), vec![c1], 0, &mut offset);
            push("conv1.w".into(), vec![c2, c1 * 25], c1 * 25, &mut offset);
            push("conv1.b".into(), vec![c2], 0, &mut offset);
        }
        let sizes = self.fc_sizes();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            push(format!("fc{l}.w"), vec![fan_out, fan_in], fan_in, &mut offset);
            push(format!("fc{l}.b"), vec![fan_out], 0, &mut offset);
        }
        segs
    }

    /// Total number of trainable parameters, D.
    pub fn param_count(&self) -> usize {
        self.segments().iter().map(|s| s.len).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvPlan {
    pub h1: usize,
    pub w1: usize,
    pub h2: usize,
    pub w2: usize,
    pub h3: usize,
    pub w3: usize,
    pub h4: usize,
    pub w4: usize,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Fc { sizes } => {
                let parts: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
                write!(f, "fc:{}", parts.join("-"))
            }
            Architecture::Conv { in_shape: (c, h, w), channels, fc_hidden, classes } => {
                if *channels == (6, 16) && fc_hidden == &[120, 84] && *classes == 10 {
                    write!(f, "lenet:{h}x{w}x{c}")
                } else {
                    let mut fc: Vec<String> = fc_hidden.iter().map(|s| s.to_string()).collect();
                    fc.push(classes.to_string());
                    write!(
                        f,
                        "conv:{h}x{w}x{c}:{}-{}:{}",
                        channels.0,
                        channels.1,
                        fc.join("-")
                    )
                }
            }
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::BadDescriptor {
            descriptor: s.to_string(),
            reason: reason.to_string(),
        };
        let parse_list = |part: &str, reason: &str| -> Result<Vec<usize>> {
            part.split('-')
                .map(|p| p.parse::<usize>().map_err(|_| bad(reason)))
                .collect()
        };
        let parse_shape = |part: &str| -> Result<(usize, usize, usize)> {
            let dims: Vec<&str> = part.split('x').collect();
            if dims.len() != 3 {
                return Err(bad("input shape must be HxWxC"));
            }
            let h = dims[0].parse().map_err(|_| bad("bad height"))?;
            let w = dims[1].parse().map_err(|_| bad("bad width"))?;
            let c = dims[2].parse().map_err(|_| bad("bad channel count"))?;
            Ok((h, w, c))
        };

        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected `kind:...`"))?;
        let arch = match kind {
            "fc" => Architecture::Fc { sizes: parse_list(rest, "sizes must be integers")? },
            "lenet" => {
                let (h, w, c) = parse_shape(rest)?;
                Architecture::Conv {
                    in_shape: (c, h, w),
                    channels: (6, 16),
                    fc_hidden: vec![120, 84],
                    classes: 10,
                }
            }
            "conv" => {
                let parts: Vec<&str> = rest.split(':').collect();
                if parts.len() != 3 {
                    return Err(bad("expected conv:HxWxC:C1-C2:F1-...-CLASSES"));
                }
                let (h, w, c) = parse_shape(parts[0])?;
                let ch = parse_list(parts[1], "channel counts must be integers")?;
                if ch.len() != 2 {
                    return Err(bad("exactly two conv channel counts expected"));
                }
                let mut fc = parse_list(parts[2], "FC sizes must be integers")?;
                if fc.is_empty() {
                    return Err(bad("FC part must at least name the class count"));
                }
                let classes = fc.pop().unwrap();
                Architecture::Conv {
                    in_shape: (c, h, w),
                    channels: (ch[0], ch[1]),
                    fc_hidden: fc,
                    classes,
                }
            }
            other => return Err(bad(&format!("unknown architecture kind `{other}`"))),
        };
        arch.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(arch)
    }
}

/// Draws the frozen random initialization theta0 for an architecture.
///
/// Weights are He-scaled normals (std = sqrt(2 / fan_in), matching the ReLU
/// nonlinearity); biases start at zero. Each segment draws from its own
/// substream of `seed`, so the values at a given offset never depend on how
/// other segments are generated.
pub fn init_params(arch: &Architecture, seed: u64) -> ParamVector {
    let segs = arch.segments();
    let mut values = vec![0.0; arch.param_count()];
    for (k, seg) in segs.iter().enumerate() {
        if seg.fan_in == 0 {
            continue; // biases stay zero
        }
        let std = (2.0 / seg.fan_in as f64).sqrt();
        let mut stream = Stream::tagged(seed, &[tag::INIT, k as u64]);
        for v in &mut values[seg.offset..seg.offset + seg.len] {
            *v = std * stream.normal();
        }
    }
    ParamVector { values }
}

fn check_shapes(arch: &Architecture, params: &ParamVector, batch: &Batch) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "architecture {} has {} parameters but the vector holds {}",
            arch,
            arch.param_count(),
            params.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("batch must contain at least one example".into()));
    }
    if batch.inputs.nrows() != batch.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} input rows vs {} labels",
            batch.inputs.nrows(),
            batch.labels.len()
        )));
    }
    if batch.inputs.ncols() != arch.input_len() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} features but {} expects {}",
            batch.inputs.ncols(),
            arch,
            arch.input_len()
        )));
    }
    let classes = arch.classes() as u8;
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch plus the number of correctly
/// classified examples (argmax of the logits, first index on ties).
pub fn forward(arch: &Architecture, params: &ParamVector, batch: &Batch) -> Result<(f64, usize)> {
    check_shapes(arch, params, batch)?;
    let logits = match arch {
        Architecture::Fc { sizes } => {
            dense::forward(sizes, &params.values, 0, batch.inputs.view()).logits
        }
        Architecture::Conv { .. } => {
            conv::forward(arch, &params.values, batch.inputs.view())?.fc.logits
        }
    };
    let (loss, correct, _) = softmax_ce(logits.view(), &batch.labels)?;
    Ok((loss, correct))
}

/// Like [`forward`] but also returns d(mean loss)/d(params) as a flat vector.
pub fn backward(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, usize, ParamVector)> {
    check_shapes(arch, params, batch)?;
    let mut grad = vec![0.0; params.len()];
    let (loss, correct) = match arch {
        Architecture::Fc { sizes } => {
            let cache = dense::forward(sizes, &params.values, 0, batch.inputs.view());
            let (loss, correct, dlogits) = softmax_ce(cache.logits.view(), &batch.labels)?;
            dense::backward(
                sizes,
                &params.values,
                0,
                batch.inputs.view(),
                &cache,
                dlogits,
                &mut grad,
                false,
            );
            (loss, correct)
        }
        Architecture::Conv { .. } => {
            let cache = conv::forward(arch, &params.values, batch.inputs.view())?;
            let (loss, correct, dlogits) = softmax_ce(cache.fc.logits.view(), &batch.labels)?;
            conv::backward(arch, &params.values, &cache, dlogits, &mut grad);
            (loss, correct)
        }
    };
    Ok((loss, correct, ParamVector { values: grad }))
}

/// Logits for a single flattened input; used by control policies and tools
/// that need raw class scores rather than a loss.
pub fn logits(arch: &Architecture, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    if params.len() != arch.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "architecture {} has {} parameters but the vector holds {}",
            arch,
            arch.param_count(),
            params.len()
        )));
    }
    if input.len() != arch.input_len() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features but {} expects {}",
            input.len(),
            arch,
            arch.input_len()
        )));
    }
    let view = ArrayView2::from_shape((1, input.len()), input)
        .expect("1 x len view of a len slice always succeeds");
    let logits = match arch {
        Architecture::Fc { sizes } => dense::forward(sizes, &params.values, 0, view).logits,
        Architecture::Conv { .. } => conv::forward(arch, &params.values, view)?.fc.logits,
    };
    Ok(logits.row(0).to_vec())
}

/// Central-difference gradient of the mean batch loss: coordinate i gets
/// `(L(p + h e_i) - L(p - h e_i)) / 2h`. Exercises only [`forward`], so it
/// is an independent check on [`backward`]. O(D) forward passes — use on
/// small models only.
pub fn finite_diff_grad(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive and finite, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let (lp, _) = forward(arch, &probe, batch)?;
        probe.values[i] = orig - h;
        let (lm, _) = forward(arch, &probe, batch)?;
        probe.values[i] = orig;
        grad[i] = (lp - lm) / (2.0 * h);
    }
    Ok(ParamVector { values: grad })
}


/// Softmax cross-entropy: returns (mean loss, correct count, dlogits) where
/// dlogits is the gradient of the mean loss w.r.t. the logits.
pub(crate) fn softmax_ce(
    logits: ArrayView2<f64>,
    labels: &[u8],
) -> Result<(f64, usize, Array2<f64>)> {
    let n = labels.len();
    let mut dlogits = logits.to_owned();
    let mut total_loss = 0.0;
    let mut correct = 0;
    for (i, (mut row, &label)) in dlogits.axis_iter_mut(Axis(0)).zip(labels).enumerate() {
        let y = label as usize;
        // Stabilized softmax: shift by the row max before exponentiating.
        let mut max = f64::NEG_INFINITY;
        let mut argmax = 0;
        for (j, &z) in row.iter().enumerate() {
            if z > max {
                max = z;
                argmax = j;
            }
        }
        if argmax == y {
            correct += 1;
        }
        let mut sum = 0.0;
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        // -ln p_y = ln(sum) - (z_y - max), with z_y read from the original
        // logits so extreme negative margins stay finite.
        total_loss += sum.ln() - (logits[(i, y)] - max);
        // row currently holds exp(z - max); normalize to probabilities and
        // subtract the one-hot target to get the per-example gradient.
        for z in row.iter_mut() {
            *z /= sum;
        }
        row[y] -= 1.0;
    }
    let loss = total_loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("batch loss is not finite ({loss})")));
    }
    dlogits.mapv_inplace(|g| g / n as f64);
    Ok((loss, correct, dlogits))
}
