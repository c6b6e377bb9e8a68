//! Post hoc uncertainty from auxiliary-loss gradients, plus the sampling
//! and augmentation baselines it is compared against.
//!
//! Every estimator takes the network by shared reference and runs its
//! forward and backward passes through a [`Passes`] counter, so the
//! reported budgets are the calls that actually happened.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DepthNet, ForwardOptions, Prediction};
use crate::seed;
use crate::tape::{NodeId, Tape, UnaryKind};
use crate::tensor::Tensor;
use crate::train::masked_sum;

/// Standard deviation of the additive noise transform, on `[0, 1]` images.
pub const NOISE_STD: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Flip,
    /// Ground truth as the reference; no image transform.
    Gt,
    Gray,
    Noise,
    Rot5,
    Rot10,
    Rot20,
}

impl Transform {
    pub const ALL: [Transform; 7] = [
        Transform::Gt,
        Transform::Flip,
        Transform::Gray,
        Transform::Noise,
        Transform::Rot5,
        Transform::Rot10,
        Transform::Rot20,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Flip => "flip",
            Transform::Gt => "gt",
            Transform::Gray => "gray",
            Transform::Noise => "noise",
            Transform::Rot5 => "rot5",
            Transform::Rot10 => "rot10",
            Transform::Rot20 => "rot20",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid("transform", "unknown transform kind"))
    }

    fn degrees(self) -> Option<f64> {
        match self {
            Transform::Rot5 => Some(5.0),
            Transform::Rot10 => Some(10.0),
            Transform::Rot20 => Some(20.0),
            _ => None,
        }
    }
}

/// Forward/backward passes spent by one estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passes {
    pub forwards: u32,
    pub backwards: u32,
}

impl Passes {
    fn forward(&mut self, net: &DepthNet, x: &Tensor, opts: &ForwardOptions) -> Result<Prediction> {
        self.forwards += 1;
        net.forward(x, opts)
    }

    fn backward(&mut self, tape: &Tape, loss: NodeId, stop: NodeId) -> Result<crate::tape::GradientMap> {
        self.backwards += 1;
        tape.backward_until(loss, stop)
    }
}

/// Rotates every channel of `x` by `degrees` about the image centre,
/// sampling with nearest neighbour. Pixels whose source falls outside the
/// image (or on an invalid source pixel) are set to zero and flagged invalid.
fn rotate(x: &Tensor, src_valid: Option<&[bool]>, degrees: f64) -> Result<(Tensor, Vec<bool>)> {
    let (c, h, w) = x.chw("rotate")?;
    let (sin, cos) = libm::sincos(degrees.to_radians());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut sources = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            // Inverse map: output pixel looks up the source rotated by -θ.
            let (dx, dy) = (col as f64 - cx, r as f64 - cy);
            let sx = libm::round(cos * dx + sin * dy + cx);
            let sy = libm::round(-sin * dx + cos * dy + cy);
            let inside = sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64;
            let src = inside.then(|| sy as usize * w + sx as usize);
            sources.push(src.filter(|&i| src_valid.is_none_or(|v| v[i])));
        }
    }
    let plane = h * w;
    let mut out = vec![0.0; c * plane];
    for ch in 0..c {
        let input = x.channel(ch);
        for (o, src) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(&sources) {
            if let Some(i) = *src {
                *o = input[i];
            }
        }
    }
    Ok((Tensor::new(x.shape(), out)?, sources.iter().map(Option::is_some).collect()))
}

/// Applies the image transform of `kind`. Returns the transformed image and
/// the per-pixel validity of the result.
pub fn transform_apply(kind: Transform, x: &Tensor, seed: u64) -> Result<(Tensor, Vec<bool>)> {
    let (c, h, w) = x.chw("transform_apply")?;
    let all_valid = vec![true; h * w];
    match kind {
        Transform::Flip => Ok((x.flip_horizontal(), all_valid)),
        Transform::Gray => {
            if c != 3 {
                return Err(Error::invalid("transform_apply", "gray needs an RGB image"));
            }
            let (r, g, b) = (x.channel(0), x.channel(1), x.channel(2));
            let lum: Vec<f32> = (0..h * w)
                .map(|i| (0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64) as f32)
                .collect();
            let data = [lum.as_slice(), &lum, &lum].concat();
            Ok((Tensor::new(x.shape(), data)?, all_valid))
        }
        Transform::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0f32, NOISE_STD).expect("positive std");
            let data = x.data().iter().map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
            Ok((Tensor::new(x.shape(), data)?, all_valid))
        }
        Transform::Rot5 | Transform::Rot10 | Transform::Rot20 => {
            rotate(x, None, kind.degrees().expect("rotation kind"))
        }
        Transform::Gt => Err(Error::invalid("transform_apply", "gt has no image transform")),
    }
}

/// Maps a prediction made in the transformed frame back to the original
/// frame. Validity compounds: a pixel is valid only if its source was.
pub fn transform_invert(kind: Transform, map: &Tensor, validity: &[bool]) -> Result<(Tensor, Vec<bool>)> {
    let (_, h, w) = map.chw("transform_invert")?;
    if validity.len() != h * w {
        return Err(Error::ShapeMismatch {
            op: "transform_invert",
            dim: "validity length",
            expected: h * w,
            actual: validity.len(),
        });
    }
    match kind {
        Transform::Flip => {
            let valid = validity.chunks(w).flat_map(|r| r.iter().rev().copied()).collect();
            Ok((map.flip_horizontal(), valid))
        }
        Transform::Gray | Transform::Noise => Ok((map.clone(), validity.to_vec())),
        Transform::Rot5 | Transform::Rot10 | Transform::Rot20 => {
            rotate(map, Some(validity), -kind.degrees().expect("rotation kind"))
        }
        Transform::Gt => Err(Error::invalid("transform_invert", "gt has no image transform")),
    }
}

fn reference_counted(
    net: &DepthNet,
    x: &Tensor,
    kind: Transform,
    seed: u64,
    ground_truth: Option<&Tensor>,
    passes: &mut Passes,
) -> Result<(Tensor, Vec<bool>)> {
    if kind == Transform::Gt {
        let y = ground_truth.ok_or_else(|| Error::invalid("reference_depth", "gt reference needs a depth label"))?;
        let (_, h, w) = y.chw("reference_depth")?;
        return Ok((y.clone(), vec![true; h * w]));
    }
    let (xt, valid) = transform_apply(kind, x, seed)?;
    let pred = passes.forward(net, &xt, &ForwardOptions::default())?;
    transform_invert(kind, pred.depth_map(), &valid)
}

/// Reference depth `d_r`: the prediction for the transformed image, mapped
/// back. It is returned as a plain tensor, so no gradient flows through it.
pub fn reference_depth(
    net: &DepthNet,
    x: &Tensor,
    kind: Transform,
    seed: u64,
    ground_truth: Option<&Tensor>,
) -> Result<(Tensor, Vec<bool>)> {
    reference_counted(net, x, kind, seed, ground_truth, &mut Passes::default())
}

/// Sum over valid pixels of `(d - d_r)^2`.
pub fn aux_loss_plain(tape: &mut Tape, depth: NodeId, reference: &Tensor, validity: &[bool]) -> Result<NodeId> {
    let r = tape.constant(reference.clone())?;
    let diff = tape.sub(depth, r)?;
    let sq = tape.unary(UnaryKind::Square, diff)?;
    masked_sum(tape, sq, validity)
}

/// [`aux_loss_plain`] plus `lambda` times the sum over valid pixels of the
/// predicted variance raised to `variance_power` (1 or 2).
pub fn aux_loss_bayes(
    tape: &mut Tape,
    depth: NodeId,
    variance: NodeId,
    reference: &Tensor,
    lambda: f32,
    variance_power: u8,
    validity: &[bool],
) -> Result<NodeId> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("aux_loss_bayes", "lambda must be finite and non-negative"));
    }
    if tape.value(variance)?.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("aux_loss_bayes", "variance must be positive"));
    }
    let term = match variance_power {
        1 => variance,
        2 => tape.unary(UnaryKind::Square, variance)?,
        _ => return Err(Error::invalid("aux_loss_bayes", "variance power must be 1 or 2")),
    };
    let plain = aux_loss_plain(tape, depth, reference, validity)?;
    let var_sum = masked_sum(tape, term, validity)?;
    let scaled = tape.affine(var_sum, lambda, 0.0)?;
    tape.add(plain, scaled)
}

/// Per-pixel maximum over channels, of magnitudes when `use_abs` is set.
pub fn channel_reduce_max(g: &Tensor, use_abs: bool) -> Result<Tensor> {
    let (c, h, w) = g.chw("channel_reduce_max")?;
    if c == 0 {
        return Err(Error::Empty("channel_reduce_max"));
    }
    let key = |v: f32| if use_abs { v.abs() } else { v };
    let mut out: Vec<f32> = g.channel(0).iter().map(|&v| key(v)).collect();
    for ch in 1..c {
        for (o, &v) in out.iter_mut().zip(g.channel(ch)) {
            *o = o.max(key(v));
        }
    }
    Tensor::new(&[1, h, w], out)
}

/// Nearest-neighbour upsampling to `out_h × out_w` followed by min-max
/// normalisation over the valid pixels. Invalid pixels are set to 0; a
/// constant map becomes all zeros.
pub fn normalize_upsample(g: &Tensor, out_h: usize, out_w: usize, validity: Option<&[bool]>) -> Result<Tensor> {
    let (c, h, w) = g.chw("normalize_upsample")?;
    if c != 1 || h == 0 || w == 0 {
        return Err(Error::invalid("normalize_upsample", "expected a nonempty single-channel map"));
    }
    if !out_h.is_multiple_of(h) || !out_w.is_multiple_of(w) || out_h / h != out_w / w {
        return Err(Error::invalid("normalize_upsample", "output size must be an integer multiple of the input"));
    }
    if let Some(v) = validity {
        if v.len() != out_h * out_w {
            return Err(Error::ShapeMismatch {
                op: "normalize_upsample",
                dim: "validity length",
                expected: out_h * out_w,
                actual: v.len(),
            });
        }
    }
    let factor = out_h / h;
    let src = g.data();
    let up: Vec<f32> = (0..out_h * out_w)
        .map(|i| src[(i / out_w / factor) * w + (i % out_w) / factor])
        .collect();
    let valid = |i: usize| validity.is_none_or(|v| v[i]);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for (i, &v) in up.iter().enumerate() {
        if valid(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let data = if lo < hi {
        let (lo64, span) = (lo as f64, hi as f64 - lo as f64);
        up.iter()
            .enumerate()
            .map(|(i, &v)| if valid(i) { ((v as f64 - lo64) / span) as f32 } else { 0.0 })
            .collect()
    } else {
        vec![0.0; up.len()]
    };
    Tensor::new(&[1, out_h, out_w], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertConfig {
    /// Decoder layer whose gradient is read out, `1..=6`.
    pub layer: usize,
    pub lambda: f32,
    pub transform: Transform,
    pub use_abs: bool,
    pub variance_power: u8,
}

impl Default for UncertConfig {
    fn default() -> Self {
        Self {
            layer: 6,
            lambda: 2.0,
            transform: Transform::Flip,
            use_abs: true,
            variance_power: 1,
        }
    }
}

impl UncertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.layer) {
            return Err(Error::invalid("uncertainty", "layer must be in 1..=6"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("uncertainty", "lambda must be finite and non-negative"));
        }
        if !matches!(self.variance_power, 1 | 2) {
            return Err(Error::invalid("uncertainty", "variance power must be 1 or 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grad,
    Post,
    Var,
    InDrop,
    McDrop,
    /// Same score for every pixel.
    Constant,
    /// The variance head of a Bayesian model.
    Log,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Grad,
        Method::Post,
        Method::Var,
        Method::InDrop,
        Method::McDrop,
        Method::Constant,
        Method::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grad => "grad",
            Method::Post => "post",
            Method::Var => "var",
            Method::InDrop => "indrop",
            Method::McDrop => "mcdrop",
            Method::Constant => "constant",
            Method::Log => "log",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", "unknown uncertainty method"))
    }
}

/// A normalised per-pixel uncertainty map and the prediction it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap {
    /// `1 × h × w`, values in `[0, 1]`.
    pub u: Tensor,
    /// Depth prediction the map is scored against.
    pub depth: Tensor,
    /// Pixels for which `u` is defined.
    pub validity: Vec<bool>,
    pub method: Method,
    pub passes: Passes,
}

impl UncertaintyMap {
    pub fn valid_fraction(&self) -> f64 {
        self.validity.iter().filter(|&&v| v).count() as f64 / self.validity.len().max(1) as f64
    }
}

fn spatial(net: &DepthNet) -> (usize, usize) {
    (net.config().height, net.config().width)
}

/// Gradient-based uncertainty for one image.
pub fn grad_uncertainty(
    net: &DepthNet,
    x: &Tensor,
    cfg: &UncertConfig,
    ground_truth: Option<&Tensor>,
    seed: u64,
) -> Result<UncertaintyMap> {
    cfg.validate()?;
    if cfg.transform == Transform::Gt && ground_truth.is_none() {
        return Err(Error::invalid("grad_uncertainty", "gt reference needs a depth label"));
    }
    let mut passes = Passes::default();
    let mut pred = passes.forward(net, x, &ForwardOptions::recording(cfg.layer))?;
    let (reference, validity) = reference_counted(net, x, cfg.transform, seed, ground_truth, &mut passes)?;
    let loss = match pred.variance {
        Some(var) => aux_loss_bayes(
            &mut pred.tape,
            pred.depth,
            var,
            &reference,
            cfg.lambda,
            cfg.variance_power,
            &validity,
        )?,
        None => aux_loss_plain(&mut pred.tape, pred.depth, &reference, &validity)?,
    };
    let grads = passes.backward(&pred.tape, loss, pred.activation)?;
    let g = grads.grad_of(pred.activation)?;
    let gmax = channel_reduce_max(&g, cfg.use_abs)?;
    let (h, w) = spatial(net);
    Ok(UncertaintyMap {
        u: normalize_upsample(&gmax, h, w, Some(&validity))?,
        depth: pred.depth_map().clone(),
        validity,
        method: Method::Grad,
        passes,
    })
}

/// Squared difference to the flipped prediction, which is the two-sample
/// variance up to a constant factor.
pub fn baseline_post(net: &DepthNet, x: &Tensor) -> Result<UncertaintyMap> {
    let mut passes = Passes::default();
    let pred = passes.forward(net, x, &ForwardOptions::default())?;
    let (reference, validity) = reference_counted(net, x, Transform::Flip, 0, None, &mut passes)?;
    let d = pred.depth_map();
    let raw = Tensor::new(
        d.shape(),
        d.data().iter().zip(reference.data()).map(|(&a, &b)| (a - b) * (a - b) / 4.0).collect(),
    )?;
    let (h, w) = spatial(net);
    Ok(UncertaintyMap {
        u: normalize_upsample(&raw, h, w, Some(&validity))?,
        depth: d.clone(),
        validity,
        method: Method::Post,
        passes,
    })
}

/// Population variance per pixel over the samples valid at that pixel.
/// Pixels with no valid sample get variance 0.
pub fn pixel_variance(samples: &[(Tensor, Vec<bool>)]) -> Result<Tensor> {
    let first = &samples.first().ok_or(Error::Empty("pixel_variance"))?.0;
    let n = first.numel();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (mut count, mut sum) = (0usize, 0.0f64);
        for (t, v) in samples {
            if v[i] {
                count += 1;
                sum += t.data()[i] as f64;
            }
        }
        if count == 0 {
            out.push(0.0);
            continue;
        }
        let mean = sum / count as f64;
        let mut ss = 0.0f64;
        for (t, v) in samples {
            if v[i] {
                let d = t.data()[i] as f64 - mean;
                ss += d * d;
            }
        }
        out.push((ss / count as f64) as f32);
    }
    Tensor::new(first.shape(), out)
}

/// Variance over test-time augmentations: original, flip, gray, noise and
/// a 5° rotation, each mapped back to the original frame.
pub fn baseline_var(net: &DepthNet, x: &Tensor, seed: u64) -> Result<UncertaintyMap> {
    let mut passes = Passes::default();
    let pred = passes.forward(net, x, &ForwardOptions::default())?;
    let d = pred.depth_map().clone();
    let (h, w) = spatial(net);
    let mut stack = vec![(d.clone(), vec![true; h * w])];
    for kind in [Transform::Flip, Transform::Gray, Transform::Noise, Transform::Rot5] {
        stack.push(reference_counted(net, x, kind, seed, None, &mut passes)?);
    }
    let var = pixel_variance(&stack)?;
    Ok(UncertaintyMap {
        u: normalize_upsample(&var, h, w, None)?,
        depth: d,
        validity: vec![true; h * w],
        method: Method::Var,
        passes,
    })
}

fn dropout_samples(
    net: &DepthNet,
    x: &Tensor,
    p: f32,
    n: usize,
    seed: u64,
    passes: &mut Passes,
) -> Result<Vec<(Tensor, Vec<bool>)>> {
    if n == 0 {
        return Err(Error::invalid("dropout sampling", "need at least one sample"));
    }
    let (h, w) = spatial(net);
    (0..n)
        .map(|k| {
            let opts = ForwardOptions::default().with_dropout(p, seed::mix(seed, k as u64));
            let pred = passes.forward(net, x, &opts)?;
            Ok((pred.depth_map().clone(), vec![true; h * w]))
        })
        .collect()
}

/// Dropout switched on only at inference: one clean forward for the depth
/// and `n` stochastic forwards for the variance.
pub fn baseline_indrop(net: &DepthNet, x: &Tensor, p: f32, n: usize, seed: u64) -> Result<UncertaintyMap> {
    let mut passes = Passes::default();
    let pred = passes.forward(net, x, &ForwardOptions::default())?;
    let samples = dropout_samples(net, x, p, n, seed, &mut passes)?;
    let var = pixel_variance(&samples)?;
    let (h, w) = spatial(net);
    Ok(UncertaintyMap {
        u: normalize_upsample(&var, h, w, None)?,
        depth: pred.depth_map().clone(),
        validity: vec![true; h * w],
        method: Method::InDrop,
        passes,
    })
}

/// Monte Carlo dropout on a dropout-trained model: depth is the sample
/// mean, uncertainty the sample variance.
pub fn baseline_mcdrop(net: &DepthNet, x: &Tensor, n: usize, seed: u64) -> Result<UncertaintyMap> {
    if !net.config().dropout {
        return Err(Error::invalid("baseline_mcdrop", "model was not trained with dropout"));
    }
    let mut passes = Passes::default();
    let samples = dropout_samples(net, x, net.config().dropout_p, n, seed, &mut passes)?;
    let numel = samples[0].0.numel();
    let mean: Vec<f32> = (0..numel)
        .map(|i| (samples.iter().map(|(t, _)| t.data()[i] as f64).sum::<f64>() / n as f64) as f32)
        .collect();
    let var = pixel_variance(&samples)?;
    let (h, w) = spatial(net);
    Ok(UncertaintyMap {
        u: normalize_upsample(&var, h, w, None)?,
        depth: Tensor::new(samples[0].0.shape(), mean)?,
        validity: vec![true; h * w],
        method: Method::McDrop,
        passes,
    })
}

/// No uncertainty model: every pixel scores 0.
pub fn baseline_constant(net: &DepthNet, x: &Tensor) -> Result<UncertaintyMap> {
    let mut passes = Passes::default();
    let pred = passes.forward(net, x, &ForwardOptions::default())?;
    let (h, w) = spatial(net);
    Ok(UncertaintyMap {
        u: Tensor::zeros(&[1, h, w]),
        depth: pred.depth_map().clone(),
        validity: vec![true; h * w],
        method: Method::Constant,
        passes,
    })
}

/// Predicted variance of a Bayesian model, normalised.
pub fn baseline_log(net: &DepthNet, x: &Tensor) -> Result<UncertaintyMap> {
    let mut passes = Passes::default();
    let pred = passes.forward(net, x, &ForwardOptions::default())?;
    let var = pred
        .variance_map()
        .ok_or_else(|| Error::invalid("baseline_log", "model has no variance head"))?;
    let (h, w) = spatial(net);
    Ok(UncertaintyMap {
        u: normalize_upsample(var, h, w, None)?,
        depth: pred.depth_map().clone(),
        validity: vec![true; h * w],
        method: Method::Log,
        passes,
    })
}

/// Settings shared by every method in [`estimate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub grad: UncertConfig,
    pub dropout_p: f32,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            grad: UncertConfig::default(),
            dropout_p: 0.2,
            samples: 8,
            seed: 0,
        }
    }
}

/// Runs `method` on one image. `ground_truth` is needed only by the gt
/// reference of the gradient method.
pub fn estimate(
    method: Method,
    net: &DepthNet,
    x: &Tensor,
    ground_truth: Option<&Tensor>,
    cfg: &EstimateConfig,
) -> Result<UncertaintyMap> {
    match method {
        Method::Grad => grad_uncertainty(net, x, &cfg.grad, ground_truth, cfg.seed),
        Method::Post => baseline_post(net, x),
        Method::Var => baseline_var(net, x, cfg.seed),
        Method::InDrop => baseline_indrop(net, x, cfg.dropout_p, cfg.samples, cfg.seed),
        Method::McDrop => baseline_mcdrop(net, x, cfg.samples, cfg.seed),
        Method::Constant => baseline_constant(net, x),
        Method::Log => baseline_log(net, x),
    }
}
