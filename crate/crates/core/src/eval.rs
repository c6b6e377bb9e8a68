//! Sparsification curves, AUSE and AURG.
//!
//! All sums run in ascending pixel index over the pixels that remain, in
//! f64, so a curve depends only on which pixels were removed and never on
//! how they were ranked.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DepthNet;
use crate::parallel::map_indexed;
use crate::seed;
use crate::tensor::Tensor;
use crate::uncertainty::{estimate, EstimateConfig, Method, Passes};

/// Default number of sparsification steps.
pub const DEFAULT_BINS: usize = 50;

const DELTA_THRESHOLD: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AbsRel,
    Rmse,
    /// Fraction of pixels with `max(d/y, y/d) >= 1.25`, read as an error.
    Delta,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::AbsRel, Metric::Rmse, Metric::Delta];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AbsRel => "abs_rel",
            Metric::Rmse => "rmse",
            Metric::Delta => "delta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// How a per-pixel value array turns into a set metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    RootMean,
}

impl Aggregate {
    /// Aggregate over the pixels with `keep[i]`, summed in index order.
    pub fn over(self, values: &[f64], keep: &[bool]) -> f64 {
        let (mut sum, mut n) = (0.0f64, 0usize);
        for (&v, &k) in values.iter().zip(keep) {
            if k {
                sum += v;
                n += 1;
            }
        }
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        match self {
            Aggregate::Mean => mean,
            Aggregate::RootMean => libm::sqrt(mean),
        }
    }
}

/// Per-pixel error surrogates over the evaluable pixels of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelErrors {
    pub abs_rel: Vec<f64>,
    pub sq_err: Vec<f64>,
    /// 1.0 where the depth ratio reaches the threshold, else 0.0.
    pub delta_bad: Vec<f64>,
}

impl PixelErrors {
    pub fn len(&self) -> usize {
        self.sq_err.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_err.is_empty()
    }

    /// Per-pixel values and aggregate whose set metric is `metric`.
    pub fn values(&self, metric: Metric) -> (&[f64], Aggregate) {
        match metric {
            Metric::AbsRel => (&self.abs_rel, Aggregate::Mean),
            Metric::Rmse => (&self.sq_err, Aggregate::RootMean),
            Metric::Delta => (&self.delta_bad, Aggregate::Mean),
        }
    }

    /// Pixels of several images, concatenated in the given order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a PixelErrors>) -> PixelErrors {
        let mut out = PixelErrors {
            abs_rel: Vec::new(),
            sq_err: Vec::new(),
            delta_bad: Vec::new(),
        };
        for p in parts {
            out.abs_rel.extend_from_slice(&p.abs_rel);
            out.sq_err.extend_from_slice(&p.sq_err);
            out.delta_bad.extend_from_slice(&p.delta_bad);
        }
        out
    }
}

/// Errors of prediction `d` against label `y` on the pixels in `mask`.
pub fn pixel_errors(d: &[f32], y: &[f32], mask: &[bool]) -> Result<PixelErrors> {
    if d.len() != y.len() || d.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "pixel_errors",
            dim: "pixel count",
            expected: d.len(),
            actual: if y.len() != d.len() { y.len() } else { mask.len() },
        });
    }
    let mut out = PixelErrors::concat([]);
    for ((&d, &y), &m) in d.iter().zip(y).zip(mask) {
        if !m {
            continue;
        }
        let (d, y) = (d as f64, y as f64);
        if !(y > 0.0 && d > 0.0) {
            return Err(Error::invalid("pixel_errors", "depths must be positive on evaluated pixels"));
        }
        let diff = d - y;
        out.abs_rel.push(diff.abs() / y);
        out.sq_err.push(diff * diff);
        out.delta_bad.push(if (d / y).max(y / d) >= DELTA_THRESHOLD { 1.0 } else { 0.0 });
    }
    if out.is_empty() {
        return Err(Error::Empty("pixel_errors mask"));
    }
    Ok(out)
}

/// Set metric over the pixels with `keep[i]`.
pub fn set_metric(metric: Metric, errors: &PixelErrors, keep: &[bool]) -> f64 {
    let (values, agg) = errors.values(metric);
    agg.over(values, keep)
}

fn removal_order(n: usize, cmp: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(a, b).then(a.cmp(&b)));
    order
}

/// Order in which pixels are removed: highest score first, ties by index.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    removal_order(scores.len(), |a, b| scores[b].total_cmp(&scores[a]))
}

/// Removal order of the oracle for `metric`: its own per-pixel surrogate,
/// with the squared error breaking ties for the δ indicator.
pub fn oracle_order(errors: &PixelErrors, metric: Metric) -> Vec<usize> {
    let n = errors.len();
    match metric {
        Metric::AbsRel => ranking_order(&errors.abs_rel),
        Metric::Rmse => ranking_order(&errors.sq_err),
        Metric::Delta => removal_order(n, |a, b| {
            let e = errors;
            e.delta_bad[b]
                .total_cmp(&e.delta_bad[a])
                .then(e.sq_err[b].total_cmp(&e.sq_err[a]))
        }),
    }
}

/// Curve of the aggregate over the pixels left after removing, at step
/// `j`, the first `floor(j * n / bins)` pixels of `order`.
pub fn curve_from_order(values: &[f64], agg: Aggregate, order: &[usize], bins: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if order.len() != n {
        return Err(Error::ShapeMismatch {
            op: "sparsification",
            dim: "ranking length",
            expected: n,
            actual: order.len(),
        });
    }
    if bins == 0 || n < bins {
        return Err(Error::invalid("sparsification", "need at least as many pixels as bins"));
    }
    let mut keep = vec![true; n];
    let mut removed = 0;
    let mut curve = Vec::with_capacity(bins);
    for j in 0..bins {
        let target = j * n / bins;
        for &i in &order[removed..target] {
            keep[i] = false;
        }
        removed = target;
        curve.push(agg.over(values, &keep));
    }
    Ok(curve)
}

/// Sparsification curve of per-pixel `values` ranked by `scores`.
pub fn sparsification_curve(values: &[f64], agg: Aggregate, scores: &[f64], bins: usize) -> Result<Vec<f64>> {
    if scores.len() != values.len() {
        return Err(Error::ShapeMismatch {
            op: "sparsification",
            dim: "ranking length",
            expected: values.len(),
            actual: scores.len(),
        });
    }
    curve_from_order(values, agg, &ranking_order(scores), bins)
}

/// Area between a method's curve and the oracle curve.
pub fn ause(curve: &[f64], oracle: &[f64]) -> f64 {
    curve.iter().zip(oracle).map(|(u, o)| u - o).sum::<f64>() / curve.len() as f64
}

/// Area between the no-uncertainty level `curve[0]` and the method's curve.
pub fn aurg(curve: &[f64]) -> f64 {
    let base = curve[0];
    curve.iter().map(|u| base - u).sum::<f64>() / curve.len() as f64
}

/// Curves and areas of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub metric: Metric,
    pub curve: Vec<f64>,
    pub oracle: Vec<f64>,
    pub ause: f64,
    pub aurg: f64,
}

/// Sparsifies `errors` by `scores` for one metric.
pub fn evaluate_metric(errors: &PixelErrors, scores: &[f64], metric: Metric, bins: usize) -> Result<MetricCurves> {
    let (values, agg) = errors.values(metric);
    let curve = sparsification_curve(values, agg, scores, bins)?;
    let oracle = curve_from_order(values, agg, &oracle_order(errors, metric), bins)?;
    Ok(MetricCurves {
        metric,
        ause: ause(&curve, &oracle),
        aurg: aurg(&curve),
        curve,
        oracle,
    })
}

/// All three metrics for one pixel field.
pub fn evaluate_all(errors: &PixelErrors, scores: &[f64], bins: usize) -> Result<Vec<MetricCurves>> {
    Metric::ALL
        .into_iter()
        .map(|m| evaluate_metric(errors, scores, m, bins))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Sparsify each image, then average curves and areas over images.
    #[default]
    PerImage,
    /// Sparsify all pixels of the set as one field.
    Pooled,
}

/// Errors and scores of one image, keyed by its dataset index.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageField {
    pub index: usize,
    pub errors: PixelErrors,
    pub scores: Vec<f64>,
}

/// Aggregates image fields into one [`MetricCurves`] per metric. Fields
/// are processed in ascending index, whatever order they arrive in.
pub fn aggregate(fields: &[ImageField], mode: Aggregation, bins: usize) -> Result<Vec<MetricCurves>> {
    if fields.is_empty() {
        return Err(Error::Empty("aggregate"));
    }
    let mut sorted: Vec<&ImageField> = fields.iter().collect();
    sorted.sort_by_key(|f| f.index);
    match mode {
        Aggregation::Pooled => {
            let errors = PixelErrors::concat(sorted.iter().map(|f| &f.errors));
            let scores: Vec<f64> = sorted.iter().flat_map(|f| f.scores.iter().copied()).collect();
            evaluate_all(&errors, &scores, bins)
        }
        Aggregation::PerImage => {
            let per_image = sorted
                .iter()
                .map(|f| evaluate_all(&f.errors, &f.scores, bins))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_curves(&per_image))
        }
    }
}

/// Pointwise mean of per-image curves and mean of their areas, accumulated
/// in the order given.
pub fn mean_curves(per_image: &[Vec<MetricCurves>]) -> Vec<MetricCurves> {
    let n = per_image.len() as f64;
    let mut out = per_image[0].clone();
    for (k, acc) in out.iter_mut().enumerate() {
        for rest in &per_image[1..] {
            let m = &rest[k];
            acc.curve.iter_mut().zip(&m.curve).for_each(|(a, b)| *a += b);
            acc.oracle.iter_mut().zip(&m.oracle).for_each(|(a, b)| *a += b);
            acc.ause += m.ause;
            acc.aurg += m.aurg;
        }
        acc.curve.iter_mut().chain(acc.oracle.iter_mut()).for_each(|v| *v /= n);
        acc.ause /= n;
        acc.aurg /= n;
    }
    out
}

/// One labelled test image.
#[derive(Clone, Copy, Debug)]
pub struct EvalImage<'a> {
    pub index: usize,
    pub image: &'a Tensor,
    pub label: &'a Tensor,
    pub mask: &'a [bool],
}

/// Runs `method` on one image and collects the errors and scores of the
/// pixels that are both labelled and covered by the uncertainty map.
pub fn image_field(net: &DepthNet, img: &EvalImage<'_>, method: Method, cfg: &EstimateConfig) -> Result<(ImageField, Passes)> {
    let cfg = EstimateConfig {
        seed: seed::mix(cfg.seed, img.index as u64),
        ..cfg.clone()
    };
    let map = estimate(method, net, img.image, Some(img.label), &cfg)?;
    let keep: Vec<bool> = img.mask.iter().zip(&map.validity).map(|(&a, &b)| a && b).collect();
    let errors = pixel_errors(map.depth.data(), img.label.data(), &keep)?;
    let scores = map
        .u
        .data()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&u, _)| u as f64)
        .collect();
    Ok((
        ImageField {
            index: img.index,
            errors,
            scores,
        },
        map.passes,
    ))
}

/// Sparsification of `method` over a set of images.
pub fn evaluate_method(
    net: &DepthNet,
    images: &[EvalImage<'_>],
    method: Method,
    cfg: &EstimateConfig,
    bins: usize,
    mode: Aggregation,
) -> Result<Vec<MetricCurves>> {
    let fields = map_indexed(images, |_, img| image_field(net, img, method, cfg).map(|(f, _)| f))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate(&fields, mode, bins)
}
