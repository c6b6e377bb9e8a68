//! Running uncertainty methods over a split and writing result CSVs.

use std::path::Path;

use depthgrad_core::eval::{self, Aggregation, EvalImage, Metric, MetricCurves, DEFAULT_BINS};
use depthgrad_core::scene::Sample;
use depthgrad_core::uncertainty::{EstimateConfig, Method};
use depthgrad_core::DepthNet;

use crate::error::{Error, Result};
use crate::io;

pub const RESULTS_HEADER: [&str; 4] = ["method", "metric", "ause", "aurg"];
pub const CURVES_HEADER: [&str; 5] = ["method", "metric", "fraction", "value", "oracle_value"];

pub(crate) fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::io(path, e.into_error()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub estimate: EstimateConfig,
    pub bins: usize,
    pub aggregation: Aggregation,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            estimate: EstimateConfig::default(),
            bins: DEFAULT_BINS,
            aggregation: Aggregation::PerImage,
        }
    }
}

/// Curves of one method (or one ablation setting), one entry per metric.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub label: String,
    pub curves: Vec<MetricCurves>,
}

impl MethodResult {
    pub fn metric(&self, metric: Metric) -> &MetricCurves {
        self.curves
            .iter()
            .find(|c| c.metric == metric)
            .expect("every result carries all metrics")
    }
}

pub fn find<'a>(results: &'a [MethodResult], label: &str) -> Option<&'a MethodResult> {
    results.iter().find(|r| r.label == label)
}

/// Rejects a checkpoint whose input size differs from the images.
pub fn check_compatible(net: &DepthNet, samples: &[(usize, Sample)]) -> Result<()> {
    let cfg = net.config();
    for (i, s) in samples {
        let shape = s.image.shape();
        if shape != [cfg.input_channels, cfg.height, cfg.width] {
            return Err(Error::Incompatible(format!(
                "checkpoint expects {}x{}x{} inputs, sample {i} is {shape:?}",
                cfg.input_channels, cfg.height, cfg.width
            )));
        }
    }
    Ok(())
}

pub fn eval_images(samples: &[(usize, Sample)]) -> Vec<EvalImage<'_>> {
    samples
        .iter()
        .map(|(i, s)| EvalImage {
            index: *i,
            image: &s.image,
            label: &s.depth,
            mask: &s.mask,
        })
        .collect()
}

/// Evaluates one estimator configuration under `label`.
pub fn evaluate_one(
    net: &DepthNet,
    samples: &[(usize, Sample)],
    label: String,
    method: Method,
    settings: &EvalSettings,
) -> Result<MethodResult> {
    check_compatible(net, samples)?;
    let images = eval_images(samples);
    let curves = eval::evaluate_method(net, &images, method, &settings.estimate, settings.bins, settings.aggregation)?;
    Ok(MethodResult { label, curves })
}

pub fn evaluate_methods(
    net: &DepthNet,
    samples: &[(usize, Sample)],
    methods: &[Method],
    settings: &EvalSettings,
) -> Result<Vec<MethodResult>> {
    methods
        .iter()
        .map(|&m| evaluate_one(net, samples, m.name().into(), m, settings))
        .collect()
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.into(),
        source,
    }
}

pub fn results_csv(results: &[MethodResult], path: &Path) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(RESULTS_HEADER).map_err(csv_error(path))?;
    for r in results {
        for c in &r.curves {
            w.write_record([
                r.label.clone(),
                c.metric.name().into(),
                format!("{:.6}", c.ause),
                format!("{:.6}", c.aurg),
            ])
            .map_err(csv_error(path))?;
        }
    }
    finish(w, path)
}

/// Curve values are written in shortest round-trip form so plots are
/// computed from the exact values.
pub fn curves_csv(results: &[MethodResult], path: &Path) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(CURVES_HEADER).map_err(csv_error(path))?;
    for r in results {
        for c in &r.curves {
            let bins = c.curve.len();
            for (j, (v, o)) in c.curve.iter().zip(&c.oracle).enumerate() {
                w.write_record([
                    r.label.clone(),
                    c.metric.name().into(),
                    format!("{:.6}", j as f64 / bins as f64),
                    v.to_string(),
                    o.to_string(),
                ])
                .map_err(csv_error(path))?;
            }
        }
    }
    finish(w, path)
}

pub fn write_results(path: &Path, results: &[MethodResult]) -> Result<()> {
    io::write_bytes(path, &results_csv(results, path)?)
}

pub fn write_curves(path: &Path, results: &[MethodResult]) -> Result<()> {
    io::write_bytes(path, &curves_csv(results, path)?)
}
