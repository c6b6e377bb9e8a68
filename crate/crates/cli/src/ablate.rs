//! One-axis sweeps of the gradient method's settings.

use std::path::Path;

use depthgrad_core::scene::Sample;
use depthgrad_core::uncertainty::{Method, Transform, UncertConfig};
use depthgrad_core::DepthNet;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io;
use crate::report::{self, EvalSettings, MethodResult};

pub const HEADER: [&str; 6] = ["axis", "setting", "oracle", "metric", "ause", "aurg"];
pub const LAMBDAS: [f32; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Layer,
    Loss,
    Abs,
    Lambda,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Layer => "layer",
            Axis::Loss => "loss",
            Axis::Abs => "abs",
            Axis::Lambda => "lambda",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub label: String,
    /// Uses the ground truth, so it is an upper bound rather than a method.
    pub oracle: bool,
    pub grad: UncertConfig,
}

/// The sweep of `axis`, varying only that field of `base`.
pub fn settings(axis: Axis, base: &UncertConfig) -> Vec<Setting> {
    let with = |label: String, grad: UncertConfig| Setting {
        oracle: grad.transform == Transform::Gt,
        label,
        grad,
    };
    match axis {
        Axis::Layer => (1..=6)
            .map(|layer| with(layer.to_string(), UncertConfig { layer, ..base.clone() }))
            .collect(),
        Axis::Loss => Transform::ALL
            .into_iter()
            .map(|transform| with(transform.name().into(), UncertConfig { transform, ..base.clone() }))
            .collect(),
        Axis::Abs => [("on", true), ("off", false)]
            .into_iter()
            .map(|(label, use_abs)| with(label.into(), UncertConfig { use_abs, ..base.clone() }))
            .collect(),
        Axis::Lambda => LAMBDAS
            .into_iter()
            .map(|lambda| with(lambda.to_string(), UncertConfig { lambda, ..base.clone() }))
            .collect(),
    }
}

pub fn run(
    net: &DepthNet,
    samples: &[(usize, Sample)],
    axis: Axis,
    settings_base: &EvalSettings,
) -> Result<Vec<(Setting, MethodResult)>> {
    settings(axis, &settings_base.estimate.grad)
        .into_iter()
        .map(|s| {
            let mut cfg = settings_base.clone();
            cfg.estimate.grad = s.grad.clone();
            let r = report::evaluate_one(net, samples, s.label.clone(), Method::Grad, &cfg)?;
            Ok((s, r))
        })
        .collect()
}

pub fn write_csv(path: &Path, axis: Axis, rows: &[(Setting, MethodResult)]) -> Result<()> {
    let err = |source| crate::error::Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = report::csv_writer();
    w.write_record(HEADER).map_err(err)?;
    for (s, r) in rows {
        for c in &r.curves {
            w.write_record([
                axis.name().into(),
                s.label.clone(),
                s.oracle.to_string(),
                c.metric.name().into(),
                format!("{:.6}", c.ause),
                format!("{:.6}", c.aurg),
            ])
            .map_err(err)?;
        }
    }
    io::write_bytes(path, &report::finish(w, path)?)
}
