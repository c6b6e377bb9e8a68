//! Supervised training of the base depth models.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, DepthNet, ForwardOptions};
use crate::parallel::map_indexed;
use crate::scene::Sample;
use crate::seed;
use crate::tape::{NodeId, Tape, UnaryKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Depth only, squared-error loss.
    Plain,
    /// Depth plus log-variance head, Gaussian negative log-likelihood.
    Log,
    /// Depth only, squared-error loss with dropout active while training.
    Dropout,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Plain => "plain",
            ModelKind::Log => "log",
            ModelKind::Dropout => "dropout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(ModelKind::Plain),
            "log" => Some(ModelKind::Log),
            "dropout" => Some(ModelKind::Dropout),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub seed: u64,
    pub dropout_p: f32,
    /// Randomly mirror training pairs. Off by default so the flip
    /// consistency used at test time is not trained in.
    pub flip_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Plain,
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            dropout_p: 0.2,
            flip_augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train", "epochs and batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("train", "learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("train", "dropout probability must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn architecture(&self) -> ArchConfig {
        match self.kind {
            ModelKind::Plain => ArchConfig::default(),
            ModelKind::Log => ArchConfig::bayesian(),
            ModelKind::Dropout => ArchConfig::with_dropout(self.dropout_p),
        }
    }
}

/// Sum of `per_pixel` over the pixels flagged in `mask`.
pub(crate) fn masked_sum(tape: &mut Tape, per_pixel: NodeId, mask: &[bool]) -> Result<NodeId> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Empty("loss mask"));
    }
    let shape = tape.value(per_pixel)?.shape().to_vec();
    let numel: usize = shape.iter().product();
    if mask.len() != numel {
        return Err(Error::ShapeMismatch {
            op: "loss",
            dim: "mask length",
            expected: numel,
            actual: mask.len(),
        });
    }
    let weights = Tensor::new(&shape, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?;
    let weights = tape.constant(weights)?;
    let masked = tape.mul(per_pixel, weights)?;
    tape.sum(masked)
}

fn masked_mean(tape: &mut Tape, per_pixel: NodeId, mask: &[bool]) -> Result<NodeId> {
    let total = masked_sum(tape, per_pixel, mask)?;
    let count = mask.iter().filter(|&&m| m).count();
    tape.affine(total, 1.0 / count as f32, 0.0)
}

/// Mean over masked pixels of `(d - y)^2`.
pub fn loss_l2(tape: &mut Tape, depth: NodeId, target: &Tensor, mask: &[bool]) -> Result<NodeId> {
    let y = tape.constant(target.clone())?;
    let diff = tape.sub(depth, y)?;
    let sq = tape.unary(UnaryKind::Square, diff)?;
    masked_mean(tape, sq, mask)
}

/// Mean over masked pixels of `0.5 (d - y)^2 / s + 0.5 ln s` with `s` the
/// predicted variance.
pub fn loss_gaussian_nll(
    tape: &mut Tape,
    depth: NodeId,
    variance: NodeId,
    target: &Tensor,
    mask: &[bool],
) -> Result<NodeId> {
    if tape.value(variance)?.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("loss_gaussian_nll", "variance must be positive"));
    }
    let y = tape.constant(target.clone())?;
    let diff = tape.sub(depth, y)?;
    let sq = tape.unary(UnaryKind::Square, diff)?;
    let scaled = tape.div(sq, variance)?;
    let log_var = tape.unary(UnaryKind::Ln, variance)?;
    let sum = tape.add(scaled, log_var)?;
    let half = tape.affine(sum, 0.5, 0.0)?;
    masked_mean(tape, half, mask)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &DepthNet, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f32>> = net.parameters().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut DepthNet, grads: &[Vec<f32>]) {
        self.step += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.step as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.step as f32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((param, g), m), v) in net.parameters_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (libm::sqrtf(v_hat) + eps);
            }
        }
    }
}

/// Loss of one sample and the gradient for every parameter tensor.
pub fn sample_gradient(
    net: &DepthNet,
    sample: &Sample,
    kind: ModelKind,
    dropout: Option<(f32, u64)>,
    flip: bool,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let (image, target, mask) = if flip {
        let w = sample.depth.shape()[2];
        let mask: Vec<bool> = sample.mask.chunks(w).flat_map(|r| r.iter().rev().copied()).collect();
        (sample.image.flip_horizontal(), sample.depth.flip_horizontal(), mask)
    } else {
        (sample.image.clone(), sample.depth.clone(), sample.mask.clone())
    };
    let mut opts = ForwardOptions::training();
    if let Some((p, seed)) = dropout {
        opts = opts.with_dropout(p, seed);
    }
    let mut pred = net.forward(&image, &opts)?;
    let loss = objective(&mut pred.tape, pred.depth, pred.variance, &target, &mask, kind)?;
    let value = pred.tape.value(loss)?.item() as f64;
    let grads = pred.tape.backward(loss)?;
    let g = pred
        .params
        .iter()
        .flat_map(|&(w, b)| [w, b])
        .map(|id| grads.grad_of(id).map(Tensor::into_data))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, g))
}

fn objective(
    tape: &mut Tape,
    depth: NodeId,
    variance: Option<NodeId>,
    target: &Tensor,
    mask: &[bool],
    kind: ModelKind,
) -> Result<NodeId> {
    match (kind, variance) {
        (ModelKind::Log, Some(var)) => loss_gaussian_nll(tape, depth, var, target, mask),
        (ModelKind::Log, None) => Err(Error::invalid("train", "log model needs a variance head")),
        _ => loss_l2(tape, depth, target, mask),
    }
}

/// Mean per-sample training objective with dropout disabled.
pub fn evaluate_loss(net: &DepthNet, samples: &[Sample], kind: ModelKind) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluate_loss"));
    }
    let losses = map_indexed(samples, |_, s| -> Result<f64> {
        let mut pred = net.forward(&s.image, &ForwardOptions::default())?;
        let loss = objective(&mut pred.tape, pred.depth, pred.variance, &s.depth, &s.mask, kind)?;
        Ok(pred.tape.value(loss)?.item() as f64)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

/// Averaged loss and gradient over a batch. Per-sample work may run in
/// parallel; accumulation is always in batch order.
pub fn batch_gradient(
    net: &DepthNet,
    batch: &[&Sample],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let results = map_indexed(batch, |i, s| {
        let sample_seed = seed::mix(step_seed, i as u64);
        let dropout = (cfg.kind == ModelKind::Dropout).then_some((cfg.dropout_p, sample_seed));
        let flip = cfg.flip_augment && ChaCha8Rng::seed_from_u64(sample_seed ^ 0xF11F).random::<bool>();
        sample_gradient(net, s, cfg.kind, dropout, flip)
    });
    let scale = 1.0 / batch.len() as f32;
    let mut loss = 0.0;
    let mut total: Option<Vec<Vec<f32>>> = None;
    for r in results {
        let (l, g) = r?;
        loss += l;
        match &mut total {
            None => total = Some(g),
            Some(t) => {
                for (acc, g) in t.iter_mut().zip(&g) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    let mut total = total.ok_or(Error::Empty("batch"))?;
    total.iter_mut().flatten().for_each(|v| *v *= scale);
    Ok((loss / batch.len() as f64, total))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trains a fresh model. `on_epoch` sees each epoch's log as it completes.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(DepthNet, Vec<EpochLog>)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut net = DepthNet::new(cfg.architecture(), seed::mix(cfg.seed, 0))?;
    let mut adam = Adam::new(&net, cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let epoch_seed = seed::mix(cfg.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradient(&net, &batch, cfg, seed::mix(epoch_seed, step as u64 + 1))?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut net, &grads);
            loss_sum += loss * batch.len() as f64;
        }
        let val_loss = evaluate_loss(&net, val_set, cfg.kind)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
        };
        if !log.train_loss.is_finite() || !log.val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok((net, logs))
}
