//! Small encoder–decoder depth network.
//!
//! Encoder: four 3×3 conv + ELU stages (strides 1, 2, 2, 2). Decoder: six
//! 3×3 conv + ELU layers; layers 1, 3 and 5 are followed by a 2× nearest
//! upsample and a skip concatenation with the matching encoder stage, so
//! layer 6 runs at full input resolution. A 1×1 head produces the depth
//! logit (and a log-variance channel for the Bayesian variant).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;
use crate::tape::{NodeId, Tape, UnaryKind};
use crate::tensor::Tensor;

/// Number of decoder conv layers; valid extraction layers are `1..=6`.
pub const DECODER_LAYERS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder_widths: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Adds a second head channel predicting log-variance.
    pub variance_head: bool,
    pub depth_min: f32,
    pub depth_max: f32,
    /// Whether the model was built to run with dropout (MC-dropout model).
    pub dropout: bool,
    pub dropout_p: f32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            height: 64,
            width: 64,
            encoder_widths: alloc::vec![16, 32, 64, 128],
            encoder_strides: alloc::vec![1, 2, 2, 2],
            decoder_widths: alloc::vec![64, 64, 32, 32, 16, 16],
            variance_head: false,
            depth_min: 0.5,
            depth_max: 10.0,
            dropout: false,
            dropout_p: 0.2,
        }
    }
}

/// Shape of one conv layer in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

impl ArchConfig {
    pub fn bayesian() -> Self {
        Self {
            variance_head: true,
            ..Self::default()
        }
    }

    pub fn with_dropout(p: f32) -> Self {
        Self {
            dropout: true,
            dropout_p: p,
            ..Self::default()
        }
    }

    pub fn head_channels(&self) -> usize {
        if self.variance_head {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArchitecture(m));
        if self.input_channels == 0 {
            return fail("input channels must be positive".into());
        }
        if self.encoder_widths.len() != 4 || self.encoder_strides != [1, 2, 2, 2] {
            return fail("encoder needs four stages with strides [1, 2, 2, 2]".into());
        }
        if self.decoder_widths.len() != DECODER_LAYERS {
            return fail(format!("decoder needs {DECODER_LAYERS} widths"));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return fail("layer widths must be positive".into());
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(8) || !self.width.is_multiple_of(8) {
            return fail("input height and width must be positive multiples of 8".into());
        }
        if !(self.depth_min.is_finite() && self.depth_max.is_finite() && self.depth_min < self.depth_max) {
            return fail("depth range must be finite and increasing".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail("dropout probability must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Conv layers in checkpoint order: `enc1..enc4`, `dec1..dec6`, `head`.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let e = &self.encoder_widths;
        let d = &self.decoder_widths;
        let spec = |name: String, i, o, k, s| LayerSpec {
            name,
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: s,
        };
        let mut specs = Vec::with_capacity(11);
        let mut c_in = self.input_channels;
        for (i, (&w, &s)) in e.iter().zip(&self.encoder_strides).enumerate() {
            specs.push(spec(format!("enc{}", i + 1), c_in, w, 3, s));
            c_in = w;
        }
        let dec_in = [e[3], d[0] + e[2], d[1], d[2] + e[1], d[3], d[4] + e[0]];
        for (i, (&c_in, &c_out)) in dec_in.iter().zip(d).enumerate() {
            specs.push(spec(format!("dec{}", i + 1), c_in, c_out, 3, 1));
        }
        specs.push(spec("head".into(), d[5], self.head_channels(), 1, 1));
        specs
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(LayerSpec::param_count).sum()
    }

    /// Spatial downsampling of decoder layer `layer` relative to the input.
    pub fn decoder_scale(&self, layer: usize) -> usize {
        match layer {
            1 => 8,
            2 | 3 => 4,
            4 | 5 => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Network weights plus architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthNet {
    config: ArchConfig,
    layers: Vec<ConvParams>,
}

/// Dropout applied after every decoder activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub p: f32,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Decoder layer whose post-activation output is recorded (1..=6).
    pub record_layer: usize,
    pub dropout: Option<DropoutSpec>,
    /// Record the weights as gradient-carrying leaves (training).
    pub params_require_grad: bool,
    pub input_requires_grad: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            record_layer: DECODER_LAYERS,
            dropout: None,
            params_require_grad: false,
            input_requires_grad: false,
        }
    }
}

impl ForwardOptions {
    pub fn recording(layer: usize) -> Self {
        Self {
            record_layer: layer,
            ..Self::default()
        }
    }

    pub fn training() -> Self {
        Self {
            params_require_grad: true,
            ..Self::default()
        }
    }

    pub fn with_dropout(mut self, p: f32, seed: u64) -> Self {
        self.dropout = Some(DropoutSpec { p, seed });
        self
    }
}

/// Output of one forward pass; owns the tape so losses can be appended and
/// differentiated.
#[derive(Debug)]
pub struct Prediction {
    pub tape: Tape,
    pub input: NodeId,
    pub depth: NodeId,
    /// `exp_clamped` of the log-variance channel, when present.
    pub variance: Option<NodeId>,
    /// Recorded decoder feature map `a_i`.
    pub activation: NodeId,
    pub record_layer: usize,
    /// `(weight, bias)` leaves, in layer order.
    pub params: Vec<(NodeId, NodeId)>,
}

impl Prediction {
    pub fn depth_map(&self) -> &Tensor {
        self.tape.value(self.depth).expect("depth node")
    }

    pub fn variance_map(&self) -> Option<&Tensor> {
        self.variance.map(|v| self.tape.value(v).expect("variance node"))
    }

    pub fn activation_map(&self) -> &Tensor {
        self.tape.value(self.activation).expect("activation node")
    }
}

impl DepthNet {
    /// He-style fan-in scaled normal init with zero biases.
    pub fn new(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_specs()
            .iter()
            .map(|s| {
                let fan_in = (s.in_channels * s.kernel * s.kernel) as f32;
                let normal = Normal::new(0.0f32, libm::sqrtf(2.0 / fan_in)).expect("positive std");
                let shape = s.weight_shape();
                let weight = Tensor::from_fn(&shape, |_| normal.sample(&mut rng));
                ConvParams {
                    weight,
                    bias: Tensor::zeros(&[s.out_channels]),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// All weights and biases zero; predicts the depth-range midpoint.
    pub fn zeroed(config: ArchConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_specs()
            .iter()
            .map(|s| ConvParams {
                weight: Tensor::zeros(&s.weight_shape()),
                bias: Tensor::zeros(&[s.out_channels]),
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Assembles a net from flat parameter tensors in layer order
    /// (`weight, bias` per layer).
    pub fn from_parameters(config: ArchConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        if params.len() != 2 * specs.len() {
            return Err(Error::InvalidArchitecture(format!(
                "expected {} parameter tensors, got {}",
                2 * specs.len(),
                params.len()
            )));
        }
        let mut it = params.into_iter();
        let mut layers = Vec::with_capacity(specs.len());
        for s in &specs {
            let (weight, bias) = (it.next().unwrap(), it.next().unwrap());
            if weight.shape() != s.weight_shape() || bias.shape() != [s.out_channels] {
                return Err(Error::InvalidArchitecture(format!("parameter shape mismatch in {}", s.name)));
            }
            layers.push(ConvParams { weight, bias });
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvParams] {
        &self.layers
    }

    /// Weight and bias tensors in layer order.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(Tensor::numel).sum()
    }

    /// SHA-256 over the little-endian weight bytes.
    pub fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for p in self.parameters() {
            for v in p.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    pub fn forward(&self, x: &Tensor, opts: &ForwardOptions) -> Result<Prediction> {
        let cfg = &self.config;
        let expected = [cfg.input_channels, cfg.height, cfg.width];
        if x.shape() != expected {
            let (dim, i) = match x.shape().len() {
                3 => match (0..3).find(|&i| x.shape()[i] != expected[i]) {
                    Some(0) => ("channels", 0),
                    Some(1) => ("height", 1),
                    _ => ("width", 2),
                },
                n => {
                    return Err(Error::ShapeMismatch {
                        op: "forward",
                        dim: "rank",
                        expected: 3,
                        actual: n,
                    })
                }
            };
            return Err(Error::ShapeMismatch {
                op: "forward",
                dim,
                expected: expected[i],
                actual: x.shape()[i],
            });
        }
        if !(1..=DECODER_LAYERS).contains(&opts.record_layer) {
            return Err(Error::invalid("forward", "record layer must be in 1..=6"));
        }

        let mut tape = Tape::new();
        let input = tape.leaf(x.clone(), opts.input_requires_grad)?;
        let mut params = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = tape.leaf(l.weight.clone(), opts.params_require_grad)?;
            let b = tape.leaf(l.bias.clone(), opts.params_require_grad)?;
            params.push((w, b));
        }
        let specs = cfg.layer_specs();
        let conv_elu = |tape: &mut Tape, i: usize, x: NodeId| -> Result<NodeId> {
            let (w, b) = params[i];
            let c = tape.conv2d(x, w, b, specs[i].stride, (specs[i].kernel - 1) / 2)?;
            tape.unary(UnaryKind::Elu, c)
        };

        let mut skips = Vec::with_capacity(4);
        let mut h = input;
        for i in 0..4 {
            h = conv_elu(&mut tape, i, h)?;
            skips.push(h);
        }

        let mut activation = None;
        for layer in 1..=DECODER_LAYERS {
            let a = conv_elu(&mut tape, 3 + layer, h)?;
            if layer == opts.record_layer {
                activation = Some(a);
            }
            h = match opts.dropout {
                Some(d) => tape.dropout(a, d.p, seed::mix(d.seed, layer as u64))?,
                None => a,
            };
            if let Some(skip) = match layer {
                1 => Some(skips[2]),
                3 => Some(skips[1]),
                5 => Some(skips[0]),
                _ => None,
            } {
                let up = tape.upsample_nearest(h, 2)?;
                h = tape.concat_channels(up, skip)?;
            }
        }

        let (hw, hb) = params[10];
        let head = tape.conv2d(h, hw, hb, 1, 0)?;
        let (logit, log_var) = if cfg.variance_head {
            (tape.slice_channels(head, 0, 1)?, Some(tape.slice_channels(head, 1, 1)?))
        } else {
            (head, None)
        };
        let s = tape.unary(UnaryKind::Sigmoid, logit)?;
        let depth = tape.affine(s, cfg.depth_max - cfg.depth_min, cfg.depth_min)?;
        let variance = match log_var {
            Some(lv) => Some(tape.unary(UnaryKind::ExpClamped, lv)?),
            None => None,
        };
        Ok(Prediction {
            tape,
            input,
            depth,
            variance,
            activation: activation.expect("record layer validated"),
            record_layer: opts.record_layer,
            params,
        })
    }
}
