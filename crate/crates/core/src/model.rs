//! Encoder → bottleneck → classifier network.
//!
//! The encoder is a stack of convolutions. Global average pooling of the last
//! convolution yields the bottleneck pre-activation `v`; the normalization layer
//! maps it to `v̂ = l2_normalize(tanh(v))` and the classifier reads `v̂`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[channels, height, width]` of one input image.
    pub input_shape: [usize; 3],
    pub encoder: Vec<ConvSpec>,
    /// Width of the bottleneck Γ; equals the channel count of the last convolution.
    pub bottleneck_width: usize,
    /// Hidden widths of the classifier; the output layer to `num_targets` is implicit.
    #[serde(default)]
    pub classifier_hidden: Vec<usize>,
    pub num_targets: usize,
}

impl ModelConfig {
    /// Four 7×7 convolutions (16/32/64/64 channels, stride 2 after the first)
    /// feeding a 64-wide bottleneck and a linear classifier over 10 targets.
    pub fn reference(input_shape: [usize; 3]) -> Self {
        Self::with_widths(input_shape, &[16, 32, 64, 64], 7, 10)
    }

    /// Same topology as [`ModelConfig::reference`] with custom channel widths.
    pub fn with_widths(
        input_shape: [usize; 3],
        widths: &[usize],
        kernel: usize,
        num_targets: usize,
    ) -> Self {
        let last = widths.len().saturating_sub(1);
        let encoder = widths
            .iter()
            .enumerate()
            .map(|(i, &out_channels)| ConvSpec {
                out_channels,
                kernel,
                stride: if i == 0 { 1 } else { 2 },
                padding: kernel / 2,
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        ModelConfig {
            input_shape,
            encoder,
            bottleneck_width: widths.last().copied().unwrap_or(0),
            classifier_hidden: Vec::new(),
            num_targets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("model: {msg}")));
        if self.num_targets < 2 {
            return bad(format!("num_targets must be >= 2, got {}", self.num_targets));
        }
        if self.bottleneck_width < 2 {
            return bad(format!(
                "bottleneck_width must be >= 2, got {}",
                self.bottleneck_width
            ));
        }
        let Some(last) = self.encoder.last() else {
            return bad("encoder needs at least one convolution".into());
        };
        if last.out_channels != self.bottleneck_width {
            return bad(format!(
                "bottleneck_width {} differs from last convolution width {}",
                self.bottleneck_width, last.out_channels
            ));
        }
        if self.input_shape.contains(&0) {
            return bad(format!("input_shape {:?} has a zero extent", self.input_shape));
        }
        let [_, mut h, mut w] = self.input_shape;
        for (i, c) in self.encoder.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return bad(format!("conv {i} has a zero extent"));
            }
            if h + 2 * c.padding < c.kernel || w + 2 * c.padding < c.kernel {
                return bad(format!("conv {i} kernel larger than its padded {h}x{w} input"));
            }
            h = (h + 2 * c.padding - c.kernel) / c.stride + 1;
            w = (w + 2 * c.padding - c.kernel) / c.stride + 1;
        }
        if self.classifier_hidden.contains(&0) {
            return bad("classifier hidden width of 0".into());
        }
        Ok(())
    }

    /// Shapes of every parameter in binding order, with their names.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut in_ch = self.input_shape[0];
        for (i, c) in self.encoder.iter().enumerate() {
            shapes.push((
                format!("encoder.{i}.weight"),
                vec![c.out_channels, in_ch, c.kernel, c.kernel],
            ));
            shapes.push((format!("encoder.{i}.bias"), vec![c.out_channels]));
            in_ch = c.out_channels;
        }
        let mut fan_in = self.bottleneck_width;
        let widths = self
            .classifier_hidden
            .iter()
            .copied()
            .chain(std::iter::once(self.num_targets));
        for (j, out) in widths.enumerate() {
            shapes.push((format!("classifier.{j}.weight"), vec![fan_in, out]));
            shapes.push((format!("classifier.{j}.bias"), vec![out]));
            fan_in = out;
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Number of leading parameters that belong to the encoder.
    pub fn encoder_parameter_len(&self) -> usize {
        2 * self.encoder.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<Tensor>,
}

impl ModelState {
    /// Weights are uniform with a fan-in scaled bound (He for layers followed
    /// by a ReLU, LeCun otherwise); biases start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let conv_acts = config.encoder.iter().map(|c| c.activation);
        let hidden = config.classifier_hidden.len();
        let lin_acts = (0..=hidden).map(|j| {
            if j < hidden {
                Activation::Relu
            } else {
                Activation::Identity
            }
        });
        let acts: Vec<Activation> = conv_acts.chain(lin_acts).collect();

        let mut params = Vec::new();
        for (i, (name, shape)) in config.parameter_shapes().into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let gain = match acts[i / 2] {
                    Activation::Relu => 6.0,
                    Activation::Identity => 3.0,
                };
                let bound = (gain / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| (2.0 * rng::unit(&mut rng) - 1.0) * bound)
                    .collect()
            };
            params.push(Tensor::new(shape, data)?);
        }
        Ok(ModelState {
            config: config.clone(),
            seed,
            params,
        })
    }

    /// Places the parameters on `tape`, differentiable when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        BoundModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| tape.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    /// Gradient-free forward pass returning `(v̂, logits)` values.
    pub fn infer(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let model = self.bind(&tape, false);
        let out = model.forward(tape.constant(batch.clone()))?;
        let v_hat = out.v_hat.value().clone();
        let logits = out.logits.value().clone();
        Ok((v_hat, logits))
    }
}

/// Network outputs of one forward pass, all recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct BottleneckOutput<'t> {
    /// Pooled pre-activation, `M × N_Γ`.
    pub v: Var<'t>,
    /// Normalized bottleneck features, `M × N_Γ`, unit-norm rows.
    pub v_hat: Var<'t>,
    /// Classifier output, `M × C`.
    pub logits: Var<'t>,
}

pub struct BoundModel<'t> {
    config: ModelConfig,
    pub params: Vec<Var<'t>>,
}

impl<'t> BoundModel<'t> {
    pub fn forward(&self, batch: Var<'t>) -> Result<BottleneckOutput<'t>> {
        let v = self.encode(batch)?;
        let (v_hat, logits) = self.head(v)?;
        Ok(BottleneckOutput { v, v_hat, logits })
    }

    /// Encoder followed by global average pooling: the bottleneck pre-activation.
    pub fn encode(&self, batch: Var<'t>) -> Result<Var<'t>> {
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != self.config.input_shape {
            let want = [0, self.config.input_shape[0], self.config.input_shape[1], self.config.input_shape[2]];
            return Err(Error::shape("forward", &[&shape, &want]));
        }
        let mut x = batch;
        for (i, spec) in self.config.encoder.iter().enumerate() {
            let (w, b) = (self.params[2 * i], self.params[2 * i + 1]);
            x = x.conv2d(w, Some(b), spec.stride, spec.padding)?;
            if spec.activation == Activation::Relu {
                x = x.relu();
            }
        }
        x.avg_pool()
    }

    /// Normalization layer and classifier applied to a pre-activation `v`.
    pub fn head(&self, v: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let v_hat = v.tanh().l2_normalize()?;
        let offset = self.config.encoder_parameter_len();
        let layers = self.config.classifier_hidden.len() + 1;
        let mut h = v_hat;
        for j in 0..layers {
            let (w, b) = (self.params[offset + 2 * j], self.params[offset + 2 * j + 1]);
            h = h.matmul(w)?.add(b)?;
            if j + 1 < layers {
                h = h.relu();
            }
        }
        Ok((v_hat, h))
    }

    /// Accumulated gradients, zero for parameters the loss did not reach.
    pub fn gradients(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(&p.shape())))
            .collect()
    }
}
