//! Shared-encoder network with a regression head and an optional
//! depth-interval classification head.
//!
//! ```text
//! input ─ stem (s2) ─ block A (s2) ─ block B (dilated, residual) ─┬─ regression head ─ 1 x H x W
//!            └──────────── pooled skip ──────────────────────────┴─ class head ─ n_cls x H x W
//! ```
//!
//! Each head applies a small pyramid pooling stage (adaptive mean pool,
//! 1x1 projection, bilinear upsample) to the encoder features, concatenates
//! the result with the features and the pooled stem skip, then runs a 3x3
//! convolution, ReLU, dropout and a final 1x1 convolution before restoring
//! the input resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{DepthBounds, DepthMap};
use crate::tensor::{ConvGeometry, Tape, Tensor, TensorError, Var};

/// Total spatial stride of the encoder.
pub const ENCODER_STRIDE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input {height}x{width} is not divisible by the encoder stride {ENCODER_STRIDE}")]
    IndivisibleInput { height: usize, width: usize },
    #[error("model was built without the classification head")]
    NoAuxHead,
    #[error("expected {expected} parameter values, got {actual}")]
    ParamLength { expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub block_channels: [usize; 2],
    /// Width of the 3x3 convolution in each head.
    pub head_channels: usize,
    /// Output width of each pyramid level's 1x1 projection.
    pub pyramid_channels: usize,
    pub dilation_of_last_block: usize,
    pub n_cls: usize,
    /// Whether the classification head is allocated at all.
    pub aux_head: bool,
    pub dropout_p: f64,
    pub pyramid_levels: Vec<usize>,
    pub use_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stem_channels: 16,
            block_channels: [32, 64],
            head_channels: 32,
            pyramid_channels: 8,
            dilation_of_last_block: 2,
            n_cls: 32,
            aux_head: true,
            dropout_p: 0.1,
            pyramid_levels: vec![1, 2],
            use_skip: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let widths = [
            self.input_channels,
            self.stem_channels,
            self.block_channels[0],
            self.block_channels[1],
            self.head_channels,
            self.pyramid_channels,
        ];
        if widths.contains(&0) {
            return Err(ModelError::InvalidConfig("zero channel width".into()));
        }
        if self.dilation_of_last_block == 0 {
            return Err(ModelError::InvalidConfig("dilation must be >= 1".into()));
        }
        if self.aux_head && self.n_cls < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "classification head needs n_cls >= 2, got {}",
                self.n_cls
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.pyramid_levels.contains(&0) {
            return Err(ModelError::InvalidConfig("pyramid level of size 0".into()));
        }
        Ok(())
    }

    fn head_input_channels(&self) -> usize {
        self.block_channels[1]
            + self.pyramid_levels.len() * self.pyramid_channels
            + if self.use_skip { self.stem_channels } else { 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Shared,
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Parameter counts per group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCensus {
    pub shared: usize,
    pub regression: usize,
    pub classification: usize,
}

impl ParamCensus {
    pub fn total(&self) -> usize {
        self.shared + self.regression + self.classification
    }

    pub fn shared_fraction(&self) -> f64 {
        self.shared as f64 / self.total() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    RegOnly,
    Both,
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub regression: Var,
    pub class_logits: Option<Var>,
    /// Leaf handle of every parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// Plain-tensor result of an inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    /// `N x 1 x H x W` normalized log-space depth.
    pub regression: Tensor,
    /// `N x n_cls x H x W`, absent when the classification head is not run.
    pub class_logits: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
}

fn conv_param(rng: &mut ChaCha8Rng, name: &str, group: ParamGroup, c_out: usize, c_in: usize, k: usize) -> [Param; 2] {
    let fan_in = (c_in * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let weights = (0..c_out * c_in * k * k)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    [
        Param {
            name: format!("{name}.weight"),
            group,
            value: Tensor::new(vec![c_out, c_in, k, k], weights).expect("conv weight shape"),
        },
        Param {
            name: format!("{name}.bias"),
            group,
            value: Tensor::zeros(vec![c_out]).expect("conv bias shape"),
        },
    ]
}

/// Parameter handles of one convolution during a forward pass.
#[derive(Clone, Copy)]
struct ConvVars {
    weight: Var,
    bias: Var,
}

impl Model {
    /// Builds a model with fan-in scaled uniform weights and zero biases drawn from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let [c1, c2] = config.block_channels;
        let c0 = config.stem_channels;
        let shared = ParamGroup::Shared;
        params.extend(conv_param(
            &mut rng,
            "encoder.stem",
            shared,
            c0,
            config.input_channels,
            3,
        ));
        params.extend(conv_param(&mut rng, "encoder.block_a", shared, c1, c0, 3));
        params.extend(conv_param(&mut rng, "encoder.block_b1", shared, c2, c1, 3));
        params.extend(conv_param(&mut rng, "encoder.block_b2", shared, c2, c2, 3));
        let mut heads = vec![("reg", ParamGroup::Regression, 1)];
        if config.aux_head {
            heads.push(("cls", ParamGroup::Classification, config.n_cls));
        }
        for (prefix, group, out) in heads {
            for level in &config.pyramid_levels {
                params.extend(conv_param(
                    &mut rng,
                    &format!("{prefix}.pyramid{level}"),
                    group,
                    config.pyramid_channels,
                    c2,
                    1,
                ));
            }
            params.extend(conv_param(
                &mut rng,
                &format!("{prefix}.fuse"),
                group,
                config.head_channels,
                config.head_input_channels(),
                3,
            ));
            params.extend(conv_param(
                &mut rng,
                &format!("{prefix}.out"),
                group,
                out,
                config.head_channels,
                1,
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn has_aux_head(&self) -> bool {
        self.config.aux_head
    }

    pub fn census(&self) -> ParamCensus {
        let mut c = ParamCensus {
            shared: 0,
            regression: 0,
            classification: 0,
        };
        for p in &self.params {
            let n = p.value.numel();
            match p.group {
                ParamGroup::Shared => c.shared += n,
                ParamGroup::Regression => c.regression += n,
                ParamGroup::Classification => c.classification += n,
            }
        }
        c
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// All parameter values concatenated in declaration order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend_from_slice(p.value.values());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(ModelError::ParamLength {
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Records a forward pass on `tape`.
    ///
    /// Dropout is active only when `dropout_rng` is given (training mode).
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: Var,
        heads: Heads,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass, ModelError> {
        let [_, c, h, w] = tape.value(input).dims4("model input")?;
        if c != self.config.input_channels {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 {
            return Err(ModelError::IndivisibleInput { height: h, width: w });
        }
        if heads == Heads::Both && !self.config.aux_head {
            return Err(ModelError::NoAuxHead);
        }
        let (fh, fw) = (h / ENCODER_STRIDE, w / ENCODER_STRIDE);
        if let Some(&level) = self.config.pyramid_levels.iter().find(|&&l| l > fh || l > fw) {
            return Err(ModelError::InvalidConfig(format!(
                "pyramid level {level} exceeds the {fh}x{fw} feature map"
            )));
        }

        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        let mut convs = vars.chunks_exact(2).map(|pair| ConvVars {
            weight: pair[0],
            bias: pair[1],
        });
        let mut next = || convs.next().expect("parameter layout matches build order");

        let d = self.config.dilation_of_last_block;
        let stem = conv_relu(tape, input, next(), ConvGeometry::new(2, 1, 1))?;
        let a = conv_relu(tape, stem, next(), ConvGeometry::new(2, 1, 1))?;
        let b1 = conv_relu(tape, a, next(), ConvGeometry::new(1, d, d))?;
        let b2_conv = conv(tape, b1, next(), ConvGeometry::new(1, d, d))?;
        let b2_sum = tape.add(b2_conv, b1)?;
        let features = tape.relu(b2_sum)?;
        let skip = if self.config.use_skip {
            Some(tape.pool2d(stem, (fh, fw))?)
        } else {
            None
        };

        let reg_convs: Vec<ConvVars> = (0..self.head_conv_count()).map(|_| next()).collect();
        let regression = self.head(tape, features, skip, &reg_convs, (h, w), dropout_rng.as_deref_mut())?;
        let class_logits = if self.config.aux_head {
            let cls_convs: Vec<ConvVars> = (0..self.head_conv_count()).map(|_| next()).collect();
            match heads {
                Heads::Both => Some(self.head(tape, features, skip, &cls_convs, (h, w), dropout_rng)?),
                Heads::RegOnly => None,
            }
        } else {
            None
        };
        Ok(ForwardPass {
            regression,
            class_logits,
            params: vars,
        })
    }

    fn head_conv_count(&self) -> usize {
        self.config.pyramid_levels.len() + 2
    }

    fn head(
        &self,
        tape: &mut Tape,
        features: Var,
        skip: Option<Var>,
        convs: &[ConvVars],
        (h, w): (usize, usize),
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let [_, _, fh, fw] = tape.value(features).dims4("features")?;
        let mut parts = vec![features];
        for (level, cv) in self.config.pyramid_levels.iter().zip(convs) {
            let pooled = tape.pool2d(features, (*level, *level))?;
            let projected = conv_relu(tape, pooled, *cv, ConvGeometry::default())?;
            parts.push(tape.upsample_bilinear(projected, (fh, fw))?);
        }
        parts.extend(skip);
        let fused_in = tape.concat(&parts, 1)?;
        let n = self.config.pyramid_levels.len();
        let mut hidden = conv_relu(tape, fused_in, convs[n], ConvGeometry::new(1, 1, 1))?;
        if let Some(rng) = dropout_rng {
            hidden = tape.dropout(hidden, self.config.dropout_p, rng)?;
        }
        let out = conv(tape, hidden, convs[n + 1], ConvGeometry::default())?;
        Ok(tape.upsample_bilinear(out, (h, w))?)
    }

    /// Gradient of every parameter after `tape.backward`, zero where none flowed.
    pub fn gradients(&self, tape: &Tape, pass: &ForwardPass) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .zip(&pass.params)
            .map(|(p, v)| {
                tape.grad(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.value.numel()])
            })
            .collect()
    }

    /// Deterministic evaluation-mode pass on an `N x C x H x W` batch.
    pub fn infer(&self, batch: &Tensor, heads: Heads) -> Result<ModelOutput, ModelError> {
        let mut tape = Tape::new();
        let input = tape.constant(batch.clone());
        let pass = self.forward(&mut tape, input, heads, None)?;
        Ok(ModelOutput {
            regression: tape.value(pass.regression).clone(),
            class_logits: pass.class_logits.map(|v| tape.value(v).clone()),
        })
    }

    /// Dense metric depth for a single `1 x C x H x W` image.
    pub fn predict_depth(&self, image: &Tensor, bounds: &DepthBounds) -> Result<DepthMap, ModelError> {
        let out = self.infer(image, Heads::RegOnly)?;
        let [_, _, h, w] = out.regression.dims4("regression")?;
        Ok(decode_regression(&out.regression.values()[..h * w], h, w, bounds))
    }
}

/// Clamps normalized predictions to `[0, 1]` and decodes them to meters.
pub fn decode_regression(encoded: &[f64], height: usize, width: usize, bounds: &DepthBounds) -> DepthMap {
    let depth = encoded
        .iter()
        .map(|&e| bounds.decode(e.clamp(0.0, 1.0)).expect("clamped value is non-negative"))
        .collect();
    DepthMap {
        height,
        width,
        depth,
        valid: vec![true; height * width],
    }
}

fn conv(tape: &mut Tape, x: Var, cv: ConvVars, geom: ConvGeometry) -> Result<Var, TensorError> {
    tape.conv2d(x, cv.weight, Some(cv.bias), geom)
}

fn conv_relu(tape: &mut Tape, x: Var, cv: ConvVars, geom: ConvGeometry) -> Result<Var, TensorError> {
    let y = conv(tape, x, cv, geom)?;
    tape.relu(y)
}
