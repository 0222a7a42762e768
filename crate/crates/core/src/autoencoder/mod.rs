//! VGG-style convolutional autoencoder with named encoder taps.
//!
//! The encoder is five stages of 3×3 conv + ReLU blocks, each followed by a
//! 2×2 max pool. An optional linear head flattens the bottleneck to a latent
//! vector and maps it back. The decoder mirrors the encoder: each stage
//! upsamples by two and applies the same number of convs, narrowing to the
//! previous stage's width.

mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::ops;
use crate::pipeline::NormStats;
use crate::tensor::{Param, Scalar, Tensor4};

pub use checkpoint::{load, save, to_bytes, from_bytes, CHECKPOINT_MAGIC};
pub use train::{holdout_loss, train, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub stage_widths: [usize; 5],
    pub convs_per_stage: [usize; 5],
    pub latent_dim: usize,
    pub input_channels: usize,
    pub with_linear_head: bool,
    /// Spatial side of the inputs the linear head is built for.
    pub head_input_side: usize,
}

impl ArchSpec {
    /// Narrow widths suited to CPU training.
    pub fn desk(input_channels: usize) -> Self {
        Self {
            stage_widths: [8, 16, 32, 64, 64],
            convs_per_stage: [2, 2, 3, 3, 3],
            latent_dim: 256,
            input_channels,
            with_linear_head: true,
            head_input_side: 64,
        }
    }

    /// VGG-16 widths.
    pub fn full(input_channels: usize) -> Self {
        Self {
            stage_widths: [64, 128, 256, 512, 512],
            ..Self::desk(input_channels)
        }
    }

    pub fn without_head(mut self) -> Self {
        self.with_linear_head = false;
        self
    }

    pub fn conv_count(&self) -> usize {
        self.convs_per_stage.iter().sum()
    }

    pub fn bottleneck_side(&self) -> usize {
        self.head_input_side / 32
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_channels == 1 || self.input_channels == 3) {
            return Err(contract("input_channels must be 1 or 3"));
        }
        if self.stage_widths.contains(&0) || self.convs_per_stage.contains(&0) {
            return Err(contract("stage widths and conv counts must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(contract("latent_dim must be at least 1"));
        }
        if self.with_linear_head && (self.head_input_side == 0 || self.head_input_side % 32 != 0) {
            return Err(contract(format!(
                "linear head needs an input side divisible by 32 to reshape the bottleneck, got {}",
                self.head_input_side
            )));
        }
        Ok(())
    }
}

/// Post-ReLU output of the last conv in encoder stages 2, 3, 4
/// (VGG-16's conv2_2, conv3_3, conv4_3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TapName {
    Stage2Last,
    Stage3Last,
    Stage4Last,
}

impl TapName {
    /// Zero-based encoder stage index.
    pub fn stage(self) -> usize {
        match self {
            TapName::Stage2Last => 1,
            TapName::Stage3Last => 2,
            TapName::Stage4Last => 3,
        }
    }

    /// Max pools applied before the tap.
    pub fn pools_before(self) -> usize {
        self.stage()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer<T> {
    pub name: String,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Conv(usize),
    Relu,
    Pool,
    Upsample,
    Flatten,
    Linear(usize),
    Reshape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T = f32> {
    pub arch: ArchSpec,
    pub norm_stats: NormStats,
    pub train_meta: TrainMeta,
    convs: Vec<Layer<T>>,
    linears: Vec<Layer<T>>,
    steps: Vec<Step>,
    /// Index into `steps` one past the tap's ReLU, per encoder stage.
    tap_ends: [usize; 5],
}

pub type AutoencoderModel = Autoencoder<f32>;

/// Recorded forward pass, consumed by [`Autoencoder::backward`].
pub struct Trace<T> {
    inputs: Vec<Tensor4<T>>,
    pools: Vec<Option<ops::ArgmaxIndices>>,
    pub output: Tensor4<T>,
}

fn uniform_param<T: Scalar, R: Rng + ?Sized>(dims: [usize; 4], fan_in: usize, rng: &mut R) -> Param<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    Param::new(Tensor4::from_vec(dims, data).expect("param dims"))
}

impl<T: Scalar> Autoencoder<T> {
    /// Build with fan-in-scaled uniform weights and zero biases.
    pub fn build<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let widths = arch.stage_widths;
        let mut convs = Vec::new();
        let mut linears = Vec::new();
        let mut steps = Vec::new();
        let mut tap_ends = [0usize; 5];

        let conv = |name: String, cin: usize, cout: usize, rng: &mut R, convs: &mut Vec<Layer<T>>| {
            convs.push(Layer {
                name,
                weight: uniform_param([cout, cin, 3, 3], cin * 9, rng),
                bias: Param::new(Tensor4::zeros([cout, 1, 1, 1])),
            });
            convs.len() - 1
        };

        let mut cin = arch.input_channels;
        for s in 0..5 {
            for j in 0..arch.convs_per_stage[s] {
                let idx = conv(format!("enc.s{}.c{}", s + 1, j + 1), cin, widths[s], rng, &mut convs);
                steps.push(Step::Conv(idx));
                steps.push(Step::Relu);
                cin = widths[s];
            }
            tap_ends[s] = steps.len();
            steps.push(Step::Pool);
        }

        if arch.with_linear_head {
            let side = arch.bottleneck_side();
            let flat = widths[4] * side * side;
            linears.push(Layer {
                name: "head.encode".into(),
                weight: uniform_param([arch.latent_dim, flat, 1, 1], flat, rng),
                bias: Param::new(Tensor4::zeros([arch.latent_dim, 1, 1, 1])),
            });
            linears.push(Layer {
                name: "head.decode".into(),
                weight: uniform_param([flat, arch.latent_dim, 1, 1], arch.latent_dim, rng),
                bias: Param::new(Tensor4::zeros([flat, 1, 1, 1])),
            });
            steps.extend([Step::Flatten, Step::Linear(0), Step::Linear(1), Step::Reshape]);
        }

        let mut cin = widths[4];
        for s in (0..5).rev() {
            steps.push(Step::Upsample);
            let k = arch.convs_per_stage[s];
            for j in 0..k {
                let last = j + 1 == k;
                let cout = match (last, s) {
                    (false, _) => widths[s],
                    (true, 0) => arch.input_channels,
                    (true, _) => widths[s - 1],
                };
                let idx = conv(format!("dec.s{}.c{}", s + 1, j + 1), cin, cout, rng, &mut convs);
                steps.push(Step::Conv(idx));
                if !(last && s == 0) {
                    steps.push(Step::Relu);
                }
                cin = cout;
            }
        }

        Ok(Self {
            norm_stats: NormStats::identity(arch.input_channels),
            train_meta: TrainMeta::default(),
            arch,
            convs,
            linears,
            steps,
            tap_ends,
        })
    }

    /// Parameters in canonical order: convs (encoder then decoder), then the head.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.convs
            .iter()
            .chain(&self.linears)
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.name), &l.weight),
                    (format!("{}.bias", l.name), &l.bias),
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.convs
            .iter_mut()
            .chain(self.linears.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Autoencoder<U> {
        let cast_layers = |ls: &[Layer<T>]| {
            ls.iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect()
        };
        Autoencoder {
            arch: self.arch.clone(),
            norm_stats: self.norm_stats.clone(),
            train_meta: self.train_meta.clone(),
            convs: cast_layers(&self.convs),
            linears: cast_layers(&self.linears),
            steps: self.steps.clone(),
            tap_ends: self.tap_ends,
        }
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        if input.c() != self.arch.input_channels {
            return Err(contract(format!(
                "model expects {} input channels, got {}",
                self.arch.input_channels,
                input.c()
            )));
        }
        let (h, w) = (input.h(), input.w());
        if self.arch.with_linear_head {
            let s = self.arch.head_input_side;
            if (h, w) != (s, s) {
                return Err(contract(format!(
                    "model with a linear head takes {s}x{s} inputs, got {h}x{w}"
                )));
            }
        } else if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(contract(format!(
                "fully convolutional model needs sides divisible by 32, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn run_step(&self, step: Step, x: &Tensor4<T>, bottleneck: [usize; 4]) -> Result<(Tensor4<T>, Option<ops::ArgmaxIndices>)> {
        Ok(match step {
            Step::Conv(i) => (ops::conv2d(x, &self.convs[i].weight, &self.convs[i].bias)?, None),
            Step::Relu => (ops::relu(x), None),
            Step::Pool => {
                let (y, idx) = ops::maxpool2(x)?;
                (y, Some(idx))
            }
            Step::Upsample => (ops::upsample2(x), None),
            Step::Flatten => {
                let n = x.n();
                let d = x.len() / n.max(1);
                (x.clone().reshape([n, d, 1, 1])?, None)
            }
            Step::Linear(i) => (ops::linear(x, &self.linears[i].weight, &self.linears[i].bias)?, None),
            Step::Reshape => (x.clone().reshape([x.n(), bottleneck[1], bottleneck[2], bottleneck[3]])?, None),
        })
    }

    fn bottleneck_dims(&self, n: usize) -> [usize; 4] {
        let s = self.arch.bottleneck_side();
        [n, self.arch.stage_widths[4], s, s]
    }

    /// Reconstruction of `input`.
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let bottleneck = self.bottleneck_dims(input.n());
        let mut x = input.clone();
        for &step in &self.steps {
            x = self.run_step(step, &x, bottleneck)?.0;
        }
        Ok(x)
    }

    /// Forward pass that keeps every intermediate for [`Self::backward`].
    pub fn forward_trace(&self, input: &Tensor4<T>) -> Result<Trace<T>> {
        self.check_input(input)?;
        let bottleneck = self.bottleneck_dims(input.n());
        let mut inputs = Vec::with_capacity(self.steps.len());
        let mut pools = Vec::with_capacity(self.steps.len());
        let mut x = input.clone();
        for &step in &self.steps {
            let (y, idx) = self.run_step(step, &x, bottleneck)?;
            inputs.push(std::mem::replace(&mut x, y));
            pools.push(idx);
        }
        Ok(Trace {
            inputs,
            pools,
            output: x,
        })
    }

    /// Accumulate parameter gradients for `dL/doutput`; returns `dL/dinput`.
    pub fn backward(&mut self, trace: Trace<T>, grad_output: Tensor4<T>) -> Result<Tensor4<T>> {
        if grad_output.dims() != trace.output.dims() {
            return Err(contract("backward: gradient does not match forward output"));
        }
        let mut g = grad_output;
        for (i, &step) in self.steps.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            g = match step {
                Step::Conv(k) => {
                    let Layer { weight, bias, .. } = &mut self.convs[k];
                    ops::conv2d_backward(x, weight, bias, &g)?
                }
                Step::Relu => ops::relu_backward(x, &g)?,
                Step::Pool => ops::maxpool2_backward(
                    x.dims(),
                    trace.pools[i].as_ref().expect("pool indices recorded"),
                    &g,
                )?,
                Step::Upsample => ops::upsample2_backward(&g)?,
                Step::Linear(k) => {
                    let Layer { weight, bias, .. } = &mut self.linears[k];
                    ops::linear_backward(x, weight, bias, &g)?
                }
                Step::Flatten | Step::Reshape => g.reshape(x.dims())?,
            };
        }
        Ok(g)
    }

    /// Post-ReLU activation at `tap`, computing only the encoder prefix.
    pub fn encode_tap(&self, input: &Tensor4<T>, tap: TapName) -> Result<Tensor4<T>> {
        if input.c() != self.arch.input_channels {
            return Err(contract(format!(
                "model expects {} input channels, got {}",
                self.arch.input_channels,
                input.c()
            )));
        }
        let div = 1usize << tap.pools_before();
        let (h, w) = (input.h(), input.w());
        if h < div || w < div || h % div != 0 || w % div != 0 {
            return Err(contract(format!(
                "{h}x{w} input cannot pass the {} pools before {tap:?}",
                tap.pools_before()
            )));
        }
        let end = self.tap_ends[tap.stage()];
        let mut x = input.clone();
        for &step in &self.steps[..end] {
            x = self.run_step(step, &x, [0; 4])?.0;
        }
        Ok(x)
    }

    /// Width of the activation at `tap`.
    pub fn tap_channels(&self, tap: TapName) -> usize {
        self.arch.stage_widths[tap.stage()]
    }
}

impl Autoencoder<f32> {
    /// Reconstruction loss, failing on non-finite values.
    pub fn reconstruction_loss(&self, input: &Tensor4) -> Result<f64> {
        let out = self.forward(input)?;
        let loss = ops::l2_loss(&out, input)? as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite reconstruction loss".into()));
        }
        Ok(loss)
    }
}
