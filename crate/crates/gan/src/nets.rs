//! Generator and critic/classifier networks.
//!
//! The generator projects `[z | one-hot c]` to a small spatial seed and
//! doubles the resolution with transposed convolutions (batch norm + ReLU)
//! up to the grid size, ending in a sigmoid. The critic trunk mirrors it with
//! strided convolutions (LeakyReLU + dropout, no batch norm) and branches into
//! a linear critic head and a softmax classifier head.

use facies_autodiff::ops::*;
use facies_autodiff::{ConvGeom, Float, Tensor, Var};
use facies_core::{FaciesCodebook, LatentInput, SoftPlanes};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};
use crate::params::ParamSet;

const KERNEL: usize = 4;
const INIT_STD: f64 = 0.02;
const BN_EPS: f64 = 1e-5;

fn updown() -> ConvGeom {
    ConvGeom::new(KERNEL, 2, 1)
}

/// Shapes of both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    /// Image planes: 1 for binary codebooks, one per facies otherwise.
    pub planes: usize,
    pub z_dim: usize,
    /// Number of categorical code values K.
    pub categories: usize,
    /// Channels of the last hidden generator block; earlier blocks double it.
    pub generator_base: usize,
    /// Channels of the first critic block; later blocks double it.
    pub critic_base: usize,
    pub head_width: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl NetConfig {
    pub fn new(height: usize, width: usize, planes: usize, categories: usize) -> Self {
        Self {
            height,
            width,
            planes,
            z_dim: 100,
            categories,
            generator_base: 16,
            critic_base: 16,
            head_width: 128,
            dropout: 0.4,
            leaky_slope: 0.2,
        }
    }

    pub fn for_codebook(height: usize, width: usize, codebook: &FaciesCodebook, categories: usize) -> Self {
        Self::new(height, width, codebook.network_planes(), categories)
    }

    /// Number of resolution-doubling blocks and the seed size.
    pub fn blocks(&self) -> Result<(usize, (usize, usize))> {
        let small = self.height.min(self.width);
        if small < 4 || small % 4 != 0 || !(small / 4).is_power_of_two() {
            return Err(GanError::Config(format!(
                "grid {}x{}: the smaller side must be 4 times a power of two",
                self.height, self.width
            )));
        }
        let n = (small / 4).trailing_zeros() as usize;
        let f = 1usize << n;
        if self.height % f != 0 || self.width % f != 0 {
            return Err(GanError::Config(format!(
                "grid {}x{} is not a multiple of the upsampling factor {f}",
                self.height, self.width
            )));
        }
        Ok((n, (self.height / f, self.width / f)))
    }

    pub fn validate(&self) -> Result<()> {
        self.blocks()?;
        let positive = [
            ("planes", self.planes),
            ("z_dim", self.z_dim),
            ("categories", self.categories),
            ("generator_base", self.generator_base),
            ("critic_base", self.critic_base),
            ("head_width", self.head_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GanError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GanError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(GanError::Config(format!("leaky_slope {} not in [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.z_dim + self.categories
    }
}

/// Batch-norm statistics measured on one forward pass, per layer.
#[derive(Clone, Debug)]
pub struct BatchStats<T: Float> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Clone, Debug)]
struct BatchNorm<T: Float> {
    gamma: usize,
    beta: usize,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
}

impl<T: Float> BatchNorm<T> {
    fn new(params: &mut ParamSet<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: params.filled(&format!("{name}.gamma"), &[c], 1.0),
            beta: params.filled(&format!("{name}.beta"), &[c], 0.0),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::ones(&[c]),
        }
    }

    fn train(&self, params: &ParamSet<T>, x: &Var<T>) -> (Var<T>, BatchStats<T>) {
        let shape = x.shape().to_vec();
        let m = shape.iter().product::<usize>() / shape[1];
        let inv_m = T::of(1.0 / m as f64);
        let mean = scale(&channel_sum(x), inv_m);
        let centered = sub(x, &channel_expand(&mean, &shape));
        let var = scale(&channel_sum(&square(&centered)), inv_m);
        let inv_std = div(
            &Var::constant(Tensor::ones(var.shape())),
            &sqrt(&add_scalar(&var, T::of(BN_EPS))),
        );
        let y = bias_add(
            &channel_mul(&centered, &mul(&inv_std, params.var(self.gamma))),
            params.var(self.beta),
        );
        let stats = BatchStats {
            mean: mean.value().clone(),
            var: var.value().clone(),
        };
        (y, stats)
    }

    fn eval(&self, params: &ParamSet<T>, x: &Var<T>) -> Var<T> {
        let inv_std = self.running_var.map(|v| T::one() / (v + T::of(BN_EPS)).sqrt());
        let s = mul_const(params.var(self.gamma), &inv_std);
        let shift = sub(params.var(self.beta), &mul_const(&s, &self.running_mean));
        bias_add(&channel_mul(x, &s), &shift)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics; deterministic.
    Eval,
}

#[derive(Clone, Debug)]
struct UpBlock {
    weight: usize,
    norm: Option<usize>,
    bias: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct GeneratorNet<T: Float> {
    config: NetConfig,
    params: ParamSet<T>,
    norms: Vec<BatchNorm<T>>,
    proj_w: usize,
    proj_b: usize,
    proj_norm: Option<usize>,
    seed_channels: usize,
    seed_hw: (usize, usize),
    blocks: Vec<UpBlock>,
}

pub fn build_generator<T: Float>(config: &NetConfig, seed: u64) -> Result<GeneratorNet<T>> {
    config.validate()?;
    let (n, seed_hw) = config.blocks()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::default();
    let mut norms = Vec::new();
    // channels at each resolution; the last entry is the image planes
    let mut chans: Vec<usize> = (0..n).map(|i| config.generator_base << (n - 1 - i)).collect();
    chans.push(config.planes);
    let seed_channels = chans[0];
    let seed_len = seed_channels * seed_hw.0 * seed_hw.1;
    let proj_w = params.normal("gen.proj.w", &[config.input_dim(), seed_len], INIT_STD, &mut rng);
    let proj_b = params.filled("gen.proj.b", &[seed_len], 0.0);
    let proj_norm = (n > 0).then(|| {
        norms.push(BatchNorm::new(&mut params, "gen.proj.bn", seed_channels));
        norms.len() - 1
    });
    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let (ci, co) = (chans[i], chans[i + 1]);
        let name = format!("gen.up{i}");
        let weight = params.normal(&format!("{name}.w"), &[ci, co, KERNEL, KERNEL], INIT_STD, &mut rng);
        let last = i + 1 == n;
        let norm = (!last).then(|| {
            norms.push(BatchNorm::new(&mut params, &format!("{name}.bn"), co));
            norms.len() - 1
        });
        let bias = last.then(|| params.filled(&format!("{name}.b"), &[co], 0.0));
        blocks.push(UpBlock { weight, norm, bias });
    }
    Ok(GeneratorNet {
        config: config.clone(),
        params,
        norms,
        proj_w,
        proj_b,
        proj_norm,
        seed_channels,
        seed_hw,
        blocks,
    })
}

impl<T: Float> GeneratorNet<T> {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// `input: [n, z_dim + K]` to soft planes `[n, planes, h, w]`.
    ///
    /// In [`Mode::Train`] the batch statistics of every batch-norm layer are
    /// returned so the caller can update the running estimates.
    pub fn forward(&self, input: &Var<T>, mode: Mode) -> (Var<T>, Vec<BatchStats<T>>) {
        let n = input.shape()[0];
        assert_eq!(input.shape()[1], self.config.input_dim(), "generator input width");
        let mut stats = Vec::new();
        let p = &self.params;
        let mut norm = |x: &Var<T>, idx: usize| -> Var<T> {
            let bn = &self.norms[idx];
            match mode {
                Mode::Train => {
                    let (y, s) = bn.train(p, x);
                    stats.push(s);
                    y
                }
                Mode::Eval => bn.eval(p, x),
            }
        };
        let (sh, sw) = self.seed_hw;
        let h = bias_add(&matmul(input, p.var(self.proj_w), false, false), p.var(self.proj_b));
        let mut x = reshape(&h, &[n, self.seed_channels, sh, sw]);
        if let Some(idx) = self.proj_norm {
            x = relu(&norm(&x, idx));
        }
        let (mut ch, mut cw) = (sh, sw);
        for block in &self.blocks {
            (ch, cw) = (ch * 2, cw * 2);
            x = conv2d_backward_data(&x, p.var(block.weight), updown(), (ch, cw));
            if let Some(idx) = block.norm {
                x = relu(&norm(&x, idx));
            }
            if let Some(b) = block.bias {
                x = bias_add(&x, p.var(b));
            }
        }
        (sigmoid(&x), stats)
    }

    /// Number of batch-norm layers.
    pub fn norm_layers(&self) -> usize {
        self.norms.len()
    }

    pub fn running_stats(&self) -> Vec<(Tensor<T>, Tensor<T>)> {
        self.norms
            .iter()
            .map(|b| (b.running_mean.clone(), b.running_var.clone()))
            .collect()
    }

    pub fn set_running_stats(&mut self, stats: Vec<(Tensor<T>, Tensor<T>)>) -> Result<()> {
        if stats.len() != self.norms.len() {
            return Err(GanError::Format(format!(
                "{} batch-norm entries for {} layers",
                stats.len(),
                self.norms.len()
            )));
        }
        for (bn, (m, v)) in self.norms.iter_mut().zip(stats) {
            if m.shape() != bn.running_mean.shape() || v.shape() != bn.running_var.shape() {
                return Err(GanError::Format("batch-norm statistic shape".into()));
            }
            bn.running_mean = m;
            bn.running_var = v;
        }
        Ok(())
    }

    /// Replace running statistics with population estimates over fresh
    /// latent draws, using the final weights.
    pub fn recalibrate(&mut self, batches: usize, batch_size: usize, rng: &mut impl Rng) {
        if self.norms.is_empty() || batches == 0 {
            return;
        }
        let _guard = facies_autodiff::no_grad();
        // pooled mean and mean of squares over all batches
        let mut acc: Vec<(Vec<f64>, Vec<f64>)> = self
            .norms
            .iter()
            .map(|b| (vec![0.0; b.running_mean.numel()], vec![0.0; b.running_mean.numel()]))
            .collect();
        for _ in 0..batches {
            let inputs = random_latents(&self.config, batch_size, None, rng);
            let x = Var::constant(latent_tensor::<T>(&inputs));
            let (_, stats) = self.forward(&x, Mode::Train);
            for ((sum, sq), s) in acc.iter_mut().zip(&stats) {
                for (c, (m, v)) in s.mean.data().iter().zip(s.var.data()).enumerate() {
                    let (m, v) = (m.to_f64().unwrap(), v.to_f64().unwrap());
                    sum[c] += m;
                    sq[c] += v + m * m;
                }
            }
        }
        let k = batches as f64;
        for (bn, (sum, sq)) in self.norms.iter_mut().zip(acc) {
            let mean: Vec<T> = sum.iter().map(|s| T::of(s / k)).collect();
            let var: Vec<T> = sum
                .iter()
                .zip(&sq)
                .map(|(s, q)| T::of((q / k - (s / k).powi(2)).max(0.0)))
                .collect();
            bn.running_mean = Tensor::new(&[mean.len()], mean);
            bn.running_var = Tensor::new(&[var.len()], var);
        }
    }
}

/// Critic scalars `[n]` and classifier log-probabilities `[n, K]`.
#[derive(Clone, Debug)]
pub struct CriticOutput<T: Float> {
    pub critic: Var<T>,
    pub log_probs: Var<T>,
}

impl<T: Float> CriticOutput<T> {
    /// Classifier probabilities, row-major `[n, K]`.
    pub fn probabilities(&self) -> Tensor<T> {
        self.log_probs.value().map(|v| v.exp())
    }
}

#[derive(Clone, Debug)]
struct DownBlock {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Head {
    hidden_w: usize,
    hidden_b: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Clone, Debug)]
pub struct CriticClassifierNet<T: Float> {
    config: NetConfig,
    params: ParamSet<T>,
    blocks: Vec<DownBlock>,
    flat: usize,
    critic_head: Head,
    class_head: Head,
}

pub fn build_critic_classifier<T: Float>(config: &NetConfig, seed: u64) -> Result<CriticClassifierNet<T>> {
    config.validate()?;
    let (n, (sh, sw)) = config.blocks()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::default();
    let mut blocks = Vec::with_capacity(n);
    let mut ci = config.planes;
    for i in 0..n {
        let co = config.critic_base << i;
        let weight = params.normal(&format!("critic.down{i}.w"), &[co, ci, KERNEL, KERNEL], INIT_STD, &mut rng);
        let bias = params.filled(&format!("critic.down{i}.b"), &[co], 0.0);
        blocks.push(DownBlock { weight, bias });
        ci = co;
    }
    let flat = ci * sh * sw;
    let mut head = |name: &str, out: usize| Head {
        hidden_w: params.normal(&format!("{name}.hidden.w"), &[flat, config.head_width], INIT_STD, &mut rng),
        hidden_b: params.filled(&format!("{name}.hidden.b"), &[config.head_width], 0.0),
        out_w: params.normal(&format!("{name}.out.w"), &[config.head_width, out], INIT_STD, &mut rng),
        out_b: params.filled(&format!("{name}.out.b"), &[out], 0.0),
    };
    let critic_head = head("critic.head", 1);
    let class_head = head("classifier.head", config.categories);
    Ok(CriticClassifierNet {
        config: config.clone(),
        params,
        blocks,
        flat,
        critic_head,
        class_head,
    })
}

impl<T: Float> CriticClassifierNet<T> {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn dropout(&self, x: &Var<T>, rng: Option<&mut ChaCha8Rng>) -> Var<T> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = T::of(1.0 / (1.0 - p));
                let mask: Vec<T> = (0..x.value().numel())
                    .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                    .collect();
                mul_const(x, &Tensor::new(x.shape(), mask))
            }
            _ => x.clone(),
        }
    }

    fn head(&self, h: &Head, x: &Var<T>) -> Var<T> {
        let p = &self.params;
        let slope = T::of(self.config.leaky_slope);
        let hidden = leaky_relu(&bias_add(&matmul(x, p.var(h.hidden_w), false, false), p.var(h.hidden_b)), slope);
        bias_add(&matmul(&hidden, p.var(h.out_w), false, false), p.var(h.out_b))
    }

    /// `x: [n, planes, h, w]`. Dropout is applied only when an RNG is given.
    pub fn forward(&self, x: &Var<T>, mut dropout: Option<&mut ChaCha8Rng>) -> CriticOutput<T> {
        let p = &self.params;
        let n = x.shape()[0];
        let slope = T::of(self.config.leaky_slope);
        let mut h = x.clone();
        for block in &self.blocks {
            h = conv2d(&h, p.var(block.weight), updown());
            h = leaky_relu(&bias_add(&h, p.var(block.bias)), slope);
            h = self.dropout(&h, dropout.as_deref_mut());
        }
        let flat = reshape(&h, &[n, self.flat]);
        let critic = reshape(&self.head(&self.critic_head, &flat), &[n]);
        let log_probs = log_softmax(&self.head(&self.class_head, &flat));
        CriticOutput { critic, log_probs }
    }
}

/// Stack latent inputs into a `[n, z_dim + K]` tensor.
pub fn latent_tensor<T: Float>(inputs: &[LatentInput]) -> Tensor<T> {
    let width = inputs.first().map_or(0, |l| l.z().len() + l.categories());
    let mut data = Vec::with_capacity(inputs.len() * width);
    for l in inputs {
        data.extend(l.to_vec().into_iter().map(|v| T::of(v as f64)));
    }
    Tensor::new(&[inputs.len(), width], data)
}

/// Standard-normal `z` with codes either fixed or uniform over `[0, K)`.
pub fn random_latents(config: &NetConfig, count: usize, code: Option<usize>, rng: &mut impl Rng) -> Vec<LatentInput> {
    use rand_distr::StandardNormal;
    (0..count)
        .map(|_| {
            let z: Vec<f32> = (0..config.z_dim).map(|_| rng.sample(StandardNormal)).collect();
            let c = code.unwrap_or_else(|| rng.random_range(0..config.categories));
            LatentInput::new(z, c, config.categories).expect("code within range")
        })
        .collect()
}

/// Split a `[n, planes, h, w]` tensor into per-sample soft planes.
pub fn to_soft_planes<T: Float>(images: &Tensor<T>) -> Vec<SoftPlanes> {
    let s = images.shape();
    let (n, planes, h, w) = (s[0], s[1], s[2], s[3]);
    let per = planes * h * w;
    (0..n)
        .map(|i| {
            let data = images.data()[i * per..(i + 1) * per]
                .iter()
                .map(|v| v.to_f32().unwrap())
                .collect();
            SoftPlanes::new(planes, h, w, data).expect("consistent plane shape")
        })
        .collect()
}

/// Stack soft planes into a `[n, planes, h, w]` tensor.
pub fn planes_tensor<T: Float>(planes: &[SoftPlanes]) -> Tensor<T> {
    let first = &planes[0];
    let mut data = Vec::with_capacity(planes.len() * first.data.len());
    for p in planes {
        data.extend(p.data.iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(&[planes.len(), first.planes, first.height, first.width], data)
}
