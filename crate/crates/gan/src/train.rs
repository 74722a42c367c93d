//! Adversarial training loop, sampling and classification.

use facies_autodiff::{grad, no_grad, Tensor, Var};
use facies_core::obm::derive_seed;
use facies_core::stats::ConfusionMatrix;
use facies_core::{decode_generator_output, encode_planes, LabeledEnsemble};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointBundle;
use crate::error::{GanError, Result};
use crate::losses::{combined_losses, interpolate, CriticSession, GpPoints, LossBatch, LossReport, LossWeights};
use crate::nets::*;
use crate::optim::{Adam, AdamConfig};

/// RNG stream offsets; the low 32 bits carry the epoch.
const STREAM_RECALIBRATE: u64 = 1 << 32;
const STREAM_LABELLED: u64 = 2 << 32;
const RECALIBRATION_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Critic steps per generator step.
    pub n_critic: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_gp: f64,
    pub lambda_info: f64,
    pub gp_on: GpPoints,
    /// Number of code values K; defaults to the number of dataset labels.
    pub categories: Option<usize>,
    pub z_dim: usize,
    pub generator_base: usize,
    pub critic_base: usize,
    pub head_width: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Train the classifier on labelled real images too.
    pub supervised: bool,
    /// Share of the dataset whose labels are used in supervised mode.
    pub labeled_fraction: f64,
    pub seed: u64,
    /// Epochs between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Batches used to estimate batch-norm statistics for inference.
    pub recalibration_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            n_critic: 5,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            lambda_gp: 10.0,
            lambda_info: 1.0,
            gp_on: GpPoints::Interpolates,
            categories: None,
            z_dim: 100,
            generator_base: 16,
            critic_base: 16,
            head_width: 128,
            dropout: 0.4,
            leaky_slope: 0.2,
            supervised: true,
            labeled_fraction: 1.0,
            seed: 0,
            checkpoint_every: 50,
            recalibration_batches: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let at_least_one = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_critic", self.n_critic),
        ];
        for (name, v) in at_least_one {
            if v == 0 {
                return Err(GanError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GanError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(GanError::Config(format!("{name} {b} not in [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(GanError::Config(format!(
                "labeled_fraction {} not in [0, 1]",
                self.labeled_fraction
            )));
        }
        if self.categories == Some(0) {
            return Err(GanError::Config("categories must be at least 1".into()));
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_gp: self.lambda_gp,
            lambda_info: self.lambda_info,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    /// Network shapes for a dataset.
    pub fn net_config(&self, dataset: &LabeledEnsemble) -> Result<NetConfig> {
        let (h, w) = dataset
            .dims()
            .ok_or_else(|| GanError::Argument("empty training set".into()))?;
        let categories = self.categories.unwrap_or(if dataset.labels().is_some() {
            dataset.categories()
        } else {
            1
        });
        let mut net = NetConfig::for_codebook(h, w, dataset.codebook(), categories);
        net.z_dim = self.z_dim;
        net.generator_base = self.generator_base;
        net.critic_base = self.critic_base;
        net.head_width = self.head_width;
        net.dropout = self.dropout;
        net.leaky_slope = self.leaky_slope;
        net.validate()?;
        Ok(net)
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub epoch: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub const HEADER: &'static str = "step,epoch,critic_loss,gen_loss,gp,info,w_estimate";

    pub fn csv_row(row: &LossRow) -> String {
        let r = &row.report;
        format!(
            "{},{},{},{},{},{},{}",
            row.step, row.epoch, r.critic_loss, r.gen_loss, r.gp, r.info, r.w_estimate
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::csv_row(row));
            out.push('\n');
        }
        out
    }

    /// Mean Wasserstein estimate of each epoch, in epoch order.
    pub fn epoch_w_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some((e, s, n)) if *e == row.epoch => {
                    *s += row.report.w_estimate;
                    *n += 1;
                }
                _ => out.push((row.epoch, row.report.w_estimate, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}

fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training state over one dataset.
pub struct Trainer<'a> {
    bundle: CheckpointBundle,
    dataset: &'a LabeledEnsemble,
    images: Tensor<f32>,
    labels: Option<Vec<Option<usize>>>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a LabeledEnsemble, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = config.net_config(dataset)?;
        let generator = build_generator(&net, derive_seed(config.seed, 0))?;
        let critic = build_critic_classifier(&net, derive_seed(config.seed, 1))?;
        let bundle = CheckpointBundle {
            config: config.clone(),
            gen_opt: Adam::new(config.adam(), generator.params()),
            critic_opt: Adam::new(config.adam(), critic.params()),
            generator,
            critic,
            codebook: dataset.codebook().clone(),
            epoch: 0,
            step: 0,
        };
        Self::resume(bundle, dataset)
    }

    /// Continue from a checkpoint taken on the same dataset.
    pub fn resume(bundle: CheckpointBundle, dataset: &'a LabeledEnsemble) -> Result<Self> {
        let config = &bundle.config;
        config.validate()?;
        if dataset.is_empty() {
            return Err(GanError::Argument("empty training set".into()));
        }
        if dataset.codebook() != &bundle.codebook {
            return Err(GanError::Argument("dataset codebook differs from the checkpoint".into()));
        }
        let net = bundle.generator.config();
        if dataset.dims() != Some((net.height, net.width)) {
            return Err(GanError::Argument(format!(
                "dataset grids {:?} do not match the {}x{} networks",
                dataset.dims(),
                net.height,
                net.width
            )));
        }
        let k = net.categories;
        let wants_labels = config.supervised && config.lambda_info > 0.0 && k > 1;
        let labels = match (wants_labels, dataset.labels()) {
            (false, _) => None,
            (true, None) => {
                return Err(GanError::Argument(
                    "supervised training with several codes needs a labelled dataset".into(),
                ))
            }
            (true, Some(l)) => {
                if let Some(&bad) = l.iter().find(|&&v| v as usize >= k) {
                    return Err(GanError::Argument(format!("label {bad} outside [0, {k})")));
                }
                let mut order: Vec<usize> = (0..l.len()).collect();
                order.shuffle(&mut epoch_rng(config.seed, STREAM_LABELLED));
                let keep = (config.labeled_fraction * l.len() as f64).round() as usize;
                let mut masked = vec![None; l.len()];
                for &i in &order[..keep] {
                    masked[i] = Some(l[i] as usize);
                }
                Some(masked)
            }
        };
        let planes = dataset
            .grids()
            .iter()
            .map(|g| encode_planes(g, dataset.codebook()))
            .collect::<facies_core::Result<Vec<_>>>()?;
        Ok(Self {
            images: planes_tensor(&planes),
            labels,
            bundle,
            dataset,
        })
    }

    pub fn epoch(&self) -> usize {
        self.bundle.epoch
    }

    pub fn bundle(&self) -> &CheckpointBundle {
        &self.bundle
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.bundle.config.batch_size)
    }

    /// Run one pass over the shuffled dataset, appending to `log`.
    pub fn run_epoch(&mut self, log: &mut LossLog) -> Result<()> {
        let cfg = self.bundle.config.clone();
        let weights = LossWeights {
            lambda_info: if self.bundle.generator.config().categories > 1 {
                cfg.lambda_info
            } else {
                0.0
            },
            ..cfg.weights()
        };
        let epoch = self.bundle.epoch;
        let mut rng = epoch_rng(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let real = Var::constant(gather(&self.images, chunk));
            let labels: Option<Vec<Option<usize>>> = self.labels.as_ref().map(|l| chunk.iter().map(|&i| l[i]).collect());
            for _ in 0..cfg.n_critic {
                let report = self.critic_step(&real, labels.as_deref(), &weights, &mut rng)?;
                self.record(log, epoch, report)?;
            }
            let report = self.generator_step(&real, labels.as_deref(), &weights, &mut rng)?;
            self.record(log, epoch, report)?;
        }
        self.bundle.epoch += 1;
        Ok(())
    }

    fn record(&mut self, log: &mut LossLog, epoch: usize, report: LossReport) -> Result<()> {
        if let Some(component) = report.non_finite() {
            return Err(GanError::NonFinite {
                component,
                step: self.bundle.step as usize,
            });
        }
        log.rows.push(LossRow {
            step: self.bundle.step,
            epoch,
            report,
        });
        self.bundle.step += 1;
        Ok(())
    }

    fn fakes(&self, n: usize, rng: &mut ChaCha8Rng) -> (Var<f32>, Vec<usize>) {
        let latents = random_latents(self.bundle.generator.config(), n, None, rng);
        let codes = latents.iter().map(|l| l.code()).collect();
        let (fake, _) = self
            .bundle
            .generator
            .forward(&Var::constant(latent_tensor(&latents)), Mode::Train);
        (fake, codes)
    }

    fn penalty_points(&self, real: &Tensor<f32>, fake: &Tensor<f32>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        match self.bundle.config.gp_on {
            GpPoints::Interpolates => interpolate(real, fake, rng),
            GpPoints::Real => real.clone(),
        }
    }

    fn critic_step(
        &mut self,
        real: &Var<f32>,
        labels: Option<&[Option<usize>]>,
        weights: &LossWeights,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossReport> {
        let n = real.shape()[0];
        let (fake, codes) = {
            let _guard = no_grad();
            self.fakes(n, rng)
        };
        let points = self.penalty_points(real.value(), fake.value(), rng);
        let b = &mut self.bundle;
        let terms = {
            let mut critic = CriticSession {
                net: &b.critic,
                dropout: Some(&mut *rng),
            };
            let batch = LossBatch {
                real,
                fake: &fake,
                codes: &codes,
                real_labels: labels,
                gp_points: &points,
            };
            combined_losses(&mut critic, &batch, weights, true).map_err(|e| at_step(e, b.step))?
        };
        let grads = grad(&terms.critic_loss, &b.critic.params().vars(), false);
        check_grads(&grads, "critic gradient", b.step)?;
        b.critic_opt.update(b.critic.params_mut(), &grads);
        Ok(terms.report)
    }

    fn generator_step(
        &mut self,
        real: &Var<f32>,
        labels: Option<&[Option<usize>]>,
        weights: &LossWeights,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossReport> {
        let n = real.shape()[0];
        let (fake, codes) = self.fakes(n, rng);
        let points = self.penalty_points(real.value(), fake.value(), rng);
        let b = &mut self.bundle;
        let terms = {
            let mut critic = CriticSession {
                net: &b.critic,
                dropout: Some(&mut *rng),
            };
            let batch = LossBatch {
                real,
                fake: &fake,
                codes: &codes,
                real_labels: labels,
                gp_points: &points,
            };
            combined_losses(&mut critic, &batch, weights, false).map_err(|e| at_step(e, b.step))?
        };
        let grads = grad(&terms.generator_loss, &b.generator.params().vars(), false);
        check_grads(&grads, "generator gradient", b.step)?;
        b.gen_opt.update(b.generator.params_mut(), &grads);
        Ok(terms.report)
    }

    /// The current state with inference batch-norm statistics filled in.
    pub fn snapshot(&self) -> CheckpointBundle {
        let mut bundle = self.bundle.clone();
        let cfg = &bundle.config;
        let mut rng = epoch_rng(cfg.seed, STREAM_RECALIBRATE + bundle.epoch as u64);
        let batches = cfg.recalibration_batches;
        bundle.generator.recalibrate(batches, RECALIBRATION_BATCH, &mut rng);
        bundle
    }
}

fn at_step(e: GanError, step: u64) -> GanError {
    match e {
        GanError::NonFinite { component, .. } => GanError::NonFinite {
            component,
            step: step as usize,
        },
        other => other,
    }
}

fn check_grads(grads: &[Var<f32>], component: &'static str, step: u64) -> Result<()> {
    if grads.iter().all(|g| g.value().all_finite()) {
        Ok(())
    } else {
        Err(GanError::NonFinite {
            component,
            step: step as usize,
        })
    }
}

fn gather(images: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let s = images.shape();
    let per: usize = s[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&images.data()[i * per..(i + 1) * per]);
    }
    let mut shape = s.to_vec();
    shape[0] = idx.len();
    Tensor::new(&shape, data)
}

/// Train from scratch, calling `on_checkpoint` at the configured cadence and
/// once at completion.
pub fn train_with(
    dataset: &LabeledEnsemble,
    config: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(&CheckpointBundle, &LossLog) -> Result<()>,
) -> Result<(CheckpointBundle, LossLog)> {
    let trainer = Trainer::new(dataset, config)?;
    continue_training(trainer, on_checkpoint)
}

/// Run a trainer up to its configured epoch count.
pub fn continue_training(
    mut trainer: Trainer<'_>,
    on_checkpoint: &mut dyn FnMut(&CheckpointBundle, &LossLog) -> Result<()>,
) -> Result<(CheckpointBundle, LossLog)> {
    let mut log = LossLog::default();
    let (epochs, every) = (trainer.bundle.config.epochs, trainer.bundle.config.checkpoint_every);
    while trainer.epoch() < epochs {
        trainer.run_epoch(&mut log)?;
        let e = trainer.epoch();
        if every > 0 && e % every == 0 && e < epochs {
            on_checkpoint(&trainer.snapshot(), &log)?;
        }
    }
    let bundle = trainer.snapshot();
    on_checkpoint(&bundle, &log)?;
    Ok((bundle, log))
}

pub fn train(dataset: &LabeledEnsemble, config: &TrainConfig) -> Result<(CheckpointBundle, LossLog)> {
    train_with(dataset, config, &mut |_, _| Ok(()))
}

const SAMPLE_BATCH: usize = 64;

/// Draw `count` grids from the generator in inference mode.
///
/// With `code` every sample uses that code; otherwise codes are uniform.
/// Labels record the code of each sample.
pub fn sample(bundle: &CheckpointBundle, count: usize, code: Option<usize>, seed: u64) -> Result<LabeledEnsemble> {
    let net = bundle.generator.config();
    if count == 0 {
        return Err(GanError::Argument("sample count must be at least 1".into()));
    }
    if let Some(c) = code {
        if c >= net.categories {
            return Err(GanError::Argument(format!("code {c} outside [0, {})", net.categories)));
        }
    }
    let _guard = no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grids = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut left = count;
    while left > 0 {
        let n = left.min(SAMPLE_BATCH);
        let latents = random_latents(net, n, code, &mut rng);
        let (out, _) = bundle
            .generator
            .forward(&Var::constant(latent_tensor(&latents)), Mode::Eval);
        for (soft, l) in to_soft_planes(out.value()).iter().zip(&latents) {
            grids.push(decode_generator_output(soft, &bundle.codebook)?);
            labels.push(l.code() as u8);
        }
        left -= n;
    }
    Ok(LabeledEnsemble::new(grids, Some(labels), bundle.codebook.clone())?)
}

/// Most probable code for each member according to the classifier head.
pub fn classify(bundle: &CheckpointBundle, ensemble: &LabeledEnsemble) -> Result<Vec<usize>> {
    if ensemble.codebook() != &bundle.codebook {
        return Err(GanError::Argument("ensemble codebook differs from the bundle".into()));
    }
    let _guard = no_grad();
    let mut out = Vec::with_capacity(ensemble.len());
    for chunk in ensemble.grids().chunks(SAMPLE_BATCH) {
        let planes = chunk
            .iter()
            .map(|g| encode_planes(g, &bundle.codebook))
            .collect::<facies_core::Result<Vec<_>>>()?;
        let x = Var::constant(planes_tensor::<f32>(&planes));
        let res = bundle.critic.forward(&x, None);
        let k = res.log_probs.shape()[1];
        for row in res.log_probs.value().data().chunks(k) {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Confusion matrix of the classifier against the ensemble labels.
pub fn classify_accuracy(bundle: &CheckpointBundle, ensemble: &LabeledEnsemble) -> Result<ConfusionMatrix> {
    let truth: Vec<usize> = ensemble
        .labels()
        .ok_or_else(|| GanError::Argument("classification needs a labelled ensemble".into()))?
        .iter()
        .map(|&l| l as usize)
        .collect();
    let k = bundle.generator.config().categories;
    if let Some(&bad) = truth.iter().find(|&&t| t >= k) {
        return Err(GanError::Config(format!("label {bad} but the classifier has {k} codes")));
    }
    let predicted = classify(bundle, ensemble)?;
    Ok(ConfusionMatrix::from_predictions(&truth, &predicted, k)?)
}
