//! Adversarial, gradient-penalty and mutual-information losses.

use facies_autodiff::ops::*;
use facies_autodiff::{grad, Float, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};
use crate::nets::{CriticClassifierNet, CriticOutput};

/// Probability floor for the cross-entropy terms.
pub const INFO_EPS: f64 = 1e-12;
const NORM_EPS: f64 = 1e-16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_info: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            lambda_info: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp >= 0.0 && self.lambda_info >= 0.0) {
            return Err(GanError::Config(format!(
                "loss weights must be non-negative, got gp {} info {}",
                self.lambda_gp, self.lambda_info
            )));
        }
        Ok(())
    }
}

/// Where the gradient penalty is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpPoints {
    /// Random points on segments between real and fake samples.
    #[default]
    Interpolates,
    /// The real samples themselves.
    Real,
}

/// Scalar loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub gp: f64,
    pub info: f64,
    pub w_estimate: f64,
}

impl LossReport {
    /// Name of the first non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("gradient penalty", self.gp),
            ("info loss", self.info),
            ("wasserstein estimate", self.w_estimate),
            ("critic loss", self.critic_loss),
            ("generator loss", self.gen_loss),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Anything that maps a batch of images to critic values and class
/// log-probabilities.
pub trait Critic<T: Float> {
    fn evaluate(&mut self, x: &Var<T>) -> CriticOutput<T>;
}

/// A critic network with an optional dropout stream.
pub struct CriticSession<'a, T: Float> {
    pub net: &'a CriticClassifierNet<T>,
    pub dropout: Option<&'a mut ChaCha8Rng>,
}

impl<T: Float> Critic<T> for CriticSession<'_, T> {
    fn evaluate(&mut self, x: &Var<T>) -> CriticOutput<T> {
        self.net.forward(x, self.dropout.as_deref_mut())
    }
}

impl<T: Float, F: FnMut(&Var<T>) -> CriticOutput<T>> Critic<T> for F {
    fn evaluate(&mut self, x: &Var<T>) -> CriticOutput<T> {
        self(x)
    }
}

/// Original minimax value `mean log D(real) + mean log(1 - D(fake))`.
///
/// Returns `(V, mean log(1 - D(fake)))`: the discriminator maximizes `V`, the
/// generator minimizes the second term, which is the part of `V` it controls.
pub fn gan_loss_reference<T: Float>(d_real: &Var<T>, d_fake: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    for (name, v) in [("real", d_real), ("fake", d_fake)] {
        if v.value().numel() == 0 {
            return Err(GanError::Argument(format!("empty {name} batch")));
        }
        if let Some(p) = v.value().data().iter().find(|&&p| !(p > T::zero() && p < T::one())) {
            return Err(GanError::Domain(format!("{name} probability {p:?} outside (0, 1)")));
        }
    }
    let real_term = mean_all(&log(d_real));
    let fake_term = mean_all(&log(&add_scalar(&neg(d_fake), T::one())));
    Ok((add(&real_term, &fake_term), fake_term))
}

/// Dual Wasserstein estimate `mean(real) - mean(fake)`.
pub fn wasserstein_estimate<T: Float>(real: &Var<T>, fake: &Var<T>) -> Result<Var<T>> {
    if real.value().numel() == 0 || fake.value().numel() == 0 {
        return Err(GanError::Argument("empty critic batch".into()));
    }
    Ok(sub(&mean_all(real), &mean_all(fake)))
}

/// `u * real + (1 - u) * fake` with one `u ~ U(0, 1)` per sample.
pub fn interpolate<T: Float>(real: &Tensor<T>, fake: &Tensor<T>, rng: &mut impl Rng) -> Tensor<T> {
    assert_eq!(real.shape(), fake.shape(), "interpolation shapes");
    let n = real.batch();
    let per = real.numel() / n.max(1);
    let mut out = Vec::with_capacity(real.numel());
    for i in 0..n {
        let u = T::of(rng.random::<f64>());
        let r = &real.data()[i * per..(i + 1) * per];
        let f = &fake.data()[i * per..(i + 1) * per];
        out.extend(r.iter().zip(f).map(|(&a, &b)| u * a + (T::one() - u) * b));
    }
    Tensor::new(real.shape(), out)
}

/// `lambda * mean_i (||grad_x f(x_i)||_2 - 1)^2` at the given points.
///
/// With `create_graph` the result can be differentiated with respect to the
/// critic parameters.
pub fn gradient_penalty<T: Float>(
    critic: &mut impl Critic<T>,
    points: &Tensor<T>,
    lambda: f64,
    create_graph: bool,
) -> Result<Var<T>> {
    if points.numel() == 0 {
        return Err(GanError::Argument("empty penalty batch".into()));
    }
    let x = Var::param(points.clone());
    let out = critic.evaluate(&x);
    let g = grad(&sum_all(&out.critic), &[&x], create_graph).remove(0);
    if !g.value().all_finite() {
        return Err(GanError::NonFinite {
            component: "critic input gradient",
            step: 0,
        });
    }
    let norm = sqrt(&add_scalar(&sum_rows(&square(&g)), T::of(NORM_EPS)));
    let dev = add_scalar(&norm, -T::one());
    Ok(scale(&mean_all(&square(&dev)), T::of(lambda)))
}

/// Cross-entropy of the classifier on the true codes.
#[derive(Clone, Debug)]
pub struct InfoTerm<T: Float> {
    pub loss: Var<T>,
    /// Rows whose true-class probability fell below the floor.
    pub clamped: usize,
}

/// `-mean log q(c_true | x)` from row log-probabilities `[n, K]`.
pub fn info_loss<T: Float>(log_probs: &Var<T>, codes: &[usize]) -> Result<InfoTerm<T>> {
    let codes: Vec<Option<usize>> = codes.iter().copied().map(Some).collect();
    partial_info_loss(log_probs, &codes)
}

/// [`info_loss`] over the rows that carry a code; zero when none do.
pub fn partial_info_loss<T: Float>(log_probs: &Var<T>, codes: &[Option<usize>]) -> Result<InfoTerm<T>> {
    let s = log_probs.shape();
    if s.len() != 2 || s[0] != codes.len() || codes.is_empty() {
        return Err(GanError::Argument(format!(
            "{} codes for class scores of shape {s:?}",
            codes.len()
        )));
    }
    let k = s[1];
    if let Some(c) = codes.iter().flatten().find(|&&c| c >= k) {
        return Err(GanError::Argument(format!("code {c} outside [0, {k})")));
    }
    let labelled = codes.iter().filter(|c| c.is_some()).count();
    if labelled == 0 {
        return Ok(InfoTerm {
            loss: Var::constant(Tensor::scalar(T::zero())),
            clamped: 0,
        });
    }
    let floor = T::of(INFO_EPS.ln());
    // rows below the floor contribute the floor itself, without gradient
    let lp = log_probs.value().data();
    let mut kept = codes.to_vec();
    let mut clamped = 0;
    for (i, c) in kept.iter_mut().enumerate() {
        if c.is_some_and(|c| lp[i * k + c] < floor) {
            *c = None;
            clamped += 1;
        }
    }
    let mut total = sum_all(&pick_cols(log_probs, &kept));
    if clamped > 0 {
        total = add_scalar(&total, floor * T::of(clamped as f64));
    }
    let loss = scale(&total, T::of(-1.0 / labelled as f64));
    Ok(InfoTerm { loss, clamped })
}

/// Both objectives and their components for one pair of batches.
#[derive(Clone, Debug)]
pub struct LossTerms<T: Float> {
    pub critic_loss: Var<T>,
    pub generator_loss: Var<T>,
    pub report: LossReport,
    /// Classifier cross-entropy on labelled real images (0 without labels).
    pub supervised: f64,
    pub clamped: usize,
}

/// Inputs to [`combined_losses`].
pub struct LossBatch<'a, T: Float> {
    pub real: &'a Var<T>,
    pub fake: &'a Var<T>,
    /// Codes used to generate `fake`.
    pub codes: &'a [usize],
    /// Labels of `real`, if the classifier also learns from real images.
    /// Unlabelled members are `None`.
    pub real_labels: Option<&'a [Option<usize>]>,
    /// Points where the gradient penalty is evaluated.
    pub gp_points: &'a Tensor<T>,
}

/// Critic loss `-W + GP + lambda_info * info` and generator loss
/// `-mean critic(fake) + lambda_info * info`.
///
/// With labels, the classifier cross-entropy on real images joins the
/// information term of the critic loss. `penalty_graph` keeps the penalty
/// differentiable; it is only needed when stepping the critic.
pub fn combined_losses<T: Float>(
    critic: &mut impl Critic<T>,
    batch: &LossBatch<'_, T>,
    weights: &LossWeights,
    penalty_graph: bool,
) -> Result<LossTerms<T>> {
    weights.validate()?;
    let real = critic.evaluate(batch.real);
    let fake = critic.evaluate(batch.fake);
    let w = wasserstein_estimate(&real.critic, &fake.critic)?;
    let gp = gradient_penalty(critic, batch.gp_points, weights.lambda_gp, penalty_graph)?;
    let info = info_loss(&fake.log_probs, batch.codes)?;
    let li = T::of(weights.lambda_info);
    let mut class_term = info.loss.clone();
    let mut clamped = info.clamped;
    let mut supervised = 0.0;
    if let Some(labels) = batch.real_labels {
        let sup = partial_info_loss(&real.log_probs, labels)?;
        supervised = sup.loss.item().to_f64().unwrap();
        clamped += sup.clamped;
        class_term = add(&class_term, &sup.loss);
    }
    let critic_loss = add(&add(&neg(&w), &gp), &scale(&class_term, li));
    let generator_loss = add(&neg(&mean_all(&fake.critic)), &scale(&info.loss, li));
    let f = |v: &Var<T>| v.item().to_f64().unwrap();
    let report = LossReport {
        critic_loss: f(&critic_loss),
        gen_loss: f(&generator_loss),
        gp: f(&gp),
        info: f(&info.loss),
        w_estimate: f(&w),
    };
    Ok(LossTerms {
        critic_loss,
        generator_loss,
        report,
        supervised,
        clamped,
    })
}
