//! Well conditioning by latent-space search.
//!
//! For a trained generator `G` and critic `f`, the latent `z` is moved to
//! minimize `perceptual + lambda_ctx * contextual`, where the perceptual term
//! is `-f(G(z, c))` and the contextual term is the squared mismatch between
//! the soft output and the observed facies at the wells. The default update
//! is normalized-gradient momentum:
//!
//! ```text
//! v_t = beta * v_{t-1} + r * g_t / |g_t|
//! z_t = z_{t-1} - v_t
//! ```

use facies_autodiff::ops::*;
use facies_autodiff::{grad, Float, Tensor, Var};
use facies_core::obm::derive_seed;
use facies_core::stats::{etype_all, EtypeMap};
use facies_core::{FaciesCodebook, FaciesGrid, LabeledEnsemble, WellSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointBundle;
use crate::error::{GanError, Result};
use crate::nets::{to_soft_planes, CriticClassifierNet, Mode};

/// Which code value(s) the search uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CodeModeRepr", into = "CodeModeRepr")]
pub enum CodeMode {
    Fixed(usize),
    /// Search each code in turn and keep the lowest final loss.
    #[default]
    Free,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CodeModeRepr {
    Index(usize),
    Name(String),
}

impl TryFrom<CodeModeRepr> for CodeMode {
    type Error = String;

    fn try_from(r: CodeModeRepr) -> std::result::Result<Self, String> {
        match r {
            CodeModeRepr::Index(k) => Ok(CodeMode::Fixed(k)),
            CodeModeRepr::Name(s) if s == "free" => Ok(CodeMode::Free),
            CodeModeRepr::Name(s) => Err(format!("code must be \"free\" or a code index, got {s:?}")),
        }
    }
}

impl From<CodeMode> for CodeModeRepr {
    fn from(m: CodeMode) -> Self {
        match m {
            CodeMode::Fixed(k) => CodeModeRepr::Index(k),
            CodeMode::Free => CodeModeRepr::Name("free".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentOptimizer {
    /// Normalized-gradient momentum.
    #[default]
    Normalized,
    /// Adam on `z` with learning rate `r` and moments (0.9, 0.999).
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualForm {
    /// `-f(x)`.
    #[default]
    Critic,
    /// `log(1 - sigmoid(f(x)))`.
    LogSigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditioningConfig {
    /// Step size `r`.
    #[serde(alias = "r")]
    pub learning_rate: f64,
    /// Momentum `beta`.
    #[serde(alias = "beta")]
    pub momentum: f64,
    pub lambda_ctx: f64,
    pub max_iterations: usize,
    /// Stop once the contextual loss falls below this.
    pub stop_threshold: f64,
    pub code: CodeMode,
    pub optimizer: LatentOptimizer,
    pub perceptual: PerceptualForm,
    /// Share of failed runs a conditional ensemble tolerates.
    pub max_failure_fraction: f64,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            momentum: 0.999,
            lambda_ctx: 1000.0,
            max_iterations: 1500,
            stop_threshold: 1e-3,
            code: CodeMode::Free,
            optimizer: LatentOptimizer::Normalized,
            perceptual: PerceptualForm::Critic,
            max_failure_fraction: 0.1,
        }
    }
}

impl ConditioningConfig {
    /// Larger step size quoted alongside the update rule.
    pub const ALTERNATE_LEARNING_RATE: f64 = 0.006;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GanError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum (beta) {} not in [0, 1)", self.momentum));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.lambda_ctx >= 0.0) {
            return bad(format!("lambda_ctx {} must be non-negative", self.lambda_ctx));
        }
        if !(self.stop_threshold > 0.0) {
            return bad(format!("stop_threshold {} must be positive", self.stop_threshold));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return bad(format!(
                "max_failure_fraction {} not in [0, 1]",
                self.max_failure_fraction
            ));
        }
        Ok(())
    }
}

/// One normalized-gradient momentum update.
///
/// Returns `None` for an all-zero gradient, whose direction is undefined; the
/// caller keeps `z` and `v` unchanged.
pub fn normalized_gd_step(z: &[f64], v: &[f64], gradient: &[f64], r: f64, beta: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    assert!(z.len() == v.len() && z.len() == gradient.len(), "step vector lengths");
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let v_next: Vec<f64> = v
        .iter()
        .zip(gradient)
        .map(|(&v, &g)| beta * v + r * (g / norm))
        .collect();
    let z_next = z.iter().zip(&v_next).map(|(&z, &v)| z - v).collect();
    Some((z_next, v_next))
}

#[derive(Clone, Debug)]
struct LatentAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl LatentAdam {
    fn step(&mut self, z: &mut [f64], g: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..z.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            z[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Target planes and a pixel mask for a set of wells.
struct WellTargets<T: Float> {
    target: Tensor<T>,
    mask: Tensor<T>,
    count: usize,
}

fn well_targets<T: Float>(wells: &WellSet, codebook: &FaciesCodebook, planes: usize, hw: (usize, usize)) -> Result<WellTargets<T>> {
    if wells.dims() != hw {
        return Err(GanError::Argument(format!(
            "wells bound to a {:?} grid, generator makes {hw:?}",
            wells.dims()
        )));
    }
    let (h, w) = hw;
    let mut target = vec![T::zero(); planes * h * w];
    let mut mask = vec![T::zero(); planes * h * w];
    for o in wells.observations() {
        if o.row >= h || o.col >= w {
            return Err(GanError::Argument(format!("well ({}, {}) outside the grid", o.row, o.col)));
        }
        let idx = codebook.check(o.facies)?;
        let px = o.row * w + o.col;
        if planes == 1 {
            mask[px] = T::one();
            target[px] = if idx == 1 { T::one() } else { T::zero() };
        } else {
            for p in 0..planes {
                mask[p * h * w + px] = T::one();
            }
            target[idx * h * w + px] = T::one();
        }
    }
    Ok(WellTargets {
        target: Tensor::new(&[planes, h, w], target),
        mask: Tensor::new(&[planes, h, w], mask),
        count: wells.len(),
    })
}

fn tile<T: Float>(t: &Tensor<T>, n: usize) -> Tensor<T> {
    let mut shape = vec![n];
    shape.extend_from_slice(t.shape());
    let mut data = Vec::with_capacity(n * t.numel());
    for _ in 0..n {
        data.extend_from_slice(t.data());
    }
    Tensor::new(&shape, data)
}

fn contextual_with<T: Float>(soft: &Var<T>, t: &WellTargets<T>) -> Var<T> {
    let n = soft.shape()[0];
    if t.count == 0 {
        return Var::constant(Tensor::zeros(&[n]));
    }
    let diff = sub(soft, &Var::constant(tile(&t.target, n)));
    let masked = mul_const(&square(&diff), &tile(&t.mask, n));
    scale(&sum_rows(&masked), T::of(1.0 / t.count as f64))
}

/// Mean over wells of the squared error between the soft planes and the
/// one-hot observed facies; one value per sample of `soft: [n, planes, h, w]`.
pub fn contextual_loss<T: Float>(soft: &Var<T>, wells: &WellSet, codebook: &FaciesCodebook) -> Result<Var<T>> {
    let s = soft.shape();
    if s.len() != 4 {
        return Err(GanError::Argument(format!("soft planes of shape {s:?}")));
    }
    let t = well_targets(wells, codebook, s[1], (s[2], s[3]))?;
    Ok(contextual_with(soft, &t))
}

/// Realism penalty of each sample; lower is more realistic.
pub fn perceptual_loss<T: Float>(critic: &CriticClassifierNet<T>, soft: &Var<T>, form: PerceptualForm) -> Var<T> {
    let f = critic.forward(soft, None).critic;
    match form {
        PerceptualForm::Critic => neg(&f),
        PerceptualForm::LogSigmoid => log_sigmoid(&neg(&f)),
    }
}

/// `log(sigmoid(y))` without underflow: the first column of
/// `log_softmax([y, 0])`.
fn log_sigmoid<T: Float>(y: &Var<T>) -> Var<T> {
    let shape = y.shape().to_vec();
    let n = shape.iter().product();
    let col = reshape(y, &[n, 1]);
    let zeros = Var::constant(Tensor::zeros(&[n, 1]));
    reshape(&slice_cols(&log_softmax(&concat_cols(&col, &zeros)), 0, 1), &shape)
}

/// Per-iteration record of one conditioning run.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTrace {
    pub total: Vec<f64>,
    pub perceptual: Vec<f64>,
    pub contextual: Vec<f64>,
    pub match_fraction: Vec<f64>,
    pub code: usize,
    pub final_z: Vec<f32>,
    pub final_grid: FaciesGrid,
    /// Contextual loss fell below the threshold.
    pub converged: bool,
    /// Iterations skipped because the gradient vanished.
    pub stalls: usize,
}

impl ConditioningTrace {
    pub fn iterations(&self) -> usize {
        self.total.len()
    }

    pub fn final_match(&self) -> f64 {
        self.match_fraction.last().copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,total,perceptual,contextual,match_fraction\n");
        for i in 0..self.total.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                i, self.total[i], self.perceptual[i], self.contextual[i], self.match_fraction[i]
            ));
        }
        s
    }
}

struct Run {
    z: Vec<f64>,
    v: Vec<f64>,
    adam: LatentAdam,
    code: usize,
    trace: ConditioningTrace,
    done: bool,
    fault: Option<String>,
}

/// Hardened facies at well pixels, following the generator decoding rule.
fn well_matches(soft: &[f32], planes: usize, hw: usize, wells: &WellSet, codebook: &FaciesCodebook, width: usize) -> f64 {
    if wells.is_empty() {
        return 1.0;
    }
    let entries = codebook.entries();
    let hits = wells
        .observations()
        .iter()
        .filter(|o| {
            let px = o.row * width + o.col;
            let code = if planes == 1 {
                if soft[px] > 0.5 {
                    entries[1].code
                } else {
                    entries[0].code
                }
            } else {
                let mut best = 0;
                for p in 1..planes {
                    if soft[p * hw + px] > soft[best * hw + px] {
                        best = p;
                    }
                }
                entries[best].code
            };
            code == o.facies
        })
        .count();
    hits as f64 / wells.len() as f64
}

fn initial_z(z_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..z_dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Run independent searches `(seed, code)` together as one batch.
fn search(bundle: &CheckpointBundle, wells: &WellSet, config: &ConditioningConfig, jobs: &[(u64, usize)]) -> Result<Vec<Run>> {
    let net = bundle.generator.config();
    let (planes, h, w, zd, k) = (net.planes, net.height, net.width, net.z_dim, net.categories);
    let targets = well_targets::<f32>(wells, &bundle.codebook, planes, (h, w))?;
    let blank = FaciesGrid::filled(h, w, bundle.codebook.entries()[0].code)?;
    let mut runs: Vec<Run> = jobs
        .iter()
        .map(|&(seed, code)| Run {
            z: initial_z(zd, seed),
            v: vec![0.0; zd],
            adam: LatentAdam {
                m: vec![0.0; zd],
                v: vec![0.0; zd],
                t: 0,
            },
            code,
            trace: ConditioningTrace {
                total: Vec::new(),
                perceptual: Vec::new(),
                contextual: Vec::new(),
                match_fraction: Vec::new(),
                code,
                final_z: Vec::new(),
                final_grid: blank.clone(),
                converged: false,
                stalls: 0,
            },
            done: false,
            fault: None,
        })
        .collect();
    for iter in 0..config.max_iterations {
        let active: Vec<usize> = (0..runs.len()).filter(|&i| !runs[i].done).collect();
        if active.is_empty() {
            break;
        }
        let n = active.len();
        let mut zdata = Vec::with_capacity(n * zd);
        let mut cdata = vec![0f32; n * k];
        for (row, &i) in active.iter().enumerate() {
            zdata.extend(runs[i].z.iter().map(|&v| v as f32));
            cdata[row * k + runs[i].code] = 1.0;
        }
        let zvar = Var::param(Tensor::new(&[n, zd], zdata));
        let input = concat_cols(&zvar, &Var::constant(Tensor::new(&[n, k], cdata)));
        let (soft, _) = bundle.generator.forward(&input, Mode::Eval);
        let perc = perceptual_loss(&bundle.critic, &soft, config.perceptual);
        let ctx = contextual_with(&soft, &targets);
        let total = add(&perc, &scale(&ctx, config.lambda_ctx as f32));
        let g = grad(&sum_all(&total), &[&zvar], false).remove(0);
        let soft_planes = to_soft_planes(soft.value());
        for (row, &i) in active.iter().enumerate() {
            let run = &mut runs[i];
            let (t, p, c) = (
                total.value().data()[row] as f64,
                perc.value().data()[row] as f64,
                ctx.value().data()[row] as f64,
            );
            let matched = well_matches(&soft_planes[row].data, planes, h * w, wells, &bundle.codebook, w);
            run.trace.total.push(t);
            run.trace.perceptual.push(p);
            run.trace.contextual.push(c);
            run.trace.match_fraction.push(matched);
            let last = iter + 1 == config.max_iterations;
            if !(t.is_finite() && p.is_finite() && c.is_finite()) {
                run.fault = Some(format!("non-finite loss at iteration {iter}"));
            }
            let converged = c < config.stop_threshold;
            if converged || last || run.fault.is_some() {
                run.done = true;
                run.trace.converged = converged && run.fault.is_none();
                run.trace.final_z = run.z.iter().map(|&v| v as f32).collect();
                run.trace.final_grid = facies_core::decode_generator_output(&soft_planes[row], &bundle.codebook)?;
                continue;
            }
            let gz: Vec<f64> = g.value().data()[row * zd..(row + 1) * zd]
                .iter()
                .map(|&v| v as f64)
                .collect();
            match config.optimizer {
                LatentOptimizer::Normalized => {
                    match normalized_gd_step(&run.z, &run.v, &gz, config.learning_rate, config.momentum) {
                        Some((z, v)) => (run.z, run.v) = (z, v),
                        None => run.trace.stalls += 1,
                    }
                }
                LatentOptimizer::Adam => {
                    if gz.iter().all(|&x| x == 0.0) {
                        run.trace.stalls += 1;
                    } else {
                        run.adam.step(&mut run.z, &gz, config.learning_rate);
                    }
                }
            }
        }
    }
    Ok(runs)
}

fn codes_for(bundle: &CheckpointBundle, mode: CodeMode) -> Result<Vec<usize>> {
    let k = bundle.generator.config().categories;
    match mode {
        CodeMode::Fixed(c) if c >= k => Err(GanError::Argument(format!("code {c} outside [0, {k})"))),
        CodeMode::Fixed(c) => Ok(vec![c]),
        CodeMode::Free => Ok((0..k).collect()),
    }
}

/// Condition several independent seeds at once. Each entry is the best run
/// over the allowed codes for that seed, or the fault that stopped it.
pub fn condition_many(
    bundle: &CheckpointBundle,
    wells: &WellSet,
    config: &ConditioningConfig,
    seeds: &[u64],
) -> Result<Vec<Result<ConditioningTrace>>> {
    config.validate()?;
    let codes = codes_for(bundle, config.code)?;
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&s| codes.iter().map(move |&c| (s, c)))
        .collect();
    let mut runs = search(bundle, wells, config, &jobs)?.into_iter();
    let mut out = Vec::with_capacity(seeds.len());
    for _ in seeds {
        let group: Vec<Run> = runs.by_ref().take(codes.len()).collect();
        if let Some(bad) = group.iter().find(|r| r.fault.is_some()) {
            out.push(Err(GanError::ConditioningFault {
                reason: bad.fault.clone().unwrap_or_default(),
                trace: Box::new(bad.trace.clone()),
            }));
            continue;
        }
        let best = group
            .into_iter()
            .min_by(|a, b| {
                let (la, lb) = (a.trace.total.last(), b.trace.total.last());
                la.partial_cmp(&lb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("at least one code");
        out.push(Ok(best.trace));
    }
    Ok(out)
}

/// Condition one latent search on `wells`.
pub fn condition(bundle: &CheckpointBundle, wells: &WellSet, config: &ConditioningConfig, seed: u64) -> Result<ConditioningTrace> {
    condition_many(bundle, wells, config, &[seed])?.remove(0)
}

/// Conditional realizations and their e-type maps.
#[derive(Clone, Debug)]
pub struct ConditionalEnsemble {
    pub ensemble: LabeledEnsemble,
    /// One map per codebook facies.
    pub etypes: Vec<EtypeMap>,
    pub traces: Vec<ConditioningTrace>,
    /// Runs that faulted; excluded.
    pub failures: usize,
}

/// Average `count` conditioned realizations with seeds derived from `seed`.
///
/// Runs that fault are dropped and more than `max_failure_fraction` of them
/// is an error. Runs that stop at the iteration limit are kept: their
/// hardened grids are samples like any other.
pub fn conditional_etype(
    bundle: &CheckpointBundle,
    wells: &WellSet,
    count: usize,
    config: &ConditioningConfig,
    seed: u64,
) -> Result<ConditionalEnsemble> {
    if count == 0 {
        return Err(GanError::Argument("conditional e-type needs at least one sample".into()));
    }
    let results = condition_many(bundle, wells, config, &conditional_seeds(seed, count))?;
    ConditionalEnsemble::collect(results, &bundle.codebook, config.max_failure_fraction)
}

/// Seeds of the runs behind [`conditional_etype`].
pub fn conditional_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(seed, i)).collect()
}

impl ConditionalEnsemble {
    /// Average the runs of `results` that did not fault.
    pub fn collect(
        results: Vec<Result<ConditioningTrace>>,
        codebook: &FaciesCodebook,
        max_failure_fraction: f64,
    ) -> Result<Self> {
        let count = results.len();
        let mut traces = Vec::with_capacity(count);
        let mut failures = 0;
        for r in results {
            match r {
                Ok(t) => traces.push(t),
                Err(_) => failures += 1,
            }
        }
        if failures as f64 > max_failure_fraction * count as f64 || traces.is_empty() {
            return Err(GanError::TooManyFailures {
                failed: failures,
                count,
                tolerance: max_failure_fraction,
            });
        }
        let grids = traces.iter().map(|t| t.final_grid.clone()).collect();
        let labels = traces.iter().map(|t| t.code as u8).collect();
        let ensemble = LabeledEnsemble::new(grids, Some(labels), codebook.clone())?;
        let etypes = etype_all(&ensemble)?;
        Ok(Self {
            ensemble,
            etypes,
            traces,
            failures,
        })
    }
}
