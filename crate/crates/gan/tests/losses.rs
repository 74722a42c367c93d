use facies_autodiff::gradcheck::{central_difference, relative_error};
use facies_autodiff::ops::*;
use facies_autodiff::{grad, Tensor, Var};
use facies_gan::losses::*;
use facies_gan::nets::{build_critic_classifier, CriticOutput, NetConfig};
use facies_gan::GanError;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
}

fn v(values: &[f64]) -> Var<f64> {
    Var::constant(Tensor::new(&[values.len()], values.to_vec()))
}

/// Two dense layers over flattened 4x4 grids with a smooth hidden activation.
#[derive(Clone)]
struct TinyCritic {
    params: Vec<Var<f64>>,
}

impl TinyCritic {
    fn new(seed: u64) -> Self {
        let shapes: [&[usize]; 5] = [&[16, 6], &[6], &[6, 1], &[6, 3], &[3]];
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| Var::param(randn(s, seed * 10 + i as u64).map(|x| 0.5 * x)))
            .collect();
        Self { params }
    }

    fn with(&self, i: usize, t: &Tensor<f64>) -> Self {
        let mut c = self.clone();
        c.params[i] = Var::param(t.clone());
        c
    }
}

impl Critic<f64> for TinyCritic {
    fn evaluate(&mut self, x: &Var<f64>) -> CriticOutput<f64> {
        let p = &self.params;
        let n = x.shape()[0];
        let flat = reshape(x, &[n, 16]);
        let h = sigmoid(&bias_add(&matmul(&flat, &p[0], false, false), &p[1]));
        let critic = reshape(&matmul(&h, &p[2], false, false), &[n]);
        let log_probs = log_softmax(&bias_add(&matmul(&h, &p[3], false, false), &p[4]));
        CriticOutput { critic, log_probs }
    }
}

/// `f(x) = k * <w, x>` for a unit vector `w`.
fn linear_critic(k: f64, w: Tensor<f64>) -> impl FnMut(&Var<f64>) -> CriticOutput<f64> {
    move |x: &Var<f64>| {
        let n = x.shape()[0];
        let d = w.numel();
        let flat = reshape(x, &[n, d]);
        let critic = reshape(&matmul(&flat, &Var::constant(w.map(|a| k * a)), false, false), &[n, 1]);
        let critic = reshape(&critic, &[n]);
        let log_probs = Var::constant(Tensor::new(&[n, 1], vec![0.0; n]));
        CriticOutput { critic, log_probs }
    }
}

fn unit(d: usize, seed: u64) -> Tensor<f64> {
    let w = randn(&[d, 1], seed);
    let norm = w.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    w.map(|a| a / norm)
}

#[test]
fn reference_loss_at_the_fixed_point() {
    let (value, fake) = gan_loss_reference(&v(&[0.5; 7]), &v(&[0.5; 3])).unwrap();
    assert!((value.item() + 2.0 * 2f64.ln()).abs() < 1e-9);
    assert!((value.item() + 1.3863).abs() < 1e-4);
    assert!((fake.item() - 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn reference_loss_single_samples() {
    let e = (-1f64).exp();
    let (value, _) = gan_loss_reference(&v(&[e]), &v(&[1.0 - e])).unwrap();
    assert!((value.item() + 2.0).abs() < 1e-12);
    let (value, _) = gan_loss_reference(&v(&[1.0 - 1e-12]), &v(&[1e-12])).unwrap();
    assert!(value.item() < 0.0 && value.item() > -1e-10);
}

#[test]
fn reference_loss_rejects_bad_inputs() {
    for bad in [0.0, 1.0, -0.2, f64::NAN] {
        let err = gan_loss_reference(&v(&[0.5, bad]), &v(&[0.5])).unwrap_err();
        assert!(matches!(err, GanError::Domain(_)), "{bad}");
    }
    let empty = Var::constant(Tensor::<f64>::zeros(&[0]));
    assert!(matches!(gan_loss_reference(&empty, &v(&[0.5])), Err(GanError::Argument(_))));
}

#[test]
fn wasserstein_examples() {
    assert_eq!(wasserstein_estimate(&v(&[1.0, 3.0]), &v(&[0.0, 2.0])).unwrap().item(), 1.0);
    let same = v(&[0.3, -1.2, 4.0]);
    assert_eq!(wasserstein_estimate(&same, &same).unwrap().item(), 0.0);
    let empty = Var::constant(Tensor::<f64>::zeros(&[0]));
    assert!(matches!(wasserstein_estimate(&empty, &same), Err(GanError::Argument(_))));
}

proptest! {
    #[test]
    fn wasserstein_shift_invariant_and_antisymmetric(
        real in prop::collection::vec(-50.0f64..50.0, 1..12),
        fake in prop::collection::vec(-50.0f64..50.0, 1..12),
        k in -100.0f64..100.0,
    ) {
        let w = wasserstein_estimate(&v(&real), &v(&fake)).unwrap().item();
        let shifted: Vec<f64> = real.iter().map(|x| x + k).collect();
        let shifted_fake: Vec<f64> = fake.iter().map(|x| x + k).collect();
        let ws = wasserstein_estimate(&v(&shifted), &v(&shifted_fake)).unwrap().item();
        prop_assert!((w - ws).abs() < 1e-9);
        let swapped = wasserstein_estimate(&v(&fake), &v(&real)).unwrap().item();
        prop_assert_eq!(w, -swapped);
    }

    #[test]
    fn penalty_and_info_are_non_negative(seed in 0u64..10_000, n in 1usize..6) {
        let mut critic = TinyCritic::new(seed);
        let points = randn(&[n, 1, 4, 4], seed + 1);
        prop_assert!(gradient_penalty(&mut critic, &points, 10.0, false).unwrap().item() >= 0.0);
        let out = critic.evaluate(&Var::constant(points));
        let codes: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 3).collect();
        prop_assert!(info_loss(&out.log_probs, &codes).unwrap().loss.item() >= 0.0);
    }
}

#[test]
fn penalty_of_analytic_critics() {
    let points = randn(&[5, 1, 4, 4], 3);
    let w = unit(16, 4);
    let unit_gp = gradient_penalty(&mut linear_critic(1.0, w.clone()), &points, 10.0, false).unwrap();
    assert!(unit_gp.item().abs() < 1e-6);
    let constant = gradient_penalty(&mut linear_critic(0.0, w.clone()), &points, 7.5, false).unwrap();
    assert!((constant.item() - 7.5).abs() < 1e-6);
    let doubled = gradient_penalty(&mut linear_critic(2.0, w), &points, 10.0, false).unwrap();
    assert!((doubled.item() - 10.0).abs() < 1e-6);
}

fn log_rows(rows: &[&[f64]]) -> Var<f64> {
    let k = rows[0].len();
    let data = rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect();
    Var::constant(Tensor::new(&[rows.len(), k], data))
}

#[test]
fn info_loss_examples() {
    let perfect = info_loss(&log_rows(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap();
    assert_eq!(perfect.loss.item(), 0.0);
    let third = 1.0 / 3.0;
    let uniform = info_loss(&log_rows(&[&[third; 3], &[third; 3]]), &[0, 2]).unwrap();
    assert!((uniform.loss.item() - 3f64.ln()).abs() < 1e-9);
    let two = info_loss(&log_rows(&[&[0.8, 0.2], &[0.2, 0.8]]), &[0, 1]).unwrap();
    assert!((two.loss.item() + 0.8f64.ln()).abs() < 1e-12);
    assert!((two.loss.item() - 0.2231).abs() < 1e-4);
}

#[test]
fn info_loss_clamps_impossible_codes() {
    let term = info_loss(&log_rows(&[&[1.0, 0.0], &[1.0, 0.0]]), &[1, 0]).unwrap();
    assert_eq!(term.clamped, 1);
    assert!((term.loss.item() + INFO_EPS.ln() / 2.0).abs() < 1e-9);
    assert!(term.loss.item().is_finite());
}

#[test]
fn info_loss_rejects_bad_codes() {
    let lp = log_rows(&[&[0.5, 0.5]]);
    assert!(matches!(info_loss(&lp, &[2]), Err(GanError::Argument(_))));
    assert!(matches!(info_loss(&lp, &[0, 1]), Err(GanError::Argument(_))));
}

#[test]
fn partial_info_loss_averages_labelled_rows_only() {
    let lp = log_rows(&[&[0.8, 0.2], &[0.5, 0.5], &[0.4, 0.6]]);
    let term = partial_info_loss(&lp, &[Some(0), None, Some(1)]).unwrap();
    let expected = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
    assert!((term.loss.item() - expected).abs() < 1e-12);
    let none = partial_info_loss(&lp, &[None, None, None]).unwrap();
    assert_eq!(none.loss.item(), 0.0);
}

fn batch_terms(
    critic: &mut TinyCritic,
    real: &Tensor<f64>,
    fake: &Var<f64>,
    weights: &LossWeights,
    graph: bool,
) -> LossTerms<f64> {
    let points = interpolate(real, fake.value(), &mut ChaCha8Rng::seed_from_u64(5));
    let labels = [Some(0), None, Some(2)];
    let batch = LossBatch {
        real: &Var::constant(real.clone()),
        fake,
        codes: &[1, 2, 0],
        real_labels: Some(&labels),
        gp_points: &points,
    };
    combined_losses(critic, &batch, weights, graph).unwrap()
}

#[test]
fn combined_loss_of_identical_batches_is_zero() {
    let mut critic = TinyCritic::new(2);
    let x = randn(&[3, 1, 4, 4], 9);
    let weights = LossWeights {
        lambda_gp: 0.0,
        lambda_info: 0.0,
    };
    let terms = batch_terms(&mut critic, &x, &Var::constant(x.clone()), &weights, false);
    assert_eq!(terms.report.critic_loss, 0.0);
    assert_eq!(terms.report.w_estimate, 0.0);
}

#[test]
fn combined_loss_composition() {
    let mut critic = TinyCritic::new(2);
    let real = randn(&[3, 1, 4, 4], 9);
    let fake = Var::constant(randn(&[3, 1, 4, 4], 10));
    let weights = LossWeights {
        lambda_gp: 10.0,
        lambda_info: 0.5,
    };
    let t = batch_terms(&mut critic, &real, &fake, &weights, false);
    let r = t.report;
    let critic_expected = -r.w_estimate + r.gp + 0.5 * (r.info + t.supervised);
    assert!((r.critic_loss - critic_expected).abs() < 1e-12);
    let fake_mean = critic.evaluate(&fake).critic.value().data().iter().sum::<f64>() / 3.0;
    assert!((r.gen_loss - (-fake_mean + 0.5 * r.info)).abs() < 1e-12);
    assert!(t.supervised > 0.0);
}

#[test]
fn critic_loss_grows_with_penalty_weight() {
    let mut critic = TinyCritic::new(4);
    let real = randn(&[3, 1, 4, 4], 1);
    let fake = Var::constant(randn(&[3, 1, 4, 4], 2));
    let mut last = f64::NEG_INFINITY;
    for lambda_gp in [0.0, 1.0, 5.0, 10.0, 50.0] {
        let weights = LossWeights { lambda_gp, lambda_info: 1.0 };
        let t = batch_terms(&mut critic, &real, &fake, &weights, false);
        assert!(t.report.gp > 0.0 || lambda_gp == 0.0);
        assert!(t.report.critic_loss > last);
        last = t.report.critic_loss;
    }
}

#[test]
fn combined_losses_finite_on_fresh_networks() {
    let cfg = NetConfig::new(64, 64, 1, 3);
    let net = build_critic_classifier::<f32>(&cfg, 1).unwrap();
    let real = Tensor::new(&[8, 1, 64, 64], (0..8 * 4096).map(|i| ((i / 7) % 2) as f32).collect());
    let fake = Tensor::new(&[8, 1, 64, 64], (0..8 * 4096).map(|i| (i % 97) as f32 / 97.0).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let points = interpolate(&real, &fake, &mut rng);
    let mut session = CriticSession {
        net: &net,
        dropout: Some(&mut rng),
    };
    let batch = LossBatch {
        real: &Var::constant(real.clone()),
        fake: &Var::constant(fake),
        codes: &[0, 1, 2, 0, 1, 2, 0, 1],
        real_labels: None,
        gp_points: &points,
    };
    let t = combined_losses(&mut session, &batch, &LossWeights::default(), true).unwrap();
    assert_eq!(t.report.non_finite(), None);
}

#[test]
fn negative_weights_are_rejected() {
    let w = LossWeights {
        lambda_gp: -1.0,
        lambda_info: 1.0,
    };
    assert!(matches!(w.validate(), Err(GanError::Config(_))));
}

const STEP: f64 = 1e-3;
const TOLERANCE: f64 = 1e-4;

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let critic = TinyCritic::new(6);
    let real = randn(&[3, 1, 4, 4], 11);
    let fake = randn(&[3, 1, 4, 4], 12);
    let weights = LossWeights::default();
    let loss = |c: &TinyCritic, graph: bool| {
        let mut c = c.clone();
        batch_terms(&mut c, &real, &Var::constant(fake.clone()), &weights, graph).critic_loss
    };
    for i in 0..critic.params.len() {
        let analytic = grad(&loss(&critic, true), &[&critic.params[i]], false).remove(0);
        let numeric = central_difference(|t| loss(&critic.with(i, t), false).item(), critic.params[i].value(), STEP);
        let err = relative_error(analytic.value(), &numeric, 1e-6);
        assert!(err < TOLERANCE, "parameter {i}: {err}");
    }
}

#[test]
fn generator_loss_gradient_matches_finite_differences() {
    let critic = TinyCritic::new(7);
    let real = randn(&[3, 1, 4, 4], 13);
    let fake = randn(&[3, 1, 4, 4], 14);
    let weights = LossWeights::default();
    let loss = |f: &Var<f64>| batch_terms(&mut critic.clone(), &real, f, &weights, false).generator_loss;
    let x = Var::param(fake.clone());
    let analytic = grad(&loss(&x), &[&x], false).remove(0);
    let numeric = central_difference(|t| loss(&Var::constant(t.clone())).item(), &fake, STEP);
    assert!(relative_error(analytic.value(), &numeric, 1e-6) < TOLERANCE);
}

#[test]
fn penalty_gradients_match_finite_differences() {
    let critic = TinyCritic::new(8);
    let points = randn(&[4, 1, 4, 4], 15);
    let gp = |c: &TinyCritic, graph: bool| gradient_penalty(&mut c.clone(), &points, 10.0, graph).unwrap();
    for i in 0..3 {
        let analytic = grad(&gp(&critic, true), &[&critic.params[i]], false).remove(0);
        let numeric = central_difference(|t| gp(&critic.with(i, t), false).item(), critic.params[i].value(), STEP);
        let err = relative_error(analytic.value(), &numeric, 1e-6);
        assert!(err < TOLERANCE, "parameter {i}: {err}");
    }
}

#[test]
fn info_and_wasserstein_gradients_match_finite_differences() {
    let logits = randn(&[4, 3], 16);
    let codes = [0, 2, 1, 1];
    let info = |t: &Var<f64>| info_loss(&log_softmax(t), &codes).unwrap().loss;
    let x = Var::param(logits.clone());
    let analytic = grad(&info(&x), &[&x], false).remove(0);
    let numeric = central_difference(|t| info(&Var::constant(t.clone())).item(), &logits, STEP);
    assert!(relative_error(analytic.value(), &numeric, 1e-6) < TOLERANCE);

    let real = randn(&[5], 17);
    let fake = v(&[0.1, -0.4, 2.0]);
    let r = Var::param(real.clone());
    let analytic = grad(&wasserstein_estimate(&r, &fake).unwrap(), &[&r], false).remove(0);
    let numeric = central_difference(
        |t| wasserstein_estimate(&Var::constant(t.clone()), &fake).unwrap().item(),
        &real,
        STEP,
    );
    assert!(relative_error(analytic.value(), &numeric, 1e-6) < TOLERANCE);
}

#[test]
fn penalty_on_real_points_uses_them_directly() {
    let mut critic = TinyCritic::new(3);
    let real = randn(&[2, 1, 4, 4], 20);
    let a = gradient_penalty(&mut critic, &real, 10.0, false).unwrap().item();
    let b = gradient_penalty(&mut critic, &real.clone(), 10.0, false).unwrap().item();
    assert_eq!(a, b);
    assert!(matches!(
        gradient_penalty(&mut critic, &Tensor::zeros(&[0, 1, 4, 4]), 10.0, false),
        Err(GanError::Argument(_))
    ));
}

#[test]
fn interpolates_lie_on_segments() {
    let real = randn(&[6, 1, 4, 4], 21);
    let fake = randn(&[6, 1, 4, 4], 22);
    let mix = interpolate(&real, &fake, &mut ChaCha8Rng::seed_from_u64(1));
    for i in 0..6 {
        let s = i * 16..(i + 1) * 16;
        let (r, f, m) = (&real.data()[s.clone()], &fake.data()[s.clone()], &mix.data()[s]);
        let u = (m[0] - f[0]) / (r[0] - f[0]);
        assert!((0.0..=1.0).contains(&u));
        for j in 0..16 {
            assert!((m[j] - (u * r[j] + (1.0 - u) * f[j])).abs() < 1e-9);
        }
    }
}
