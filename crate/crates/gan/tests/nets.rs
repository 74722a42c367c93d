use facies_autodiff::{Tensor, Var};
use facies_core::{FaciesCodebook, LatentInput};
use facies_gan::nets::*;
use facies_gan::GanError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inputs(config: &NetConfig, n: usize, seed: u64) -> Var<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Var::constant(latent_tensor(&random_latents(config, n, None, &mut rng)))
}

fn grids(n: usize, planes: usize, seed: u64) -> Var<f32> {
    let mut state = seed;
    let data = (0..n * planes * 64 * 64)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 63) as f32
        })
        .collect();
    Var::constant(Tensor::new(&[n, planes, 64, 64], data))
}

#[test]
fn generator_output_shape_and_range() {
    let cfg = NetConfig::new(64, 64, 1, 1);
    let g = build_generator::<f32>(&cfg, 3).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let (out, stats) = g.forward(&inputs(&cfg, 4, 1), mode);
        assert_eq!(out.shape(), &[4, 1, 64, 64]);
        assert!(out.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(stats.len(), if mode == Mode::Train { g.norm_layers() } else { 0 });
    }
}

#[test]
fn generator_handles_rectangular_grids_and_planes() {
    let cfg = NetConfig::for_codebook(32, 64, &FaciesCodebook::four_facies(), 2);
    assert_eq!(cfg.planes, 4);
    let g = build_generator::<f32>(&cfg, 0).unwrap();
    let (out, _) = g.forward(&inputs(&cfg, 2, 0), Mode::Eval);
    assert_eq!(out.shape(), &[2, 4, 32, 64]);
}

#[test]
fn inference_is_deterministic() {
    let cfg = NetConfig::new(64, 64, 1, 3);
    let g = build_generator::<f32>(&cfg, 3).unwrap();
    let x = inputs(&cfg, 3, 2);
    let a = g.forward(&x, Mode::Eval).0;
    let b = g.forward(&x, Mode::Eval).0;
    assert_eq!(a.value().data(), b.value().data());
    let again = build_generator::<f32>(&cfg, 3).unwrap();
    assert_eq!(again.forward(&x, Mode::Eval).0.value().data(), a.value().data());
}

#[test]
fn code_changes_the_output() {
    let cfg = NetConfig::new(64, 64, 1, 3);
    let g = build_generator::<f32>(&cfg, 5).unwrap();
    let z: Vec<f32> = (0..cfg.z_dim).map(|i| (i as f32 * 0.37).sin()).collect();
    let batch: Vec<LatentInput> = (0..3).map(|c| LatentInput::new(z.clone(), c, 3).unwrap()).collect();
    let (out, _) = g.forward(&Var::constant(latent_tensor(&batch)), Mode::Eval);
    let d = out.value().data();
    let per = 64 * 64;
    assert_ne!(&d[..per], &d[per..2 * per]);
    assert_ne!(&d[per..2 * per], &d[2 * per..]);
}

#[test]
fn critic_and_classifier_heads() {
    let cfg = NetConfig::new(64, 64, 1, 3);
    let d = build_critic_classifier::<f32>(&cfg, 4).unwrap();
    let out = d.forward(&grids(4, 1, 9), None);
    assert_eq!(out.critic.shape(), &[4]);
    assert_eq!(out.log_probs.shape(), &[4, 3]);
    let p = out.probabilities();
    for row in p.data().chunks(3) {
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn dropout_only_with_a_stream() {
    let cfg = NetConfig::new(64, 64, 1, 2);
    let d = build_critic_classifier::<f32>(&cfg, 4).unwrap();
    let x = grids(2, 1, 1);
    let a = d.forward(&x, None);
    let b = d.forward(&x, None);
    assert_eq!(a.critic.value().data(), b.critic.value().data());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = d.forward(&x, Some(&mut rng));
    assert_ne!(a.critic.value().data(), c.critic.value().data());
    let mut off = cfg.clone();
    off.dropout = 0.0;
    let d0 = build_critic_classifier::<f32>(&off, 4).unwrap();
    let e = d0.forward(&x, Some(&mut rng));
    assert_eq!(e.critic.value().data(), d0.forward(&x, None).critic.value().data());
}

#[test]
fn parameter_counts() {
    let mut cfg = NetConfig::new(64, 64, 1, 3);
    cfg.generator_base = 8;
    cfg.critic_base = 8;
    cfg.z_dim = 10;
    let g = build_generator::<f32>(&cfg, 1).unwrap();
    let d = build_critic_classifier::<f32>(&cfg, 1).unwrap();
    // 4 blocks: seed 64 channels at 4x4, then 32, 16, 8, 1
    let seed_len = 64 * 16;
    let gen = 13 * seed_len + seed_len + 2 * 64
        + (64 * 32 * 16 + 2 * 32)
        + (32 * 16 * 16 + 2 * 16)
        + (16 * 8 * 16 + 2 * 8)
        + (8 * 16 + 1);
    assert_eq!(g.parameter_count(), gen);
    let trunk = (8 * 16 + 8) + (16 * 8 * 16 + 16) + (32 * 16 * 16 + 32) + (64 * 32 * 16 + 64);
    let flat = 64 * 16;
    let heads = (flat * 128 + 128 + 128 + 1) + (flat * 128 + 128 + 128 * 3 + 3);
    assert_eq!(d.parameter_count(), trunk + heads);
    assert_eq!(build_generator::<f32>(&cfg, 2).unwrap().parameter_count(), gen);
}

#[test]
fn incompatible_grids_are_config_errors() {
    for (h, w) in [(60, 64), (48, 48), (64, 40), (2, 8), (0, 64)] {
        let cfg = NetConfig::new(h, w, 1, 1);
        assert!(matches!(build_generator::<f32>(&cfg, 0), Err(GanError::Config(_))), "{h}x{w}");
        assert!(matches!(build_critic_classifier::<f32>(&cfg, 0), Err(GanError::Config(_))), "{h}x{w}");
    }
    assert_eq!(NetConfig::new(64, 96, 1, 1).blocks().unwrap(), (4, (4, 6)));
    assert_eq!(NetConfig::new(4, 4, 1, 1).blocks().unwrap(), (0, (4, 4)));
}

#[test]
fn invalid_widths_are_config_errors() {
    let mut cfg = NetConfig::new(64, 64, 1, 1);
    cfg.dropout = 1.0;
    assert!(matches!(cfg.validate(), Err(GanError::Config(_))));
    let mut cfg = NetConfig::new(64, 64, 1, 1);
    cfg.categories = 0;
    assert!(matches!(cfg.validate(), Err(GanError::Config(_))));
}

#[test]
fn recalibrated_statistics_match_batch_statistics() {
    let mut cfg = NetConfig::new(16, 16, 1, 1);
    cfg.z_dim = 6;
    cfg.generator_base = 4;
    let mut g = build_generator::<f64>(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    g.recalibrate(1, 256, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lat = random_latents(&cfg, 256, None, &mut rng);
    let x = Var::constant(latent_tensor(&lat));
    let (train, _) = g.forward(&x, Mode::Train);
    let (eval, _) = g.forward(&x, Mode::Eval);
    let worst = train
        .value()
        .data()
        .iter()
        .zip(eval.value().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}
