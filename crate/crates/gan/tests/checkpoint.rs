use facies_autodiff::Var;
use facies_core::obm::*;
use facies_gan::nets::{latent_tensor, random_latents, Mode};
use facies_gan::train::{train, TrainConfig};
use facies_gan::{CheckpointBundle, GanError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bundle() -> CheckpointBundle {
    let d = build_dataset(DatasetCase::Mixed2, &[6, 6], (16, 16), &SynthSpecs::default(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 6,
        n_critic: 2,
        z_dim: 5,
        generator_base: 3,
        critic_base: 3,
        head_width: 6,
        checkpoint_every: 0,
        recalibration_batches: 2,
        ..TrainConfig::default()
    };
    train(&d, &cfg).unwrap().0
}

#[test]
fn bytes_round_trip_exactly() {
    let b = bundle();
    let bytes = b.to_bytes().unwrap();
    let back = CheckpointBundle::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.config, b.config);
    assert_eq!(back.codebook, b.codebook);
    assert_eq!((back.epoch, back.step), (2, 12));
    assert_eq!(back.gen_opt.step, b.gen_opt.step);
    assert_eq!(back.critic_opt.m, b.critic_opt.m);
}

#[test]
fn loaded_networks_reproduce_outputs() {
    let b = bundle();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    b.save(&path).unwrap();
    let back = CheckpointBundle::load(&path).unwrap();
    let cfg = b.generator.config();
    let lat = random_latents(cfg, 5, None, &mut ChaCha8Rng::seed_from_u64(1));
    let x = Var::constant(latent_tensor::<f32>(&lat));
    let (a, _) = b.generator.forward(&x, Mode::Eval);
    let (c, _) = back.generator.forward(&x, Mode::Eval);
    assert_eq!(a.value().data(), c.value().data());
    let ca = b.critic.forward(&a, None);
    let cc = back.critic.forward(&c, None);
    assert_eq!(ca.critic.value().data(), cc.critic.value().data());
    assert_eq!(ca.log_probs.value().data(), cc.log_probs.value().data());
}

#[test]
fn damaged_archives_are_rejected() {
    let bytes = bundle().to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(CheckpointBundle::read_from(&mut bad_magic.as_slice()), Err(GanError::Format(_))));
    let mut bad_version = bytes.clone();
    bad_version[5] = 99;
    assert!(matches!(CheckpointBundle::read_from(&mut bad_version.as_slice()), Err(GanError::Format(_))));
    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(CheckpointBundle::read_from(&mut &truncated[..]), Err(GanError::Io(_))));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(CheckpointBundle::read_from(&mut trailing.as_slice()), Err(GanError::Format(_))));
}

#[test]
fn archive_starts_with_header_and_manifest() {
    let bytes = bundle().to_bytes().unwrap();
    assert_eq!(&bytes[..5], b"IWGCK");
    assert_eq!(bytes[5], 1);
    let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[10..10 + len]).unwrap();
    assert_eq!(manifest["epoch"], 2);
    assert_eq!(manifest["rng"]["next_epoch"], 2);
    let names = manifest["tensors"].as_array().unwrap();
    assert!(names.iter().any(|n| n == "gen.proj.w"));
    assert!(names.iter().any(|n| n == "adam.critic.v/critic.down0.w"));
}
