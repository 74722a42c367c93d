//! Checkpoint archive: a JSON manifest followed by named little-endian tensors.
//!
//! Layout: magic `IWGCK`, version byte, `u32` manifest length, manifest, then
//! for each tensor: `u16` name length, name, dtype byte, rank byte, `u32`
//! dims, data.

use std::io::{Read, Write};
use std::path::Path;

use facies_autodiff::{Float, Tensor};
use facies_core::FaciesCodebook;
use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};
use crate::nets::{build_critic_classifier, build_generator, CriticClassifierNet, GeneratorNet, NetConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamSet;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 5] = b"IWGCK";
pub const VERSION: u8 = 1;

/// Everything needed to sample from, condition with, or resume training of
/// a model.
#[derive(Clone, Debug)]
pub struct CheckpointBundle {
    pub config: TrainConfig,
    pub codebook: FaciesCodebook,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps (loss-log rows).
    pub step: u64,
    pub generator: GeneratorNet<f32>,
    pub critic: CriticClassifierNet<f32>,
    pub gen_opt: Adam<f32>,
    pub critic_opt: Adam<f32>,
}

/// Per-epoch RNG streams are derived from the seed and the epoch counter, so
/// these two values are the whole random state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    next_epoch: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    config: TrainConfig,
    net: NetConfig,
    codebook: FaciesCodebook,
    epoch: usize,
    step: u64,
    rng: RngState,
    gen_adam: (AdamConfig, u64),
    critic_adam: (AdamConfig, u64),
    tensors: Vec<String>,
}

fn named(params: &ParamSet<f32>) -> Vec<(String, &Tensor<f32>)> {
    params.iter().map(|(n, t)| (n.to_string(), t)).collect()
}

impl CheckpointBundle {
    fn tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = Vec::new();
        let mut push = |items: Vec<(String, &Tensor<f32>)>| {
            out.extend(items.into_iter().map(|(n, t)| (n, t.clone())));
        };
        push(named(self.generator.params()));
        push(named(self.critic.params()));
        for (i, (m, v)) in self.generator.running_stats().into_iter().enumerate() {
            out.push((format!("gen.bn{i}.running_mean"), m));
            out.push((format!("gen.bn{i}.running_var"), v));
        }
        for (tag, opt, params) in [
            ("gen", &self.gen_opt, self.generator.params()),
            ("critic", &self.critic_opt, self.critic.params()),
        ] {
            for ((name, _), (m, v)) in params.iter().zip(opt.m.iter().zip(&opt.v)) {
                out.push((format!("adam.{tag}.m/{name}"), m.clone()));
                out.push((format!("adam.{tag}.v/{name}"), v.clone()));
            }
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let tensors = self.tensors();
        let manifest = Manifest {
            config: self.config.clone(),
            net: self.generator.config().clone(),
            codebook: self.codebook.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState {
                seed: self.config.seed,
                next_epoch: self.epoch,
            },
            gen_adam: (self.gen_opt.config, self.gen_opt.step),
            critic_adam: (self.critic_opt.config, self.critic_opt.step),
            tensors: tensors.iter().map(|(n, _)| n.clone()).collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (name, t) in &tensors {
            buf.clear();
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(f32::DTYPE);
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic[..5] != MAGIC {
            return Err(GanError::Format("not a checkpoint archive".into()));
        }
        if magic[5] != VERSION {
            return Err(GanError::Format(format!("unsupported checkpoint version {}", magic[5])));
        }
        let len = read_u32(r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        let mut tensors = std::collections::HashMap::new();
        for name in &manifest.tensors {
            let (stored, t) = read_tensor(r)?;
            if &stored != name {
                return Err(GanError::Format(format!("expected tensor {name}, found {stored}")));
            }
            tensors.insert(stored, t);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(GanError::Format(format!("{} trailing bytes", rest.len())));
        }
        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| GanError::Format(format!("missing tensor {name}")))
        };
        let mut generator: GeneratorNet<f32> = build_generator(&manifest.net, 0)?;
        let mut critic: CriticClassifierNet<f32> = build_critic_classifier(&manifest.net, 0)?;
        fill(generator.params_mut(), &mut take)?;
        fill(critic.params_mut(), &mut take)?;
        let mut stats = Vec::new();
        for i in 0..generator.norm_layers() {
            stats.push((
                take(&format!("gen.bn{i}.running_mean"))?,
                take(&format!("gen.bn{i}.running_var"))?,
            ));
        }
        generator.set_running_stats(stats)?;
        let mut gen_opt = Adam::new(manifest.gen_adam.0, generator.params());
        gen_opt.step = manifest.gen_adam.1;
        let mut critic_opt = Adam::new(manifest.critic_adam.0, critic.params());
        critic_opt.step = manifest.critic_adam.1;
        for (tag, opt, params) in [
            ("gen", &mut gen_opt, generator.params()),
            ("critic", &mut critic_opt, critic.params()),
        ] {
            for (i, name) in params.names().iter().enumerate() {
                opt.m[i] = checked(take(&format!("adam.{tag}.m/{name}"))?, params.var(i).shape())?;
                opt.v[i] = checked(take(&format!("adam.{tag}.v/{name}"))?, params.var(i).shape())?;
            }
        }
        if manifest.rng.seed != manifest.config.seed || manifest.rng.next_epoch != manifest.epoch {
            return Err(GanError::Format("inconsistent random state".into()));
        }
        Ok(Self {
            config: manifest.config,
            codebook: manifest.codebook,
            epoch: manifest.epoch,
            step: manifest.step,
            generator,
            critic,
            gen_opt,
            critic_opt,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn checked(t: Tensor<f32>, shape: &[usize]) -> Result<Tensor<f32>> {
    if t.shape() != shape {
        return Err(GanError::Format(format!("tensor shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(t)
}

fn fill(params: &mut ParamSet<f32>, take: &mut impl FnMut(&str) -> Result<Tensor<f32>>) -> Result<()> {
    for i in 0..params.len() {
        let t = checked(take(&params.names()[i].clone())?, params.var(i).shape())?;
        params.set(i, t);
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor<f32>)> {
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| GanError::Format("tensor name is not UTF-8".into()))?;
    r.read_exact(&mut b2)?;
    let (dtype, rank) = (b2[0], b2[1] as usize);
    if dtype != f32::DTYPE {
        return Err(GanError::Format(format!("tensor {name}: dtype {dtype} is not f32")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * f32::BYTES];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(f32::BYTES).map(f32::read_le).collect();
    Ok((name, Tensor::new(&shape, data)))
}
