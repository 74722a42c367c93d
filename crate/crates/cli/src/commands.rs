//! One function per subcommand.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use facies_core::obm::{build_dataset, derive_seed};
use facies_core::raster::{grid_sheet_png, probability_png};
use facies_core::stats::{bias_report, etype, etype_histogram, BiasReport};
use facies_core::{LabeledEnsemble, WellSet};
use facies_gan::train::{continue_training, LossLog};
use facies_gan::{
    classify_accuracy, condition_many, conditional_seeds, sample, CheckpointBundle, ConditionalEnsemble, GanError,
    Trainer,
};
use serde::Serialize;
use serde_json::json;

use crate::cli::{Cli, Command, ConditionArgs, ReportArgs, SampleArgs, SynthArgs, TrainArgs, ValidateArgs};
use crate::config::WorkbenchConfig;
use crate::manifest::{RunLock, RunManifest, MANIFEST};
use crate::{report, Outcome, UsageError};

/// Invocation context shared by the commands.
pub struct Invocation {
    pub args: Vec<String>,
    pub seed_override: Option<u64>,
}

impl Invocation {
    fn seed(&self, flag: u64) -> u64 {
        self.seed_override.unwrap_or(flag)
    }
}

pub fn dispatch(cli: Cli, args: Vec<OsString>, seed_override: Option<u64>) -> Result<Outcome> {
    let ctx = Invocation {
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        seed_override,
    };
    match cli.command {
        Command::Synth(a) => synth(a, &ctx),
        Command::Train(a) => train(a, &ctx),
        Command::Sample(a) => sample_cmd(a, &ctx),
        Command::Validate(a) => validate(a, &ctx),
        Command::Condition(a) => condition(a, &ctx),
        Command::Report(a) => report_cmd(a),
    }
}

/// An input that must exist; a missing one is a usage error.
fn input(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(UsageError(format!("no such file: {}", path.display())).into())
    }
}

fn load_ensemble(path: &Path) -> Result<LabeledEnsemble> {
    LabeledEnsemble::load(input(path)?).with_context(|| format!("loading ensemble {}", path.display()))
}

fn load_bundle(path: &Path) -> Result<CheckpointBundle> {
    CheckpointBundle::load(input(path)?).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// `path` with `suffix` appended to its file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn to_json(value: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("serializable config")
}

/// Write a file output with its `.json` manifest alongside.
fn finish_file_outputs(mut manifest: RunManifest, out: &Path, files: &[PathBuf]) -> Result<()> {
    let root = parent_dir(out);
    manifest.add_outputs(&root, files)?;
    manifest.finish();
    manifest.write(&sidecar(out, ".json"))
}

fn synth(a: SynthArgs, ctx: &Invocation) -> Result<Outcome> {
    let cfg = WorkbenchConfig::load_or_default(a.config.as_deref())?;
    let (h, w) = a.size;
    cfg.synth
        .delta
        .validate(h, w)
        .map_err(|e| UsageError(format!("config [synth.delta]: {e}")))?;
    let seed = ctx.seed(a.seed);
    let mut manifest = RunManifest::start(
        "synth",
        ctx.args.clone(),
        seed,
        json!({
            "case": a.case.to_string(),
            "count": a.count,
            "size": [h, w],
            "synth": to_json(&cfg.synth),
        }),
    );
    if let Some(c) = &a.config {
        manifest.add_input(c)?;
    }
    let data = build_dataset(a.case, &a.count, a.size, &cfg.synth, seed)?;
    write(&a.out, data.to_bytes()?)?;
    let mut files = vec![a.out.clone()];
    if a.preview > 0 {
        let n = a.preview.min(data.len());
        let png = sidecar(&a.out, ".png");
        write(&png, grid_sheet_png(&data.grids()[..n], 8, data.codebook())?)?;
        files.push(png);
    }
    finish_file_outputs(manifest, &a.out, &files)?;
    eprintln!("wrote {} grids to {}", data.len(), a.out.display());
    Ok(Outcome::Success)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_{epoch:04}.ckpt")
}

fn train(a: TrainArgs, ctx: &Invocation) -> Result<Outcome> {
    let data = load_ensemble(&a.data)?;
    let (bundle, config_input) = match &a.resume {
        Some(path) => {
            let mut b = load_bundle(path)?;
            if let Some(e) = a.epochs {
                b.config.epochs = e;
            }
            (Some(b), Some(path.clone()))
        }
        None => (None, a.config.clone()),
    };
    let config = match &bundle {
        Some(b) => b.config.clone(),
        None => {
            let mut c = WorkbenchConfig::load_or_default(a.config.as_deref())?.train;
            if let Some(e) = a.epochs {
                c.epochs = e;
            }
            c.seed = ctx.seed(c.seed);
            c
        }
    };
    config
        .validate()
        .map_err(|e| UsageError(format!("config [train]: {e}")))?;

    let out = &a.out;
    let _lock = RunLock::acquire(out)?;
    if out.join(MANIFEST).exists() && a.resume.is_none() {
        return Err(UsageError(format!(
            "{} already holds a run; pass --resume or choose another directory",
            out.display()
        ))
        .into());
    }
    for sub in ["checkpoints", "samples", "reports"] {
        fs::create_dir_all(out.join(sub))?;
    }
    let mut manifest = RunManifest::start("train", ctx.args.clone(), config.seed, json!({ "train": to_json(&config) }));
    manifest.add_input(&a.data)?;
    if let Some(p) = &config_input {
        manifest.add_input(p)?;
    }
    manifest.write(&out.join(MANIFEST))?;

    let trainer = match bundle {
        Some(b) => Trainer::resume(b, &data)?,
        None => Trainer::new(&data, &config)?,
    };
    // rows logged by an earlier invocation in the same directory
    let losses_path = out.join("losses.csv");
    let start = trainer.epoch();
    let earlier = match (&a.resume, fs::read_to_string(&losses_path)) {
        (Some(_), Ok(text)) => text
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(1).and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e < start))
            .map(|l| format!("{l}\n"))
            .collect::<String>(),
        _ => String::new(),
    };
    let total = config.epochs;
    eprintln!(
        "training {} grids, epochs {}..{}, {} steps per epoch",
        data.len(),
        start,
        total,
        trainer.steps_per_epoch()
    );
    let mut save = |b: &CheckpointBundle, log: &LossLog| -> facies_gan::Result<()> {
        b.save(out.join("checkpoints").join(checkpoint_name(b.epoch)))?;
        let mut csv = format!("{}\n{earlier}", LossLog::HEADER);
        for row in &log.rows {
            csv.push_str(&LossLog::csv_row(row));
            csv.push('\n');
        }
        fs::write(&losses_path, csv)?;
        let w = log.epoch_w_means().last().map(|&(_, w)| w).unwrap_or(f64::NAN);
        eprintln!("epoch {}/{total}: mean W estimate {w:.4}", b.epoch);
        Ok(())
    };
    let (bundle, _) = continue_training(trainer, &mut save)?;

    let k = bundle.generator.config().categories;
    let preview = sample(&bundle, 16, None, derive_seed(config.seed, 7))?;
    write(
        &out.join("samples").join("preview.png"),
        grid_sheet_png(preview.grids(), 8, &bundle.codebook)?,
    )?;
    if k > 1 {
        for code in 0..k {
            let s = sample(&bundle, 8, Some(code), derive_seed(config.seed, 8 + code as u64))?;
            write(
                &out.join("samples").join(format!("code_{code}.png")),
                grid_sheet_png(s.grids(), 8, &bundle.codebook)?,
            )?;
        }
    }
    manifest.inventory(out)?;
    manifest.finish();
    manifest.write(&out.join(MANIFEST))?;
    eprintln!("run complete: {}", out.display());
    Ok(Outcome::Success)
}

fn sample_cmd(a: SampleArgs, ctx: &Invocation) -> Result<Outcome> {
    let bundle = load_bundle(&a.bundle)?;
    let seed = ctx.seed(a.seed);
    let mut manifest = RunManifest::start(
        "sample",
        ctx.args.clone(),
        seed,
        json!({ "count": a.count, "code": a.code }),
    );
    manifest.add_input(&a.bundle)?;
    let ens = sample(&bundle, a.count, a.code, seed)?;
    write(&a.out, ens.to_bytes()?)?;
    let mut files = vec![a.out.clone()];
    if a.preview > 0 {
        let n = a.preview.min(ens.len());
        let png = sidecar(&a.out, ".png");
        write(&png, grid_sheet_png(&ens.grids()[..n], 8, ens.codebook())?)?;
        files.push(png);
    }
    finish_file_outputs(manifest, &a.out, &files)?;
    eprintln!("wrote {} samples to {}", ens.len(), a.out.display());
    Ok(Outcome::Success)
}

/// Label counts of a generated ensemble against a uniform code prior.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelBalance {
    pub counts: Vec<usize>,
    pub expected: f64,
    /// Binomial standard deviation of one count.
    pub sigma: f64,
    /// Every count within three standard deviations.
    pub pass: bool,
}

pub fn label_balance(counts: &[usize]) -> LabelBalance {
    let n: usize = counts.iter().sum();
    let p = 1.0 / counts.len() as f64;
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let pass = counts.iter().all(|&c| (c as f64 - expected).abs() <= 3.0 * sigma);
    LabelBalance {
        counts: counts.to_vec(),
        expected,
        sigma,
        pass,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifierScore {
    pub accuracy: f64,
    pub min_accuracy: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub bias: BiasReport,
    pub label_balance: Option<LabelBalance>,
    pub classifier: Option<ClassifierScore>,
}

fn validate(a: ValidateArgs, ctx: &Invocation) -> Result<Outcome> {
    let cfg = WorkbenchConfig::load_or_default(a.config.as_deref())?.validate;
    let train = load_ensemble(&a.train)?;
    let gen = load_ensemble(&a.gen)?;
    let scored = match (&a.bundle, &a.test) {
        (Some(b), Some(t)) => Some((load_bundle(b)?, load_ensemble(t)?)),
        _ => None,
    };
    let out = &a.out;
    let _lock = RunLock::acquire(out)?;
    let mut manifest = RunManifest::start("validate", ctx.args.clone(), 0, json!({ "validate": to_json(&cfg) }));
    for p in [Some(&a.train), Some(&a.gen), a.config.as_ref(), a.bundle.as_ref(), a.test.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.add_input(p)?;
    }

    let codes: Vec<u8> = train.codebook().codes().collect();
    let bias = bias_report(&train, &gen, &codes, &cfg.thresholds())
        .map_err(|e| UsageError(format!("ensembles are not comparable: {e}")))?;
    let (h, w) = train.dims().expect("non-empty ensemble");
    for &f in &codes {
        for (tag, ens) in [("train", &train), ("gen", &gen)] {
            let map = etype(ens, f)?;
            write(&out.join(format!("etype_f{f}_{tag}.png")), probability_png(&map.values(), h, w)?)?;
            write(
                &out.join(format!("hist_f{f}_{tag}.csv")),
                etype_histogram(&map, cfg.bins)?.to_csv(),
            )?;
        }
    }
    let label_balance = match gen.labels() {
        Some(_) if gen.categories() > 1 => Some(label_balance(&gen.label_histogram(gen.categories()))),
        _ => None,
    };
    let classifier = match &scored {
        Some((bundle, test)) => {
            let cm = classify_accuracy(bundle, test)?;
            write(&out.join("confusion.csv"), cm.to_csv())?;
            let accuracy = cm.accuracy();
            Some(ClassifierScore {
                accuracy,
                min_accuracy: cfg.min_accuracy,
                pass: accuracy >= cfg.min_accuracy,
            })
        }
        None => None,
    };
    let pass = bias.pass
        && label_balance.as_ref().is_none_or(|b| b.pass)
        && classifier.as_ref().is_none_or(|c| c.pass);
    let verdict = Verdict {
        pass,
        bias,
        label_balance,
        classifier,
    };
    write(&out.join("verdict.json"), serde_json::to_string_pretty(&verdict)? + "\n")?;
    manifest.inventory(out)?;
    manifest.finish();
    manifest.write(&out.join(MANIFEST))?;
    for f in &verdict.bias.facies {
        eprintln!(
            "facies {}: mean {:.4} vs {:.4}, std ratio {:.3}, max pixel delta {:.4} -> {}",
            f.facies,
            f.gen_mean,
            f.train_mean,
            f.std_ratio,
            f.max_pixel_delta,
            if f.pass { "pass" } else { "FAIL" }
        );
    }
    if let Some(c) = &verdict.classifier {
        eprintln!("classifier accuracy {:.4}", c.accuracy);
    }
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass {
        Outcome::Success
    } else {
        Outcome::ValidationFailed
    })
}

#[derive(Clone, Debug, Serialize)]
struct RunSummary {
    index: usize,
    seed: u64,
    code: Option<usize>,
    iterations: usize,
    converged: bool,
    final_match: Option<f64>,
    fault: Option<String>,
}

fn condition(a: ConditionArgs, ctx: &Invocation) -> Result<Outcome> {
    let cfg = WorkbenchConfig::load_or_default(a.config.as_deref())?.condition;
    let bundle = load_bundle(&a.bundle)?;
    let net = bundle.generator.config();
    let wells = WellSet::load(input(&a.wells)?, net.height, net.width, &bundle.codebook)
        .with_context(|| format!("reading wells {}", a.wells.display()))?;
    if a.count == 0 {
        return Err(UsageError("--count must be at least 1".into()).into());
    }
    let seed = ctx.seed(a.seed);
    let out = &a.out;
    let _lock = RunLock::acquire(out)?;
    let mut manifest = RunManifest::start(
        "condition",
        ctx.args.clone(),
        seed,
        json!({ "count": a.count, "condition": to_json(&cfg) }),
    );
    for p in [Some(&a.bundle), Some(&a.wells), a.config.as_ref()].into_iter().flatten() {
        manifest.add_input(p)?;
    }

    let seeds = conditional_seeds(seed, a.count);
    let results = condition_many(&bundle, &wells, &cfg, &seeds)?;
    let mut runs = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let (trace, fault) = match r {
            Ok(t) => (t, None),
            Err(GanError::ConditioningFault { reason, trace }) => (trace.as_ref(), Some(reason.clone())),
            Err(e) => return Err(anyhow::anyhow!("conditioning run {i}: {e}")),
        };
        write(&out.join("traces").join(format!("trace_{i:04}.csv")), trace.to_csv())?;
        if fault.is_none() {
            write(
                &out.join("samples").join(format!("sample_{i:04}.png")),
                facies_core::raster::grid_png(&trace.final_grid, &bundle.codebook)?,
            )?;
        }
        runs.push(RunSummary {
            index: i,
            seed: seeds[i],
            code: fault.is_none().then_some(trace.code),
            iterations: trace.iterations(),
            converged: fault.is_none() && trace.converged,
            final_match: fault.is_none().then(|| trace.final_match()),
            fault,
        });
    }
    let collected = ConditionalEnsemble::collect(results, &bundle.codebook, cfg.max_failure_fraction);
    let converged = runs.iter().filter(|r| r.converged).count();
    let faults = runs.iter().filter(|r| r.fault.is_some()).count();
    let summary = json!({
        "count": a.count,
        "converged": converged,
        "faults": faults,
        "wells": wells.len(),
        "runs": runs,
    });
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let outcome = match collected {
        Ok(ens) => {
            for map in &ens.etypes {
                write(
                    &out.join(format!("etype_f{}.png", map.facies)),
                    probability_png(&map.values(), net.height, net.width)?,
                )?;
            }
            write(&out.join("conditional.iwgn"), ens.ensemble.to_bytes()?)?;
            Ok(Outcome::Success)
        }
        Err(e) => Err(anyhow::Error::new(e)),
    };
    manifest.inventory(out)?;
    manifest.finish();
    manifest.write(&out.join(MANIFEST))?;
    eprintln!(
        "{converged} of {} runs reached the stop threshold, {faults} faulted",
        a.count
    );
    outcome
}

fn report_cmd(a: ReportArgs) -> Result<Outcome> {
    if !a.run.join(MANIFEST).is_file() {
        return Err(UsageError(format!("{} is not a run directory (no {MANIFEST})", a.run.display())).into());
    }
    let _lock = RunLock::acquire(&a.run)?;
    let html = report::render(&a.run)?;
    write(&a.run.join("reports").join("index.html"), html)?;
    eprintln!("wrote {}", a.run.join("reports").join("index.html").display());
    Ok(Outcome::Success)
}
