use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use facies_gen::config::WorkbenchConfig;
use facies_gen::manifest::{sha256_hex, RunManifest};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_facies-gen"));
    c.env_remove("FACIESGEN_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn facies-gen")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "
[train]
epochs = 2
batch_size = 8
n_critic = 1
z_dim = 4
generator_base = 2
critic_base = 2
head_width = 8
checkpoint_every = 1
recalibration_batches = 1
seed = 5
";

const CONFINED: &str = "
[synth.channel]
position_range = [0.0, 0.5]
";

/// A scratch directory with a small labelled data set and a tiny config.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = run_in(
        dir.path(),
        &["synth", "--case", "mixed2", "--count", "12", "--size", "16", "--seed", "3", "--out", "data.iwgn"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn digest(path: &Path) -> String {
    sha256_hex(&fs::read(path).unwrap())
}

fn outputs(manifest: &Path) -> Vec<(String, String)> {
    RunManifest::load(manifest)
        .unwrap()
        .outputs
        .into_iter()
        .map(|d| (d.path, d.sha256))
        .collect()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_flag_prints_usage() {
    let o = bin().args(["sample", "--bogus"]).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    let o = bin().arg("--version").output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn empty_config_gives_documented_defaults() {
    let cfg = WorkbenchConfig::parse("").unwrap();
    assert_eq!(cfg, WorkbenchConfig::default());
    assert_eq!(cfg.train.epochs, 500);
    assert_eq!(cfg.train.learning_rate, 2e-4);
    assert_eq!(cfg.condition.momentum, 0.999);
    assert_eq!(cfg.validate.max_std_ratio, 2.0);
}

#[test]
fn config_errors_name_the_key() {
    let bad_beta = WorkbenchConfig::parse("[condition]\nbeta = 1.5\n").unwrap_err().0;
    assert!(bad_beta.contains("[condition]") && bad_beta.contains("1.5"), "{bad_beta}");
    let wrong_type = WorkbenchConfig::parse("[train]\nepochs = \"many\"\n").unwrap_err().0;
    assert!(wrong_type.contains("train.epochs"), "{wrong_type}");
    let unknown = WorkbenchConfig::parse("[train]\nepoch = 3\n").unwrap_err().0;
    assert!(unknown.contains("epoch"), "{unknown}");
    let section = WorkbenchConfig::parse("[trian]\n").unwrap_err().0;
    assert!(section.contains("trian"), "{section}");
    assert!(WorkbenchConfig::parse("[validate]\nbins = 1\n").is_err());
    assert!(WorkbenchConfig::parse("[condition]\nr = 0.006\ncode = 1\n").is_ok());
}

#[test]
fn bad_config_file_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[condition]\nbeta = 1.5\n").unwrap();
    fs::write(dir.path().join("w.txt"), "").unwrap();
    let o = run_in(
        dir.path(),
        &["condition", "--bundle", "x.ckpt", "--wells", "w.txt", "--config", "bad.toml", "--out", "c"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["sample", "--bundle", "nope.ckpt", "--count", "3", "--out", "s.iwgn"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn damaged_checkpoint_is_a_runtime_fault() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = run_in(dir.path(), &["sample", "--bundle", "junk.ckpt", "--count", "3", "--out", "s.iwgn"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn epochs_round_trip_into_the_manifest() {
    let dir = workspace();
    let d = dir.path();
    fs::write(
        d.join("long.toml"),
        "[train]\nepochs = 500\nbatch_size = 24\nn_critic = 1\nz_dim = 2\ngenerator_base = 1\n\
         critic_base = 1\nhead_width = 2\ncheckpoint_every = 0\nrecalibration_batches = 1\n",
    )
    .unwrap();
    let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "long.toml", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = RunManifest::load(&d.join("run/manifest.json")).unwrap();
    assert_eq!(m.config["train"]["epochs"], 500);
    assert_eq!(m.config["train"]["learning_rate"], 2e-4);
    assert!(d.join("run/checkpoints/checkpoint_0500.ckpt").is_file());
    let log = fs::read_to_string(d.join("run/losses.csv")).unwrap();
    let last_epoch = log.lines().last().unwrap().split(',').nth(1).unwrap();
    assert_eq!(last_epoch, "499");
}

#[test]
fn full_workflow_and_run_layout() {
    let dir = workspace();
    let d = dir.path();
    let data_digest = digest(&d.join("data.iwgn"));
    let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "tiny.toml", "--out", "runs/exp1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = d.join("runs/exp1");
    for p in ["manifest.json", "losses.csv", "checkpoints", "samples", "reports"] {
        assert!(run.join(p).exists(), "{p}");
    }
    assert!(!run.join(".lock").exists());
    let m = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.seed, 5);
    assert!(m.finished.is_some());
    assert!(m.changed_inputs().is_empty());
    let names: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    assert!(names.contains(&"checkpoints/checkpoint_0001.ckpt"));
    assert!(names.contains(&"checkpoints/checkpoint_0002.ckpt"));
    assert!(names.contains(&"losses.csv"));
    for out in &m.outputs {
        assert_eq!(digest(&run.join(&out.path)), out.sha256, "{}", out.path);
    }

    let ckpt = "runs/exp1/checkpoints/checkpoint_0002.ckpt";
    let o = run_in(d, &["sample", "--bundle", ckpt, "--count", "20", "--seed", "4", "--out", "runs/exp1/samples/s.iwgn"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(run.join("samples/s.iwgn.json").is_file());

    let o = run_in(
        d,
        &["validate", "--train", "data.iwgn", "--gen", "runs/exp1/samples/s.iwgn", "--out", "runs/exp1/val",
          "--bundle", ckpt, "--test", "data.iwgn"],
    );
    assert!(matches!(code(&o), 0 | 1), "{}", stderr(&o));
    for p in ["verdict.json", "confusion.csv", "etype_f1_gen.png", "hist_f1_train.csv", "manifest.json"] {
        assert!(run.join("val").join(p).is_file(), "{p}");
    }

    fs::write(d.join("wells.txt"), "1,1,0\n5,5,1\n").unwrap();
    let o = run_in(
        d,
        &["condition", "--bundle", ckpt, "--wells", "wells.txt", "--count", "2", "--out", "runs/exp1/cond"],
    );
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    assert!(run.join("cond/summary.json").is_file());
    assert!(run.join("cond/traces/trace_0001.csv").is_file());

    let o = run_in(d, &["report", "runs/exp1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = fs::read(run.join("reports/index.html")).unwrap();
    let o = run_in(d, &["report", "runs/exp1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(run.join("reports/index.html")).unwrap(), first);
    let html = String::from_utf8(first).unwrap();
    assert!(html.contains("samples/preview.png") && html.contains("w_estimate"));

    assert_eq!(digest(&d.join("data.iwgn")), data_digest, "inputs are never modified");
}

#[test]
fn validate_passes_self_and_fails_confined_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("confined.toml"), CONFINED).unwrap();
    for (out, extra) in [("free.iwgn", None), ("confined.iwgn", Some("confined.toml"))] {
        let mut args = vec!["synth", "--case", "fluvial", "--count", "300", "--size", "32", "--seed", "1", "--out", out];
        if let Some(c) = extra {
            args.extend(["--config", c]);
        }
        let o = run_in(d, &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let o = run_in(d, &["validate", "--train", "free.iwgn", "--gen", "free.iwgn", "--out", "self"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("self/verdict.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);

    let o = run_in(d, &["validate", "--train", "free.iwgn", "--gen", "confined.iwgn", "--out", "biased"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("biased/verdict.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], false);
    assert!(v["bias"]["facies"][1]["std_ratio"].as_f64().unwrap() > 2.0);
}

#[test]
fn commands_are_reproducible() {
    let dir = workspace();
    let d = dir.path();
    for run in ["a", "b"] {
        let o = run_in(
            d,
            &["synth", "--case", "deltaic4", "--count", "5", "--size", "16", "--seed", "9", "--out", &format!("{run}/d.iwgn")],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "tiny.toml", "--out", &format!("{run}/run")]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(outputs(&d.join("a/d.iwgn.json")), outputs(&d.join("b/d.iwgn.json")));
    assert_eq!(outputs(&d.join("a/run/manifest.json")), outputs(&d.join("b/run/manifest.json")));
    for run in ["a", "b"] {
        let o = run_in(
            d,
            &["sample", "--bundle", &format!("{run}/run/checkpoints/checkpoint_0002.ckpt"), "--count", "7",
              "--seed", "2", "--out", &format!("{run}/s.iwgn")],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(digest(&d.join("a/s.iwgn")), digest(&d.join("b/s.iwgn")));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = workspace();
    let d = dir.path();
    let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "tiny.toml", "--out", "full", "--epochs", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "tiny.toml", "--out", "split"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run_in(
        d,
        &["train", "--data", "data.iwgn", "--resume", "split/checkpoints/checkpoint_0001.ckpt", "--out", "split",
          "--epochs", "3"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(d.join("full/checkpoints/checkpoint_0003.ckpt")).unwrap(),
        fs::read(d.join("split/checkpoints/checkpoint_0003.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(d.join("full/losses.csv")).unwrap(),
        fs::read_to_string(d.join("split/losses.csv")).unwrap()
    );
}

#[test]
fn existing_run_is_not_overwritten() {
    let dir = workspace();
    let d = dir.path();
    let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "tiny.toml", "--out", "r", "--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run_in(d, &["train", "--data", "data.iwgn", "--config", "tiny.toml", "--out", "r", "--epochs", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn locked_directory_is_refused() {
    let dir = workspace();
    let d = dir.path();
    fs::create_dir_all(d.join("busy")).unwrap();
    fs::write(d.join("busy/.lock"), "1\n").unwrap();
    let o = run_in(d, &["validate", "--train", "data.iwgn", "--gen", "data.iwgn", "--out", "busy"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
    assert!(!d.join("busy/verdict.json").exists());
}

#[test]
fn seed_environment_variable_overrides() {
    let dir = workspace();
    let d = dir.path();
    let synth = |env: Option<&str>, out: &str| {
        let mut c = bin();
        c.current_dir(d)
            .args(["synth", "--case", "fluvial", "--count", "4", "--size", "16", "--seed", "1", "--out", out]);
        if let Some(v) = env {
            c.env("FACIESGEN_SEED", v);
        }
        c.output().unwrap()
    };
    assert_eq!(code(&synth(Some("77"), "env.iwgn")), 0);
    let o = run_in(d, &["synth", "--case", "fluvial", "--count", "4", "--size", "16", "--seed", "77", "--out", "flag.iwgn"]);
    assert_eq!(code(&o), 0);
    assert_eq!(digest(&d.join("env.iwgn")), digest(&d.join("flag.iwgn")));
    assert_eq!(RunManifest::load(&d.join("env.iwgn.json")).unwrap().seed, 77);
    assert_eq!(code(&synth(Some("seventy"), "bad.iwgn")), 2);
}

#[test]
fn manifest_detects_changed_inputs() {
    let dir = workspace();
    let d = dir.path();
    let o = run_in(d, &["validate", "--train", "data.iwgn", "--gen", "data.iwgn", "--out", "v"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = RunManifest::load(&d.join("v/manifest.json")).unwrap();
    assert!(m.changed_inputs().is_empty());
    fs::write(d.join("data.iwgn"), b"changed").unwrap();
    assert_eq!(m.changed_inputs().len(), 2);
}

#[test]
fn report_needs_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["report", "nowhere"]);
    assert_eq!(code(&o), 2);
}
