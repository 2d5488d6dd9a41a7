//! `mcds`: train, evaluate and inspect multi-class change detection models.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use mcd_core::checkpoint::Checkpoint;
use mcd_core::config::KEYS;
use mcd_core::data::{
    agreement_map, colorize, load_split, read_label_png, scd_to_mcd, synth_generate, write_gray, write_rgb, DatasetManifest,
    SynthSpec,
};
use mcd_core::train::{check_classes, evaluate, predict, train};
use mcd_core::verify::{self, Suite};
use mcd_core::{Config, Error, Group, Model};

#[derive(Parser)]
#[command(name = "mcds", version, about = "Multi-class change detection on bi-temporal image pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on `DATA/train`, validating on `DATA/val` (or train when val is empty).
    Train {
        /// key=value config file; unset keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra key=value overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training seed; falls back to MCDS_SEED, then the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the metric block of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Defaults to config.txt next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write colour-coded change maps, and optionally agreement maps.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write `<id>_compare.png`: TP white, TN black, FP red, FN green.
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Turn two semantic label maps into one change label map.
    Convert {
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset, e.g. `--spec count=8,size=64,k=3,seed=7,val=2`.
    Synth {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and oracle suites.
    Verify {
        #[arg(long, default_value = "all", value_name = "gradcheck|oracles|all")]
        suite: String,
    },
    /// Parameter counts per group and the LoRA rank table.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

enum Failure {
    /// Exit 1.
    Verification(String),
    /// Exit 2.
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } => Failure::Verification(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn keys_help() -> String {
    let defaults = Config::default();
    let mut s = String::from("Config keys (key=value, one per line, # comments):\n");
    for k in KEYS {
        let d = defaults.get(k.name).unwrap_or_default();
        let d = if d.is_empty() { "(empty)".to_string() } else { d };
        let _ = writeln!(s, "  {:<18} default {:<14} {}", k.name, d, k.help);
    }
    s
}

fn main() -> ExitCode {
    let help = keys_help();
    let cmd = Cli::command()
        .after_long_help(help.clone())
        .mut_subcommand("train", |c| c.after_long_help(help.clone()))
        .mut_subcommand("params", |c| c.after_long_help(help.clone()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            overrides,
            data,
            out,
            seed,
        } => cmd_train(config.as_deref(), &overrides, &data, &out, seed),
        Command::Eval {
            checkpoint,
            data,
            split,
            config,
        } => cmd_eval(&checkpoint, &data, &split, config.as_deref()),
        Command::Predict {
            checkpoint,
            data,
            split,
            out,
            compare,
            config,
        } => cmd_predict(&checkpoint, &data, &split, &out, compare, config.as_deref()),
        Command::Convert { t1, t2, out } => cmd_convert(&t1, &t2, &out),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
        Command::Verify { suite } => cmd_verify(&suite),
        Command::Params { config, overrides } => cmd_params(config.as_deref(), &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Defaults, then `base` (if any), then the file, then overrides.
fn build_config(base: impl FnOnce(&mut Config), file: Option<&Path>, overrides: &[String]) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    base(&mut cfg);
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        cfg.apply(&text)?;
    }
    for o in overrides {
        cfg.apply(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    fs::write(path, body).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn require_dir(path: &Path) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Input(format!("{}: data directory not found", path.display())))
    }
}

fn cmd_train(config: Option<&Path>, overrides: &[String], data: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    require_dir(data)?;
    let manifest = DatasetManifest::load(data)?;
    let mut cfg = build_config(|c| c.k = manifest.k, config, overrides)?;
    let env_seed = match std::env::var("MCDS_SEED") {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| Failure::Input(format!("MCDS_SEED: cannot parse `{v}`")))?,
        ),
        Err(_) => None,
    };
    if let Some(s) = seed.or(env_seed) {
        cfg.train.seed = s;
    }
    let (_, train_set) = load_split(data, "train")?;
    let (_, val) = load_split(data, "val")?;
    let mut model: Model<f32> = Model::build(&cfg)?;
    check_classes(&model, manifest.k)?;
    fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;

    eprintln!(
        "training on {} samples, validating on {} ({}), {} of {} parameters trainable",
        train_set.len(),
        if val.is_empty() { train_set.len() } else { val.len() },
        if val.is_empty() { "train split" } else { "val split" },
        model.store.trainable_count(),
        model.store.total_count()
    );
    let start = Instant::now();
    let outcome = train(&mut model, &train_set, &val, &mut |r| {
        eprintln!(
            "epoch {:>4}  loss {:.5}  val mIoU {:.4}  lr {:.3e}  steps {}  {:.0}s",
            r.epoch,
            r.train_loss,
            r.val_miou,
            r.lr,
            r.steps,
            start.elapsed().as_secs_f64()
        );
    })?;
    write_file(&out.join("history.csv"), &outcome.history.to_csv())?;

    let ckpt = match &outcome.best {
        Some(best) => {
            model.store = best.store.clone();
            Checkpoint::capture(&best.store, Some(&best.optimizer), best.epoch, cfg.hash())
        }
        None => Checkpoint::capture(&model.store, Some(&outcome.optimizer), 0, cfg.hash()),
    };
    ckpt.save(&out.join("best.ckpt"))?;

    let eval_set = if val.is_empty() { &train_set } else { &val };
    let (_, report) = evaluate(&model, eval_set, cfg.train.batch)?;
    let block = format!(
        "{}\n{}",
        report.table(&manifest.class_names),
        report.key_values()
    );
    write_file(&out.join("report.txt"), &block)?;
    print!("{}", report.table(&manifest.class_names));
    Ok(())
}

fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<(Model<f32>, Checkpoint), Failure> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name("config.txt"),
    };
    if !path.exists() {
        return Err(Failure::Input(format!(
            "{}: config not found; pass --config",
            path.display()
        )));
    }
    let cfg = Config::load(&path)?;
    if cfg.hash() != ckpt.config_hash {
        return Err(Failure::Input(format!(
            "{} does not match the checkpoint's config hash ({:016x} vs {:016x})",
            path.display(),
            cfg.hash(),
            ckpt.config_hash
        )));
    }
    let mut model: Model<f32> = Model::build(&cfg)?;
    ckpt.restore(&mut model.store)?;
    Ok((model, ckpt))
}

fn load_eval_split(data: &Path, split: &str) -> Result<(DatasetManifest, Vec<mcd_core::data::BiTemporalSample>), Failure> {
    require_dir(data)?;
    let (manifest, samples) = load_split(data, split)?;
    if samples.is_empty() {
        return Err(Failure::Input(format!("{}: split `{split}` has no samples", data.display())));
    }
    Ok((manifest, samples))
}

fn cmd_eval(checkpoint: &Path, data: &Path, split: &str, config: Option<&Path>) -> CmdResult {
    let (model, _) = load_model(checkpoint, config)?;
    let (manifest, samples) = load_eval_split(data, split)?;
    check_classes(&model, manifest.k)?;
    let (_, report) = evaluate(&model, &samples, model.config.train.batch)?;
    println!("{} samples, {} pixels", samples.len(), report.pixels);
    print!("{}", report.table(&manifest.class_names));
    Ok(())
}

fn cmd_predict(checkpoint: &Path, data: &Path, split: &str, out: &Path, compare: bool, config: Option<&Path>) -> CmdResult {
    let (model, _) = load_model(checkpoint, config)?;
    let (manifest, samples) = load_eval_split(data, split)?;
    check_classes(&model, manifest.k)?;
    if manifest.palette.len() != model.classes() {
        return Err(Failure::Input(format!(
            "palette has {} colours but the model predicts {} classes",
            manifest.palette.len(),
            model.classes()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    let maps = predict(&model, &samples, model.config.train.batch)?;
    for (s, pred) in samples.iter().zip(&maps) {
        write_rgb(&out.join(format!("{}.png", s.id)), s.width, s.height, colorize(pred, &manifest.palette)?)?;
        if compare {
            write_rgb(
                &out.join(format!("{}_compare.png", s.id)),
                s.width,
                s.height,
                agreement_map(pred, &s.label),
            )?;
        }
    }
    println!("wrote {} maps to {}", maps.len(), out.display());
    Ok(())
}

fn cmd_convert(t1: &Path, t2: &Path, out: &Path) -> CmdResult {
    let (w1, h1, a) = read_label_png(t1)?;
    let (w2, h2, b) = read_label_png(t2)?;
    if (w1, h1) != (w2, h2) {
        return Err(Failure::Input(format!("label sizes differ: {w1}x{h1} vs {w2}x{h2}")));
    }
    write_gray(out, w1, h1, scd_to_mcd(&a, &b)?)?;
    Ok(())
}

fn cmd_synth(spec: &str, out: &Path) -> CmdResult {
    let spec = SynthSpec::parse(spec)?;
    let manifest = synth_generate(&spec, out)?;
    println!(
        "wrote {} train and {} val samples (K = {}) to {}",
        spec.count,
        spec.val,
        manifest.k,
        out.display()
    );
    Ok(())
}

fn cmd_verify(suite: &str) -> CmdResult {
    let suite: Suite = suite.parse()?;
    let checks = verify::run(suite)?;
    print!("{}", verify::table(&checks));
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} checks failed")));
    }
    Ok(())
}

fn cmd_params(config: Option<&Path>, overrides: &[String]) -> CmdResult {
    let cfg = build_config(|_| {}, config, overrides)?;
    let model: Model<f32> = Model::build(&cfg)?;
    println!("{:<10} {:>12} {:>10}", "group", "params", "trainable");
    for (g, n) in model.param_counts() {
        println!("{:<10} {:>12} {:>10}", g.name(), n, if g.trainable() { "yes" } else { "no" });
    }
    let (t, n) = (model.store.trainable_count(), model.store.total_count());
    println!("{:<10} {:>12}", "total", n);
    println!("{:<10} {:>12} ({:.2}%)", "trainable", t, 100.0 * t as f64 / n as f64);

    println!();
    println!("{:>4} {:>12} {:>10} {:>12}", "r", "lora", "lora/r", "trainable");
    for r in [4usize, 8, 16, 24, 32] {
        let mut c = cfg.clone();
        c.backbone.lora_r = r;
        let m: Model<f32> = Model::build(&c)?;
        let l = m.store.count(Group::Lora);
        println!("{:>4} {:>12} {:>10} {:>12}", r, l, l / r, m.store.trainable_count());
    }
    Ok(())
}
