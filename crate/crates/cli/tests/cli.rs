use std::path::Path;
use std::process::{Command, Output};

use mcd_core::checkpoint::Checkpoint;
use mcd_core::config::KEYS;
use mcd_core::data::{load_split, write_gray, DatasetManifest};
use mcd_core::train::predict;
use mcd_core::{Config, Model};

const TINY: &str = "stage_channels=8,8,16,16\nblocks_per_stage=1,1,1,1\ncommon_dim=8\nlora_r=4\nlora_alpha=8\nprompt_count=2\nepochs=2\nbatch=2\n";

fn mcds(args: &[&str]) -> Output {
    mcds_env(args, None)
}

fn mcds_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcds"));
    cmd.args(args).env_remove("MCDS_SEED");
    if let Some(s) = seed {
        cmd.env("MCDS_SEED", s);
    }
    cmd.output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic data plus a tiny config file in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = mcds(&["synth", "--spec", "count=4,size=32,k=3,seed=7,val=2", "--out", p(&data)]);
    assert!(o.status.success(), "{}", text(&o));
    std::fs::write(dir.path().join("tiny.txt"), TINY).unwrap();
    dir
}

fn train_into(dir: &Path, out: &str, extra: &[&str], seed_env: Option<&str>) -> Output {
    let (cfg, data, out) = (dir.join("tiny.txt"), dir.join("data"), dir.join(out));
    let mut args = vec!["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)];
    args.extend_from_slice(extra);
    mcds_env(&args, seed_env)
}

#[test]
fn missing_data_directory_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-data");
    let o = mcds(&["train", "--data", p(&missing), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains(p(&missing)), "{}", text(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mcds(&["train"]).status.code(), Some(2));
    assert_eq!(mcds(&["verify", "--suite", "bogus"]).status.code(), Some(2));
    assert_eq!(mcds(&["params", "--set", "nonsense=1"]).status.code(), Some(2));
}

#[test]
fn help_documents_every_key_with_its_default() {
    let o = mcds(&["train", "--help"]);
    assert!(o.status.success());
    let help = text(&o);
    let defaults = Config::default();
    for k in KEYS {
        let line = help
            .lines()
            .find(|l| l.split_whitespace().next() == Some(k.name))
            .unwrap_or_else(|| panic!("{} missing from help", k.name));
        let d = defaults.get(k.name).unwrap();
        let shown = if d.is_empty() { "(empty)".to_string() } else { d };
        assert!(line.contains(&format!("default {shown} ")), "{line}");
    }
}

#[test]
fn train_writes_outputs_and_repeats_exactly() {
    let dir = workspace();
    let a = train_into(dir.path(), "a", &["--seed", "5"], None);
    assert!(a.status.success(), "{}", text(&a));
    for f in ["history.csv", "best.ckpt", "config.txt", "report.txt"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    let b = train_into(dir.path(), "b", &["--seed", "5"], None);
    assert!(b.status.success());
    let env = train_into(dir.path(), "env", &[], Some("5"));
    assert!(env.status.success());
    let other = train_into(dir.path(), "other", &["--seed", "6"], None);
    assert!(other.status.success());

    let read = |run: &str| std::fs::read(dir.path().join(run).join("history.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(read("a"), read("env"));
    assert_ne!(read("a"), read("other"));
    let csv = String::from_utf8(read("a")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,val_miou,lr"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn eval_and_predict_use_the_saved_model() {
    let dir = workspace();
    let o = train_into(dir.path(), "run", &[], None);
    assert!(o.status.success(), "{}", text(&o));
    let (ckpt, data, pred) = (dir.path().join("run/best.ckpt"), dir.path().join("data"), dir.path().join("pred"));

    let e = mcds(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data)]);
    assert!(e.status.success(), "{}", text(&e));
    assert!(text(&e).contains("mean (changed)"));

    let o = mcds(&["predict", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&pred), "--compare"]);
    assert!(o.status.success(), "{}", text(&o));

    // palette lookup oracle on every written map
    let cfg = Config::load(&dir.path().join("run/config.txt")).unwrap();
    let mut model: Model<f32> = Model::build(&cfg).unwrap();
    Checkpoint::load(&ckpt).unwrap().restore(&mut model.store).unwrap();
    let (manifest, samples) = load_split(&data, "val").unwrap();
    let maps = predict(&model, &samples, 2).unwrap();
    for (s, m) in samples.iter().zip(&maps) {
        let img = image::open(pred.join(format!("{}.png", s.id))).unwrap().to_rgb8();
        for (i, px) in img.pixels().enumerate() {
            assert_eq!(px.0, manifest.palette[m[i] as usize], "{} pixel {i}", s.id);
        }
        let cmp = image::open(pred.join(format!("{}_compare.png", s.id))).unwrap().to_rgb8();
        for (i, px) in cmp.pixels().enumerate() {
            let expected = match (m[i] > 0, s.label[i] > 0) {
                (true, true) => [255, 255, 255],
                (false, false) => [0, 0, 0],
                (true, false) => [255, 0, 0],
                (false, true) => [0, 255, 0],
            };
            assert_eq!(px.0, expected);
        }
    }
}

#[test]
fn mismatched_config_is_rejected() {
    let dir = workspace();
    assert!(train_into(dir.path(), "run", &[], None).status.success());
    let wrong = dir.path().join("wrong.txt");
    std::fs::write(&wrong, format!("{TINY}k=3\nlora_r=8\n")).unwrap();
    let o = mcds(&[
        "eval",
        "--checkpoint",
        p(&dir.path().join("run/best.ckpt")),
        "--data",
        p(&dir.path().join("data")),
        "--config",
        p(&wrong),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("config hash"), "{}", text(&o));
}

#[test]
fn class_count_must_match_the_data() {
    let dir = workspace();
    let o = train_into(dir.path(), "run", &["--set", "k=5"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("classes"), "{}", text(&o));
}

#[test]
fn convert_applies_the_change_rule() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, same, out) = (
        dir.path().join("a.png"),
        dir.path().join("b.png"),
        dir.path().join("same.png"),
        dir.path().join("out.png"),
    );
    write_gray(&a, 3, 2, vec![1, 2, 3, 0, 4, 4]).unwrap();
    write_gray(&b, 3, 2, vec![1, 5, 0, 2, 4, 6]).unwrap();
    assert!(mcds(&["convert", "--t1", p(&a), "--t2", p(&b), "--out", p(&out)]).status.success());
    let img = image::open(&out).unwrap().to_luma8();
    assert_eq!(img.into_raw(), [0, 5, 0, 2, 0, 6]);

    assert!(mcds(&["convert", "--t1", p(&a), "--t2", p(&a), "--out", p(&same)]).status.success());
    assert!(image::open(&same).unwrap().to_luma8().into_raw().iter().all(|&v| v == 0));
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = workspace();
    let m = DatasetManifest::load(&dir.path().join("data")).unwrap();
    assert_eq!(m.k, 3);
    assert_eq!(load_split(&dir.path().join("data"), "train").unwrap().1.len(), 4);
}

fn lora_count(out: &str) -> usize {
    let line = out.lines().find(|l| l.starts_with("lora ")).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn params_lora_count_doubles_with_rank() {
    let a = mcds(&["params", "--set", "lora_r=12"]);
    let b = mcds(&["params", "--set", "lora_r=24"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(2 * lora_count(&text(&a)), lora_count(&text(&b)));
    // per-rank rows: r, lora, lora/r, trainable
    let stdout = String::from_utf8_lossy(&a.stdout).into_owned();
    let rows: Vec<&str> = stdout
        .lines()
        .filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit()))
        .map(|l| l.split_whitespace().nth(2).unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r == &rows[0]), "slope differs: {rows:?}");
}

#[test]
fn verify_oracles_passes() {
    let o = mcds(&["verify", "--suite", "oracles"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("0 failed"));
}
