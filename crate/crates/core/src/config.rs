//! Flat `key=value` run configuration.
//!
//! One file carries every backbone, fusion, loss and optimiser setting. Lines
//! starting with `#` and blank lines are ignored; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Channels of stages C2..C5.
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub lora_r: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub adapter_reduction: usize,
    pub prompt_count: usize,
    pub init_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_channels: [32, 64, 128, 256],
            blocks_per_stage: [1, 1, 2, 1],
            lora_r: 24,
            lora_alpha: 48.0,
            lora_dropout: 0.1,
            adapter_reduction: 4,
            prompt_count: 20,
            init_seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_r as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MscadConfig {
    pub common_dim: usize,
}

impl Default for MscadConfig {
    fn default() -> Self {
        Self { common_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub w_focal: f64,
    pub w_dice: f64,
    pub w_lovasz: f64,
    pub focal_gamma: f64,
    /// Per-class focal weights; empty means all ones.
    pub focal_alpha: Vec<f64>,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_focal: 0.4,
            w_dice: 0.3,
            w_lovasz: 0.3,
            focal_gamma: 3.0,
            focal_alpha: Vec::new(),
            dice_eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn alpha(&self, class: usize) -> f64 {
        self.focal_alpha.get(class).copied().unwrap_or(1.0)
    }
}

/// Which optional sub-paths of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub ms_att: bool,
    pub diff_ada: bool,
    pub diff_agg: bool,
    pub dec_att: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            ms_att: true,
            diff_ada: true,
            diff_agg: true,
            dec_att: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrMultipliers {
    /// Adapters and prompt tokens.
    pub adapter: f64,
    pub decoder: f64,
    pub mscad: f64,
    pub lora: f64,
    pub frozen: f64,
}

impl Default for LrMultipliers {
    fn default() -> Self {
        Self {
            adapter: 20.0,
            decoder: 8.0,
            mscad: 8.0,
            lora: 1.0,
            frozen: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch: usize,
    pub t0: f64,
    pub t_mult: f64,
    pub eta_min: f64,
    pub lr_mult: LrMultipliers,
    /// Stop after this many optimiser steps; 0 means no limit.
    pub max_steps: usize,
    pub augment_flip: bool,
    pub augment_rotate: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            batch: 4,
            t0: 30.0,
            t_mult: 2.0,
            eta_min: 1e-7,
            lr_mult: LrMultipliers::default(),
            max_steps: 0,
            augment_flip: true,
            augment_rotate: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Number of change classes; the model predicts `k + 1` channels.
    pub k: usize,
    pub backbone: BackboneConfig,
    pub mscad: MscadConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            k: 6,
            backbone: BackboneConfig::default(),
            mscad: MscadConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

/// A documented configuration key.
pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help }
}

/// Every accepted key, in serialisation order.
pub const KEYS: &[Key] = &[
    key("k", "number of change classes K; class 0 is no-change"),
    key("stage_channels", "channels of backbone stages C2..C5"),
    key("blocks_per_stage", "residual blocks in each backbone stage"),
    key("lora_r", "LoRA rank r"),
    key("lora_alpha", "LoRA scaling alpha; branch scale is alpha/r"),
    key("lora_dropout", "dropout on the LoRA branch input during training"),
    key("adapter_reduction", "bottleneck adapter reduction ratio"),
    key("prompt_count", "number of learnable prompt tokens"),
    key("init_seed", "seed for all parameter initialisation"),
    key("common_dim", "channels of the shared fusion space (full-scale setting 256)"),
    key("w_focal", "focal loss weight"),
    key("w_dice", "dice loss weight"),
    key("w_lovasz", "Lovasz-Softmax loss weight"),
    key("focal_gamma", "focal focusing factor gamma"),
    key("focal_alpha", "per-class focal weights, K+1 values; empty means all ones"),
    key("dice_eps", "dice smoothing epsilon"),
    key("base_lr", "AdamW base learning rate"),
    key("weight_decay", "AdamW decoupled weight decay"),
    key("beta1", "AdamW first-moment decay"),
    key("beta2", "AdamW second-moment decay"),
    key("adam_eps", "AdamW denominator epsilon"),
    key("epochs", "training epochs"),
    key("batch", "samples per optimiser step"),
    key("t0", "first warm-restart cycle length in epochs"),
    key("t_mult", "cycle length multiplier"),
    key("eta_min", "learning rate floor"),
    key("lr_mult_adapter", "LR multiplier for adapters and prompt tokens"),
    key("lr_mult_decoder", "LR multiplier for the decoder head"),
    key("lr_mult_mscad", "LR multiplier for the difference-fusion module"),
    key("lr_mult_lora", "LR multiplier for LoRA factors"),
    key("lr_mult_frozen", "LR multiplier for the frozen trunk; must be 0"),
    key("max_steps", "stop after this many optimiser steps; 0 means no limit"),
    key("augment_flip", "random horizontal and vertical flips"),
    key("augment_rotate", "random rotation by multiples of 90 degrees"),
    key("seed", "seed for shuffling, augmentation and dropout"),
    key("ablate_ms_att", "replace the scale attention with uniform 1/3 weights"),
    key("ablate_diff_ada", "drop the adaptive difference branch"),
    key("ablate_diff_agg", "replace the learned aggregation with D_dir + D_ada"),
    key("ablate_dec_att", "bypass the decoder's sigmoid gate"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_four(key: &str, value: &str) -> Result<[usize; 4]> {
    let v: Vec<usize> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| Error::config(key, "expected four comma-separated values"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (b, l, t) = (&mut self.backbone, &mut self.loss, &mut self.train);
        match key {
            "k" => self.k = parse(key, value)?,
            "stage_channels" => b.stage_channels = parse_four(key, value)?,
            "blocks_per_stage" => b.blocks_per_stage = parse_four(key, value)?,
            "lora_r" => b.lora_r = parse(key, value)?,
            "lora_alpha" => b.lora_alpha = parse(key, value)?,
            "lora_dropout" => b.lora_dropout = parse(key, value)?,
            "adapter_reduction" => b.adapter_reduction = parse(key, value)?,
            "prompt_count" => b.prompt_count = parse(key, value)?,
            "init_seed" => b.init_seed = parse(key, value)?,
            "common_dim" => self.mscad.common_dim = parse(key, value)?,
            "w_focal" => l.w_focal = parse(key, value)?,
            "w_dice" => l.w_dice = parse(key, value)?,
            "w_lovasz" => l.w_lovasz = parse(key, value)?,
            "focal_gamma" => l.focal_gamma = parse(key, value)?,
            "focal_alpha" => l.focal_alpha = parse_list(key, value)?,
            "dice_eps" => l.dice_eps = parse(key, value)?,
            "base_lr" => t.base_lr = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "t0" => t.t0 = parse(key, value)?,
            "t_mult" => t.t_mult = parse(key, value)?,
            "eta_min" => t.eta_min = parse(key, value)?,
            "lr_mult_adapter" => t.lr_mult.adapter = parse(key, value)?,
            "lr_mult_decoder" => t.lr_mult.decoder = parse(key, value)?,
            "lr_mult_mscad" => t.lr_mult.mscad = parse(key, value)?,
            "lr_mult_lora" => t.lr_mult.lora = parse(key, value)?,
            "lr_mult_frozen" => t.lr_mult.frozen = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            "augment_flip" => t.augment_flip = parse(key, value)?,
            "augment_rotate" => t.augment_rotate = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "ablate_ms_att" => self.ablation.ms_att = !parse::<bool>(key, value)?,
            "ablate_diff_ada" => self.ablation.diff_ada = !parse::<bool>(key, value)?,
            "ablate_diff_agg" => self.ablation.diff_agg = !parse::<bool>(key, value)?,
            "ablate_dec_att" => self.ablation.dec_att = !parse::<bool>(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Textual value of a key, in the form accepted by [`Config::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let (b, l, t) = (&self.backbone, &self.loss, &self.train);
        Some(match key {
            "k" => self.k.to_string(),
            "stage_channels" => join(&b.stage_channels),
            "blocks_per_stage" => join(&b.blocks_per_stage),
            "lora_r" => b.lora_r.to_string(),
            "lora_alpha" => b.lora_alpha.to_string(),
            "lora_dropout" => b.lora_dropout.to_string(),
            "adapter_reduction" => b.adapter_reduction.to_string(),
            "prompt_count" => b.prompt_count.to_string(),
            "init_seed" => b.init_seed.to_string(),
            "common_dim" => self.mscad.common_dim.to_string(),
            "w_focal" => l.w_focal.to_string(),
            "w_dice" => l.w_dice.to_string(),
            "w_lovasz" => l.w_lovasz.to_string(),
            "focal_gamma" => l.focal_gamma.to_string(),
            "focal_alpha" => join(&l.focal_alpha),
            "dice_eps" => l.dice_eps.to_string(),
            "base_lr" => t.base_lr.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch" => t.batch.to_string(),
            "t0" => t.t0.to_string(),
            "t_mult" => t.t_mult.to_string(),
            "eta_min" => t.eta_min.to_string(),
            "lr_mult_adapter" => t.lr_mult.adapter.to_string(),
            "lr_mult_decoder" => t.lr_mult.decoder.to_string(),
            "lr_mult_mscad" => t.lr_mult.mscad.to_string(),
            "lr_mult_lora" => t.lr_mult.lora.to_string(),
            "lr_mult_frozen" => t.lr_mult.frozen.to_string(),
            "max_steps" => t.max_steps.to_string(),
            "augment_flip" => t.augment_flip.to_string(),
            "augment_rotate" => t.augment_rotate.to_string(),
            "seed" => t.seed.to_string(),
            "ablate_ms_att" => (!self.ablation.ms_att).to_string(),
            "ablate_diff_ada" => (!self.ablation.diff_ada).to_string(),
            "ablate_diff_agg" => (!self.ablation.diff_agg).to_string(),
            "ablate_dec_att" => (!self.ablation.dec_att).to_string(),
            _ => return None,
        })
    }

    /// Parses a config file body on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values without validating.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text: every key in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{}={}", k.name, self.get(k.name).expect("every listed key is readable"));
        }
        out
    }

    /// 64-bit FNV-1a of the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        let l = &self.loss;
        let t = &self.train;
        let check = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(key, msg)) };
        check(self.k >= 1, "k", "need at least one change class")?;
        check(b.stage_channels.iter().all(|&c| c > 0), "stage_channels", "channels must be positive")?;
        check(b.lora_r >= 1, "lora_r", "rank must be at least 1")?;
        check(b.lora_alpha > 0.0, "lora_alpha", "must be positive")?;
        check((0.0..1.0).contains(&b.lora_dropout), "lora_dropout", "must lie in [0, 1)")?;
        check(b.adapter_reduction >= 1, "adapter_reduction", "must be at least 1")?;
        check(
            b.stage_channels.iter().all(|&c| c >= b.adapter_reduction),
            "adapter_reduction",
            "exceeds a stage width",
        )?;
        check(self.mscad.common_dim >= 1, "common_dim", "must be at least 1")?;
        for (key, w) in [("w_focal", l.w_focal), ("w_dice", l.w_dice), ("w_lovasz", l.w_lovasz)] {
            check(w >= 0.0, key, "loss weights must be nonnegative")?;
        }
        check(l.focal_gamma >= 0.0, "focal_gamma", "must be nonnegative")?;
        check(l.dice_eps > 0.0, "dice_eps", "must be positive")?;
        check(
            l.focal_alpha.is_empty() || l.focal_alpha.len() == self.k + 1,
            "focal_alpha",
            "needs exactly K+1 values",
        )?;
        check(l.focal_alpha.iter().all(|&a| a > 0.0), "focal_alpha", "entries must be positive")?;
        check(t.base_lr >= 0.0, "base_lr", "must be nonnegative")?;
        check(t.eta_min >= 0.0 && t.eta_min <= t.base_lr, "eta_min", "must lie in [0, base_lr]")?;
        check((0.0..1.0).contains(&t.beta1), "beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&t.beta2), "beta2", "must lie in [0, 1)")?;
        check(t.adam_eps > 0.0, "adam_eps", "must be positive")?;
        check(t.batch >= 1, "batch", "must be at least 1")?;
        check(t.t0 > 0.0, "t0", "must be positive")?;
        check(t.t_mult >= 1.0, "t_mult", "must be at least 1")?;
        let m = &t.lr_mult;
        for (key, v) in [
            ("lr_mult_adapter", m.adapter),
            ("lr_mult_decoder", m.decoder),
            ("lr_mult_mscad", m.mscad),
            ("lr_mult_lora", m.lora),
        ] {
            check(v >= 0.0, key, "multipliers must be nonnegative")?;
        }
        check(m.frozen == 0.0, "lr_mult_frozen", "the frozen trunk multiplier must be exactly 0")?;
        Ok(())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
