//! Frozen hierarchical trunk with bottleneck adapters, LoRA and prompt tokens.
//!
//! The trunk is ConvNeXt-shaped: a 4×4 stride-4 patchify stem, then four
//! stages separated by 2×2 stride-2 downsampling convolutions. Each block is
//! depthwise 3×3 → pointwise expand (×4) → GELU → pointwise project, added back
//! onto its input. All trunk weights are random and frozen.

use mcd_tensor::{conv2d, depthwise_conv2d, Element, Tensor, Var};

use crate::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::params::{he_normal, init_rng, Forward, Group, ParamStore};

pub const EXPANSION: usize = 4;
/// Number of trailing blocks whose pointwise layers carry LoRA.
pub const LORA_BLOCKS: usize = 4;
/// Stages that receive prompt vectors (C2, C3, C4).
pub const PROMPT_STAGES: usize = 3;

/// Backbone outputs at strides 4, 8, 16 and 32.
#[derive(Debug, Clone, Copy)]
pub struct Stages<'t, T: Element> {
    pub c2: Var<'t, T>,
    pub c3: Var<'t, T>,
    pub c4: Var<'t, T>,
    pub c5: Var<'t, T>,
}

impl<'t, T: Element> Stages<'t, T> {
    pub fn to_vec(&self) -> Vec<Var<'t, T>> {
        vec![self.c2, self.c3, self.c4, self.c5]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockSpec {
    prefix: String,
    stage: usize,
    lora: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    cfg: BackboneConfig,
    blocks: Vec<BlockSpec>,
}

/// What the forward pass includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Enhanced,
    TrunkOnly,
}

impl Backbone {
    /// Registers trunk, adapter, LoRA and prompt parameters under `backbone.`.
    pub fn build<T: Element>(cfg: &BackboneConfig, store: &mut ParamStore<T>) -> Result<Self> {
        let ch = cfg.stage_channels;
        let seed = cfg.init_seed;
        let frozen = |store: &mut ParamStore<T>, name: String, shape: &[usize], fan_in: usize, gain: f64| {
            let v = he_normal(shape, fan_in, gain, &mut init_rng(seed, &name));
            store.add(name, Group::Frozen, v);
        };

        frozen(store, "backbone.stem.w".into(), &[ch[0], 3, 4, 4], 48, 1.0);
        store.add("backbone.stem.b", Group::Frozen, Tensor::zeros(&[ch[0]]));

        let total: usize = cfg.blocks_per_stage.iter().sum();
        let mut blocks = Vec::new();
        for s in 0..4 {
            let c = ch[s];
            if s > 0 {
                frozen(store, format!("backbone.s{s}.down.w"), &[c, ch[s - 1], 2, 2], 4 * ch[s - 1], 1.0);
                store.add(format!("backbone.s{s}.down.b"), Group::Frozen, Tensor::zeros(&[c]));
            }
            for j in 0..cfg.blocks_per_stage[s] {
                let prefix = format!("backbone.s{s}.b{j}");
                let lora = blocks.len() + LORA_BLOCKS >= total;
                let hidden = EXPANSION * c;
                frozen(store, format!("{prefix}.dw.w"), &[c, 1, 3, 3], 9, 1.0);
                store.add(format!("{prefix}.dw.b"), Group::Frozen, Tensor::zeros(&[c]));
                frozen(store, format!("{prefix}.expand.w"), &[hidden, c, 1, 1], c, 1.0);
                store.add(format!("{prefix}.expand.b"), Group::Frozen, Tensor::zeros(&[hidden]));
                frozen(store, format!("{prefix}.project.w"), &[c, hidden, 1, 1], hidden, 0.5);
                store.add(format!("{prefix}.project.b"), Group::Frozen, Tensor::zeros(&[c]));

                let red = c / cfg.adapter_reduction;
                let name = format!("{prefix}.adapter.down");
                store.add(&name, Group::Adapter, he_normal(&[red, c], c, 1.0, &mut init_rng(seed, &name)));
                let name = format!("{prefix}.adapter.up");
                store.add(&name, Group::Adapter, he_normal(&[c, red], red, 1.0, &mut init_rng(seed, &name)));
                store.add(format!("{prefix}.adapter.gate"), Group::Adapter, Tensor::zeros(&[1]));

                if lora {
                    for (layer, d, k) in [("expand", hidden, c), ("project", c, hidden)] {
                        if cfg.lora_r > d.min(k) {
                            return Err(Error::config(
                                "lora_r",
                                format!("rank {} exceeds min(d, k) = {} of {prefix}.{layer}", cfg.lora_r, d.min(k)),
                            ));
                        }
                        let name = format!("{prefix}.{layer}.lora_a");
                        let a = he_normal(&[cfg.lora_r, k], k, 0.5, &mut init_rng(seed, &name));
                        store.add(name, Group::Lora, a);
                        store.add(format!("{prefix}.{layer}.lora_b"), Group::Lora, Tensor::zeros(&[d, cfg.lora_r]));
                    }
                }
                blocks.push(BlockSpec { prefix, stage: s, lora });
            }
        }

        if cfg.prompt_count > 0 {
            store.add("backbone.prompt.tokens", Group::Prompt, Tensor::zeros(&[cfg.prompt_count, ch[0]]));
            for s in 0..PROMPT_STAGES {
                let name = format!("backbone.prompt.proj{}", s + 2);
                let k = if s == 0 { ch[0] } else { ch[s - 1] };
                let w = he_normal(&[ch[s], k], k, 0.5, &mut init_rng(seed, &name));
                store.add(name, Group::Prompt, w);
            }
        }
        Ok(Self { cfg: cfg.clone(), blocks })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// `(d, k)` of every LoRA-adapted matrix.
    pub fn adapted_dims(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .filter(|b| b.lora)
            .flat_map(|b| {
                let c = self.cfg.stage_channels[b.stage];
                [(EXPANSION * c, c), (c, EXPANSION * c)]
            })
            .collect()
    }

    /// Enhanced forward pass.
    pub fn forward<'t, T: Element>(&self, fx: &Forward<'t, '_, T>, image: &Var<'t, T>) -> Result<Stages<'t, T>> {
        self.run(fx, image, Variant::Enhanced)
    }

    /// The frozen trunk alone: no adapters, LoRA or prompts.
    pub fn trunk_forward<'t, T: Element>(&self, fx: &Forward<'t, '_, T>, image: &Var<'t, T>) -> Result<Stages<'t, T>> {
        self.run(fx, image, Variant::TrunkOnly)
    }

    fn run<'t, T: Element>(&self, fx: &Forward<'t, '_, T>, image: &Var<'t, T>, variant: Variant) -> Result<Stages<'t, T>> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Invalid(format!("backbone expects [N, 3, H, W] images, got {shape:?}")));
        }
        if !shape[2].is_multiple_of(32) || !shape[3].is_multiple_of(32) {
            return Err(Error::Invalid(format!(
                "input size {}x{} must be a multiple of 32",
                shape[2], shape[3]
            )));
        }
        let enhanced = variant == Variant::Enhanced;
        let mut x = conv2d(
            image,
            &fx.param("backbone.stem.w")?,
            Some(&fx.param("backbone.stem.b")?),
            4,
            0,
        )?;
        let mut tokens = if enhanced && self.cfg.prompt_count > 0 {
            Some(fx.param("backbone.prompt.tokens")?)
        } else {
            None
        };
        let mut outs = Vec::with_capacity(4);
        for s in 0..4 {
            if s > 0 {
                let w = fx.param(&format!("backbone.s{s}.down.w"))?;
                let b = fx.param(&format!("backbone.s{s}.down.b"))?;
                x = conv2d(&x, &w, Some(&b), 2, 0)?;
            }
            for block in self.blocks.iter().filter(|b| b.stage == s) {
                x = self.block(fx, block, &x, enhanced)?;
            }
            if s < PROMPT_STAGES {
                if let Some(t) = tokens {
                    let proj = fx.param(&format!("backbone.prompt.proj{}", s + 2))?;
                    let (y, next) = inject_prompt(&x, &t, &proj)?;
                    x = y;
                    tokens = Some(next);
                }
            }
            outs.push(x);
        }
        Ok(Stages {
            c2: outs[0],
            c3: outs[1],
            c4: outs[2],
            c5: outs[3],
        })
    }

    fn block<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        b: &BlockSpec,
        x: &Var<'t, T>,
        enhanced: bool,
    ) -> Result<Var<'t, T>> {
        let p = &b.prefix;
        let c = x.shape()[1];
        let dw_b = fx.param(&format!("{p}.dw.b"))?.reshape(&[1, c, 1, 1])?;
        let h = depthwise_conv2d(x, &fx.param(&format!("{p}.dw.w"))?, 1, 1)?.add(&dw_b)?;
        let lora = enhanced && b.lora;
        let h = self.pointwise(fx, &format!("{p}.expand"), &h, lora)?.gelu();
        let mut h = self.pointwise(fx, &format!("{p}.project"), &h, lora)?;
        if enhanced {
            h = adapter_forward(fx, &format!("{p}.adapter"), &h)?;
        }
        Ok(x.add(&h)?)
    }

    fn pointwise<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        layer: &str,
        x: &Var<'t, T>,
        lora: bool,
    ) -> Result<Var<'t, T>> {
        let w = fx.param(&format!("{layer}.w"))?;
        let b = fx.param(&format!("{layer}.b"))?;
        if lora {
            let a = fx.param(&format!("{layer}.lora_a"))?;
            let bb = fx.param(&format!("{layer}.lora_b"))?;
            lora_forward(fx, x, &w, &b, &a, &bb, self.cfg.lora_scale(), self.cfg.lora_dropout)
        } else {
            Ok(conv2d(x, &w, Some(&b), 1, 0)?)
        }
    }
}

fn as_kernel<'t, T: Element>(m: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = m.shape();
    if s.len() != 2 {
        return Err(Error::Invalid(format!("expected a matrix, got shape {s:?}")));
    }
    Ok(m.reshape(&[s[0], s[1], 1, 1])?)
}

/// `y = x + s·Up(GELU(Down(x)))`, applied per pixel, with parameters
/// `{prefix}.down: [C/r, C]`, `{prefix}.up: [C, C/r]` and `{prefix}.gate: [1]`.
pub fn adapter_forward<'t, T: Element>(fx: &Forward<'t, '_, T>, prefix: &str, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let down = fx.param(&format!("{prefix}.down"))?;
    let up = fx.param(&format!("{prefix}.up"))?;
    let gate = fx.param(&format!("{prefix}.gate"))?;
    if down.shape().get(1) != x.shape().get(1) {
        return Err(Error::Invalid(format!(
            "{prefix}: adapter width {:?} does not match input channels {:?}",
            down.shape().get(1),
            x.shape().get(1)
        )));
    }
    let h = conv2d(x, &as_kernel(&down)?, None, 1, 0)?.gelu();
    let h = conv2d(&h, &as_kernel(&up)?, None, 1, 0)?;
    Ok(x.add(&h.mul(&gate)?)?)
}

/// `h = W0·x + b0 + (α/r)·B·A·dropout(x)` over the channel axis of an NCHW map.
///
/// `w0: [d, k, 1, 1]`, `a: [r, k]`, `b: [d, r]`.
#[allow(clippy::too_many_arguments)]
pub fn lora_forward<'t, T: Element>(
    fx: &Forward<'t, '_, T>,
    x: &Var<'t, T>,
    w0: &Var<'t, T>,
    b0: &Var<'t, T>,
    a: &Var<'t, T>,
    b: &Var<'t, T>,
    scale: f64,
    dropout: f64,
) -> Result<Var<'t, T>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || bsh[1] != ash[0] || bsh[0] != w0.shape()[0] || ash[1] != w0.shape()[1] {
        return Err(Error::Invalid(format!(
            "LoRA factors {ash:?} and {bsh:?} do not fit host {:?}",
            w0.shape()
        )));
    }
    let host = conv2d(x, w0, Some(b0), 1, 0)?;
    let branch_in = fx.dropout(x, dropout)?;
    let low = conv2d(&branch_in, &as_kernel(a)?, None, 1, 0)?;
    let branch = conv2d(&low, &as_kernel(b)?, None, 1, 0)?;
    Ok(host.add(&branch.scale(scale))?)
}

/// Adds `mean_p(proj · token_p)` to every position of `x` and returns the
/// projected tokens for the next stage.
pub fn inject_prompt<'t, T: Element>(
    x: &Var<'t, T>,
    tokens: &Var<'t, T>,
    proj: &Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let projected = mcd_tensor::linear(tokens, proj, None)?;
    let c = projected.shape()[1];
    if x.shape().get(1) != Some(&c) {
        return Err(Error::Invalid(format!(
            "prompt width {c} does not match stage channels {:?}",
            x.shape().get(1)
        )));
    }
    let v = projected.mean_axes(&[0], false)?.reshape(&[1, c, 1, 1])?;
    Ok((x.add(&v)?, projected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcd_tensor::{Mode, Rng, Tape};

    fn desk() -> (Backbone, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let bb = Backbone::build(&BackboneConfig::default(), &mut store).unwrap();
        (bb, store)
    }

    #[test]
    fn stage_shapes_follow_strides() {
        let (bb, store) = desk();
        let tape = Tape::new();
        let fx = Forward::eval(&tape, &store);
        let img = tape.constant(Tensor::zeros(&[1, 3, 64, 64]));
        let s = bb.forward(&fx, &img).unwrap();
        let shapes: Vec<_> = s.to_vec().iter().map(|v| v.shape()).collect();
        assert_eq!(shapes, vec![vec![1, 32, 16, 16], vec![1, 64, 8, 8], vec![1, 128, 4, 4], vec![1, 256, 2, 2]]);
    }

    #[test]
    fn rejects_non_multiple_of_32() {
        let (bb, store) = desk();
        let tape = Tape::new();
        let fx = Forward::eval(&tape, &store);
        let err = bb.forward(&fx, &tape.constant(Tensor::zeros(&[1, 3, 48, 64]))).unwrap_err();
        assert!(err.to_string().contains("multiple of 32"));
    }

    #[test]
    fn rank_above_width_is_config_error() {
        let cfg = BackboneConfig {
            lora_r: 65,
            ..BackboneConfig::default()
        };
        let err = Backbone::build::<f64>(&cfg, &mut ParamStore::new()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn lora_sits_on_last_four_blocks() {
        let (bb, store) = desk();
        assert_eq!(bb.adapted_dims().len(), 2 * LORA_BLOCKS);
        assert!(store.get("backbone.s0.b0.expand.lora_a").is_none());
        assert!(store.get("backbone.s1.b0.expand.lora_a").is_some());
        assert!(store.get("backbone.s3.b0.project.lora_b").is_some());
    }

    #[test]
    fn fresh_adapter_is_identity() {
        let (_, store) = desk();
        let tape = Tape::new();
        let fx = Forward::new(&tape, &store, Mode::Train, true, Rng::new(0));
        let x = tape.constant(mcd_tensor::gradcheck::random_tensor(&[2, 32, 4, 4], &mut Rng::new(3)));
        let y = adapter_forward(&fx, "backbone.s0.b0.adapter", &x).unwrap();
        assert!(y.value().bit_eq(&x.value()));
    }
}
