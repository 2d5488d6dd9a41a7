//! Context-enhancing residual refiner, sigmoid self-gate and classifier.

use mcd_tensor::{depthwise_conv2d, Element, Tensor, Var};

use crate::config::Ablation;
use crate::error::{Error, Result};
use crate::mscad::{add_bn, add_conv, conv};
use crate::params::{he_normal, init_rng, Forward, Group, ParamStore};

pub const ENHANCER_DEPTH: usize = 3;
/// Output stride of the decoder input relative to the image.
pub const UPSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    in_channels: usize,
    classes: usize,
    gate: bool,
}

impl Decoder {
    /// Registers parameters under `decoder.`; `classes` is K + 1.
    pub fn build<T: Element>(
        in_channels: usize,
        classes: usize,
        ablation: Ablation,
        seed: u64,
        store: &mut ParamStore<T>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("k", "need at least one change class"));
        }
        let d = in_channels;
        let g = Group::Decoder;
        for i in 0..ENHANCER_DEPTH {
            let u = format!("decoder.unit{i}");
            add_conv(store, seed, &format!("{u}.conv"), g, [d, d, 3, 3], 1.0);
            let name = format!("{u}.dw.w");
            store.add(&name, g, he_normal(&[d, 1, 3, 3], 9, 1.0, &mut init_rng(seed, &name)));
            store.add(format!("{u}.dw.b"), g, Tensor::zeros(&[d]));
            add_bn(store, &format!("{u}.bn"), g, d);
        }
        add_conv(store, seed, "decoder.proj", g, [d, d, 1, 1], 1.0);
        add_conv(store, seed, "decoder.cls", g, [classes, d, 1, 1], 1.0);
        Ok(Self {
            in_channels,
            classes,
            gate: ablation.dec_att,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Three residual units `X + BN(GELU(DW3×3(Conv3×3(X))))`, then a 1×1 projection.
    pub fn context_enhance<'t, T: Element>(&self, fx: &Forward<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape().get(1) != Some(&self.in_channels) {
            return Err(Error::Invalid(format!(
                "decoder expects {} channels, got shape {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let mut y = *x;
        for i in 0..ENHANCER_DEPTH {
            let u = format!("decoder.unit{i}");
            let h = conv(fx, &format!("{u}.conv"), &y, 1)?;
            let dw_b = fx.param(&format!("{u}.dw.b"))?.reshape(&[1, self.in_channels, 1, 1])?;
            let h = depthwise_conv2d(&h, &fx.param(&format!("{u}.dw.w"))?, 1, 1)?.add(&dw_b)?;
            let h = fx.batch_norm(&format!("{u}.bn"), &h.gelu())?;
            y = y.add(&h)?;
        }
        conv(fx, "decoder.proj", &y, 0)
    }

    /// Raw logits at `UPSAMPLE`× the input resolution.
    pub fn classify_and_upsample<'t, T: Element>(&self, fx: &Forward<'t, '_, T>, f: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(conv(fx, "decoder.cls", f, 0)?.upsample_bilinear(UPSAMPLE)?)
    }

    pub fn forward<'t, T: Element>(&self, fx: &Forward<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.context_enhance(fx, x)?;
        let f = if self.gate { attention_gate(&y)? } else { y };
        self.classify_and_upsample(fx, &f)
    }
}

/// `σ(Y) ⊙ Y`.
pub fn attention_gate<'t, T: Element>(y: &Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(y.sigmoid().mul(y)?)
}
