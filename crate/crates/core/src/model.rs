//! The full siamese change-detection network.

use mcd_tensor::{concat, Element, Var};

use crate::backbone::Backbone;
use crate::config::Config;
use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::mscad::Mscad;
use crate::params::{Forward, Group, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element> {
    pub config: Config,
    pub backbone: Backbone,
    pub mscad: Mscad,
    pub decoder: Decoder,
    pub store: ParamStore<T>,
}

impl<T: Element> Model<T> {
    pub fn build(config: &Config) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let seed = config.backbone.init_seed;
        let backbone = Backbone::build(&config.backbone, &mut store)?;
        let ch = config.backbone.stage_channels;
        let mscad = Mscad::build(&config.mscad, config.ablation, [ch[1], ch[2], ch[3]], seed, &mut store)?;
        let decoder = Decoder::build(config.mscad.common_dim, config.k + 1, config.ablation, seed, &mut store)?;
        Ok(Self {
            config: config.clone(),
            backbone,
            mscad,
            decoder,
            store,
        })
    }

    pub fn classes(&self) -> usize {
        self.decoder.classes()
    }

    /// Logits `[N, K+1, H, W]` for image batches `t1`, `t2` of shape `[N, 3, H, W]`.
    pub fn forward<'t>(&self, fx: &Forward<'t, '_, T>, t1: &Var<'t, T>, t2: &Var<'t, T>) -> Result<Var<'t, T>> {
        if t1.shape() != t2.shape() {
            return Err(Error::Invalid(format!(
                "temporal images differ in shape: {:?} vs {:?}",
                t1.shape(),
                t2.shape()
            )));
        }
        let n = t1.shape()[0];
        // one pass over both dates keeps the encoder weights shared by construction
        let stages = self.backbone.forward(fx, &concat(&[*t1, *t2], 0)?)?;
        let c2 = stages.c2.shape();
        let (fused, _) = self
            .mscad
            .align_and_fuse(fx, [&stages.c3, &stages.c4, &stages.c5], (c2[2], c2[3]))?;
        let f1 = fused.narrow(0, 0, n)?;
        let f2 = fused.narrow(0, n, n)?;
        let change = self.mscad.difference(fx, &f1, &f2)?;
        self.decoder.forward(fx, &change)
    }

    /// Writes running-statistics updates collected by a train-mode pass.
    pub fn apply_bn_updates(&mut self, fx_updates: Vec<(String, mcd_tensor::RunningStats<T>)>) -> Result<()> {
        for (name, stats) in fx_updates {
            self.store.set_buffer(&name, stats)?;
        }
        Ok(())
    }

    /// Parameter counts per group.
    pub fn param_counts(&self) -> Vec<(Group, usize)> {
        Group::ALL.iter().map(|&g| (g, self.store.count(g))).collect()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            mscad: self.mscad.clone(),
            decoder: self.decoder.clone(),
            store: self.store.cast(),
        }
    }
}
