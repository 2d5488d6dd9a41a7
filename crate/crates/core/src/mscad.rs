//! Multi-scale cross-attention difference module.
//!
//! Stages C3–C5 of both temporal branches are projected to a common width,
//! upsampled to the C2 grid and fused with per-position softmax weights over
//! the three scales. The two fused maps are then compared directly
//! (`|f1 − f2|`) and through a learned branch, and the two differences are
//! aggregated into the change feature.

use mcd_tensor::{concat, conv2d, Element, Tensor, Var};

use crate::config::{Ablation, MscadConfig};
use crate::error::{Error, Result};
use crate::params::{he_normal, init_rng, Forward, Group, ParamStore};

pub const SCALES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Mscad {
    cfg: MscadConfig,
    ablation: Ablation,
}

pub(crate) fn add_conv<T: Element>(
    store: &mut ParamStore<T>,
    seed: u64,
    name: &str,
    group: Group,
    shape: [usize; 4],
    gain: f64,
) {
    let fan_in = shape[1] * shape[2] * shape[3];
    let w = he_normal(&shape, fan_in, gain, &mut init_rng(seed, &format!("{name}.w")));
    store.add(format!("{name}.w"), group, w);
    store.add(format!("{name}.b"), group, Tensor::zeros(&[shape[0]]));
}

pub(crate) fn add_bn<T: Element>(store: &mut ParamStore<T>, name: &str, group: Group, c: usize) {
    store.add(format!("{name}.gamma"), group, Tensor::ones(&[c]));
    store.add(format!("{name}.beta"), group, Tensor::zeros(&[c]));
    store.add_buffer(name, mcd_tensor::RunningStats::new(c));
}

pub(crate) fn conv<'t, T: Element>(
    fx: &Forward<'t, '_, T>,
    name: &str,
    x: &Var<'t, T>,
    pad: usize,
) -> Result<Var<'t, T>> {
    let w = fx.param(&format!("{name}.w"))?;
    let b = fx.param(&format!("{name}.b"))?;
    Ok(conv2d(x, &w, Some(&b), 1, pad)?)
}

impl Mscad {
    /// Registers parameters under `mscad.`; `in_channels` are the widths of C3, C4, C5.
    pub fn build<T: Element>(
        cfg: &MscadConfig,
        ablation: Ablation,
        in_channels: [usize; 3],
        seed: u64,
        store: &mut ParamStore<T>,
    ) -> Result<Self> {
        let d = cfg.common_dim;
        if d == 0 {
            return Err(Error::config("common_dim", "must be at least 1"));
        }
        let g = Group::Mscad;
        for (i, &c) in in_channels.iter().enumerate() {
            add_conv(store, seed, &format!("mscad.align{}", i + 3), g, [d, c, 1, 1], 1.0);
        }
        if ablation.ms_att {
            add_conv(store, seed, "mscad.att", g, [SCALES, SCALES * d, 1, 1], 0.5);
        }
        if ablation.diff_ada {
            add_conv(store, seed, "mscad.ada.conv", g, [d, 2 * d, 3, 3], 1.0);
            add_bn(store, "mscad.ada.bn", g, d);
            add_conv(store, seed, "mscad.ada.out", g, [d, d, 1, 1], 1.0);
        }
        if ablation.diff_agg {
            let cin = if ablation.diff_ada { 2 * d } else { d };
            add_conv(store, seed, "mscad.agg", g, [d, cin, 1, 1], 1.0);
            add_bn(store, "mscad.agg.bn", g, d);
        }
        Ok(Self { cfg: cfg.clone(), ablation })
    }

    pub fn common_dim(&self) -> usize {
        self.cfg.common_dim
    }

    /// Fuses C3–C5 at `target` (the C2 grid). Also returns the `[N, 3, H, W]`
    /// scale weights.
    pub fn align_and_fuse<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        feats: [&Var<'t, T>; 3],
        target: (usize, usize),
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let n = feats[0].shape()[0];
        let mut aligned = Vec::with_capacity(SCALES);
        for (i, f) in feats.iter().enumerate() {
            let s = f.shape();
            let expected = 2usize << i;
            if s[0] != n {
                return Err(Error::Invalid(format!("scale C{} has batch {} but C3 has {n}", i + 3, s[0])));
            }
            if s[2] * expected != target.0 || s[3] * expected != target.1 {
                return Err(Error::Invalid(format!(
                    "scale C{} is {}x{}; expected 1/{expected} of the {}x{} fusion grid",
                    i + 3,
                    s[2],
                    s[3],
                    target.0,
                    target.1
                )));
            }
            let p = conv(fx, &format!("mscad.align{}", i + 3), f, 0)?;
            aligned.push(p.upsample_bilinear(expected)?);
        }
        let weights = if self.ablation.ms_att {
            let logits = conv(fx, "mscad.att", &concat(&aligned, 1)?, 0)?;
            logits.softmax(1)?
        } else {
            fx.tape().constant(Tensor::full(&[n, SCALES, target.0, target.1], T::of(1.0 / 3.0)))
        };
        let mut fused: Option<Var<'t, T>> = None;
        for (i, a) in aligned.iter().enumerate() {
            let term = weights.narrow(1, i, 1)?.mul(a)?;
            fused = Some(match fused {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        Ok((fused.expect("three scales"), weights))
    }

    /// Learned difference: `[f1; f2]` → 3×3 conv → BN → GELU → 1×1 conv.
    pub fn diff_adaptive<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        f1: &Var<'t, T>,
        f2: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        same_shape(f1, f2)?;
        let h = conv(fx, "mscad.ada.conv", &concat(&[*f1, *f2], 1)?, 1)?;
        let h = fx.batch_norm("mscad.ada.bn", &h)?.gelu();
        conv(fx, "mscad.ada.out", &h, 0)
    }

    /// Concatenation → 1×1 conv → BN → GELU; `d_ada` is omitted when that branch is ablated.
    pub fn aggregate<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        d_dir: &Var<'t, T>,
        d_ada: Option<&Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let x = match d_ada {
            Some(a) => {
                same_shape(d_dir, a)?;
                concat(&[*d_dir, *a], 1)?
            }
            None => *d_dir,
        };
        let h = conv(fx, "mscad.agg", &x, 0)?;
        Ok(fx.batch_norm("mscad.agg.bn", &h)?.gelu())
    }

    /// Change feature from the two temporal stage pyramids.
    pub fn forward<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        t1: [&Var<'t, T>; 3],
        t2: [&Var<'t, T>; 3],
        target: (usize, usize),
    ) -> Result<Var<'t, T>> {
        let (f1, _) = self.align_and_fuse(fx, t1, target)?;
        let (f2, _) = self.align_and_fuse(fx, t2, target)?;
        self.difference(fx, &f1, &f2)
    }

    /// Everything after fusion: direct and adaptive differences and their aggregation.
    pub fn difference<'t, T: Element>(
        &self,
        fx: &Forward<'t, '_, T>,
        f1: &Var<'t, T>,
        f2: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let d_dir = diff_direct(f1, f2)?;
        let d_ada = if self.ablation.diff_ada {
            Some(self.diff_adaptive(fx, f1, f2)?)
        } else {
            None
        };
        if self.ablation.diff_agg {
            self.aggregate(fx, &d_dir, d_ada.as_ref())
        } else {
            match d_ada {
                Some(a) => Ok(d_dir.add(&a)?),
                None => Ok(d_dir),
            }
        }
    }
}

fn same_shape<T: Element>(a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!(
            "temporal features differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `|f1 − f2|`.
pub fn diff_direct<'t, T: Element>(f1: &Var<'t, T>, f2: &Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape(f1, f2)?;
    Ok(f1.sub(f2)?.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcd_tensor::gradcheck::random_tensor;
    use mcd_tensor::{Mode, Rng, Tape};

    fn setup(ablation: Ablation) -> (Mscad, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let m = Mscad::build(&MscadConfig { common_dim: 4 }, ablation, [3, 5, 6], 1, &mut store).unwrap();
        (m, store)
    }

    fn pyramid(tape: &Tape<f64>, seed: u64) -> [Var<'_, f64>; 3] {
        let mut rng = Rng::new(seed);
        [
            tape.constant(random_tensor(&[2, 3, 4, 4], &mut rng)),
            tape.constant(random_tensor(&[2, 5, 2, 2], &mut rng)),
            tape.constant(random_tensor(&[2, 6, 1, 1], &mut rng)),
        ]
    }

    #[test]
    fn scale_weights_are_distributions() {
        let (m, store) = setup(Ablation::default());
        let tape = Tape::new();
        let fx = Forward::eval(&tape, &store);
        let p = pyramid(&tape, 4);
        let (fused, w) = m.align_and_fuse(&fx, [&p[0], &p[1], &p[2]], (8, 8)).unwrap();
        assert_eq!(fused.shape(), vec![2, 4, 8, 8]);
        let sums = w.sum_axes(&[1], false).unwrap().value();
        assert!(sums.data().iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn wrong_stride_is_rejected() {
        let (m, store) = setup(Ablation::default());
        let tape = Tape::new();
        let fx = Forward::eval(&tape, &store);
        let p = pyramid(&tape, 4);
        assert!(m.align_and_fuse(&fx, [&p[0], &p[1], &p[2]], (16, 16)).is_err());
    }

    #[test]
    fn direct_difference_is_symmetric() {
        let tape = Tape::new();
        let mut rng = Rng::new(0);
        let a = tape.constant(random_tensor(&[1, 3, 4, 4], &mut rng));
        let b = tape.constant(random_tensor(&[1, 3, 4, 4], &mut rng));
        let ab = diff_direct(&a, &b).unwrap().value();
        assert!(ab.bit_eq(&diff_direct(&b, &a).unwrap().value()));
        assert!(diff_direct(&a, &a).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ablations_change_parameter_sets() {
        let full = setup(Ablation::default()).1.trainable_count();
        for off in [
            Ablation { ms_att: false, ..Ablation::default() },
            Ablation { diff_ada: false, ..Ablation::default() },
            Ablation { diff_agg: false, ..Ablation::default() },
        ] {
            assert!(setup(off).1.trainable_count() < full, "{off:?}");
        }
    }

    #[test]
    fn full_forward_shape_train_mode() {
        let (m, store) = setup(Ablation::default());
        let tape = Tape::new();
        let fx = Forward::new(&tape, &store, Mode::Train, true, Rng::new(0));
        let a = pyramid(&tape, 1);
        let b = pyramid(&tape, 2);
        let d = m.forward(&fx, [&a[0], &a[1], &a[2]], [&b[0], &b[1], &b[2]], (8, 8)).unwrap();
        assert_eq!(d.shape(), vec![2, 4, 8, 8]);
        assert_eq!(fx.take_bn_updates().len(), 2);
    }
}
