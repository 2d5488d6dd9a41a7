//! Segmentation losses over `[N, C, H, W]` logits and `[N, H, W]` class maps.

use mcd_tensor::{Element, Tensor, Var};

use crate::config::LossConfig;
use crate::error::{Error, Result};

/// Checks the target against the logits and returns `(n, c, h·w)`.
fn check<T: Element>(logits: &Var<'_, T>, target: &[u8]) -> Result<(usize, usize, usize)> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::Invalid(format!("logits must be [N, C, H, W], got {s:?}")));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    if target.len() != n * hw {
        return Err(Error::Invalid(format!(
            "target has {} pixels but logits cover {}",
            target.len(),
            n * hw
        )));
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= c) {
        return Err(Error::Invalid(format!("target class {bad} outside [0, {c})")));
    }
    Ok((n, c, hw))
}

/// Flat offset of the true-class logit of every pixel, in pixel order.
fn true_class_offsets(target: &[u8], c: usize, hw: usize) -> Vec<usize> {
    target
        .iter()
        .enumerate()
        .map(|(p, &t)| (p / hw * c + t as usize) * hw + p % hw)
        .collect()
}

fn one_hot<T: Element>(target: &[u8], n: usize, c: usize, hw: usize) -> Tensor<T> {
    let mut y = vec![T::zero(); n * c * hw];
    for off in true_class_offsets(target, c, hw) {
        y[off] = T::one();
    }
    Tensor::new(&[n, c, hw], y).expect("shape and length agree")
}

/// `mean_pixels(−α_t (1 − p_t)^γ log p_t)`.
pub fn focal_loss<'t, T: Element>(logits: &Var<'t, T>, target: &[u8], cfg: &LossConfig) -> Result<Var<'t, T>> {
    let (_, c, hw) = check(logits, target)?;
    let logp = logits.log_softmax(1)?.index_select(&true_class_offsets(target, c, hw))?;
    let modulating = logp.exp().neg().add_scalar(1.0).powf(cfg.focal_gamma);
    let mut per_pixel = modulating.mul(&logp)?;
    if cfg.focal_alpha.iter().any(|&a| a != 1.0) {
        let alpha = target.iter().map(|&t| T::of(cfg.alpha(t as usize))).collect();
        let alpha = logits.tape().constant(Tensor::new(&[target.len()], alpha)?);
        per_pixel = per_pixel.mul(&alpha)?;
    }
    Ok(per_pixel.mean_all().neg())
}

/// `mean_c(1 − (2 Σ p y + ε) / (Σ p² + Σ y² + ε))` on softmax probabilities.
pub fn dice_loss<'t, T: Element>(logits: &Var<'t, T>, target: &[u8], cfg: &LossConfig) -> Result<Var<'t, T>> {
    let (n, c, hw) = check(logits, target)?;
    let tape = logits.tape();
    let p = logits.softmax(1)?.reshape(&[n, c, hw])?;
    let y = one_hot::<T>(target, n, c, hw);
    let y_sq = tape.constant(sum_per_class(&y));
    let y = tape.constant(y);
    let inter = p.mul(&y)?.sum_axes(&[0, 2], false)?;
    let p_sq = p.mul(&p)?.sum_axes(&[0, 2], false)?;
    let num = inter.scale(2.0).add_scalar(cfg.dice_eps);
    let den = p_sq.add(&y_sq)?.add_scalar(cfg.dice_eps);
    Ok(num.div(&den)?.neg().add_scalar(1.0).mean_all())
}

fn sum_per_class<T: Element>(y: &Tensor<T>) -> Tensor<T> {
    let (n, c, hw) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut s = vec![T::zero(); c];
    for b in 0..n {
        for (k, acc) in s.iter_mut().enumerate() {
            *acc += y.data()[(b * c + k) * hw..(b * c + k + 1) * hw].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[c], s).expect("shape and length agree")
}

/// Gradient of the Jaccard loss along a prefix order: entry `j` is
/// `J(j+1) − J(j)` with `J(j) = 1 − |gt \ first j| / |gt ∪ first j|`.
pub fn jaccard_gradient(sorted_gt: &[bool]) -> Vec<f64> {
    let gts = sorted_gt.iter().filter(|&&g| g).count() as f64;
    let mut g = Vec::with_capacity(sorted_gt.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &fg in sorted_gt {
        if fg {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let j = 1.0 - (gts - cum_fg) / (gts + cum_bg);
        g.push(j - prev);
        prev = j;
    }
    g
}

/// Lovász-Softmax: the Lovász extension of the per-class Jaccard loss,
/// evaluated on `|y − p|` and averaged over classes present in `target`.
pub fn lovasz_softmax<'t, T: Element>(logits: &Var<'t, T>, target: &[u8], _cfg: &LossConfig) -> Result<Var<'t, T>> {
    let (n, c, hw) = check(logits, target)?;
    let tape = logits.tape();
    let probs = logits.softmax(1)?;
    let mut total: Option<Var<'t, T>> = None;
    let mut present = 0usize;
    for class in 0..c {
        let fg: Vec<bool> = target.iter().map(|&t| t as usize == class).collect();
        if !fg.iter().any(|&f| f) {
            continue;
        }
        present += 1;
        let p = probs.narrow(1, class, 1)?.reshape(&[n * hw])?;
        let y = tape.constant(Tensor::new(&[n * hw], fg.iter().map(|&f| if f { T::one() } else { T::zero() }).collect())?);
        let err = y.sub(&p)?.abs();
        let ev = err.value();
        let mut order: Vec<usize> = (0..n * hw).collect();
        // stable: equal errors keep pixel order
        order.sort_by(|&a, &b| ev.data()[b].partial_cmp(&ev.data()[a]).unwrap_or(std::cmp::Ordering::Equal));
        let sorted_gt: Vec<bool> = order.iter().map(|&i| fg[i]).collect();
        let grad = jaccard_gradient(&sorted_gt);
        let grad = tape.constant(Tensor::new(&[grad.len()], grad.into_iter().map(T::of).collect())?);
        let term = err.index_select(&order)?.mul(&grad)?.sum_all();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::Invalid("target has no pixels".into()))?;
    Ok(total.scale(1.0 / present as f64))
}

/// Individual loss values of one composite evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub focal: f64,
    pub dice: f64,
    pub lovasz: f64,
}

/// `w_focal·focal + w_dice·dice + w_lovasz·lovasz`; zero-weight terms are skipped.
pub fn composite_loss<'t, T: Element>(
    logits: &Var<'t, T>,
    target: &[u8],
    cfg: &LossConfig,
) -> Result<(Var<'t, T>, LossParts)> {
    check(logits, target)?;
    let mut parts = LossParts {
        focal: 0.0,
        dice: 0.0,
        lovasz: 0.0,
    };
    let mut total: Option<Var<'t, T>> = None;
    type LossFn<'t, T> = fn(&Var<'t, T>, &[u8], &LossConfig) -> Result<Var<'t, T>>;
    let terms: [(f64, LossFn<'t, T>, &mut f64); 3] = [
        (cfg.w_focal, focal_loss, &mut parts.focal),
        (cfg.w_dice, dice_loss, &mut parts.dice),
        (cfg.w_lovasz, lovasz_softmax, &mut parts.lovasz),
    ];
    for (w, f, slot) in terms {
        if w == 0.0 {
            continue;
        }
        let l = f(logits, target, cfg)?;
        *slot = l.item().expect("scalar").as_f64();
        let term = l.scale(w);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let total = total.unwrap_or_else(|| logits.tape().constant(Tensor::scalar(T::zero())));
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcd_tensor::Tape;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn focal_half_probability() {
        // two classes with equal logits: p_t = 0.5
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let l = focal_loss(&logits, &[1], &cfg()).unwrap().item().unwrap();
        assert!((l - 0.125 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - 0.086643).abs() < 1e-6);
    }

    #[test]
    fn dice_worked_example() {
        // positive class: y = (1,0,0,0), p = (0.5,0.5,0,0)
        let p = [0.5f64, 0.5, 1e-300, 1e-300];
        let logits: Vec<f64> = p.iter().map(|&v| v.ln()).chain(p.iter().map(|&v| (1.0 - v).ln())).collect();
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::from_f64(&[1, 2, 2, 2], &logits).unwrap());
        let target = [0u8, 1, 1, 1];
        let probs = logits.softmax(1).unwrap().value();
        assert!((probs.data()[0] - 0.5).abs() < 1e-15);
        let cfg = cfg();
        let l = dice_loss(&logits, &target, &cfg).unwrap().item().unwrap();
        let eps = cfg.dice_eps;
        let class0 = 1.0 - (1.0 + eps) / (0.5 + 1.0 + eps);
        let class1 = 1.0 - (2.0 * 2.5 + eps) / (2.5 + 3.0 + eps);
        assert!((class0 - 1.0 / 3.0).abs() < 1e-5);
        assert!((l - (class0 + class1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let target = [0u8, 2, 1, 2];
        let mut logits = vec![-30.0; 12];
        for (p, &t) in target.iter().enumerate() {
            logits[t as usize * 4 + p] = 30.0;
        }
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::from_f64(&[1, 3, 2, 2], &logits).unwrap());
        let (l, parts) = composite_loss(&logits, &target, &cfg()).unwrap();
        assert!(l.item().unwrap() <= 1e-5, "{parts:?}");
    }

    #[test]
    fn out_of_range_target() {
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 2, 1, 2]));
        assert!(focal_loss(&logits, &[0, 2], &cfg()).is_err());
        assert!(dice_loss(&logits, &[0], &cfg()).is_err());
    }

    #[test]
    fn jaccard_gradient_sums_to_full_loss() {
        let g = jaccard_gradient(&[true, false, true, false]);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], 0.5);
    }
}
