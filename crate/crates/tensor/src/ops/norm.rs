use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Op, Var};
use crate::tensor::Tensor;
use crate::Mode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    /// Zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Batch normalisation over the `N, H, W` extents of an `N, C, H, W` map.
///
/// Train mode normalises with the batch statistics and returns the updated
/// running statistics (starting from [`RunningStats::new`] when `running` is
/// `None`). Eval mode normalises with `running`, which must be present.
pub fn batch_norm<'t, T: Element>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    running: Option<&RunningStats<T>>,
    mode: Mode,
) -> Result<(Var<'t, T>, Option<RunningStats<T>>)> {
    x.same_tape(gamma)?;
    x.same_tape(beta)?;
    let xv = x.value();
    if xv.ndim() != 4 {
        return Err(TensorError::dim("batch_norm", format!("expected NCHW, got {:?}", xv.shape())));
    }
    let (n, c, hw) = (xv.shape()[0], xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
    let (gv, bv) = (gamma.value(), beta.value());
    for p in [&gv, &bv] {
        if p.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: xv.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let m = n * hw;
    let xd = xv.data();
    let eps = T::of(BN_EPS);
    let channel = |ch: usize| (0..n).flat_map(move |b| (b * c + ch) * hw..(b * c + ch + 1) * hw);

    let (means, inv_std, updated) = match mode {
        Mode::Train => {
            let start = running.cloned().unwrap_or_else(|| RunningStats::new(c));
            let mom = T::of(BN_MOMENTUM);
            let mut means = vec![T::zero(); c];
            let mut inv = vec![T::zero(); c];
            let mut next = start.clone();
            for ch in 0..c {
                let mean = channel(ch).map(|i| xd[i]).sum::<T>() / T::of(m as f64);
                let var = channel(ch).map(|i| (xd[i] - mean).powi(2)).sum::<T>() / T::of(m as f64);
                means[ch] = mean;
                inv[ch] = T::one() / (var + eps).sqrt();
                let unbiased = if m > 1 { var * T::of(m as f64 / (m - 1) as f64) } else { var };
                next.mean[ch] = (T::one() - mom) * start.mean[ch] + mom * mean;
                next.var[ch] = (T::one() - mom) * start.var[ch] + mom * unbiased;
            }
            (means, inv, Some(next))
        }
        Mode::Eval => {
            let rs = running.ok_or(TensorError::MissingRunningStats)?;
            if rs.mean.len() != c || rs.var.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm running stats",
                    lhs: vec![c],
                    rhs: vec![rs.mean.len()],
                });
            }
            let inv = rs.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (rs.mean.clone(), inv, None)
        }
    };

    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for ch in 0..c {
        let (g, b) = (gv.data()[ch], bv.data()[ch]);
        for i in channel(ch) {
            let h = (xd[i] - means[ch]) * inv_std[ch];
            xhat[i] = h;
            y[i] = g * h + b;
        }
    }
    let out = x.derive(
        Tensor::new(xv.shape(), y)?,
        Op::BatchNorm {
            x: x.id,
            gamma: gamma.id,
            beta: beta.id,
            xhat,
            inv_std,
            train: mode.is_train(),
        },
        &[x.id, gamma.id, beta.id],
    );
    Ok((out, updated))
}

pub(crate) fn batch_norm_backward<T: Element>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    g: &[T],
    train: bool,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::of((n * hw) as f64);
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let mut gx = need_x.then(|| vec![T::zero(); g.len()]);
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |b| (b * c + ch) * hw..(b * c + ch + 1) * hw);
        let sg: T = idx().map(|i| g[i]).sum();
        let sgx: T = idx().map(|i| g[i] * xhat[i]).sum();
        ggamma[ch] = sgx;
        gbeta[ch] = sg;
        if let Some(gx) = gx.as_mut() {
            let k = gamma[ch] * inv_std[ch];
            if train {
                let k = k / m;
                for i in idx() {
                    gx[i] = k * (m * g[i] - sg - xhat[i] * sgx);
                }
            } else {
                for i in idx() {
                    gx[i] = k * g[i];
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn constant_channel_maps_to_beta() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 2, 2], 4.0));
        let gamma = tape.constant(Tensor::from_f64(&[3], &[2.0, 2.0, 2.0]).unwrap());
        let beta = tape.constant(Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap());
        let (y, stats) = batch_norm(&x, &gamma, &beta, None, Mode::Train).unwrap();
        for (i, v) in y.value().data().iter().enumerate() {
            let ch = (i / 4) % 3;
            assert_eq!(*v, [0.1, 0.2, 0.3][ch]);
        }
        let stats = stats.unwrap();
        assert!((stats.mean[0] - 0.4).abs() < 1e-12);
        assert!((stats.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn standardised_batch_passes_through() {
        let tape = Tape::<f64>::new();
        // per channel values ±1: mean 0, biased variance 1
        let x = tape.constant(Tensor::from_f64(&[2, 1, 1, 2], &[1.0, -1.0, -1.0, 1.0]).unwrap());
        let one = tape.constant(Tensor::ones(&[1]));
        let zero = tape.constant(Tensor::zeros(&[1]));
        let (y, _) = batch_norm(&x, &one, &zero, None, Mode::Train).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.value().data().iter().zip(x.value().data()) {
            assert!((a - b * scale).abs() < 1e-15);
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_without_stats_is_error() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert_eq!(
            batch_norm(&x, &g, &b, None, Mode::Eval).unwrap_err(),
            TensorError::MissingRunningStats
        );
        let stats = RunningStats::new(2);
        let (y, upd) = batch_norm(&x, &g, &b, Some(&stats), Mode::Eval).unwrap();
        assert!(upd.is_none());
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }
}
