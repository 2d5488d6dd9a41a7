use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Op, Var};
use crate::tensor::{split_axis, Tensor};

impl<'t, T: Element> Var<'t, T> {
    /// Softmax along `axis`; every slice along the axis sums to one.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        self.softmax_impl(axis, false)
    }

    /// Numerically stable `ln(softmax(x))` along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        self.softmax_impl(axis, true)
    }

    fn softmax_impl(&self, axis: usize, log: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(TensorError::dim(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", x.shape()),
            ));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| xd[at(a)]).fold(T::neg_infinity(), T::max);
                let sum: T = (0..len).map(|a| (xd[at(a)] - max).exp()).sum();
                if log {
                    let lse = sum.ln();
                    for a in 0..len {
                        y[at(a)] = xd[at(a)] - max - lse;
                    }
                } else {
                    for a in 0..len {
                        y[at(a)] = (xd[at(a)] - max).exp() / sum;
                    }
                }
            }
        }
        let out = Tensor::new(x.shape(), y)?;
        Ok(self.derive(
            out,
            Op::Softmax {
                x: self.id,
                axis,
                log,
            },
            &[self.id],
        ))
    }
}

pub(crate) fn softmax_backward<T: Element>(y: &Tensor<T>, g: &[T], axis: usize, log: bool) -> Vec<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            if log {
                let gs: T = (0..len).map(|a| g[at(a)]).sum();
                for a in 0..len {
                    gx[at(a)] = g[at(a)] - yd[at(a)].exp() * gs;
                }
            } else {
                let dot: T = (0..len).map(|a| g[at(a)] * yd[at(a)]).sum();
                for a in 0..len {
                    gx[at(a)] = yd[at(a)] * (g[at(a)] - dot);
                }
            }
        }
    }
    gx
}
