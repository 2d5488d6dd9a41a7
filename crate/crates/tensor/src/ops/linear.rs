use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Op, Var};
use crate::tensor::Tensor;

/// `y = x·Wᵀ + b` for `x: [m, k]`, `W: [d, k]`, `b: [d]`.
pub fn linear<'t, T: Element>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    b: Option<&Var<'t, T>>,
) -> Result<Var<'t, T>> {
    x.same_tape(w)?;
    let (xv, wv) = (x.value(), w.value());
    if xv.ndim() != 2 || wv.ndim() != 2 || xv.shape()[1] != wv.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            lhs: xv.shape().to_vec(),
            rhs: wv.shape().to_vec(),
        });
    }
    let (m, k, d) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
    let mut y = vec![T::zero(); m * d];
    T::gemm(m, k, d, xv.data(), (k, 1), wv.data(), (1, k), T::zero(), &mut y, (d, 1));
    let mut inputs = vec![x.id, w.id];
    if let Some(b) = b {
        x.same_tape(b)?;
        let bv = b.value();
        if bv.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "linear bias",
                lhs: vec![d],
                rhs: bv.shape().to_vec(),
            });
        }
        for row in y.chunks_mut(d) {
            row.iter_mut().zip(bv.data()).for_each(|(v, &bb)| *v += bb);
        }
        inputs.push(b.id);
    }
    Ok(x.derive(
        Tensor::new(&[m, d], y)?,
        Op::Linear {
            x: x.id,
            w: w.id,
            b: b.map(|b| b.id),
        },
        &inputs,
    ))
}

pub(crate) type Triple<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn linear_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &[T],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> Triple<T> {
    let (m, k, d) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let gx = need_x.then(|| {
        let mut gx = vec![T::zero(); m * k];
        T::gemm(m, d, k, g, (d, 1), w.data(), (k, 1), T::zero(), &mut gx, (k, 1));
        gx
    });
    let gw = need_w.then(|| {
        let mut gw = vec![T::zero(); d * k];
        T::gemm(d, m, k, g, (1, d), x.data(), (k, 1), T::zero(), &mut gw, (k, 1));
        gw
    });
    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); d];
        for row in g.chunks(d) {
            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        gb
    });
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn linear_by_hand() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap(), true);
        let w = tape.leaf(Tensor::from_f64(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(), true);
        let b = tape.leaf(Tensor::from_f64(&[3], &[0.5, 0.5, 0.5]).unwrap(), true);
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.value().data(), &[1.5, 2.5, 3.5]);
        let g = tape.backward(y.sum_all()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 1.0, 1.0]);
    }
}
