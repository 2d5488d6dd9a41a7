//! Forward implementations live next to their adjoints, one file per family.

mod activation;
mod conv;
mod elementwise;
mod linear;
pub(crate) mod norm;
mod shape;

pub use conv::{conv2d, depthwise_conv2d};
pub use linear::linear;
pub use norm::batch_norm;
pub use shape::concat;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Node, Op};

/// Computes input adjoints for node `id` given its output adjoint `g`.
///
/// Only inputs for which `needs` returns true receive an entry.
pub(crate) fn backward<T: Element>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    needs: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<T>)> {
    let val = |i: usize| &*nodes[i].value;
    let out = val(id);
    let mut grads = Vec::new();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Unary { kind, x } => {
            if needs(*x) {
                grads.push((*x, elementwise::unary_backward(*kind, val(*x), out, g)));
            }
        }
        Op::Binary { kind, a, b } => {
            let (ga, gb) =
                elementwise::binary_backward(*kind, val(*a), val(*b), out, g, needs(*a), needs(*b));
            if let Some(ga) = ga {
                grads.push((*a, ga));
            }
            if let Some(gb) = gb {
                grads.push((*b, gb));
            }
        }
        Op::Softmax { x, axis, log } => {
            if needs(*x) {
                grads.push((*x, activation::softmax_backward(out, g, *axis, *log)));
            }
        }
        Op::Reduce { x, mean } => {
            if needs(*x) {
                grads.push((*x, shape::reduce_backward(val(*x), out, g, *mean)));
            }
        }
        Op::Reshape { x } => {
            if needs(*x) {
                grads.push((*x, g.to_vec()));
            }
        }
        Op::Concat { inputs, axis } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| val(i).shape()).collect();
            for (k, gi) in shape::concat_backward(&shapes, *axis, g).into_iter().enumerate() {
                if needs(inputs[k]) {
                    grads.push((inputs[k], gi));
                }
            }
        }
        Op::Narrow { x, axis, start } => {
            if needs(*x) {
                grads.push((*x, shape::narrow_backward(val(*x).shape(), out.shape(), *axis, *start, g)));
            }
        }
        Op::Linear { x, w, b } => {
            let r = linear::linear_backward(
                val(*x),
                val(*w),
                g,
                needs(*x),
                needs(*w),
                b.map(needs).unwrap_or(false),
            );
            push_some(&mut grads, *x, r.0);
            push_some(&mut grads, *w, r.1);
            if let Some(b) = b {
                push_some(&mut grads, *b, r.2);
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let r = conv::conv2d_backward(
                val(*x),
                val(*w),
                out.shape(),
                g,
                *stride,
                *pad,
                needs(*x),
                needs(*w),
                b.map(needs).unwrap_or(false),
            );
            push_some(&mut grads, *x, r.0);
            push_some(&mut grads, *w, r.1);
            if let Some(b) = b {
                push_some(&mut grads, *b, r.2);
            }
        }
        Op::Depthwise { x, w, stride, pad } => {
            let r = conv::depthwise_backward(
                val(*x),
                val(*w),
                out.shape(),
                g,
                *stride,
                *pad,
                needs(*x),
                needs(*w),
            );
            push_some(&mut grads, *x, r.0);
            push_some(&mut grads, *w, r.1);
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let r = norm::batch_norm_backward(
                val(*x).shape(),
                val(*gamma).data(),
                xhat,
                inv_std,
                g,
                *train,
                needs(*x),
            );
            push_some(&mut grads, *x, r.0);
            if needs(*gamma) {
                grads.push((*gamma, r.1));
            }
            if needs(*beta) {
                grads.push((*beta, r.2));
            }
        }
        Op::Upsample { x, factor } => {
            if needs(*x) {
                grads.push((*x, shape::upsample_backward(val(*x).shape(), *factor, g)));
            }
        }
        Op::Dropout { x, mask } => {
            if needs(*x) {
                grads.push((*x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect()));
            }
        }
        Op::IndexSelect { x, indices } => {
            if needs(*x) {
                let mut gx = vec![T::zero(); val(*x).numel()];
                for (&i, &gi) in indices.iter().zip(g) {
                    gx[i] += gi;
                }
                grads.push((*x, gx));
            }
        }
    }
    grads
}

fn push_some<T>(grads: &mut Vec<(usize, Vec<T>)>, id: usize, g: Option<Vec<T>>) {
    if let Some(g) = g {
        grads.push((id, g));
    }
}

/// Numpy-style broadcast of two shapes (right-aligned, extents of 1 stretch).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out`, the flat offset of the broadcast source in `inp`.
pub(crate) fn broadcast_offsets(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let n = out.len();
    let lead = n - inp.len();
    let mut strides = vec![0usize; n];
    let mut acc = 1;
    for i in (0..inp.len()).rev() {
        if inp[i] != 1 {
            strides[lead + i] = acc;
        }
        acc *= inp[i];
    }
    let total: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..n).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[1, 3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[4], &[2, 1]).unwrap(), vec![2, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[3, 2]).is_err());
    }

    #[test]
    fn offsets_for_channel_vector() {
        let off = broadcast_offsets(&[2, 3, 2], &[3, 1]);
        assert_eq!(off, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2]);
        let same = broadcast_offsets(&[2, 2], &[2, 2]);
        assert_eq!(same, vec![0, 1, 2, 3]);
    }
}
