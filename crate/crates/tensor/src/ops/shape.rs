use super::broadcast_offsets;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::rng::Rng;
use crate::tape::{Op, Var};
use crate::tensor::{split_axis, Tensor};
use crate::Mode;

impl<'t, T: Element> Var<'t, T> {
    /// Sums over `axes`. With `keepdim` the reduced extents stay as 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(axes, keepdim, false)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(axes, keepdim, true)
    }

    /// Sum of every element as a 0-d scalar.
    pub fn sum_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.value().ndim()).collect();
        self.reduce(&axes, false, false).expect("all axes are valid")
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.value().ndim()).collect();
        self.reduce(&axes, false, true).expect("all axes are valid")
    }

    fn reduce(&self, axes: &[usize], keepdim: bool, mean: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        let mut kept = x.shape().to_vec();
        for &a in axes {
            if a >= kept.len() {
                return Err(TensorError::dim(
                    "reduce",
                    format!("axis {a} out of range for shape {:?}", x.shape()),
                ));
            }
            kept[a] = 1;
        }
        let count: usize = axes
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|&a| x.shape()[a])
            .product();
        let offsets = broadcast_offsets(x.shape(), &kept);
        let mut acc = vec![T::zero(); kept.iter().product()];
        for (&o, &v) in offsets.iter().zip(x.data()) {
            acc[o] += v;
        }
        if mean && count > 0 {
            let inv = T::one() / T::of(count as f64);
            acc.iter_mut().for_each(|v| *v *= inv);
        }
        let out = self.derive(
            Tensor::new(&kept, acc)?,
            Op::Reduce { x: self.id, mean },
            &[self.id],
        );
        if keepdim {
            Ok(out)
        } else {
            let squeezed: Vec<usize> = kept
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            out.reshape(&squeezed)
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = Tensor::new(shape, x.data().to_vec())?;
        Ok(self.derive(out, Op::Reshape { x: self.id }, &[self.id]))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.ndim() || start + len > x.shape()[axis] {
            return Err(TensorError::dim(
                "narrow",
                format!(
                    "range {start}..{} on axis {axis} outside shape {:?}",
                    start + len,
                    x.shape()
                ),
            ));
        }
        let (outer, alen, inner) = split_axis(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(self.derive(
            Tensor::new(&shape, data)?,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    /// Bilinear upsampling of an `N,C,H,W` map by an integer factor.
    ///
    /// Sampling uses half-pixel centres: the source coordinate of output
    /// index `d` is `(d + 0.5) / factor - 0.5`, clamped to the valid range.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.ndim() != 4 {
            return Err(TensorError::dim("upsample_bilinear", format!("expected NCHW, got {:?}", x.shape())));
        }
        if factor == 0 {
            return Err(TensorError::arg("upsample_bilinear", "factor must be positive"));
        }
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (ho, wo) = (h * factor, w * factor);
        let ty = interp_table::<T>(h, factor);
        let tx = interp_table::<T>(w, factor);
        let xd = x.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let a = src[y0 * w + x0];
                    let b = src[y0 * w + x1];
                    let cc = src[y1 * w + x0];
                    let d = src[y1 * w + x1];
                    let top = a + lx * (b - a);
                    let bottom = cc + lx * (d - cc);
                    dst[oy * wo + ox] = top + ly * (bottom - top);
                }
            }
        }
        Ok(self.derive(
            Tensor::new(&[n, c, ho, wo], out)?,
            Op::Upsample { x: self.id, factor },
            &[self.id],
        ))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity in eval mode.
    pub fn dropout(&self, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::arg("dropout", format!("p = {p} outside [0, 1)")));
        }
        if !mode.is_train() || p == 0.0 {
            return Ok(*self);
        }
        let x = self.value();
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.derive(
            Tensor::new(x.shape(), data)?,
            Op::Dropout { x: self.id, mask },
            &[self.id],
        ))
    }

    /// Gathers elements of the flattened tensor; output shape is `[indices.len()]`.
    pub fn index_select(&self, indices: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
            return Err(TensorError::arg(
                "index_select",
                format!("index {bad} out of range for {} elements", x.numel()),
            ));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        Ok(self.derive(
            Tensor::new(&[indices.len()], data)?,
            Op::IndexSelect {
                x: self.id,
                indices: indices.to_vec(),
            },
            &[self.id],
        ))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Element>(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = vars
        .first()
        .ok_or_else(|| TensorError::arg("concat", "no inputs"))?;
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(TensorError::dim("concat", format!("axis {axis} out of range for {base:?}")));
    }
    for (v, val) in vars.iter().zip(&values) {
        first.same_tape(v)?;
        let s = val.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
    }
    let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(&base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    Ok(first.derive(
        Tensor::new(&shape, data)?,
        Op::Concat {
            inputs: ids.clone(),
            axis,
        },
        &ids,
    ))
}

/// (low index, high index, weight of high) per output coordinate.
fn interp_table<T: Element>(len: usize, factor: usize) -> Vec<(usize, usize, T)> {
    (0..len * factor)
        .map(|d| {
            let src = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let l = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, T::of(l))
        })
        .collect()
}

pub(crate) fn reduce_backward<T: Element>(x: &Tensor<T>, out: &Tensor<T>, g: &[T], mean: bool) -> Vec<T> {
    let offsets = broadcast_offsets(x.shape(), out.shape());
    let scale = if mean {
        T::of(out.numel() as f64 / x.numel() as f64)
    } else {
        T::one()
    };
    offsets.iter().map(|&o| g[o] * scale).collect()
}

pub(crate) fn concat_backward<T: Element>(shapes: &[&[usize]], axis: usize, g: &[T]) -> Vec<Vec<T>> {
    let (outer, _, inner) = split_axis(shapes[0], axis);
    let mut parts: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (k, s) in shapes.iter().enumerate() {
            let len = s[axis] * inner;
            parts[k].extend_from_slice(&g[pos..pos + len]);
            pos += len;
        }
    }
    parts
}

pub(crate) fn narrow_backward<T: Element>(
    in_shape: &[usize],
    out_shape: &[usize],
    axis: usize,
    start: usize,
    g: &[T],
) -> Vec<T> {
    let (outer, alen, inner) = split_axis(in_shape, axis);
    let len = out_shape[axis];
    let mut gx = vec![T::zero(); in_shape.iter().product()];
    for o in 0..outer {
        let dst = (o * alen + start) * inner;
        gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    gx
}

pub(crate) fn upsample_backward<T: Element>(in_shape: &[usize], factor: usize, g: &[T]) -> Vec<T> {
    let [n, c, h, w] = [in_shape[0], in_shape[1], in_shape[2], in_shape[3]];
    let (ho, wo) = (h * factor, w * factor);
    let ty = interp_table::<T>(h, factor);
    let tx = interp_table::<T>(w, factor);
    let mut gx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let gsrc = &g[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let gv = gsrc[oy * wo + ox];
                let top = gv * (T::one() - ly);
                let bottom = gv * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bottom * (T::one() - lx);
                dst[y1 * w + x1] += bottom * lx;
            }
        }
    }
    gx
}
