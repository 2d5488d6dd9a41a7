use super::linear::Triple;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Op, Var};
use crate::tensor::Tensor;

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn geometry(
    op: &'static str,
    x: &[usize],
    w: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Geometry> {
    if x.len() != 4 || w.len() != 4 {
        return Err(TensorError::dim(op, format!("expected 4-d input and kernel, got {x:?} and {w:?}")));
    }
    if stride == 0 {
        return Err(TensorError::arg(op, "stride must be at least 1"));
    }
    let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
    if kh == 0 || kw == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TensorError::dim(
            op,
            format!("kernel {kh}x{kw} does not fit input {h}x{wd} with padding {pad}"),
        ));
    }
    Ok(Geometry {
        n: x[0],
        cin: x[1],
        h,
        w: wd,
        kh,
        kw,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (wd + 2 * pad - kw) / stride + 1,
    })
}

fn is_pointwise(g: &Geometry, stride: usize, pad: usize) -> bool {
    g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0
}

/// 2-D cross-correlation: `x: [N, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`, `b: [Cout]`.
pub fn conv2d<'t, T: Element>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    b: Option<&Var<'t, T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<'t, T>> {
    x.same_tape(w)?;
    let (xv, wv) = (x.value(), w.value());
    let geo = geometry("conv2d", xv.shape(), wv.shape(), stride, pad)?;
    if wv.shape()[1] != geo.cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: xv.shape().to_vec(),
            rhs: wv.shape().to_vec(),
        });
    }
    let cout = wv.shape()[0];
    let bias = match b {
        Some(b) => {
            x.same_tape(b)?;
            let bv = b.value();
            if bv.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: bv.shape().to_vec(),
                });
            }
            Some(bv)
        }
        None => None,
    };

    let k = geo.cin * geo.kh * geo.kw;
    let (hw_in, hw_out) = (geo.h * geo.w, geo.ho * geo.wo);
    let mut y = vec![T::zero(); geo.n * cout * hw_out];
    let mut col = Vec::new();
    for n in 0..geo.n {
        let xn = &xv.data()[n * geo.cin * hw_in..(n + 1) * geo.cin * hw_in];
        let cols: &[T] = if is_pointwise(&geo, stride, pad) {
            xn
        } else {
            im2col(xn, &geo, stride, pad, &mut col);
            &col
        };
        let yn = &mut y[n * cout * hw_out..(n + 1) * cout * hw_out];
        T::gemm(cout, k, hw_out, wv.data(), (k, 1), cols, (hw_out, 1), T::zero(), yn, (hw_out, 1));
        if let Some(bv) = &bias {
            for (row, &bb) in yn.chunks_mut(hw_out).zip(bv.data()) {
                row.iter_mut().for_each(|v| *v += bb);
            }
        }
    }

    let mut inputs = vec![x.id, w.id];
    inputs.extend(b.map(|b| b.id));
    Ok(x.derive(
        Tensor::new(&[geo.n, cout, geo.ho, geo.wo], y)?,
        Op::Conv2d {
            x: x.id,
            w: w.id,
            b: b.map(|b| b.id),
            stride,
            pad,
        },
        &inputs,
    ))
}

/// Unfolds one image into a `[Cin·kh·kw, Ho·Wo]` patch matrix.
fn im2col<T: Element>(x: &[T], g: &Geometry, stride: usize, pad: usize, col: &mut Vec<T>) {
    let hw_out = g.ho * g.wo;
    col.clear();
    col.resize(g.cin * g.kh * g.kw * hw_out, T::zero());
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * hw_out;
                for oy in 0..g.ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut col[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &Geometry, stride: usize, pad: usize, x: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * hw_out;
                for oy in 0..g.ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += col[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    out_shape: &[usize],
    g: &[T],
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> Triple<T> {
    let geo = geometry("conv2d", x.shape(), w.shape(), stride, pad).expect("validated in forward");
    let cout = out_shape[1];
    let k = geo.cin * geo.kh * geo.kw;
    let (hw_in, hw_out) = (geo.h * geo.w, geo.ho * geo.wo);
    let pointwise = is_pointwise(&geo, stride, pad);

    let mut gx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut gw = need_w.then(|| vec![T::zero(); w.numel()]);
    let mut col = Vec::new();
    let mut gcol = Vec::new();
    for n in 0..geo.n {
        let gn = &g[n * cout * hw_out..(n + 1) * cout * hw_out];
        if let Some(gw) = gw.as_mut() {
            let xn = &x.data()[n * geo.cin * hw_in..(n + 1) * geo.cin * hw_in];
            let cols: &[T] = if pointwise {
                xn
            } else {
                im2col(xn, &geo, stride, pad, &mut col);
                &col
            };
            // dW += dY · colᵀ
            T::gemm(cout, hw_out, k, gn, (hw_out, 1), cols, (1, hw_out), T::one(), gw, (k, 1));
        }
        if let Some(gx) = gx.as_mut() {
            let gxn = &mut gx[n * geo.cin * hw_in..(n + 1) * geo.cin * hw_in];
            if pointwise {
                T::gemm(k, cout, hw_out, w.data(), (1, k), gn, (hw_out, 1), T::one(), gxn, (hw_out, 1));
            } else {
                gcol.clear();
                gcol.resize(k * hw_out, T::zero());
                T::gemm(k, cout, hw_out, w.data(), (1, k), gn, (hw_out, 1), T::zero(), &mut gcol, (hw_out, 1));
                col2im(&gcol, &geo, stride, pad, gxn);
            }
        }
    }
    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); cout];
        for n in 0..geo.n {
            for (c, acc) in gb.iter_mut().enumerate() {
                let base = (n * cout + c) * hw_out;
                *acc += g[base..base + hw_out].iter().copied().sum::<T>();
            }
        }
        gb
    });
    (gx, gw, gb)
}

/// Per-channel convolution: `x: [N, C, H, W]`, `w: [C, 1, kh, kw]`.
pub fn depthwise_conv2d<'t, T: Element>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    stride: usize,
    pad: usize,
) -> Result<Var<'t, T>> {
    x.same_tape(w)?;
    let (xv, wv) = (x.value(), w.value());
    let geo = geometry("depthwise_conv2d", xv.shape(), wv.shape(), stride, pad)?;
    if wv.shape()[0] != geo.cin || wv.shape()[1] != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "depthwise_conv2d",
            lhs: xv.shape().to_vec(),
            rhs: wv.shape().to_vec(),
        });
    }
    let (hw_in, hw_out) = (geo.h * geo.w, geo.ho * geo.wo);
    let ksz = geo.kh * geo.kw;
    let mut y = vec![T::zero(); geo.n * geo.cin * hw_out];
    for n in 0..geo.n {
        for c in 0..geo.cin {
            let plane = &xv.data()[(n * geo.cin + c) * hw_in..][..hw_in];
            let kern = &wv.data()[c * ksz..(c + 1) * ksz];
            let out = &mut y[(n * geo.cin + c) * hw_out..][..hw_out];
            for_each_tap(&geo, stride, pad, |o, i, t| out[o] += plane[i] * kern[t]);
        }
    }
    Ok(x.derive(
        Tensor::new(&[geo.n, geo.cin, geo.ho, geo.wo], y)?,
        Op::Depthwise {
            x: x.id,
            w: w.id,
            stride,
            pad,
        },
        &[x.id, w.id],
    ))
}

/// Calls `f(out_index, in_index, tap_index)` for every in-bounds kernel tap.
fn for_each_tap(g: &Geometry, stride: usize, pad: usize, mut f: impl FnMut(usize, usize, usize)) {
    for oy in 0..g.ho {
        for ky in 0..g.kh {
            let iy = (oy * stride + ky) as isize - pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            for ox in 0..g.wo {
                for kx in 0..g.kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    f(oy * g.wo + ox, iy as usize * g.w + ix as usize, ky * g.kw + kx);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    out_shape: &[usize],
    g: &[T],
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let geo = geometry("depthwise_conv2d", x.shape(), w.shape(), stride, pad).expect("validated in forward");
    debug_assert_eq!(out_shape[1], geo.cin);
    let (hw_in, hw_out) = (geo.h * geo.w, geo.ho * geo.wo);
    let ksz = geo.kh * geo.kw;
    let mut gx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut gw = need_w.then(|| vec![T::zero(); w.numel()]);
    for n in 0..geo.n {
        for c in 0..geo.cin {
            let gp = &g[(n * geo.cin + c) * hw_out..][..hw_out];
            if let Some(gx) = gx.as_mut() {
                let kern = &w.data()[c * ksz..(c + 1) * ksz];
                let gxp = &mut gx[(n * geo.cin + c) * hw_in..][..hw_in];
                for_each_tap(&geo, stride, pad, |o, i, t| gxp[i] += gp[o] * kern[t]);
            }
            if let Some(gw) = gw.as_mut() {
                let plane = &x.data()[(n * geo.cin + c) * hw_in..][..hw_in];
                let gk = &mut gw[c * ksz..(c + 1) * ksz];
                for_each_tap(&geo, stride, pad, |o, i, t| gk[t] += gp[o] * plane[i]);
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Rng, Tape};

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let mut rng = Rng::new(1);
        let x = tape.constant(random(&[2, 1, 5, 4], &mut rng));
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn output_shape_rule() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = tape.constant(Tensor::zeros(&[5, 3, 3, 3]));
        assert_eq!(conv2d(&x, &w, None, 1, 1).unwrap().shape(), vec![1, 5, 8, 8]);
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap().shape(), vec![1, 5, 4, 4]);
        let stem = tape.constant(Tensor::zeros(&[4, 3, 4, 4]));
        assert_eq!(conv2d(&x, &stem, None, 4, 0).unwrap().shape(), vec![1, 4, 2, 2]);
    }

    #[test]
    fn channel_mismatch_is_structured_error() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = tape.constant(Tensor::zeros(&[5, 2, 3, 3]));
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "conv2d", .. }));
        let big = tape.constant(Tensor::zeros(&[5, 3, 11, 11]));
        assert!(matches!(conv2d(&x, &big, None, 1, 1), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let mut rng = Rng::new(2);
        let x = tape.constant(random(&[2, 4, 6, 6], &mut rng));
        let mut k = vec![0.0; 4 * 9];
        for c in 0..4 {
            k[c * 9 + 4] = 1.0;
        }
        let w = tape.constant(Tensor::new(&[4, 1, 3, 3], k).unwrap());
        let y = depthwise_conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 6, 6]);
        assert_eq!(y.value().data(), x.value().data());
    }
}
