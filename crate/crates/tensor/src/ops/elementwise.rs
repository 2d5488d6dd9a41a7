use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{broadcast_offsets, broadcast_shape};
use crate::element::Element;
use crate::error::Result;
use crate::tape::{BinaryKind, Op, UnaryKind, Var};
use crate::tensor::Tensor;

impl<'t, T: Element> Var<'t, T> {
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Sub)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.unary(UnaryKind::Neg)
    }

    pub fn scale(&self, c: f64) -> Var<'t, T> {
        self.unary(UnaryKind::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        self.unary(UnaryKind::AddScalar(c))
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&self) -> Var<'t, T> {
        self.unary(UnaryKind::Abs)
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(UnaryKind::Exp)
    }

    pub fn ln(&self) -> Var<'t, T> {
        self.unary(UnaryKind::Log)
    }

    pub fn powf(&self, p: f64) -> Var<'t, T> {
        self.unary(UnaryKind::Pow(p))
    }

    /// GELU in the exact form `x·Φ(x)`, with Φ the standard normal CDF.
    pub fn gelu(&self) -> Var<'t, T> {
        self.unary(UnaryKind::Gelu)
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(UnaryKind::Sigmoid)
    }

    fn unary(&self, kind: UnaryKind) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| unary_forward(kind, v));
        self.derive(y, Op::Unary { kind, x: self.id }, &[self.id])
    }

    fn binary(&self, other: &Var<'t, T>, kind: BinaryKind) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<T> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(&shape, a.shape());
            let ob = broadcast_offsets(&shape, b.shape());
            oa.iter()
                .zip(&ob)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect()
        };
        let out = Tensor::new(&shape, data)?;
        Ok(self.derive(
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn unary_forward<T: Element>(kind: UnaryKind, v: T) -> T {
    match kind {
        UnaryKind::Neg => -v,
        UnaryKind::Scale(c) => v * T::of(c),
        UnaryKind::AddScalar(c) => v + T::of(c),
        UnaryKind::Abs => v.abs(),
        UnaryKind::Exp => v.exp(),
        UnaryKind::Log => v.ln(),
        UnaryKind::Pow(p) => v.powf(T::of(p)),
        UnaryKind::Gelu => {
            let half = T::of(0.5);
            half * v * (T::one() + (v * T::of(FRAC_1_SQRT_2)).erf())
        }
        UnaryKind::Sigmoid => sigmoid(v),
    }
}

pub(crate) fn unary_backward<T: Element>(
    kind: UnaryKind,
    x: &Tensor<T>,
    y: &Tensor<T>,
    g: &[T],
) -> Vec<T> {
    let xs = x.data();
    let ys = y.data();
    let it = g.iter().enumerate();
    match kind {
        UnaryKind::Neg => g.iter().map(|&v| -v).collect(),
        UnaryKind::Scale(c) => {
            let c = T::of(c);
            g.iter().map(|&v| v * c).collect()
        }
        UnaryKind::AddScalar(_) => g.to_vec(),
        UnaryKind::Abs => it
            .map(|(i, &v)| {
                let s = xs[i];
                if s > T::zero() {
                    v
                } else if s < T::zero() {
                    -v
                } else {
                    T::zero()
                }
            })
            .collect(),
        UnaryKind::Exp => it.map(|(i, &v)| v * ys[i]).collect(),
        UnaryKind::Log => it.map(|(i, &v)| v / xs[i]).collect(),
        UnaryKind::Pow(p) => {
            if p == 0.0 {
                return vec![T::zero(); g.len()];
            }
            let pt = T::of(p);
            let pm1 = T::of(p - 1.0);
            it.map(|(i, &v)| v * pt * xs[i].powf(pm1)).collect()
        }
        UnaryKind::Gelu => it
            .map(|(i, &v)| {
                let xv = xs[i].as_f64();
                let pdf = (-0.5 * xv * xv).exp() / (2.0 * PI).sqrt();
                v * T::of(std_normal_cdf(xv) + xv * pdf)
            })
            .collect(),
        UnaryKind::Sigmoid => it
            .map(|(i, &v)| v * ys[i] * (T::one() - ys[i]))
            .collect(),
    }
}

pub(crate) fn binary_backward<T: Element>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    out: &Tensor<T>,
    g: &[T],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let shape = out.shape();
    let same = a.shape() == shape && b.shape() == shape;
    let (oa, ob) = if same {
        (Vec::new(), Vec::new())
    } else {
        (broadcast_offsets(shape, a.shape()), broadcast_offsets(shape, b.shape()))
    };
    let ia = |i: usize| if same { i } else { oa[i] };
    let ib = |i: usize| if same { i } else { ob[i] };
    let (ad, bd) = (a.data(), b.data());

    let ga = need_a.then(|| {
        let mut ga = vec![T::zero(); a.numel()];
        for (i, &gi) in g.iter().enumerate() {
            ga[ia(i)] += match kind {
                BinaryKind::Add | BinaryKind::Sub => gi,
                BinaryKind::Mul => gi * bd[ib(i)],
                BinaryKind::Div => gi / bd[ib(i)],
            };
        }
        ga
    });
    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); b.numel()];
        for (i, &gi) in g.iter().enumerate() {
            gb[ib(i)] += match kind {
                BinaryKind::Add => gi,
                BinaryKind::Sub => -gi,
                BinaryKind::Mul => gi * ad[ia(i)],
                BinaryKind::Div => {
                    let bv = bd[ib(i)];
                    -gi * ad[ia(i)] / (bv * bv)
                }
            };
        }
        gb
    });
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn abs_of_self_difference_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[1.5, -2.0, 0.25]).unwrap(), true);
        let d = x.sub(&x).unwrap().abs();
        assert!(d.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_f64(&[2, 2], &[1.0, -2.0, 3.0, 4.5]).unwrap(), true);
        let ones = tape.constant(Tensor::ones(&[2, 2]));
        assert_eq!(a.mul(&ones).unwrap().value().data(), a.value().data());
    }

    #[test]
    fn gelu_at_zero_and_limits() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[3], &[0.0, 10.0, -10.0]).unwrap());
        let y = x.gelu().value();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 10.0).abs() < 1e-12);
        assert!(y.data()[2].abs() < 1e-12);
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[0.0, 2.0, -1.0]).unwrap(), true);
        let loss = x.abs().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2, 3, 2, 2]), true);
        let b = tape.leaf(Tensor::from_f64(&[1, 3, 1, 1], &[1.0, 2.0, 3.0]).unwrap(), true);
        let y = x.add(&b).unwrap();
        assert_eq!(y.value().data()[4], 3.0);
        let g = tape.backward(y.sum_all()).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[8.0, 8.0, 8.0]);
    }
}
