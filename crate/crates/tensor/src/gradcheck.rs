//! Central finite-difference gradient checking.
//!
//! The function under test may return any shape; it is reduced to a scalar
//! by a fixed random projection `L = Σ wᵢ·outᵢ` so that every output element
//! contributes. Analytic adjoints from the tape are compared against
//! `(L(x + h·eⱼ) − L(x − h·eⱼ)) / 2h` for every input element.

use crate::error::TensorError;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Magnitude below which gradient components are compared in absolute
/// rather than relative terms (the finite-difference noise floor at `STEP`).
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Worst pointwise relative error over all checked elements.
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every element of every input.
pub fn gradcheck<F, E>(inputs: &[Tensor<f64>], seed: u64, f: F) -> std::result::Result<GradcheckReport, E>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> std::result::Result<Var<'t, f64>, E>,
    E: From<TensorError>,
{
    gradcheck_masked(inputs, seed, &|_, _| true, f)
}

/// Like [`gradcheck`], checking only elements where `check(input, element)` is true.
pub fn gradcheck_masked<F, E>(
    inputs: &[Tensor<f64>],
    seed: u64,
    check: &dyn Fn(usize, usize) -> bool,
    f: F,
) -> std::result::Result<GradcheckReport, E>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> std::result::Result<Var<'t, f64>, E>,
    E: From<TensorError>,
{
    // projection weights are drawn once the output shape is known
    let projection = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?.value();
        let mut rng = Rng::new(seed);
        Tensor::new(out.shape(), (0..out.numel()).map(|_| rng.uniform_range(0.5, 1.5)).collect())?
    };

    let scalar = |xs: &[Tensor<f64>]| -> std::result::Result<f64, E> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let w = tape.constant(projection.clone());
        Ok(out.mul(&w)?.sum_all().item().expect("scalar"))
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    let w = tape.constant(projection.clone());
    let loss = out.mul(&w)?.sum_all();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            if !check(i, j) {
                continue;
            }
            let x0 = input.data()[j];
            probe[i].data_mut()[j] = x0 + STEP;
            let up = scalar(&probe)?;
            probe[i].data_mut()[j] = x0 - STEP;
            let down = scalar(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[i].data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Normal random tensor, handy for building check instances.
pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("shape and length agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // powf(2) has a correct adjoint; compare against a deliberately broken function
        let x = random_tensor(&[5], &mut Rng::new(1));
        let ok = gradcheck(std::slice::from_ref(&x), 0, |_, v| Ok::<_, TensorError>(v[0].powf(2.0))).unwrap();
        assert!(ok.passes(1e-6), "{ok:?}");
        // a constant leaf severs the gradient path, so analytic = 0 while numeric ≠ 0
        let broken = gradcheck(&[x], 0, |t, v| {
            let detached = t.constant((*v[0].value()).clone());
            Ok::<_, TensorError>(detached.powf(2.0))
        })
        .unwrap();
        assert!(!broken.passes(1e-4));
    }
}
