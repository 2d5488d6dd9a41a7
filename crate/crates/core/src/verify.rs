//! Verification suites behind `mcds verify`.
//!
//! The gradient suite compares tape adjoints against central finite
//! differences in 64-bit for every differentiable operation, every model
//! module and all three losses. The oracle suite recomputes losses, metrics,
//! the schedule, the optimiser step and the label conversion independently
//! (exact rational arithmetic for Lovász, plain loops elsewhere).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use mcd_tensor::gradcheck::{gradcheck, gradcheck_masked, random_tensor, GradcheckReport};
use mcd_tensor::{batch_norm, concat, conv2d, depthwise_conv2d, linear, Mode, Rng, RunningStats, Tape, Tensor, Var};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::backbone::{adapter_forward, inject_prompt, lora_forward};
use crate::config::{fnv1a, Ablation, LossConfig, MscadConfig, TrainConfig};
use crate::data::{scd_to_mcd, synth_samples, SynthSpec};
use crate::decoder::{attention_gate, Decoder};
use crate::error::{Error, Result};
use crate::losses::{composite_loss, dice_loss, focal_loss, lovasz_softmax};
use crate::metrics::{compute_metrics, ConfusionMatrix};
use crate::mscad::{diff_direct, Mscad};
use crate::params::{Forward, Group, ParamStore};
use crate::train::{lr_at, AdamW};

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_INSTANCES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Oracles,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "oracles" => Ok(Suite::Oracles),
            "all" => Ok(Suite::All),
            other => Err(Error::Invalid(format!(
                "unknown suite `{other}`; expected gradcheck, oracles or all"
            ))),
        }
    }
}

/// Outcome of one named check over all its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub instances: usize,
    /// Worst error seen: relative for gradient checks, absolute otherwise.
    pub measured: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.measured.is_finite() && self.measured <= self.tolerance
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Gradcheck | Suite::All) {
        out.extend(gradcheck_suite(GRAD_INSTANCES)?);
    }
    if matches!(suite, Suite::Oracles | Suite::All) {
        out.extend(oracle_suite()?);
    }
    Ok(out)
}

pub fn table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9}  {:<width$}  {:>5}  {:>10}  {:>8}  result",
        "suite", "check", "n", "measured", "tol"
    );
    for c in checks {
        let _ = writeln!(
            s,
            "{:<9}  {:<width$}  {:>5}  {:>10.3e}  {:>8.0e}  {}",
            c.suite,
            c.name,
            c.instances,
            c.measured,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    let _ = writeln!(s, "{} checks, {} failed", checks.len(), failed);
    s
}

// ---------------------------------------------------------------- gradients

fn worse(acc: f64, e: f64) -> f64 {
    if !e.is_finite() || !acc.is_finite() {
        f64::INFINITY
    } else {
        acc.max(e)
    }
}

fn grad_case(
    name: &str,
    instances: usize,
    one: impl Fn(&mut Rng, u64) -> Result<GradcheckReport>,
) -> Result<Check> {
    let mut measured = 0.0;
    for i in 0..instances {
        let seed = fnv1a(name.as_bytes()) ^ i as u64;
        let r = one(&mut Rng::new(seed), seed)?;
        measured = worse(measured, r.max_rel_err);
    }
    Ok(Check {
        suite: "gradcheck",
        name: name.to_string(),
        instances,
        measured,
        tolerance: GRAD_TOL,
    })
}

fn dims(rng: &mut Rng) -> [usize; 4] {
    [
        1 + rng.below(2) as usize,
        1 + rng.below(3) as usize,
        2 + rng.below(4) as usize,
        2 + rng.below(4) as usize,
    ]
}

fn positive(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    random_tensor(shape, rng).map(|v| v.abs() + 0.5)
}

fn unary_case(name: &str, instances: usize, pos: bool, f: for<'t> fn(&Var<'t, f64>) -> Var<'t, f64>) -> Result<Check> {
    grad_case(name, instances, |rng, seed| {
        let d = dims(rng);
        let x = if pos { positive(&d, rng) } else { random_tensor(&d, rng) };
        gradcheck(&[x], seed, |_, v| Ok::<_, Error>(f(&v[0])))
    })
}

fn binary_case(
    name: &str,
    instances: usize,
    f: for<'t> fn(&Var<'t, f64>, &Var<'t, f64>) -> mcd_tensor::Result<Var<'t, f64>>,
) -> Result<Check> {
    grad_case(name, instances, |rng, seed| {
        let d = dims(rng);
        let a = random_tensor(&d, rng);
        // every other instance broadcasts a per-channel operand
        let bshape = if seed % 2 == 0 { d.to_vec() } else { vec![1, d[1], 1, 1] };
        let b = positive(&bshape, rng);
        gradcheck(&[a, b], seed, |_, v| Ok::<_, Error>(f(&v[0], &v[1])?))
    })
}

fn op_checks(n: usize) -> Result<Vec<Check>> {
    let mut out = vec![
        binary_case("add", n, |a, b| a.add(b))?,
        binary_case("sub", n, |a, b| a.sub(b))?,
        binary_case("mul", n, |a, b| a.mul(b))?,
        binary_case("div", n, |a, b| a.div(b))?,
        unary_case("neg, scale, add_scalar", n, false, |x| x.neg().scale(-1.7).add_scalar(0.3))?,
        unary_case("exp", n, false, |x| x.exp())?,
        unary_case("ln", n, true, |x| x.ln())?,
        unary_case("powf", n, true, |x| x.powf(2.5))?,
        unary_case("gelu", n, false, |x| x.gelu())?,
        unary_case("sigmoid", n, false, |x| x.sigmoid())?,
        unary_case("sum_all", n, false, |x| x.sum_all())?,
        unary_case("mean_all", n, false, |x| x.mean_all())?,
    ];
    out.push(grad_case("abs", n, |rng, seed| {
        let x = random_tensor(&dims(rng), rng);
        let far = |_: usize, j: usize| x.data()[j].abs() > 1e-3;
        gradcheck_masked(std::slice::from_ref(&x), seed, &far, |_, v| Ok::<_, Error>(v[0].abs()))
    })?);
    for (name, log) in [("softmax", false), ("log_softmax", true)] {
        out.push(grad_case(name, n, |rng, seed| {
            let x = random_tensor(&dims(rng), rng);
            let axis = rng.below(4) as usize;
            gradcheck(&[x], seed, |_, v| {
                Ok::<_, Error>(if log { v[0].log_softmax(axis)? } else { v[0].softmax(axis)? })
            })
        })?);
    }
    for (name, mean) in [("sum_axes", false), ("mean_axes", true)] {
        out.push(grad_case(name, n, |rng, seed| {
            let x = random_tensor(&dims(rng), rng);
            let axes: Vec<usize> = (0..4).filter(|_| rng.coin()).collect();
            let keep = rng.coin();
            gradcheck(&[x], seed, |_, v| {
                Ok::<_, Error>(if mean {
                    v[0].mean_axes(&axes, keep)?
                } else {
                    v[0].sum_axes(&axes, keep)?
                })
            })
        })?);
    }
    out.push(grad_case("reshape", n, |rng, seed| {
        let d = dims(rng);
        let x = random_tensor(&d, rng);
        gradcheck(&[x], seed, |_, v| Ok::<_, Error>(v[0].reshape(&[d[0] * d[1], d[2] * d[3]])?.sigmoid()))
    })?);
    out.push(grad_case("narrow", n, |rng, seed| {
        let d = dims(rng);
        let axis = rng.below(4) as usize;
        let start = rng.below(d[axis] as u64) as usize;
        let len = 1 + rng.below((d[axis] - start) as u64) as usize;
        gradcheck(&[random_tensor(&d, rng)], seed, |_, v| Ok::<_, Error>(v[0].narrow(axis, start, len)?))
    })?);
    out.push(grad_case("concat", n, |rng, seed| {
        let d = dims(rng);
        let axis = rng.below(4) as usize;
        let mut d2 = d;
        d2[axis] = 1 + rng.below(3) as usize;
        let inputs = [random_tensor(&d, rng), random_tensor(&d2, rng)];
        gradcheck(&inputs, seed, |_, v| Ok::<_, Error>(concat(&[v[0], v[1]], axis)?))
    })?);
    out.push(grad_case("upsample_bilinear", n, |rng, seed| {
        let x = random_tensor(&dims(rng), rng);
        let factor = 2 + rng.below(3) as usize;
        gradcheck(&[x], seed, |_, v| Ok::<_, Error>(v[0].upsample_bilinear(factor)?))
    })?);
    out.push(grad_case("dropout", n, |rng, seed| {
        let x = random_tensor(&dims(rng), rng);
        gradcheck(&[x], seed, |_, v| {
            Ok::<_, Error>(v[0].dropout(0.3, Mode::Train, &mut Rng::new(seed))?)
        })
    })?);
    out.push(grad_case("index_select", n, |rng, seed| {
        let d = dims(rng);
        let x = random_tensor(&d, rng);
        let numel = x.numel() as u64;
        let idx: Vec<usize> = (0..2 * numel).map(|_| rng.below(numel) as usize).collect();
        gradcheck(&[x], seed, |_, v| Ok::<_, Error>(v[0].index_select(&idx)?))
    })?);
    out.push(grad_case("conv2d", n, |rng, seed| {
        let [b, c, h, w] = dims(rng);
        let (h, w) = (h + 1, w + 1);
        let cout = 1 + rng.below(3) as usize;
        let k = [1, 2, 3][rng.below(3) as usize];
        let stride = 1 + rng.below(2) as usize;
        let pad = rng.below(2) as usize;
        let inputs = [
            random_tensor(&[b, c, h, w], rng),
            random_tensor(&[cout, c, k, k], rng),
            random_tensor(&[cout], rng),
        ];
        gradcheck(&inputs, seed, |_, v| Ok::<_, Error>(conv2d(&v[0], &v[1], Some(&v[2]), stride, pad)?))
    })?);
    out.push(grad_case("depthwise_conv2d", n, |rng, seed| {
        let d = dims(rng);
        let stride = 1 + rng.below(2) as usize;
        let inputs = [random_tensor(&d, rng), random_tensor(&[d[1], 1, 3, 3], rng)];
        gradcheck(&inputs, seed, |_, v| Ok::<_, Error>(depthwise_conv2d(&v[0], &v[1], stride, 1)?))
    })?);
    out.push(grad_case("linear", n, |rng, seed| {
        let (m, k, o) = (1 + rng.below(4) as usize, 1 + rng.below(5) as usize, 1 + rng.below(4) as usize);
        let inputs = [random_tensor(&[m, k], rng), random_tensor(&[o, k], rng), random_tensor(&[o], rng)];
        gradcheck(&inputs, seed, |_, v| Ok::<_, Error>(linear(&v[0], &v[1], Some(&v[2]))?))
    })?);
    out.push(grad_case("batch_norm (train)", n, |rng, seed| {
        let mut d = dims(rng);
        d[0] = 2;
        let inputs = [random_tensor(&d, rng), random_tensor(&[d[1]], rng), random_tensor(&[d[1]], rng)];
        gradcheck(&inputs, seed, |_, v| {
            Ok::<_, Error>(batch_norm(&v[0], &v[1], &v[2], None, Mode::Train)?.0)
        })
    })?);
    out.push(grad_case("batch_norm (eval)", n, |rng, seed| {
        let d = dims(rng);
        let inputs = [random_tensor(&d, rng), random_tensor(&[d[1]], rng), random_tensor(&[d[1]], rng)];
        let stats = RunningStats {
            mean: (0..d[1]).map(|_| rng.normal()).collect(),
            var: (0..d[1]).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
        };
        gradcheck(&inputs, seed, |_, v| {
            Ok::<_, Error>(batch_norm(&v[0], &v[1], &v[2], Some(&stats), Mode::Eval)?.0)
        })
    })?);
    Ok(out)
}

/// Gradient check of a module whose every parameter in `store` is replaced by
/// a random input drawn at roughly unit output scale. Batch norms run on random
/// running statistics in eval mode (train-mode normalisation has its own check
/// and makes any bias feeding it exactly gradient-free); `Mode::Train` keeps a
/// fixed dropout stream.
fn module_check<F>(
    store: &ParamStore<f64>,
    mode: Mode,
    data: Vec<Tensor<f64>>,
    rng: &mut Rng,
    seed: u64,
    f: F,
) -> Result<GradcheckReport>
where
    F: for<'t, 's> Fn(&Forward<'t, 's, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    module_check_skipping(store, mode, &[], data, rng, seed, f)
}

/// [`module_check`] leaving out the parameters named in `skip`.
fn module_check_skipping<F>(
    store: &ParamStore<f64>,
    mode: Mode,
    skip: &[&str],
    data: Vec<Tensor<f64>>,
    rng: &mut Rng,
    seed: u64,
    f: F,
) -> Result<GradcheckReport>
where
    F: for<'t, 's> Fn(&Forward<'t, 's, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let names: Vec<String> = store.params().iter().map(|p| p.name.clone()).collect();
    let nd = data.len();
    let mut inputs = data;
    for p in store.params() {
        let shape = p.value.shape();
        let t = random_tensor(shape, rng);
        inputs.push(if p.name.ends_with(".gamma") {
            t.map(|v| 1.0 + 0.2 * v)
        } else if shape.len() >= 2 {
            let fan_in = (p.value.numel() / shape[0]) as f64;
            t.map(|v| v / fan_in.sqrt())
        } else {
            t.map(|v| 0.5 * v)
        });
    }
    let mut store = store.clone();
    let buffers: Vec<String> = store.buffers().keys().cloned().collect();
    for name in buffers {
        let c = store.buffer(&name).expect("listed").mean.len();
        let stats = RunningStats {
            mean: (0..c).map(|_| 0.5 * rng.normal()).collect(),
            var: (0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
        };
        store.set_buffer(&name, stats)?;
    }
    let skipped: Vec<bool> = names.iter().map(|n| skip.contains(&n.as_str())).collect();
    let check = |i: usize, _: usize| i < nd || !skipped[i - nd];
    gradcheck_masked(&inputs, seed, &check, |tape, v| {
        let fx = Forward::new(tape, &store, mode, false, Rng::new(seed));
        for (name, var) in names.iter().zip(&v[nd..]) {
            fx.bind(name, *var);
        }
        f(&fx, &v[..nd])
    })
}

fn mscad_setup(ablation: Ablation, seed: u64) -> Result<(Mscad, ParamStore<f64>)> {
    let mut store = ParamStore::new();
    let m = Mscad::build(&MscadConfig { common_dim: 3 }, ablation, [2, 3, 4], seed, &mut store)?;
    Ok((m, store))
}

fn pyramid(rng: &mut Rng) -> Vec<Tensor<f64>> {
    vec![
        random_tensor(&[2, 2, 4, 4], rng),
        random_tensor(&[2, 3, 2, 2], rng),
        random_tensor(&[2, 4, 1, 1], rng),
    ]
}

fn module_checks(n: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    out.push(grad_case("adapter", n, |rng, seed| {
        let c = 2 + rng.below(4) as usize;
        let r = 1 + rng.below(2) as usize;
        let mut store = ParamStore::new();
        store.add("a.down", Group::Adapter, Tensor::zeros(&[r, c]));
        store.add("a.up", Group::Adapter, Tensor::zeros(&[c, r]));
        store.add("a.gate", Group::Adapter, Tensor::zeros(&[1]));
        let mut d = dims(rng);
        d[1] = c;
        module_check(&store, Mode::Train, vec![random_tensor(&d, rng)], rng, seed, |fx, v| adapter_forward(fx, "a", &v[0]))
    })?);
    out.push(grad_case("lora", n, |rng, seed| {
        let (dd, k) = (2 + rng.below(3) as usize, 2 + rng.below(3) as usize);
        let r = 1 + rng.below(2) as usize;
        let mut x = dims(rng);
        x[1] = k;
        let inputs = vec![
            random_tensor(&x, rng),
            random_tensor(&[dd, k, 1, 1], rng),
            random_tensor(&[dd], rng),
            random_tensor(&[r, k], rng),
            random_tensor(&[dd, r], rng),
        ];
        let store = ParamStore::new();
        module_check(&store, Mode::Train, inputs, rng, seed, |fx, v| lora_forward(fx, &v[0], &v[1], &v[2], &v[3], &v[4], 1.5, 0.2))
    })?);
    out.push(grad_case("prompt injection", n, |rng, seed| {
        let (p, prev, c) = (1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
        let mut x = dims(rng);
        x[1] = c;
        let inputs = [random_tensor(&x, rng), random_tensor(&[p, prev], rng), random_tensor(&[c, prev], rng)];
        gradcheck(&inputs, seed, |_, v| Ok::<_, Error>(inject_prompt(&v[0], &v[1], &v[2])?.0))
    })?);
    out.push(grad_case("mscad scale fusion", n, |rng, seed| {
        let (m, store) = mscad_setup(Ablation::default(), seed)?;
        module_check(&store, Mode::Eval, pyramid(rng), rng, seed, |fx, v| {
            let (fused, weights) = m.align_and_fuse(fx, [&v[0], &v[1], &v[2]], (8, 8))?;
            Ok(concat(&[fused, weights], 1)?)
        })
    })?);
    out.push(grad_case("mscad direct difference", n, |rng, seed| {
        let d = dims(rng);
        let (a, b) = (random_tensor(&d, rng), random_tensor(&d, rng));
        let far = |_: usize, j: usize| (a.data()[j] - b.data()[j]).abs() > 1e-3;
        gradcheck_masked(&[a.clone(), b.clone()], seed, &far, |_, v| diff_direct(&v[0], &v[1]))
    })?);
    out.push(grad_case("mscad adaptive difference", n, |rng, seed| {
        let (m, store) = mscad_setup(Ablation::default(), seed)?;
        let store = subset(&store, "mscad.ada.");
        let data = vec![random_tensor(&[2, 3, 4, 4], rng), random_tensor(&[2, 3, 4, 4], rng)];
        module_check(&store, Mode::Eval, data, rng, seed, |fx, v| m.diff_adaptive(fx, &v[0], &v[1]))
    })?);
    out.push(grad_case("mscad aggregation", n, |rng, seed| {
        let (m, store) = mscad_setup(Ablation::default(), seed)?;
        let store = subset(&store, "mscad.agg");
        let data = vec![random_tensor(&[2, 3, 4, 4], rng), random_tensor(&[2, 3, 4, 4], rng)];
        module_check(&store, Mode::Eval, data, rng, seed, |fx, v| m.aggregate(fx, &v[0], Some(&v[1])))
    })?);
    out.push(grad_case("mscad end to end", n, |rng, seed| {
        let (m, store) = mscad_setup(Ablation::default(), seed)?;
        let mut data = pyramid(rng);
        data.extend(pyramid(rng));
        module_check(&store, Mode::Eval, data, rng, seed, |fx, v| {
            m.forward(fx, [&v[0], &v[1], &v[2]], [&v[3], &v[4], &v[5]], (8, 8))
        })
    })?);
    out.push(grad_case("mscad end to end (batch statistics)", n, |rng, seed| {
        let (m, store) = mscad_setup(Ablation::default(), seed)?;
        let mut data = pyramid(rng);
        data.extend(pyramid(rng));
        // per-channel constants ahead of a batch-statistics norm have zero gradient
        let skip = ["mscad.ada.conv.b", "mscad.ada.out.b", "mscad.agg.b"];
        module_check_skipping(&store, Mode::Train, &skip, data, rng, seed, |fx, v| {
            m.forward(fx, [&v[0], &v[1], &v[2]], [&v[3], &v[4], &v[5]], (8, 8))
        })
    })?);
    let decoder = |seed: u64| -> Result<(Decoder, ParamStore<f64>)> {
        let mut store = ParamStore::new();
        let d = Decoder::build(2, 3, Ablation::default(), seed, &mut store)?;
        Ok((d, store))
    };
    out.push(grad_case("decoder context enhancer", n, |rng, seed| {
        let (d, store) = decoder(seed)?;
        let store = subset(&store, "decoder.unit");
        let store = merge(store, &decoder(seed)?.1, "decoder.proj");
        module_check(&store, Mode::Eval, vec![random_tensor(&[2, 2, 3, 3], rng)], rng, seed, |fx, v| d.context_enhance(fx, &v[0]))
    })?);
    out.push(grad_case("decoder classifier and upsampling", n, |rng, seed| {
        let (d, store) = decoder(seed)?;
        let store = subset(&store, "decoder.cls");
        module_check(&store, Mode::Eval, vec![random_tensor(&[1, 2, 2, 3], rng)], rng, seed, |fx, v| d.classify_and_upsample(fx, &v[0]))
    })?);
    out.push(unary_case("attention gate", n, false, |y| attention_gate(y).expect("unary"))?);
    out.push(grad_case("decoder end to end", n, |rng, seed| {
        let (d, store) = decoder(seed)?;
        module_check(&store, Mode::Eval, vec![random_tensor(&[2, 2, 2, 2], rng)], rng, seed, |fx, v| d.forward(fx, &v[0]))
    })?);
    out.push(grad_case("decoder end to end (batch statistics)", n, |rng, seed| {
        let (d, store) = decoder(seed)?;
        module_check(&store, Mode::Train, vec![random_tensor(&[2, 2, 2, 2], rng)], rng, seed, |fx, v| d.forward(fx, &v[0]))
    })?);
    Ok(out)
}

fn subset(store: &ParamStore<f64>, prefix: &str) -> ParamStore<f64> {
    merge(ParamStore::new(), store, prefix)
}

fn merge(mut into: ParamStore<f64>, from: &ParamStore<f64>, prefix: &str) -> ParamStore<f64> {
    for p in from.params().iter().filter(|p| p.name.starts_with(prefix)) {
        into.add(p.name.clone(), p.group, p.value.clone());
    }
    for (name, stats) in from.buffers().iter().filter(|(n, _)| n.starts_with(prefix)) {
        into.add_buffer(name.clone(), stats.clone());
    }
    into
}

/// Random `[1, 3, 4, 4]` logits and targets. Lovász instances are redrawn
/// until no two errors of a class lie within `gap` of each other, so that the
/// sort order is stable under the finite-difference step.
fn loss_instance(rng: &mut Rng, gap: f64) -> (Tensor<f64>, Vec<u8>) {
    loop {
        let logits = random_tensor(&[1, 3, 4, 4], rng).map(|v| 1.5 * v);
        let target: Vec<u8> = (0..16).map(|_| rng.below(3) as u8).collect();
        if gap == 0.0 {
            return (logits, target);
        }
        let probs = softmax_pixels(&logits);
        let separated = (0..3).all(|c| {
            let mut e: Vec<f64> = (0..16)
                .map(|i| ((target[i] as usize == c) as u8 as f64 - probs[c][i]).abs())
                .collect();
            e.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            e.windows(2).all(|w| w[1] - w[0] > gap)
        });
        if separated {
            return (logits, target);
        }
    }
}

fn loss_checks(n: usize) -> Result<Vec<Check>> {
    type LossFn = for<'t> fn(&Var<'t, f64>, &[u8], &LossConfig) -> Result<Var<'t, f64>>;
    let composite: LossFn = |l, t, c| Ok(composite_loss(l, t, c)?.0);
    let cases: [(&str, LossFn, f64); 4] = [
        ("focal loss", focal_loss, 0.0),
        ("dice loss", dice_loss, 0.0),
        ("lovasz-softmax", lovasz_softmax, 1e-4),
        ("composite loss", composite, 1e-4),
    ];
    let cfg = LossConfig::default();
    cases
        .into_iter()
        .map(|(name, f, gap)| {
            grad_case(name, n, |rng, seed| {
                let (logits, target) = loss_instance(rng, gap);
                gradcheck(&[logits], seed, |_, v| f(&v[0], &target, &cfg))
            })
        })
        .collect()
}

pub fn gradcheck_suite(instances: usize) -> Result<Vec<Check>> {
    let mut out = op_checks(instances)?;
    out.extend(module_checks(instances)?);
    out.extend(loss_checks(instances)?);
    Ok(out)
}

// ------------------------------------------------------------------ oracles

fn oracle(name: &str, instances: usize, tolerance: f64, measured: f64) -> Check {
    Check {
        suite: "oracle",
        name: name.to_string(),
        instances,
        measured,
        tolerance,
    }
}

/// Per-class probability rows `[c][pixel]` of `[N, C, H, W]` logits, computed with plain loops.
fn softmax_pixels(logits: &Tensor<f64>) -> Vec<Vec<f64>> {
    let s = logits.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let x = logits.data();
    let mut probs = vec![vec![0.0; n * hw]; c];
    for b in 0..n {
        for p in 0..hw {
            let at = |k: usize| x[(b * c + k) * hw + p];
            let max = (0..c).map(at).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|k| (at(k) - max).exp()).sum();
            for (k, row) in probs.iter_mut().enumerate() {
                row[b * hw + p] = (at(k) - max).exp() / z;
            }
        }
    }
    probs
}

type LossFn = for<'t> fn(&Var<'t, f64>, &[u8], &LossConfig) -> Result<Var<'t, f64>>;

fn eval_loss(f: LossFn, logits: &Tensor<f64>, target: &[u8], cfg: &LossConfig) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.constant(logits.clone());
    f(&x, target, cfg)?.item().ok_or_else(|| Error::Invalid("loss is not a scalar".into()))
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// The Lovász extension of the Jaccard set loss `Δ(M) = |M| / |G ∪ M|`
/// written as a threshold integral, `Σ_k (v_k − v_{k+1}) Δ({e ≥ v_k})` over
/// the distinct error levels, in exact rational arithmetic and averaged over
/// the classes present in the target.
pub fn lovasz_exact(probs: &[Vec<f64>], target: &[u8]) -> f64 {
    let mut sum = BigRational::zero();
    let mut present = 0i64;
    for (c, p) in probs.iter().enumerate() {
        let fg: Vec<bool> = target.iter().map(|&t| t as usize == c).collect();
        if !fg.contains(&true) {
            continue;
        }
        present += 1;
        let errs: Vec<BigRational> = p
            .iter()
            .zip(&fg)
            .map(|(&pi, &g)| (rational(if g { 1.0 } else { 0.0 }) - rational(pi)).abs())
            .collect();
        let mut levels = errs.clone();
        levels.sort();
        levels.dedup();
        levels.reverse();
        for (k, v) in levels.iter().enumerate() {
            let next = levels.get(k + 1).cloned().unwrap_or_else(BigRational::zero);
            let members: Vec<usize> = (0..errs.len()).filter(|&i| errs[i] >= *v).collect();
            let union = (0..errs.len()).filter(|&i| fg[i] || members.contains(&i)).count();
            let delta = BigRational::new(BigInt::from(members.len()), BigInt::from(union));
            sum += (v - next) * delta;
        }
    }
    (sum / BigRational::from_integer(BigInt::from(present)))
        .to_f64()
        .unwrap_or(f64::NAN)
}

fn lovasz_oracles(rng: &mut Rng) -> Result<Vec<Check>> {
    let cfg = LossConfig::default();
    let mut worst = 0.0;
    for _ in 0..200 {
        let (c, px) = (2 + rng.below(2) as usize, 1 + rng.below(6) as usize);
        let logits = random_tensor(&[1, c, 1, px], rng).map(|v| 2.0 * v);
        let target: Vec<u8> = (0..px).map(|_| rng.below(c as u64) as u8).collect();
        let ours = eval_loss(lovasz_softmax, &logits, &target, &cfg)?;
        worst = worse(worst, (ours - lovasz_exact(&softmax_pixels(&logits), &target)).abs());
    }
    // p_fg = (0.2, 0.9, 0.1) with y = (1, 0, 0): 0.85 for the foreground
    // class and 37/60 for the background, mean 11/15
    let logits = Tensor::new(&[1, 2, 1, 3], vec![0.0, 0.0, 0.0, (0.2f64 / 0.8).ln(), 9.0f64.ln(), (0.1f64 / 0.9).ln()])?;
    let ours = eval_loss(lovasz_softmax, &logits, &[1, 0, 0], &cfg)?;
    Ok(vec![
        oracle("lovasz vs exact threshold integral", 200, 1e-9, worst),
        oracle("lovasz three-pixel example", 1, 1e-9, (ours - 11.0 / 15.0).abs()),
    ])
}

fn random_logits(rng: &mut Rng) -> (Tensor<f64>, Vec<u8>) {
    let (n, c, h, w) = (
        1 + rng.below(2) as usize,
        2 + rng.below(5) as usize,
        1 + rng.below(4) as usize,
        1 + rng.below(4) as usize,
    );
    let logits = random_tensor(&[n, c, h, w], rng).map(|v| 2.0 * v);
    let target = (0..n * h * w).map(|_| rng.below(c as u64) as u8).collect();
    (logits, target)
}

fn loss_oracles(rng: &mut Rng) -> Result<Vec<Check>> {
    let ce_cfg = LossConfig {
        focal_gamma: 0.0,
        ..LossConfig::default()
    };
    let cfg = LossConfig::default();
    let (mut ce_err, mut dice_err, mut comp_err) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let (logits, target) = random_logits(rng);
        let s = logits.shape().to_vec();
        let (c, hw) = (s[1], s[2] * s[3]);
        let x = logits.data();

        let mut ce = 0.0;
        for (i, &t) in target.iter().enumerate() {
            let (b, p) = (i / hw, i % hw);
            let at = |k: usize| x[(b * c + k) * hw + p];
            let max = (0..c).map(at).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..c).map(|k| (at(k) - max).exp()).sum::<f64>().ln();
            ce += lse - at(t as usize);
        }
        ce /= target.len() as f64;
        ce_err = worse(ce_err, (eval_loss(focal_loss, &logits, &target, &ce_cfg)? - ce).abs());

        let probs = softmax_pixels(&logits);
        let mut dice = 0.0;
        for (k, row) in probs.iter().enumerate() {
            let (mut inter, mut psq, mut ysq) = (0.0, 0.0, 0.0);
            for (i, &t) in target.iter().enumerate() {
                let y = if t as usize == k { 1.0 } else { 0.0 };
                inter += row[i] * y;
                psq += row[i] * row[i];
                ysq += y * y;
            }
            dice += 1.0 - (2.0 * inter + cfg.dice_eps) / (psq + ysq + cfg.dice_eps);
        }
        dice /= c as f64;
        dice_err = worse(dice_err, (eval_loss(dice_loss, &logits, &target, &cfg)? - dice).abs());

        let tape = Tape::new();
        let (total, _) = composite_loss(&tape.constant(logits.clone()), &target, &cfg)?;
        let parts = [
            eval_loss(focal_loss, &logits, &target, &cfg)?,
            eval_loss(dice_loss, &logits, &target, &cfg)?,
            eval_loss(lovasz_softmax, &logits, &target, &cfg)?,
        ];
        let weighted = 0.4 * parts[0] + 0.3 * parts[1] + 0.3 * parts[2];
        comp_err = worse(comp_err, (total.item().unwrap_or(f64::NAN) - weighted).abs());
    }
    // one pixel, two equal logits: p_t = 1/2, so 0.5³·ln 2
    let one = LossConfig {
        focal_gamma: 3.0,
        ..LossConfig::default()
    };
    let focal = eval_loss(focal_loss, &Tensor::zeros(&[1, 2, 1, 1]), &[1], &one)?;
    Ok(vec![
        oracle("focal (gamma 0) vs cross-entropy", 200, 1e-12, ce_err),
        oracle("focal single-pixel example", 1, 1e-12, (focal - 0.125 * 2f64.ln()).abs()),
        oracle("dice vs direct formula", 200, 1e-12, dice_err),
        oracle("composite vs weighted components", 200, 1e-12, comp_err),
    ])
}

fn metric_oracles(rng: &mut Rng) -> Result<Vec<Check>> {
    let k = 7usize;
    let mut worst = 0.0;
    for _ in 0..100 {
        let active: Vec<u8> = (0..k as u8).filter(|_| rng.uniform() < 0.7).collect();
        let draw = |rng: &mut Rng| -> u8 {
            if active.is_empty() {
                0
            } else {
                active[rng.below(active.len() as u64) as usize]
            }
        };
        let pred: Vec<u8> = (0..256).map(|_| draw(rng)).collect();
        let gt: Vec<u8> = (0..256).map(|_| draw(rng)).collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.update(&pred, &gt)?;
        let mut counts = vec![vec![0u64; k]; k];
        for (&p, &g) in pred.iter().zip(&gt) {
            counts[p as usize][g as usize] += 1;
        }
        for (i, row) in counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if cm.get(i, j) != v {
                    worst = f64::INFINITY;
                }
            }
        }
        for include_bg in [false, true] {
            let m = compute_metrics(&cm, include_bg)?;
            let mut sums = [0.0; 4];
            let mut observed = 0usize;
            let mut diag = 0usize;
            for c in 0..k {
                let tp = pred.iter().zip(&gt).filter(|&(&p, &g)| p as usize == c && g as usize == c).count();
                let fp = pred.iter().zip(&gt).filter(|&(&p, &g)| p as usize == c && g as usize != c).count();
                let fn_ = pred.iter().zip(&gt).filter(|&(&p, &g)| p as usize != c && g as usize == c).count();
                diag += tp;
                let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
                let pc = &m.per_class[c];
                if (pc.tp, pc.fp, pc.fn_) != (tp as u64, fp as u64, fn_ as u64) {
                    worst = f64::INFINITY;
                }
                let vals = [frac(tp, tp + fp), frac(tp, tp + fn_), frac(2 * tp, 2 * tp + fp + fn_), frac(tp, tp + fp + fn_)];
                for (v, got) in vals.iter().zip([pc.precision, pc.recall, pc.f1, pc.iou]) {
                    worst = worse(worst, (v - got).abs());
                }
                if (include_bg || c > 0) && tp + fp + fn_ > 0 {
                    observed += 1;
                    for (s, v) in sums.iter_mut().zip(vals) {
                        *s += v;
                    }
                }
            }
            let macro_means = sums.map(|s| if observed == 0 { 1.0 } else { s / observed as f64 });
            for (v, got) in macro_means.iter().zip([m.precision, m.recall, m.f1, m.miou]) {
                worst = worse(worst, (v - got).abs());
            }
            worst = worse(worst, (diag as f64 / 256.0 - m.oa).abs());
        }
    }

    let mut f1_err = 0.0;
    for _ in 0..100 {
        let rate = rng.uniform_range(0.1, 0.9);
        let gt: Vec<u8> = (0..256).map(|_| (rng.uniform() < rate) as u8).collect();
        let pred: Vec<u8> = (0..256).map(|_| (rng.uniform() < rate) as u8).collect();
        let (ps, gs) = (pred.iter().filter(|&&p| p == 1).count(), gt.iter().filter(|&&g| g == 1).count());
        if ps + gs == 0 {
            continue;
        }
        let both = pred.iter().zip(&gt).filter(|&(&p, &g)| p == 1 && g == 1).count();
        let dice = 2.0 * both as f64 / (ps + gs) as f64;
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&pred, &gt)?;
        f1_err = worse(f1_err, (compute_metrics(&cm, false)?.f1 - dice).abs());
    }

    // [[2, 1], [1, 2]]: OA 4/6; class 1 has P = R = F1 = 2/3 and IoU 2/4
    let mut cm = ConfusionMatrix::new(2);
    cm.update(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 0, 1, 1])?;
    let m = compute_metrics(&cm, false)?;
    let c1 = m.per_class[1];
    let hand = [(m.oa, 4.0 / 6.0), (c1.precision, 2.0 / 3.0), (c1.recall, 2.0 / 3.0), (c1.f1, 2.0 / 3.0), (c1.iou, 0.5)]
        .iter()
        .fold(0.0, |acc, (a, b)| worse(acc, (a - b).abs()));

    Ok(vec![
        oracle("confusion matrix and metrics vs per-pixel counts", 100, 1e-12, worst),
        oracle("binary F1 equals Dice coefficient", 100, 1e-12, f1_err),
        oracle("hand-counted 2x2 matrix", 1, 1e-12, hand),
        zero_predictor_oracle()?,
    ])
}

/// An all-zero predictor on the synthetic set: class 0 has precision and IoU
/// equal to its pixel share, every present change class has IoU 0.
fn zero_predictor_oracle() -> Result<Check> {
    let spec = SynthSpec::parse("count=8,size=64,k=3,seed=7")?;
    let (_, train, _) = synth_samples(&spec)?;
    let k = spec.k + 1;
    let mut cm = ConfusionMatrix::new(k);
    let mut counts = vec![0u64; k];
    for s in &train {
        cm.update(&vec![0; s.label.len()], &s.label)?;
        for &l in &s.label {
            counts[l as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let share = counts[0] as f64 / total as f64;
    let present = counts[1..].iter().filter(|&&c| c > 0).count() as f64;
    let all = compute_metrics(&cm, true)?;
    let changed = compute_metrics(&cm, false)?;
    let expected_changed = if present > 0.0 { 0.0 } else { 1.0 };
    let err = [
        (all.oa, share),
        (all.miou, share / (1.0 + present)),
        (all.recall, 1.0 / (1.0 + present)),
        (all.precision, share / (1.0 + present)),
        (changed.miou, expected_changed),
        (changed.f1, expected_changed),
    ]
    .iter()
    .fold(0.0, |acc, (a, b)| worse(acc, (a - b).abs()));
    Ok(oracle("all-zero predictor vs label statistics", 1, 1e-12, err))
}

/// The cycle containing `e` located through a logarithm instead of iteration.
pub fn lr_closed_form(e: f64, cfg: &TrainConfig) -> f64 {
    let (t0, m) = (cfg.t0, cfg.t_mult);
    let (start, len) = if m == 1.0 {
        let i = (e / t0).floor();
        (i * t0, t0)
    } else {
        let i = ((e / t0 * (m - 1.0) + 1.0).ln() / m.ln()).floor();
        (t0 * (m.powf(i) - 1.0) / (m - 1.0), t0 * m.powf(i))
    };
    let t = e - start;
    cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + (std::f64::consts::PI * t / len).cos())
}

fn schedule_oracles(rng: &mut Rng) -> Result<Vec<Check>> {
    let cfg = TrainConfig::default();
    let mut worst = 0.0;
    for _ in 0..1000 {
        let e = rng.uniform_range(0.0, 630.0);
        worst = worse(worst, (lr_at(e, &cfg) - lr_closed_form(e, &cfg)).abs());
    }
    let base = lr_at(0.0, &cfg);
    let mut restarts = 0.0;
    for b in [30.0, 90.0] {
        if lr_at(b, &cfg) != base || lr_at(b - 1e-9, &cfg) - cfg.eta_min > 1e-12 {
            restarts = f64::INFINITY;
        }
    }
    // cycle 2 starts at 30 and lasts 60: the midpoint is 60
    restarts = worse(restarts, (lr_at(60.0, &cfg) - lr_at(15.0, &cfg)).abs());

    let mut store = ParamStore::new();
    store.add("w", Group::Decoder, Tensor::scalar(0.7));
    let grads = HashMap::from([("w".to_string(), Tensor::scalar(1.0))]);
    let mut opt = AdamW::new();
    opt.step(&mut store, &grads, cfg.base_lr, &cfg)?;
    let rate = cfg.base_lr * cfg.lr_mult.decoder;
    let expected = 0.7 * (1.0 - rate * cfg.weight_decay) - rate / (1.0 + cfg.adam_eps);
    let adam = (store.value("w")?.data()[0] - expected).abs();

    Ok(vec![
        oracle("lr_at vs logarithmic closed form", 1000, 1e-12, worst),
        oracle("lr restarts at 30 and 90", 3, 1e-12, restarts),
        oracle("AdamW scalar step", 1, 1e-15, adam),
    ])
}

fn format_oracles(rng: &mut Rng) -> Result<Vec<Check>> {
    let mut scd = 0.0;
    for _ in 0..50 {
        let n = 1 + rng.below(400) as usize;
        let a: Vec<u8> = (0..n).map(|_| rng.below(7) as u8).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.below(7) as u8).collect();
        let out = scd_to_mcd(&a, &b)?;
        for i in 0..n {
            let want = if a[i] == b[i] || b[i] == 0 { 0 } else { b[i] };
            if out[i] != want {
                scd = f64::INFINITY;
            }
        }
    }
    Ok(vec![oracle("scd_to_mcd per-pixel rule", 50, 0.0, scd)])
}

#[allow(clippy::needless_range_loop)]
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * o * ho * wo);
    for bi in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for u in 0..k {
                            for v in 0..k {
                                let (y, z) = ((i * stride + u) as isize - pad as isize, (j * stride + v) as isize - pad as isize);
                                if y < 0 || z < 0 || y >= h as isize || z >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ic) * h + y as usize) * wd + z as usize]
                                    * w.data()[((oc * c + ic) * k + u) * k + v];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn module_oracles(rng: &mut Rng) -> Result<Vec<Check>> {
    let mut conv = 0.0;
    for _ in 0..50 {
        let [n, c, h, w] = dims(rng);
        let k = 1 + rng.below(3) as usize;
        let (h, w) = (h + k, w + k);
        let (o, stride, pad) = (1 + rng.below(3) as usize, 1 + rng.below(2) as usize, rng.below(2) as usize);
        let x = random_tensor(&[n, c, h, w], rng);
        let wt = random_tensor(&[o, c, k, k], rng);
        let b = random_tensor(&[o], rng);
        let tape = Tape::new();
        let y = conv2d(&tape.constant(x.clone()), &tape.constant(wt.clone()), Some(&tape.constant(b.clone())), stride, pad)?;
        let want = naive_conv(&x, &wt, b.data(), stride, pad);
        for (a, e) in y.value().data().iter().zip(&want) {
            conv = worse(conv, (a - e).abs());
        }
    }

    // α = r: unit scale; identity-padded A and B route e1 through unchanged
    let tape = Tape::new();
    let store = ParamStore::new();
    let fx = Forward::new(&tape, &store, Mode::Eval, false, Rng::new(0));
    let w0 = random_tensor(&[4, 4, 1, 1], rng);
    let b0 = random_tensor(&[4], rng);
    let eye = |r: usize, c: usize| {
        Tensor::new(&[r, c], (0..r * c).map(|i| if i / c == i % c { 1.0 } else { 0.0 }).collect()).expect("shape")
    };
    let mut e1 = vec![0.0; 4];
    e1[0] = 1.0;
    let x = tape.constant(Tensor::new(&[1, 4, 1, 1], e1)?);
    let h = lora_forward(&fx, &x, &tape.constant(w0.clone()), &tape.constant(b0.clone()), &tape.constant(eye(2, 4)), &tape.constant(eye(4, 2)), 1.0, 0.0)?;
    let lora = (0..4)
        .map(|i| {
            let want = w0.data()[i * 4] + b0.data()[i] + if i == 0 { 1.0 } else { 0.0 };
            (h.value().data()[i] - want).abs()
        })
        .fold(0.0, worse);

    // one token c·e1 with identity projection shifts channel 0 by c everywhere
    let cval = rng.normal();
    let xs = random_tensor(&[2, 3, 2, 2], rng);
    let mut tok = vec![0.0; 3];
    tok[0] = cval;
    let (shifted, _) = inject_prompt(&tape.constant(xs.clone()), &tape.constant(Tensor::new(&[1, 3], tok)?), &tape.constant(eye(3, 3)))?;
    let prompt = shifted
        .value()
        .data()
        .iter()
        .zip(xs.data())
        .enumerate()
        .map(|(i, (&got, &x))| {
            let want = if (i / 4) % 3 == 0 { x + cval } else { x };
            if got == want {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, worse);

    let y = random_tensor(&[2, 3, 4, 4], rng);
    let gated = attention_gate(&tape.constant(y.clone()))?;
    let sigmoid = |v: f64| if v >= 0.0 { 1.0 / (1.0 + (-v).exp()) } else { v.exp() / (1.0 + v.exp()) };
    let gate = gated
        .value()
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &v)| if g == sigmoid(v) * v { 0.0 } else { f64::INFINITY })
        .fold(0.0, worse);

    let (a, b) = (random_tensor(&[2, 3, 4, 4], rng), random_tensor(&[2, 3, 4, 4], rng));
    let d = diff_direct(&tape.constant(a.clone()), &tape.constant(b.clone()))?;
    let direct = d
        .value()
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&g, (&p, &q))| if g == (p - q).abs() { 0.0 } else { f64::INFINITY })
        .fold(0.0, worse);

    Ok(vec![
        oracle("conv2d vs direct loops", 50, 1e-12, conv),
        oracle("lora identity-padded evaluation", 1, 1e-15, lora),
        oracle("prompt token shift", 1, 0.0, prompt),
        oracle("attention gate vs scalar y*sigmoid(y)", 1, 0.0, gate),
        oracle("direct difference vs scalar loop", 1, 0.0, direct),
    ])
}

pub fn oracle_suite() -> Result<Vec<Check>> {
    let mut rng = Rng::new(fnv1a(b"oracles"));
    let mut out = lovasz_oracles(&mut rng.fork(1))?;
    out.extend(loss_oracles(&mut rng.fork(2))?);
    out.extend(metric_oracles(&mut rng.fork(3))?);
    out.extend(schedule_oracles(&mut rng.fork(4))?);
    out.extend(format_oracles(&mut rng.fork(5))?);
    out.extend(module_oracles(&mut rng.fork(6))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lovasz_on_the_three_pixel_example() {
        let probs = vec![vec![0.8, 0.1, 0.9], vec![0.2, 0.9, 0.1]];
        assert!((lovasz_exact(&probs, &[1, 0, 0]) - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_hits_cycle_boundaries() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_closed_form(30.0, &cfg), lr_closed_form(0.0, &cfg));
        assert_eq!(lr_closed_form(90.0, &cfg), lr_closed_form(0.0, &cfg));
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn oracle_suite_passes() {
        let checks = oracle_suite().unwrap();
        assert!(checks.iter().all(Check::passed), "{}", table(&checks));
    }

    #[test]
    fn table_marks_failures() {
        let bad = oracle("x", 1, 0.0, 1.0);
        assert!(table(&[bad]).contains("FAIL"));
    }
}
