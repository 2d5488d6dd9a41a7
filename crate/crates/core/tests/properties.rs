use mcd_core::config::LossConfig;
use mcd_core::data::{augment, scd_to_mcd, AugmentationConfig, BiTemporalSample};
use mcd_core::decoder::attention_gate;
use mcd_core::losses::{dice_loss, focal_loss, lovasz_softmax};
use mcd_core::metrics::{compute_metrics, ConfusionMatrix};
use mcd_core::mscad::diff_direct;
use mcd_core::Result;
use mcd_tensor::{Rng, Tape, Tensor, Var};
use proptest::prelude::*;

type LossFn = for<'t> fn(&Var<'t, f64>, &[u8], &LossConfig) -> Result<Var<'t, f64>>;
const LOSSES: [(&str, LossFn); 3] = [("focal", focal_loss), ("dice", dice_loss), ("lovasz", lovasz_softmax)];

fn loss(f: LossFn, logits: &Tensor<f64>, target: &[u8]) -> f64 {
    let tape = Tape::new();
    f(&tape.constant(logits.clone()), target, &LossConfig::default())
        .unwrap()
        .item()
        .unwrap()
}

/// `[1, c, 1, n]` logits with targets in `0..c`.
fn instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<u8>)> {
    (2usize..5, 1usize..12).prop_flat_map(|(c, n)| {
        (
            Just(c),
            prop::collection::vec(-4.0f64..4.0, c * n),
            prop::collection::vec(0u8..c as u8, n),
        )
    })
}

fn logits_of(c: usize, data: Vec<f64>) -> Tensor<f64> {
    let n = data.len() / c;
    Tensor::new(&[1, c, 1, n], data).unwrap()
}

fn labels(k: u8, len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0..=k, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_pixel_permutation_equivariant((c, data, target) in instance(), seed in any::<u64>()) {
        let n = target.len();
        let mut perm: Vec<usize> = (0..n).collect();
        Rng::new(seed).shuffle(&mut perm);
        let shuffled: Vec<f64> = (0..c).flat_map(|k| perm.iter().map(move |&p| (k, p))).map(|(k, p)| data[k * n + p]).collect();
        let shuffled_target: Vec<u8> = perm.iter().map(|&p| target[p]).collect();
        let (a, b) = (logits_of(c, data), logits_of(c, shuffled));
        for (name, f) in LOSSES {
            let (x, y) = (loss(f, &a, &target), loss(f, &b, &shuffled_target));
            prop_assert!((x - y).abs() <= 1e-12, "{name}: {x} vs {y}");
        }
    }

    #[test]
    fn raising_the_true_logit_never_raises_a_loss((c, data, target) in instance(), pick in any::<prop::sample::Index>(), delta in 0.01f64..3.0) {
        let n = target.len();
        let p = pick.index(n);
        let mut raised = data.clone();
        raised[target[p] as usize * n + p] += delta;
        let (a, b) = (logits_of(c, data), logits_of(c, raised));
        for (name, f) in LOSSES {
            let (before, after) = (loss(f, &a, &target), loss(f, &b, &target));
            prop_assert!(after <= before + 1e-12, "{name}: {before} -> {after}");
        }
    }

    #[test]
    fn accumulation_is_associative(a in labels(6, 64), b in labels(6, 64), c in labels(6, 40), d in labels(6, 40)) {
        let mut split = ConfusionMatrix::new(7);
        split.update(&a, &b).unwrap();
        split.update(&c, &d).unwrap();
        let mut joined = ConfusionMatrix::new(7);
        joined.update(&[a, c.clone()].concat(), &[b, d.clone()].concat()).unwrap();
        prop_assert_eq!(&split, &joined);
        prop_assert_eq!(compute_metrics(&split, false).unwrap(), compute_metrics(&joined, false).unwrap());
    }

    #[test]
    fn oa_ignores_relabelling(pred in labels(6, 100), gt in labels(6, 100), seed in any::<u64>()) {
        let mut perm: Vec<u8> = (0..7).collect();
        Rng::new(seed).shuffle(&mut perm);
        let relabel = |v: &[u8]| v.iter().map(|&x| perm[x as usize]).collect::<Vec<u8>>();
        let mut a = ConfusionMatrix::new(7);
        a.update(&pred, &gt).unwrap();
        let mut b = ConfusionMatrix::new(7);
        b.update(&relabel(&pred), &relabel(&gt)).unwrap();
        prop_assert_eq!(compute_metrics(&a, true).unwrap().oa, compute_metrics(&b, true).unwrap().oa);
    }

    #[test]
    fn augmentation_keeps_pixels_together(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n = w * h;
        // t1 encodes each pixel's label, t2 its position, so any tearing shows
        let label: Vec<u8> = (0..n).map(|_| rng.below(4) as u8).collect();
        let t1: Vec<u8> = label.iter().flat_map(|&l| [l, l, l]).collect();
        let t2: Vec<u8> = (0..n).flat_map(|i| [i as u8, (i >> 8) as u8, 7]).collect();
        let s = BiTemporalSample { id: "p".into(), width: w, height: h, t1, t2, label };
        let cfg = AugmentationConfig { flip: true, rotate: true };
        let out = augment(&s, cfg, &mut rng);
        prop_assert_eq!(out.width * out.height, n);
        let mut before = s.label.clone();
        let mut after = out.label.clone();
        before.sort_unstable();
        after.sort_unstable();
        prop_assert_eq!(before, after);
        let mut seen = vec![false; n];
        for i in 0..n {
            prop_assert_eq!(out.t1[3 * i], out.label[i]);
            let src = out.t2[3 * i] as usize | (out.t2[3 * i + 1] as usize) << 8;
            prop_assert_eq!(s.label[src], out.label[i]);
            seen[src] = true;
        }
        prop_assert!(seen.into_iter().all(|v| v));
    }

    #[test]
    fn conversion_is_zero_where_labels_agree(a in labels(6, 80), b in labels(6, 80)) {
        let out = scd_to_mcd(&a, &b).unwrap();
        for i in 0..a.len() {
            if a[i] == b[i] {
                prop_assert_eq!(out[i], 0);
            } else {
                prop_assert_eq!(out[i], b[i]);
            }
        }
    }

    #[test]
    fn direct_difference_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 24), b in prop::collection::vec(-5.0f64..5.0, 24)) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2, 3, 4], a).unwrap());
        let y = tape.constant(Tensor::new(&[1, 2, 3, 4], b).unwrap());
        prop_assert!(diff_direct(&x, &y).unwrap().value().bit_eq(&diff_direct(&y, &x).unwrap().value()));
        prop_assert!(diff_direct(&x, &x).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_attenuates(values in prop::collection::vec(-30.0f64..30.0, 1..40)) {
        let tape = Tape::new();
        let n = values.len();
        let y = tape.constant(Tensor::new(&[1, 1, 1, n], values.clone()).unwrap());
        let f = attention_gate(&y).unwrap();
        for (&g, &v) in f.value().data().iter().zip(&values) {
            if v != 0.0 {
                let r = g / v;
                prop_assert!((0.0..=1.0).contains(&r), "{v} -> {g}");
            }
        }
    }
}
