//! Confusion-matrix evaluation: OA and per-class precision, recall, F1 and IoU.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[i][j]` = pixels predicted `i` whose ground truth is `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, pred: usize, gt: usize) -> u64 {
        self.counts[pred * self.classes + gt]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Invalid(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        if let Some(&bad) = pred.iter().chain(gt).find(|&&v| v as usize >= self.classes) {
            return Err(Error::Invalid(format!("class {bad} outside [0, {})", self.classes)));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[p as usize * self.classes + g as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ClassMismatch {
                model: self.classes,
                data: other.classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&j| j != c).map(|j| self.get(c, j)).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&i| i != c).map(|i| self.get(i, c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

impl ClassMetrics {
    /// Classes never predicted nor present carry no information.
    pub fn is_observed(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub include_background: bool,
    pub oa: f64,
    /// Every class in `0..=K` regardless of `include_background`.
    pub per_class: Vec<ClassMetrics>,
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// OA over all pixels; macro means over observed classes, skipping class 0
/// unless `include_background`. With no observed class the macro means are 1.
pub fn compute_metrics(cm: &ConfusionMatrix, include_background: bool) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("confusion matrix is empty".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: c,
                tp,
                fp,
                fn_,
                precision,
                recall,
                f1,
                iou: ratio(tp, tp + fp + fn_),
            }
        })
        .collect();
    let included: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|m| (include_background || m.class > 0) && m.is_observed())
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if included.is_empty() {
            1.0
        } else {
            included.iter().map(|m| f(m)).sum::<f64>() / included.len() as f64
        }
    };
    let diag: u64 = (0..cm.classes()).map(|c| cm.tp(c)).sum();
    Ok(Metrics {
        include_background,
        oa: diag as f64 / total as f64,
        miou: mean(|m| m.iou),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        per_class,
    })
}

/// Both macro conventions for one confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub all: Metrics,
    pub changed: Metrics,
    pub pixels: u64,
}

impl Report {
    pub fn new(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            all: compute_metrics(cm, true)?,
            changed: compute_metrics(cm, false)?,
            pixels: cm.total(),
        })
    }

    /// Per-class OA/P/R/F1/IoU table followed by the macro rows.
    pub fn table(&self, names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>8} {:>8} {:>8} {:>8} {:>8}", "class", "OA", "P", "R", "F1", "IoU");
        for m in &self.all.per_class {
            let name = names.get(m.class).cloned().unwrap_or_else(|| format!("class_{}", m.class));
            let _ = writeln!(
                s,
                "{:<20} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name, self.all.oa, m.precision, m.recall, m.f1, m.iou
            );
        }
        for (label, m) in [("mean (all)", &self.all), ("mean (changed)", &self.changed)] {
            let _ = writeln!(
                s,
                "{:<20} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                label, m.oa, m.precision, m.recall, m.f1, m.miou
            );
        }
        s
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pixels={}", self.pixels);
        let _ = writeln!(s, "oa={}", self.all.oa);
        for (tag, m) in [("all", &self.all), ("changed", &self.changed)] {
            let _ = writeln!(s, "miou_{tag}={}", m.miou);
            let _ = writeln!(s, "precision_{tag}={}", m.precision);
            let _ = writeln!(s, "recall_{tag}={}", m.recall);
            let _ = writeln!(s, "f1_{tag}={}", m.f1);
        }
        for m in &self.all.per_class {
            let c = m.class;
            let _ = writeln!(s, "p_{c}={}\nr_{c}={}\nf1_{c}={}\niou_{c}={}", m.precision, m.recall, m.f1, m.iou);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_hand_count() {
        let mut cm = ConfusionMatrix::new(2);
        // [[2,1],[1,2]] with predictions as rows
        cm.update(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 0, 1, 1]).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (2, 1, 1, 2));
        let m = compute_metrics(&cm, true).unwrap();
        assert!((m.oa - 4.0 / 6.0).abs() < 1e-15);
        let c1 = m.per_class[1];
        assert!((c1.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((c1.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((c1.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c1.iou, 0.5);
    }

    #[test]
    fn single_pixel_lands_in_row_pred_col_gt() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[1], &[2]).unwrap();
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(7);
        let labels: Vec<u8> = (0..70).map(|i| (i % 7) as u8).collect();
        cm.update(&labels, &labels).unwrap();
        let r = Report::new(&cm).unwrap();
        assert_eq!((r.all.oa, r.all.miou, r.changed.miou, r.changed.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(r.table(&[]).contains("mean (changed)"));
        assert!(r.key_values().contains("miou_changed=1"));
    }

    #[test]
    fn empty_and_out_of_range() {
        assert!(compute_metrics(&ConfusionMatrix::new(3), true).is_err());
        assert!(ConfusionMatrix::new(3).update(&[3], &[0]).is_err());
    }

    #[test]
    fn unobserved_class_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1, 1], &[0, 1, 0]).unwrap();
        let m = compute_metrics(&cm, false).unwrap();
        assert_eq!(m.miou, 0.5);
    }
}
