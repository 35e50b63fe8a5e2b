//! Confusion matrix and IoU metrics over composite labels.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{ClassTaxonomy, LabelCode};
use crate::mars::{MarsModel, PreparedSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Valid composite codes, ascending; row/column order of the confusion matrix.
    pub codes: Vec<LabelCode>,
    pub names: Vec<String>,
    /// `confusion[gt][pred]` point counts.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for codes absent from both ground truth and predictions.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub moving_miou: Option<f64>,
    pub static_miou: Option<f64>,
    pub points: u64,
    /// Predicted codes that mark a non-movable class as moving. Always zero for gated output.
    pub gating_violations: u64,
}

/// Accumulates (ground truth, prediction) pairs.
#[derive(Clone, Debug)]
pub struct Confusion {
    codes: Vec<LabelCode>,
    index: Vec<Option<usize>>,
    matrix: Vec<Vec<u64>>,
    gating_violations: u64,
    num_classes: usize,
    movable: Vec<bool>,
}

impl Confusion {
    pub fn new(tax: &ClassTaxonomy) -> Self {
        let codes = tax.valid_codes();
        let max = 2 * tax.num_classes();
        let mut index = vec![None; max];
        for (i, &c) in codes.iter().enumerate() {
            index[c as usize] = Some(i);
        }
        Confusion {
            matrix: vec![vec![0; codes.len()]; codes.len()],
            codes,
            index,
            gating_violations: 0,
            num_classes: tax.num_classes(),
            movable: tax.classes().iter().map(|c| c.movable).collect(),
        }
    }

    fn slot(&self, code: LabelCode) -> Result<usize> {
        self.index
            .get(code as usize)
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidLabel(format!("code {code} is not valid for this taxonomy")))
    }

    pub fn add(&mut self, truth: &[LabelCode], predicted: &[LabelCode]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::Arity {
                what: "predictions per labeled point",
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        for (&t, &p) in truth.iter().zip(predicted) {
            let c = p as usize;
            if c >= self.num_classes && c < 2 * self.num_classes && !self.movable[c - self.num_classes] {
                self.gating_violations += 1;
            }
            let (ti, pi) = (self.slot(t)?, self.slot(p)?);
            self.matrix[ti][pi] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.gating_violations += other.gating_violations;
    }

    pub fn report(&self, tax: &ClassTaxonomy) -> Result<EvalReport> {
        let n = self.codes.len();
        let row: Vec<u64> = self.matrix.iter().map(|r| r.iter().sum()).collect();
        let col: Vec<u64> = (0..n).map(|j| self.matrix.iter().map(|r| r[j]).sum()).collect();
        let iou: Vec<Option<f64>> = (0..n)
            .map(|i| {
                let tp = self.matrix[i][i];
                let union = row[i] + col[i] - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let mean = |pick: &dyn Fn(LabelCode) -> bool| {
            let v: Vec<f64> = self
                .codes
                .iter()
                .zip(&iou)
                .filter(|(c, _)| pick(**c))
                .filter_map(|(_, v)| *v)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let c = self.num_classes as LabelCode;
        let points: u64 = row.iter().sum();
        if points == 0 {
            return Err(Error::EmptyDataset("no labeled points were evaluated".into()));
        }
        Ok(EvalReport {
            names: self.codes.iter().map(|&k| tax.code_name(k)).collect::<Result<_>>()?,
            codes: self.codes.clone(),
            confusion: self.matrix.clone(),
            miou: mean(&|_| true).unwrap_or(0.0),
            moving_miou: mean(&|k| k >= c),
            static_miou: mean(&|k| k < c),
            iou,
            points,
            gating_violations: self.gating_violations,
        })
    }
}

/// Gated predictions for each sample's target frame, in sample order.
pub fn predict_samples(model: &MarsModel, samples: &[PreparedSample], tax: &ClassTaxonomy) -> Result<Vec<Vec<LabelCode>>> {
    samples.par_iter().map(|s| model.infer(s, tax)).collect()
}

pub fn evaluate_samples(model: &MarsModel, samples: &[PreparedSample], tax: &ClassTaxonomy) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no evaluation samples".into()));
    }
    let predictions = predict_samples(model, samples, tax)?;
    let mut conf = Confusion::new(tax);
    for (s, p) in samples.iter().zip(&predictions) {
        conf.add(&s.require_labels()?.codes, p)?;
    }
    conf.report(tax)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into())
}

impl EvalReport {
    /// Per-class table followed by a `#`-prefixed summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("code,name,gt_points,pred_points,tp,iou\n");
        for (i, (&code, name)) in self.codes.iter().zip(&self.names).enumerate() {
            let gt: u64 = self.confusion[i].iter().sum();
            let pred: u64 = self.confusion.iter().map(|r| r[i]).sum();
            let _ = writeln!(out, "{code},{name},{gt},{pred},{},{}", self.confusion[i][i], opt(self.iou[i]));
        }
        let _ = writeln!(out, "# mean over classes present in ground truth or predictions");
        let _ = writeln!(out, "# points,{}", self.points);
        let _ = writeln!(out, "# miou,{:.6}", self.miou);
        let _ = writeln!(out, "# moving_miou,{}", opt(self.moving_miou));
        let _ = writeln!(out, "# static_miou,{}", opt(self.static_miou));
        let _ = writeln!(out, "# gating_violations,{}", self.gating_violations);
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("gt\\pred");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.confusion) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> ClassTaxonomy {
        ClassTaxonomy::default_synthetic()
    }

    #[test]
    fn perfect_predictions() {
        let t = tax();
        let mut c = Confusion::new(&t);
        let gt = vec![0, 7, 3, 3, 8];
        c.add(&gt, &gt).unwrap();
        let r = c.report(&t).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.points, 5);
    }

    #[test]
    fn constant_wrong_class_hand_arithmetic() {
        let t = tax();
        let mut c = Confusion::new(&t);
        let gt: Vec<LabelCode> = (0..100).map(|i| if i < 50 { 3 } else { 4 }).collect();
        c.add(&gt, &[3; 100]).unwrap();
        let r = c.report(&t).unwrap();
        let i3 = r.codes.iter().position(|&k| k == 3).unwrap();
        let i4 = r.codes.iter().position(|&k| k == 4).unwrap();
        assert_eq!(r.iou[i3], Some(0.5));
        assert_eq!(r.iou[i4], Some(0.0));
        assert_eq!(r.miou, 0.25);
        let rows: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!((rows[i3], rows[i4]), (50, 50));
    }

    #[test]
    fn order_invariance_and_violations() {
        let t = tax();
        let gt = vec![0, 7, 3, 8, 1, 4];
        let pr = vec![7, 7, 3, 1, 1, 5];
        let mut a = Confusion::new(&t);
        a.add(&gt, &pr).unwrap();
        let mut b = Confusion::new(&t);
        let mut idx: Vec<usize> = (0..6).collect();
        idx.reverse();
        b.add(
            &idx.iter().map(|&i| gt[i]).collect::<Vec<_>>(),
            &idx.iter().map(|&i| pr[i]).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(a.report(&t).unwrap(), b.report(&t).unwrap());
        assert_eq!(a.report(&t).unwrap().gating_violations, 0);
        // Code 10 = moving ground: not a valid code, so it is both a violation and an error.
        assert!(a.add(&[3], &[10]).is_err());
        assert_eq!(a.gating_violations, 1);
    }

    #[test]
    fn csv_has_summary() {
        let t = tax();
        let mut c = Confusion::new(&t);
        c.add(&[0, 7], &[0, 0]).unwrap();
        let csv = c.report(&t).unwrap().to_csv();
        assert!(csv.contains("# miou,"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 11);
    }
}
