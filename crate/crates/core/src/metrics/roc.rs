use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Examples scoring at least this value are called members.
    pub threshold: f64,
}

/// Points from `(0,0)` to `(1,1)` in order of decreasing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(out, "{:?},{:?},{:?}", p.fpr, p.tpr, p.threshold);
        }
        out
    }
}

/// ROC by sweeping the threshold down through the distinct scores; tied
/// scores move together, so the trapezoid area counts ties as one half.
pub fn roc_and_auc(scores: &[(f64, bool)]) -> Result<(RocCurve, f64)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Input(format!("score {s} is not a number")));
    }
    let pos = scores.iter().filter(|(_, l)| *l).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input(format!("ROC needs both classes ({pos} members, {neg} non-members)")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    let curve = RocCurve { points };
    let auc = curve.auc();
    Ok((curve, auc))
}

/// Highest TPR among operating points whose FPR does not exceed the target.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.fpr <= fpr_target)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}
