use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn check_labels(p: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != p.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            p.rows()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= p.cols()) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {} classes",
            p.cols()
        )));
    }
    Ok(())
}

/// Mean over rows of `-ln p[label]`.
pub fn cross_entropy(p: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(p, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -p[(r, y)].max(PROB_EPS).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the batch-mean cross-entropy w.r.t. the logits that produced
/// `p` through softmax: `(p - onehot) / batch`.
pub fn cross_entropy_grad(p: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_labels(p, labels)?;
    let n = labels.len() as f64;
    let mut g = p.clone();
    for (r, &y) in labels.iter().enumerate() {
        g[(r, y)] -= 1.0;
    }
    g.scale(1.0 / n);
    Ok(g)
}

/// `Σ p·ln(p/q)` with both arguments of the log clamped below by [`PROB_EPS`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(PROB_EPS).ln() - b.max(PROB_EPS).ln()))
        .sum())
}

/// Chains a gradient w.r.t. softmax probabilities back to the logits:
/// `dz = p ⊙ (dp - <dp, p>)`, row by row.
pub fn softmax_backward(p: &Matrix, dp: &Matrix) -> Result<Matrix> {
    if p.shape() != dp.shape() {
        return Err(Error::Shape("softmax backward shape mismatch".into()));
    }
    let mut dz = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row(r);
        let gr = dp.row(r);
        let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (j, d) in dz.row_mut(r).iter_mut().enumerate() {
            *d = pr[j] * (gr[j] - inner);
        }
    }
    Ok(dz)
}
