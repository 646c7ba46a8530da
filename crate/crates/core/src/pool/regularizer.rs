//! Pathway regularizers and the combined training objective.
//!
//! For an activated pathway `P1` and a reference pathway `P2`:
//!
//! - similarity: `-(KL(p1‖p2) + KL(p2‖p1)) / 2`, averaged over the batch;
//! - orthogonality: `Σ_l |<h1_l, h2_l>|` over expert layers, averaged over
//!   the batch;
//! - objective: `CE(p1, y) + α·similarity + β·orthogonality`.
//!
//! Gradients are taken w.r.t. the `P1` branch only; `p2` and `H2` are
//! constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, cross_entropy_grad, kl_divergence, softmax_backward, Matrix, PROB_EPS};

pub fn similarity_regularizer(p1: &Matrix, p2: &Matrix) -> Result<f64> {
    if p1.shape() != p2.shape() || p1.rows() == 0 {
        return Err(Error::Shape(format!(
            "probability batches {:?} and {:?}",
            p1.shape(),
            p2.shape()
        )));
    }
    let mut total = 0.0;
    for (a, b) in p1.iter_rows().zip(p2.iter_rows()) {
        total += -0.5 * (kl_divergence(a, b)? + kl_divergence(b, a)?);
    }
    Ok(total / p1.rows() as f64)
}

/// d(similarity)/d(p1), already divided by the batch size.
pub fn similarity_grad(p1: &Matrix, p2: &Matrix) -> Result<Matrix> {
    if p1.shape() != p2.shape() {
        return Err(Error::Shape("similarity gradient shape mismatch".into()));
    }
    let n = p1.rows() as f64;
    let mut g = Matrix::zeros(p1.rows(), p1.cols());
    for r in 0..p1.rows() {
        let (a, b) = (p1.row(r), p2.row(r));
        for (i, gi) in g.row_mut(r).iter_mut().enumerate() {
            let live = if a[i] > PROB_EPS { 1.0 } else { 0.0 };
            let d = a[i].max(PROB_EPS).ln() - b[i].max(PROB_EPS).ln() + live * (1.0 - b[i] / a[i].max(PROB_EPS));
            *gi = -0.5 * d / n;
        }
    }
    Ok(g)
}

fn check_hidden(h1: &[Matrix], h2: &[Matrix]) -> Result<()> {
    if h1.len() != h2.len() || h1.is_empty() {
        return Err(Error::Shape(format!(
            "activation sets hold {} and {} layers",
            h1.len(),
            h2.len()
        )));
    }
    let rows = h1[0].rows();
    for (l, (a, b)) in h1.iter().zip(h2).enumerate() {
        if a.shape() != b.shape() || a.rows() != rows {
            return Err(Error::Shape(format!(
                "layer {l}: activations {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}

pub fn orthogonal_regularizer(h1: &[Matrix], h2: &[Matrix]) -> Result<f64> {
    check_hidden(h1, h2)?;
    let rows = h1[0].rows();
    let mut total = 0.0;
    for (a, b) in h1.iter().zip(h2) {
        for r in 0..rows {
            total += crate::nn::matrix::dot(a.row(r), b.row(r)).abs();
        }
    }
    Ok(total / rows.max(1) as f64)
}

/// d(orthogonality)/d(h1_l) for every layer, divided by the batch size.
pub fn orthogonal_grad(h1: &[Matrix], h2: &[Matrix]) -> Result<Vec<Matrix>> {
    check_hidden(h1, h2)?;
    let n = h1[0].rows() as f64;
    Ok(h1
        .iter()
        .zip(h2)
        .map(|(a, b)| {
            let mut g = b.clone();
            for r in 0..a.rows() {
                let s = crate::nn::matrix::dot(a.row(r), b.row(r));
                let sign = if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                g.row_mut(r).iter_mut().for_each(|v| *v *= sign / n);
            }
            g
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub sr: f64,
    pub or: f64,
    pub total: f64,
}

/// Outputs of the reference pathway, held fixed during a step.
#[derive(Debug, Clone)]
pub struct Reference<'a> {
    pub probs: &'a Matrix,
    pub hidden: &'a [Matrix],
}

/// Value of the training objective for one batch.
pub fn pathway_objective(
    p1: &Matrix,
    labels: &[usize],
    h1: &[Matrix],
    reference: Option<&Reference<'_>>,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    let ce = cross_entropy(p1, labels)?;
    let (mut sr, mut or) = (0.0, 0.0);
    if let Some(r) = reference {
        if alpha != 0.0 {
            sr = similarity_regularizer(p1, r.probs)?;
        }
        if beta != 0.0 {
            or = orthogonal_regularizer(h1, r.hidden)?;
        }
    }
    Ok(LossBreakdown {
        ce,
        sr,
        or,
        total: ce + alpha * sr + beta * or,
    })
}

/// Gradient of [`pathway_objective`] w.r.t. the `P1` logits, plus the
/// gradient w.r.t. each `P1` expert-layer activation.
pub fn pathway_objective_grads(
    p1: &Matrix,
    labels: &[usize],
    h1: &[Matrix],
    reference: Option<&Reference<'_>>,
    alpha: f64,
    beta: f64,
) -> Result<(Matrix, Vec<Matrix>)> {
    let mut dz = cross_entropy_grad(p1, labels)?;
    let mut dh = Vec::new();
    if let Some(r) = reference {
        if alpha != 0.0 {
            let mut dp = similarity_grad(p1, r.probs)?;
            dp.scale(alpha);
            dz.add_assign(&softmax_backward(p1, &dp)?)?;
        }
        if beta != 0.0 {
            dh = orthogonal_grad(h1, r.hidden)?;
            dh.iter_mut().for_each(|g| g.scale(beta));
        }
    }
    Ok((dz, dh))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn similarity_values() {
        let a = m(&[vec![0.5, 0.5]]);
        let b = m(&[vec![0.9, 0.1]]);
        assert_eq!(similarity_regularizer(&a, &a).unwrap(), 0.0);
        let kl_ab = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl_ba = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let v = similarity_regularizer(&a, &b).unwrap();
        assert!((v + 0.5 * (kl_ab + kl_ba)).abs() < 1e-15);
        assert!((v + 0.43945).abs() < 1e-5);
        assert_eq!(v, similarity_regularizer(&b, &a).unwrap());
    }

    #[test]
    fn orthogonal_values() {
        let h1 = [m(&[vec![1.0, 0.0]])];
        let h2 = [m(&[vec![0.0, 3.0]])];
        assert_eq!(orthogonal_regularizer(&h1, &h2).unwrap(), 0.0);
        let h1 = [m(&[vec![1.0, 2.0]])];
        let h2 = [m(&[vec![3.0, -1.0]])];
        assert_eq!(orthogonal_regularizer(&h1, &h2).unwrap(), 1.0);
        // layer values 0 and 1
        let h1 = [m(&[vec![1.0, 0.0]]), m(&[vec![1.0, 2.0]])];
        let h2 = [m(&[vec![0.0, 1.0]]), m(&[vec![3.0, -1.0]])];
        assert_eq!(orthogonal_regularizer(&h1, &h2).unwrap(), 1.0);
        assert!(orthogonal_regularizer(&h1, &h2[..1]).is_err());
        assert!(orthogonal_regularizer(&[m(&[vec![1.0]])], &[m(&[vec![1.0, 2.0]])]).is_err());
    }

    #[test]
    fn composite_hand_example() {
        let p1 = m(&[vec![0.5, 0.5]]);
        let p2 = m(&[vec![0.9, 0.1]]);
        let h1 = [m(&[vec![1.0, 0.0]])];
        let h2 = [m(&[vec![0.0, 1.0]])];
        let r = Reference { probs: &p2, hidden: &h2 };
        let loss = pathway_objective(&p1, &[0], &h1, Some(&r), 1.0, 0.0).unwrap();
        assert!((loss.total - 0.25370).abs() < 1e-5);
        assert!((loss.ce - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn regularizers_off_is_plain_ce() {
        let p1 = m(&[vec![0.2, 0.8], vec![0.6, 0.4]]);
        let p2 = m(&[vec![0.9, 0.1], vec![0.3, 0.7]]);
        let h = [m(&[vec![1.0], vec![2.0]])];
        let r = Reference { probs: &p2, hidden: &h };
        let loss = pathway_objective(&p1, &[1, 0], &h, Some(&r), 0.0, 0.0).unwrap();
        assert!((loss.total - cross_entropy(&p1, &[1, 0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn similarity_gradient_matches_finite_differences_in_probability_space() {
        let p1 = m(&[vec![0.2, 0.3, 0.5], vec![0.7, 0.2, 0.1]]);
        let p2 = m(&[vec![0.4, 0.4, 0.2], vec![0.1, 0.1, 0.8]]);
        let g = similarity_grad(&p1, &p2).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut a = p1.clone();
                a[(r, c)] += h;
                let up = similarity_regularizer(&a, &p2).unwrap();
                a[(r, c)] -= 2.0 * h;
                let down = similarity_regularizer(&a, &p2).unwrap();
                assert!(((up - down) / (2.0 * h) - g[(r, c)]).abs() < 1e-7);
            }
        }
    }
}
