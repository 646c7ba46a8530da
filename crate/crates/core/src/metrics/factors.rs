//! Diagnostics for how well a set of shadow models imitates a target:
//! distribution overlap with the target, and output diversity.

use crate::attack::GaussianModel;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Overlap of two normals, `exp(−D_B)`.
pub fn bhattacharyya(g1: &GaussianModel, g2: &GaussianModel) -> f64 {
    let (v1, v2) = (g1.std * g1.std, g2.std * g2.std);
    let d = 0.25 * (g1.mean - g2.mean).powi(2) / (v1 + v2) + 0.5 * ((v1 + v2) / (2.0 * g1.std * g2.std)).ln();
    (-d).exp()
}

/// Mean Shannon entropy (nats) of the ensemble-average prediction.
pub fn ensemble_entropy(outputs: &[Matrix]) -> Result<f64> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Input("no model outputs".into()))?;
    if outputs.iter().any(|o| o.shape() != first.shape()) {
        return Err(Error::Shape("model outputs differ in shape".into()));
    }
    let k = outputs.len() as f64;
    let mut total = 0.0;
    for r in 0..first.rows() {
        for c in 0..first.cols() {
            // offset form keeps the mean of identical values exact
            let p0 = first[(r, c)];
            let p = p0 + outputs.iter().map(|o| o[(r, c)] - p0).sum::<f64>() / k;
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    Ok(total / first.rows().max(1) as f64)
}

pub const DIVERSITY_BASE: usize = 4;

/// Entropy gain of the first `k` models over the first four, for each `k`
/// in `sizes`.
pub fn entropy_diversity(outputs: &[Matrix], sizes: &[usize]) -> Result<Vec<(usize, f64)>> {
    if outputs.len() < DIVERSITY_BASE {
        return Err(Error::Input(format!(
            "entropy diversity needs at least {DIVERSITY_BASE} models, got {}",
            outputs.len()
        )));
    }
    let base = ensemble_entropy(&outputs[..DIVERSITY_BASE])?;
    sizes
        .iter()
        .map(|&k| {
            if k < DIVERSITY_BASE || k > outputs.len() {
                return Err(Error::Input(format!("subset size {k} outside {DIVERSITY_BASE}..={}", outputs.len())));
            }
            Ok((k, ensemble_entropy(&outputs[..k])? - base))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(m: f64, s: f64) -> GaussianModel {
        GaussianModel::new(m, s).unwrap()
    }

    #[test]
    fn bhattacharyya_values() {
        assert!((bhattacharyya(&g(0.3, 2.0), &g(0.3, 2.0)) - 1.0).abs() < 1e-15);
        assert!((bhattacharyya(&g(0.0, 1.0), &g(1.0, 1.0)) - (-0.125f64).exp()).abs() < 1e-15);
        assert!((bhattacharyya(&g(0.0, 1.0), &g(1.0, 1.0)) - 0.88250).abs() < 1e-5);
        assert!(bhattacharyya(&g(0.0, 1.0), &g(0.0, 1e9)) < 1e-3);
        let (a, b) = (g(0.2, 0.7), g(-1.0, 2.5));
        assert_eq!(bhattacharyya(&a, &b), bhattacharyya(&b, &a));
        assert!(bhattacharyya(&a, &b) <= 1.0);
    }

    #[test]
    fn duplicates_add_no_entropy() {
        let m = Matrix::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let gains = entropy_diversity(&vec![m; 9], &[4, 6, 9]).unwrap();
        assert!(gains.iter().all(|(_, v)| *v == 0.0));
        assert!(entropy_diversity(&[Matrix::zeros(1, 2)], &[4]).is_err());
    }

    #[test]
    fn gain_bounded_by_log_classes() {
        let rows = |p: f64| Matrix::from_rows(&[vec![p, 1.0 - p]]).unwrap();
        let outs: Vec<Matrix> = [0.9, 0.9, 0.9, 0.9, 0.1, 0.2, 0.05, 0.6].iter().map(|p| rows(*p)).collect();
        let base = ensemble_entropy(&outs[..4]).unwrap();
        for (_, gain) in entropy_diversity(&outs, &[5, 6, 7, 8]).unwrap() {
            assert!(gain <= 2f64.ln() - base + 1e-15);
            assert!(gain > 0.0);
        }
    }
}
