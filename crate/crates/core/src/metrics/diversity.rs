use crate::error::{Error, Result};
use crate::nn::matrix::dot;
use crate::nn::Matrix;
use crate::pool::{Pathway, ShadowPool};

fn mean_abs_cosine(a: &Matrix, b: &Matrix) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter_rows().zip(b.iter_rows()) {
        let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
        if nx > 0.0 && ny > 0.0 {
            sum += (dot(x, y) / (nx * ny)).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean `|cos|` between expert outputs of two pathways on the same probe
/// inputs, over every pathway pair and every layer where the two pathways
/// use different experts. Rows where either activation is all zero are
/// skipped.
pub fn expert_activation_similarity(pool: &ShadowPool, pathways: &[Pathway], probe: &Matrix) -> Result<f64> {
    let hidden: Vec<Vec<Matrix>> = pathways
        .iter()
        .map(|p| Ok(pool.pathway_forward(p, probe)?.hidden))
        .collect::<Result<_>>()?;
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..pathways.len() {
        for j in i + 1..pathways.len() {
            for l in 0..pool.arch.layers {
                if pathways[i].0[l] == pathways[j].0[l] {
                    continue;
                }
                if let Some(c) = mean_abs_cosine(&hidden[i][l], &hidden[j][l]) {
                    sum += c;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::Input("no pathway pair with distinct, active experts".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::enumerate_pathways;
    use crate::pool::fixtures::small_arch;
    use crate::rng::RandomSource;

    #[test]
    fn identical_experts_are_fully_similar() {
        let mut pool = ShadowPool::new(small_arch(), &mut RandomSource::new(0).stream("p")).unwrap();
        let probe = Matrix::from_rows(&[vec![1.0, 0.5, -0.2], vec![-0.3, 0.8, 1.1], vec![0.4, 0.4, 0.4]]).unwrap();
        let all = enumerate_pathways(2, 2).unwrap();
        let before = expert_activation_similarity(&pool, &all, &probe).unwrap();
        assert!((0.0..=1.0).contains(&before));
        for row in pool.experts.iter_mut() {
            row[1] = row[0].clone();
        }
        let same = expert_activation_similarity(&pool, &all, &probe).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        assert!(expert_activation_similarity(&pool, &all[..1], &probe).is_err());
    }
}
