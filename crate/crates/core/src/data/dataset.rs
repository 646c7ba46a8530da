use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::RandomSource;

/// Labelled examples with stable integer ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Binary attribute used by property inference.
    pub property: Option<Vec<bool>>,
    pub ids: Vec<u64>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        property: Option<Vec<bool>>,
        ids: Vec<u64>,
        classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || ids.len() != n || property.as_ref().is_some_and(|p| p.len() != n) {
            return Err(Error::Shape(format!(
                "dataset columns disagree on length (features {n}, labels {}, ids {})",
                labels.len(),
                ids.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Input(format!("label {bad} outside {classes} classes")));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Input(format!("duplicate id {dup}")));
        }
        Ok(Self {
            features,
            labels,
            property,
            ids,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at the given positions, in order.
    pub fn select(&self, positions: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(positions),
            labels: positions.iter().map(|&i| self.labels[i]).collect(),
            property: self
                .property
                .as_ref()
                .map(|p| positions.iter().map(|&i| p[i]).collect()),
            ids: positions.iter().map(|&i| self.ids[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Rows with the given ids, in the order given.
    pub fn subset_by_ids(&self, ids: &[u64]) -> Result<Dataset> {
        let index = self.id_index();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("unknown example id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&positions))
    }

    pub fn positive_property_fraction(&self) -> Option<f64> {
        self.property
            .as_ref()
            .map(|p| p.iter().filter(|b| **b).count() as f64 / p.len().max(1) as f64)
    }
}

/// Class means for [`gen_blobs`]: standard-normal directions scaled to unit length.
pub fn blob_means(seed: u64, n_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = RandomSource::new(seed).stream("blobs/means");
    (0..n_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Isotropic Gaussian clusters, one per class, with means on the unit sphere.
/// Rows are shuffled; ids are `0..n` in row order.
pub fn gen_blobs(
    seed: u64,
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    spread: f64,
) -> Result<Dataset> {
    if n_classes < 2 || dim == 0 || spread < 0.0 || !spread.is_finite() {
        return Err(Error::Input(format!(
            "blobs need >= 2 classes, dim >= 1 and finite spread >= 0 (got {n_classes}, {dim}, {spread})"
        )));
    }
    let means = blob_means(seed, n_classes, dim);
    let mut rng = RandomSource::new(seed).stream("blobs/points");
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n_per_class * n_classes);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = mean
                .iter()
                .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push((x, c));
        }
    }
    rows.shuffle(&mut rng);
    let n = rows.len();
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (x, c) in rows {
        values.extend(x);
        labels.push(c);
    }
    Dataset::new(
        Matrix::from_vec(n, dim, values)?,
        labels,
        None,
        (0..n as u64).collect(),
        n_classes,
    )
}

/// Knobs of the property-separable tabular generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyFixture {
    /// Added to feature 0 of flagged rows.
    pub shift: f64,
    /// Logit offset `±effect` applied to the label of flagged / unflagged rows.
    pub label_effect: f64,
    /// Weight of the last feature in the label logit.
    pub feature_weight: f64,
}

impl Default for PropertyFixture {
    fn default() -> Self {
        Self {
            shift: 1.0,
            label_effect: 1.5,
            feature_weight: 2.0,
        }
    }
}

/// Binary-label tabular data where exactly `round(t·n)` rows carry the property.
///
/// Features are standard normal, shifted by `fixture.shift` on coordinate 0
/// for flagged rows. Labels are Bernoulli with logit
/// `feature_weight·x[dim-1] ± label_effect` (plus for flagged rows), so the
/// property ratio leaks into any model fitted to the data.
pub fn gen_property_tabular(
    seed: u64,
    n: usize,
    dim: usize,
    ratio: f64,
    fixture: PropertyFixture,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&ratio) || dim == 0 {
        return Err(Error::Input(format!(
            "property ratio must lie in [0,1] and dim >= 1 (got {ratio}, {dim})"
        )));
    }
    let mut rng = RandomSource::new(seed).stream("property/rows");
    let flagged = (ratio * n as f64).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < flagged).collect();
    flags.shuffle(&mut rng);
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for &flag in &flags {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if flag {
            x[0] += fixture.shift;
        }
        let offset = if flag { fixture.label_effect } else { -fixture.label_effect };
        let logit = fixture.feature_weight * x[dim - 1] + offset;
        let p = 1.0 / (1.0 + (-logit).exp());
        labels.push(usize::from(rng.random::<f64>() < p));
        values.extend(x);
    }
    Dataset::new(
        Matrix::from_vec(n, dim, values)?,
        labels,
        Some(flags),
        (0..n as u64).collect(),
        2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_blobs_sit_on_their_means() {
        let d = gen_blobs(4, 10, 3, 5, 0.0).unwrap();
        let means = blob_means(4, 3, 5);
        for (r, &y) in d.labels.iter().enumerate() {
            assert_eq!(d.features.row(r), means[y].as_slice());
        }
        // 1-NN over distinct means is exact
        for (r, &y) in d.labels.iter().enumerate() {
            let x = d.features.row(r);
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                    let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, y);
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        assert_eq!(gen_blobs(9, 20, 4, 3, 0.5).unwrap(), gen_blobs(9, 20, 4, 3, 0.5).unwrap());
        assert_ne!(gen_blobs(9, 20, 4, 3, 0.5).unwrap(), gen_blobs(10, 20, 4, 3, 0.5).unwrap());
    }

    #[test]
    fn blob_sample_means_track_configured_means() {
        let n = 2000;
        let d = gen_blobs(21, n, 2, 8, 3.0).unwrap();
        let means = blob_means(21, 2, 8);
        let tol = 3.0 / (n as f64).sqrt() * 3.0;
        for c in 0..2 {
            for j in 0..8 {
                let (s, k) = d
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &y)| y == c)
                    .fold((0.0, 0), |(s, k), (r, _)| (s + d.features[(r, j)], k + 1));
                assert!((s / k as f64 - means[c][j]).abs() < tol);
            }
        }
    }

    #[test]
    fn property_ratio_is_exact() {
        let fx = PropertyFixture::default();
        let d = gen_property_tabular(1, 100, 4, 0.0, fx).unwrap();
        assert!(d.property.as_ref().unwrap().iter().all(|b| !b));
        let d = gen_property_tabular(1, 100, 4, 0.5, fx).unwrap();
        assert_eq!(d.property.as_ref().unwrap().iter().filter(|b| **b).count(), 50);
        assert!(gen_property_tabular(1, 100, 4, 1.5, fx).is_err());
    }

    #[test]
    fn property_shift_visible_in_conditional_means() {
        let fx = PropertyFixture::default();
        for (seed, t) in [(2u64, 0.3), (3, 0.5)] {
            let n = 20_000;
            let d = gen_property_tabular(seed, n, 4, t, fx).unwrap();
            let flags = d.property.as_ref().unwrap();
            let mean = |want: bool| {
                let (s, k) = flags
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| **f == want)
                    .fold((0.0, 0usize), |(s, k), (r, _)| (s + d.features[(r, 0)], k + 1));
                (s / k as f64, k)
            };
            let ((m1, k1), (m0, k0)) = (mean(true), mean(false));
            let se = (1.0 / k1 as f64 + 1.0 / k0 as f64).sqrt();
            assert!((m1 - m0 - fx.shift).abs() < 4.0 * se, "t={t}: {}", m1 - m0);
        }
    }

    #[test]
    fn dataset_validation() {
        let m = Matrix::zeros(2, 1);
        assert!(Dataset::new(m.clone(), vec![0, 1], None, vec![3, 3], 2).is_err());
        assert!(Dataset::new(m.clone(), vec![0, 2], None, vec![1, 2], 2).is_err());
        assert!(Dataset::new(m, vec![0], None, vec![1, 2], 2).is_err());
    }
}
