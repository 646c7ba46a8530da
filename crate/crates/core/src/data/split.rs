use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Largest number of pathways the toolkit will enumerate or map.
pub const MAX_PATHWAYS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    Disjoint,
    WithReplacement,
}

/// Training subsets drawn from auxiliary data, as id lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub subsets: Vec<Vec<u64>>,
    pub policy: OverlapPolicy,
}

/// Draws `s` subsets of `subset_size` ids each. Sampling is without
/// replacement inside a subset and independent across subsets, so subsets
/// may overlap one another.
pub fn split_auxiliary(
    dataset: &Dataset,
    s: usize,
    subset_size: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<SplitPlan> {
    if s == 0 {
        return Err(Error::Input("need at least one subset".into()));
    }
    if subset_size > dataset.len() {
        return Err(Error::Input(format!(
            "subset size {subset_size} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let subsets = (0..s)
        .map(|_| {
            let mut pos = index::sample(rng, dataset.len(), subset_size).into_vec();
            pos.sort_unstable();
            pos.into_iter().map(|p| dataset.ids[p]).collect()
        })
        .collect();
    Ok(SplitPlan {
        seed,
        subsets,
        policy: OverlapPolicy::WithReplacement,
    })
}

/// Inclusion matrix where every id lands in exactly `k/2` of `k` subsets
/// (rounded down for odd `k`), chosen uniformly per id. This is the usual
/// IN/OUT layout for online likelihood-ratio attacks.
pub fn balanced_halves(ids: &[u64], k: usize, rng: &mut Rng) -> Vec<Vec<u64>> {
    let mut subsets = vec![Vec::new(); k];
    let mut order: Vec<usize> = (0..k).collect();
    for &id in ids {
        order.shuffle(rng);
        for &m in &order[..k / 2] {
            subsets[m].push(id);
        }
    }
    subsets
}

/// `M^L`, or a resource error when it exceeds [`MAX_PATHWAYS`].
pub fn pathway_count(experts: usize, layers: usize) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..layers {
        total = total
            .checked_mul(experts)
            .filter(|t| *t <= MAX_PATHWAYS)
            .ok_or_else(|| {
                Error::Resource(format!(
                    "{experts}^{layers} pathways exceeds the cap of {MAX_PATHWAYS}"
                ))
            })?;
    }
    Ok(total)
}

/// Data-to-pathway assignment: each training id updates exactly one pathway.
///
/// Stored sparsely (one pathway index per id); the dense binary matrix is
/// available through [`MappingMatrix::dense_row`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMapping")]
pub struct MappingMatrix {
    pub n_pathways: usize,
    pub ids: Vec<u64>,
    pub pathway: Vec<usize>,
    #[serde(skip)]
    lookup: HashMap<u64, usize>,
}

#[derive(Deserialize)]
struct RawMapping {
    n_pathways: usize,
    ids: Vec<u64>,
    pathway: Vec<usize>,
}

impl TryFrom<RawMapping> for MappingMatrix {
    type Error = Error;

    fn try_from(raw: RawMapping) -> Result<Self> {
        MappingMatrix::from_parts(raw.n_pathways, raw.ids, raw.pathway)
    }
}

impl MappingMatrix {
    pub fn from_parts(n_pathways: usize, ids: Vec<u64>, pathway: Vec<usize>) -> Result<Self> {
        if ids.len() != pathway.len() {
            return Err(Error::Shape("mapping ids and pathways differ in length".into()));
        }
        if let Some(w) = pathway.iter().find(|&&w| w >= n_pathways) {
            return Err(Error::Input(format!("pathway {w} outside {n_pathways}")));
        }
        let lookup: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if lookup.len() != ids.len() {
            return Err(Error::Input("mapping contains duplicate ids".into()));
        }
        Ok(Self {
            n_pathways,
            ids,
            pathway,
            lookup,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.ids.len()
    }

    pub fn pathway_of(&self, id: u64) -> Option<usize> {
        self.lookup.get(&id).map(|&i| self.pathway[i])
    }

    pub fn contains(&self, id: u64) -> bool {
        self.pathway_of(id).is_some()
    }

    /// Ids assigned to each pathway.
    pub fn subsets(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.n_pathways];
        for (&id, &w) in self.ids.iter().zip(&self.pathway) {
            out[w].push(id);
        }
        out
    }

    /// Row of the binary matrix `B` for `id`.
    pub fn dense_row(&self, id: u64) -> Option<Vec<u8>> {
        self.pathway_of(id).map(|w| {
            let mut row = vec![0u8; self.n_pathways];
            row[w] = 1;
            row
        })
    }
}

/// Uniformly random partition of `ids` into `M^L` subsets whose sizes differ
/// by at most one.
pub fn build_mapping(ids: &[u64], experts: usize, layers: usize, rng: &mut Rng) -> Result<MappingMatrix> {
    let k = pathway_count(experts, layers)?;
    if ids.len() < k {
        return Err(Error::Input(format!(
            "{} training examples cannot cover {k} pathways",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let pathway = (0..shuffled.len()).map(|i| i % k).collect();
    MappingMatrix::from_parts(k, shuffled, pathway)
}

/// Uniform subsample of `round(fraction·|D_tr|)` rows (at least one), kept in
/// their original order.
pub fn sample_dq(d_tr: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Input(format!("fraction {fraction} outside (0,1]")));
    }
    let k = ((fraction * d_tr.len() as f64).round() as usize).clamp(1, d_tr.len());
    let mut pos = index::sample(rng, d_tr.len(), k).into_vec();
    pos.sort_unstable();
    Ok(d_tr.select(&pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::gen_blobs;
    use crate::rng::RandomSource;
    use std::collections::HashSet;

    fn ids(n: u64) -> Vec<u64> {
        (0..n).collect()
    }

    #[test]
    fn mapping_partitions_small_set() {
        let mut rng = RandomSource::new(0).stream("map");
        let m = build_mapping(&ids(8), 2, 2, &mut rng).unwrap();
        let subsets = m.subsets();
        assert_eq!(subsets.len(), 4);
        let mut all = HashSet::new();
        for s in &subsets {
            assert_eq!(s.len(), 2);
            for id in s {
                assert!(all.insert(*id));
            }
        }
        assert_eq!(all, ids(8).into_iter().collect());
        for id in 0..8 {
            let row = m.dense_row(id).unwrap();
            assert_eq!(row.iter().map(|&b| b as u32).sum::<u32>(), 1);
        }
    }

    #[test]
    fn mapping_sizes_and_errors() {
        assert_eq!(pathway_count(4, 4).unwrap(), 256);
        assert!(matches!(pathway_count(1 << 11, 2), Err(Error::Resource(_))));
        let mut rng = RandomSource::new(0).stream("map");
        assert!(build_mapping(&ids(3), 2, 2, &mut rng).is_err());
        let m = build_mapping(&ids(1001), 4, 4, &mut rng).unwrap();
        let sizes: Vec<usize> = m.subsets().iter().map(Vec::len).collect();
        assert_eq!(*sizes.iter().max().unwrap() - *sizes.iter().min().unwrap(), 1);
    }

    #[test]
    fn expert_share_is_one_over_m() {
        // pathway w has expert index (w / M^(L-1-l)) % M at layer l
        let (m, l, n) = (3usize, 3usize, 4000u64);
        let mut rng = RandomSource::new(5).stream("map");
        let map = build_mapping(&ids(n), m, l, &mut rng).unwrap();
        let k = m.pow(l as u32);
        let per_pathway = n as usize / k;
        for layer in 0..l {
            let stride = m.pow((l - 1 - layer) as u32);
            for expert in 0..m {
                let count = map.pathway.iter().filter(|&&w| (w / stride) % m == expert).count();
                let expected = n as f64 / m as f64;
                // each of the M^(L-1) pathways through this expert may hold one extra id
                assert!((count as f64 - expected).abs() <= (k / m) as f64, "{count}");
                assert!(count >= per_pathway * k / m);
            }
        }
    }

    #[test]
    fn mapping_assignment_is_uniform_over_seeds() {
        let k = 4;
        let trials = 4000;
        let mut counts = vec![0usize; k];
        for seed in 0..trials {
            let mut rng = RandomSource::new(seed).stream("map");
            let m = build_mapping(&ids(8), 2, 2, &mut rng).unwrap();
            counts[m.pathway_of(3).unwrap()] += 1;
        }
        let p = 1.0 / k as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn split_examples() {
        let d = gen_blobs(1, 10, 2, 2, 1.0).unwrap();
        let mut rng = RandomSource::new(1).stream("split");
        let plan = split_auxiliary(&d, 1, 5, 1, &mut rng).unwrap();
        assert_eq!(plan.subsets.len(), 1);
        assert_eq!(plan.subsets[0].len(), 5);
        let plan = split_auxiliary(&d, 2, d.len(), 1, &mut rng).unwrap();
        let mut full = d.ids.clone();
        full.sort_unstable();
        assert_eq!(plan.subsets[0], full);
        assert_eq!(plan.subsets[1], full);
        assert!(split_auxiliary(&d, 1, 21, 1, &mut rng).is_err());
    }

    #[test]
    fn split_inclusion_frequency() {
        let d = gen_blobs(1, 10, 2, 2, 1.0).unwrap();
        let mut rng = RandomSource::new(2).stream("split");
        let draws = 10_000;
        let plan = split_auxiliary(&d, draws, 5, 2, &mut rng).unwrap();
        let p = 5.0 / 20.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for id in &d.ids {
            let c = plan.subsets.iter().filter(|s| s.contains(id)).count();
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "id {id}: {c}");
        }
    }

    #[test]
    fn dq_sizes() {
        let d = gen_blobs(1, 2000, 2, 2, 1.0).unwrap();
        let mut rng = RandomSource::new(3).stream("dq");
        assert_eq!(sample_dq(&d, 1.0, &mut rng).unwrap(), d);
        assert_eq!(sample_dq(&d, 0.1, &mut rng).unwrap().len(), 400);
        let big = gen_blobs(1, 20_000, 2, 1, 1.0).unwrap();
        let q = sample_dq(&big, 0.025, &mut rng).unwrap();
        assert_eq!(q.len(), 1000);
        let all: HashSet<u64> = big.ids.iter().copied().collect();
        assert!(q.ids.iter().all(|id| all.contains(id)));
        assert!(sample_dq(&d, 0.0, &mut rng).is_err());
    }

    #[test]
    fn balanced_halves_split_each_id_evenly() {
        let mut rng = RandomSource::new(4).stream("keep");
        let subsets = balanced_halves(&ids(50), 4, &mut rng);
        for id in 0..50 {
            assert_eq!(subsets.iter().filter(|s| s.contains(&id)).count(), 2);
        }
    }
}
