use serde::{Deserialize, Serialize};

use super::table::ScoreTable;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pool::{Pathway, ShadowPool};
use crate::shadow::{query_models, ShadowModel};

/// An audited example and whether the target was trained on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub member: bool,
}

/// Query records for `queries`, labelled by membership in `target_ids`.
pub fn query_records(queries: &Dataset, target_ids: &[u64]) -> Vec<QueryRecord> {
    let members: std::collections::HashSet<u64> = target_ids.iter().copied().collect();
    (0..queries.len())
        .map(|i| QueryRecord {
            id: queries.ids[i],
            features: queries.features.row(i).to_vec(),
            label: queries.labels[i],
            member: members.contains(&queries.ids[i]),
        })
        .collect()
}

/// A collection of models that can answer queries and knows which examples
/// each model saw.
pub enum ModelSource<'a> {
    Pool {
        pool: &'a ShadowPool,
        pathways: &'a [Pathway],
        prefix: &'a str,
    },
    Models {
        models: &'a [ShadowModel],
        prefix: &'a str,
    },
}

/// Scores `queries` on every model of every source and attaches
/// per-cell membership ground truth.
pub fn build_attack_dataset(sources: &[ModelSource<'_>], queries: &Dataset) -> Result<ScoreTable> {
    let mut tables = Vec::with_capacity(sources.len());
    for source in sources {
        let table = match source {
            ModelSource::Pool { pool, pathways, prefix } => {
                if pool.mapping.is_none() {
                    return Err(Error::Input(format!(
                        "pool `{prefix}` has no mapping, so membership is unknown"
                    )));
                }
                let grid = pool.membership_grid(pathways, &queries.ids)?;
                pool.query_shared_models(pathways, queries, prefix)?.with_membership(grid)?
            }
            ModelSource::Models { models, prefix } => {
                let grid = models
                    .iter()
                    .map(|m| queries.ids.iter().map(|id| m.is_member(*id)).collect())
                    .collect();
                query_models(models, queries, prefix)?.with_membership(grid)?
            }
        };
        tables.push(table);
    }
    ScoreTable::concat(&tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_mapping, gen_blobs};
    use crate::pool::fixtures::small_arch;
    use crate::rng::RandomSource;
    use crate::shadow::{train_independent, ModelTrainConfig, RunCost};

    #[test]
    fn single_model_eight_rows() {
        let data = gen_blobs(0, 4, 3, 3, 0.5).unwrap();
        let train = data.select(&[0, 1, 2, 3]);
        let cfg = ModelTrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        let model = train_independent(&train, &small_arch(), &cfg, 0, &mut RunCost::default()).unwrap();
        let queries = data.select(&(0..8).collect::<Vec<_>>());
        let models = [model];
        let t = build_attack_dataset(&[ModelSource::Models { models: &models, prefix: "s" }], &queries).unwrap();
        assert_eq!(t.n_models() * t.n_queries(), 8);
        let m = t.membership().unwrap();
        assert_eq!(m[0].iter().filter(|b| **b).count(), 4);
        let recs = query_records(&queries, &train.ids);
        assert_eq!(recs.iter().filter(|r| r.member).count(), 4);
    }

    #[test]
    fn mixed_pools_follow_mapping_and_dq() {
        let data = gen_blobs(1, 10, 3, 3, 0.5).unwrap();
        let src = RandomSource::new(2);
        let q = data.ids[0];
        let mut a = ShadowPool::new(small_arch(), &mut src.stream("a")).unwrap();
        a.set_mapping(build_mapping(&data.ids, 2, 2, &mut src.stream("ma")).unwrap()).unwrap();
        let aligned = vec![Pathway(vec![0, 0]), Pathway(vec![1, 1])];
        a.aligned_set = Some(aligned.clone());
        a.dq_ids = Some(vec![q]);
        let rest: Vec<u64> = data.ids[1..].to_vec();
        let mut b = ShadowPool::new(small_arch(), &mut src.stream("b")).unwrap();
        b.set_mapping(build_mapping(&rest, 2, 2, &mut src.stream("mb")).unwrap()).unwrap();
        let all = crate::pool::enumerate_pathways(2, 2).unwrap();
        let queries = data.select(&[0]);
        let t = build_attack_dataset(
            &[
                ModelSource::Pool { pool: &a, pathways: &aligned, prefix: "a/" },
                ModelSource::Pool { pool: &b, pathways: &all, prefix: "b/" },
            ],
            &queries,
        )
        .unwrap();
        let m = t.membership().unwrap();
        assert_eq!(m[0], vec![true]);
        assert_eq!(m[1], vec![true]);
        assert!(m[2..].iter().all(|r| !r[0]));
        let unmapped = ShadowPool::new(small_arch(), &mut src.stream("c")).unwrap();
        let err = build_attack_dataset(&[ModelSource::Pool { pool: &unmapped, pathways: &all, prefix: "" }], &queries);
        assert!(matches!(err, Err(Error::Input(_))));
    }
}
