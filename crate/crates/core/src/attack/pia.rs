//! Property inference with one pool per candidate property ratio.
//!
//! Each pool is trained on data with a fixed fraction of property-positive
//! rows; its pathways then act as shadow models for that ratio. The target
//! model's confidence vector on a fixed attack set is scored under a
//! per-coordinate Gaussian fitted to each pool's pathways.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::gaussian::GaussianModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Matrix, SgdConfig, SgdState};
use crate::pool::train::EpochRecord;
use crate::pool::{batch_gradients, LossBreakdown, Network, ShadowPool};
use crate::rng::Rng;
use crate::shadow::cost::RunCost;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiaTrainConfig {
    /// Rows in each sampled subset.
    pub subset_size: usize,
    /// Number of sample-and-train rounds.
    pub iterations: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sgd: SgdConfig,
}

impl Default for PiaTrainConfig {
    fn default() -> Self {
        Self {
            subset_size: 200,
            iterations: 40,
            batch_size: 32,
            alpha: 0.05,
            beta: 0.01,
            sgd: SgdConfig::default(),
        }
    }
}

/// `size` rows of `data` of which exactly `round(ratio·size)` carry the
/// property.
pub fn sample_with_ratio(data: &Dataset, size: usize, ratio: f64, rng: &mut Rng) -> Result<Dataset> {
    let flags = data
        .property
        .as_ref()
        .ok_or_else(|| Error::Input("dataset has no property column".into()))?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Input(format!("property ratio {ratio} outside [0,1]")));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| flags[i]);
    let want_pos = (ratio * size as f64).round() as usize;
    let want_neg = size - want_pos;
    if want_pos > pos.len() || want_neg > neg.len() {
        return Err(Error::Input(format!(
            "cannot draw {want_pos}+{want_neg} rows from {}+{} available",
            pos.len(),
            neg.len()
        )));
    }
    let mut rows: Vec<usize> = index::sample(rng, pos.len(), want_pos)
        .into_iter()
        .map(|i| pos[i])
        .chain(index::sample(rng, neg.len(), want_neg).into_iter().map(|i| neg[i]))
        .collect();
    rows.sort_unstable();
    Ok(data.select(&rows))
}

/// Each round samples two subsets with property fraction `ratio`, picks two
/// distinct pathways and trains them in alternating minibatch steps, each
/// regularized against the other.
pub fn train_property_pool(
    pool: &mut ShadowPool,
    shadow_data: &Dataset,
    ratio: f64,
    cfg: &PiaTrainConfig,
    rng: &mut Rng,
    cost: &mut RunCost,
) -> Result<()> {
    if pool.n_pathways() < 2 {
        return Err(Error::Input("property pools need at least two pathways".into()));
    }
    if cfg.batch_size == 0 || cfg.subset_size == 0 {
        return Err(Error::Input("batch and subset sizes must be positive".into()));
    }
    let per_round = cfg.subset_size.div_ceil(cfg.batch_size);
    if cfg.iterations == 0 {
        return Ok(());
    }
    let mut opt = SgdState::new(cfg.sgd, pool.slot_count(), cfg.iterations * per_round * 2)?;
    let depth = pool.pathway_layers(&pool.pathway(0)?)?.len();
    let mut step = 0;
    let mut sum = LossBreakdown::default();
    for round in 0..cfg.iterations {
        let d = [
            sample_with_ratio(shadow_data, cfg.subset_size, ratio, rng)?,
            sample_with_ratio(shadow_data, cfg.subset_size, ratio, rng)?,
        ];
        let pick = index::sample(rng, pool.n_pathways(), 2);
        let p = [pool.pathway(pick.index(0))?, pool.pathway(pick.index(1))?];
        let mut orders: Vec<Vec<usize>> = d.iter().map(|s| (0..s.len()).collect()).collect();
        orders.iter_mut().for_each(|o| o.shuffle(rng));
        for b in 0..per_round {
            for side in 0..2 {
                let rows = &orders[side][b * cfg.batch_size..((b + 1) * cfg.batch_size).min(cfg.subset_size)];
                let x = d[side].features.select_rows(rows);
                let y: Vec<usize> = rows.iter().map(|&i| d[side].labels[i]).collect();
                let (loss, grads) = batch_gradients(pool, &p[side], Some(&p[1 - side]), &x, &y, cfg.alpha, cfg.beta)?;
                if !loss.total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss in round {round}")));
                }
                pool.apply(&p[side], &grads, &mut opt, step)?;
                step += 1;
                sum.ce += loss.ce;
                sum.sr += loss.sr;
                sum.or += loss.or;
                sum.total += loss.total;
                let passes = if cfg.alpha != 0.0 || cfg.beta != 0.0 { 2 } else { 1 };
                cost.add_forward(rows.len(), depth * passes);
                cost.add_backward(rows.len(), depth);
                cost.add_update();
            }
        }
    }
    let n = step as f64;
    pool.log.epochs.push(EpochRecord {
        epoch: pool.log.epochs.len(),
        batches: step,
        ce: sum.ce / n,
        sr: sum.sr / n,
        or: sum.or / n,
        total: sum.total / n,
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiaDecision {
    pub inferred: f64,
    pub log_likelihood_t0: f64,
    pub log_likelihood_t1: f64,
}

fn flat(m: &Matrix) -> Vec<f64> {
    m.values().to_vec()
}

/// Per-coordinate Gaussians over the flattened confidence vectors.
pub fn fit_confidence_model(samples: &[Vec<f64>]) -> Result<Vec<GaussianModel>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("no confidence vectors".into()))?;
    (0..first.len())
        .map(|k| GaussianModel::fit(&samples.iter().map(|s| s[k]).collect::<Vec<_>>()))
        .collect()
}

pub fn confidence_log_likelihood(model: &[GaussianModel], c: &[f64]) -> f64 {
    model.iter().zip(c).map(|(g, x)| g.log_pdf(*x)).sum()
}

/// Picks the ratio whose pool better explains the target's confidences on
/// `attack_data`; ties go to `t0`.
#[allow(clippy::too_many_arguments)]
pub fn pia_infer(
    t0: f64,
    t1: f64,
    attack_data: &Matrix,
    target: &Network,
    f0: &ShadowPool,
    f1: &ShadowPool,
    sample_size: usize,
    rng: &mut Rng,
) -> Result<PiaDecision> {
    let mut models = Vec::with_capacity(2);
    for f in [f0, f1] {
        if f.log.epochs.is_empty() {
            return Err(Error::State("property pool has not been trained".into()));
        }
        if sample_size < 2 || sample_size > f.n_pathways() {
            return Err(Error::Input(format!(
                "pathway sample of {sample_size} from {} pathways",
                f.n_pathways()
            )));
        }
        let scores = index::sample(rng, f.n_pathways(), sample_size)
            .into_iter()
            .map(|w| Ok(flat(&f.pathway_forward(&f.pathway(w)?, attack_data)?.probs)))
            .collect::<Result<Vec<_>>>()?;
        models.push(fit_confidence_model(&scores)?);
    }
    let c = flat(&target.predict_proba(attack_data)?);
    let l0 = confidence_log_likelihood(&models[0], &c);
    let l1 = confidence_log_likelihood(&models[1], &c);
    Ok(PiaDecision {
        inferred: if l0 >= l1 { t0 } else { t1 },
        log_likelihood_t0: l0,
        log_likelihood_t1: l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_property_tabular, PropertyFixture};
    use crate::pool::fixtures::small_arch;
    use crate::rng::RandomSource;

    #[test]
    fn exact_ratio_sampling() {
        let data = gen_property_tabular(0, 400, 3, 0.5, PropertyFixture::default()).unwrap();
        let mut rng = RandomSource::new(1).stream("s");
        for ratio in [0.3, 0.5] {
            let s = sample_with_ratio(&data, 100, ratio, &mut rng).unwrap();
            assert_eq!(s.len(), 100);
            assert_eq!(s.positive_property_fraction().unwrap(), ratio);
        }
        assert!(sample_with_ratio(&data, 300, 1.0, &mut rng).is_err());
    }

    #[test]
    fn identical_pools_tie_to_first_ratio() {
        let mut arch = small_arch();
        arch.classes = 2;
        let data = gen_property_tabular(0, 200, 3, 0.5, PropertyFixture::default()).unwrap();
        let mut pool = ShadowPool::new(arch, &mut RandomSource::new(0).stream("p")).unwrap();
        let cfg = PiaTrainConfig {
            subset_size: 20,
            iterations: 2,
            batch_size: 10,
            ..Default::default()
        };
        train_property_pool(&mut pool, &data, 0.5, &cfg, &mut RandomSource::new(0).stream("t"), &mut RunCost::default())
            .unwrap();
        assert_eq!(pool.log.epochs[0].batches, 8);
        for row in pool.experts.iter_mut() {
            let first = row[0].clone();
            row.iter_mut().for_each(|e| *e = first.clone());
        }
        let target = pool.extract(&pool.pathway(1).unwrap()).unwrap();
        let d = pia_infer(0.3, 0.5, &data.features, &target, &pool, &pool, 3, &mut RandomSource::new(5).stream("a"))
            .unwrap();
        assert_eq!(d.log_likelihood_t0, d.log_likelihood_t1);
        assert_eq!(d.inferred, 0.3);
    }

    #[test]
    fn untrained_pool_is_rejected() {
        let mut arch = small_arch();
        arch.classes = 2;
        let pool = ShadowPool::new(arch, &mut RandomSource::new(0).stream("p")).unwrap();
        let target = pool.extract(&pool.pathway(0).unwrap()).unwrap();
        let x = Matrix::zeros(2, 3);
        let r = pia_infer(0.3, 0.5, &x, &target, &pool, &pool, 2, &mut RandomSource::new(0).stream("a"));
        assert!(matches!(r, Err(Error::State(_))));
    }
}
