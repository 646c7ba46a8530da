//! Relative membership inference: the target's true-class probability on a
//! query, normalised by reference models, compared against the same ratio
//! on population samples.

use serde::{Deserialize, Serialize};

use super::table::ScoreTable;
use super::AttackMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmiaConfig {
    pub mode: AttackMode,
    /// Likelihood-ratio threshold a population sample must be beaten by.
    pub gamma: f64,
    /// Offline interpolation between the OUT mean and one.
    pub a: f64,
}

impl Default for RmiaConfig {
    fn default() -> Self {
        Self {
            mode: AttackMode::Offline,
            gamma: 1.0,
            a: 0.3,
        }
    }
}

/// Relative tolerance when comparing a ratio with `gamma`, so that exactly
/// indistinguishable models are not split by rounding.
const RATIO_TOLERANCE: f64 = 1e-12;

/// Fraction of population ratios `r_z` with `x_ratio / r_z ≥ gamma`.
pub fn rmia_score(x_ratio: f64, population_ratios: &[f64], gamma: f64) -> Result<f64> {
    if population_ratios.is_empty() {
        return Err(Error::Input("empty population".into()));
    }
    let hits = population_ratios
        .iter()
        .filter(|&&rz| x_ratio / rz >= gamma * (1.0 - RATIO_TOLERANCE))
        .count();
    Ok(hits as f64 / population_ratios.len() as f64)
}

fn true_class_probs(table: &ScoreTable, model: usize) -> Vec<f64> {
    let p = &table.probs[model];
    (0..table.n_queries()).map(|q| p.row(q)[table.labels[q]]).collect()
}

fn single_target(t: &ScoreTable, on: &ScoreTable) -> Result<Vec<f64>> {
    if t.n_models() != 1 || t.query_ids != on.query_ids {
        return Err(Error::Input("target table must hold one model over the same examples".into()));
    }
    Ok(true_class_probs(t, 0))
}

/// Scores every query of `target`. `reference`/`target` cover the queries,
/// `pop_reference`/`pop_target` the population; reference models must be
/// in the same order in both reference tables.
pub fn rmia_scores(
    reference: &ScoreTable,
    target: &ScoreTable,
    pop_reference: &ScoreTable,
    pop_target: &ScoreTable,
    cfg: &RmiaConfig,
) -> Result<Vec<f64>> {
    if reference.n_models() < 2 {
        return Err(Error::InsufficientModels {
            kind: "reference",
            needed: 2,
            got: reference.n_models(),
        });
    }
    if pop_reference.model_ids != reference.model_ids {
        return Err(Error::Input("reference tables list different models".into()));
    }
    if !(0.0..=1.0).contains(&cfg.a) || !(cfg.gamma > 0.0) {
        return Err(Error::Input(format!("invalid RMIA parameters a={} gamma={}", cfg.a, cfg.gamma)));
    }
    let queries: std::collections::HashSet<u64> = reference.query_ids.iter().copied().collect();
    if pop_reference.query_ids.iter().any(|id| queries.contains(id)) {
        return Err(Error::Input("population overlaps the queries".into()));
    }
    let tx = single_target(target, reference)?;
    let tz = single_target(pop_target, pop_reference)?;
    let k = reference.n_models();
    let ref_x: Vec<Vec<f64>> = (0..k).map(|m| true_class_probs(reference, m)).collect();
    let ref_z: Vec<Vec<f64>> = (0..k).map(|m| true_class_probs(pop_reference, m)).collect();
    let pop_ratios: Vec<f64> = (0..tz.len())
        .map(|z| tz[z] / (ref_z.iter().map(|r| r[z]).sum::<f64>() / k as f64))
        .collect();
    let membership = match cfg.mode {
        AttackMode::Offline => Some(reference.membership()?),
        AttackMode::Online => None,
    };
    (0..tx.len())
        .map(|q| {
            let bar = match membership {
                None => ref_x.iter().map(|r| r[q]).sum::<f64>() / k as f64,
                Some(mem) => {
                    let outs: Vec<f64> = (0..k).filter(|&m| !mem[m][q]).map(|m| ref_x[m][q]).collect();
                    if outs.is_empty() {
                        return Err(Error::InsufficientModels {
                            kind: "OUT reference",
                            needed: 1,
                            got: 0,
                        });
                    }
                    let out_mean = outs.iter().sum::<f64>() / outs.len() as f64;
                    0.5 * ((1.0 + cfg.a) * out_mean + (1.0 - cfg.a))
                }
            };
            rmia_score(tx[q] / bar, &pop_ratios, cfg.gamma)
        })
        .collect()
}
