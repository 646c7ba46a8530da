//! Likelihood-ratio membership tests on scaled logits.

use serde::{Deserialize, Serialize};

use super::gaussian::GaussianModel;
use super::table::ScoreTable;
use crate::error::{Error, Result};

/// One-sided offline test: probability that an OUT model scores below the
/// target, `Φ((t − μ_out)/σ_out)`.
pub fn lira_offline(out_scores: &[f64], target: f64) -> Result<f64> {
    if out_scores.len() < 2 {
        return Err(Error::InsufficientModels {
            kind: "OUT",
            needed: 2,
            got: out_scores.len(),
        });
    }
    Ok(GaussianModel::fit(out_scores)?.cdf(target))
}

/// `ln N(t; IN) − ln N(t; OUT)`; positive favours membership.
pub fn lira_online(in_scores: &[f64], out_scores: &[f64], target: f64) -> Result<f64> {
    for (kind, s) in [("IN", in_scores), ("OUT", out_scores)] {
        if s.len() < 2 {
            return Err(Error::InsufficientModels {
                kind,
                needed: 2,
                got: s.len(),
            });
        }
    }
    Ok(lira_online_fitted(
        &GaussianModel::fit(in_scores)?,
        &GaussianModel::fit(out_scores)?,
        target,
    ))
}

pub fn lira_online_fitted(fit_in: &GaussianModel, fit_out: &GaussianModel, target: f64) -> f64 {
    fit_in.log_pdf(target) - fit_out.log_pdf(target)
}

/// How per-query Gaussians are fitted from a score table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineFit {
    /// Independent mean and spread per query; needs two IN and two OUT
    /// scores for every query.
    PerQuery,
    /// Per-query means with one spread per side shared across queries. A
    /// query missing one side gets that side's mean by shifting the other
    /// side's mean by the average IN−OUT gap of queries that have both.
    SharedSpread,
}

fn split_scores(table: &ScoreTable) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let membership = table.membership()?;
    let scores = table.scaled_logits();
    let mut ins = vec![Vec::new(); table.n_queries()];
    let mut outs = vec![Vec::new(); table.n_queries()];
    for (m, row) in scores.iter().enumerate() {
        for (q, s) in row.iter().enumerate() {
            if membership[m][q] {
                ins[q].push(*s);
            } else {
                outs[q].push(*s);
            }
        }
    }
    Ok((ins, outs))
}

fn target_scores(target: &ScoreTable, shadows: &ScoreTable) -> Result<Vec<f64>> {
    if target.n_models() != 1 {
        return Err(Error::Input(format!("expected one target model, got {}", target.n_models())));
    }
    if target.query_ids != shadows.query_ids {
        return Err(Error::Input("target and shadow tables cover different queries".into()));
    }
    Ok(target.scaled_logits().remove(0))
}

/// Offline scores for every query of `target` using the OUT cells of
/// `shadows`.
pub fn lira_offline_scores(shadows: &ScoreTable, target: &ScoreTable) -> Result<Vec<f64>> {
    let t = target_scores(target, shadows)?;
    let (_, outs) = split_scores(shadows)?;
    outs.iter().zip(&t).map(|(o, t)| lira_offline(o, *t)).collect()
}

fn pooled_std(groups: &[Vec<f64>]) -> Option<f64> {
    let (mut ss, mut dof) = (0.0, 0usize);
    for g in groups.iter().filter(|g| g.len() > 1) {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        dof += g.len() - 1;
    }
    (dof > 0).then(|| (ss / dof as f64).sqrt())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn lira_online_scores(shadows: &ScoreTable, target: &ScoreTable, fit: OnlineFit) -> Result<Vec<f64>> {
    let t = target_scores(target, shadows)?;
    let (ins, outs) = split_scores(shadows)?;
    match fit {
        OnlineFit::PerQuery => (0..t.len()).map(|q| lira_online(&ins[q], &outs[q], t[q])).collect(),
        OnlineFit::SharedSpread => {
            let all_in: Vec<f64> = ins.iter().flatten().copied().collect();
            let all_out: Vec<f64> = outs.iter().flatten().copied().collect();
            if all_in.is_empty() || all_out.is_empty() {
                return Err(Error::InsufficientModels {
                    kind: if all_in.is_empty() { "IN" } else { "OUT" },
                    needed: 1,
                    got: 0,
                });
            }
            let spread = |groups: &[Vec<f64>], all: &[f64]| {
                pooled_std(groups).unwrap_or_else(|| GaussianModel::fit(all).map_or(0.0, |g| g.std))
            };
            let (s_in, s_out) = (spread(&ins, &all_in), spread(&outs, &all_out));
            let gaps: Vec<f64> = ins
                .iter()
                .zip(&outs)
                .filter_map(|(i, o)| Some(mean(i)? - mean(o)?))
                .collect();
            let gap = mean(&gaps).unwrap_or(mean(&all_in).expect("non-empty") - mean(&all_out).expect("non-empty"));
            (0..t.len())
                .map(|q| {
                    let (mi, mo) = match (mean(&ins[q]), mean(&outs[q])) {
                        (Some(i), Some(o)) => (i, o),
                        (Some(i), None) => (i, i - gap),
                        (None, Some(o)) => (o + gap, o),
                        (None, None) => {
                            return Err(Error::InsufficientModels {
                                kind: "IN or OUT",
                                needed: 1,
                                got: 0,
                            })
                        }
                    };
                    Ok(lira_online_fitted(
                        &GaussianModel::new(mi, s_in)?,
                        &GaussianModel::new(mo, s_out)?,
                        t[q],
                    ))
                })
                .collect()
        }
    }
}
