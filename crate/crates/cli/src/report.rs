//! Result documents: one per attack run, and a summary table comparing
//! independent shadow models (BASE) against shadow pools (SHAPOOL).
//!
//! Keys of `results.json`:
//! `method`, `mode`, `source`, `queries`, `shadow_models`, `auc`, `tf1`,
//! `tf01`, `cost_evaluations`, `cost_wallclock_s`, `cost_ratio_vs_shadows`.
//!
//! `summary.json` holds one group per attack with the BASE and SHAPOOL rows
//! and the keys `delta_auc`, `delta_tf1`, `delta_tf01`, `delta_cost`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use shapool::shadow::format_change;

/// Differences smaller than this are shown as `=`.
pub const DELTA_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub method: String,
    pub mode: String,
    pub source: String,
    pub queries: usize,
    pub shadow_models: usize,
    pub auc: f64,
    pub tf1: f64,
    pub tf01: f64,
    /// Example-layer evaluations spent building the shadow models.
    pub cost_evaluations: u64,
    /// Only filled when wall-clock reporting is enabled.
    pub cost_wallclock_s: Option<f64>,
    pub cost_ratio_vs_shadows: Option<f64>,
}

impl AttackReport {
    pub fn attack_name(&self) -> String {
        format!("{}-{}", self.method, self.mode)
    }
}

pub fn format_delta(delta: f64) -> String {
    if delta.abs() < DELTA_THRESHOLD {
        "=".into()
    } else {
        format!("{delta:+.2}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub source: String,
    pub runs: usize,
    pub auc: f64,
    pub tf1: f64,
    pub tf01: f64,
    pub cost_evaluations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub attack: String,
    pub rows: Vec<SummaryRow>,
    pub delta_auc: Option<String>,
    pub delta_tf1: Option<String>,
    pub delta_tf01: Option<String>,
    pub delta_cost: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<SummaryGroup>,
}

fn row_name(source: &str) -> &str {
    match source {
        "shadows" => "BASE",
        "pool" => "SHAPOOL",
        "augmented" => "AUGMENT",
        other => other,
    }
}

/// Averages reports with the same attack and source (e.g. over seeds) and
/// lays them out as BASE / SHAPOOL / Δ rows per attack.
pub fn summarize(reports: &[AttackReport]) -> Summary {
    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<&AttackReport>>> = BTreeMap::new();
    for r in reports {
        grouped
            .entry(r.attack_name())
            .or_default()
            .entry(r.source.clone())
            .or_default()
            .push(r);
    }
    let order = ["shadows", "augmented", "pool"];
    let groups = grouped
        .into_iter()
        .map(|(attack, by_source)| {
            let mut rows: Vec<SummaryRow> = by_source
                .iter()
                .map(|(source, rs)| {
                    let n = rs.len() as f64;
                    let mean = |f: fn(&AttackReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
                    SummaryRow {
                        name: row_name(source).to_string(),
                        source: source.clone(),
                        runs: rs.len(),
                        auc: mean(|r| r.auc),
                        tf1: mean(|r| r.tf1),
                        tf01: mean(|r| r.tf01),
                        cost_evaluations: mean(|r| r.cost_evaluations as f64),
                    }
                })
                .collect();
            rows.sort_by_key(|r| order.iter().position(|s| *s == r.source).unwrap_or(order.len()));
            let base = rows.iter().find(|r| r.source == "shadows");
            let pool = rows.iter().find(|r| r.source == "pool");
            let (delta_auc, delta_tf1, delta_tf01, delta_cost) = match (base, pool) {
                (Some(b), Some(p)) => (
                    Some(format_delta(p.auc - b.auc)),
                    Some(format_delta(p.tf1 - b.tf1)),
                    Some(format_delta(p.tf01 - b.tf01)),
                    (b.cost_evaluations > 0.0).then(|| format_change(p.cost_evaluations / b.cost_evaluations)),
                ),
                _ => (None, None, None, None),
            };
            SummaryGroup {
                attack,
                rows,
                delta_auc,
                delta_tf1,
                delta_tf01,
                delta_cost,
            }
        })
        .collect();
    Summary { groups }
}

impl Summary {
    /// Plain-text table, one block per attack.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:<8} {:>6} {:>6} {:>6} {:>14}", "attack", "model", "AUC", "TF1", "TF01", "cost");
        for g in &self.groups {
            for (i, r) in g.rows.iter().enumerate() {
                let attack = if i == 0 { g.attack.as_str() } else { "" };
                let _ = writeln!(
                    out,
                    "{attack:<14} {:<8} {:>6.3} {:>6.3} {:>6.3} {:>14.0}",
                    r.name, r.auc, r.tf1, r.tf01, r.cost_evaluations
                );
            }
            if let (Some(a), Some(t1), Some(t01)) = (&g.delta_auc, &g.delta_tf1, &g.delta_tf01) {
                let cost = g.delta_cost.as_deref().unwrap_or("-");
                let _ = writeln!(out, "{:<14} {:<8} {a:>6} {t1:>6} {t01:>6} {cost:>14}", "", "Δ");
            }
        }
        out
    }
}
