//! Training-cost accounting.
//!
//! The primary unit is the *example-layer evaluation*: pushing one example
//! through one linear layer (forward) or back through it (backward). Counts
//! are exact and hardware-independent; wall-clock is kept as a secondary,
//! non-deterministic figure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::persist::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCost {
    pub forward: u64,
    pub backward: u64,
    pub updates: u64,
    pub wallclock_s: f64,
}

impl RunCost {
    pub fn evaluations(&self) -> u64 {
        self.forward + self.backward
    }

    pub fn add_forward(&mut self, examples: usize, layers: usize) {
        self.forward += (examples * layers) as u64;
    }

    pub fn add_backward(&mut self, examples: usize, layers: usize) {
        self.backward += (examples * layers) as u64;
    }

    pub fn add_update(&mut self) {
        self.updates += 1;
    }

    pub fn merge(&mut self, other: &RunCost) {
        self.forward += other.forward;
        self.backward += other.backward;
        self.updates += other.updates;
        self.wallclock_s += other.wallclock_s;
    }
}

/// Measures wall-clock for a scope and adds it to a [`RunCost`].
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(Instant::now())
    }

    pub fn stop(self, cost: &mut RunCost) {
        cost.wallclock_s += self.0.elapsed().as_secs_f64();
    }
}

/// Costs keyed by run id. Recording into an existing run accumulates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    runs: BTreeMap<String, RunCost>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, run: &str, cost: &RunCost) {
        self.runs.entry(run.to_string()).or_default().merge(cost);
    }

    pub fn get(&self, run: &str) -> Result<&RunCost> {
        self.runs
            .get(run)
            .ok_or_else(|| Error::Input(format!("unknown run id `{run}`")))
    }

    pub fn runs(&self) -> impl Iterator<Item = (&str, &RunCost)> {
        self.runs.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sum over all runs whose id starts with `prefix`.
    pub fn total_with_prefix(&self, prefix: &str) -> RunCost {
        let mut total = RunCost::default();
        for (_, c) in self.runs.range(prefix.to_string()..).take_while(|(k, _)| k.starts_with(prefix)) {
            total.merge(c);
        }
        total
    }

    /// Flat `run_id,metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run_id,metric,value\n");
        for (run, c) in &self.runs {
            let _ = writeln!(out, "{run},forward_evaluations,{}", c.forward);
            let _ = writeln!(out, "{run},backward_evaluations,{}", c.backward);
            let _ = writeln!(out, "{run},update_steps,{}", c.updates);
            let _ = writeln!(out, "{run},wallclock_s,{:.6}", c.wallclock_s);
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    /// `evaluations(B) / evaluations(A)`.
    pub evaluation_ratio: f64,
    /// `wallclock(B) / wallclock(A)`; NaN when A has no recorded time.
    pub wallclock_ratio: f64,
}

impl CostComparison {
    /// Reduction of B relative to A as a percentage, e.g. ratio 0.114 → 88.6.
    pub fn reduction_percent(&self) -> f64 {
        (1.0 - self.evaluation_ratio) * 100.0
    }

    /// `↓88.6%` for a reduction, `↑12.0%` for an increase.
    pub fn format_reduction(&self) -> String {
        format_change(self.evaluation_ratio)
    }
}

pub fn format_change(ratio: f64) -> String {
    let pct = (1.0 - ratio) * 100.0;
    if pct >= 0.0 {
        format!("↓{pct:.1}%")
    } else {
        format!("↑{:.1}%", -pct)
    }
}

pub fn cost_compare(ledger: &CostLedger, run_a: &str, run_b: &str) -> Result<CostComparison> {
    let a = ledger.get(run_a)?;
    let b = ledger.get(run_b)?;
    if a.evaluations() == 0 {
        return Err(Error::Input(format!("run `{run_a}` recorded no evaluations")));
    }
    let wallclock_ratio = if a.wallclock_s > 0.0 {
        b.wallclock_s / a.wallclock_s
    } else {
        f64::NAN
    };
    Ok(CostComparison {
        evaluation_ratio: b.evaluations() as f64 / a.evaluations() as f64,
        wallclock_ratio,
    })
}
