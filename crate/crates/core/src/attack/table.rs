use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::persist::write_atomic;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Outputs of several models on one fixed query set.
///
/// Rows of `probs[m]` / `logits[m]` follow `query_ids`. `membership[m][q]`
/// says whether query `q` was in model `m`'s training data; it is `None`
/// until ground truth has been attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub model_ids: Vec<String>,
    pub query_ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub probs: Vec<Matrix>,
    pub logits: Vec<Matrix>,
    pub membership: Option<Vec<Vec<bool>>>,
}

/// `ln(p/(1-p))` of the true-class probability, clamped to stay finite.
pub fn scaled_logit(probs: &[f64], label: usize) -> f64 {
    let p = probs[label].clamp(1e-12, 1.0 - 1e-12);
    p.ln() - (1.0 - p).ln()
}

impl ScoreTable {
    pub fn new(
        model_ids: Vec<String>,
        query_ids: Vec<u64>,
        labels: Vec<usize>,
        probs: Vec<Matrix>,
        logits: Vec<Matrix>,
    ) -> Result<Self> {
        let table = Self {
            model_ids,
            query_ids,
            labels,
            probs,
            logits,
            membership: None,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, q) = (self.model_ids.len(), self.query_ids.len());
        if self.labels.len() != q || self.probs.len() != m || self.logits.len() != m {
            return Err(Error::Shape(format!(
                "score table with {m} models and {q} queries has {} labels, {} prob blocks, {} logit blocks",
                self.labels.len(),
                self.probs.len(),
                self.logits.len()
            )));
        }
        let classes = self.classes();
        for (p, z) in self.probs.iter().zip(&self.logits) {
            if p.rows() != q || z.shape() != p.shape() || p.cols() != classes {
                return Err(Error::Shape("incomplete score grid".into()));
            }
            for row in p.iter_rows() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Numeric("probability row does not sum to one".into()));
                }
            }
        }
        if self.labels.iter().any(|&y| y >= classes.max(1)) {
            return Err(Error::Input("query label outside class range".into()));
        }
        if let Some(mem) = &self.membership {
            if mem.len() != m || mem.iter().any(|r| r.len() != q) {
                return Err(Error::Shape("membership grid does not match table".into()));
            }
        }
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn classes(&self) -> usize {
        self.probs.first().map_or(0, Matrix::cols)
    }

    /// Scaled logits, `models × queries`.
    pub fn scaled_logits(&self) -> Vec<Vec<f64>> {
        self.probs
            .iter()
            .map(|p| (0..p.rows()).map(|q| scaled_logit(p.row(q), self.labels[q])).collect())
            .collect()
    }

    pub fn with_membership(mut self, membership: Vec<Vec<bool>>) -> Result<Self> {
        self.membership = Some(membership);
        self.validate()?;
        Ok(self)
    }

    pub fn membership(&self) -> Result<&[Vec<bool>]> {
        self.membership
            .as_deref()
            .ok_or_else(|| Error::Input("score table carries no membership ground truth".into()))
    }

    /// Stacks the models of several tables over the same query set.
    pub fn concat(tables: &[ScoreTable]) -> Result<ScoreTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Input("no score tables to combine".into()))?;
        let mut out = ScoreTable {
            model_ids: Vec::new(),
            query_ids: first.query_ids.clone(),
            labels: first.labels.clone(),
            probs: Vec::new(),
            logits: Vec::new(),
            membership: first.membership.as_ref().map(|_| Vec::new()),
        };
        for t in tables {
            if t.query_ids != out.query_ids || t.labels != out.labels {
                return Err(Error::Input("score tables cover different queries".into()));
            }
            out.model_ids.extend(t.model_ids.iter().cloned());
            out.probs.extend(t.probs.iter().cloned());
            out.logits.extend(t.logits.iter().cloned());
            match (&mut out.membership, &t.membership) {
                (Some(acc), Some(m)) => acc.extend(m.iter().cloned()),
                (None, None) => {}
                _ => return Err(Error::Input("mixing labeled and unlabeled score tables".into())),
            }
        }
        Ok(out)
    }

    /// `model_id,query_id,label,score,membership` with the scaled logit as
    /// score; membership is empty when unknown.
    pub fn to_csv(&self) -> String {
        let scores = self.scaled_logits();
        let mut out = String::from("model_id,query_id,label,score,membership\n");
        for (m, id) in self.model_ids.iter().enumerate() {
            for (q, qid) in self.query_ids.iter().enumerate() {
                let mem = match &self.membership {
                    Some(g) => (g[m][q] as u8).to_string(),
                    None => String::new(),
                };
                let _ = writeln!(out, "{id},{qid},{},{:?},{mem}", self.labels[q], scores[m][q]);
            }
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}
