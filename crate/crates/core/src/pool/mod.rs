//! The shadow pool: one mixture-of-experts network whose pathways stand in
//! for many shadow models.
//!
//! A pool has a shared stem, an `L × M` grid of expert blocks and a shared
//! head. Choosing one expert per layer (a [`Pathway`]) yields a plain
//! sequential network with the same shape as a standalone shadow model.
//! Every training example is routed to exactly one pathway by a
//! [`MappingMatrix`]; a few pathways are later fine-tuned on a small shared
//! subset `D_q` ("aligned"), which also makes them trained on `D_q`.

pub mod arch;
pub mod pathway;
pub mod regularizer;
pub mod train;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arch::{Network, PoolArchitecture};
pub use pathway::{enumerate_pathways, Pathway};
pub use regularizer::{
    orthogonal_grad, orthogonal_regularizer, pathway_objective, pathway_objective_grads,
    similarity_grad, similarity_regularizer, LossBreakdown, Reference,
};
pub use train::{align_pathways, batch_gradients, check_batch_gradients, train_pool, AlignConfig, PoolTrainConfig, TrainingLog};

use crate::attack::ScoreTable;
use crate::data::persist::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{pathway_count, Dataset, MappingMatrix};
use crate::error::{Error, Result};
use crate::nn::{forward_refs, predict_refs, softmax, LinearLayer, Matrix};
use crate::rng::Rng;

/// Probabilities, logits and per-layer expert outputs of one pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayOutput {
    pub probs: Matrix,
    pub logits: Matrix,
    pub hidden: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPool {
    pub arch: PoolArchitecture,
    pub stem: Vec<LinearLayer>,
    /// `experts[l][m]` is the block of expert `m` in layer `l`.
    pub experts: Vec<Vec<Vec<LinearLayer>>>,
    pub head: Vec<LinearLayer>,
    pub mapping: Option<MappingMatrix>,
    pub aligned_set: Option<Vec<Pathway>>,
    pub dq_ids: Option<Vec<u64>>,
    pub log: TrainingLog,
}

#[derive(Serialize, Deserialize)]
struct PoolMeta {
    arch: PoolArchitecture,
    mapping: Option<MappingMatrix>,
    aligned_set: Option<Vec<Pathway>>,
    dq_ids: Option<Vec<u64>>,
    log: TrainingLog,
    config: serde_json::Value,
}

pub const POOL_CHECKPOINT_KIND: &str = "shadow-pool";

impl ShadowPool {
    pub fn new(arch: PoolArchitecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        pathway_count(arch.experts, arch.layers)?;
        let stem = arch.init_stem(rng);
        let experts = (0..arch.layers)
            .map(|l| (0..arch.experts).map(|_| arch.init_expert(l, rng)).collect())
            .collect();
        let head = arch.init_head(rng);
        Ok(Self {
            arch,
            stem,
            experts,
            head,
            mapping: None,
            aligned_set: None,
            dq_ids: None,
            log: TrainingLog::default(),
        })
    }

    pub fn n_pathways(&self) -> usize {
        pathway_count(self.arch.experts, self.arch.layers).expect("checked at construction")
    }

    pub fn pathway(&self, index: usize) -> Result<Pathway> {
        Pathway::from_index(index, self.arch.experts, self.arch.layers)
    }

    pub fn set_mapping(&mut self, mapping: MappingMatrix) -> Result<()> {
        if mapping.n_pathways != self.n_pathways() {
            return Err(Error::Input(format!(
                "mapping over {} pathways for a pool with {}",
                mapping.n_pathways,
                self.n_pathways()
            )));
        }
        self.mapping = Some(mapping);
        Ok(())
    }

    /// Layers along `pathway`: stem, one block per layer, head.
    pub fn pathway_layers(&self, pathway: &Pathway) -> Result<Vec<&LinearLayer>> {
        pathway.validate(self.arch.experts, self.arch.layers)?;
        let mut out: Vec<&LinearLayer> = self.stem.iter().collect();
        for (l, &m) in pathway.0.iter().enumerate() {
            out.extend(self.experts[l][m].iter());
        }
        out.extend(self.head.iter());
        Ok(out)
    }

    /// Positions in [`ShadowPool::pathway_layers`] of each expert block's
    /// final layer.
    pub(crate) fn expert_output_positions(&self) -> Vec<usize> {
        let (s, d) = (self.stem.len(), self.arch.expert_depth());
        (0..self.arch.layers).map(|l| s + l * d + d - 1).collect()
    }

    pub fn pathway_forward(&self, pathway: &Pathway, x: &Matrix) -> Result<PathwayOutput> {
        let layers = self.pathway_layers(pathway)?;
        let (logits, tape) = forward_refs(&layers, x)?;
        let hidden = self
            .expert_output_positions()
            .into_iter()
            .map(|i| tape.output(i).expect("position within tape").clone())
            .collect();
        Ok(PathwayOutput {
            probs: softmax(&logits),
            logits,
            hidden,
        })
    }

    /// Standalone copy of the network along `pathway`.
    pub fn extract(&self, pathway: &Pathway) -> Result<Network> {
        pathway.validate(self.arch.experts, self.arch.layers)?;
        Ok(Network {
            stem: self.stem.clone(),
            blocks: pathway
                .0
                .iter()
                .enumerate()
                .map(|(l, &m)| self.experts[l][m].clone())
                .collect(),
            head: self.head.clone(),
        })
    }

    /// Overwrites the stem, head and the experts on `pathway` with `net`.
    pub fn transplant(&mut self, pathway: &Pathway, net: &Network) -> Result<()> {
        pathway.validate(self.arch.experts, self.arch.layers)?;
        let shape = |ls: &[LinearLayer]| ls.iter().map(|l| l.weight.shape()).collect::<Vec<_>>();
        let same = shape(&net.stem) == shape(&self.stem)
            && shape(&net.head) == shape(&self.head)
            && net.blocks.len() == self.arch.layers
            && net
                .blocks
                .iter()
                .zip(&pathway.0)
                .enumerate()
                .all(|(l, (b, &m))| shape(b) == shape(&self.experts[l][m]));
        if !same {
            return Err(Error::Shape("network does not match the pool architecture".into()));
        }
        self.stem = net.stem.clone();
        self.head = net.head.clone();
        for (l, &m) in pathway.0.iter().enumerate() {
            self.experts[l][m] = net.blocks[l].clone();
        }
        Ok(())
    }

    /// Whether example `id` was used to train pathway `w`: routed there by
    /// the mapping, or in `D_q` while `w` is aligned. Ids outside the
    /// training set are never members.
    pub fn member_of(&self, id: u64, w: usize) -> Result<bool> {
        if w >= self.n_pathways() {
            return Err(Error::Input(format!("pathway id {w} outside {}", self.n_pathways())));
        }
        let mapping = self
            .mapping
            .as_ref()
            .ok_or_else(|| Error::State("pool has no mapping".into()))?;
        if mapping.pathway_of(id) == Some(w) {
            return Ok(true);
        }
        if let (Some(dq), Some(aligned)) = (&self.dq_ids, &self.aligned_set) {
            let aligned_here = aligned.iter().any(|p| p.index(self.arch.experts) == w);
            return Ok(aligned_here && dq.contains(&id));
        }
        Ok(false)
    }

    /// Membership grid for `pathways × ids`, reusing the lookups.
    pub fn membership_grid(&self, pathways: &[Pathway], ids: &[u64]) -> Result<Vec<Vec<bool>>> {
        let mapping = self
            .mapping
            .as_ref()
            .ok_or_else(|| Error::State("pool has no mapping".into()))?;
        let dq: HashSet<u64> = self.dq_ids.iter().flatten().copied().collect();
        let aligned: HashSet<usize> = self
            .aligned_set
            .iter()
            .flatten()
            .map(|p| p.index(self.arch.experts))
            .collect();
        pathways
            .iter()
            .map(|p| {
                p.validate(self.arch.experts, self.arch.layers)?;
                let w = p.index(self.arch.experts);
                let is_aligned = aligned.contains(&w);
                Ok(ids
                    .iter()
                    .map(|id| mapping.pathway_of(*id) == Some(w) || (is_aligned && dq.contains(id)))
                    .collect())
            })
            .collect()
    }

    /// Read-only outputs of each listed pathway on `queries`; model ids are
    /// `{prefix}p{pathway id}`.
    pub fn query_shared_models(&self, pathways: &[Pathway], queries: &Dataset, prefix: &str) -> Result<ScoreTable> {
        let mut probs = Vec::with_capacity(pathways.len());
        let mut logits = Vec::with_capacity(pathways.len());
        let mut ids = Vec::with_capacity(pathways.len());
        for p in pathways {
            let layers = self.pathway_layers(p)?;
            let z = predict_refs(&layers, &queries.features)?;
            probs.push(softmax(&z));
            logits.push(z);
            ids.push(format!("{prefix}p{}", p.index(self.arch.experts)));
        }
        ScoreTable::new(ids, queries.ids.clone(), queries.labels.clone(), probs, logits)
    }

    pub(crate) fn parameter_layers(&self) -> Vec<&LinearLayer> {
        self.stem
            .iter()
            .chain(self.experts.iter().flatten().flatten())
            .chain(&self.head)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameter_layers().iter().map(|l| l.param_count()).sum()
    }

    /// Checkpoint holding weights, mapping, alignment state, log and a
    /// caller-supplied config echo.
    pub fn to_checkpoint(&self, config: serde_json::Value) -> Result<Checkpoint> {
        let meta = PoolMeta {
            arch: self.arch.clone(),
            mapping: self.mapping.clone(),
            aligned_set: self.aligned_set.clone(),
            dq_ids: self.dq_ids.clone(),
            log: self.log.clone(),
            config,
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::State(format!("pool metadata: {e}")))?;
        let mut ckpt = Checkpoint::new(POOL_CHECKPOINT_KIND, meta);
        arch::write_group(&mut ckpt, "stem", &self.stem);
        for (l, row) in self.experts.iter().enumerate() {
            for (m, block) in row.iter().enumerate() {
                arch::write_group(&mut ckpt, &format!("expert{l}_{m}"), block);
            }
        }
        arch::write_group(&mut ckpt, "head", &self.head);
        Ok(ckpt)
    }

    /// Inverse of [`ShadowPool::to_checkpoint`]; returns the config echo.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        if ckpt.kind != POOL_CHECKPOINT_KIND {
            return Err(Error::State(format!("checkpoint kind `{}` is not a pool", ckpt.kind)));
        }
        let meta: PoolMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::State(format!("pool metadata: {e}")))?;
        let arch = meta.arch;
        arch.validate()?;
        let stem = arch::read_group(ckpt, "stem", arch.stem.len(), false)?;
        let experts = (0..arch.layers)
            .map(|l| {
                (0..arch.experts)
                    .map(|m| arch::read_group(ckpt, &format!("expert{l}_{m}"), arch.expert_depth(), false))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let head = arch::read_group(ckpt, "head", arch.head.len() + 1, true)?;
        let pool = ShadowPool {
            arch,
            stem,
            experts,
            head,
            mapping: meta.mapping,
            aligned_set: meta.aligned_set,
            dq_ids: meta.dq_ids,
            log: meta.log,
        };
        Ok((pool, meta.config))
    }

    pub fn save(&self, dir: &Path, config: serde_json::Value) -> Result<()> {
        save_checkpoint(dir, &self.to_checkpoint(config)?)
    }

    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        Self::from_checkpoint(&load_checkpoint(dir)?)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub(crate) fn small_arch() -> PoolArchitecture {
        PoolArchitecture {
            input_dim: 3,
            stem: vec![5],
            expert: vec![4],
            layers: 2,
            experts: 2,
            head: vec![],
            classes: 3,
        }
    }
}
