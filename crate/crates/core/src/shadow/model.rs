use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::{RunCost, Stopwatch};
use crate::attack::ScoreTable;
use crate::data::persist::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{backward_refs, cross_entropy_grad, forward_refs, softmax, SgdConfig, SgdState};
use crate::pool::{Network, PoolArchitecture};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            sgd: SgdConfig::default(),
        }
    }
}

/// A standalone model with the shape of one pool pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowModel {
    pub arch: PoolArchitecture,
    pub net: Network,
    /// Ids of the examples it was trained on, sorted.
    pub train_ids: Vec<u64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    arch: PoolArchitecture,
    train_ids: Vec<u64>,
    seed: u64,
}

pub const MODEL_CHECKPOINT_KIND: &str = "shadow-model";

impl ShadowModel {
    pub fn is_member(&self, id: u64) -> bool {
        self.train_ids.binary_search(&id).is_ok()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(ModelMeta {
            arch: self.arch.clone(),
            train_ids: self.train_ids.clone(),
            seed: self.seed,
        })
        .map_err(|e| Error::State(format!("model metadata: {e}")))?;
        let mut ckpt = Checkpoint::new(MODEL_CHECKPOINT_KIND, meta);
        self.net.write_tensors(&mut ckpt, "");
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != MODEL_CHECKPOINT_KIND {
            return Err(Error::State(format!("checkpoint kind `{}` is not a model", ckpt.kind)));
        }
        let meta: ModelMeta =
            serde_json::from_value(ckpt.meta.clone()).map_err(|e| Error::State(format!("model metadata: {e}")))?;
        let net = Network::read_tensors(ckpt, "", &meta.arch)?;
        Ok(Self {
            arch: meta.arch,
            net,
            train_ids: meta.train_ids,
            seed: meta.seed,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.to_checkpoint()?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(dir)?)
    }
}

/// Plain cross-entropy training of a fresh network on `data`.
pub fn train_independent(
    data: &Dataset,
    arch: &PoolArchitecture,
    cfg: &ModelTrainConfig,
    seed: u64,
    cost: &mut RunCost,
) -> Result<ShadowModel> {
    if cfg.batch_size == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    if data.dim() != arch.input_dim || data.classes != arch.classes {
        return Err(Error::Shape(format!(
            "data ({} features, {} classes) does not fit the architecture",
            data.dim(),
            data.classes
        )));
    }
    let watch = Stopwatch::start();
    let src = RandomSource::new(seed);
    let mut net = arch.init_network(&mut src.stream("model/init"))?;
    let mut rng = src.stream("model/batches");
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    if cfg.epochs > 0 && per_epoch > 0 {
        let mut opt = SgdState::new(cfg.sgd, net.layer_count(), cfg.epochs * per_epoch)?;
        let depth = net.layer_count();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let x = data.features.select_rows(batch);
                let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
                let (logits, tape) = forward_refs(&net.layers(), &x)?;
                let dz = cross_entropy_grad(&softmax(&logits), &y)?;
                let grads = backward_refs(&net.layers(), tape, &dz, &[])?;
                for (slot, (layer, g)) in net.layers_mut().into_iter().zip(&grads.layers).enumerate() {
                    opt.step(slot, layer, g, step)?;
                }
                step += 1;
                cost.add_forward(batch.len(), depth);
                cost.add_backward(batch.len(), depth);
                cost.add_update();
            }
        }
    }
    let mut train_ids = data.ids.clone();
    train_ids.sort_unstable();
    watch.stop(cost);
    Ok(ShadowModel {
        arch: arch.clone(),
        net,
        train_ids,
        seed,
    })
}

/// Trains one model per id subset in parallel; seeds are derived from
/// `seed` and the subset index.
pub fn train_many(
    data: &Dataset,
    subsets: &[Vec<u64>],
    arch: &PoolArchitecture,
    cfg: &ModelTrainConfig,
    seed: u64,
) -> Result<Vec<(ShadowModel, RunCost)>> {
    let src = RandomSource::new(seed);
    subsets
        .par_iter()
        .enumerate()
        .map(|(i, ids)| {
            let subset = data.subset_by_ids(ids)?;
            let mut cost = RunCost::default();
            let model = train_independent(&subset, arch, cfg, src.child("shadow", i as u64).seed(), &mut cost)?;
            Ok((model, cost))
        })
        .collect()
}

/// Outputs of each model on `queries`; model ids are `{prefix}{index}`.
pub fn query_models(models: &[ShadowModel], queries: &Dataset, prefix: &str) -> Result<ScoreTable> {
    let outputs: Vec<_> = models
        .par_iter()
        .map(|m| m.net.logits(&queries.features))
        .collect::<Result<_>>()?;
    let probs = outputs.iter().map(softmax).collect();
    let ids = (0..models.len()).map(|i| format!("{prefix}{i}")).collect();
    ScoreTable::new(ids, queries.ids.clone(), queries.labels.clone(), probs, outputs)
}
