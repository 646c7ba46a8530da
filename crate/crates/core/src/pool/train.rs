//! Pool training with pathway regularization, and pathway alignment.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::regularizer::{pathway_objective, pathway_objective_grads, LossBreakdown, Reference};
use super::{Pathway, ShadowPool};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::gradcheck::{flatten_grads, flatten_params, grad_check, unflatten_params, GradCheckReport};
use crate::nn::{backward_refs, cross_entropy, forward_refs, softmax, LayerGrad, LinearLayer, Matrix, SgdConfig, SgdState};
use crate::rng::Rng;
use crate::shadow::cost::RunCost;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolTrainConfig {
    /// Weight of the output-similarity term.
    pub alpha: f64,
    /// Weight of the activation-orthogonality term.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl Default for PoolTrainConfig {
    fn default() -> Self {
        Self::online()
    }
}

impl PoolTrainConfig {
    /// Regularization off; used for offline attacks.
    pub fn offline() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            ..Self::online()
        }
    }

    pub fn online() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.01,
            epochs: 30,
            batch_size: 64,
            sgd: SgdConfig::default(),
        }
    }

    pub fn regularized(&self) -> bool {
        self.alpha != 0.0 || self.beta != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Input(format!(
                "regularization weights must be finite and non-negative (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        self.sgd.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Number of pathways to align and serve.
    pub n: usize,
    pub ft_epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl AlignConfig {
    pub fn offline(n: usize) -> Self {
        Self {
            n,
            ft_epochs: 3,
            batch_size: 64,
            sgd: SgdConfig {
                lr: 0.01,
                ..SgdConfig::default()
            },
        }
    }

    pub fn online(n: usize) -> Self {
        Self {
            ft_epochs: 10,
            ..Self::offline(n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    pub ce: f64,
    pub sr: f64,
    pub or: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignRecord {
    pub pathway: Pathway,
    /// Cross-entropy on `D_q` before and after fine-tuning.
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub alignment: Vec<AlignRecord>,
}

impl ShadowPool {
    pub(crate) fn slot_count(&self) -> usize {
        let d = self.arch.expert_depth();
        self.stem.len() + self.arch.layers * self.arch.experts * d + self.head.len()
    }

    /// Optimizer slot of the `i`-th layer along `pathway`.
    fn slot_of(&self, pathway: &Pathway, i: usize) -> usize {
        let (s, d) = (self.stem.len(), self.arch.expert_depth());
        let grid = self.arch.layers * d;
        if i < s {
            i
        } else if i < s + grid {
            let (l, k) = ((i - s) / d, (i - s) % d);
            s + (l * self.arch.experts + pathway.0[l]) * d + k
        } else {
            s + self.arch.layers * self.arch.experts * d + (i - s - grid)
        }
    }

    fn layer_mut(&mut self, pathway: &Pathway, i: usize) -> &mut LinearLayer {
        let (s, d) = (self.stem.len(), self.arch.expert_depth());
        let grid = self.arch.layers * d;
        if i < s {
            &mut self.stem[i]
        } else if i < s + grid {
            let (l, k) = ((i - s) / d, (i - s) % d);
            &mut self.experts[l][pathway.0[l]][k]
        } else {
            &mut self.head[i - s - grid]
        }
    }

    pub(crate) fn apply(&mut self, pathway: &Pathway, grads: &[LayerGrad], opt: &mut SgdState, step: usize) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            let slot = self.slot_of(pathway, i);
            opt.step(slot, self.layer_mut(pathway, i), g, step)?;
        }
        Ok(())
    }
}

/// Loss and parameter gradients of one batch routed through `p1`, with
/// `p2` (if any) as a fixed reference. Gradients follow the order of
/// [`ShadowPool::pathway_layers`] for `p1`.
pub fn batch_gradients(
    pool: &ShadowPool,
    p1: &Pathway,
    p2: Option<&Pathway>,
    x: &Matrix,
    labels: &[usize],
    alpha: f64,
    beta: f64,
) -> Result<(LossBreakdown, Vec<LayerGrad>)> {
    let layers = pool.pathway_layers(p1)?;
    let (logits, tape) = forward_refs(&layers, x)?;
    let probs = softmax(&logits);
    let positions = pool.expert_output_positions();
    let hidden: Vec<Matrix> = positions
        .iter()
        .map(|&i| tape.output(i).expect("position within tape").clone())
        .collect();
    let reference = match p2 {
        Some(p) if alpha != 0.0 || beta != 0.0 => Some(pool.pathway_forward(p, x)?),
        _ => None,
    };
    let reference = reference.as_ref().map(|r| Reference {
        probs: &r.probs,
        hidden: &r.hidden,
    });
    let loss = pathway_objective(&probs, labels, &hidden, reference.as_ref(), alpha, beta)?;
    let (dz, dh) = pathway_objective_grads(&probs, labels, &hidden, reference.as_ref(), alpha, beta)?;
    let injections: Vec<(usize, &Matrix)> = positions.iter().copied().zip(dh.iter()).collect();
    let grads = backward_refs(&layers, tape, &dz, &injections)?;
    Ok((loss, grads.layers))
}

/// Finite-difference check of [`batch_gradients`] for the parameters of
/// `p1`, holding `p2`'s outputs fixed as the reference.
#[allow(clippy::too_many_arguments)]
pub fn check_batch_gradients(
    pool: &ShadowPool,
    p1: &Pathway,
    p2: Option<&Pathway>,
    x: &Matrix,
    labels: &[usize],
    alpha: f64,
    beta: f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = batch_gradients(pool, p1, p2, x, labels, alpha, beta)?;
    let reference = p2.map(|p| pool.pathway_forward(p, x)).transpose()?;
    let params = flatten_params(&pool.pathway_layers(p1)?);
    let analytic = flatten_grads(&grads.iter().collect::<Vec<_>>());
    let mut net = pool.extract(p1)?;
    let mut probe = pool.clone();
    grad_check(
        &params,
        &analytic,
        |v| {
            unflatten_params(&mut net.layers_mut(), v)?;
            probe.transplant(p1, &net)?;
            let out = probe.pathway_forward(p1, x)?;
            let r = reference.as_ref().map(|r| Reference {
                probs: &r.probs,
                hidden: &r.hidden,
            });
            Ok(pathway_objective(&out.probs, labels, &out.hidden, r.as_ref(), alpha, beta)?.total)
        },
        step,
        tolerance,
    )
}

fn chunk_batches(mut positions: Vec<usize>, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    positions.shuffle(rng);
    positions.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains every pathway on the examples routed to it.
///
/// Minibatches never mix pathways. For each batch the routed pathway is
/// updated; when regularization is on, a uniformly drawn different pathway
/// serves as the fixed reference.
pub fn train_pool(
    pool: &mut ShadowPool,
    d_tr: &Dataset,
    cfg: &PoolTrainConfig,
    rng: &mut Rng,
    cost: &mut RunCost,
) -> Result<()> {
    cfg.validate()?;
    let k = pool.n_pathways();
    if cfg.regularized() && k < 2 {
        return Err(Error::Input("pathway regularization needs at least two pathways".into()));
    }
    let mapping = pool
        .mapping
        .as_ref()
        .ok_or_else(|| Error::State("pool has no mapping".into()))?;
    let mut routed = vec![Vec::new(); k];
    for (pos, id) in d_tr.ids.iter().enumerate() {
        let w = mapping
            .pathway_of(*id)
            .ok_or_else(|| Error::State(format!("example {id} is not mapped to a pathway")))?;
        routed[w].push(pos);
    }
    let per_epoch: usize = routed.iter().map(|r| r.len().div_ceil(cfg.batch_size)).sum();
    if cfg.epochs == 0 || per_epoch == 0 {
        return Ok(());
    }
    let pathways: Vec<Pathway> = (0..k).map(|w| pool.pathway(w)).collect::<Result<_>>()?;
    let depth = pool.pathway_layers(&pathways[0])?.len();
    let mut opt = SgdState::new(cfg.sgd, pool.slot_count(), cfg.epochs * per_epoch)?;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut batches: Vec<(usize, Vec<usize>)> = Vec::with_capacity(per_epoch);
        for (w, r) in routed.iter().enumerate() {
            batches.extend(chunk_batches(r.clone(), cfg.batch_size, rng).into_iter().map(|b| (w, b)));
        }
        batches.shuffle(rng);
        let mut sum = LossBreakdown::default();
        for (w, positions) in &batches {
            let p2 = if cfg.regularized() {
                let r = rng.random_range(0..k - 1);
                Some(&pathways[if r >= *w { r + 1 } else { r }])
            } else {
                None
            };
            let x = d_tr.features.select_rows(positions);
            let y: Vec<usize> = positions.iter().map(|&i| d_tr.labels[i]).collect();
            let (loss, grads) = batch_gradients(pool, &pathways[*w], p2, &x, &y, cfg.alpha, cfg.beta)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            pool.apply(&pathways[*w], &grads, &mut opt, step)?;
            step += 1;
            cost.add_forward(positions.len(), depth * if p2.is_some() { 2 } else { 1 });
            cost.add_backward(positions.len(), depth);
            cost.add_update();
            sum.ce += loss.ce;
            sum.sr += loss.sr;
            sum.or += loss.or;
            sum.total += loss.total;
        }
        let n = batches.len() as f64;
        pool.log.epochs.push(EpochRecord {
            epoch,
            batches: batches.len(),
            ce: sum.ce / n,
            sr: sum.sr / n,
            or: sum.or / n,
            total: sum.total / n,
        });
    }
    Ok(())
}

fn pathway_ce(pool: &ShadowPool, p: &Pathway, data: &Dataset) -> Result<f64> {
    cross_entropy(&pool.pathway_forward(p, &data.features)?.probs, &data.labels)
}

/// Fine-tunes `cfg.n` distinct, uniformly chosen pathways on `dq`, one
/// after another, with plain cross-entropy. Shared stem, head and experts
/// are updated in place, so later pathways can move earlier ones.
pub fn align_pathways(
    pool: &mut ShadowPool,
    dq: &Dataset,
    cfg: &AlignConfig,
    rng: &mut Rng,
    cost: &mut RunCost,
) -> Result<()> {
    let k = pool.n_pathways();
    if cfg.n > k {
        return Err(Error::Input(format!("cannot align {} of {k} pathways", cfg.n)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    let mapping = pool
        .mapping
        .as_ref()
        .ok_or_else(|| Error::State("pool has no mapping".into()))?;
    if let Some(id) = dq.ids.iter().find(|id| !mapping.contains(**id)) {
        return Err(Error::Input(format!("alignment example {id} is not in the training set")));
    }
    let chosen: Vec<Pathway> = index::sample(rng, k, cfg.n)
        .into_iter()
        .map(|w| pool.pathway(w))
        .collect::<Result<_>>()?;
    let per_epoch = dq.len().div_ceil(cfg.batch_size);
    for p in &chosen {
        let loss_before = pathway_ce(pool, p, dq)?;
        if cfg.ft_epochs > 0 && per_epoch > 0 {
            let depth = pool.pathway_layers(p)?.len();
            let mut opt = SgdState::new(cfg.sgd, pool.slot_count(), cfg.ft_epochs * per_epoch)?;
            let mut step = 0;
            for _ in 0..cfg.ft_epochs {
                for positions in chunk_batches((0..dq.len()).collect(), cfg.batch_size, rng) {
                    let x = dq.features.select_rows(&positions);
                    let y: Vec<usize> = positions.iter().map(|&i| dq.labels[i]).collect();
                    let (_, grads) = batch_gradients(pool, p, None, &x, &y, 0.0, 0.0)?;
                    pool.apply(p, &grads, &mut opt, step)?;
                    step += 1;
                    cost.add_forward(positions.len(), depth);
                    cost.add_backward(positions.len(), depth);
                    cost.add_update();
                }
            }
        }
        let loss_after = pathway_ce(pool, p, dq)?;
        pool.log.alignment.push(AlignRecord {
            pathway: p.clone(),
            loss_before,
            loss_after,
        });
    }
    pool.aligned_set = Some(chosen);
    pool.dq_ids = Some(dq.ids.clone());
    Ok(())
}
