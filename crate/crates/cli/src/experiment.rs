//! The experiment as plain functions over in-memory values. Pipeline stages
//! wrap these with checkpoint I/O; the acceptance suite calls them directly.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use shapool::attack::{
    build_attack_dataset, lira_offline_scores, lira_online_scores, rmia_scores, AttackMode, GaussianModel,
    ModelSource, RmiaConfig, ScoreTable,
};
use shapool::data::{build_mapping, gen_blobs, load_dataset_csv, Dataset, OverlapPolicy};
use shapool::metrics::{bhattacharyya, entropy_diversity, roc_and_auc, tpr_at_fpr, RocCurve, DIVERSITY_BASE};
use shapool::nn::{Matrix, SgdConfig};
use shapool::pool::{align_pathways, train_pool, AlignConfig, Pathway, PoolArchitecture, PoolTrainConfig, ShadowPool};
use shapool::rng::{RandomSource, Rng};
use shapool::shadow::{augment_checked, train_independent, train_many, ModelTrainConfig, RunCost, ShadowModel};

use crate::config::{AttackMethod, DatasetKind, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Which ids play which role. Everything downstream of data generation is
/// a function of this layout and the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Audited examples.
    pub queries: Vec<u64>,
    /// Held out from all training; reference points for RMIA and the
    /// accuracy check of masked models.
    pub population: Vec<u64>,
    pub target: Vec<u64>,
    pub shadows: Vec<Vec<u64>>,
    pub pools: Vec<PoolPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPlan {
    pub train: Vec<u64>,
    /// Fine-tuning set for alignment, a subset of `train`.
    pub align: Vec<u64>,
}

fn config_err(field: &str, message: String) -> CliError {
    CliError::Config {
        field: field.into(),
        message,
    }
}

fn root(cfg: &ExperimentConfig) -> RandomSource {
    RandomSource::new(cfg.seed)
}

pub fn generate_data(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let d = &cfg.dataset;
    Ok(match d.kind {
        DatasetKind::Blobs => gen_blobs(cfg.seed, d.per_class, d.classes, d.dim, d.spread)?,
        DatasetKind::Csv => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| config_err("dataset.path", "required for csv datasets".into()))?;
            load_dataset_csv(path, None)?
        }
    })
}

pub fn architecture(cfg: &ExperimentConfig, data: &Dataset) -> CliResult<PoolArchitecture> {
    let a = &cfg.architecture;
    if let Some(dim) = a.input_dim.filter(|d| *d != data.dim()) {
        return Err(config_err(
            "architecture.input_dim",
            format!("{dim} does not match the data ({} features)", data.dim()),
        ));
    }
    if let Some(c) = a.classes.filter(|c| *c != data.classes) {
        return Err(config_err(
            "architecture.classes",
            format!("{c} does not match the data ({} classes)", data.classes),
        ));
    }
    Ok(PoolArchitecture {
        input_dim: data.dim(),
        stem: a.stem.clone(),
        expert: a.expert.clone(),
        layers: a.layers,
        experts: a.experts,
        head: a.head.clone(),
        classes: data.classes,
    })
}

/// Layers evaluated per example by one pathway or standalone network.
pub fn network_depth(arch: &PoolArchitecture) -> usize {
    arch.stem.len() + arch.layers * arch.expert.len() + arch.head.len() + 1
}

fn sample_from(pool: &[u64], n: usize, field: &str, rng: &mut Rng) -> CliResult<Vec<u64>> {
    if n > pool.len() {
        return Err(config_err(
            field,
            format!("needs {n} auxiliary examples but only {} are available", pool.len()),
        ));
    }
    Ok(index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect())
}

fn sorted(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    v
}

/// Splits the data into queries, population, target training set and
/// shadow training sets.
///
/// Half of the queries are target members. In online mode every query also
/// appears in about half of the shadow training sets (and in the training
/// set of about half of the pools, or of a random half of the queries with a
/// single pool); those queries are put into the pool's alignment set so they
/// are members of every aligned pathway. Offline shadows never see queries.
pub fn plan_layout(cfg: &ExperimentConfig, data: &Dataset) -> CliResult<Layout> {
    let mut rng = root(cfg).stream("layout");
    let q = cfg.attack.queries;
    let pop = cfg.dataset.population;
    let mut ids = data.ids.clone();
    ids.shuffle(&mut rng);
    if q + pop > ids.len() {
        return Err(config_err(
            "attack.queries",
            format!("{q} queries and {pop} population rows exceed the {} examples", ids.len()),
        ));
    }
    let queries = ids[..q].to_vec();
    let population = ids[q..q + pop].to_vec();
    let reserve = &ids[q + pop..];

    let member_queries = sample_from(&queries, q / 2, "attack.queries", &mut rng)?;
    let target_fill = sample_from(
        reserve,
        cfg.dataset.target_size - q / 2,
        "dataset.target_size",
        &mut rng,
    )?;
    let aux: Vec<u64> = match cfg.dataset.overlap {
        OverlapPolicy::WithReplacement => reserve.to_vec(),
        OverlapPolicy::Disjoint => {
            let taken: HashSet<u64> = target_fill.iter().copied().collect();
            reserve.iter().copied().filter(|id| !taken.contains(id)).collect()
        }
    };
    let target = sorted(member_queries.into_iter().chain(target_fill).collect());

    let online = cfg.attack.mode == AttackMode::Online;
    let n_shadows = cfg.baselines.shadows;
    let shadow_queries = if online {
        shapool::data::balanced_halves(&queries, n_shadows, &mut rng)
    } else {
        vec![Vec::new(); n_shadows]
    };
    let subset = cfg.baselines.subset_size;
    let mut shadows = Vec::with_capacity(n_shadows);
    for part in shadow_queries {
        let fill = subset.checked_sub(part.len()).ok_or_else(|| {
            config_err("baselines.subset_size", format!("{subset} cannot hold {} queries", part.len()))
        })?;
        let fill = sample_from(&aux, fill, "baselines.subset_size", &mut rng)?;
        shadows.push(sorted(part.into_iter().chain(fill).collect()));
    }

    let pool_size = (cfg.pool.size_ratio * subset as f64).round() as usize;
    let pool_queries = match (online, cfg.pool.count) {
        (false, n) => vec![Vec::new(); n],
        (true, 1) => vec![sample_from(&queries, q / 2, "attack.queries", &mut rng)?],
        (true, n) => shapool::data::balanced_halves(&queries, n, &mut rng),
    };
    let mut pools = Vec::with_capacity(pool_queries.len());
    for part in pool_queries {
        let fill = pool_size.checked_sub(part.len()).ok_or_else(|| {
            config_err("pool.size_ratio", format!("pool of {pool_size} cannot hold {} queries", part.len()))
        })?;
        let fill = sample_from(&aux, fill, "pool.size_ratio", &mut rng)?;
        let align_size = ((cfg.pool.dq_fraction * pool_size as f64).round() as usize).clamp(1, pool_size);
        let top_up = align_size.saturating_sub(part.len()).min(fill.len());
        let mut align = part.clone();
        align.extend(index::sample(&mut rng, fill.len(), top_up).into_iter().map(|i| fill[i]));
        pools.push(PoolPlan {
            train: sorted(part.into_iter().chain(fill).collect()),
            align: sorted(align),
        });
    }

    Ok(Layout {
        queries: sorted(queries),
        population: sorted(population),
        target,
        shadows,
        pools,
    })
}

pub fn model_config(cfg: &ExperimentConfig) -> ModelTrainConfig {
    ModelTrainConfig {
        epochs: cfg.training.epochs,
        batch_size: cfg.training.batch_size,
        sgd: cfg.training.sgd(),
    }
}

pub fn pool_config(cfg: &ExperimentConfig, epochs: usize) -> PoolTrainConfig {
    PoolTrainConfig {
        alpha: cfg.pool.alpha(),
        beta: cfg.pool.beta(),
        epochs,
        batch_size: cfg.training.batch_size,
        sgd: cfg.training.sgd(),
    }
}

pub fn align_config(cfg: &ExperimentConfig) -> AlignConfig {
    AlignConfig {
        n: cfg.pool.n,
        ft_epochs: cfg.pool.ft_epochs(),
        batch_size: cfg.training.batch_size,
        sgd: SgdConfig {
            lr: cfg.pool.ft_lr,
            ..cfg.training.sgd()
        },
    }
}

/// Evaluations spent by the independent shadow models of `layout`.
pub fn shadow_budget(cfg: &ExperimentConfig, layout: &Layout, arch: &PoolArchitecture) -> u64 {
    let depth = network_depth(arch) as u64;
    let examples: u64 = layout.shadows.iter().map(|s| s.len() as u64).sum();
    2 * cfg.training.epochs as u64 * examples * depth
}

/// Evaluations spent aligning every pool.
pub fn alignment_cost(cfg: &ExperimentConfig, layout: &Layout, arch: &PoolArchitecture) -> u64 {
    let depth = network_depth(arch) as u64;
    let per_pool = |p: &PoolPlan| 2 * (cfg.pool.n * cfg.pool.ft_epochs() * p.align.len()) as u64 * depth;
    layout.pools.iter().map(per_pool).sum()
}

/// Pool training epochs: the configured value, or else the most epochs
/// that keep pool training plus alignment within the shadow budget.
pub fn pool_epochs(cfg: &ExperimentConfig, layout: &Layout, arch: &PoolArchitecture) -> CliResult<usize> {
    if let Some(e) = cfg.pool.epochs {
        return Ok(e);
    }
    let budget = shadow_budget(cfg, layout, arch);
    if budget == 0 {
        return Err(config_err(
            "pool.epochs",
            "required when there are no shadow models to match".into(),
        ));
    }
    let passes = if pool_config(cfg, 1).regularized() { 3 } else { 2 };
    let depth = network_depth(arch) as u64;
    let per_epoch: u64 = layout.pools.iter().map(|p| p.train.len() as u64 * depth * passes).sum();
    let left = budget.saturating_sub(alignment_cost(cfg, layout, arch));
    Ok(((left / per_epoch.max(1)) as usize).max(1))
}

pub fn train_target(
    cfg: &ExperimentConfig,
    data: &Dataset,
    layout: &Layout,
    arch: &PoolArchitecture,
    cost: &mut RunCost,
) -> CliResult<ShadowModel> {
    let subset = data.subset_by_ids(&layout.target)?;
    let seed = root(cfg).child("target", 0).seed();
    Ok(train_independent(&subset, arch, &model_config(cfg), seed, cost)?)
}

pub fn train_shadows(
    cfg: &ExperimentConfig,
    data: &Dataset,
    layout: &Layout,
    arch: &PoolArchitecture,
) -> CliResult<Vec<(ShadowModel, RunCost)>> {
    let seed = root(cfg).child("shadows", 0).seed();
    Ok(train_many(data, &layout.shadows, arch, &model_config(cfg), seed)?)
}

/// Masked copies of every shadow model, checked against the population.
pub fn augment_shadows(
    cfg: &ExperimentConfig,
    data: &Dataset,
    layout: &Layout,
    shadows: &[ShadowModel],
) -> CliResult<Vec<ShadowModel>> {
    let check = data.subset_by_ids(&layout.population)?;
    let src = root(cfg).child("mask", 0);
    let mut out = Vec::new();
    for (i, base) in shadows.iter().enumerate() {
        for (j, entry) in cfg.baselines.masks.iter().enumerate() {
            for c in 0..entry.copies {
                let seed = src.child("shadow", i as u64).child("entry", j as u64).child("copy", c as u64).seed();
                out.push(augment_checked(base, &entry.spec(seed), &check)?);
            }
        }
    }
    Ok(out)
}

pub fn train_pool_index(
    cfg: &ExperimentConfig,
    data: &Dataset,
    layout: &Layout,
    index: usize,
    arch: &PoolArchitecture,
    epochs: usize,
    cost: &mut RunCost,
) -> CliResult<ShadowPool> {
    let plan = &layout.pools[index];
    let src = root(cfg).child("pool", index as u64);
    let mut pool = ShadowPool::new(arch.clone(), &mut src.stream("init"))?;
    let mapping = build_mapping(&plan.train, arch.experts, arch.layers, &mut src.stream("mapping"))?;
    pool.set_mapping(mapping)?;
    let d_tr = data.subset_by_ids(&plan.train)?;
    train_pool(&mut pool, &d_tr, &pool_config(cfg, epochs), &mut src.stream("train"), cost)?;
    Ok(pool)
}

pub fn align_pool_index(
    cfg: &ExperimentConfig,
    data: &Dataset,
    layout: &Layout,
    index: usize,
    pool: &mut ShadowPool,
    cost: &mut RunCost,
) -> CliResult<()> {
    let dq = data.subset_by_ids(&layout.pools[index].align)?;
    let mut rng = root(cfg).child("pool", index as u64).stream("align");
    align_pathways(pool, &dq, &align_config(cfg), &mut rng, cost)?;
    Ok(())
}

/// Models an attack calibrates against.
#[derive(Clone, Copy)]
pub enum Shadows<'a> {
    Pools(&'a [ShadowPool]),
    Models(&'a [ShadowModel]),
}

impl Shadows<'_> {
    pub fn count(&self) -> usize {
        match self {
            Shadows::Pools(pools) => pools.iter().map(|p| p.aligned_set.as_ref().map_or(0, Vec::len)).sum(),
            Shadows::Models(models) => models.len(),
        }
    }

    /// Outputs and membership of every shadow model on `queries`.
    pub fn table(&self, queries: &Dataset) -> CliResult<ScoreTable> {
        match self {
            Shadows::Models(models) => Ok(build_attack_dataset(
                &[ModelSource::Models {
                    models,
                    prefix: "shadow",
                }],
                queries,
            )?),
            Shadows::Pools(pools) => {
                let prefixes: Vec<String> = (0..pools.len()).map(|j| format!("pool{j}")).collect();
                let mut sources = Vec::with_capacity(pools.len());
                for (pool, prefix) in pools.iter().zip(&prefixes) {
                    let pathways = pool.aligned_set.as_deref().ok_or_else(|| {
                        shapool::Error::State(format!("{prefix} has not been aligned"))
                    })?;
                    sources.push(ModelSource::Pool { pool, pathways, prefix });
                }
                Ok(build_attack_dataset(&sources, queries)?)
            }
        }
    }

    /// Probability outputs of every shadow model on `x`.
    pub fn outputs(&self, x: &Matrix) -> CliResult<Vec<Matrix>> {
        let mut out = Vec::new();
        match self {
            Shadows::Models(models) => {
                for m in *models {
                    out.push(m.net.predict_proba(x)?);
                }
            }
            Shadows::Pools(pools) => {
                for pool in *pools {
                    for p in pool.aligned_set.iter().flatten() {
                        out.push(pool.pathway_forward(p, x)?.probs);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub query_ids: Vec<u64>,
    pub members: Vec<bool>,
    pub scores: Vec<f64>,
    pub roc: RocCurve,
    pub auc: f64,
    pub tf1: f64,
    pub tf01: f64,
}

impl AttackOutcome {
    pub fn from_scores(query_ids: Vec<u64>, members: Vec<bool>, scores: Vec<f64>) -> CliResult<Self> {
        let labelled: Vec<(f64, bool)> = scores.iter().copied().zip(members.iter().copied()).collect();
        let (roc, auc) = roc_and_auc(&labelled)?;
        Ok(Self {
            tf1: tpr_at_fpr(&roc, 0.01),
            tf01: tpr_at_fpr(&roc, 0.001),
            query_ids,
            members,
            scores,
            roc,
            auc,
        })
    }

    /// Per-query CSV: `query_id,member,score`.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("query_id,member,score\n");
        for ((id, m), s) in self.query_ids.iter().zip(&self.members).zip(&self.scores) {
            out.push_str(&format!("{id},{},{s:?}\n", u8::from(*m)));
        }
        out
    }
}

/// Runs the configured attack against `target` on the layout's queries.
pub fn run_attack(
    cfg: &ExperimentConfig,
    data: &Dataset,
    layout: &Layout,
    target: &ShadowModel,
    shadows: Shadows<'_>,
) -> CliResult<AttackOutcome> {
    if shadows.count() == 0 {
        return Err(shapool::Error::InsufficientModels {
            kind: "shadow",
            needed: 1,
            got: 0,
        }
        .into());
    }
    let queries = data.subset_by_ids(&layout.queries)?;
    let target_models = std::slice::from_ref(target);
    let target_table = shapool::shadow::query_models(target_models, &queries, "target")?;
    let reference = shadows.table(&queries)?;
    let at = &cfg.attack;
    let scores = match at.method {
        AttackMethod::Lira => match at.mode {
            AttackMode::Offline => lira_offline_scores(&reference, &target_table)?,
            AttackMode::Online => lira_online_scores(&reference, &target_table, at.fit)?,
        },
        AttackMethod::Rmia => {
            let population = data.subset_by_ids(&layout.population)?;
            let pop_reference = shadows.table(&population)?;
            let pop_target = shapool::shadow::query_models(target_models, &population, "target")?;
            let rmia = RmiaConfig {
                mode: at.mode,
                gamma: at.gamma,
                a: at.a,
            };
            rmia_scores(&reference, &target_table, &pop_reference, &pop_target, &rmia)?
        }
    };
    let members = queries.ids.iter().map(|id| target.is_member(*id)).collect();
    AttackOutcome::from_scores(queries.ids.clone(), members, scores)
}

/// Gaussian over the scaled true-class logits of every model on every
/// example in `data`.
pub fn logit_gaussian(outputs: &[Matrix], data: &Dataset) -> CliResult<GaussianModel> {
    let mut values = Vec::with_capacity(outputs.len() * data.len());
    for probs in outputs {
        for (r, &y) in data.labels.iter().enumerate() {
            values.push(shapool::attack::scaled_logit(probs.row(r), y));
        }
    }
    Ok(GaussianModel::fit(&values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Overlap of the shadow models' member-logit distribution with the
    /// target's member-logit distribution.
    pub member_overlap: Option<f64>,
    /// Ensemble entropy gain over the first four shadow models, by ensemble
    /// size, on the queries.
    pub entropy_gain: Vec<(usize, f64)>,
}

/// Distribution-overlap and diversity diagnostics for a set of shadow
/// models. Member logits are taken on the pool alignment sets, or on each
/// independent model's own training data.
pub fn diagnose(data: &Dataset, layout: &Layout, target: &ShadowModel, shadows: Shadows<'_>) -> CliResult<Diagnostics> {
    let target_members = data.subset_by_ids(&target.train_ids)?;
    let reference = logit_gaussian(&[target.net.predict_proba(&target_members.features)?], &target_members)?;
    let mut values = Vec::new();
    match shadows {
        Shadows::Models(models) => {
            for m in models {
                let own = data.subset_by_ids(&m.train_ids)?;
                let probs = m.net.predict_proba(&own.features)?;
                values.extend(own.labels.iter().enumerate().map(|(r, &y)| shapool::attack::scaled_logit(probs.row(r), y)));
            }
        }
        Shadows::Pools(pools) => {
            for pool in pools {
                let dq = data.subset_by_ids(pool.dq_ids.as_deref().unwrap_or_default())?;
                for p in pool.aligned_set.iter().flatten() {
                    let probs = pool.pathway_forward(p, &dq.features)?.probs;
                    values.extend(dq.labels.iter().enumerate().map(|(r, &y)| shapool::attack::scaled_logit(probs.row(r), y)));
                }
            }
        }
    }
    let member_overlap = if values.len() >= 2 {
        Some(bhattacharyya(&GaussianModel::fit(&values)?, &reference))
    } else {
        None
    };
    let queries = data.subset_by_ids(&layout.queries)?;
    let outputs = shadows.outputs(&queries.features)?;
    let entropy_gain = if outputs.len() >= DIVERSITY_BASE {
        let sizes: Vec<usize> = (DIVERSITY_BASE..=outputs.len()).collect();
        entropy_diversity(&outputs, &sizes)?
    } else {
        Vec::new()
    };
    Ok(Diagnostics {
        member_overlap,
        entropy_gain,
    })
}

/// Alignment-set members' logit Gaussian for `pathways` of `pool`.
pub fn pathway_logit_gaussian(pool: &ShadowPool, pathways: &[Pathway], members: &Dataset) -> CliResult<GaussianModel> {
    let outputs = pathways
        .iter()
        .map(|p| Ok(pool.pathway_forward(p, &members.features)?.probs))
        .collect::<CliResult<Vec<_>>>()?;
    logit_gaussian(&outputs, members)
}
