//! Experiment configuration: one TOML document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapool::attack::{AttackMode, OnlineFit};
use shapool::data::{pathway_count, OverlapPolicy};
use shapool::nn::SgdConfig;
use shapool::shadow::{MaskScope, MaskSpec};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub architecture: ArchSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub pool: PoolSpec,
    #[serde(default)]
    pub baselines: BaselineSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub report: ReportSpec,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Gaussian class clusters.
    Blobs,
    /// Rows from a CSV file with an `id` column.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Whether shadow training sets may share non-query rows.
    pub overlap: OverlapPolicy,
    pub target_size: usize,
    /// Population rows for relative attacks.
    pub population: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Blobs,
            path: None,
            classes: 10,
            per_class: 800,
            dim: 16,
            spread: 1.0,
            overlap: OverlapPolicy::WithReplacement,
            target_size: 2000,
            population: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSpec {
    /// Inferred from the data when absent.
    pub input_dim: Option<usize>,
    pub classes: Option<usize>,
    pub stem: Vec<usize>,
    pub expert: Vec<usize>,
    pub head: Vec<usize>,
    pub layers: usize,
    pub experts: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_dim: None,
            classes: None,
            stem: vec![64],
            expert: vec![128],
            head: vec![],
            layers: 3,
            experts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            epochs: 30,
            batch_size: 64,
            lr: sgd.lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
        }
    }
}

impl TrainingSpec {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSpec {
    /// Picks regularization and fine-tuning defaults.
    pub preset: AttackMode,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Shared models served per pool.
    pub n: usize,
    pub dq_fraction: f64,
    pub ft_epochs: Option<usize>,
    pub ft_lr: f64,
    pub count: usize,
    /// Pool training-set size relative to one shadow model's.
    pub size_ratio: f64,
    /// Defaults to the largest epoch count within the budget of the
    /// independent shadow models.
    pub epochs: Option<usize>,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            preset: AttackMode::Online,
            alpha: None,
            beta: None,
            n: 8,
            dq_fraction: 0.1,
            ft_epochs: None,
            ft_lr: 0.01,
            count: 1,
            size_ratio: 2.0,
            epochs: None,
        }
    }
}

impl PoolSpec {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.preset {
            AttackMode::Offline => 0.0,
            AttackMode::Online => 0.05,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(match self.preset {
            AttackMode::Offline => 0.0,
            AttackMode::Online => 0.01,
        })
    }

    pub fn ft_epochs(&self) -> usize {
        self.ft_epochs.unwrap_or(match self.preset {
            AttackMode::Offline => 3,
            AttackMode::Online => 10,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    pub scope: MaskScope,
    pub p: f64,
    /// Masked copies per base model.
    #[serde(default = "one")]
    pub copies: usize,
}

fn one() -> usize {
    1
}

impl MaskEntry {
    pub fn spec(&self, seed: u64) -> MaskSpec {
        MaskSpec {
            scope: self.scope,
            p: self.p,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    pub shadows: usize,
    /// Training-set size of each shadow model.
    pub subset_size: usize,
    pub masks: Vec<MaskEntry>,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            shadows: 4,
            subset_size: 2000,
            masks: vec![MaskEntry {
                scope: MaskScope::Fc,
                p: 0.1,
                copies: 1,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Lira,
    Rmia,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowSource {
    /// Aligned pathways of the shadow pools.
    Pool,
    /// Independently trained shadow models.
    Shadows,
    /// Masked copies of the shadow models.
    Augmented,
}

impl ShadowSource {
    pub fn name(&self) -> &'static str {
        match self {
            ShadowSource::Pool => "pool",
            ShadowSource::Shadows => "shadows",
            ShadowSource::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub mode: AttackMode,
    pub source: ShadowSource,
    /// Gaussian fitting for online LiRA.
    pub fit: OnlineFit,
    pub gamma: f64,
    pub a: f64,
    /// Audited examples; half are target members.
    pub queries: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            method: AttackMethod::Lira,
            mode: AttackMode::Online,
            source: ShadowSource::Pool,
            fit: OnlineFit::SharedSpread,
            gamma: 1.0,
            a: 0.3,
            queries: 480,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSpec {
    /// Write measured wall-clock into the results report. Off by default
    /// because it makes reports differ between identical runs.
    pub include_wallclock: bool,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config {
            field: e.span().map_or_else(String::new, |s| format!("bytes {}..{}", s.start, s.end)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(p) = cfg.dataset.path.as_mut() {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Csv => match &d.path {
                None => return Err(invalid("dataset.path", "required for csv datasets")),
                Some(p) if !p.exists() => {
                    return Err(invalid("dataset.path", format!("{} does not exist", p.display())))
                }
                _ => {}
            },
            DatasetKind::Blobs => {
                if d.classes < 2 {
                    return Err(invalid("dataset.classes", "need at least two classes"));
                }
                if d.dim == 0 || d.per_class == 0 {
                    return Err(invalid("dataset.dim", "dim and per_class must be positive"));
                }
                if !(d.spread.is_finite() && d.spread >= 0.0) {
                    return Err(invalid("dataset.spread", "must be finite and non-negative"));
                }
            }
        }
        let q = self.attack.queries;
        if q < 2 || !q.is_multiple_of(2) {
            return Err(invalid("attack.queries", "must be an even number of at least 2"));
        }
        if d.target_size < q / 2 {
            return Err(invalid("dataset.target_size", "must hold the member half of the queries"));
        }
        let a = &self.architecture;
        if a.layers == 0 {
            return Err(invalid("architecture.layers", "must be at least 1"));
        }
        if a.experts < 2 {
            return Err(invalid("architecture.experts", "must be at least 2"));
        }
        if a.expert.is_empty() || a.expert.iter().chain(&a.stem).chain(&a.head).any(|w| *w == 0) {
            return Err(invalid("architecture.expert", "widths must be positive and expert non-empty"));
        }
        let k = pathway_count(a.experts, a.layers).map_err(|e| invalid("architecture.layers", e.to_string()))?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be positive"));
        }
        t.sgd().validate().map_err(|e| invalid("training", e.to_string()))?;
        let p = &self.pool;
        if p.n > k {
            return Err(invalid("pool.n", format!("{} exceeds the {k} available pathways", p.n)));
        }
        for (field, v) in [("pool.alpha", p.alpha()), ("pool.beta", p.beta())] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        if !(p.dq_fraction > 0.0 && p.dq_fraction <= 1.0) {
            return Err(invalid("pool.dq_fraction", "must lie in (0, 1]"));
        }
        if !(p.size_ratio > 0.0 && p.size_ratio.is_finite()) {
            return Err(invalid("pool.size_ratio", "must be positive"));
        }
        if p.count == 0 {
            return Err(invalid("pool.count", "must be at least 1"));
        }
        let b = &self.baselines;
        if b.subset_size == 0 {
            return Err(invalid("baselines.subset_size", "must be positive"));
        }
        for (i, m) in b.masks.iter().enumerate() {
            if !(0.0..=1.0).contains(&m.p) {
                return Err(invalid(&format!("baselines.masks[{i}].p"), "must lie in [0, 1]"));
            }
        }
        let at = &self.attack;
        if !(at.gamma > 0.0 && at.gamma.is_finite()) {
            return Err(invalid("attack.gamma", "must be positive"));
        }
        if !(0.0..=1.0).contains(&at.a) {
            return Err(invalid("attack.a", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Copy with a different seed and output directory.
    pub fn with_seed(&self, seed: u64, output_dir: PathBuf) -> Self {
        Self {
            seed,
            output_dir,
            ..self.clone()
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            output_dir: default_output(),
            dataset: DatasetSpec::default(),
            architecture: ArchSpec::default(),
            training: TrainingSpec::default(),
            pool: PoolSpec::default(),
            baselines: BaselineSpec::default(),
            attack: AttackSpec::default(),
            report: ReportSpec::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("version = 1\nseed = 3\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.pool.alpha(), 0.05);
        assert_eq!(cfg.pool.ft_epochs(), 10);
    }

    #[test]
    fn offline_preset() {
        let cfg = ExperimentConfig::from_toml("version = 1\n[pool]\npreset = \"offline\"\n").unwrap();
        assert_eq!((cfg.pool.alpha(), cfg.pool.beta(), cfg.pool.ft_epochs()), (0.0, 0.0, 3));
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::from_toml("version = 1\n[pool]\nn = 100\n").unwrap_err();
        assert!(matches!(err, CliError::Config { ref field, .. } if field == "pool.n"), "{err}");
        let err = ExperimentConfig::from_toml("version = 2\n").unwrap_err();
        assert!(matches!(err, CliError::Config { ref field, .. } if field == "version"));
        let err = ExperimentConfig::from_toml("version = 1\n[pool]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ExperimentConfig::from_toml("version = 1\n[attack]\na = 2.0\n").unwrap_err();
        assert!(matches!(err, CliError::Config { ref field, .. } if field == "attack.a"));
    }
}
