//! Pipeline stages over an output directory.
//!
//! ```text
//! <out>/config.toml                  echo of the effective config
//! <out>/data/       dataset.csv layout.json
//! <out>/target/     model/ cost.json timing.json
//! <out>/shadows/    shadow_<i>/ cost.json timing.json
//! <out>/augmented/  model_<k>/
//! <out>/pools/      pool_<j>/ cost.json timing.json
//! <out>/aligned/    pool_<j>/ cost.json timing.json
//! <out>/attack/<method>-<mode>-<source>/
//!                   results.json roc.csv scores.csv table.csv timing.json
//! <out>/diagnose/<source>/diagnostics.json
//! <out>/summary.json summary.txt
//! ```
//!
//! Every stage directory carries a `stamp.json`; a stage whose stamp
//! matches its inputs is skipped. `timing.json` files hold wall-clock
//! seconds and are the only outputs that differ between identical runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};
use serde_json::json;
use shapool::data::persist::write_atomic;
use shapool::data::{load_dataset_csv, save_dataset_csv, Dataset};
use shapool::pool::ShadowPool;
use shapool::shadow::{RunCost, ShadowModel, Stopwatch};

use crate::config::{ExperimentConfig, ShadowSource};
use crate::error::{CliError, CliResult};
use crate::experiment::{self as exp, Layout, Shadows};
use crate::report::{summarize, AttackReport, Summary};
use crate::stamp::{self, Stamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Serialize, serde::Deserialize)]
struct Counts {
    forward: u64,
    backward: u64,
    updates: u64,
}

/// Writes evaluation counts and wall-clock to separate files.
fn save_costs(dir: &Path, runs: &[(String, RunCost)]) -> CliResult<()> {
    let counts: BTreeMap<&str, Counts> = runs
        .iter()
        .map(|(id, c)| {
            (
                id.as_str(),
                Counts {
                    forward: c.forward,
                    backward: c.backward,
                    updates: c.updates,
                },
            )
        })
        .collect();
    let timing: BTreeMap<&str, f64> = runs.iter().map(|(id, c)| (id.as_str(), c.wallclock_s)).collect();
    write_json(&dir.join("cost.json"), &counts)?;
    write_json(&dir.join("timing.json"), &timing)
}

fn load_costs(dir: &Path) -> CliResult<RunCost> {
    let counts: BTreeMap<String, Counts> = read_json(&dir.join("cost.json"))?;
    let timing: BTreeMap<String, f64> = read_json(&dir.join("timing.json")).unwrap_or_default();
    let mut total = RunCost::default();
    for c in counts.values() {
        total.forward += c.forward;
        total.backward += c.backward;
        total.updates += c.updates;
    }
    total.wallclock_s = timing.values().sum();
    Ok(total)
}

fn count_dirs(dir: &Path, prefix: &str) -> usize {
    (0..).take_while(|i| dir.join(format!("{prefix}{i}")).is_dir()).count()
}

impl Workspace {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let root = cfg.output_dir.clone();
        Self { cfg, root }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn attack_dir(&self, source: ShadowSource) -> PathBuf {
        let a = &self.cfg.attack;
        let method = serde_json::to_value(a.method).expect("enum serializes");
        let mode = serde_json::to_value(a.mode).expect("enum serializes");
        self.dir("attack").join(format!(
            "{}-{}-{}",
            method.as_str().unwrap_or_default(),
            mode.as_str().unwrap_or_default(),
            source.name()
        ))
    }

    /// Skips `run` when `dir` already holds `stamp`; otherwise runs it and
    /// stamps the directory.
    fn gated(&self, dir: &Path, stamp: &Stamp, run: impl FnOnce() -> CliResult<()>) -> CliResult<Outcome> {
        if stamp::read(dir).as_ref() == Some(stamp) {
            return Ok(Outcome::UpToDate);
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        run()?;
        stamp::write(dir, stamp)?;
        Ok(Outcome::Ran)
    }

    fn data_stamp(&self) -> Stamp {
        let c = &self.cfg;
        let inputs = json!({
            "seed": c.seed,
            "dataset": c.dataset,
            "queries": c.attack.queries,
            "mode": c.attack.mode,
            "shadows": c.baselines.shadows,
            "subset_size": c.baselines.subset_size,
            "pools": { "count": c.pool.count, "size_ratio": c.pool.size_ratio, "dq_fraction": c.pool.dq_fraction },
        });
        stamp::digest("gen-data", &inputs, &[])
    }

    fn model_inputs(&self) -> serde_json::Value {
        json!({ "architecture": self.cfg.architecture, "training": self.cfg.training })
    }

    pub fn gen_data(&self) -> CliResult<Outcome> {
        let dir = self.dir("data");
        let out = self.gated(&dir, &self.data_stamp(), || {
            let data = exp::generate_data(&self.cfg)?;
            let layout = exp::plan_layout(&self.cfg, &data)?;
            save_dataset_csv(&data, &dir.join("dataset.csv"))?;
            write_json(&dir.join("layout.json"), &layout)
        })?;
        write_atomic(&self.root.join("config.toml"), self.cfg.to_toml().as_bytes())?;
        Ok(out)
    }

    fn load_data(&self, stage: &'static str) -> CliResult<(Dataset, Layout, Stamp)> {
        let dir = self.dir("data");
        let stamp = stamp::require(&dir, stage, "gen-data")?;
        let data = load_dataset_csv(&dir.join("dataset.csv"), None)?;
        let layout = read_json(&dir.join("layout.json"))?;
        Ok((data, layout, stamp))
    }

    fn target_stamp(&self, data: &Stamp) -> Stamp {
        stamp::digest("train-target", &self.model_inputs(), &[data])
    }

    pub fn train_target(&self) -> CliResult<Outcome> {
        let (data, layout, data_stamp) = self.load_data("train-target")?;
        let dir = self.dir("target");
        self.gated(&dir, &self.target_stamp(&data_stamp), || {
            let arch = exp::architecture(&self.cfg, &data)?;
            let mut cost = RunCost::default();
            let target = exp::train_target(&self.cfg, &data, &layout, &arch, &mut cost)?;
            target.save(&dir.join("model"))?;
            save_costs(&dir, &[("target".into(), cost)])
        })
    }

    fn load_target(&self, stage: &'static str) -> CliResult<(ShadowModel, Stamp)> {
        let dir = self.dir("target");
        let stamp = stamp::require(&dir, stage, "train-target")?;
        Ok((ShadowModel::load(&dir.join("model"))?, stamp))
    }

    pub fn train_shadows(&self) -> CliResult<Outcome> {
        let (data, layout, data_stamp) = self.load_data("train-shadows")?;
        let dir = self.dir("shadows");
        let stamp = stamp::digest("train-shadows", &self.model_inputs(), &[&data_stamp]);
        self.gated(&dir, &stamp, || {
            let arch = exp::architecture(&self.cfg, &data)?;
            let trained = exp::train_shadows(&self.cfg, &data, &layout, &arch)?;
            let mut costs = Vec::with_capacity(trained.len());
            for (i, (model, cost)) in trained.iter().enumerate() {
                model.save(&dir.join(format!("shadow_{i}")))?;
                costs.push((format!("shadow_{i}"), *cost));
            }
            save_costs(&dir, &costs)
        })
    }

    fn load_models(&self, name: &str, prefix: &str, stage: &'static str, needed: &'static str) -> CliResult<(Vec<ShadowModel>, Stamp)> {
        let dir = self.dir(name);
        let stamp = stamp::require(&dir, stage, needed)?;
        let models = (0..count_dirs(&dir, prefix))
            .map(|i| ShadowModel::load(&dir.join(format!("{prefix}{i}"))))
            .collect::<shapool::Result<Vec<_>>>()?;
        Ok((models, stamp))
    }

    pub fn augment(&self) -> CliResult<Outcome> {
        let (data, layout, _) = self.load_data("augment")?;
        let (shadows, shadow_stamp) = self.load_models("shadows", "shadow_", "augment", "train-shadows")?;
        let dir = self.dir("augmented");
        let stamp = stamp::digest("augment", &json!({ "masks": self.cfg.baselines.masks }), &[&shadow_stamp]);
        self.gated(&dir, &stamp, || {
            for (k, m) in exp::augment_shadows(&self.cfg, &data, &layout, &shadows)?.iter().enumerate() {
                m.save(&dir.join(format!("model_{k}")))?;
            }
            Ok(())
        })
    }

    fn pool_stamp(&self, data: &Stamp) -> Stamp {
        let c = &self.cfg;
        // every pool field except the alignment rate feeds training, some
        // of them through the budget-matched epoch count
        let mut pool = serde_json::to_value(&c.pool).expect("config serializes");
        pool.as_object_mut().expect("pool section is a table").remove("ft_lr");
        let inputs = json!({
            "model": self.model_inputs(),
            "pool": pool,
            "baselines": { "shadows": c.baselines.shadows, "subset_size": c.baselines.subset_size },
        });
        stamp::digest("train-pool", &inputs, &[data])
    }

    pub fn train_pool(&self) -> CliResult<Outcome> {
        let (data, layout, data_stamp) = self.load_data("train-pool")?;
        let dir = self.dir("pools");
        self.gated(&dir, &self.pool_stamp(&data_stamp), || {
            let arch = exp::architecture(&self.cfg, &data)?;
            let epochs = exp::pool_epochs(&self.cfg, &layout, &arch)?;
            let echo = serde_json::to_value(&self.cfg).expect("config serializes");
            let mut costs = Vec::new();
            for j in 0..layout.pools.len() {
                let mut cost = RunCost::default();
                let watch = Stopwatch::start();
                let pool = exp::train_pool_index(&self.cfg, &data, &layout, j, &arch, epochs, &mut cost)?;
                watch.stop(&mut cost);
                pool.save(&dir.join(format!("pool_{j}")), echo.clone())?;
                costs.push((format!("pool_{j}"), cost));
            }
            save_costs(&dir, &costs)
        })
    }

    fn load_pools(&self, name: &str, stage: &'static str, needed: &'static str) -> CliResult<(Vec<ShadowPool>, Stamp)> {
        let dir = self.dir(name);
        let stamp = stamp::require(&dir, stage, needed)?;
        let pools = (0..count_dirs(&dir, "pool_"))
            .map(|j| Ok(ShadowPool::load(&dir.join(format!("pool_{j}")))?.0))
            .collect::<CliResult<Vec<_>>>()?;
        Ok((pools, stamp))
    }

    pub fn align(&self) -> CliResult<Outcome> {
        let (data, layout, _) = self.load_data("align")?;
        let (pools, pool_stamp) = self.load_pools("pools", "align", "train-pool")?;
        let dir = self.dir("aligned");
        let stamp = stamp::digest("align", &json!({ "pool": self.cfg.pool, "training": self.cfg.training }), &[&pool_stamp]);
        self.gated(&dir, &stamp, || {
            let echo = serde_json::to_value(&self.cfg).expect("config serializes");
            let mut costs = Vec::new();
            for (j, mut pool) in pools.into_iter().enumerate() {
                let mut cost = RunCost::default();
                let watch = Stopwatch::start();
                exp::align_pool_index(&self.cfg, &data, &layout, j, &mut pool, &mut cost)?;
                watch.stop(&mut cost);
                pool.save(&dir.join(format!("pool_{j}")), echo.clone())?;
                costs.push((format!("align_{j}"), cost));
            }
            save_costs(&dir, &costs)
        })
    }

    /// Shadow models of `source` with their stamp and the evaluations spent
    /// building them.
    fn load_source(&self, source: ShadowSource, stage: &'static str) -> CliResult<(Loaded, Vec<Stamp>, RunCost)> {
        match source {
            ShadowSource::Pool => {
                let (pools, stamp) = self.load_pools("aligned", stage, "align")?;
                let mut cost = load_costs(&self.dir("pools"))?;
                cost.merge(&load_costs(&self.dir("aligned"))?);
                Ok((Loaded::Pools(pools), vec![stamp], cost))
            }
            ShadowSource::Shadows => {
                let (models, stamp) = self.load_models("shadows", "shadow_", stage, "train-shadows")?;
                Ok((Loaded::Models(models), vec![stamp], load_costs(&self.dir("shadows"))?))
            }
            ShadowSource::Augmented => {
                let (mut models, base) = self.load_models("shadows", "shadow_", stage, "train-shadows")?;
                let (masked, stamp) = self.load_models("augmented", "model_", stage, "augment")?;
                models.extend(masked);
                Ok((Loaded::Models(models), vec![base, stamp], load_costs(&self.dir("shadows"))?))
            }
        }
    }

    pub fn attack(&self) -> CliResult<Outcome> {
        let source = self.cfg.attack.source;
        let (data, layout, data_stamp) = self.load_data("attack")?;
        let (target, target_stamp) = self.load_target("attack")?;
        let (loaded, source_stamps, cost) = self.load_source(source, "attack")?;
        let shadows = loaded.view();
        if shadows.count() == 0 {
            return Err(CliError::Dependency {
                stage: "attack",
                needed: match source {
                    ShadowSource::Pool => "align",
                    _ => "train-shadows",
                },
            });
        }
        let dir = self.attack_dir(source);
        let mut upstream = vec![&data_stamp, &target_stamp];
        upstream.extend(source_stamps.iter());
        let inputs = json!({ "attack": self.cfg.attack, "report": self.cfg.report });
        let stamp = stamp::digest("attack", &inputs, &upstream);
        self.gated(&dir, &stamp, || {
            let watch = Stopwatch::start();
            let outcome = exp::run_attack(&self.cfg, &data, &layout, &target, shadows)?;
            let queries = data.subset_by_ids(&layout.queries)?;
            shadows.table(&queries)?.save_csv(&dir.join("table.csv"))?;
            let arch = exp::architecture(&self.cfg, &data)?;
            let budget = exp::shadow_budget(&self.cfg, &layout, &arch);
            let a = &self.cfg.attack;
            let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
            let report = AttackReport {
                method: name(serde_json::to_value(a.method).expect("enum serializes")),
                mode: name(serde_json::to_value(a.mode).expect("enum serializes")),
                source: source.name().into(),
                queries: outcome.query_ids.len(),
                shadow_models: shadows.count(),
                auc: outcome.auc,
                tf1: outcome.tf1,
                tf01: outcome.tf01,
                cost_evaluations: cost.evaluations(),
                cost_wallclock_s: self.cfg.report.include_wallclock.then_some(cost.wallclock_s),
                cost_ratio_vs_shadows: (budget > 0).then(|| cost.evaluations() as f64 / budget as f64),
            };
            write_json(&dir.join("results.json"), &report)?;
            write_atomic(&dir.join("roc.csv"), outcome.roc.to_csv().as_bytes())?;
            write_atomic(&dir.join("scores.csv"), outcome.scores_csv().as_bytes())?;
            let mut timing = RunCost::default();
            watch.stop(&mut timing);
            write_json(&dir.join("timing.json"), &json!({ "attack_s": timing.wallclock_s }))
        })
    }

    pub fn diagnose(&self) -> CliResult<Outcome> {
        let source = self.cfg.attack.source;
        let (data, layout, data_stamp) = self.load_data("diagnose")?;
        let (target, target_stamp) = self.load_target("diagnose")?;
        let (loaded, source_stamps, _) = self.load_source(source, "diagnose")?;
        let dir = self.dir("diagnose").join(source.name());
        let mut upstream = vec![&data_stamp, &target_stamp];
        upstream.extend(source_stamps.iter());
        let stamp = stamp::digest("diagnose", &json!({}), &upstream);
        self.gated(&dir, &stamp, || {
            let d = exp::diagnose(&data, &layout, &target, loaded.view())?;
            write_json(&dir.join("diagnostics.json"), &d)
        })
    }

    /// Results of every attack run under this output directory.
    pub fn attack_reports(&self) -> CliResult<Vec<AttackReport>> {
        let dir = self.dir("attack");
        let mut names: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).collect(),
            Err(_) => Vec::new(),
        };
        names.sort();
        names
            .iter()
            .filter(|p| p.join("results.json").is_file())
            .map(|p| read_json(&p.join("results.json")))
            .collect()
    }
}

/// Pools or models loaded from disk.
enum Loaded {
    Pools(Vec<ShadowPool>),
    Models(Vec<ShadowModel>),
}

impl Loaded {
    fn view(&self) -> Shadows<'_> {
        match self {
            Loaded::Pools(p) => Shadows::Pools(p),
            Loaded::Models(m) => Shadows::Models(m),
        }
    }
}

/// Summarizes the attacks of every run directory into `out`.
pub fn write_summary(runs: &[Workspace], out: &Path) -> CliResult<Summary> {
    let mut reports = Vec::new();
    for ws in runs {
        reports.extend(ws.attack_reports()?);
    }
    if reports.is_empty() {
        return Err(CliError::Dependency {
            stage: "report",
            needed: "attack",
        });
    }
    let summary = summarize(&reports);
    write_json(&out.join("summary.json"), &summary)?;
    write_atomic(&out.join("summary.txt"), summary.to_table().as_bytes())?;
    Ok(summary)
}

/// Every stage in order, attacking with each available shadow source.
pub fn run_all(ws: &Workspace) -> CliResult<Summary> {
    ws.gen_data()?;
    ws.train_target()?;
    let mut sources = vec![];
    if ws.cfg.baselines.shadows > 0 {
        ws.train_shadows()?;
        sources.push(ShadowSource::Shadows);
        if !ws.cfg.baselines.masks.is_empty() {
            ws.augment()?;
            sources.push(ShadowSource::Augmented);
        }
    }
    ws.train_pool()?;
    ws.align()?;
    sources.push(ShadowSource::Pool);
    for source in sources {
        let mut cfg = ws.cfg.clone();
        cfg.attack.source = source;
        let view = Workspace::new(cfg);
        view.attack()?;
        view.diagnose()?;
    }
    write_summary(std::slice::from_ref(ws), &ws.root)
}
