//! Property inference on the property-separable tabular fixture: two
//! shadow pools trained at candidate ratios decide which ratio a target
//! model was trained at.

use serde::{Deserialize, Serialize};
use shapool::attack::{pia_infer, train_property_pool, PiaTrainConfig};
use shapool::data::{gen_property_tabular, PropertyFixture};
use shapool::nn::SgdConfig;
use shapool::pool::{PoolArchitecture, ShadowPool};
use shapool::rng::RandomSource;
use shapool::shadow::{train_independent, ModelTrainConfig, RunCost};

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyExperiment {
    pub t0: f64,
    pub t1: f64,
    pub dim: usize,
    pub fixture: PropertyFixture,
    /// Rows of adversary data the pools sample from.
    pub shadow_rows: usize,
    pub target_rows: usize,
    /// Rows the target is queried on.
    pub attack_rows: usize,
    pub stem: Vec<usize>,
    pub expert: Vec<usize>,
    pub layers: usize,
    pub experts: usize,
    pub pool: PiaTrainConfig,
    pub target: ModelTrainConfig,
    /// Pathways sampled per pool when fitting the confidence model.
    pub sample_size: usize,
    pub trials: usize,
}

impl Default for PropertyExperiment {
    fn default() -> Self {
        // A small step size keeps both pools and targets close to the
        // data's posterior, which is where the ratio shows up.
        let gentle = SgdConfig {
            lr: 0.02,
            ..SgdConfig::default()
        };
        Self {
            t0: 0.3,
            t1: 0.5,
            dim: 8,
            fixture: PropertyFixture::default(),
            shadow_rows: 4000,
            target_rows: 1000,
            attack_rows: 500,
            stem: vec![32],
            expert: vec![32],
            layers: 3,
            experts: 3,
            pool: PiaTrainConfig {
                iterations: 400,
                sgd: gentle,
                ..PiaTrainConfig::default()
            },
            target: ModelTrainConfig {
                sgd: gentle,
                ..ModelTrainConfig::default()
            },
            sample_size: 16,
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyTrial {
    pub truth: f64,
    pub inferred: f64,
}

impl PropertyExperiment {
    fn arch(&self) -> PoolArchitecture {
        PoolArchitecture {
            input_dim: self.dim,
            stem: self.stem.clone(),
            expert: self.expert.clone(),
            layers: self.layers,
            experts: self.experts,
            head: vec![],
            classes: 2,
        }
    }

    /// Trains one pool per candidate ratio on adversary data drawn at an
    /// even split.
    pub fn train_pools(&self, seed: u64, cost: &mut RunCost) -> CliResult<[ShadowPool; 2]> {
        let src = RandomSource::new(seed);
        let shadow_data = gen_property_tabular(src.child("adversary", 0).seed(), self.shadow_rows, self.dim, 0.5, self.fixture)?;
        let mut train = |i: u64, ratio: f64| -> CliResult<ShadowPool> {
            let s = src.child("property-pool", i);
            let mut pool = ShadowPool::new(self.arch(), &mut s.stream("init"))?;
            train_property_pool(&mut pool, &shadow_data, ratio, &self.pool, &mut s.stream("train"), cost)?;
            Ok(pool)
        };
        Ok([train(0, self.t0)?, train(1, self.t1)?])
    }

    /// Alternates the true ratio between `t0` and `t1` over the trials; each
    /// target sees fresh data.
    pub fn run(&self, seed: u64) -> CliResult<Vec<PropertyTrial>> {
        let src = RandomSource::new(seed);
        let mut cost = RunCost::default();
        let [f0, f1] = self.train_pools(seed, &mut cost)?;
        let arch = self.arch();
        (0..self.trials)
            .map(|i| {
                let trial = src.child("trial", i as u64);
                let truth = if i % 2 == 0 { self.t0 } else { self.t1 };
                let data = gen_property_tabular(trial.child("target-data", 0).seed(), self.target_rows, self.dim, truth, self.fixture)?;
                let target = train_independent(&data, &arch, &self.target, trial.child("target", 0).seed(), &mut RunCost::default())?;
                let probe = gen_property_tabular(trial.child("attack-data", 0).seed(), self.attack_rows, self.dim, 0.5, self.fixture)?;
                let decision = pia_infer(
                    self.t0,
                    self.t1,
                    &probe.features,
                    &target.net,
                    &f0,
                    &f1,
                    self.sample_size,
                    &mut trial.stream("infer"),
                )?;
                Ok(PropertyTrial {
                    truth,
                    inferred: decision.inferred,
                })
            })
            .collect()
    }
}

pub fn accuracy(trials: &[PropertyTrial]) -> f64 {
    trials.iter().filter(|t| t.truth == t.inferred).count() as f64 / trials.len().max(1) as f64
}
