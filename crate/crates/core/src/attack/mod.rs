//! Membership and property inference attacks.
//!
//! Attacks consume [`ScoreTable`]s, so pool pathways and independently
//! trained shadow models are interchangeable sources.

pub mod dataset;
pub mod gaussian;
pub mod lira;
pub mod pia;
pub mod rmia;
pub mod table;

use serde::{Deserialize, Serialize};

pub use dataset::{build_attack_dataset, query_records, ModelSource, QueryRecord};
pub use gaussian::{GaussianModel, STD_FLOOR};
pub use lira::{lira_offline, lira_offline_scores, lira_online, lira_online_fitted, lira_online_scores, OnlineFit};
pub use pia::{pia_infer, sample_with_ratio, train_property_pool, PiaDecision, PiaTrainConfig};
pub use rmia::{rmia_score, rmia_scores, RmiaConfig};
pub use table::{scaled_logit, ScoreTable};

/// Whether shadow models trained on the query (IN) are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Offline,
    Online,
}
