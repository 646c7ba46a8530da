//! Conventional shadow models: independently trained networks with the
//! shape of one pool pathway, masked copies of a trained base, and cost
//! accounting for comparing construction strategies.

pub mod augment;
pub mod cost;
pub mod model;

pub use augment::{augment_checked, augment_model, scope_size, MaskScope, MaskSpec, MAX_ACCURACY_DROP};
pub use cost::{cost_compare, format_change, CostComparison, CostLedger, RunCost, Stopwatch};
pub use model::{query_models, train_independent, train_many, ModelTrainConfig, ShadowModel};
