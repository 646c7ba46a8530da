//! Attack-quality metrics and shadow-model diagnostics.

pub mod diversity;
pub mod factors;
pub mod roc;

pub use diversity::expert_activation_similarity;
pub use factors::{bhattacharyya, ensemble_entropy, entropy_diversity, DIVERSITY_BASE};
pub use roc::{roc_and_auc, tpr_at_fpr, RocCurve, RocPoint};
