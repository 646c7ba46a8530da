use serde::{Deserialize, Serialize};

use crate::data::split::pathway_count;
use crate::error::{Error, Result};

/// One activated expert index per expert layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pathway(pub Vec<usize>);

impl Pathway {
    /// Pathway with id `index` in the base-`M` lexicographic enumeration.
    pub fn from_index(index: usize, experts: usize, layers: usize) -> Result<Self> {
        let total = pathway_count(experts, layers)?;
        if index >= total {
            return Err(Error::Input(format!("pathway id {index} outside {total}")));
        }
        let mut digits = vec![0; layers];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = rest % experts;
            rest /= experts;
        }
        Ok(Pathway(digits))
    }

    pub fn index(&self, experts: usize) -> usize {
        self.0.iter().fold(0, |acc, &e| acc * experts + e)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, experts: usize, layers: usize) -> Result<()> {
        if self.0.len() != layers {
            return Err(Error::Input(format!(
                "pathway {:?} has {} layers, pool has {layers}",
                self.0,
                self.0.len()
            )));
        }
        if let Some(e) = self.0.iter().find(|&&e| e >= experts) {
            return Err(Error::Input(format!(
                "expert index {e} outside {experts} experts in pathway {:?}",
                self.0
            )));
        }
        Ok(())
    }

    /// Number of layers at which the two pathways use the same expert.
    pub fn shared_experts(&self, other: &Pathway) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a == b).count()
    }
}

/// All `M^L` pathways in lexicographic order; position = pathway id.
pub fn enumerate_pathways(experts: usize, layers: usize) -> Result<Vec<Pathway>> {
    let total = pathway_count(experts, layers)?;
    (0..total)
        .map(|w| Pathway::from_index(w, experts, layers))
        .collect()
}
