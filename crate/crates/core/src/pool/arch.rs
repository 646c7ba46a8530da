use serde::{Deserialize, Serialize};

use crate::data::persist::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{softmax, Activation, LinearLayer, Matrix};
use crate::rng::Rng;

/// Shape of a shadow pool, and of every standalone model equivalent to one
/// of its pathways.
///
/// Stem and head are shared across pathways; the `layers × experts` grid in
/// between holds identical expert sub-networks. All hidden layers use ReLU;
/// the final head layer (to `classes` logits) is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolArchitecture {
    pub input_dim: usize,
    /// Hidden widths of the shared stem (may be empty).
    pub stem: Vec<usize>,
    /// Hidden widths inside one expert (at least one).
    pub expert: Vec<usize>,
    /// Number of expert layers `L`.
    pub layers: usize,
    /// Experts per layer `M`.
    pub experts: usize,
    /// Hidden widths of the shared head before the classifier layer.
    pub head: Vec<usize>,
    pub classes: usize,
}

impl PoolArchitecture {
    pub fn validate(&self) -> Result<()> {
        let widths_ok = self.stem.iter().chain(&self.expert).chain(&self.head).all(|w| *w > 0);
        if self.input_dim == 0
            || self.layers == 0
            || self.experts == 0
            || self.expert.is_empty()
            || self.classes < 2
            || !widths_ok
        {
            return Err(Error::Input(format!("invalid pool architecture {self:?}")));
        }
        Ok(())
    }

    pub fn stem_output(&self) -> usize {
        self.stem.last().copied().unwrap_or(self.input_dim)
    }

    pub fn expert_output(&self) -> usize {
        *self.expert.last().expect("validated: expert widths non-empty")
    }

    pub fn expert_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.stem_output()
        } else {
            self.expert_output()
        }
    }

    pub fn expert_depth(&self) -> usize {
        self.expert.len()
    }

    pub fn init_stem(&self, rng: &mut Rng) -> Vec<LinearLayer> {
        relu_chain(self.input_dim, &self.stem, rng)
    }

    pub fn init_expert(&self, layer: usize, rng: &mut Rng) -> Vec<LinearLayer> {
        relu_chain(self.expert_input(layer), &self.expert, rng)
    }

    pub fn init_head(&self, rng: &mut Rng) -> Vec<LinearLayer> {
        let mut layers = relu_chain(self.expert_output(), &self.head, rng);
        let last = self.head.last().copied().unwrap_or(self.expert_output());
        layers.push(LinearLayer::init(last, self.classes, Activation::Identity, rng));
        layers
    }

    /// A freshly initialised standalone network with this shape.
    pub fn init_network(&self, rng: &mut Rng) -> Result<Network> {
        self.validate()?;
        let stem = self.init_stem(rng);
        let blocks = (0..self.layers).map(|l| self.init_expert(l, rng)).collect();
        let head = self.init_head(rng);
        Ok(Network { stem, blocks, head })
    }
}

fn relu_chain(input: usize, widths: &[usize], rng: &mut Rng) -> Vec<LinearLayer> {
    let mut prev = input;
    widths
        .iter()
        .map(|&w| {
            let l = LinearLayer::init(prev, w, Activation::ReLU, rng);
            prev = w;
            l
        })
        .collect()
}

/// Standalone sequential network: stem, `L` blocks, head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub stem: Vec<LinearLayer>,
    pub blocks: Vec<Vec<LinearLayer>>,
    pub head: Vec<LinearLayer>,
}

impl Network {
    pub fn layers(&self) -> Vec<&LinearLayer> {
        self.stem
            .iter()
            .chain(self.blocks.iter().flatten())
            .chain(&self.head)
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        self.stem
            .iter_mut()
            .chain(self.blocks.iter_mut().flatten())
            .chain(self.head.iter_mut())
            .collect()
    }

    pub fn layer_count(&self) -> usize {
        self.stem.len() + self.blocks.iter().map(Vec::len).sum::<usize>() + self.head.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        crate::nn::predict_refs(&self.layers(), x)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let pred = self.logits(x)?.argmax_rows();
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64)
    }

    /// Appends this network's tensors to `ckpt` under `prefix`.
    pub fn write_tensors(&self, ckpt: &mut Checkpoint, prefix: &str) {
        write_group(ckpt, &format!("{prefix}stem"), &self.stem);
        for (l, block) in self.blocks.iter().enumerate() {
            write_group(ckpt, &format!("{prefix}block{l}"), block);
        }
        write_group(ckpt, &format!("{prefix}head"), &self.head);
    }

    /// Rebuilds a network of shape `arch` from tensors written by
    /// [`Network::write_tensors`].
    pub fn read_tensors(ckpt: &Checkpoint, prefix: &str, arch: &PoolArchitecture) -> Result<Network> {
        let stem = read_group(ckpt, &format!("{prefix}stem"), arch.stem.len(), false)?;
        let blocks = (0..arch.layers)
            .map(|l| read_group(ckpt, &format!("{prefix}block{l}"), arch.expert_depth(), false))
            .collect::<Result<_>>()?;
        let head = read_group(ckpt, &format!("{prefix}head"), arch.head.len() + 1, true)?;
        Ok(Network { stem, blocks, head })
    }
}

pub(crate) fn write_group(ckpt: &mut Checkpoint, name: &str, layers: &[LinearLayer]) {
    for (k, layer) in layers.iter().enumerate() {
        ckpt.push(format!("{name}.{k}.weight"), layer.weight.clone());
        ckpt.push(
            format!("{name}.{k}.bias"),
            Matrix::from_vec(1, layer.bias.len(), layer.bias.clone()).expect("1 x n"),
        );
    }
}

/// Reads `count` layers; all ReLU except the last when `linear_last`.
pub(crate) fn read_group(
    ckpt: &Checkpoint,
    name: &str,
    count: usize,
    linear_last: bool,
) -> Result<Vec<LinearLayer>> {
    (0..count)
        .map(|k| {
            let weight = ckpt.tensor(&format!("{name}.{k}.weight"))?.clone();
            let bias = ckpt.tensor(&format!("{name}.{k}.bias"))?.values().to_vec();
            let act = if linear_last && k + 1 == count {
                Activation::Identity
            } else {
                Activation::ReLU
            };
            LinearLayer::new(weight, bias, act)
        })
        .collect()
}
