//! Forward and backward passes through a sequential stack of layers.

use super::layer::{Activation, LayerGrad, LinearLayer};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Inputs and outputs cached by a forward pass, one entry per layer.
#[derive(Debug, Clone)]
pub struct GradientTape {
    entries: Vec<TapeEntry>,
}

#[derive(Debug, Clone)]
struct TapeEntry {
    input: Matrix,
    output: Matrix,
}

impl GradientTape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Output of the `i`-th layer recorded during the forward pass.
    pub fn output(&self, i: usize) -> Option<&Matrix> {
        self.entries.get(i).map(|e| &e.output)
    }
}

/// Parameter gradients per layer plus the gradient w.r.t. the stack input.
#[derive(Debug, Clone)]
pub struct StackGradients {
    pub layers: Vec<LayerGrad>,
    pub input: Matrix,
}

pub fn forward_stack(layers: &[LinearLayer], x: &Matrix) -> Result<(Matrix, GradientTape)> {
    let refs: Vec<&LinearLayer> = layers.iter().collect();
    forward_refs(&refs, x)
}

pub fn forward_refs(layers: &[&LinearLayer], x: &Matrix) -> Result<(Matrix, GradientTape)> {
    check_input(layers, x)?;
    let mut entries = Vec::with_capacity(layers.len());
    let mut current = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let out = layer
            .forward(&current)
            .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
        entries.push(TapeEntry {
            input: current,
            output: out.clone(),
        });
        current = out;
    }
    Ok((current, GradientTape { entries }))
}

/// Forward pass without recording a tape.
pub fn predict_refs(layers: &[&LinearLayer], x: &Matrix) -> Result<Matrix> {
    check_input(layers, x)?;
    let mut current = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        current = layer
            .forward(&current)
            .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
    }
    Ok(current)
}

fn check_input(layers: &[&LinearLayer], x: &Matrix) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut width = x.cols();
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_width() != width {
            return Err(Error::Shape(format!(
                "layer {i} expects width {} but receives {width}",
                layer.input_width()
            )));
        }
        width = layer.output_width();
    }
    Ok(())
}

pub fn backward_stack(
    layers: &[LinearLayer],
    tape: GradientTape,
    upstream: &Matrix,
) -> Result<StackGradients> {
    let refs: Vec<&LinearLayer> = layers.iter().collect();
    backward_refs(&refs, tape, upstream, &[])
}

/// Backpropagates `upstream` (gradient w.r.t. the last layer's output).
///
/// `injections` adds extra gradient w.r.t. the output of intermediate
/// layers; this is how activation penalties enter the backward pass.
pub fn backward_refs(
    layers: &[&LinearLayer],
    tape: GradientTape,
    upstream: &Matrix,
    injections: &[(usize, &Matrix)],
) -> Result<StackGradients> {
    if tape.entries.len() != layers.len() {
        return Err(Error::State(format!(
            "tape holds {} entries for {} layers",
            tape.entries.len(),
            layers.len()
        )));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = upstream.clone();
    for (i, (layer, entry)) in layers.iter().zip(tape.entries).enumerate().rev() {
        if entry.output.shape() != g.shape() || entry.input.cols() != layer.input_width() {
            return Err(Error::State(format!(
                "tape entry {i} does not match layer or upstream gradient"
            )));
        }
        for (at, extra) in injections {
            if *at == i {
                g.add_assign(extra)?;
            }
        }
        if layer.activation == Activation::ReLU {
            for (gv, ov) in g.values_mut().iter_mut().zip(entry.output.values()) {
                if *ov <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let weight = g.transpose_matmul(&entry.input)?;
        let bias = g.column_sums();
        let next = g.matmul(&layer.weight)?;
        grads.push(LayerGrad { weight, bias });
        g = next;
    }
    grads.reverse();
    Ok(StackGradients {
        layers: grads,
        input: g,
    })
}
