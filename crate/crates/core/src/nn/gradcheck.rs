//! Finite-difference validation of analytic gradients.

use serde::Serialize;

use super::layer::{LayerGrad, LinearLayer};
use crate::error::{Error, Result};

/// Denominator floor for the relative error; keeps near-zero gradients from
/// dominating the report with round-off noise.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn grad_check<F>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = (0usize, 0.0f64);
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let plus = loss(&probe)?;
        probe[i] = params[i] - step;
        let minus = loss(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss while probing parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > worst.1 {
            worst = (i, err);
        }
    }
    Ok(GradCheckReport {
        checked: params.len(),
        max_rel_error: worst.1,
        worst_index: worst.0,
        tolerance,
        passed: worst.1 < tolerance,
    })
}

/// Concatenates weights then bias of every layer.
pub fn flatten_params(layers: &[&LinearLayer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.values());
        out.extend_from_slice(&l.bias);
    }
    out
}

pub fn flatten_grads(grads: &[&LayerGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weight.values());
        out.extend_from_slice(&g.bias);
    }
    out
}

/// Inverse of [`flatten_params`]; returns the number of values consumed.
pub fn unflatten_params(layers: &mut [&mut LinearLayer], values: &[f64]) -> Result<usize> {
    let mut at = 0;
    for l in layers.iter_mut() {
        let nw = l.weight.values().len();
        let nb = l.bias.len();
        if at + nw + nb > values.len() {
            return Err(Error::Shape("parameter vector too short".into()));
        }
        l.weight.values_mut().copy_from_slice(&values[at..at + nw]);
        at += nw;
        l.bias.copy_from_slice(&values[at..at + nb]);
        at += nb;
    }
    Ok(at)
}
