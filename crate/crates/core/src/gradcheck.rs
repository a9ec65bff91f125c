//! End-to-end finite-difference check of the model gradient, reported per
//! parameter group.

use crate::autodiff::{grad_check_errors_with, Stencil};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ode::BackwardMode;
use crate::tensor::Matrix;
use crate::training::{loss_and_grads, loss_at, Dataset};

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
/// Step for the whole-model check. Weight gradients are scaled by the tiny
/// normalized interval length, so a two-point difference at 1e-6 drowns in
/// roundoff; a wider four-point stencil does not.
pub const MODEL_GRADCHECK_EPS: f64 = 1e-2;
pub const MODEL_GRADCHECK_STENCIL: Stencil = Stencil::FourPoint;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.max_rel_error))
    }

    pub fn passed(&self, threshold: f64) -> bool {
        self.max_rel_error() < threshold
    }
}

/// Mean training loss over `targets` and its gradient, flattened in
/// canonical tensor order.
pub fn objective_and_grad(
    data: &Dataset,
    params: &ModelParams,
    enc: &EncoderConfig,
    batch_size: usize,
    targets: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; params.num_scalars()];
    for &t in targets {
        let queries = data.queries_at(t);
        let (loss, grads) = loss_and_grads(data, params, enc, batch_size, t, &queries)?;
        total += loss;
        for (acc, g) in grad.iter_mut().zip(grads.iter().flat_map(Matrix::as_slice)) {
            *acc += g;
        }
    }
    let n = targets.len() as f64;
    Ok((total / n, grad.into_iter().map(|g| g / n).collect()))
}

pub fn objective(
    data: &Dataset,
    params: &ModelParams,
    enc: &EncoderConfig,
    batch_size: usize,
    targets: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for &t in targets {
        total += loss_at(data, params, enc, batch_size, t, &data.queries_at(t))?;
    }
    Ok(total / targets.len() as f64)
}

/// Compares the analytic gradient of the mean training loss with central
/// differences. `corrupt` perturbs one analytic gradient entry, as a
/// negative control.
pub fn gradcheck_model(
    data: &Dataset,
    params: &ModelParams,
    enc: &EncoderConfig,
    batch_size: usize,
    eps: f64,
    stencil: Stencil,
    corrupt: bool,
) -> Result<GradcheckReport> {
    let targets = data.training_targets(enc.history);
    if targets.is_empty() {
        return Err(Error::Contract("gradient check needs at least one training timestamp".into()));
    }
    let x0 = params.flatten();
    let mut probe = params.clone();
    // grad_check_errors_with asks for the analytic gradient on its first call only.
    let mut first = true;
    let errors = grad_check_errors_with(
        |x| {
            probe.unflatten(x)?;
            if first {
                first = false;
                let (v, mut g) = objective_and_grad(data, &probe, enc, batch_size, &targets)?;
                if corrupt {
                    g[0] += 1.0 + g[0].abs();
                }
                Ok((v, g))
            } else {
                Ok((objective(data, &probe, enc, batch_size, &targets)?, Vec::new()))
            }
        },
        &x0,
        eps,
        stencil,
    )?;
    let mut groups = Vec::new();
    let mut offset = 0;
    for (name, m) in params.tensor_names().into_iter().zip(params.tensors()) {
        let n = m.len();
        let max = errors[offset..offset + n].iter().fold(0.0, |a: f64, &b| a.max(b));
        groups.push(GroupError {
            name,
            max_rel_error: max,
        });
        offset += n;
    }
    Ok(GradcheckReport { groups })
}

/// Per-group maximum relative difference between interpolated-adjoint and
/// unrolled gradients of the mean training loss.
pub fn adjoint_vs_unrolled(
    data: &Dataset,
    params: &ModelParams,
    enc: &EncoderConfig,
    batch_size: usize,
) -> Result<GradcheckReport> {
    let targets = data.training_targets(enc.history);
    let mut unrolled = *enc;
    unrolled.solver.backward_mode = BackwardMode::Unrolled;
    let mut adjoint = *enc;
    adjoint.solver.backward_mode = BackwardMode::InterpolatedAdjoint;
    let (_, gu) = objective_and_grad(data, params, &unrolled, batch_size, &targets)?;
    let (_, ga) = objective_and_grad(data, params, &adjoint, batch_size, &targets)?;
    let mut groups = Vec::new();
    let mut offset = 0;
    for (name, m) in params.tensor_names().into_iter().zip(params.tensors()) {
        let n = m.len();
        let max = (offset..offset + n)
            .map(|i| (ga[i] - gu[i]).abs() / (ga[i].abs() + gu[i].abs()).max(1e-12))
            .fold(0.0, f64::max);
        groups.push(GroupError {
            name,
            max_rel_error: max,
        });
        offset += n;
    }
    Ok(GradcheckReport { groups })
}
