//! Finite-difference Jacobians built only from a model's dynamics,
//! observation, error and retraction.
//!
//! These never call the analytic Jacobian providers, so they serve as an
//! independent check on them.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::filter::ErrorStateModel;

/// Default central-difference step.
pub const STEP: f64 = 1e-6;

fn central<F>(dim_in: usize, step: f64, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim_in);
    for i in 0..dim_in {
        let mut v = DVector::zeros(dim_in);
        v[i] = step;
        let plus = f(&v)?;
        v[i] = -step;
        let minus = f(&v)?;
        cols.push((plus - minus) / (2.0 * step));
    }
    let rows = cols.first().map(|c| c.len()).unwrap_or(0);
    Ok(DMatrix::from_fn(rows, dim_in, |i, j| cols[j][i]))
}

/// `e -> error(f(retract(x_hat, e), u, 0), f(x_hat, u, 0))` at `e = 0`.
pub fn transition<M: ErrorStateModel>(
    model: &M,
    x_hat: &M::State,
    u: &M::Input,
    noise_dim: usize,
) -> Result<DMatrix<f64>> {
    let zero = DVector::zeros(noise_dim);
    let predicted = model.dynamics(x_hat, u, &zero)?;
    central(model.error_dim(x_hat), STEP, |e| {
        let moved = model.dynamics(&model.retract(x_hat, e)?, u, &zero)?;
        model.error(&moved, &predicted)
    })
}

/// `w -> error(f(x_hat, u, w), f(x_hat, u, 0))` at `w = 0`.
pub fn process_noise<M: ErrorStateModel>(
    model: &M,
    x_hat: &M::State,
    u: &M::Input,
    noise_dim: usize,
) -> Result<DMatrix<f64>> {
    let predicted = model.dynamics(x_hat, u, &DVector::zeros(noise_dim))?;
    central(noise_dim, STEP, |w| {
        model.error(&model.dynamics(x_hat, u, w)?, &predicted)
    })
}

/// `e -> h(retract(x_hat, e))` at `e = 0`, one subject.
pub fn observation<M: ErrorStateModel>(
    model: &M,
    x_hat: &M::State,
    subject: &M::Subject,
) -> Result<DMatrix<f64>> {
    let predicted = model.observe(x_hat, subject)?;
    central(model.error_dim(x_hat), STEP, |e| {
        let y = model.observe(&model.retract(x_hat, e)?, subject)?;
        Ok(model.residual(subject, &y, &predicted))
    })
}

/// `e -> error(retract(x_hat, e), x_hat)` at `e = 0`; the identity for a
/// retraction consistent with its error.
pub fn retraction<M: ErrorStateModel>(model: &M, x_hat: &M::State) -> Result<DMatrix<f64>> {
    central(model.error_dim(x_hat), STEP, |e| {
        model.error(&model.retract(x_hat, e)?, x_hat)
    })
}

/// Max-abs difference scaled by the larger of `max|expected|` and 1.
pub fn relative_error(actual: &DMatrix<f64>, expected: &DMatrix<f64>) -> f64 {
    if actual.shape() != expected.shape() {
        return f64::INFINITY;
    }
    let scale = expected.amax().max(1.0);
    (actual - expected).amax() / scale
}
