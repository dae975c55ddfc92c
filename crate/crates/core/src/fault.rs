//! Deliberately broken models for exercising the audits.

use nalgebra::{DMatrix, DVector};

use crate::filter::{ErrorStateModel, PropagationJacobians};
use crate::Result;

/// Wraps a model and shifts the heading column of every observation
/// Jacobian by `offset`. A correct audit must flag the result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptedHeading<M> {
    pub inner: M,
    pub offset: f64,
}

impl<M> CorruptedHeading<M> {
    pub fn new(inner: M, offset: f64) -> Self {
        Self { inner, offset }
    }
}

impl<M: ErrorStateModel> ErrorStateModel for CorruptedHeading<M> {
    type State = M::State;
    type Input = M::Input;
    type Subject = M::Subject;

    fn error_dim(&self, x: &Self::State) -> usize {
        self.inner.error_dim(x)
    }

    fn dynamics(&self, x: &Self::State, u: &Self::Input, w: &DVector<f64>) -> Result<Self::State> {
        self.inner.dynamics(x, u, w)
    }

    fn process_noise(&self, x: &Self::State, u: &Self::Input) -> Result<DMatrix<f64>> {
        self.inner.process_noise(x, u)
    }

    fn propagation_jacobians(&self, x_hat: &Self::State, u: &Self::Input) -> Result<PropagationJacobians> {
        self.inner.propagation_jacobians(x_hat, u)
    }

    fn error(&self, x: &Self::State, x_hat: &Self::State) -> Result<DVector<f64>> {
        self.inner.error(x, x_hat)
    }

    fn retract(&self, x_hat: &Self::State, e: &DVector<f64>) -> Result<Self::State> {
        self.inner.retract(x_hat, e)
    }

    fn has_subject(&self, x: &Self::State, subject: &Self::Subject) -> bool {
        self.inner.has_subject(x, subject)
    }

    fn observe(&self, x: &Self::State, subject: &Self::Subject) -> Result<DVector<f64>> {
        self.inner.observe(x, subject)
    }

    fn observation_jacobian(&self, x_hat: &Self::State, subject: &Self::Subject) -> Result<DMatrix<f64>> {
        let mut h = self.inner.observation_jacobian(x_hat, subject)?;
        h.column_mut(0).add_scalar_mut(self.offset);
        Ok(h)
    }

    fn residual(&self, subject: &Self::Subject, measured: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        self.inner.residual(subject, measured, predicted)
    }

    fn initialize_subject(&self, x: &Self::State, subject: &Self::Subject, value: &DVector<f64>) -> Result<Self::State> {
        self.inner.initialize_subject(x, subject, value)
    }

    fn unobservable_directions(&self, x: &Self::State) -> DMatrix<f64> {
        self.inner.unobservable_directions(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{audit_model, make_world, simulate_run, SimConfig};
    use crate::slam2d::Slam2Model;
    use crate::Variant;

    #[test]
    fn corrupted_heading_fails_the_kernel_audit() {
        let config = SimConfig { n_loops: 1, ..Default::default() };
        let world = make_world(&config).unwrap();
        let run = simulate_run(&world, &config, 0);
        let model = Slam2Model::new(Variant::Proposed, config.odometry_noise());
        let (k, _) = audit_model(&model, &run.initial, &run.log).unwrap();
        assert!(k.passed());
        let (k, _) = audit_model(&CorruptedHeading::new(model, 0.05), &run.initial, &run.log).unwrap();
        assert!(!k.passed());
    }
}
