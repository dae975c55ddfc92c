//! A generic error-state EKF.
//!
//! The engine never looks inside a state. Everything it needs (dynamics,
//! observations, the error definition, the retraction that applies a
//! correction, and the Jacobians of all of these in error coordinates) comes
//! from an [`ErrorStateModel`]. The proposed invariant-error filters and the
//! standard filters differ only in the model they plug in.
//!
//! Each step propagates the estimate with the noise-free dynamics and the
//! covariance with `F P F^T + G Q G^T`, initializes subjects seen for the
//! first time, then runs one batched update over every known subject. The
//! update uses a linear solve for the gain and the Joseph form for the
//! covariance.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Step used by the central differences that augment the covariance.
const AUGMENT_STEP: f64 = 1e-6;

/// Estimated state with its error covariance, expressed in the model's error
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief<S> {
    pub estimate: S,
    pub covariance: DMatrix<f64>,
}

impl<S> Belief<S> {
    pub fn new(estimate: S, covariance: DMatrix<f64>) -> Self {
        Self {
            estimate,
            covariance,
        }
    }
}

/// One measurement of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<Sub> {
    pub subject: Sub,
    pub value: DVector<f64>,
    pub noise: DMatrix<f64>,
}

/// Every measurement taken at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBatch<Sub> {
    pub timestamp: f64,
    pub entries: Vec<Observation<Sub>>,
}

impl<Sub> MeasurementBatch<Sub> {
    pub fn empty(timestamp: f64) -> Self {
        Self {
            timestamp,
            entries: Vec::new(),
        }
    }
}

/// `F` and `G` of the linearized error propagation `e' = F e + G w`.
#[derive(Clone, Debug)]
pub struct PropagationJacobians {
    pub transition: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// The full Jacobian set of a model at one estimate: propagation, stacked
/// observation, and the map from measurement noise into the innovation
/// (the identity for additive noise).
#[derive(Clone, Debug)]
pub struct ModelJacobians {
    pub transition: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub observation: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
}

/// Everything a filter needs to know about a system.
///
/// Contract: `retract(x, 0) == x`, `error(x, x) == 0`, and
/// `error(retract(x, e), x) == e` to first order. The Jacobians are those of
/// the first-order error dynamics in the coordinates fixed by `retract`.
pub trait ErrorStateModel {
    type State: Clone + Debug;
    type Input: Clone + Debug;
    type Subject: Clone + Debug;

    fn error_dim(&self, x: &Self::State) -> usize;

    fn dynamics(
        &self,
        x: &Self::State,
        u: &Self::Input,
        w: &DVector<f64>,
    ) -> Result<Self::State>;

    fn process_noise(&self, x: &Self::State, u: &Self::Input) -> Result<DMatrix<f64>>;

    /// Jacobians evaluated at the estimate *before* propagation.
    fn propagation_jacobians(
        &self,
        x_hat: &Self::State,
        u: &Self::Input,
    ) -> Result<PropagationJacobians>;

    /// Flattened error between a state and an estimate.
    fn error(&self, x: &Self::State, x_hat: &Self::State) -> Result<DVector<f64>>;

    fn retract(&self, x_hat: &Self::State, e: &DVector<f64>) -> Result<Self::State>;

    fn has_subject(&self, x: &Self::State, subject: &Self::Subject) -> bool;

    /// Noise-free measurement. [`Error::NotVisible`] means "skip this entry".
    fn observe(&self, x: &Self::State, subject: &Self::Subject) -> Result<DVector<f64>>;

    fn observation_jacobian(
        &self,
        x_hat: &Self::State,
        subject: &Self::Subject,
    ) -> Result<DMatrix<f64>>;

    /// `y - h(x)`, with angular components wrapped where relevant.
    fn residual(
        &self,
        _subject: &Self::Subject,
        measured: &DVector<f64>,
        predicted: &DVector<f64>,
    ) -> DVector<f64> {
        measured - predicted
    }

    /// Adds a subject seen for the first time, placed from its measurement.
    fn initialize_subject(
        &self,
        _x: &Self::State,
        subject: &Self::Subject,
        _value: &DVector<f64>,
    ) -> Result<Self::State> {
        Err(Error::UnknownSubject(format!("{subject:?}")))
    }

    /// Basis of the error-space directions spanned by global frame changes at `x`.
    fn unobservable_directions(&self, x: &Self::State) -> DMatrix<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOptions {
    /// Chi-square gate probability per measurement; `None` disables gating.
    pub gate_probability: Option<f64>,
    /// Innovation covariances above this condition number are rejected.
    pub max_condition: f64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self {
            gate_probability: None,
            max_condition: 1e12,
        }
    }
}

/// What an update did with its batch.
#[derive(Clone, Debug, Default)]
pub struct Innovation {
    pub residual: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub correction: DVector<f64>,
    pub used: usize,
    pub gated: usize,
    pub not_visible: usize,
}

/// Result of an update: the posterior plus the stacked Jacobian actually used.
#[derive(Clone, Debug)]
pub struct Updated<S> {
    pub belief: Belief<S>,
    pub observation: DMatrix<f64>,
    pub innovation: Innovation,
}

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

fn check_covariance(p: &DMatrix<f64>, what: &str) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} covariance")))
    }
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter().enumerate().all(|(k, &v)| {
            let (i, j) = (k % m.nrows(), k / m.nrows());
            if i == j {
                v == 1.0
            } else {
                v == 0.0
            }
        })
}

/// Covariance propagation `F P F^T + G Q G^T` and the noise-free state
/// prediction.
pub fn propagate<M: ErrorStateModel>(
    model: &M,
    belief: &Belief<M::State>,
    input: &M::Input,
) -> Result<(Belief<M::State>, PropagationJacobians)> {
    let jac = model.propagation_jacobians(&belief.estimate, input)?;
    let q = model.process_noise(&belief.estimate, input)?;
    let estimate = model.dynamics(&belief.estimate, input, &DVector::zeros(q.nrows()))?;

    let p = &belief.covariance;
    let mut covariance = if is_identity(&jac.transition) {
        p.clone()
    } else {
        &jac.transition * p * jac.transition.transpose()
    };
    covariance += &jac.noise * q * jac.noise.transpose();
    symmetrize(&mut covariance);
    check_covariance(&covariance, "propagated")?;
    Ok((Belief::new(estimate, covariance), jac))
}

/// Batched update over every entry of `batch`.
///
/// Entries whose subject is unknown to the state are an error; initialize
/// them first with [`augment`]. Entries reported as not visible are skipped.
pub fn update<M: ErrorStateModel>(
    model: &M,
    belief: &Belief<M::State>,
    batch: &MeasurementBatch<M::Subject>,
    options: &UpdateOptions,
) -> Result<Updated<M::State>> {
    let d = belief.covariance.nrows();
    let p = &belief.covariance;
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>, &DMatrix<f64>)> = Vec::new();
    let mut innovation = Innovation::default();
    let gate = options.gate_probability;

    for entry in &batch.entries {
        if !model.has_subject(&belief.estimate, &entry.subject) {
            return Err(Error::UnknownSubject(format!("{:?}", entry.subject)));
        }
        let predicted = match model.observe(&belief.estimate, &entry.subject) {
            Ok(v) => v,
            Err(Error::NotVisible(_)) => {
                innovation.not_visible += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let h = model.observation_jacobian(&belief.estimate, &entry.subject)?;
        let r = model.residual(&entry.subject, &entry.value, &predicted);
        if let Some(prob) = gate {
            let s = &h * p * h.transpose() + &entry.noise;
            let m2 = mahalanobis_squared(&s, &r)?;
            let threshold = ChiSquared::new(r.len() as f64)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .inverse_cdf(prob);
            if m2 > threshold {
                innovation.gated += 1;
                continue;
            }
        }
        rows.push((h, r, &entry.noise));
    }

    let m: usize = rows.iter().map(|(_, r, _)| r.len()).sum();
    if m == 0 {
        return Ok(Updated {
            belief: belief.clone(),
            observation: DMatrix::zeros(0, d),
            innovation,
        });
    }

    let mut h = DMatrix::zeros(m, d);
    let mut r = DVector::zeros(m);
    let mut n = DMatrix::zeros(m, m);
    let mut offset = 0;
    for (hi, ri, ni) in &rows {
        let k = ri.len();
        h.view_mut((offset, 0), (k, d)).copy_from(hi);
        r.rows_mut(offset, k).copy_from(ri);
        n.view_mut((offset, offset), (k, k)).copy_from(*ni);
        offset += k;
    }

    let ph_t = p * h.transpose();
    let mut s = &h * &ph_t + &n;
    symmetrize(&mut s);
    check_covariance(&s, "innovation")?;
    let condition = condition_number(&s);
    if !(condition <= options.max_condition) {
        return Err(Error::DegenerateUpdate { condition });
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateUpdate { condition })?;
    // K = P H^T S^-1, solved as S K^T = H P
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let correction = &gain * &r;
    let estimate = model.retract(&belief.estimate, &correction)?;

    let i_kh = DMatrix::identity(d, d) - &gain * &h;
    let mut covariance = &i_kh * p * i_kh.transpose() + &gain * &n * gain.transpose();
    symmetrize(&mut covariance);
    check_covariance(&covariance, "updated")?;

    innovation.used = rows.len();
    innovation.residual = r;
    innovation.covariance = s;
    innovation.gain = gain;
    innovation.correction = correction;
    Ok(Updated {
        belief: Belief::new(estimate, covariance),
        observation: h,
        innovation,
    })
}

fn condition_number(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn mahalanobis_squared(s: &DMatrix<f64>, r: &DVector<f64>) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("gating covariance".to_string()))?;
    Ok(r.dot(&chol.solve(r)))
}

/// Adds a new subject to the state and grows the covariance.
///
/// The new error coordinates are differentiated numerically, against the
/// model's own error definition, with respect to the existing error and to
/// the measurement noise. Returns the augmented belief and the map `T`
/// taking old error coordinates to new ones.
pub fn augment<M: ErrorStateModel>(
    model: &M,
    belief: &Belief<M::State>,
    observation: &Observation<M::Subject>,
) -> Result<(Belief<M::State>, DMatrix<f64>)> {
    if model.has_subject(&belief.estimate, &observation.subject) {
        return Err(Error::DuplicateSubject(format!("{:?}", observation.subject)));
    }
    let x_hat = &belief.estimate;
    let z = &observation.value;
    let subject = &observation.subject;
    let augmented = model.initialize_subject(x_hat, subject, z)?;
    let d = model.error_dim(x_hat);
    let d_new = model.error_dim(&augmented);
    let extra = d_new - d;
    let h = AUGMENT_STEP;

    let new_rows = |x: &M::State| -> Result<DVector<f64>> {
        let e = model.error(x, &augmented)?;
        Ok(e.rows(d, extra).into_owned())
    };

    let mut transform = DMatrix::zeros(d_new, d);
    transform
        .view_mut((0, 0), (d, d))
        .copy_from(&DMatrix::identity(d, d));
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = h;
        let plus = new_rows(&model.initialize_subject(&model.retract(x_hat, &e)?, subject, z)?)?;
        e[i] = -h;
        let minus = new_rows(&model.initialize_subject(&model.retract(x_hat, &e)?, subject, z)?)?;
        transform
            .view_mut((d, i), (extra, 1))
            .copy_from(&((plus - minus) / (2.0 * h)));
    }

    let m = z.len();
    let mut noise_map = DMatrix::zeros(d_new, m);
    for j in 0..m {
        let mut zp = z.clone();
        zp[j] += h;
        let plus = new_rows(&model.initialize_subject(x_hat, subject, &zp)?)?;
        zp[j] = z[j] - h;
        let minus = new_rows(&model.initialize_subject(x_hat, subject, &zp)?)?;
        noise_map
            .view_mut((d, j), (extra, 1))
            .copy_from(&((plus - minus) / (2.0 * h)));
    }

    let mut covariance = &transform * &belief.covariance * transform.transpose()
        + &noise_map * &observation.noise * noise_map.transpose();
    symmetrize(&mut covariance);
    check_covariance(&covariance, "augmented")?;
    Ok((Belief::new(augmented, covariance), transform))
}

/// One entry of a filter log: an input to propagate with, then the
/// measurements taken after the motion.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterStep<I, Sub> {
    pub input: I,
    pub batch: MeasurementBatch<Sub>,
}

/// Linearization data of one step, used by the observability audits.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Propagation Jacobian `F`, at the previous posterior.
    pub propagation: DMatrix<f64>,
    /// Map from the previous posterior's error coordinates to the prior's:
    /// `F` followed by any augmentation.
    pub transition: DMatrix<f64>,
    /// Stacked observation Jacobian of the update, at the prior estimate.
    pub observation: DMatrix<f64>,
    /// Unobservable directions at the previous posterior.
    pub directions_before: DMatrix<f64>,
    /// Unobservable directions at the propagated estimate, before augmentation.
    pub directions_propagated: DMatrix<f64>,
    /// Unobservable directions at the prior estimate.
    pub directions: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct StepOutput<S> {
    pub time: f64,
    /// After propagation and augmentation, before the update.
    pub prior: Belief<S>,
    pub posterior: Belief<S>,
    pub record: StepRecord,
    pub innovation: Innovation,
}

#[derive(Clone, Debug)]
pub struct FilterRun<S> {
    pub initial: Belief<S>,
    pub steps: Vec<StepOutput<S>>,
}

impl<S> FilterRun<S> {
    pub fn final_belief(&self) -> &Belief<S> {
        self.steps
            .last()
            .map(|s| &s.posterior)
            .unwrap_or(&self.initial)
    }
}

/// Runs one step: propagate, augment new subjects, update known ones.
pub fn step<M: ErrorStateModel>(
    model: &M,
    belief: &Belief<M::State>,
    log_step: &FilterStep<M::Input, M::Subject>,
    options: &UpdateOptions,
) -> Result<StepOutput<M::State>> {
    let (mut prior, jac) = propagate(model, belief, &log_step.input)?;
    let directions_propagated = model.unobservable_directions(&prior.estimate);
    let mut transition = jac.transition.clone();
    let mut known = Vec::with_capacity(log_step.batch.entries.len());
    for entry in &log_step.batch.entries {
        if model.has_subject(&prior.estimate, &entry.subject) {
            known.push(entry.clone());
        } else {
            let (augmented, t) = augment(model, &prior, entry)?;
            transition = t * transition;
            prior = augmented;
        }
    }
    let batch = MeasurementBatch {
        timestamp: log_step.batch.timestamp,
        entries: known,
    };
    let updated = update(model, &prior, &batch, options)?;
    let directions = model.unobservable_directions(&prior.estimate);
    Ok(StepOutput {
        time: log_step.batch.timestamp,
        prior,
        posterior: updated.belief,
        record: StepRecord {
            propagation: jac.transition,
            transition,
            observation: updated.observation,
            directions_before: model.unobservable_directions(&belief.estimate),
            directions_propagated,
            directions,
        },
        innovation: updated.innovation,
    })
}

/// Runs the filter over a time-ordered log, handing each step to `visit`
/// instead of keeping it. Returns the final belief.
pub fn run_filter_with<M, F>(
    model: &M,
    initial: &Belief<M::State>,
    log: &[FilterStep<M::Input, M::Subject>],
    options: &UpdateOptions,
    mut visit: F,
) -> Result<Belief<M::State>>
where
    M: ErrorStateModel,
    F: FnMut(usize, &StepOutput<M::State>) -> Result<()>,
{
    check_time_order(log)?;
    let mut belief = initial.clone();
    for (n, log_step) in log.iter().enumerate() {
        let out = step(model, &belief, log_step, options).map_err(|e| e.at_step(n))?;
        visit(n, &out).map_err(|e| e.at_step(n))?;
        belief = out.posterior;
    }
    Ok(belief)
}

/// Runs the filter and keeps every step.
pub fn run_filter<M: ErrorStateModel>(
    model: &M,
    initial: &Belief<M::State>,
    log: &[FilterStep<M::Input, M::Subject>],
    options: &UpdateOptions,
) -> Result<FilterRun<M::State>> {
    check_time_order(log)?;
    let mut steps: Vec<StepOutput<M::State>> = Vec::with_capacity(log.len());
    for (n, log_step) in log.iter().enumerate() {
        let belief = steps.last().map(|s| &s.posterior).unwrap_or(initial);
        let out = step(model, belief, log_step, options).map_err(|e| e.at_step(n))?;
        steps.push(out);
    }
    Ok(FilterRun {
        initial: initial.clone(),
        steps,
    })
}

fn check_time_order<I, Sub>(log: &[FilterStep<I, Sub>]) -> Result<()> {
    for (i, w) in log.windows(2).enumerate() {
        if !(w[1].batch.timestamp > w[0].batch.timestamp) {
            return Err(Error::NotTimeOrdered { index: i + 1 });
        }
    }
    Ok(())
}
