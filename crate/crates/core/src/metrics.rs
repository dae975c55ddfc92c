//! Consistency metrics and observability audits.
//!
//! NEES and RMSE score one run against ground truth. The audits check two
//! structural properties of a filter's linearization along the directions a
//! global change of frame would move the state:
//!
//! - kernel: the observation Jacobian annihilates those directions and the
//!   propagation Jacobian maps them into themselves;
//! - information: `u^T P^-1 u` along them never grows, through propagation,
//!   landmark initialization or updates.
//!
//! Both hold by construction for the invariant-error filters and fail for the
//! standard EKF once it linearizes at more than one estimate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::filter::{Belief, StepOutput, StepRecord};

/// Covariances with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalues below this fraction of the largest are dropped when a
/// covariance is singular by construction.
pub const PSEUDO_INVERSE_CUTOFF: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nees {
    /// `e^T P^-1 e / dim`; 1 in expectation for a consistent filter.
    pub normalized: f64,
    pub chi2: f64,
    pub dim: usize,
}

pub fn nees(e: &DVector<f64>, p: &DMatrix<f64>) -> Result<Nees> {
    let d = e.len();
    if p.shape() != (d, d) {
        return Err(Error::InvalidDimension {
            expected: d,
            actual: p.nrows(),
        });
    }
    let eig = SymmetricEigen::new(p.clone()).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::SingularCovariance(format!(
            "pose covariance eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("pose covariance".to_string()))?;
    let chi2 = e.dot(&chol.solve(e));
    Ok(Nees {
        normalized: chi2 / d as f64,
        chi2,
        dim: d,
    })
}

/// NEES of the `dim` error coordinates starting at `offset`, against the
/// matching marginal covariance.
pub fn pose_nees(e: &DVector<f64>, p: &DMatrix<f64>, offset: usize, dim: usize) -> Result<Nees> {
    if offset + dim > e.len() || p.nrows() != e.len() {
        return Err(Error::InvalidDimension {
            expected: offset + dim,
            actual: e.len().min(p.nrows()),
        });
    }
    nees(
        &e.rows(offset, dim).into_owned(),
        &p.view((offset, offset), (dim, dim)).into_owned(),
    )
}

/// Per-step root mean square over runs of position error norms
/// (`errors[run][step]`).
pub fn rmse_series(errors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = errors.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    if let Some(bad) = errors.iter().find(|r| r.len() != n) {
        return Err(Error::InvalidDimension {
            expected: n,
            actual: bad.len(),
        });
    }
    let runs = errors.len() as f64;
    Ok((0..n)
        .map(|k| (errors.iter().map(|r| r[k] * r[k]).sum::<f64>() / runs).sqrt())
        .collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Stacked observability matrix of `records[n0..=n0 + n]`:
/// `[H_n0; H_n0+1 T_n0+1; ...; H_n0+n T_n0+n ... T_n0+1]`, in the error
/// coordinates of step `n0`.
pub fn build_observability(records: &[StepRecord], n0: usize, n: usize) -> Result<DMatrix<f64>> {
    let window = records
        .get(n0..=n0 + n)
        .ok_or_else(|| Error::InvalidInput(format!(
            "window [{n0}, {}] outside a record of {} steps",
            n0 + n,
            records.len()
        )))?;
    let d0 = window[0].observation.ncols();
    let mut product = DMatrix::identity(d0, d0);
    let mut blocks = Vec::with_capacity(window.len());
    for (i, r) in window.iter().enumerate() {
        if i > 0 {
            product = &r.transition * product;
        }
        blocks.push(&r.observation * &product);
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, d0);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, 0), (b.nrows(), d0)).copy_from(&b);
        offset += b.nrows();
    }
    Ok(out)
}

fn unit_columns(u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

/// Largest `|M u| / |u|` over the columns `u` of `dirs`.
fn max_column_ratio(m: &DMatrix<f64>, dirs: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let unit = unit_columns(dirs);
    (m * unit)
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Largest distance of a column of `v` from `span(basis)`, relative to the
/// column's norm.
fn distance_from_span(v: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    let q = basis.clone().qr().q();
    let unit = unit_columns(v);
    let residual = &unit - &q * (q.transpose() * &unit);
    residual.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KernelReport {
    pub steps: usize,
    /// Largest `|H_n u| / |u|` over steps and directions.
    pub max_observation_residual: f64,
    /// Largest distance of `F_n u` from the directions after propagation.
    pub max_transition_residual: f64,
    /// Steps where either residual exceeded the tolerance.
    pub violations: usize,
    /// `|O u| / |u|` for the directions at the first step, carried through
    /// every transition of the window.
    pub composed_residual: f64,
}

impl KernelReport {
    pub fn max_residual(&self) -> f64 {
        self.max_observation_residual.max(self.max_transition_residual)
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Streaming kernel audit: feed one [`StepRecord`] per step.
#[derive(Clone, Debug)]
pub struct KernelAudit {
    tolerance: f64,
    report: KernelReport,
    carried: Option<DMatrix<f64>>,
    composed_sq: DVector<f64>,
}

impl KernelAudit {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            report: KernelReport::default(),
            carried: None,
            composed_sq: DVector::zeros(0),
        }
    }

    pub fn push(&mut self, record: &StepRecord) {
        let r = &mut self.report;
        let obs = max_column_ratio(&record.observation, &record.directions);
        let trans = distance_from_span(
            &(&record.propagation * &record.directions_before),
            &record.directions_propagated,
        );
        r.max_observation_residual = r.max_observation_residual.max(obs);
        r.max_transition_residual = r.max_transition_residual.max(trans);
        if obs > self.tolerance || trans > self.tolerance {
            r.violations += 1;
        }
        r.steps += 1;

        let carried = match self.carried.take() {
            None => unit_columns(&record.directions),
            Some(u) => &record.transition * u,
        };
        if self.composed_sq.is_empty() {
            self.composed_sq = DVector::zeros(carried.ncols());
        }
        if record.observation.nrows() > 0 {
            let hu = &record.observation * &carried;
            for (acc, c) in self.composed_sq.iter_mut().zip(hu.column_iter()) {
                *acc += c.norm_squared();
            }
        }
        r.composed_residual = self.composed_sq.iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
        self.carried = Some(carried);
    }

    pub fn report(&self) -> &KernelReport {
        &self.report
    }

    pub fn finish(self) -> KernelReport {
        self.report
    }
}

pub fn audit_kernel(records: &[StepRecord], tolerance: f64) -> KernelReport {
    let mut audit = KernelAudit::new(tolerance);
    for r in records {
        audit.push(r);
    }
    audit.finish()
}

/// `U^T P^-1 U`, through a Cholesky factor when `P` is well conditioned and
/// through a truncated eigendecomposition when it is singular by
/// construction (cloned coordinates).
pub fn information(u: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p.nrows() != u.nrows() {
        return Err(Error::InvalidDimension {
            expected: p.nrows(),
            actual: u.nrows(),
        });
    }
    if let Some(chol) = Cholesky::<f64, Dyn>::new(p.clone()) {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        if lo > 0.0 && (hi / lo) * (hi / lo) < MAX_CONDITION {
            return Ok(u.transpose() * chol.solve(u));
        }
    }
    let eig = SymmetricEigen::new(p.clone());
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::SingularCovariance("zero covariance".to_string()));
    }
    let vt_u = eig.eigenvectors.transpose() * u;
    let mut scaled = vt_u.clone();
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        let w = if *lambda > PSEUDO_INVERSE_CUTOFF * max {
            1.0 / lambda
        } else {
            0.0
        };
        scaled.row_mut(i).scale_mut(w);
    }
    Ok(vt_u.transpose() * scaled)
}

/// Largest generalized eigenvalue of `(new, old)`: the biggest factor by
/// which information grew along any combination of the directions.
pub fn information_growth(old: &DMatrix<f64>, new: &DMatrix<f64>) -> Result<f64> {
    let chol = old
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("information along the directions".to_string()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularCovariance("information factor".to_string()))?;
    let mut m = &l_inv * new * l_inv.transpose();
    crate::filter::symmetrize(&mut m);
    Ok(SymmetricEigen::new(m).eigenvalues.max())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InformationReport {
    /// Propagation and update transitions checked.
    pub checks: usize,
    pub violations: usize,
    /// Largest growth factor seen (1 means unchanged).
    pub max_growth: f64,
}

impl InformationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Streaming information audit. The directions at the start are carried
/// through every transition; each propagation and each update is checked.
#[derive(Clone, Debug)]
pub struct InformationAudit {
    tolerance: f64,
    directions: DMatrix<f64>,
    info: DMatrix<f64>,
    report: InformationReport,
}

impl InformationAudit {
    pub fn new(directions: &DMatrix<f64>, covariance: &DMatrix<f64>, tolerance: f64) -> Result<Self> {
        let directions = unit_columns(directions);
        let info = information(&directions, covariance)?;
        Ok(Self {
            tolerance,
            directions,
            info,
            report: InformationReport::default(),
        })
    }

    fn check(&mut self, covariance: &DMatrix<f64>) -> Result<()> {
        let info = information(&self.directions, covariance)?;
        let growth = information_growth(&self.info, &info)?;
        self.report.checks += 1;
        self.report.max_growth = self.report.max_growth.max(growth);
        if growth > 1.0 + self.tolerance {
            self.report.violations += 1;
        }
        self.info = info;
        Ok(())
    }

    pub fn push(
        &mut self,
        record: &StepRecord,
        prior: &DMatrix<f64>,
        posterior: &DMatrix<f64>,
    ) -> Result<()> {
        self.directions = &record.transition * &self.directions;
        self.check(prior)?;
        self.check(posterior)
    }

    pub fn report(&self) -> &InformationReport {
        &self.report
    }

    pub fn finish(self) -> InformationReport {
        self.report
    }
}

pub fn audit_information<S>(
    initial: &Belief<S>,
    steps: &[StepOutput<S>],
    directions: &DMatrix<f64>,
    tolerance: f64,
) -> Result<InformationReport> {
    let mut audit = InformationAudit::new(directions, &initial.covariance, tolerance)?;
    for (n, s) in steps.iter().enumerate() {
        audit
            .push(&s.record, &s.prior.covariance, &s.posterior.covariance)
            .map_err(|e| e.at_step(n))?;
    }
    Ok(audit.finish())
}

/// Per-step sums over runs, merged in run order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesAccumulator {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl SeriesAccumulator {
    pub fn new(steps: usize) -> Self {
        Self {
            sums: vec![0.0; steps],
            counts: vec![0; steps],
        }
    }

    pub fn add(&mut self, step: usize, value: f64) {
        if step >= self.sums.len() {
            self.sums.resize(step + 1, 0.0);
            self.counts.resize(step + 1, 0);
        }
        self.sums[step] += value;
        self.counts[step] += 1;
    }

    pub fn add_series(&mut self, values: &[f64]) {
        for (k, v) in values.iter().enumerate() {
            self.add(k, *v);
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| if *c == 0 { f64::NAN } else { s / *c as f64 })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}
