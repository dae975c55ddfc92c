//! Planar single-robot SLAM with odometry and range-bearing sensing.
//!
//! The state is a heading, a robot position and a map of landmark positions.
//! Two error definitions are provided. The proposed one treats the whole state
//! as an element of `SE_{1+K}(2)`:
//!
//! ```text
//! e_theta = theta - theta_hat,   e_p = p - R(e_theta) p_hat
//! ```
//!
//! for the robot and every landmark, and corrects estimates through
//! [`exp_sek2`]. The standard one is the plain difference. Under the proposed
//! error, a global rotation and translation of the state produces the same
//! error at every estimate, so the filter's linearization cannot create
//! information along those directions.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::filter::{
    augment, Belief, ErrorStateModel, ModelJacobians, Observation, PropagationJacobians,
};
use crate::lie::{exp_sek2, quarter_turn, wrap_angle, Rotation2, Tangent2};
use crate::Variant;

pub type LandmarkId = u32;

/// Dimension of the odometry noise `(w_omega, w_p)`.
pub const NOISE_DIM: usize = 3;

/// Below this body-frame distance a range-bearing measurement has no bearing.
pub const MIN_RANGE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SlamState2 {
    pub theta: f64,
    pub position: Vector2<f64>,
    pub landmarks: IndexMap<LandmarkId, Vector2<f64>>,
}

impl SlamState2 {
    pub fn new(theta: f64, position: Vector2<f64>) -> Self {
        Self {
            theta: wrap_angle(theta),
            position,
            landmarks: IndexMap::new(),
        }
    }

    pub fn with_landmarks(
        theta: f64,
        position: Vector2<f64>,
        landmarks: impl IntoIterator<Item = (LandmarkId, Vector2<f64>)>,
    ) -> Self {
        Self {
            theta: wrap_angle(theta),
            position,
            landmarks: landmarks.into_iter().collect(),
        }
    }

    pub fn rotation(&self) -> Rotation2 {
        Rotation2::new(self.theta)
    }

    pub fn error_dim(&self) -> usize {
        3 + 2 * self.landmarks.len()
    }

    /// Column of the landmark's first error coordinate.
    pub fn landmark_column(&self, id: LandmarkId) -> Result<usize> {
        self.landmarks
            .get_index_of(&id)
            .map(|k| 3 + 2 * k)
            .ok_or_else(|| Error::UnknownSubject(format!("landmark {id}")))
    }
}

/// Odometry increment over one step, in the body frame of the previous pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryInput2 {
    pub omega: f64,
    pub translation: Vector2<f64>,
}

impl OdometryInput2 {
    pub fn new(omega: f64, translation: Vector2<f64>) -> Self {
        Self { omega, translation }
    }

    pub fn zero() -> Self {
        Self::new(0.0, Vector2::zeros())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeBearing {
    pub range: f64,
    pub bearing: f64,
}

impl RangeBearing {
    pub fn new(range: f64, bearing: f64) -> Self {
        Self {
            range,
            bearing: wrap_angle(bearing),
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.range, self.bearing])
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() != 2 {
            return Err(Error::InvalidDimension {
                expected: 2,
                actual: v.len(),
            });
        }
        Ok(Self::new(v[0], v[1]))
    }

    /// Body-frame point this measurement describes.
    pub fn body_point(self) -> Vector2<f64> {
        Vector2::new(self.range * self.bearing.cos(), self.range * self.bearing.sin())
    }

    pub fn from_body_point(q: &Vector2<f64>) -> Result<Self> {
        let range = q.norm();
        if range < MIN_RANGE {
            return Err(Error::DegenerateGeometry(format!(
                "body-frame distance {range:e} is too small for a bearing"
            )));
        }
        Ok(Self::new(range, q.y.atan2(q.x)))
    }
}

/// Odometry noise covariance `diag(s_omega^2, s_p^2, s_p^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OdometryNoise {
    Constant { sigma_omega: f64, sigma_p: f64 },
    /// Standard deviations proportional to the size of each increment, with a
    /// floor that keeps the covariance positive definite at rest.
    Proportional {
        fraction: f64,
        floor_omega: f64,
        floor_p: f64,
    },
}

impl OdometryNoise {
    pub fn sigmas(&self, u: &OdometryInput2) -> (f64, f64) {
        match *self {
            OdometryNoise::Constant {
                sigma_omega,
                sigma_p,
            } => (sigma_omega, sigma_p),
            OdometryNoise::Proportional {
                fraction,
                floor_omega,
                floor_p,
            } => (
                (fraction * u.omega.abs()).max(floor_omega),
                (fraction * u.translation.norm()).max(floor_p),
            ),
        }
    }

    pub fn covariance(&self, u: &OdometryInput2) -> Matrix3<f64> {
        let (so, sp) = self.sigmas(u);
        Matrix3::from_diagonal(&Vector3::new(so * so, sp * sp, sp * sp))
    }
}

/// Global change of frame: rotate by `angle` about the origin, then translate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform2 {
    pub angle: f64,
    pub translation: Vector2<f64>,
}

impl Transform2 {
    pub fn new(angle: f64, translation: Vector2<f64>) -> Self {
        Self { angle, translation }
    }

    pub fn apply_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Rotation2::new(self.angle).rotate(p) + self.translation
    }

    pub fn apply(&self, x: &SlamState2) -> SlamState2 {
        SlamState2 {
            theta: wrap_angle(x.theta + self.angle),
            position: self.apply_point(&x.position),
            landmarks: x
                .landmarks
                .iter()
                .map(|(id, p)| (*id, self.apply_point(p)))
                .collect(),
        }
    }
}

/// `theta' = theta + omega + w_omega`, `p' = p + R(theta)(p_bar + w_p)`.
pub fn dynamics2(x: &SlamState2, u: &OdometryInput2, w: &Vector3<f64>) -> SlamState2 {
    let r = x.rotation();
    SlamState2 {
        theta: wrap_angle(x.theta + u.omega + w.x),
        position: x.position + r.rotate(&(u.translation + Vector2::new(w.y, w.z))),
        landmarks: x.landmarks.clone(),
    }
}

fn body_vector(x: &SlamState2, id: LandmarkId) -> Result<Vector2<f64>> {
    let p = x
        .landmarks
        .get(&id)
        .ok_or_else(|| Error::UnknownSubject(format!("landmark {id}")))?;
    Ok(x.rotation().matrix().transpose() * (p - x.position))
}

pub fn observe2(x: &SlamState2, id: LandmarkId) -> Result<RangeBearing> {
    RangeBearing::from_body_point(&body_vector(x, id)?)
}

/// Landmark position implied by a measurement taken from pose `x`.
pub fn landmark_from_measurement(x: &SlamState2, z: &RangeBearing) -> Vector2<f64> {
    x.position + x.rotation().rotate(&z.body_point())
}

/// Jacobian of `q -> (|q|, atan2(q_2, q_1))`.
pub fn range_bearing_jacobian(q: &Vector2<f64>) -> Result<Matrix2<f64>> {
    let n2 = q.norm_squared();
    let n = n2.sqrt();
    if n < MIN_RANGE {
        return Err(Error::DegenerateGeometry(format!(
            "body-frame distance {n:e} is too small for a bearing"
        )));
    }
    let jq = quarter_turn() * q;
    Ok(Matrix2::new(q.x / n, q.y / n, jq.x / n2, jq.y / n2))
}

fn transition_and_noise(
    variant: Variant,
    x_hat: &SlamState2,
    u: &OdometryInput2,
) -> PropagationJacobians {
    let d = x_hat.error_dim();
    let r = x_hat.rotation().matrix();
    let j = quarter_turn();
    let mut f = DMatrix::identity(d, d);
    let mut g = DMatrix::zeros(d, NOISE_DIM);
    g[(0, 0)] = 1.0;
    g.view_mut((1, 1), (2, 2)).copy_from(&r);
    match variant {
        Variant::Proposed => {
            let p_next = x_hat.position + r * u.translation;
            g.view_mut((1, 0), (2, 1)).copy_from(&(-j * p_next));
            for (k, p) in x_hat.landmarks.values().enumerate() {
                g.view_mut((3 + 2 * k, 0), (2, 1)).copy_from(&(-j * p));
            }
        }
        Variant::Standard => {
            f.view_mut((1, 0), (2, 1)).copy_from(&(r * j * u.translation));
        }
    }
    PropagationJacobians {
        transition: f,
        noise: g,
    }
}

fn observation_rows(variant: Variant, x_hat: &SlamState2, id: LandmarkId) -> Result<DMatrix<f64>> {
    let col = x_hat.landmark_column(id)?;
    let q = body_vector(x_hat, id)?;
    let dh = range_bearing_jacobian(&q)?;
    let rt = x_hat.rotation().matrix().transpose();
    let mut m = DMatrix::zeros(2, x_hat.error_dim());
    m.view_mut((0, 1), (2, 2)).copy_from(&(-rt));
    m.view_mut((0, col), (2, 2)).copy_from(&rt);
    if variant == Variant::Standard {
        m.view_mut((0, 0), (2, 1))
            .copy_from(&(-quarter_turn() * q));
    }
    Ok(dynamic(&dh) * m)
}

fn dynamic(a: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, a.as_slice())
}

fn stacked_jacobians(
    variant: Variant,
    x_hat: &SlamState2,
    u: &OdometryInput2,
    ids: &[LandmarkId],
) -> Result<ModelJacobians> {
    let prop = transition_and_noise(variant, x_hat, u);
    let d = x_hat.error_dim();
    let mut h = DMatrix::zeros(2 * ids.len(), d);
    for (i, id) in ids.iter().enumerate() {
        h.view_mut((2 * i, 0), (2, d))
            .copy_from(&observation_rows(variant, x_hat, *id)?);
    }
    Ok(ModelJacobians {
        transition: prop.transition,
        noise: prop.noise,
        observation: h,
        measurement_noise: DMatrix::identity(2 * ids.len(), 2 * ids.len()),
    })
}

/// Jacobians of the proposed filter. `F = I`; the observation rows of each
/// id are stacked in order.
pub fn jac_proposed2(
    x_hat: &SlamState2,
    u: &OdometryInput2,
    ids: &[LandmarkId],
) -> Result<ModelJacobians> {
    stacked_jacobians(Variant::Proposed, x_hat, u, ids)
}

pub fn jac_standard2(
    x_hat: &SlamState2,
    u: &OdometryInput2,
    ids: &[LandmarkId],
) -> Result<ModelJacobians> {
    stacked_jacobians(Variant::Standard, x_hat, u, ids)
}

fn check_dim(x_hat: &SlamState2, e: &DVector<f64>) -> Result<()> {
    if e.len() != x_hat.error_dim() {
        return Err(Error::InvalidDimension {
            expected: x_hat.error_dim(),
            actual: e.len(),
        });
    }
    Ok(())
}

pub fn retract_proposed2(x_hat: &SlamState2, e: &DVector<f64>) -> Result<SlamState2> {
    check_dim(x_hat, e)?;
    let g = exp_sek2(&Tangent2::from_flat(e.as_slice())?)?;
    let dr = g.rotation;
    Ok(SlamState2 {
        theta: wrap_angle(x_hat.theta + e[0]),
        position: dr.rotate(&x_hat.position) + g.blocks[0],
        landmarks: x_hat
            .landmarks
            .iter()
            .zip(&g.blocks[1..])
            .map(|((id, p), dp)| (*id, dr.rotate(p) + dp))
            .collect(),
    })
}

pub fn retract_standard2(x_hat: &SlamState2, e: &DVector<f64>) -> Result<SlamState2> {
    check_dim(x_hat, e)?;
    Ok(SlamState2 {
        theta: wrap_angle(x_hat.theta + e[0]),
        position: x_hat.position + Vector2::new(e[1], e[2]),
        landmarks: x_hat
            .landmarks
            .iter()
            .enumerate()
            .map(|(k, (id, p))| (*id, p + Vector2::new(e[3 + 2 * k], e[4 + 2 * k])))
            .collect(),
    })
}

fn check_registry(x: &SlamState2, x_hat: &SlamState2) -> Result<()> {
    if x.landmarks.len() != x_hat.landmarks.len()
        || x.landmarks.keys().zip(x_hat.landmarks.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::RegistryMismatch(format!(
            "landmarks {:?} vs {:?}",
            x.landmarks.keys().collect::<Vec<_>>(),
            x_hat.landmarks.keys().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn flatten_error(
    x: &SlamState2,
    x_hat: &SlamState2,
    block: impl Fn(&Vector2<f64>, &Vector2<f64>) -> Vector2<f64>,
) -> Result<DVector<f64>> {
    check_registry(x, x_hat)?;
    let mut e = DVector::zeros(x_hat.error_dim());
    e[0] = wrap_angle(x.theta - x_hat.theta);
    e.rows_mut(1, 2).copy_from(&block(&x.position, &x_hat.position));
    for (k, (p, p_hat)) in x.landmarks.values().zip(x_hat.landmarks.values()).enumerate() {
        e.rows_mut(3 + 2 * k, 2).copy_from(&block(p, p_hat));
    }
    Ok(e)
}

/// Invariant error: heading difference, then `p - R(theta - theta_hat) p_hat`
/// for the robot and every landmark.
pub fn error_proposed2(x: &SlamState2, x_hat: &SlamState2) -> Result<DVector<f64>> {
    let dr = Rotation2::new(x.theta - x_hat.theta);
    flatten_error(x, x_hat, |p, p_hat| p - dr.rotate(p_hat))
}

pub fn error_standard2(x: &SlamState2, x_hat: &SlamState2) -> Result<DVector<f64>> {
    flatten_error(x, x_hat, |p, p_hat| p - p_hat)
}

/// Basis of the unobservable directions at `x`: one global rotation and two
/// global translations, in the variant's error coordinates.
pub fn unobservable_directions2(variant: Variant, x: &SlamState2) -> DMatrix<f64> {
    let d = x.error_dim();
    let mut u = DMatrix::zeros(d, 3);
    u[(0, 0)] = 1.0;
    let j = quarter_turn();
    let positions = std::iter::once(&x.position).chain(x.landmarks.values());
    for (k, p) in positions.enumerate() {
        let row = 1 + 2 * k;
        u[(row, 1)] = 1.0;
        u[(row + 1, 2)] = 1.0;
        if variant == Variant::Standard {
            u.view_mut((row, 0), (2, 1)).copy_from(&(j * p));
        }
    }
    u
}

/// The 2D SLAM system as a filter model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slam2Model {
    pub variant: Variant,
    pub noise: OdometryNoise,
}

impl Slam2Model {
    pub fn new(variant: Variant, noise: OdometryNoise) -> Self {
        Self { variant, noise }
    }

    pub fn jacobians(
        &self,
        x_hat: &SlamState2,
        u: &OdometryInput2,
        ids: &[LandmarkId],
    ) -> Result<ModelJacobians> {
        stacked_jacobians(self.variant, x_hat, u, ids)
    }
}

fn noise_vector(w: &DVector<f64>) -> Result<Vector3<f64>> {
    match w.len() {
        0 => Ok(Vector3::zeros()),
        NOISE_DIM => Ok(Vector3::new(w[0], w[1], w[2])),
        n => Err(Error::InvalidDimension {
            expected: NOISE_DIM,
            actual: n,
        }),
    }
}

impl ErrorStateModel for Slam2Model {
    type State = SlamState2;
    type Input = OdometryInput2;
    type Subject = LandmarkId;

    fn error_dim(&self, x: &SlamState2) -> usize {
        x.error_dim()
    }

    fn dynamics(&self, x: &SlamState2, u: &OdometryInput2, w: &DVector<f64>) -> Result<SlamState2> {
        Ok(dynamics2(x, u, &noise_vector(w)?))
    }

    fn process_noise(&self, _x: &SlamState2, u: &OdometryInput2) -> Result<DMatrix<f64>> {
        let q = self.noise.covariance(u);
        Ok(DMatrix::from_column_slice(3, 3, q.as_slice()))
    }

    fn propagation_jacobians(
        &self,
        x_hat: &SlamState2,
        u: &OdometryInput2,
    ) -> Result<PropagationJacobians> {
        Ok(transition_and_noise(self.variant, x_hat, u))
    }

    fn error(&self, x: &SlamState2, x_hat: &SlamState2) -> Result<DVector<f64>> {
        match self.variant {
            Variant::Proposed => error_proposed2(x, x_hat),
            Variant::Standard => error_standard2(x, x_hat),
        }
    }

    fn retract(&self, x_hat: &SlamState2, e: &DVector<f64>) -> Result<SlamState2> {
        match self.variant {
            Variant::Proposed => retract_proposed2(x_hat, e),
            Variant::Standard => retract_standard2(x_hat, e),
        }
    }

    fn has_subject(&self, x: &SlamState2, id: &LandmarkId) -> bool {
        x.landmarks.contains_key(id)
    }

    fn observe(&self, x: &SlamState2, id: &LandmarkId) -> Result<DVector<f64>> {
        Ok(observe2(x, *id)?.to_vector())
    }

    fn observation_jacobian(&self, x_hat: &SlamState2, id: &LandmarkId) -> Result<DMatrix<f64>> {
        observation_rows(self.variant, x_hat, *id)
    }

    fn residual(&self, _id: &LandmarkId, measured: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        let mut r = measured - predicted;
        r[1] = wrap_angle(r[1]);
        r
    }

    fn initialize_subject(
        &self,
        x: &SlamState2,
        id: &LandmarkId,
        value: &DVector<f64>,
    ) -> Result<SlamState2> {
        if x.landmarks.contains_key(id) {
            return Err(Error::DuplicateSubject(format!("landmark {id}")));
        }
        let z = RangeBearing::from_vector(value)?;
        let mut out = x.clone();
        out.landmarks.insert(*id, landmark_from_measurement(x, &z));
        Ok(out)
    }

    fn unobservable_directions(&self, x: &SlamState2) -> DMatrix<f64> {
        unobservable_directions2(self.variant, x)
    }
}

/// Adds a landmark seen for the first time, correlated with the robot.
pub fn init_landmark2(
    model: &Slam2Model,
    belief: &Belief<SlamState2>,
    id: LandmarkId,
    z: RangeBearing,
    noise: Matrix2<f64>,
) -> Result<Belief<SlamState2>> {
    let obs = Observation {
        subject: id,
        value: z.to_vector(),
        noise: dynamic(&noise),
    };
    Ok(augment(model, belief, &obs)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{update, MeasurementBatch, UpdateOptions};
    use crate::oracle;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    const NOISE: OdometryNoise = OdometryNoise::Constant {
        sigma_omega: 0.01,
        sigma_p: 0.05,
    };

    fn random_state(rng: &mut ChaCha8Rng, k: usize) -> SlamState2 {
        SlamState2::with_landmarks(
            rng.random_range(-PI..PI),
            Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            (0..k as u32).map(|id| {
                (
                    id + 10,
                    Vector2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)),
                )
            }),
        )
    }

    fn random_input(rng: &mut ChaCha8Rng) -> OdometryInput2 {
        OdometryInput2::new(
            rng.random_range(-0.5..0.5),
            Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        )
    }

    fn random_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn dynamics_examples() {
        let x = SlamState2::with_landmarks(0.3, Vector2::new(1.0, 2.0), [(1, Vector2::new(4.0, 0.0))]);
        assert_eq!(dynamics2(&x, &OdometryInput2::zero(), &Vector3::zeros()), x);

        let x = SlamState2::new(0.0, Vector2::zeros());
        let y = dynamics2(&x, &OdometryInput2::new(0.0, Vector2::new(1.0, 0.0)), &Vector3::zeros());
        assert_relative_eq!(y.position, Vector2::new(1.0, 0.0));

        let x = SlamState2::new(FRAC_PI_2, Vector2::zeros());
        let y = dynamics2(&x, &OdometryInput2::new(0.0, Vector2::new(1.0, 0.0)), &Vector3::zeros());
        assert_relative_eq!(y.position, Vector2::new(0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn observation_examples() {
        let x = SlamState2::with_landmarks(0.0, Vector2::zeros(), [(7, Vector2::new(3.0, 4.0))]);
        let z = observe2(&x, 7).unwrap();
        assert_relative_eq!(z.range, 5.0);
        assert_relative_eq!(z.bearing, 4f64.atan2(3.0));

        let x = SlamState2::with_landmarks(0.7, Vector2::new(1.0, 1.0), [(1, Vector2::new(1.0 + 2.0 * 0.7f64.cos(), 1.0 + 2.0 * 0.7f64.sin()))]);
        assert!(observe2(&x, 1).unwrap().bearing.abs() < 1e-15);

        assert!(matches!(observe2(&x, 2), Err(Error::UnknownSubject(_))));
        let x = SlamState2::with_landmarks(0.0, Vector2::zeros(), [(1, Vector2::zeros())]);
        assert!(matches!(observe2(&x, 1), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn observation_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = random_state(&mut rng, 1);
            let (id, p) = x.landmarks.first().map(|(i, p)| (*i, *p)).unwrap();
            let z = observe2(&x, id).unwrap();
            assert!((landmark_from_measurement(&x, &z) - p).amax() < 1e-12);
        }
    }

    #[test]
    fn proposed_transition_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random_state(&mut rng, 3);
            let u = random_input(&mut rng);
            assert_eq!(jac_proposed2(&x, &u, &[]).unwrap().transition, DMatrix::identity(9, 9));
        }
        let x = random_state(&mut rng, 2);
        assert_eq!(jac_standard2(&x, &OdometryInput2::new(0.3, Vector2::zeros()), &[]).unwrap().transition, DMatrix::identity(7, 7));
    }

    #[test]
    fn error_propagation_is_trajectory_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_state(&mut rng, 3);
            let u = random_input(&mut rng);
            let e = random_vector(&mut rng, 9, 0.5);
            let z = Vector3::zeros();
            let moved = dynamics2(&retract_proposed2(&x, &e).unwrap(), &u, &z);
            let before = error_proposed2(&retract_proposed2(&x, &e).unwrap(), &x).unwrap();
            let after = error_proposed2(&moved, &dynamics2(&x, &u, &z)).unwrap();
            assert!((after - before).amax() < 1e-12);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for variant in Variant::ALL {
            let model = Slam2Model::new(variant, NOISE);
            for _ in 0..3 {
                let x = random_state(&mut rng, 3);
                let u = random_input(&mut rng);
                let jac = model.propagation_jacobians(&x, &u).unwrap();
                let f = oracle::transition(&model, &x, &u, NOISE_DIM).unwrap();
                let g = oracle::process_noise(&model, &x, &u, NOISE_DIM).unwrap();
                assert!(oracle::relative_error(&jac.transition, &f) < 1e-5, "{variant} F");
                assert!(oracle::relative_error(&jac.noise, &g) < 1e-5, "{variant} G");
                for id in x.landmarks.keys() {
                    let h = model.observation_jacobian(&x, id).unwrap();
                    let fd = oracle::observation(&model, &x, id).unwrap();
                    assert!(oracle::relative_error(&h, &fd) < 1e-5, "{variant} H");
                }
                let stacked = model.jacobians(&x, &u, &[11, 10]).unwrap();
                assert_eq!(stacked.observation.nrows(), 4);
                assert_eq!(stacked.measurement_noise, DMatrix::identity(4, 4));
            }
        }
    }

    #[test]
    fn translation_noise_block_is_the_rotation() {
        // The position rows of G carry R_hat, not the identity.
        let x = SlamState2::with_landmarks(0.9, Vector2::new(1.0, -2.0), [(1, Vector2::new(3.0, 1.0))]);
        let model = Slam2Model::new(Variant::Proposed, NOISE);
        let u = OdometryInput2::new(0.1, Vector2::new(0.5, 0.0));
        let g = model.propagation_jacobians(&x, &u).unwrap().noise;
        let fd = oracle::process_noise(&model, &x, &u, NOISE_DIM).unwrap();
        let r = x.rotation().matrix();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_relative_eq!(g[(1 + i, 1 + j)], r[(i, j)], epsilon = 1e-15);
            assert_relative_eq!(fd[(1 + i, 1 + j)], r[(i, j)], epsilon = 1e-8);
        }
        // Only an isotropic translation covariance hides the difference.
        let gi = {
            let mut gi = g.clone();
            gi.view_mut((1, 1), (2, 2)).fill_with_identity();
            gi
        };
        let q = model.process_noise(&x, &u).unwrap();
        assert!((&g * &q * g.transpose() - &gi * &q * gi.transpose()).amax() < 1e-15);
        let aniso = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-4, 1e-2, 1e-3]));
        assert!((&g * &aniso * g.transpose() - &gi * &aniso * gi.transpose()).amax() > 1e-4);
    }

    #[test]
    fn observation_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_state(&mut rng, 4);
            let ids: Vec<_> = x.landmarks.keys().copied().collect();
            for variant in Variant::ALL {
                let h = stacked_jacobians(variant, &x, &OdometryInput2::zero(), &ids).unwrap().observation;
                let u = unobservable_directions2(variant, &x);
                assert!((&h * &u).amax() < 1e-10, "{variant}");
            }
            let h = jac_proposed2(&x, &OdometryInput2::zero(), &ids).unwrap().observation;
            assert!(h.column(0).amax() == 0.0);
        }
    }

    #[test]
    fn invariance_and_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x = random_state(&mut rng, 3);
            let a = Transform2::new(rng.random_range(-PI..PI), Vector2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)));
            let u = random_input(&mut rng);
            let w = Vector3::new(0.01, -0.02, 0.03);
            for id in x.landmarks.keys() {
                let z0 = observe2(&x, *id).unwrap();
                let z1 = observe2(&a.apply(&x), *id).unwrap();
                assert!((z0.range - z1.range).abs() < 1e-12);
                assert!(wrap_angle(z0.bearing - z1.bearing).abs() < 1e-12);
            }
            let lhs = a.apply(&dynamics2(&x, &u, &w));
            let rhs = dynamics2(&a.apply(&x), &u, &w);
            assert!(wrap_angle(lhs.theta - rhs.theta).abs() < 1e-12);
            assert!((lhs.position - rhs.position).amax() < 1e-12);
        }
    }

    #[test]
    fn global_transform_error_is_state_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Transform2::new(0.8, Vector2::new(-1.5, 2.5));
        let mut expected = DVector::zeros(9);
        expected[0] = 0.8;
        for k in 0..4 {
            expected[1 + 2 * k] = -1.5;
            expected[2 + 2 * k] = 2.5;
        }
        for _ in 0..50 {
            let x = random_state(&mut rng, 3);
            let e = error_proposed2(&a.apply(&x), &x).unwrap();
            assert!((e - &expected).amax() < 1e-12);
        }
    }

    #[test]
    fn retraction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_state(&mut rng, 2);
        assert_eq!(retract_proposed2(&x, &DVector::zeros(7)).unwrap(), x);
        assert_eq!(retract_standard2(&x, &DVector::zeros(7)).unwrap(), x);

        let mut e = DVector::zeros(7);
        e[1] = 0.5;
        e[4] = -0.25;
        let y = retract_proposed2(&x, &e).unwrap();
        assert_relative_eq!(y.position, x.position + Vector2::new(0.5, 0.0), epsilon = 1e-15);
        assert_relative_eq!(y.landmarks[0], x.landmarks[0] + Vector2::new(0.0, -0.25), epsilon = 1e-15);

        let mut e = DVector::zeros(7);
        e[0] = 0.4;
        let y = retract_standard2(&x, &e).unwrap();
        assert_eq!(y.position, x.position);

        let e1 = random_vector(&mut rng, 7, 1.0);
        let e2 = random_vector(&mut rng, 7, 1.0);
        let two = retract_standard2(&retract_standard2(&x, &e1).unwrap(), &e2).unwrap();
        let one = retract_standard2(&x, &(&e1 + &e2)).unwrap();
        assert!((two.position - one.position).amax() < 1e-12);

        assert!(matches!(retract_proposed2(&x, &DVector::zeros(6)), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn retraction_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for variant in Variant::ALL {
            let model = Slam2Model::new(variant, NOISE);
            for _ in 0..200 {
                let x = random_state(&mut rng, 3);
                let mut e = random_vector(&mut rng, 9, 1.0);
                let scale = rng.random_range(1e-4..0.1) / e.norm();
                e *= scale;
                let back = model.error(&model.retract(&x, &e).unwrap(), &x).unwrap();
                assert!((back - &e).norm() <= 10.0 * e.norm_squared());
            }
        }
    }

    #[test]
    fn registry_mismatch() {
        let a = SlamState2::with_landmarks(0.0, Vector2::zeros(), [(1, Vector2::zeros())]);
        let b = SlamState2::with_landmarks(0.0, Vector2::zeros(), [(2, Vector2::zeros())]);
        assert!(matches!(error_proposed2(&a, &b), Err(Error::RegistryMismatch(_))));
    }

    #[test]
    fn landmark_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = Slam2Model::new(Variant::Proposed, NOISE);

        let x = random_state(&mut rng, 0);
        let truth = Vector2::new(2.0, 3.0);
        let mut world = x.clone();
        world.landmarks.insert(4, truth);
        let z = observe2(&world, 4).unwrap();
        let b = init_landmark2(&model, &Belief::new(x.clone(), DMatrix::zeros(3, 3)), 4, z, Matrix2::zeros()).unwrap();
        assert!((b.estimate.landmarks[&4] - truth).amax() < 1e-12);
        assert!(b.covariance.view((3, 3), (2, 2)).amax() < 1e-12);

        let batch = MeasurementBatch {
            timestamp: 0.0,
            entries: vec![Observation { subject: 4, value: z.to_vector(), noise: DMatrix::identity(2, 2) * 0.01 }],
        };
        let out = update(&model, &b, &batch, &UpdateOptions::default()).unwrap();
        assert!(out.innovation.residual.amax() < 1e-12);

        assert!(matches!(
            init_landmark2(&model, &b, 4, z, Matrix2::identity()),
            Err(Error::DuplicateSubject(_))
        ));

        for variant in Variant::ALL {
            let model = Slam2Model::new(variant, NOISE);
            for _ in 0..1000 {
                let x = random_state(&mut rng, 2);
                let a = random_vector(&mut rng, 49, 1.0);
                let a = DMatrix::from_column_slice(7, 7, a.as_slice());
                let p = &a * a.transpose() * rng.random_range(1e-6..1.0);
                let z = RangeBearing::new(rng.random_range(0.1..5.0), rng.random_range(-PI..PI));
                let n = Matrix2::new(rng.random_range(1e-4..0.1), 0.0, 0.0, rng.random_range(1e-6..0.01));
                let b = init_landmark2(&model, &Belief::new(x, p), 99, z, n).unwrap();
                let min = SymmetricEigen::new(b.covariance).eigenvalues.min();
                assert!(min >= -1e-9, "{min}");
            }
        }
    }

    #[test]
    fn proportional_noise() {
        let noise = OdometryNoise::Proportional { fraction: 0.2, floor_omega: 1e-4, floor_p: 1e-3 };
        let (so, sp) = noise.sigmas(&OdometryInput2::new(0.5, Vector2::new(3.0, 4.0)));
        assert_relative_eq!(so, 0.1);
        assert_relative_eq!(sp, 1.0);
        assert_eq!(noise.sigmas(&OdometryInput2::zero()), (1e-4, 1e-3));
    }
}
