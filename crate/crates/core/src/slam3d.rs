//! Single-robot SLAM in 3D with a monocular camera.
//!
//! The robot carries an orientation in SO(3) and a position; landmarks are
//! points. Odometry gives a rotation increment and a body-frame translation;
//! each landmark is observed by perspective projection of its body-frame
//! position. The proposed error is the `SE_{1+K}(3)` analogue of the planar
//! one:
//!
//! ```text
//! e_R = log(R R_hat^T),   e_p = p - R R_hat^T p_hat
//! ```

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::filter::{ErrorStateModel, ModelJacobians, PropagationJacobians};
use crate::lie::{exp_sek3, exp_so3, sek3_coefficients, skew3, Rotation3, Tangent3};
use crate::slam2d::LandmarkId;
use crate::Variant;

pub const NOISE_DIM: usize = 6;

/// Points closer to the image plane than this are not visible.
pub const DEPTH_FLOOR: f64 = 1e-6;

/// Rotations this close to a half turn have no well-defined logarithm axis.
pub const LOG_PI_GUARD: f64 = 1e-6;

const LOG_TAYLOR_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SlamState3 {
    pub rotation: Rotation3,
    pub position: Vector3<f64>,
    pub landmarks: IndexMap<LandmarkId, Vector3<f64>>,
}

impl SlamState3 {
    pub fn new(
        rotation: Rotation3,
        position: Vector3<f64>,
        landmarks: impl IntoIterator<Item = (LandmarkId, Vector3<f64>)>,
    ) -> Self {
        Self {
            rotation,
            position,
            landmarks: landmarks.into_iter().collect(),
        }
    }

    pub fn error_dim(&self) -> usize {
        6 + 3 * self.landmarks.len()
    }

    pub fn landmark_column(&self, id: LandmarkId) -> Result<usize> {
        self.landmarks
            .get_index_of(&id)
            .map(|k| 6 + 3 * k)
            .ok_or_else(|| Error::UnknownSubject(format!("landmark {id}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryInput3 {
    pub omega: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl OdometryInput3 {
    pub fn new(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { omega, translation }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }
}

/// Normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection2 {
    pub u: f64,
    pub v: f64,
}

impl Projection2 {
    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.u, self.v])
    }
}

/// Isotropic odometry noise `diag(s_omega^2 I, s_p^2 I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryNoise3 {
    pub sigma_omega: f64,
    pub sigma_p: f64,
}

impl OdometryNoise3 {
    pub fn covariance(&self) -> DMatrix<f64> {
        let so = self.sigma_omega * self.sigma_omega;
        let sp = self.sigma_p * self.sigma_p;
        DMatrix::from_diagonal(&DVector::from_vec(vec![so, so, so, sp, sp, sp]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform3 {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Transform3 {
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn apply(&self, x: &SlamState3) -> SlamState3 {
        SlamState3 {
            rotation: self.rotation.compose(&x.rotation),
            position: self.apply_point(&x.position),
            landmarks: x
                .landmarks
                .iter()
                .map(|(id, p)| (*id, self.apply_point(p)))
                .collect(),
        }
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Logarithm of SO(3): angle from the trace and the antisymmetric part, axis
/// from the antisymmetric part.
pub fn log_so3(r: &Rotation3) -> Result<Vector3<f64>> {
    let m = r.matrix();
    let s = vee(m);
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = s.norm().atan2(c);
    if std::f64::consts::PI - angle < LOG_PI_GUARD {
        return Err(Error::IllConditionedLog);
    }
    if angle < LOG_TAYLOR_THRESHOLD {
        return Ok(s * (1.0 + angle * angle / 6.0));
    }
    Ok(s * (angle / angle.sin()))
}

/// Left Jacobian of SO(3): `exp(phi + d) = exp(J_l(phi) d) exp(phi)` to first
/// order in `d`.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (c2, c3) = sek3_coefficients(phi.norm());
    let w = skew3(phi);
    Matrix3::identity() + w * c2 + w * w * c3
}

/// `R' = R exp(omega + w_omega)`, `p' = p + R (p_bar + w_p)`.
pub fn dynamics3(x: &SlamState3, u: &OdometryInput3, w: &DVector<f64>) -> Result<SlamState3> {
    let (w_omega, w_p) = match w.len() {
        0 => (Vector3::zeros(), Vector3::zeros()),
        NOISE_DIM => (
            Vector3::new(w[0], w[1], w[2]),
            Vector3::new(w[3], w[4], w[5]),
        ),
        n => {
            return Err(Error::InvalidDimension {
                expected: NOISE_DIM,
                actual: n,
            })
        }
    };
    Ok(SlamState3 {
        rotation: x.rotation.compose(&exp_so3(&(u.omega + w_omega))?),
        position: x.position + x.rotation.rotate(&(u.translation + w_p)),
        landmarks: x.landmarks.clone(),
    })
}

fn body_vector(x: &SlamState3, id: LandmarkId) -> Result<Vector3<f64>> {
    let p = x
        .landmarks
        .get(&id)
        .ok_or_else(|| Error::UnknownSubject(format!("landmark {id}")))?;
    Ok(x.rotation.matrix().transpose() * (p - x.position))
}

fn visible(q: &Vector3<f64>, id: LandmarkId) -> Result<()> {
    if q.z < DEPTH_FLOOR {
        return Err(Error::NotVisible(format!(
            "landmark {id} at depth {:e}",
            q.z
        )));
    }
    Ok(())
}

pub fn observe3(x: &SlamState3, id: LandmarkId) -> Result<Projection2> {
    let q = body_vector(x, id)?;
    visible(&q, id)?;
    Ok(Projection2 {
        u: q.x / q.z,
        v: q.y / q.z,
    })
}

/// Jacobian of the perspective projection at a body-frame point.
pub fn projection_jacobian(q: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / q.z;
    Matrix2x3::new(iz, 0.0, -q.x * iz * iz, 0.0, iz, -q.y * iz * iz)
}

fn transition_and_noise(
    variant: Variant,
    x_hat: &SlamState3,
    u: &OdometryInput3,
) -> PropagationJacobians {
    let d = x_hat.error_dim();
    let r = *x_hat.rotation.matrix();
    let phi = r * so3_left_jacobian(&u.omega);
    let mut f = DMatrix::identity(d, d);
    let mut g = DMatrix::zeros(d, NOISE_DIM);
    g.view_mut((0, 0), (3, 3)).copy_from(&phi);
    g.view_mut((3, 3), (3, 3)).copy_from(&r);
    let moved = r * u.translation;
    match variant {
        Variant::Proposed => {
            let p_next = x_hat.position + moved;
            g.view_mut((3, 0), (3, 3)).copy_from(&(skew3(&p_next) * phi));
            for (k, p) in x_hat.landmarks.values().enumerate() {
                g.view_mut((6 + 3 * k, 0), (3, 3))
                    .copy_from(&(skew3(p) * phi));
            }
        }
        Variant::Standard => {
            f.view_mut((3, 0), (3, 3)).copy_from(&(-skew3(&moved)));
        }
    }
    PropagationJacobians {
        transition: f,
        noise: g,
    }
}

fn observation_rows(variant: Variant, x_hat: &SlamState3, id: LandmarkId) -> Result<DMatrix<f64>> {
    let col = x_hat.landmark_column(id)?;
    let q = body_vector(x_hat, id)?;
    visible(&q, id)?;
    let rt = x_hat.rotation.matrix().transpose();
    let mut m = DMatrix::zeros(3, x_hat.error_dim());
    m.view_mut((0, 3), (3, 3)).copy_from(&(-rt));
    m.view_mut((0, col), (3, 3)).copy_from(&rt);
    if variant == Variant::Standard {
        let delta = x_hat.landmarks[&id] - x_hat.position;
        m.view_mut((0, 0), (3, 3)).copy_from(&(rt * skew3(&delta)));
    }
    let dh = projection_jacobian(&q);
    Ok(DMatrix::from_column_slice(2, 3, dh.as_slice()) * m)
}

fn stacked_jacobians(
    variant: Variant,
    x_hat: &SlamState3,
    u: &OdometryInput3,
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

pub fn jac_proposed3(
    x_hat: &SlamState3,
    u: &OdometryInput3,
    ids: &[LandmarkId],
) -> Result<ModelJacobians> {
    stacked_jacobians(Variant::Proposed, x_hat, u, ids)
}

pub fn jac_standard3(
    x_hat: &SlamState3,
    u: &OdometryInput3,
    ids: &[LandmarkId],
) -> Result<ModelJacobians> {
    stacked_jacobians(Variant::Standard, x_hat, u, ids)
}

fn check_dim(x_hat: &SlamState3, e: &DVector<f64>) -> Result<()> {
    if e.len() != x_hat.error_dim() {
        return Err(Error::InvalidDimension {
            expected: x_hat.error_dim(),
            actual: e.len(),
        });
    }
    Ok(())
}

pub fn retract_proposed3(x_hat: &SlamState3, e: &DVector<f64>) -> Result<SlamState3> {
    check_dim(x_hat, e)?;
    let g = exp_sek3(&Tangent3::from_flat(e.as_slice())?)?;
    let dr = g.rotation;
    Ok(SlamState3 {
        rotation: dr.compose(&x_hat.rotation),
        position: dr.rotate(&x_hat.position) + g.blocks[0],
        landmarks: x_hat
            .landmarks
            .iter()
            .zip(&g.blocks[1..])
            .map(|((id, p), dp)| (*id, dr.rotate(p) + dp))
            .collect(),
    })
}

pub fn retract_standard3(x_hat: &SlamState3, e: &DVector<f64>) -> Result<SlamState3> {
    check_dim(x_hat, e)?;
    let block = |i: usize| Vector3::new(e[i], e[i + 1], e[i + 2]);
    Ok(SlamState3 {
        rotation: exp_so3(&block(0))?.compose(&x_hat.rotation),
        position: x_hat.position + block(3),
        landmarks: x_hat
            .landmarks
            .iter()
            .enumerate()
            .map(|(k, (id, p))| (*id, p + block(6 + 3 * k)))
            .collect(),
    })
}

fn flatten_error(
    x: &SlamState3,
    x_hat: &SlamState3,
    block: impl Fn(&Matrix3<f64>, &Vector3<f64>, &Vector3<f64>) -> Vector3<f64>,
) -> Result<DVector<f64>> {
    if x.landmarks.len() != x_hat.landmarks.len()
        || x.landmarks.keys().zip(x_hat.landmarks.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::RegistryMismatch(format!(
            "landmarks {:?} vs {:?}",
            x.landmarks.keys().collect::<Vec<_>>(),
            x_hat.landmarks.keys().collect::<Vec<_>>()
        )));
    }
    let dr = x.rotation.compose(&x_hat.rotation.inverse());
    let mut e = DVector::zeros(x_hat.error_dim());
    e.rows_mut(0, 3).copy_from(&log_so3(&dr)?);
    let m = dr.matrix();
    e.rows_mut(3, 3).copy_from(&block(m, &x.position, &x_hat.position));
    for (k, (p, p_hat)) in x.landmarks.values().zip(x_hat.landmarks.values()).enumerate() {
        e.rows_mut(6 + 3 * k, 3).copy_from(&block(m, p, p_hat));
    }
    Ok(e)
}

pub fn error_proposed3(x: &SlamState3, x_hat: &SlamState3) -> Result<DVector<f64>> {
    flatten_error(x, x_hat, |dr, p, p_hat| p - dr * p_hat)
}

pub fn error_standard3(x: &SlamState3, x_hat: &SlamState3) -> Result<DVector<f64>> {
    flatten_error(x, x_hat, |_, p, p_hat| p - p_hat)
}

/// Three global rotations and three global translations.
pub fn unobservable_directions3(variant: Variant, x: &SlamState3) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(x.error_dim(), 6);
    u.view_mut((0, 0), (3, 3)).fill_with_identity();
    let positions = std::iter::once(&x.position).chain(x.landmarks.values());
    for (k, p) in positions.enumerate() {
        let row = 3 + 3 * k;
        u.view_mut((row, 3), (3, 3)).fill_with_identity();
        if variant == Variant::Standard {
            u.view_mut((row, 0), (3, 3)).copy_from(&(-skew3(p)));
        }
    }
    u
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slam3Model {
    pub variant: Variant,
    pub noise: OdometryNoise3,
}

impl Slam3Model {
    pub fn new(variant: Variant, noise: OdometryNoise3) -> Self {
        Self { variant, noise }
    }

    pub fn jacobians(
        &self,
        x_hat: &SlamState3,
        u: &OdometryInput3,
        ids: &[LandmarkId],
    ) -> Result<ModelJacobians> {
        stacked_jacobians(self.variant, x_hat, u, ids)
    }
}

impl ErrorStateModel for Slam3Model {
    type State = SlamState3;
    type Input = OdometryInput3;
    type Subject = LandmarkId;

    fn error_dim(&self, x: &SlamState3) -> usize {
        x.error_dim()
    }

    fn dynamics(&self, x: &SlamState3, u: &OdometryInput3, w: &DVector<f64>) -> Result<SlamState3> {
        dynamics3(x, u, w)
    }

    fn process_noise(&self, _x: &SlamState3, _u: &OdometryInput3) -> Result<DMatrix<f64>> {
        Ok(self.noise.covariance())
    }

    fn propagation_jacobians(
        &self,
        x_hat: &SlamState3,
        u: &OdometryInput3,
    ) -> Result<PropagationJacobians> {
        Ok(transition_and_noise(self.variant, x_hat, u))
    }

    fn error(&self, x: &SlamState3, x_hat: &SlamState3) -> Result<DVector<f64>> {
        match self.variant {
            Variant::Proposed => error_proposed3(x, x_hat),
            Variant::Standard => error_standard3(x, x_hat),
        }
    }

    fn retract(&self, x_hat: &SlamState3, e: &DVector<f64>) -> Result<SlamState3> {
        match self.variant {
            Variant::Proposed => retract_proposed3(x_hat, e),
            Variant::Standard => retract_standard3(x_hat, e),
        }
    }

    fn has_subject(&self, x: &SlamState3, id: &LandmarkId) -> bool {
        x.landmarks.contains_key(id)
    }

    fn observe(&self, x: &SlamState3, id: &LandmarkId) -> Result<DVector<f64>> {
        Ok(observe3(x, *id)?.to_vector())
    }

    fn observation_jacobian(&self, x_hat: &SlamState3, id: &LandmarkId) -> Result<DMatrix<f64>> {
        observation_rows(self.variant, x_hat, *id)
    }

    fn unobservable_directions(&self, x: &SlamState3) -> DMatrix<f64> {
        unobservable_directions3(self.variant, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    const NOISE: OdometryNoise3 = OdometryNoise3 {
        sigma_omega: 0.01,
        sigma_p: 0.05,
    };

    fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3 {
        exp_so3(&random_vec3(rng, 1.5)).unwrap()
    }

    /// Landmarks placed in front of the camera.
    fn random_state(rng: &mut ChaCha8Rng, k: usize) -> SlamState3 {
        let rotation = random_rotation(rng);
        let position = random_vec3(rng, 5.0);
        let landmarks = (0..k as u32)
            .map(|id| {
                let q = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(2.0..8.0),
                );
                (id, position + rotation.rotate(&q))
            })
            .collect::<Vec<_>>();
        SlamState3::new(rotation, position, landmarks)
    }

    fn random_input(rng: &mut ChaCha8Rng) -> OdometryInput3 {
        OdometryInput3::new(random_vec3(rng, 0.3), random_vec3(rng, 1.0))
    }

    #[test]
    fn dynamics_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_state(&mut rng, 2);
        assert_eq!(dynamics3(&x, &OdometryInput3::zero(), &DVector::zeros(6)).unwrap(), x);
        let x = SlamState3::new(Rotation3::identity(), Vector3::zeros(), []);
        let y = dynamics3(&x, &OdometryInput3::new(Vector3::zeros(), Vector3::x()), &DVector::zeros(0)).unwrap();
        assert_eq!(y.position, Vector3::x());
    }

    #[test]
    fn projection_examples() {
        let x = SlamState3::new(Rotation3::identity(), Vector3::zeros(), [(1, Vector3::new(0.0, 0.0, 4.0)), (2, Vector3::new(1.0, 2.0, 2.0)), (3, Vector3::new(0.0, 0.0, -1.0))]);
        assert_eq!(observe3(&x, 1).unwrap(), Projection2 { u: 0.0, v: 0.0 });
        assert_eq!(observe3(&x, 2).unwrap(), Projection2 { u: 0.5, v: 1.0 });
        assert!(matches!(observe3(&x, 3), Err(Error::NotVisible(_))));
        assert!(matches!(observe3(&x, 4), Err(Error::UnknownSubject(_))));
    }

    #[test]
    fn log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let axis = random_vec3(&mut rng, 1.0).normalize();
            let angle = rng.random_range(0.0..3.0);
            let w = axis * angle;
            let back = log_so3(&exp_so3(&w).unwrap()).unwrap();
            assert!((back - w).amax() < 1e-9, "{angle}");
        }
        assert_eq!(log_so3(&Rotation3::identity()).unwrap(), Vector3::zeros());
        let half = exp_so3(&Vector3::new(0.0, std::f64::consts::PI - 1e-8, 0.0)).unwrap();
        assert!(matches!(log_so3(&half), Err(Error::IllConditionedLog)));
        let tiny = Vector3::new(1e-8, -2e-8, 3e-9);
        assert!((log_so3(&exp_so3(&tiny).unwrap()).unwrap() - tiny).amax() < 1e-20);
    }

    #[test]
    fn left_jacobian_by_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let phi = random_vec3(&mut rng, 1.0);
            let base = exp_so3(&phi).unwrap();
            let mut fd = Matrix3::zeros();
            for i in 0..3 {
                let mut d = Vector3::zeros();
                d[i] = 1e-6;
                let plus = log_so3(&exp_so3(&(phi + d)).unwrap().compose(&base.inverse())).unwrap();
                let minus = log_so3(&exp_so3(&(phi - d)).unwrap().compose(&base.inverse())).unwrap();
                fd.set_column(i, &((plus - minus) / 2e-6));
            }
            assert!((so3_left_jacobian(&phi) - fd).amax() < 1e-8);
        }
    }

    #[test]
    fn proposed_transition_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_state(&mut rng, 3);
        let u = random_input(&mut rng);
        assert_eq!(jac_proposed3(&x, &u, &[]).unwrap().transition, DMatrix::identity(15, 15));
        let still = OdometryInput3::new(random_vec3(&mut rng, 0.3), Vector3::zeros());
        assert_eq!(jac_standard3(&x, &still, &[]).unwrap().transition, DMatrix::identity(15, 15));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in Variant::ALL {
            let model = Slam3Model::new(variant, NOISE);
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
            }
        }
    }

    #[test]
    fn observation_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let x = random_state(&mut rng, 4);
            let ids: Vec<_> = x.landmarks.keys().copied().collect();
            for variant in Variant::ALL {
                let h = stacked_jacobians(variant, &x, &OdometryInput3::zero(), &ids).unwrap().observation;
                assert!((&h * unobservable_directions3(variant, &x)).amax() < 1e-9, "{variant}");
            }
        }
    }

    #[test]
    fn invariance_and_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = random_state(&mut rng, 3);
            let a = Transform3 {
                rotation: random_rotation(&mut rng),
                translation: random_vec3(&mut rng, 10.0),
            };
            let u = random_input(&mut rng);
            let w = DVector::from_vec(vec![0.01, -0.02, 0.005, 0.03, 0.0, -0.01]);
            for id in x.landmarks.keys() {
                let z0 = observe3(&x, *id).unwrap();
                let z1 = observe3(&a.apply(&x), *id).unwrap();
                assert!((z0.u - z1.u).abs() < 1e-12 && (z0.v - z1.v).abs() < 1e-12);
            }
            let lhs = a.apply(&dynamics3(&x, &u, &w).unwrap());
            let rhs = dynamics3(&a.apply(&x), &u, &w).unwrap();
            assert!((lhs.rotation.matrix() - rhs.rotation.matrix()).amax() < 1e-12);
            assert!((lhs.position - rhs.position).amax() < 1e-12);
        }
    }

    #[test]
    fn error_propagation_and_global_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Transform3 {
            rotation: exp_so3(&Vector3::new(0.2, -0.4, FRAC_PI_2 / 2.0)).unwrap(),
            translation: Vector3::new(1.0, -2.0, 0.5),
        };
        let log_a = log_so3(&a.rotation).unwrap();
        for _ in 0..100 {
            let x = random_state(&mut rng, 2);
            let e = error_proposed3(&a.apply(&x), &x).unwrap();
            assert!((e.fixed_rows::<3>(0) - log_a).amax() < 1e-12);
            for k in 0..3 {
                assert!((e.fixed_rows::<3>(3 + 3 * k) - a.translation).amax() < 1e-12);
            }

            let u = random_input(&mut rng);
            let de = DVector::from_fn(12, |_, _| rng.random_range(-0.3..0.3));
            let perturbed = retract_proposed3(&x, &de).unwrap();
            let z = DVector::zeros(6);
            let before = error_proposed3(&perturbed, &x).unwrap();
            let after = error_proposed3(
                &dynamics3(&perturbed, &u, &z).unwrap(),
                &dynamics3(&x, &u, &z).unwrap(),
            )
            .unwrap();
            assert!((after - before).amax() < 1e-12);
        }
    }

    #[test]
    fn retraction_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_state(&mut rng, 2);
        assert_eq!(retract_proposed3(&x, &DVector::zeros(12)).unwrap(), x);
        assert_eq!(retract_standard3(&x, &DVector::zeros(12)).unwrap(), x);
        let mut e = DVector::zeros(12);
        e.rows_mut(3, 9).copy_from(&DVector::from_vec(vec![0.5, -0.5, 1.0, 0.5, -0.5, 1.0, 0.5, -0.5, 1.0]));
        let y = retract_proposed3(&x, &e).unwrap();
        assert_relative_eq!(y.position, x.position + Vector3::new(0.5, -0.5, 1.0), epsilon = 1e-15);
        assert_eq!(y.rotation, x.rotation);
        assert!(matches!(retract_standard3(&x, &DVector::zeros(5)), Err(Error::InvalidDimension { .. })));

        for variant in Variant::ALL {
            let model = Slam3Model::new(variant, NOISE);
            for _ in 0..200 {
                let x = random_state(&mut rng, 2);
                let mut e = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
                let scale = rng.random_range(1e-4..0.1) / e.norm();
                e *= scale;
                let back = model.error(&model.retract(&x, &e).unwrap(), &x).unwrap();
                assert!((back - &e).norm() <= 10.0 * e.norm_squared());
            }
        }
    }
}
