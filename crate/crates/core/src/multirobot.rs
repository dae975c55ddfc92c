//! Centralized planar SLAM for several robots sharing one map.
//!
//! Each robot has its own heading and position and sees landmarks and other
//! robots through range-bearing measurements. In the proposed error every
//! landmark carries an anchor heading, cloned from the heading of the robot
//! that first saw it and never propagated. Each robot and each landmark then
//! forms its own `SE(2)` block:
//!
//! ```text
//! robot m:    (theta_m - theta_hat_m,  p_m - R(e_m) p_hat_m)
//! landmark j: (anchor_j - anchor_hat_j, p_j - R(e_j) p_hat_j)
//! ```
//!
//! The standard error has no anchor coordinates and is the plain difference.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::filter::{
    augment, Belief, ErrorStateModel, ModelJacobians, Observation, PropagationJacobians,
};
use crate::lie::{quarter_turn, se2_left_jacobian, wrap_angle, Rotation2};
use crate::slam2d::{
    dynamics2, range_bearing_jacobian, LandmarkId, OdometryInput2, OdometryNoise, RangeBearing,
    SlamState2, Transform2,
};
use crate::Variant;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotPose2 {
    pub theta: f64,
    pub position: Vector2<f64>,
}

impl RobotPose2 {
    pub fn new(theta: f64, position: Vector2<f64>) -> Self {
        Self {
            theta: wrap_angle(theta),
            position,
        }
    }

    fn rotation(&self) -> Matrix2<f64> {
        Rotation2::new(self.theta).matrix()
    }
}

/// A landmark position with the heading it is anchored to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchoredLandmark {
    pub anchor: f64,
    pub position: Vector2<f64>,
    /// Index of the robot that first observed the landmark.
    pub source: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiState2 {
    pub robots: Vec<RobotPose2>,
    pub landmarks: IndexMap<LandmarkId, AnchoredLandmark>,
}

impl MultiState2 {
    pub fn new(robots: Vec<RobotPose2>) -> Self {
        Self {
            robots,
            landmarks: IndexMap::new(),
        }
    }

    pub fn error_dim(&self, variant: Variant) -> usize {
        3 * self.robots.len() + landmark_width(variant) * self.landmarks.len()
    }

    fn landmark_row(&self, variant: Variant, index: usize) -> usize {
        3 * self.robots.len() + landmark_width(variant) * index
    }
}

fn landmark_width(variant: Variant) -> usize {
    match variant {
        Variant::Proposed => 3,
        Variant::Standard => 2,
    }
}

/// What a relative measurement looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Robot(usize),
    Landmark(LandmarkId),
}

/// Subject of a measurement: who observed what.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelativeSubject {
    pub observer: usize,
    pub target: Target,
}

impl RelativeSubject {
    pub fn landmark(observer: usize, id: LandmarkId) -> Self {
        Self {
            observer,
            target: Target::Landmark(id),
        }
    }

    pub fn robot(observer: usize, other: usize) -> Self {
        Self {
            observer,
            target: Target::Robot(other),
        }
    }
}

pub fn transform_multi(a: &Transform2, x: &MultiState2) -> MultiState2 {
    MultiState2 {
        robots: x
            .robots
            .iter()
            .map(|r| RobotPose2::new(r.theta + a.angle, a.apply_point(&r.position)))
            .collect(),
        landmarks: x
            .landmarks
            .iter()
            .map(|(id, l)| {
                (
                    *id,
                    AnchoredLandmark {
                        anchor: wrap_angle(l.anchor + a.angle),
                        position: a.apply_point(&l.position),
                        source: l.source,
                    },
                )
            })
            .collect(),
    }
}

/// Every robot moves by its own odometry; landmarks and anchors stay put.
pub fn dynamics_multi(
    x: &MultiState2,
    inputs: &[OdometryInput2],
    w: &DVector<f64>,
) -> Result<MultiState2> {
    let m = x.robots.len();
    if inputs.len() != m {
        return Err(Error::InvalidDimension {
            expected: m,
            actual: inputs.len(),
        });
    }
    if !w.is_empty() && w.len() != 3 * m {
        return Err(Error::InvalidDimension {
            expected: 3 * m,
            actual: w.len(),
        });
    }
    let robots = x
        .robots
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(i, (r, u))| {
            let wi = if w.is_empty() {
                Vector3::zeros()
            } else {
                Vector3::new(w[3 * i], w[3 * i + 1], w[3 * i + 2])
            };
            let moved = dynamics2(&SlamState2::new(r.theta, r.position), u, &wi);
            RobotPose2 {
                theta: moved.theta,
                position: moved.position,
            }
        })
        .collect();
    Ok(MultiState2 {
        robots,
        landmarks: x.landmarks.clone(),
    })
}

fn robot(x: &MultiState2, i: usize) -> Result<&RobotPose2> {
    x.robots
        .get(i)
        .ok_or_else(|| Error::UnknownSubject(format!("robot {i}")))
}

fn target_position(x: &MultiState2, s: &RelativeSubject) -> Result<Vector2<f64>> {
    match s.target {
        Target::Robot(j) => {
            if j == s.observer {
                return Err(Error::InvalidInput(format!("robot {j} cannot observe itself")));
            }
            Ok(robot(x, j)?.position)
        }
        Target::Landmark(id) => x
            .landmarks
            .get(&id)
            .map(|l| l.position)
            .ok_or_else(|| Error::UnknownSubject(format!("landmark {id}"))),
    }
}

fn body_vector(x: &MultiState2, s: &RelativeSubject) -> Result<Vector2<f64>> {
    let obs = robot(x, s.observer)?;
    Ok(obs.rotation().transpose() * (target_position(x, s)? - obs.position))
}

pub fn observe_multi(x: &MultiState2, s: &RelativeSubject) -> Result<RangeBearing> {
    RangeBearing::from_body_point(&body_vector(x, s)?)
}

fn check_dim(x: &MultiState2, variant: Variant, e: &DVector<f64>) -> Result<()> {
    let d = x.error_dim(variant);
    if e.len() != d {
        return Err(Error::InvalidDimension {
            expected: d,
            actual: e.len(),
        });
    }
    Ok(())
}

/// Applies `exp` of each `SE(2)` block: robots, then anchored landmarks.
pub fn retract_multi(x_hat: &MultiState2, e: &DVector<f64>) -> Result<MultiState2> {
    check_dim(x_hat, Variant::Proposed, e)?;
    let block = |row: usize, theta: f64, p: &Vector2<f64>| {
        let de = e[row];
        let dp = se2_left_jacobian(de) * Vector2::new(e[row + 1], e[row + 2]);
        (
            wrap_angle(theta + de),
            Rotation2::new(de).rotate(p) + dp,
        )
    };
    let robots = x_hat
        .robots
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (theta, position) = block(3 * i, r.theta, &r.position);
            RobotPose2 { theta, position }
        })
        .collect();
    let landmarks = x_hat
        .landmarks
        .iter()
        .enumerate()
        .map(|(k, (id, l))| {
            let (anchor, position) = block(x_hat.landmark_row(Variant::Proposed, k), l.anchor, &l.position);
            (
                *id,
                AnchoredLandmark {
                    anchor,
                    position,
                    source: l.source,
                },
            )
        })
        .collect();
    Ok(MultiState2 { robots, landmarks })
}

pub fn retract_multi_standard(x_hat: &MultiState2, e: &DVector<f64>) -> Result<MultiState2> {
    check_dim(x_hat, Variant::Standard, e)?;
    let robots = x_hat
        .robots
        .iter()
        .enumerate()
        .map(|(i, r)| RobotPose2 {
            theta: wrap_angle(r.theta + e[3 * i]),
            position: r.position + Vector2::new(e[3 * i + 1], e[3 * i + 2]),
        })
        .collect();
    let landmarks = x_hat
        .landmarks
        .iter()
        .enumerate()
        .map(|(k, (id, l))| {
            let row = x_hat.landmark_row(Variant::Standard, k);
            (
                *id,
                AnchoredLandmark {
                    position: l.position + Vector2::new(e[row], e[row + 1]),
                    ..*l
                },
            )
        })
        .collect();
    Ok(MultiState2 { robots, landmarks })
}

fn check_registry(x: &MultiState2, x_hat: &MultiState2) -> Result<()> {
    let same = x.robots.len() == x_hat.robots.len()
        && x.landmarks.len() == x_hat.landmarks.len()
        && x
            .landmarks
            .iter()
            .zip(&x_hat.landmarks)
            .all(|((a, la), (b, lb))| a == b && la.source == lb.source);
    if same {
        Ok(())
    } else {
        Err(Error::RegistryMismatch(
            "robots, landmarks or anchor sources differ".to_string(),
        ))
    }
}

fn se2_block(theta: f64, theta_hat: f64, p: &Vector2<f64>, p_hat: &Vector2<f64>) -> Vector3<f64> {
    let de = wrap_angle(theta - theta_hat);
    let ep = p - Rotation2::new(de).rotate(p_hat);
    Vector3::new(de, ep.x, ep.y)
}

pub fn error_multi(x: &MultiState2, x_hat: &MultiState2) -> Result<DVector<f64>> {
    check_registry(x, x_hat)?;
    let mut e = DVector::zeros(x_hat.error_dim(Variant::Proposed));
    for (i, (r, rh)) in x.robots.iter().zip(&x_hat.robots).enumerate() {
        e.fixed_rows_mut::<3>(3 * i)
            .copy_from(&se2_block(r.theta, rh.theta, &r.position, &rh.position));
    }
    for (k, (l, lh)) in x.landmarks.values().zip(x_hat.landmarks.values()).enumerate() {
        e.fixed_rows_mut::<3>(x_hat.landmark_row(Variant::Proposed, k))
            .copy_from(&se2_block(l.anchor, lh.anchor, &l.position, &lh.position));
    }
    Ok(e)
}

pub fn error_multi_standard(x: &MultiState2, x_hat: &MultiState2) -> Result<DVector<f64>> {
    check_registry(x, x_hat)?;
    let mut e = DVector::zeros(x_hat.error_dim(Variant::Standard));
    for (i, (r, rh)) in x.robots.iter().zip(&x_hat.robots).enumerate() {
        e[3 * i] = wrap_angle(r.theta - rh.theta);
        e.fixed_rows_mut::<2>(3 * i + 1)
            .copy_from(&(r.position - rh.position));
    }
    for (k, (l, lh)) in x.landmarks.values().zip(x_hat.landmarks.values()).enumerate() {
        e.fixed_rows_mut::<2>(x_hat.landmark_row(Variant::Standard, k))
            .copy_from(&(l.position - lh.position));
    }
    Ok(e)
}

fn transition_and_noise(
    variant: Variant,
    x_hat: &MultiState2,
    inputs: &[OdometryInput2],
) -> Result<PropagationJacobians> {
    let m = x_hat.robots.len();
    if inputs.len() != m {
        return Err(Error::InvalidDimension {
            expected: m,
            actual: inputs.len(),
        });
    }
    let d = x_hat.error_dim(variant);
    let j = quarter_turn();
    let mut f = DMatrix::identity(d, d);
    let mut g = DMatrix::zeros(d, 3 * m);
    for (i, (r, u)) in x_hat.robots.iter().zip(inputs).enumerate() {
        let rot = r.rotation();
        let row = 3 * i;
        g[(row, row)] = 1.0;
        g.fixed_view_mut::<2, 2>(row + 1, row + 1).copy_from(&rot);
        match variant {
            Variant::Proposed => {
                let p_next = r.position + rot * u.translation;
                g.fixed_view_mut::<2, 1>(row + 1, row).copy_from(&(-j * p_next));
            }
            Variant::Standard => {
                f.fixed_view_mut::<2, 1>(row + 1, row)
                    .copy_from(&(rot * j * u.translation));
            }
        }
    }
    Ok(PropagationJacobians {
        transition: f,
        noise: g,
    })
}

/// Heading column and position columns of a measured entity.
fn columns(x: &MultiState2, variant: Variant, target: &Target) -> Result<(Option<usize>, usize)> {
    match target {
        Target::Robot(j) => Ok((Some(3 * j), 3 * j + 1)),
        Target::Landmark(id) => {
            let k = x
                .landmarks
                .get_index_of(id)
                .ok_or_else(|| Error::UnknownSubject(format!("landmark {id}")))?;
            let row = x.landmark_row(variant, k);
            Ok(match variant {
                Variant::Proposed => (Some(row), row + 1),
                Variant::Standard => (None, row),
            })
        }
    }
}

fn observation_rows(variant: Variant, x_hat: &MultiState2, s: &RelativeSubject) -> Result<DMatrix<f64>> {
    let q = body_vector(x_hat, s)?;
    let dh = range_bearing_jacobian(&q)?;
    let obs = robot(x_hat, s.observer)?;
    let rt = obs.rotation().transpose();
    let j = quarter_turn();
    let target = target_position(x_hat, s)?;
    let (target_heading, target_pos) = columns(x_hat, variant, &s.target)?;
    let o = 3 * s.observer;

    let mut m = DMatrix::zeros(2, x_hat.error_dim(variant));
    m.fixed_view_mut::<2, 2>(0, o + 1).copy_from(&(-rt));
    m.fixed_view_mut::<2, 2>(0, target_pos).copy_from(&rt);
    match variant {
        Variant::Proposed => {
            let c = rt * j * target;
            m.fixed_view_mut::<2, 1>(0, o).copy_from(&(-c));
            if let Some(col) = target_heading {
                m.fixed_view_mut::<2, 1>(0, col).copy_from(&c);
            }
        }
        Variant::Standard => {
            m.fixed_view_mut::<2, 1>(0, o).copy_from(&(-j * q));
        }
    }
    Ok(DMatrix::from_column_slice(2, 2, dh.as_slice()) * m)
}

/// Jacobian set of the centralized filter for one time step.
pub fn jac_multi(
    variant: Variant,
    x_hat: &MultiState2,
    inputs: &[OdometryInput2],
    subjects: &[RelativeSubject],
) -> Result<ModelJacobians> {
    let prop = transition_and_noise(variant, x_hat, inputs)?;
    let d = x_hat.error_dim(variant);
    let mut h = DMatrix::zeros(2 * subjects.len(), d);
    for (i, s) in subjects.iter().enumerate() {
        h.view_mut((2 * i, 0), (2, d))
            .copy_from(&observation_rows(variant, x_hat, s)?);
    }
    Ok(ModelJacobians {
        transition: prop.transition,
        noise: prop.noise,
        observation: h,
        measurement_noise: DMatrix::identity(2 * subjects.len(), 2 * subjects.len()),
    })
}

/// Global rotation (shared by every heading and anchor) and global
/// translation, in the variant's error coordinates.
pub fn unobservable_directions_multi(variant: Variant, x: &MultiState2) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(x.error_dim(variant), 3);
    let j = quarter_turn();
    let mut put = |row_heading: Option<usize>, row_pos: usize, p: &Vector2<f64>| {
        if let Some(r) = row_heading {
            u[(r, 0)] = 1.0;
        }
        u[(row_pos, 1)] = 1.0;
        u[(row_pos + 1, 2)] = 1.0;
        if variant == Variant::Standard {
            u.fixed_view_mut::<2, 1>(row_pos, 0).copy_from(&(j * p));
        }
    };
    for (i, r) in x.robots.iter().enumerate() {
        put(Some(3 * i), 3 * i + 1, &r.position);
    }
    for (k, l) in x.landmarks.values().enumerate() {
        let row = x.landmark_row(variant, k);
        match variant {
            Variant::Proposed => put(Some(row), row + 1, &l.position),
            Variant::Standard => put(None, row, &l.position),
        }
    }
    u
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiRobotModel {
    pub variant: Variant,
    pub noise: OdometryNoise,
}

impl MultiRobotModel {
    pub fn new(variant: Variant, noise: OdometryNoise) -> Self {
        Self { variant, noise }
    }
}

impl ErrorStateModel for MultiRobotModel {
    type State = MultiState2;
    type Input = Vec<OdometryInput2>;
    type Subject = RelativeSubject;

    fn error_dim(&self, x: &MultiState2) -> usize {
        x.error_dim(self.variant)
    }

    fn dynamics(
        &self,
        x: &MultiState2,
        u: &Vec<OdometryInput2>,
        w: &DVector<f64>,
    ) -> Result<MultiState2> {
        dynamics_multi(x, u, w)
    }

    fn process_noise(&self, _x: &MultiState2, u: &Vec<OdometryInput2>) -> Result<DMatrix<f64>> {
        let mut q = DMatrix::zeros(3 * u.len(), 3 * u.len());
        for (i, ui) in u.iter().enumerate() {
            q.fixed_view_mut::<3, 3>(3 * i, 3 * i)
                .copy_from(&self.noise.covariance(ui));
        }
        Ok(q)
    }

    fn propagation_jacobians(
        &self,
        x_hat: &MultiState2,
        u: &Vec<OdometryInput2>,
    ) -> Result<PropagationJacobians> {
        transition_and_noise(self.variant, x_hat, u)
    }

    fn error(&self, x: &MultiState2, x_hat: &MultiState2) -> Result<DVector<f64>> {
        match self.variant {
            Variant::Proposed => error_multi(x, x_hat),
            Variant::Standard => error_multi_standard(x, x_hat),
        }
    }

    fn retract(&self, x_hat: &MultiState2, e: &DVector<f64>) -> Result<MultiState2> {
        match self.variant {
            Variant::Proposed => retract_multi(x_hat, e),
            Variant::Standard => retract_multi_standard(x_hat, e),
        }
    }

    fn has_subject(&self, x: &MultiState2, s: &RelativeSubject) -> bool {
        s.observer < x.robots.len()
            && match s.target {
                Target::Robot(j) => j < x.robots.len(),
                Target::Landmark(id) => x.landmarks.contains_key(&id),
            }
    }

    fn observe(&self, x: &MultiState2, s: &RelativeSubject) -> Result<DVector<f64>> {
        Ok(observe_multi(x, s)?.to_vector())
    }

    fn observation_jacobian(&self, x_hat: &MultiState2, s: &RelativeSubject) -> Result<DMatrix<f64>> {
        observation_rows(self.variant, x_hat, s)
    }

    fn residual(&self, _s: &RelativeSubject, measured: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        let mut r = measured - predicted;
        r[1] = wrap_angle(r[1]);
        r
    }

    fn initialize_subject(
        &self,
        x: &MultiState2,
        s: &RelativeSubject,
        value: &DVector<f64>,
    ) -> Result<MultiState2> {
        let id = match s.target {
            Target::Landmark(id) => id,
            Target::Robot(j) => return Err(Error::UnknownSubject(format!("robot {j}"))),
        };
        if x.landmarks.contains_key(&id) {
            return Err(Error::DuplicateSubject(format!("landmark {id}")));
        }
        let obs = robot(x, s.observer)?;
        let z = RangeBearing::from_vector(value)?;
        let mut out = x.clone();
        out.landmarks.insert(
            id,
            AnchoredLandmark {
                anchor: obs.theta,
                position: obs.position + obs.rotation() * z.body_point(),
                source: s.observer,
            },
        );
        Ok(out)
    }

    fn unobservable_directions(&self, x: &MultiState2) -> DMatrix<f64> {
        unobservable_directions_multi(self.variant, x)
    }
}

/// Adds a landmark first seen by `observer`, anchored to its heading.
pub fn anchor_landmark(
    model: &MultiRobotModel,
    belief: &Belief<MultiState2>,
    id: LandmarkId,
    observer: usize,
    z: RangeBearing,
    noise: Matrix2<f64>,
) -> Result<Belief<MultiState2>> {
    let obs = Observation {
        subject: RelativeSubject::landmark(observer, id),
        value: z.to_vector(),
        noise: DMatrix::from_column_slice(2, 2, noise.as_slice()),
    };
    Ok(augment(model, belief, &obs)?.0)
}
