//! Rotations in two and three dimensions and the exponential maps of the
//! extended special Euclidean groups `SE_{1+K}(2)` and `SE_{1+K}(3)`.
//!
//! An element of `SE_{1+K}(n)` packs one rotation with `K + 1` translation
//! blocks: block 0 is the robot position, blocks `1..=K` are landmarks. All
//! blocks are rotated together, which is what makes the exponential of this
//! group a suitable retraction for SLAM states.
//!
//! Only the pieces a filter needs are provided: exponentials, composition and
//! inverses. There is deliberately no logarithm of `SE_{1+K}(n)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Angular threshold below which the `SE_{1+K}` coefficients switch to Taylor
/// expansions.
pub const SEK_TAYLOR_THRESHOLD: f64 = 1e-4;

/// Angular threshold below which the Rodrigues coefficients switch to Taylor
/// expansions.
pub const SO3_TAYLOR_THRESHOLD: f64 = 1e-6;

/// The planar quarter-turn `[[0, -1], [1, 0]]`.
pub fn quarter_turn() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Skew-symmetric matrix of a rotation coordinate: `omega * J` for a scalar,
/// the cross-product matrix for a 3-vector.
pub fn skew(omega: &[f64]) -> Result<DMatrix<f64>> {
    match omega.len() {
        1 => Ok(DMatrix::from_column_slice(2, 2, skew2(omega[0]).as_slice())),
        3 => {
            let w = skew3(&Vector3::new(omega[0], omega[1], omega[2]));
            Ok(DMatrix::from_column_slice(3, 3, w.as_slice()))
        }
        n => Err(Error::InvalidDimension {
            expected: 3,
            actual: n,
        }),
    }
}

pub fn skew2(omega: f64) -> Matrix2<f64> {
    quarter_turn() * omega
}

pub fn skew3(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite value in {values:?}")))
    }
}

/// A planar rotation stored as its angle, always wrapped to `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation2 {
    theta: f64,
}

impl Rotation2 {
    pub fn new(theta: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self { theta: 0.0 }
    }

    pub fn angle(&self) -> f64 {
        self.theta
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn compose(&self, other: &Rotation2) -> Rotation2 {
        Rotation2::new(self.theta + other.theta)
    }

    pub fn inverse(&self) -> Rotation2 {
        Rotation2::new(-self.theta)
    }

    pub fn rotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.matrix() * v
    }
}

/// A 3D rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3 {
    matrix: Matrix3<f64>,
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Accepts a matrix that is orthonormal with unit determinant within `1e-10`.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self> {
        check_finite(matrix.as_slice())?;
        let gram = matrix.transpose() * matrix - Matrix3::identity();
        if gram.norm() > 1e-10 || (matrix.determinant() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(
                "matrix is not a proper rotation".to_string(),
            ));
        }
        Ok(Self { matrix })
    }

    /// Projects an arbitrary matrix onto the closest rotation (polar decomposition).
    pub fn from_matrix_projected(matrix: Matrix3<f64>) -> Result<Self> {
        check_finite(matrix.as_slice())?;
        let svd = matrix.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Numerical("SVD failed".to_string())),
        };
        let mut fix = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            fix[(2, 2)] = -1.0;
        }
        Ok(Self {
            matrix: u * fix * v_t,
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Composition, re-orthonormalized when drift exceeds `1e-12`.
    pub fn compose(&self, other: &Rotation3) -> Rotation3 {
        let product = self.matrix * other.matrix;
        let drift = (product.transpose() * product - Matrix3::identity()).norm();
        if drift > 1e-12 {
            Rotation3::from_matrix_projected(product).unwrap_or(Rotation3 { matrix: product })
        } else {
            Rotation3 { matrix: product }
        }
    }

    pub fn inverse(&self) -> Rotation3 {
        Rotation3 {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * v
    }
}

pub fn exp_so2(theta: f64) -> Result<Rotation2> {
    check_finite(&[theta])?;
    Ok(Rotation2::new(theta))
}

/// Rodrigues' formula, with Taylor coefficients below [`SO3_TAYLOR_THRESHOLD`].
pub fn exp_so3(omega: &Vector3<f64>) -> Result<Rotation3> {
    check_finite(omega.as_slice())?;
    let angle = omega.norm();
    let (a, b) = if angle < SO3_TAYLOR_THRESHOLD {
        let a2 = angle * angle;
        (1.0 - a2 / 6.0, 0.5 - a2 / 24.0)
    } else {
        (angle.sin() / angle, one_minus_cos_over_sq(angle))
    };
    let w = skew3(omega);
    Ok(Rotation3 {
        matrix: Matrix3::identity() + w * a + w * w * b,
    })
}

/// Tangent vector of `SE_{1+K}(n)`: rotation coordinates then `K + 1`
/// translation blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSEk<R, V> {
    pub rot: R,
    pub blocks: Vec<V>,
}

/// Element of `SE_{1+K}(n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElementSEk<R, V> {
    pub rotation: R,
    pub blocks: Vec<V>,
}

pub type Tangent2 = TangentSEk<f64, Vector2<f64>>;
pub type Tangent3 = TangentSEk<Vector3<f64>, Vector3<f64>>;
pub type SE2k = GroupElementSEk<Rotation2, Vector2<f64>>;
pub type SE3k = GroupElementSEk<Rotation3, Vector3<f64>>;

impl Tangent2 {
    /// Splits a flat vector `(e_rot, e_0, ..., e_K)` into its blocks.
    pub fn from_flat(e: &[f64]) -> Result<Self> {
        if e.is_empty() || !(e.len() - 1).is_multiple_of(2) {
            return Err(Error::InvalidDimension {
                expected: 3,
                actual: e.len(),
            });
        }
        Ok(Self {
            rot: e[0],
            blocks: e[1..]
                .chunks_exact(2)
                .map(|c| Vector2::new(c[0], c[1]))
                .collect(),
        })
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.blocks.len());
        out.push(self.rot);
        for b in &self.blocks {
            out.extend_from_slice(b.as_slice());
        }
        DVector::from_vec(out)
    }
}

impl Tangent3 {
    pub fn from_flat(e: &[f64]) -> Result<Self> {
        if e.len() < 3 || !(e.len() - 3).is_multiple_of(3) {
            return Err(Error::InvalidDimension {
                expected: 6,
                actual: e.len(),
            });
        }
        Ok(Self {
            rot: Vector3::new(e[0], e[1], e[2]),
            blocks: e[3..]
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        })
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(3 + 3 * self.blocks.len());
        out.extend_from_slice(self.rot.as_slice());
        for b in &self.blocks {
            out.extend_from_slice(b.as_slice());
        }
        DVector::from_vec(out)
    }
}

/// The matrix `A(theta)` mapping a planar translation coordinate to the
/// translation part of the `SE(2)` exponential.
pub fn se2_left_jacobian(theta: f64) -> Matrix2<f64> {
    let (a, b) = if theta.abs() < SEK_TAYLOR_THRESHOLD {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0)
    } else {
        (theta.sin() / theta, one_minus_cos_over_sq(theta) * theta)
    };
    Matrix2::new(a, -b, b, a)
}

/// Exponential of `SE_{1+K}(2)`.
pub fn exp_sek2(e: &Tangent2) -> Result<SE2k> {
    check_finite(&[e.rot])?;
    for b in &e.blocks {
        check_finite(b.as_slice())?;
    }
    let a = se2_left_jacobian(e.rot);
    Ok(SE2k {
        rotation: exp_so2(e.rot)?,
        blocks: e.blocks.iter().map(|b| a * b).collect(),
    })
}

/// Coefficients `(c2, c3)` multiplying `S^2` and `S^3` in the closed-form
/// exponential of `SE_{1+K}(3)`.
pub fn sek3_coefficients(angle: f64) -> (f64, f64) {
    let a2 = angle * angle;
    if angle < SEK_TAYLOR_THRESHOLD {
        (0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0)
    } else if angle < 0.1 {
        // (angle - sin) cancels badly here; the series converges in 5 terms.
        let c3 = 1.0 / 6.0
            - a2 / 120.0
            + a2 * a2 / 5040.0
            - a2 * a2 * a2 / 362_880.0
            + a2 * a2 * a2 * a2 / 39_916_800.0;
        (one_minus_cos_over_sq(angle), c3)
    } else {
        (
            one_minus_cos_over_sq(angle),
            (angle - angle.sin()) / (a2 * angle),
        )
    }
}

/// `(1 - cos a) / a^2` through the half-angle identity, free of cancellation.
fn one_minus_cos_over_sq(angle: f64) -> f64 {
    let s = (0.5 * angle).sin() / angle;
    2.0 * s * s
}

/// Exponential of `SE_{1+K}(3)`.
///
/// The translation blocks of `I + S + c2 S^2 + c3 S^3` reduce to
/// `(I + c2 W + c3 W^2) e_i` with `W = skew(e_rot)`.
pub fn exp_sek3(e: &Tangent3) -> Result<SE3k> {
    check_finite(e.rot.as_slice())?;
    for b in &e.blocks {
        check_finite(b.as_slice())?;
    }
    let (c2, c3) = sek3_coefficients(e.rot.norm());
    let w = skew3(&e.rot);
    let v = Matrix3::identity() + w * c2 + w * w * c3;
    Ok(SE3k {
        rotation: exp_so3(&e.rot)?,
        blocks: e.blocks.iter().map(|b| v * b).collect(),
    })
}

impl SE2k {
    pub fn identity(n_blocks: usize) -> Self {
        Self {
            rotation: Rotation2::identity(),
            blocks: vec![Vector2::zeros(); n_blocks],
        }
    }

    pub fn compose(&self, other: &SE2k) -> Result<SE2k> {
        same_layout(self.blocks.len(), other.blocks.len())?;
        Ok(SE2k {
            rotation: self.rotation.compose(&other.rotation),
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| self.rotation.rotate(b) + a)
                .collect(),
        })
    }

    pub fn inverse(&self) -> SE2k {
        let inv = self.rotation.inverse();
        SE2k {
            rotation: inv,
            blocks: self.blocks.iter().map(|b| -inv.rotate(b)).collect(),
        }
    }

    /// Homogeneous `(2 + n) x (2 + n)` embedding.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.blocks.len();
        let mut m = DMatrix::identity(2 + n, 2 + n);
        m.view_mut((0, 0), (2, 2)).copy_from(&self.rotation.matrix());
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((0, 2 + i), (2, 1)).copy_from(b);
        }
        m
    }
}

impl SE3k {
    pub fn identity(n_blocks: usize) -> Self {
        Self {
            rotation: Rotation3::identity(),
            blocks: vec![Vector3::zeros(); n_blocks],
        }
    }

    pub fn compose(&self, other: &SE3k) -> Result<SE3k> {
        same_layout(self.blocks.len(), other.blocks.len())?;
        Ok(SE3k {
            rotation: self.rotation.compose(&other.rotation),
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| self.rotation.rotate(b) + a)
                .collect(),
        })
    }

    pub fn inverse(&self) -> SE3k {
        let inv = self.rotation.inverse();
        SE3k {
            rotation: inv,
            blocks: self.blocks.iter().map(|b| -inv.rotate(b)).collect(),
        }
    }

    /// Homogeneous `(3 + n) x (3 + n)` embedding.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.blocks.len();
        let mut m = DMatrix::identity(3 + n, 3 + n);
        m.view_mut((0, 0), (3, 3)).copy_from(self.rotation.matrix());
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((0, 3 + i), (3, 1)).copy_from(b);
        }
        m
    }
}

fn same_layout(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::InvalidDimension {
            expected: a,
            actual: b,
        })
    }
}
