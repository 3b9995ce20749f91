//! Rotation arithmetic on SO(3).
//!
//! Rotations are stored as 3×3 matrices throughout the toolkit; unit
//! quaternions appear only inside Haar sampling. The [`Orth6D`] type is the
//! continuous 6-parameter representation (first two columns of a rotation
//! matrix) used as network input/output and mapped back to SO(3) by
//! Gram–Schmidt.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum So3Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// A 3×3 special-orthogonal matrix (det +1, orthonormal to 1e-9).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

/// Tolerance on the orthonormality residual and determinant of a [`Rotation`].
pub const ROTATION_TOL: f64 = 1e-9;

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and determinant before wrapping.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, So3Error> {
        let residual = (m.transpose() * m - Matrix3::identity()).norm();
        if residual > ROTATION_TOL {
            return Err(So3Error::DegenerateInput(format!(
                "matrix is not orthonormal (residual {residual:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(So3Error::DegenerateInput(format!(
                "matrix determinant is {det} (expected +1)"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix known to be special-orthogonal by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-6);
        Rotation(m)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Rotation(nalgebra::Rotation3::from_axis_angle(&axis, angle_rad).into_inner())
    }

    /// Rotation about the z axis by `deg` degrees.
    pub fn rot_z_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), deg.to_radians())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Row-major flattening of the matrix.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, So3Error> {
        Self::from_matrix(Matrix3::new(
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
        ))
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_residual(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// First two columns of a rotation matrix, possibly unnormalized when emitted
/// by a network. Layout: `[c1x, c1y, c1z, c2x, c2y, c2z]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orth6D(pub [f64; 6]);

/// Haar-uniform random rotation, sampled through a unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if norm > 1e-12 {
            let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            return Rotation(q.to_rotation_matrix().into_inner());
        }
    }
}

/// Rotation about a uniformly random axis by an angle drawn from
/// |N(0, sigma_deg²)| degrees.
pub fn random_perturbation<R: Rng + ?Sized>(sigma_deg: f64, rng: &mut R) -> Rotation {
    let axis = loop {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let v = Vector3::new(x, y, z);
        if v.norm() > 1e-12 {
            break v;
        }
    };
    let angle: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_deg;
    Rotation::from_axis_angle(&axis, angle.abs().to_radians())
}

/// Geodesic distance between two rotations in degrees, in [0, 180].
///
/// Evaluates arccos((tr(aᵀb) − 1) / 2) through its atan2 form, which keeps
/// full precision near 0 and 180 degrees.
pub fn geodesic_deg(a: &Rotation, b: &Rotation) -> f64 {
    let q = a.0.transpose() * b.0;
    let c = ((q.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sx = (q[(2, 1)] - q[(1, 2)]) / 2.0;
    let sy = (q[(0, 2)] - q[(2, 0)]) / 2.0;
    let sz = (q[(1, 0)] - q[(0, 1)]) / 2.0;
    let s = (sx * sx + sy * sy + sz * sz).sqrt();
    s.atan2(c).to_degrees()
}

/// Sum of absolute entrywise differences between two 3×3 matrices.
pub fn entrywise_l1(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += (a[(i, j)] - b[(i, j)]).abs();
        }
    }
    acc
}

/// Gram–Schmidt map from the 6D representation to a rotation matrix.
///
/// Fails when the first 3-vector is (numerically) zero or the second is
/// parallel to the first.
pub fn orth6d_to_rotation(v: &Orth6D) -> Result<Rotation, So3Error> {
    let a = Vector3::new(v.0[0], v.0[1], v.0[2]);
    let b = Vector3::new(v.0[3], v.0[4], v.0[5]);
    let na = a.norm();
    if na <= 1e-12 {
        return Err(So3Error::DegenerateInput(
            "first 6D column has near-zero norm".into(),
        ));
    }
    let c1 = a / na;
    let u2 = b - c1.dot(&b) * c1;
    let nu = u2.norm();
    if nu <= 1e-12 {
        return Err(So3Error::DegenerateInput(
            "second 6D column is parallel to the first".into(),
        ));
    }
    let c2 = u2 / nu;
    let c3 = c1.cross(&c2);
    Ok(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[
        c1, c2, c3,
    ])))
}

/// First two columns of the rotation matrix; inverse of [`orth6d_to_rotation`].
pub fn rotation_to_orth6d(r: &Rotation) -> Orth6D {
    let m = &r.0;
    Orth6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// Nearest rotation in Frobenius norm, via SVD with determinant correction.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation, So3Error> {
    let mut svd = m.svd(true, true);
    svd.sort_by_singular_values();
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(So3Error::DegenerateInput(
                "SVD of the input did not converge".into(),
            ))
        }
    };
    if svd.singular_values[2] <= 1e-12 * svd.singular_values[0].max(1.0) {
        return Err(So3Error::DegenerateInput(
            "matrix is numerically singular".into(),
        ));
    }
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the column of U paired with the smallest singular value.
        let mut u = u;
        for i in 0..3 {
            u[(i, 2)] = -u[(i, 2)];
        }
        r = u * v_t;
    }
    Ok(Rotation::from_matrix_unchecked(r))
}
