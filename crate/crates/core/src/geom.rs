//! Rotation algebra, encodings, and kernel functions shared by every other
//! module.
//!
//! Rotations live in three representations:
//! - [`Rot3`]: an orthonormal 3x3 matrix with det +1, the working form.
//! - [`Rot6d`]: the first two columns of a rotation matrix before
//!   Gram-Schmidt, the continuous form predicted by deformation fields.
//! - [`AxisAngle`]: an element of so(3), radians times unit axis, used by the
//!   rotation loss and its tests.
//!
//! Optimizable per-Gaussian rotation is stored as an unnormalized quaternion
//! (normalized on use); conversion and its reverse-mode gradient are here too.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot3 {
    m: Mat3,
}

impl Rot3 {
    pub fn identity() -> Self {
        Rot3 {
            m: Mat3::identity(),
        }
    }

    /// Wrap a matrix that is already orthonormal with det +1.
    ///
    /// Debug builds assert the invariant within 1e-9; release builds trust
    /// the caller (all constructors in this crate go through `so3_exp`,
    /// `rot_from_6d`, `rotation_average`, or quaternion conversion, which
    /// produce valid members by construction).
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        debug_assert!(
            ((m.transpose() * m) - Mat3::identity()).norm() < 1e-7 && (m.determinant() - 1.0).abs() < 1e-7,
            "matrix is not a rotation"
        );
        Rot3 { m }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn transpose(&self) -> Rot3 {
        Rot3 {
            m: self.m.transpose(),
        }
    }

    /// Rotation about the z axis, a convenience for tests and scene synthesis.
    pub fn rot_z(angle: f64) -> Self {
        so3_exp(&AxisAngle::new(0.0, 0.0, angle))
    }

    /// Deviation from orthonormality, `max(|R^T R - I|, |det - 1|)`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.m.transpose() * self.m - Mat3::identity()).abs().max();
        e.max((self.m.determinant() - 1.0).abs())
    }
}

impl std::ops::Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3 { m: self.m * rhs.m }
    }
}

impl std::ops::Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.m * rhs
    }
}

/// Six-number rotation representation: two stacked 3-vectors which decode to
/// a rotation via Gram-Schmidt. Continuous in the parameters, which is why
/// field outputs use it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6d {
    pub v: [f64; 6],
}

impl Rot6d {
    pub fn new(v: [f64; 6]) -> Self {
        Rot6d { v }
    }

    /// The encoding of the identity rotation, `(1,0,0, 0,1,0)`.
    pub fn identity() -> Self {
        Rot6d {
            v: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn a(&self) -> Vec3 {
        Vec3::new(self.v[0], self.v[1], self.v[2])
    }

    pub fn b(&self) -> Vec3 {
        Vec3::new(self.v[3], self.v[4], self.v[5])
    }
}

/// An element of the Lie algebra so(3): rotation angle times unit axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub w: Vec3,
}

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle {
            w: Vec3::new(x, y, z),
        }
    }

    pub fn from_vec(w: Vec3) -> Self {
        AxisAngle { w }
    }

    pub fn angle(&self) -> f64 {
        self.w.norm()
    }
}

fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map so(3) -> SO(3) by the Rodrigues formula.
///
/// Total function; `so3_exp(0) = I`. Small angles switch to the Taylor
/// expansion of the coefficients to avoid 0/0.
pub fn so3_exp(w: &AxisAngle) -> Rot3 {
    let theta2 = w.w.norm_squared();
    let theta = theta2.sqrt();
    // sin(t)/t and (1-cos(t))/t^2 with series fallback below sqrt(eps)
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(&w.w);
    Rot3 {
        m: Mat3::identity() + a * k + b * (k * k),
    }
}

/// Logarithmic map SO(3) -> so(3).
///
/// Errors with [`Error::AngleNearPi`] when `trace(R) <= -1 + 1e-6`; training
/// rotations are incremental and never reach pi, so hitting the guard
/// signals a schedule bug upstream rather than something to branch around.
pub fn so3_log(r: &Rot3) -> Result<AxisAngle> {
    let m = r.matrix();
    let trace = m.trace();
    if trace <= -1.0 + 1e-6 {
        return Err(Error::AngleNearPi { trace });
    }
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let v = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    // v = 2 sin(theta) * axis; scale = theta / (2 sin theta)
    let scale = if theta < 1e-8 {
        0.5 + theta * theta / 12.0
    } else {
        theta / (2.0 * theta.sin())
    };
    Ok(AxisAngle::from_vec(scale * v))
}

/// Decode a 6d rotation by Gram-Schmidt on the two embedded vectors.
///
/// `c1 = normalize(a)`, `c2 = normalize(b - (c1.b) c1)`, `c3 = c1 x c2`.
/// Invariant to positive rescaling of either vector. Fails with
/// [`Error::DegenerateSixD`] when the vectors are parallel or near zero.
pub fn rot_from_6d(v: &Rot6d) -> Result<Rot3> {
    let a = v.a();
    let b = v.b();
    let na = a.norm();
    if na < 1e-9 {
        return Err(Error::DegenerateSixD);
    }
    let c1 = a / na;
    let u2 = b - c1.dot(&b) * c1;
    let nu = u2.norm();
    if nu < 1e-9 || b.norm() < 1e-9 {
        return Err(Error::DegenerateSixD);
    }
    // reject near-parallel inputs: the rejection angle must exceed ~1e-6 rad
    if nu / b.norm() < 1e-6 {
        return Err(Error::DegenerateSixD);
    }
    let c2 = u2 / nu;
    let c3 = c1.cross(&c2);
    Ok(Rot3 {
        m: Mat3::from_columns(&[c1, c2, c3]),
    })
}

/// Reverse-mode gradient of [`rot_from_6d`]: given `dL/dR` (by matrix entry),
/// returns `dL/dv` for the six raw parameters.
pub fn rot_from_6d_backward(v: &Rot6d, grad_r: &Mat3) -> Result<[f64; 6]> {
    let a = v.a();
    let b = v.b();
    let na = a.norm();
    if na < 1e-9 {
        return Err(Error::DegenerateSixD);
    }
    let c1 = a / na;
    let u2 = b - c1.dot(&b) * c1;
    let nu = u2.norm();
    if nu < 1e-9 {
        return Err(Error::DegenerateSixD);
    }
    let c2 = u2 / nu;

    let mut g_c1: Vec3 = grad_r.column(0).into();
    let mut g_c2: Vec3 = grad_r.column(1).into();
    let g_c3: Vec3 = grad_r.column(2).into();

    // c3 = c1 x c2: scalar-triple-product identities route the gradient
    g_c1 += c2.cross(&g_c3);
    g_c2 += g_c3.cross(&c1);

    // c2 = u2 / |u2|
    let g_u2 = (g_c2 - c2 * c2.dot(&g_c2)) / nu;

    // u2 = b - (c1.b) c1
    let g_b = g_u2 - c1 * c1.dot(&g_u2);
    g_c1 += -(c1.dot(&g_u2)) * b - (c1.dot(&b)) * g_u2;

    // c1 = a / |a|
    let g_a = (g_c1 - c1 * c1.dot(&g_c1)) / na;

    Ok([g_a.x, g_a.y, g_a.z, g_b.x, g_b.y, g_b.z])
}

/// Chordal mean of rotations: project the arithmetic mean onto SO(3) via SVD.
///
/// Minimizes the summed squared Frobenius distance to the inputs. Errors
/// with [`Error::DegenerateMean`] when the mean matrix is rank deficient
/// (near-antipodal inputs), where the projection is not unique.
pub fn rotation_average(rs: &[Rot3]) -> Result<Rot3> {
    assert!(!rs.is_empty(), "rotation_average needs a non-empty list");
    let mut mean = Mat3::zeros();
    for r in rs {
        mean += r.matrix();
    }
    mean /= rs.len() as f64;

    let svd = mean.svd(true, true);
    let sigma_min = svd.singular_values.min();
    if sigma_min < 1e-9 {
        return Err(Error::DegenerateMean { sigma_min });
    }
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let det = (u * vt).determinant();
    let d = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det.signum()));
    Ok(Rot3 { m: u * d * vt })
}

/// NeRF-style positional encoding with `2^k * pi` frequency scaling.
///
/// Output layout is coordinate-major: for each input coordinate, the pairs
/// `(sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x))`.
pub fn positional_encoding(x: &[f64], freqs: usize) -> Vec<f64> {
    assert!(freqs >= 1, "need at least one frequency");
    let mut out = Vec::with_capacity(2 * freqs * x.len());
    for &xi in x {
        let mut f = std::f64::consts::PI;
        for _ in 0..freqs {
            let arg = f * xi;
            out.push(arg.sin());
            out.push(arg.cos());
            f *= 2.0;
        }
    }
    out
}

/// Encoded length for a `dim`-vector at `freqs` frequencies.
pub fn encoding_len(dim: usize, freqs: usize) -> usize {
    2 * freqs * dim
}

/// Radial basis weight `exp(-d^2 / (2 o^2))`, the spatial kernel of the
/// refinement weights. Equals 1 at distance zero and decays monotonically.
pub fn rbf_weight(d: f64, o: f64) -> Result<f64> {
    if o <= 0.0 {
        return Err(Error::NonPositiveRadius(o));
    }
    Ok((-d * d / (2.0 * o * o)).exp())
}

/// Covariance of an anisotropic Gaussian from rotation and per-axis scales:
/// `Sigma = R S S^T R^T` with `S = diag(s)`. Symmetric positive definite with
/// eigenvalues `s_i^2`.
pub fn covariance_from_rs(r: &Rot3, s: &Vec3) -> Result<Mat3> {
    for &si in s.iter() {
        if si <= 0.0 {
            return Err(Error::NonPositiveScale(si));
        }
    }
    let d = Mat3::from_diagonal(&Vec3::new(s.x * s.x, s.y * s.y, s.z * s.z));
    let m = r.matrix() * d * r.matrix().transpose();
    // enforce exact symmetry against rounding in the triple product
    Ok(0.5 * (m + m.transpose()))
}

/// Rotation matrix from an unnormalized quaternion `(w, x, y, z)`.
///
/// The quaternion is normalized on use, so optimizer steps can leave it
/// unnormalized between updates.
pub fn quat_to_mat(q: &[f64; 4]) -> Rot3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Rot3 {
        m: Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ),
    }
}

/// Reverse-mode gradient of [`quat_to_mat`]: `dL/dq` for the raw
/// (unnormalized) quaternion given `dL/dR` by entry.
pub fn quat_to_mat_backward(q: &[f64; 4], grad_r: &Mat3) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = grad_r;

    // dR/d(unit quaternion components), assembled entry by entry
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);

    // chain through normalization: u = q/|q|, du/dq = (I - u u^T)/|q|
    let gu = [gw, gx, gy, gz];
    let u = [w, x, y, z];
    let dot: f64 = gu.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gu[i] - u[i] * dot) / n;
    }
    out
}
