//! Rotation kernel: axis rotation matrices, Euler composition, application to
//! point sets, and the analytic gradient of a loss with respect to the three
//! Euler angles.
//!
//! Conventions: points are column vectors, rotations act as `p ↦ M·p`, and the
//! composed rotation is `M = R_x(θx)·R_y(θy)·R_z(θz)` in exactly that order.
//! Angles are 2π-periodic everywhere; [`wrap_angle`] gives the canonical
//! representative in `[−π, π)` with `wrap(π) = −π`.

use crate::error::{Error, Result};
use crate::real::Real;

pub type Vec3<S> = [S; 3];
pub type Mat3<S> = [[S; 3]; 3];

/// Euler angle triple `(θx, θy, θz)` in radians.
///
/// Values outside `[−π, π)` are meaningful (composition is 2π-periodic);
/// everything this crate stores or serializes is first canonicalized with
/// [`Euler::wrap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Euler<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Euler<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Euler { x, y, z }
    }

    pub fn zero() -> Self {
        Euler {
            x: S::zero(),
            y: S::zero(),
            z: S::zero(),
        }
    }

    pub fn from_array(a: [S; 3]) -> Self {
        Euler {
            x: a[0],
            y: a[1],
            z: a[2],
        }
    }

    pub fn as_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    /// Canonical representative with every component in `[−π, π)`.
    pub fn wrap(self) -> Self {
        Euler {
            x: wrap_angle(self.x),
            y: wrap_angle(self.y),
            z: wrap_angle(self.z),
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A labeled point set: the unit of all processing in this crate.
#[derive(Clone, Debug)]
pub struct PointCloud<S> {
    /// Sample identifier, unique within a dataset.
    pub id: u64,
    /// Class index in `[0, K)`.
    pub label: usize,
    /// One row per point.
    pub points: Vec<[S; 3]>,
}

/// Rotation axis selector for [`axis_rotation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

pub fn identity3<S: Real>() -> Mat3<S> {
    let (o, l) = (S::zero(), S::one());
    [[l, o, o], [o, l, o], [o, o, l]]
}

pub fn mat_mul<S: Real>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut c = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn mat_vec<S: Real>(m: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn transpose<S: Real>(m: &Mat3<S>) -> Mat3<S> {
    let mut t = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn det3<S: Real>(m: &Mat3<S>) -> S {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `‖MᵀM − I‖∞` — the orthonormality defect used by the rotation invariants.
pub fn ortho_defect<S: Real>(m: &Mat3<S>) -> S {
    let g = mat_mul(&transpose(m), m);
    let mut worst = S::zero();
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { S::one() } else { S::zero() };
            let d = (g[i][j] - target).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Standard right-handed rotation about one coordinate axis; `R(0) = I`.
pub fn axis_rotation<S: Real>(axis: Axis, theta: S) -> Result<Mat3<S>> {
    if !theta.is_finite() {
        return Err(Error::invalid_argument(format!(
            "rotation angle must be finite, got {theta}"
        )));
    }
    Ok(rot(axis, theta))
}

/// Element-wise derivative `dR/dθ` of [`axis_rotation`].
pub fn axis_rotation_derivative<S: Real>(axis: Axis, theta: S) -> Result<Mat3<S>> {
    if !theta.is_finite() {
        return Err(Error::invalid_argument(format!(
            "rotation angle must be finite, got {theta}"
        )));
    }
    Ok(drot(axis, theta))
}

fn rot<S: Real>(axis: Axis, theta: S) -> Mat3<S> {
    let (s, c) = theta.sin_cos();
    let (o, l) = (S::zero(), S::one());
    match axis {
        Axis::X => [[l, o, o], [o, c, -s], [o, s, c]],
        Axis::Y => [[c, o, s], [o, l, o], [-s, o, c]],
        Axis::Z => [[c, -s, o], [s, c, o], [o, o, l]],
    }
}

fn drot<S: Real>(axis: Axis, theta: S) -> Mat3<S> {
    let (s, c) = theta.sin_cos();
    let o = S::zero();
    match axis {
        Axis::X => [[o, o, o], [o, -s, -c], [o, c, -s]],
        Axis::Y => [[-s, o, c], [o, o, o], [-c, o, -s]],
        Axis::Z => [[-s, -c, o], [c, -s, o], [o, o, o]],
    }
}

/// `M = R_x(θx)·R_y(θy)·R_z(θz)`, left-associated.
pub fn compose_euler<S: Real>(angles: Euler<S>) -> Mat3<S> {
    let rx = rot(Axis::X, angles.x);
    let ry = rot(Axis::Y, angles.y);
    let rz = rot(Axis::Z, angles.z);
    mat_mul(&mat_mul(&rx, &ry), &rz)
}

/// Rotates every point: `p ↦ M·p`.
pub fn rotate_points<S: Real>(m: &Mat3<S>, points: &[[S; 3]]) -> Vec<[S; 3]> {
    points.iter().map(|p| mat_vec(m, p)).collect()
}

/// Rotates a cloud, preserving id and label.
pub fn apply_rotation<S: Real>(m: &Mat3<S>, cloud: &PointCloud<S>) -> PointCloud<S> {
    PointCloud {
        id: cloud.id,
        label: cloud.label,
        points: rotate_points(m, &cloud.points),
    }
}

/// Gradient `(∂L/∂θx, ∂L/∂θy, ∂L/∂θz)` of a scalar loss through the rotated
/// points `P̂ = M(Θ)·P`, given the upstream gradient `∂L/∂P̂`.
///
/// Uses the chain-rule products `(∂R_x/∂θx)·R_y·R_z`, `R_x·(∂R_y/∂θy)·R_z`
/// and `R_x·R_y·(∂R_z/∂θz)` contracted against `∂L/∂P̂`.
pub fn grad_euler<S: Real>(
    angles: Euler<S>,
    points: &[[S; 3]],
    dl_dphat: &[[S; 3]],
) -> Result<[S; 3]> {
    if points.len() != dl_dphat.len() {
        return Err(Error::invalid_argument(format!(
            "upstream gradient rows ({}) do not match point rows ({})",
            dl_dphat.len(),
            points.len()
        )));
    }
    let rx = rot(Axis::X, angles.x);
    let ry = rot(Axis::Y, angles.y);
    let rz = rot(Axis::Z, angles.z);
    let dx = mat_mul(&mat_mul(&drot(Axis::X, angles.x), &ry), &rz);
    let dy = mat_mul(&mat_mul(&rx, &drot(Axis::Y, angles.y)), &rz);
    let dz = mat_mul(&mat_mul(&rx, &ry), &drot(Axis::Z, angles.z));

    let mut g = [S::zero(); 3];
    for (p, u) in points.iter().zip(dl_dphat) {
        for (k, a) in [&dx, &dy, &dz].into_iter().enumerate() {
            let ap = mat_vec(a, p);
            g[k] += u[0] * ap[0] + u[1] * ap[1] + u[2] * ap[2];
        }
    }
    Ok(g)
}

/// Reduces an angle to `[−π, π)`; `wrap(π) = −π` by convention, and exact
/// multiples of 2π map to exactly 0.
pub fn wrap_angle<S: Real>(t: S) -> S {
    let two_pi = S::PI() + S::PI();
    let mut r = t - two_pi * (t / two_pi).round();
    if r >= S::PI() {
        r -= two_pi;
    }
    if r < -S::PI() {
        r += two_pi;
    }
    r
}
