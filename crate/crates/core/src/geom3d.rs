//! Geometry substrate: centering, edge frames, projection, radial bases, alignment.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Below this norm a frame axis is treated as undefined.
pub const DEGENERATE_EPS: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("degenerate frame: {0}")]
    DegenerateFrame(&'static str),
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("invalid radial basis: {0}")]
    InvalidRbf(&'static str),
    #[error("point clouds differ in size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("empty point cloud")]
    Empty,
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn det3(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Applies `x -> m x + shift` to every point.
pub fn transform(points: &[Vec3], m: &Mat3, shift: Vec3) -> Vec<Vec3> {
    points
        .iter()
        .map(|&p| {
            let q = mat_vec(m, p);
            [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]
        })
        .collect()
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    scale(c, 1.0 / n)
}

/// Subtracts the centroid so every column mean is zero.
pub fn center_coordinates(points: &[Vec3]) -> Vec<Vec3> {
    let c = centroid(points);
    points.iter().map(|&p| sub(p, c)).collect()
}

/// Orthonormal frame attached to an ordered atom pair.
///
/// `e1` follows the pair displacement and transforms as a vector. `e2` is built
/// from a cross product of positions, so it is a pseudo-vector and flips under
/// improper transforms. `e3 = e1 x e2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl LocalFrame {
    pub fn axes(&self) -> [Vec3; 3] {
        [self.e1, self.e2, self.e3]
    }
}

/// Frame of the pair `(r_i, r_j)` from centered coordinates.
pub fn build_local_frame(r_i: Vec3, r_j: Vec3) -> Result<LocalFrame, GeomError> {
    let d = sub(r_i, r_j);
    let dn = norm(d);
    if dn < DEGENERATE_EPS {
        return Err(GeomError::DegenerateFrame("coincident points"));
    }
    let c = cross(r_i, r_j);
    let cn = norm(c);
    if cn < DEGENERATE_EPS {
        return Err(GeomError::DegenerateFrame(
            "points collinear with the origin",
        ));
    }
    let e1 = scale(d, 1.0 / dn);
    let e2 = scale(c, 1.0 / cn);
    let e3 = cross(e1, e2);
    Ok(LocalFrame { e1, e2, e3 })
}

pub fn project(v: Vec3, f: &LocalFrame) -> Vec3 {
    [dot(v, f.e1), dot(v, f.e2), dot(v, f.e3)]
}

pub fn tensorize(s: Vec3, f: &LocalFrame) -> Vec3 {
    let mut out = [0.0; 3];
    for (coef, axis) in s.iter().zip(f.axes()) {
        for k in 0..3 {
            out[k] += coef * axis[k];
        }
    }
    out
}

/// Gaussian radial basis with centers evenly spaced on `[0, cutoff]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfSpec {
    pub centers: usize,
    pub cutoff: f64,
    pub gamma: f64,
}

impl Default for RbfSpec {
    fn default() -> Self {
        Self {
            centers: 16,
            cutoff: 5.0,
            gamma: 10.0,
        }
    }
}

impl RbfSpec {
    pub fn new(centers: usize, cutoff: f64, gamma: f64) -> Result<Self, GeomError> {
        let spec = Self {
            centers,
            cutoff,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.centers < 2 {
            return Err(GeomError::InvalidRbf("need at least two centers"));
        }
        if !(self.cutoff > 0.0) {
            return Err(GeomError::InvalidRbf("cutoff must be positive"));
        }
        if !(self.gamma > 0.0) {
            return Err(GeomError::InvalidRbf("width must be positive"));
        }
        Ok(())
    }

    pub fn center(&self, k: usize) -> f64 {
        self.cutoff * k as f64 / (self.centers - 1) as f64
    }
}

pub fn rbf_expand(d: f64, spec: &RbfSpec) -> Result<Vec<f64>, GeomError> {
    if d < 0.0 {
        return Err(GeomError::NegativeDistance(d));
    }
    Ok((0..spec.centers)
        .map(|k| {
            let x = d - spec.center(k);
            (-spec.gamma * x * x).exp()
        })
        .collect())
}

/// Optimal proper rotation and RMSD between two point clouds after centering both.
///
/// The rotation maps centered `p` onto centered `q`.
pub fn kabsch_rmsd(p: &[Vec3], q: &[Vec3]) -> Result<(Mat3, f64), GeomError> {
    if p.len() != q.len() {
        return Err(GeomError::SizeMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(GeomError::Empty);
    }
    let pc = center_coordinates(p);
    let qc = center_coordinates(q);
    if pc == qc {
        return Ok((IDENTITY, 0.0));
    }
    let mut h = Matrix3::<f64>::zeros();
    for (a, b) in pc.iter().zip(&qc) {
        h += Vector3::from(*a) * Vector3::from(*b).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v_t.transpose() * correction * u.transpose();
    let rot: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]));
    let sq: f64 = pc
        .iter()
        .zip(&qc)
        .map(|(a, b)| {
            let ra = mat_vec(&rot, *a);
            let e = sub(ra, *b);
            dot(e, e)
        })
        .sum();
    Ok((rot, (sq / p.len() as f64).max(0.0).sqrt()))
}

pub fn rmsd(p: &[Vec3], q: &[Vec3]) -> Result<f64, GeomError> {
    kabsch_rmsd(p, q).map(|(_, r)| r)
}

/// Rotation matrix from a unit quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Mat3 {
    let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> Mat3 {
    use rand_distr::{Distribution, StandardNormal};
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    rotation_from_quaternion(q)
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Mirror through the plane `z = 0`.
pub const MIRROR_Z: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
