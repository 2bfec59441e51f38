//! Rigid transforms, the pinhole camera, and weighted SE(3) fitting.
//!
//! Every value here is an immutable `Copy` type; all operations are pure.

use nalgebra::{Matrix3, Quaternion, Rotation3, SymmetricEigen, UnitQuaternion, SVD};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;
/// Relative second-singular-value threshold below which a source cloud is collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-9;
/// Tolerance used when validating rotation matrices handed in from outside.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid weight {weight} at index {index}")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("source has {source_len} points but target has {target_len} and weights {weights_len}")]
    LengthMismatch {
        source_len: usize,
        target_len: usize,
        weights_len: usize,
    },
}

/// An element of SE(3): `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform from a rotation matrix and translation.
    ///
    /// Matrices within 1e-6 of orthonormal are projected back onto SO(3);
    /// anything further off (or a reflection) is rejected.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation("non-finite entry".into()));
        }
        let err = orthonormality_error(&rotation);
        let rotation = if err <= ORTHONORMAL_TOLERANCE {
            rotation
        } else if err <= 1e-6 {
            nearest_rotation(&rotation)
        } else {
            return Err(GeometryError::InvalidRotation(format!(
                "matrix deviates from orthonormal by {err:e}"
            )));
        };
        if rotation.determinant() < 0.0 {
            return Err(GeometryError::InvalidRotation("determinant is negative".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation given as a rotation vector (axis times angle in radians).
    pub fn from_axis_angle(axis_angle: Vector3, translation: Vector3) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    pub fn axis_angle(&self) -> Vector3 {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotates a displacement; translation does not act on vectors.
    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest absolute difference over the 12 entries of `[R | t]`.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }

    /// Frobenius norm of the difference of the 3×4 matrices `[R | t]`.
    pub fn frobenius_distance(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).norm_squared();
        let t = (self.translation - other.translation).norm_squared();
        (r + t).sqrt()
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.max_abs_diff(&RigidTransform::identity()) <= tol
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    gram.max(det)
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis_angle: Option<[f64; 3]>,
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        let rows = [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ];
        TransformRepr {
            translation: self.translation.into(),
            matrix: Some(rows),
            axis_angle: None,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = TransformRepr::deserialize(deserializer)?;
        let translation = Vector3::from(repr.translation);
        match (repr.matrix, repr.axis_angle) {
            (Some(_), Some(_)) => Err(D::Error::custom(
                "give either `matrix` or `axis_angle`, not both",
            )),
            (Some(rows), None) => {
                let m = Matrix3::from_fn(|i, j| rows[i][j]);
                RigidTransform::from_parts(m, translation).map_err(D::Error::custom)
            }
            (None, Some(aa)) => {
                if !aa.iter().chain(repr.translation.iter()).all(|v| v.is_finite()) {
                    return Err(D::Error::custom("non-finite transform entry"));
                }
                Ok(RigidTransform::from_axis_angle(Vector3::from(aa), translation))
            }
            (None, None) => {
                if !translation.iter().all(|v| v.is_finite()) {
                    return Err(D::Error::custom("non-finite transform entry"));
                }
                Ok(RigidTransform::from_translation(translation))
            }
        }
    }
}

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at the
/// coordinates `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = GeometryError;
    fn try_from(r: IntrinsicsRepr) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for IntrinsicsRepr {
    fn from(k: CameraIntrinsics) -> Self {
        IntrinsicsRepr {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidIntrinsics(msg));
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return bad(format!("focal lengths must be positive, got fx={fx} fy={fy}"));
        }
        if width == 0 || height == 0 {
            return bad(format!("image size {width}x{height} is empty"));
        }
        if !(cx.is_finite() && (0.0..width as f64).contains(&cx)) {
            return bad(format!("cx={cx} outside [0, {width})"));
        }
        if !(cy.is_finite() && (0.0..height as f64).contains(&cy)) {
            return bad(format!("cy={cy} outside [0, {height})"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics with the principal point at the image center and equal focal lengths.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Same camera with a different image size (principal point kept).
    pub fn with_size(&self, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(self.fx, self.fy, self.cx, self.cy, width, height)
    }

    /// Whether a projected coordinate lands on the pixel grid, counting the
    /// half-pixel border around the outermost pixel centers.
    pub fn contains(&self, uv: [f64; 2]) -> bool {
        uv[0] >= -0.5
            && uv[0] < self.width as f64 - 0.5
            && uv[1] >= -0.5
            && uv[1] < self.height as f64 - 0.5
    }
}

pub fn apply(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

pub fn project(k: &CameraIntrinsics, p: &Point3) -> Result<[f64; 2], GeometryError> {
    if !(p.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera { z: p.z });
    }
    Ok([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
}

pub fn backproject(
    k: &CameraIntrinsics,
    pixel: [f64; 2],
    depth: f64,
) -> Result<Point3, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    Ok(Point3::new(
        depth * (pixel[0] - k.cx) / k.fx,
        depth * (pixel[1] - k.cy) / k.fy,
        depth,
    ))
}

/// Weighted least-squares rigid fit (no scale):
/// `argmin_{R,t} Σ wᵢ ‖targetᵢ − (R·sourceᵢ + t)‖²`.
///
/// Solved in closed form from the SVD of the weighted cross-covariance,
/// with the determinant sign corrected so reflections are never returned.
pub fn fit_rigid(
    source: &[Point3],
    target: &[Point3],
    weights: &[f64],
) -> Result<RigidTransform, GeometryError> {
    if source.len() != target.len() || source.len() != weights.len() {
        return Err(GeometryError::LengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
            weights_len: weights.len(),
        });
    }
    if let Some((index, &weight)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(GeometryError::InvalidWeight { index, weight });
    }
    fit_rigid_pairs(
        source
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((s, t), w)| (*s, *t, *w)),
    )
}

/// Same as [`fit_rigid`] over `(source, target, weight)` triples. The
/// iterator is walked several times, so it must be cheap to clone.
pub(crate) fn fit_rigid_pairs<I>(pairs: I) -> Result<RigidTransform, GeometryError>
where
    I: Iterator<Item = (Point3, Point3, f64)> + Clone,
{
    let mut total = 0.0;
    let mut effective = 0usize;
    let mut src_sum = Vector3::zeros();
    let mut tgt_sum = Vector3::zeros();
    for (s, t, w) in pairs.clone() {
        if w > 0.0 {
            effective += 1;
            total += w;
            src_sum += w * s.coords;
            tgt_sum += w * t.coords;
        }
    }
    if effective < 3 || !(total > 0.0) {
        return Err(GeometryError::DegenerateGeometry(format!(
            "need at least 3 weighted points, got {effective}"
        )));
    }
    let src_c = src_sum / total;
    let tgt_c = tgt_sum / total;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, t, w) in pairs.clone().filter(|p| p.2 > 0.0) {
        let ds = s.coords - src_c;
        let dt = t.coords - tgt_c;
        scatter += w * ds * ds.transpose();
        cross += w * ds * dt.transpose();
    }

    check_not_collinear(pairs, &src_c, &scatter)?;

    let svd = SVD::new(cross, true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = tgt_c - rotation * src_c;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

// The second singular value is measured from explicit perpendicular offsets
// to the principal line, so exactly collinear input yields ~1e-16 relative
// rather than the ~1e-8 floor the scatter eigenvalues alone would give.
fn check_not_collinear<I>(
    pairs: I,
    centroid: &Vector3,
    scatter: &Matrix3<f64>,
) -> Result<(), GeometryError>
where
    I: Iterator<Item = (Point3, Point3, f64)>,
{
    let eig = SymmetricEigen::new(*scatter);
    let (imax, &lmax) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("three eigenvalues");
    let first = lmax.max(0.0).sqrt();
    if !(first > 0.0) {
        return Err(GeometryError::DegenerateGeometry(
            "all source points coincide".into(),
        ));
    }
    let dir = eig.eigenvectors.column(imax).normalize();
    let mut perp = Matrix3::zeros();
    for (s, _, w) in pairs.filter(|p| p.2 > 0.0) {
        let ds = s.coords - centroid;
        let r = ds - dir * dir.dot(&ds);
        perp += w * r * r.transpose();
    }
    let second = SymmetricEigen::new(perp).eigenvalues.max().max(0.0).sqrt();
    if second < COLLINEAR_TOLERANCE * first {
        return Err(GeometryError::DegenerateGeometry(format!(
            "source points are collinear (σ₂/σ₁ = {:e})",
            second / first
        )));
    }
    Ok(())
}

/// Translation interpolated linearly, rotation by slerp along the shorter arc.
/// `s` is clamped to `[0, 1]`; the endpoints are returned exactly.
pub fn interpolate_rigid(a: &RigidTransform, b: &RigidTransform, s: f64) -> RigidTransform {
    let s = s.clamp(0.0, 1.0);
    if s == 0.0 {
        return *a;
    }
    if s == 1.0 {
        return *b;
    }
    let qa = to_quaternion(&a.rotation);
    let mut qb = to_quaternion(&b.rotation);
    let mut dot = qa.coords.dot(&qb.coords);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let coords = if dot > 1.0 - 1e-12 {
        (qa.coords * (1.0 - s) + qb.coords * s).normalize()
    } else {
        let theta = dot.min(1.0).acos();
        let sin = theta.sin();
        let wa = ((1.0 - s) * theta).sin() / sin;
        let wb = (s * theta).sin() / sin;
        (qa.coords * wa + qb.coords * wb).normalize()
    };
    let q = UnitQuaternion::new_unchecked(Quaternion::from(coords));
    RigidTransform {
        rotation: q.to_rotation_matrix().into_inner(),
        translation: a.translation.lerp(&b.translation, s),
    }
}

fn to_quaternion(r: &Matrix3<f64>) -> Quaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r)).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..PI);
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        RigidTransform::from_axis_angle(axis.normalize() * angle, t)
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.5..2.0),
                )
            })
            .collect()
    }

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 352.0, 224.0, 704, 448).unwrap()
    }

    #[test]
    fn apply_examples() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(apply(&RigidTransform::identity(), &p), p);
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(t.apply(&Point3::origin()), Point3::new(0.0, 0.0, 1.0));
        // Hand-written Rz(90°) = [[0,-1,0],[1,0,0],[0,0,1]].
        let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = rz * Vector3::new(1.0, 0.0, 0.0);
        let got = RigidTransform::from_axis_angle(Vector3::z() * FRAC_PI_2, Vector3::zeros())
            .apply(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(got.coords, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn fit_self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_cloud(&mut rng, 20);
        let fit = fit_rigid(&src, &src, &vec![1.0; 20]).unwrap();
        assert!(fit.is_identity(1e-9));
    }

    #[test]
    fn fit_recovers_exact_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = random_transform(&mut rng);
            let src = random_cloud(&mut rng, 10);
            let tgt: Vec<_> = src.iter().map(|p| g.apply(p)).collect();
            let w: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..2.0)).collect();
            let fit = fit_rigid(&src, &tgt, &w).unwrap();
            assert!(fit.max_abs_diff(&g) < 1e-9, "{}", fit.max_abs_diff(&g));
        }
    }

    #[test]
    fn fit_with_noise_is_close() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1e-3).unwrap();
        let g = random_transform(&mut rng);
        let src = random_cloud(&mut rng, 100);
        let tgt: Vec<_> = src
            .iter()
            .map(|p| {
                let q = g.apply(p);
                Point3::new(
                    q.x + noise.sample(&mut rng),
                    q.y + noise.sample(&mut rng),
                    q.z + noise.sample(&mut rng),
                )
            })
            .collect();
        let fit = fit_rigid(&src, &tgt, &vec![1.0; 100]).unwrap();
        assert!(fit.frobenius_distance(&g) < 1e-2);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let line: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 1.0)).collect();
        assert!(matches!(
            fit_rigid(&line, &line, &[1.0; 5]),
            Err(GeometryError::DegenerateGeometry(_))
        ));
        let pts = vec![Point3::new(0.0, 0.0, 1.0), Point3::new(1.0, 0.0, 1.0)];
        assert!(matches!(
            fit_rigid(&pts, &pts, &[1.0; 2]),
            Err(GeometryError::DegenerateGeometry(_))
        ));
        // Three points, but one carries zero weight.
        let tri = vec![
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.0, 1.0),
            Point3::new(0.0, 1.0, 1.0),
        ];
        assert!(fit_rigid(&tri, &tri, &[1.0, 1.0, 0.0]).is_err());
        assert!(fit_rigid(&tri, &tri, &[1.0, 1.0, 1.0]).is_ok());
        assert!(matches!(
            fit_rigid(&tri, &tri, &[1.0, -1.0, 1.0]),
            Err(GeometryError::InvalidWeight { index: 1, .. })
        ));
    }

    #[test]
    fn project_examples() {
        let k = intrinsics();
        assert_eq!(project(&k, &Point3::new(0.0, 0.0, 1.0)).unwrap(), [352.0, 224.0]);
        assert_eq!(project(&k, &Point3::new(1.0, 0.0, 1.0)).unwrap(), [852.0, 224.0]);
        assert!(matches!(
            project(&k, &Point3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn backproject_examples() {
        let k = intrinsics();
        assert_eq!(
            backproject(&k, [352.0, 224.0], 2.0).unwrap(),
            Point3::new(0.0, 0.0, 2.0)
        );
        assert!(matches!(
            backproject(&k, [1.0, 1.0], 0.0),
            Err(GeometryError::InvalidDepth(_))
        ));
        assert!(backproject(&k, [1.0, 1.0], f64::NAN).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.5, 4, 4).is_ok());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_transform(&mut rng);
        let b = random_transform(&mut rng);
        assert_eq!(interpolate_rigid(&a, &b, 0.0), a);
        assert_eq!(interpolate_rigid(&a, &b, 1.0), b);

        let half_turn = RigidTransform::from_axis_angle(Vector3::z() * PI, Vector3::zeros());
        let mid = interpolate_rigid(&RigidTransform::identity(), &half_turn, 0.5);
        let quarter = RigidTransform::from_axis_angle(Vector3::z() * FRAC_PI_2, Vector3::zeros());
        assert!(mid.max_abs_diff(&quarter) < 1e-9);
    }

    #[test]
    fn interpolation_takes_short_arc() {
        let a = RigidTransform::from_axis_angle(Vector3::z() * 0.1, Vector3::zeros());
        let b = RigidTransform::from_axis_angle(Vector3::z() * -0.1, Vector3::zeros());
        let mid = interpolate_rigid(&a, &b, 0.5);
        assert!(mid.is_identity(1e-12));
        // Nearly equal rotations must not blow up.
        let c = RigidTransform::from_axis_angle(Vector3::z() * (0.1 + 1e-13), Vector3::zeros());
        assert!(interpolate_rigid(&a, &c, 0.3).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn serde_accepts_axis_angle_and_matrix() {
        let t: RigidTransform =
            serde_json::from_str(r#"{"translation":[1,2,3],"axis_angle":[0,0,1.5707963267948966]}"#)
                .unwrap();
        assert_abs_diff_eq!(t.apply(&Point3::new(1.0, 0.0, 0.0)), Point3::new(1.0, 3.0, 3.0), epsilon = 1e-12);
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RigidTransform>(
            r#"{"translation":[0,0,0],"matrix":[[1,0,0],[0,1,0],[0,0,-1]]}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn compose_matches_sequential_application(
            seed in any::<u64>(),
            p in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_transform(&mut rng);
            let h = random_transform(&mut rng);
            let p = Point3::from(p);
            let lhs = g.compose(&h).apply(&p);
            let rhs = g.apply(&h.apply(&p));
            prop_assert!((lhs - rhs).abs().max() < 1e-9);
            prop_assert!(g.compose(&g.inverse()).is_identity(1e-9));
            prop_assert!(g.orthonormality_error() < 1e-9);
        }

        #[test]
        fn project_backproject_round_trip(
            u in 0.0f64..704.0,
            v in 0.0f64..448.0,
            depth in 0.1f64..100.0,
        ) {
            let k = intrinsics();
            let p = backproject(&k, [u, v], depth).unwrap();
            let uv = project(&k, &p).unwrap();
            prop_assert!((uv[0] - u).abs() < 1e-6 && (uv[1] - v).abs() < 1e-6);
        }

        #[test]
        fn fit_never_worse_than_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_cloud(&mut rng, 12);
            let tgt = random_cloud(&mut rng, 12);
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let fit = fit_rigid(&src, &tgt, &w).unwrap();
            let cost = |t: &RigidTransform| -> f64 {
                src.iter().zip(&tgt).zip(&w)
                    .map(|((s, q), w)| w * (q - t.apply(s)).norm_squared())
                    .sum()
            };
            prop_assert!(cost(&fit) <= cost(&RigidTransform::identity()) + 1e-12);
        }
    }
}
