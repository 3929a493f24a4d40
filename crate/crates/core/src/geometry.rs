//! Viewpoint parameterization, pinhole projection and the rotation-error metric.
//!
//! Conventions: camera space is right-handed with `+z` along the optical axis,
//! `+x` to the right and `+y` down the image. The world-to-camera rotation is
//!
//! ```text
//! R = Rz(theta) * Rx(elevation) * Ry(azimuth)
//! ```
//!
//! i.e. azimuth turns the object about the world up axis (`y`), elevation tilts
//! it about the camera's horizontal axis and theta spins it in the image plane.
//! A world point `X` maps to camera space as `R X + (0, 0, distance)`, so the
//! camera sits on a sphere of radius `distance` looking at the world origin.
//! With all three angles zero the rotation is the identity.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};

/// Tolerance on `|R^T R - I|` and `|det R - 1|` accepted by [`RotationMatrix::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_two_pi(a: f64) -> f64 {
    let r = libm::fmod(a, TAU);
    let r = if r < 0.0 { r + TAU } else { r };
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = wrap_two_pi(a + PI) - PI;
    if r >= PI {
        -PI
    } else {
        r
    }
}

/// Camera viewpoint: three rotation angles plus a fixed object distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    azimuth: f64,
    elevation: f64,
    theta: f64,
    distance: f64,
}

impl CameraPose {
    /// Builds a pose, canonicalizing the angles. Elevations outside
    /// `[-pi/2, pi/2]` are mapped to the equivalent in-range triple.
    pub fn new(azimuth: f64, elevation: f64, theta: f64, distance: f64) -> Result<Self> {
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "camera distance must be positive, got {distance}"
            )));
        }
        if !(azimuth.is_finite() && elevation.is_finite() && theta.is_finite()) {
            return Err(Error::InvalidArgument("pose angles must be finite".into()));
        }
        let el = wrap_pi(elevation);
        if (-FRAC_PI_2..=FRAC_PI_2).contains(&el) {
            return Ok(Self {
                azimuth: wrap_two_pi(azimuth),
                elevation: el,
                theta: wrap_pi(theta),
                distance,
            });
        }
        let r = RotationMatrix::from_angles(azimuth, elevation, theta);
        Ok(r.to_pose(distance))
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.azimuth, self.elevation, self.theta]
    }

    /// Same distance, new (re-canonicalized) angles.
    pub fn with_angles(&self, angles: [f64; 3]) -> Result<Self> {
        Self::new(angles[0], angles[1], angles[2], self.distance)
    }

    pub fn rotation(&self) -> RotationMatrix {
        rotation_from_pose(self)
    }

    /// Maps a world point into camera space.
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let r = self.rotation();
        linalg::mat_vec(&r.0, p) + Vec3::new(0.0, 0.0, self.distance)
    }
}

/// A 3x3 proper orthonormal matrix (row-major).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix([[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix =
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Validates orthonormality and orientation within [`ROTATION_TOLERANCE`].
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let rtr = linalg::mat_mul(&linalg::transpose(&m), &m);
        let mut residual: f64 = 0.0;
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                residual = residual.max((v - target).abs());
            }
        }
        let det = linalg::det(&m);
        if !residual.is_finite()
            || residual > ROTATION_TOLERANCE
            || (det - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(Error::NotARotation { residual, det });
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.0
    }

    pub fn rot_x(a: f64) -> Self {
        let (s, c) = (libm::sin(a), libm::cos(a));
        Self([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(a: f64) -> Self {
        let (s, c) = (libm::sin(a), libm::cos(a));
        Self([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(a: f64) -> Self {
        let (s, c) = (libm::sin(a), libm::cos(a));
        Self([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rodrigues rotation by `angle` about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument(
                "rotation axis must be non-zero".into(),
            ));
        }
        let k = axis * (1.0 / n);
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let t = 1.0 - c;
        Ok(Self([
            [
                c + k.x * k.x * t,
                k.x * k.y * t - k.z * s,
                k.x * k.z * t + k.y * s,
            ],
            [
                k.y * k.x * t + k.z * s,
                c + k.y * k.y * t,
                k.y * k.z * t - k.x * s,
            ],
            [
                k.z * k.x * t - k.y * s,
                k.z * k.y * t + k.x * s,
                c + k.z * k.z * t,
            ],
        ]))
    }

    fn from_angles(azimuth: f64, elevation: f64, theta: f64) -> Self {
        Self::rot_z(theta)
            .compose(&Self::rot_x(elevation))
            .compose(&Self::rot_y(azimuth))
    }

    /// `self * other`.
    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(linalg::mat_mul(&self.0, &other.0))
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(linalg::transpose(&self.0))
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        linalg::mat_vec(&self.0, v)
    }

    /// Inverse of [`rotation_from_pose`]. Away from gimbal lock the returned
    /// angles reproduce the pose that built the matrix; at `|elevation| = pi/2`
    /// azimuth is fixed to zero and the remaining freedom goes to theta.
    pub fn to_pose(&self, distance: f64) -> CameraPose {
        let m = &self.0;
        let elevation = libm::asin(m[2][1].clamp(-1.0, 1.0));
        let cos_el = libm::cos(elevation);
        let (azimuth, theta) = if cos_el > 1e-12 {
            (
                libm::atan2(-m[2][0], m[2][2]),
                libm::atan2(-m[0][1], m[1][1]),
            )
        } else {
            (0.0, libm::atan2(m[1][0], m[0][0]))
        };
        CameraPose {
            azimuth: wrap_two_pi(azimuth),
            elevation,
            theta: wrap_pi(theta),
            distance,
        }
    }

    /// Rotation angle in `[0, pi]`, from the cosine (trace) and the sine
    /// (skew part) so that it stays accurate near both ends.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let c = (m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0;
        let s = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]).norm() / 2.0;
        libm::atan2(s, c)
    }
}

/// World-to-camera rotation of a viewpoint; see the module docs for the convention.
pub fn rotation_from_pose(pose: &CameraPose) -> RotationMatrix {
    RotationMatrix::from_angles(pose.azimuth, pose.elevation, pose.theta)
}

/// Geodesic distance on SO(3): `|logm(A^T B)|_F / sqrt(2)`, i.e. the angle of
/// the relative rotation, in `[0, pi]`.
pub fn geodesic_error(pred: &RotationMatrix, gt: &RotationMatrix) -> f64 {
    pred.transpose().compose(gt).angle()
}

/// Pinhole intrinsics for an `width x height` pixel lattice. Pixel `(x, y)`
/// covers `[x, x+1) x [y, y+1)` and is sampled at its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "focal length must be positive, got {focal}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(
                "image must have at least one pixel".into(),
            ));
        }
        if !((0.0..=width as f64).contains(&cx) && (0.0..=height as f64).contains(&cy)) {
            return Err(Error::InvalidArgument(alloc::format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            focal,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    /// The same camera on a lattice `factor` times finer (or coarser for `factor < 1`).
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            focal: self.focal * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    /// Inverse of [`Self::scaled`]; the lattice size must divide evenly.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor)
        {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{}x{} image is not divisible by {factor}",
                self.width,
                self.height
            )));
        }
        let f = factor as f64;
        Ok(Self {
            focal: self.focal / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        })
    }
}

/// Screen position (continuous pixel coordinates) and camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Perspective projection of world points. Positions may land outside the
/// lattice; callers clip.
pub fn project_vertices(
    vertices: &[Vec3],
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Result<Vec<Projection>> {
    let r = pose.rotation();
    let t = Vec3::new(0.0, 0.0, pose.distance());
    vertices
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            let c = r.apply(p) + t;
            if !(c.z > 0.0) {
                return Err(Error::BehindCamera { index, depth: c.z });
            }
            Ok(Projection {
                u: intr.focal * c.x / c.z + intr.cx,
                v: intr.focal * c.y / c.z + intr.cy,
                depth: c.z,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a[i][j] - b[i][j]).abs());
            }
        }
        m
    }

    #[test]
    fn zero_pose_is_identity() {
        let p = CameraPose::new(0.0, 0.0, 0.0, 5.0).unwrap();
        assert_eq!(rotation_from_pose(&p), RotationMatrix::IDENTITY);
    }

    #[test]
    fn quarter_azimuth_matches_elementary_rotation() {
        // Independent composition: rotation of pi/2 about +y written out by hand.
        let expected = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let p = CameraPose::new(FRAC_PI_2, 0.0, 0.0, 5.0).unwrap();
        assert!(max_abs_diff(&rotation_from_pose(&p).matrix(), &expected) < 1e-15);

        let axis = RotationMatrix::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), FRAC_PI_2).unwrap();
        assert!(max_abs_diff(&rotation_from_pose(&p).matrix(), &axis.matrix()) < 1e-15);
    }

    #[test]
    fn composition_order() {
        let p = CameraPose::new(0.3, -0.2, 0.7, 5.0).unwrap();
        let rz = RotationMatrix::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.7).unwrap();
        let rx = RotationMatrix::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), -0.2).unwrap();
        let ry = RotationMatrix::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.3).unwrap();
        let expected = rz.compose(&rx).compose(&ry);
        assert!(max_abs_diff(&rotation_from_pose(&p).matrix(), &expected.matrix()) < 1e-14);
    }

    #[test]
    fn angles_are_canonicalized() {
        let p = CameraPose::new(-0.5, 0.1, 4.0, 2.0).unwrap();
        assert!((p.azimuth() - (TAU - 0.5)).abs() < 1e-12);
        assert!((p.theta() - (4.0 - TAU)).abs() < 1e-12);

        // Elevation past the pole flips to an equivalent in-range triple.
        let q = CameraPose::new(0.4, 2.0, 0.3, 2.0).unwrap();
        assert!(q.elevation().abs() <= FRAC_PI_2);
        let raw = RotationMatrix::from_angles(0.4, 2.0, 0.3);
        assert!(max_abs_diff(&raw.matrix(), &q.rotation().matrix()) < 1e-12);

        assert!(CameraPose::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(CameraPose::new(f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_two_pi(TAU), 0.0);
        assert_eq!(wrap_pi(PI), -PI);
        assert!((wrap_pi(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn round_trip_through_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let lim = FRAC_PI_2 - 0.1;
            let p = CameraPose::new(
                rng.random_range(0.0..TAU),
                rng.random_range(-lim..lim),
                rng.random_range(-PI..PI),
                3.0,
            )
            .unwrap();
            let q = p.rotation().to_pose(3.0);
            let d_az = wrap_pi(q.azimuth() - p.azimuth()).abs();
            let d_th = wrap_pi(q.theta() - p.theta()).abs();
            assert!(
                d_az < 1e-9 && d_th < 1e-9 && (q.elevation() - p.elevation()).abs() < 1e-9,
                "{p:?} vs {q:?}"
            );
        }
    }

    #[test]
    fn geodesic_identity_and_known_angle() {
        let r = CameraPose::new(1.0, 0.3, -0.4, 1.0).unwrap().rotation();
        assert_eq!(geodesic_error(&r, &r), 0.0);
        let rz = RotationMatrix::rot_z(PI / 6.0);
        assert!((geodesic_error(&rz.compose(&r), &r) - PI / 6.0).abs() < 1e-9);
        assert!((PI / 6.0 - 0.5235987755982988).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_rotation() {
        let scaled = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            RotationMatrix::new(scaled),
            Err(Error::NotARotation { .. })
        ));
        let reflection = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RotationMatrix::new(reflection).is_err());
        assert!(RotationMatrix::new(RotationMatrix::rot_x(0.3).matrix()).is_ok());
    }

    #[test]
    fn projection_basics() {
        let intr = CameraIntrinsics::new(100.0, 32.0, 24.0, 64, 48).unwrap();
        let pose = CameraPose::new(0.0, 0.0, 0.0, 4.0).unwrap();
        let p = project_vertices(&[Vec3::ZERO], &pose, &intr).unwrap()[0];
        assert_eq!((p.u, p.v, p.depth), (32.0, 24.0, 4.0));

        // Similar triangles: offset x at depth d moves focal * x / d pixels.
        let p = project_vertices(&[Vec3::new(0.5, 0.0, 0.0)], &pose, &intr).unwrap()[0];
        assert!((p.u - (32.0 + 100.0 * 0.5 / 4.0)).abs() < 1e-12);

        // Doubling the distance halves offsets on the look-at plane.
        let far = CameraPose::new(0.0, 0.0, 0.0, 8.0).unwrap();
        let pts = [Vec3::new(0.5, -0.3, 0.0), Vec3::new(-0.2, 0.1, 0.0)];
        let near_p = project_vertices(&pts, &pose, &intr).unwrap();
        let far_p = project_vertices(&pts, &far, &intr).unwrap();
        for (a, b) in near_p.iter().zip(&far_p) {
            assert!(((a.u - 32.0) / 2.0 - (b.u - 32.0)).abs() < 1e-12);
            assert!(((a.v - 24.0) / 2.0 - (b.v - 24.0)).abs() < 1e-12);
        }

        let err =
            project_vertices(&[Vec3::ZERO, Vec3::new(0.0, 0.0, -5.0)], &pose, &intr).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { index: 1, .. }));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 2, 2).is_err());
        assert!(CameraIntrinsics::new(1.0, 3.0, 1.0, 2, 2).is_err());
        let i = CameraIntrinsics::centered(10.0, 4, 4).unwrap();
        assert_eq!(i.scaled(8).downscaled(8).unwrap(), i);
        assert!(i.downscaled(3).is_err());
    }

    fn pose_strategy() -> impl Strategy<Value = CameraPose> {
        (0.0..TAU, -FRAC_PI_2..FRAC_PI_2, -PI..PI)
            .prop_map(|(a, e, t)| CameraPose::new(a, e, t, 1.0).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn pose_rotations_are_valid(p in pose_strategy()) {
            prop_assert!(RotationMatrix::new(p.rotation().matrix()).is_ok());
        }
    }

    proptest! {
        #[test]
        fn geodesic_symmetric_and_triangle(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let (ra, rb, rc) = (a.rotation(), b.rotation(), c.rotation());
            let ab = geodesic_error(&ra, &rb);
            prop_assert!((ab - geodesic_error(&rb, &ra)).abs() < 1e-9);
            prop_assert!((0.0..=PI).contains(&ab));
            prop_assert!(ab <= geodesic_error(&ra, &rc) + geodesic_error(&rc, &rb) + 1e-6);
        }

        #[test]
        fn projection_equivariant(p in pose_strategy(), q in pose_strategy(),
                                  x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let intr = CameraIntrinsics::centered(50.0, 64, 64).unwrap();
            let pose = CameraPose::new(p.azimuth(), p.elevation(), p.theta(), 6.0).unwrap();
            let world_rot = q.rotation();
            let moved_pose = pose.rotation().compose(&world_rot.transpose()).to_pose(6.0);
            let pt = Vec3::new(x, y, z);
            let a = project_vertices(&[pt], &pose, &intr).unwrap()[0];
            let b = project_vertices(&[world_rot.apply(pt)], &moved_pose, &intr).unwrap()[0];
            prop_assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6);
        }
    }
}
