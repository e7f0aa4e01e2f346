//! The learnable virtual camera: spherical extrinsics around the origin,
//! fixed pinhole intrinsics, and novel-view sampling with relative-viewpoint
//! conditioning.

use nalgebra::Matrix3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::math::{wrap_angle_360, wrap_angle_delta, Vec3};
use crate::{Error, Result};

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Spherical camera pose: the camera sits at
/// `r * (cos(el) cos(az), cos(el) sin(az), sin(el))` looking at the origin
/// with +z up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Elevation in degrees, within [-90, 90].
    pub elevation: f64,
    /// Azimuth in degrees, wrapped to [0, 360).
    pub azimuth: f64,
    /// Distance from the origin, > 0.
    pub radius: f64,
}

impl CameraPose {
    pub fn new(elevation: f64, azimuth: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("camera radius must be > 0, got {radius}")));
        }
        if !((-90.0..=90.0).contains(&elevation)) {
            return Err(Error::Config(format!(
                "elevation must lie in [-90, 90], got {elevation}"
            )));
        }
        Ok(Self {
            elevation,
            azimuth: wrap_angle_360(azimuth),
            radius,
        })
    }

    pub fn eye(&self) -> Vec3 {
        let (se, ce) = (self.elevation * DEG).sin_cos();
        let (sa, ca) = (self.azimuth * DEG).sin_cos();
        Vec3::new(self.radius * ce * ca, self.radius * ce * sa, self.radius * se)
    }

    /// Composes this pose with a relative offset. Azimuth wraps; elevation
    /// and radius are the caller's responsibility to keep in range.
    pub fn compose(&self, rel: &RelativeView) -> CameraPose {
        CameraPose {
            elevation: self.elevation + rel.d_elevation,
            azimuth: wrap_angle_360(self.azimuth + rel.d_azimuth),
            radius: self.radius + rel.d_radius,
        }
    }

    /// The relative view that carries `self` to `other` (azimuth wrapped to
    /// (-180, 180]).
    pub fn relative_to(&self, other: &CameraPose) -> RelativeView {
        RelativeView {
            d_elevation: other.elevation - self.elevation,
            d_azimuth: wrap_angle_delta(other.azimuth - self.azimuth),
            d_radius: other.radius - self.radius,
        }
    }
}

/// Pinhole intrinsics shared by every render.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    /// Vertical field of view in degrees, in (0, 180).
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Intrinsics {
    pub fn new(fov_y: f64, width: usize, height: usize, near: f64, far: f64) -> Result<Self> {
        if !(fov_y > 0.0 && fov_y < 180.0) {
            return Err(Error::Config(format!("fov must lie in (0, 180), got {fov_y}")));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::Config(format!(
                "need 0 < near < far, got near {near}, far {far}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        Ok(Self {
            fov_y,
            width,
            height,
            near,
            far,
        })
    }

    /// 128 x 128 at 45 degrees; small renders keep optimization fast.
    pub fn default_square(side: usize) -> Self {
        Self {
            fov_y: 45.0,
            width: side,
            height: side,
            near: 0.05,
            far: 100.0,
        }
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self::default_square(128)
    }
}

/// Viewpoint offset used to condition the multi-view prior.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeView {
    pub d_elevation: f64,
    pub d_azimuth: f64,
    pub d_radius: f64,
}

impl RelativeView {
    pub fn new(d_elevation: f64, d_azimuth: f64, d_radius: f64) -> Self {
        Self {
            d_elevation,
            d_azimuth,
            d_radius,
        }
    }

    /// Max-norm angular distance to another relative view, in degrees.
    pub fn angular_distance(&self, other: &RelativeView) -> f64 {
        let de = (self.d_elevation - other.d_elevation).abs();
        let da = wrap_angle_delta(self.d_azimuth - other.d_azimuth).abs();
        de.max(da)
    }
}

/// World-to-camera transform with analytic derivatives in the pose
/// parameters, plus the perspective projection.
#[derive(Debug, Clone)]
pub struct CameraTransform {
    pub rotation: Matrix3<f64>,
    pub radius: f64,
    /// d(rotation)/d(elevation in degrees).
    pub d_rot_d_elevation: Matrix3<f64>,
    /// d(rotation)/d(azimuth in degrees).
    pub d_rot_d_azimuth: Matrix3<f64>,
    pub eye: Vec3,
    pub d_eye_d_elevation: Vec3,
    pub d_eye_d_azimuth: Vec3,
    pub d_eye_d_radius: Vec3,
    pub intrinsics: Intrinsics,
    /// 1 / tan(fov_y / 2).
    pub focal: f64,
    pub aspect: f64,
}

/// Builds the view/projection pair for a pose.
pub fn camera_from_spherical(pose: &CameraPose, intr: &Intrinsics) -> CameraTransform {
    let (se, ce) = (pose.elevation * DEG).sin_cos();
    let (sa, ca) = (pose.azimuth * DEG).sin_cos();
    let r = pose.radius;

    // Rows: right, up, backward of the camera frame. Backward equals the
    // eye direction, so translation is (0, 0, -r) exactly.
    let rotation = Matrix3::new(
        -sa, ca, 0.0, //
        -se * ca, -se * sa, ce, //
        ce * ca, ce * sa, se,
    );
    let pole = ce.abs() < 1e-9;
    let (d_rot_d_elevation, d_rot_d_azimuth) = if pole {
        // Exactly at a pole the +z up convention degenerates; the optimizer
        // clamps elevation inside [-85, 85] so derivatives there are unused.
        (Matrix3::zeros(), Matrix3::zeros())
    } else {
        (
            Matrix3::new(
                0.0, 0.0, 0.0, //
                -ce * ca, -ce * sa, -se, //
                -se * ca, -se * sa, ce,
            ) * DEG,
            Matrix3::new(
                -ca, -sa, 0.0, //
                se * sa, -se * ca, 0.0, //
                -ce * sa, ce * ca, 0.0,
            ) * DEG,
        )
    };
    let rotation = if pole {
        // Fallback frame with +x as up reference.
        let z = Vec3::new(ce * ca, ce * sa, se).normalize();
        let up = Vec3::new(1.0, 0.0, 0.0);
        let x = up.cross(&z).normalize();
        let y = z.cross(&x);
        Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
    } else {
        rotation
    };

    let eye = pose.eye();
    CameraTransform {
        rotation,
        radius: r,
        d_rot_d_elevation,
        d_rot_d_azimuth,
        eye,
        d_eye_d_elevation: Vec3::new(-r * se * ca, -r * se * sa, r * ce) * DEG,
        d_eye_d_azimuth: Vec3::new(-r * ce * sa, r * ce * ca, 0.0) * DEG,
        d_eye_d_radius: Vec3::new(ce * ca, ce * sa, se),
        intrinsics: *intr,
        focal: 1.0 / ((intr.fov_y * DEG / 2.0).tan()),
        aspect: intr.width as f64 / intr.height as f64,
    }
}

impl CameraTransform {
    /// World point to camera space (camera looks down -z).
    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + Vec3::new(0.0, 0.0, -self.radius)
    }

    /// Camera-space point to (screen x, screen y, depth). Depth is the
    /// positive distance along the viewing axis.
    #[inline]
    pub fn project_camera_point(&self, q: &Vec3) -> (f64, f64, f64) {
        let depth = -q.z;
        let inv = 1.0 / depth;
        let x_ndc = (self.focal / self.aspect) * q.x * inv;
        let y_ndc = self.focal * q.y * inv;
        let sx = (x_ndc + 1.0) * 0.5 * self.intrinsics.width as f64;
        let sy = (1.0 - y_ndc) * 0.5 * self.intrinsics.height as f64;
        (sx, sy, depth)
    }

    /// Full world-to-screen transform.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        self.project_camera_point(&self.to_camera(p))
    }

    /// VJP of `project` composed with `to_camera`: scatters gradients on the
    /// screen position and depth of a world point into the world point and
    /// the pose parameters.
    pub fn project_vjp(
        &self,
        p: &Vec3,
        grad_sx: f64,
        grad_sy: f64,
        grad_depth: f64,
    ) -> ProjectVjp {
        let q = self.to_camera(p);
        let depth = -q.z;
        let inv = 1.0 / depth;
        let w = self.intrinsics.width as f64;
        let h = self.intrinsics.height as f64;
        let fx = self.focal / self.aspect;

        // sx = (fx qx / depth + 1) w/2, sy = (1 - f qy / depth) h/2,
        // depth = -qz.
        let d_sx_d_qx = 0.5 * w * fx * inv;
        let d_sx_d_qz = 0.5 * w * fx * q.x * inv * inv; // d depth/d qz = -1
        let d_sy_d_qy = -0.5 * h * self.focal * inv;
        let d_sy_d_qz = -0.5 * h * self.focal * q.y * inv * inv;

        let grad_q = Vec3::new(
            grad_sx * d_sx_d_qx,
            grad_sy * d_sy_d_qy,
            grad_sx * d_sx_d_qz + grad_sy * d_sy_d_qz - grad_depth,
        );

        ProjectVjp {
            d_point: self.rotation.transpose() * grad_q,
            d_elevation: grad_q.dot(&(self.d_rot_d_elevation * p)),
            d_azimuth: grad_q.dot(&(self.d_rot_d_azimuth * p)),
            d_radius: -grad_q.z,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectVjp {
    pub d_point: Vec3,
    pub d_elevation: f64,
    pub d_azimuth: f64,
    pub d_radius: f64,
}

/// Samples `n` novel views around the reference: elevation uniform in
/// [-45, 45], azimuth uniform in [0, 360), radius equal to the reference
/// radius. Each comes with its conditioning offset. Deterministic per seed.
pub fn sample_novel_views(
    reference: &CameraPose,
    n: usize,
    seed: u64,
) -> Vec<(CameraPose, RelativeView)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let elevation_raw = -45.0 + 90.0 * rng.gen::<f64>();
            let azimuth_raw = 360.0 * rng.gen::<f64>();
            let rel = RelativeView {
                d_elevation: elevation_raw - reference.elevation,
                d_azimuth: wrap_angle_delta(azimuth_raw - reference.azimuth),
                d_radius: 0.0,
            };
            // Recompose through the same arithmetic `compose` uses so the
            // pair is bit-exactly consistent.
            let pose = reference.compose(&rel);
            (pose, rel)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eye_convention_examples() {
        let p = CameraPose::new(0.0, 0.0, 2.0).unwrap();
        assert_relative_eq!(p.eye(), Vec3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        let p = CameraPose::new(90.0, 123.0, 1.0).unwrap();
        assert_relative_eq!(p.eye(), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        let p = CameraPose::new(0.0, 90.0, 2.0).unwrap();
        assert_relative_eq!(p.eye(), Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn view_maps_eye_to_origin_looking_down_minus_z() {
        let pose = CameraPose::new(25.0, 140.0, 2.5).unwrap();
        let cam = camera_from_spherical(&pose, &Intrinsics::default());
        let at_eye = cam.to_camera(&pose.eye());
        assert!(at_eye.norm() < 1e-12);
        let at_origin = cam.to_camera(&Vec3::zeros());
        assert_relative_eq!(at_origin, Vec3::new(0.0, 0.0, -2.5), epsilon = 1e-12);
        // Rotation is orthonormal.
        let should_be_identity = cam.rotation * cam.rotation.transpose();
        assert!((should_be_identity - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn azimuth_wrap_produces_identical_transform() {
        let a = CameraPose::new(10.0, 370.0, 2.0).unwrap();
        let b = CameraPose::new(10.0, 10.0, 2.0).unwrap();
        assert_eq!(a.azimuth, b.azimuth);
        let ta = camera_from_spherical(&a, &Intrinsics::default());
        let tb = camera_from_spherical(&b, &Intrinsics::default());
        assert_eq!(ta.rotation, tb.rotation);
    }

    #[test]
    fn sampled_views_compose_exactly() {
        let reference = CameraPose::new(17.0, 350.0, 2.2).unwrap();
        let views = sample_novel_views(&reference, 8, 99);
        assert_eq!(views.len(), 8);
        for (pose, rel) in &views {
            assert!(pose.elevation >= -45.0 - 1e-9 && pose.elevation <= 45.0 + 1e-9);
            assert_eq!(pose.radius, reference.radius);
            let recomposed = reference.compose(rel);
            assert_eq!(recomposed.elevation.to_bits(), pose.elevation.to_bits());
            assert_eq!(recomposed.azimuth.to_bits(), pose.azimuth.to_bits());
            assert_eq!(recomposed.radius.to_bits(), pose.radius.to_bits());
        }
    }

    #[test]
    fn relative_to_wraps_azimuth() {
        let a = CameraPose::new(0.0, 350.0, 2.0).unwrap();
        let b = CameraPose::new(0.0, 10.0, 2.0).unwrap();
        let rel = a.relative_to(&b);
        assert_relative_eq!(rel.d_azimuth, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn self_relative_view_is_zero() {
        let a = CameraPose::new(12.0, 34.0, 2.0).unwrap();
        let rel = a.relative_to(&a);
        assert_eq!(rel, RelativeView::default());
    }

    #[test]
    fn projection_gradients_match_fd() {
        let pose = CameraPose::new(20.0, 50.0, 2.0).unwrap();
        let intr = Intrinsics::default();
        let p = Vec3::new(0.2, -0.3, 0.15);
        let cam = camera_from_spherical(&pose, &intr);
        let (gx, gy, gd) = (1.0, -0.5, 0.25);
        let vjp = cam.project_vjp(&p, gx, gy, gd);

        let f = |pose: &CameraPose, p: &Vec3| -> f64 {
            let cam = camera_from_spherical(pose, &intr);
            let (sx, sy, d) = cam.project(p);
            gx * sx + gy * sy + gd * d
        };
        let h = 1e-6;
        for c in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[c] += h;
            pm[c] -= h;
            let fd = (f(&pose, &pp) - f(&pose, &pm)) / (2.0 * h);
            assert_relative_eq!(vjp.d_point[c], fd, max_relative = 1e-6);
        }
        // Pose components use a larger step: screen coordinates are O(100)
        // so tiny steps drown in f64 roundoff.
        let hp = 1e-4;
        let fd = {
            let pp = CameraPose::new(pose.elevation + hp, pose.azimuth, pose.radius).unwrap();
            let pm = CameraPose::new(pose.elevation - hp, pose.azimuth, pose.radius).unwrap();
            (f(&pp, &p) - f(&pm, &p)) / (2.0 * hp)
        };
        assert_relative_eq!(vjp.d_elevation, fd, max_relative = 1e-5);
        let fd = {
            let pp = CameraPose::new(pose.elevation, pose.azimuth + hp, pose.radius).unwrap();
            let pm = CameraPose::new(pose.elevation, pose.azimuth - hp, pose.radius).unwrap();
            (f(&pp, &p) - f(&pm, &p)) / (2.0 * hp)
        };
        assert_relative_eq!(vjp.d_azimuth, fd, max_relative = 1e-5);
        let fd = {
            let pp = CameraPose::new(pose.elevation, pose.azimuth, pose.radius + hp).unwrap();
            let pm = CameraPose::new(pose.elevation, pose.azimuth, pose.radius - hp).unwrap();
            (f(&pp, &p) - f(&pm, &p)) / (2.0 * hp)
        };
        assert_relative_eq!(vjp.d_radius, fd, max_relative = 1e-5);
    }

    #[test]
    fn invalid_poses_rejected() {
        assert!(CameraPose::new(0.0, 0.0, 0.0).is_err());
        assert!(CameraPose::new(95.0, 0.0, 1.0).is_err());
        assert!(Intrinsics::new(0.0, 4, 4, 0.1, 10.0).is_err());
        assert!(Intrinsics::new(45.0, 4, 4, 5.0, 1.0).is_err());
    }
}
