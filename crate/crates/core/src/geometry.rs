//! Rigid poses and the pinhole projection chain.
//!
//! A [`Pose`] maps world coordinates into the camera frame (`p_c = R p_w + t`).
//! [`CameraIntrinsics`] then maps camera-frame points to continuous pixel
//! coordinates with `u = fx X/Z + u0`, `v = fy Y/Z + v0`.
//!
//! The optimizer works in a 6-dof tangent space `[ω; ν]` (rotation first,
//! translation second). Increments are applied on the left, in the camera
//! frame:
//!
//! ```text
//! R' = exp(ω) R,    t' = exp(ω) t + ν
//! ```
//!
//! so that `p_c' = exp(ω) p_c + ν`. This keeps the rotation increment centred
//! on the camera and decouples it from the world origin.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;

/// Points closer than this along the optical axis are not imageable.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0} m)")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Continuous (sub-pixel) image coordinates. `u` runs along columns, `v` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A projected point: pixel location plus camera-frame depth `Z_C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    pub depth: f64,
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`.
    ///
    /// The quaternion is normalized; a zero or non-finite quaternion is rejected.
    pub fn from_components(q: [f64; 4], t: [f64; 3]) -> Result<Self, GeometryError> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if !norm.is_finite() || norm < 1e-12 || t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose(format!(
                "quaternion {q:?} / translation {t:?} not usable"
            )));
        }
        Ok(Self::new(
            UnitQuaternion::from_quaternion(raw),
            Vector3::new(t[0], t[1], t[2]),
        ))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `R p + t`.
    pub fn transform(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Point3 {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    /// Applies a tangent increment `[ω; ν]` on the left (camera frame).
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let nu = Vector3::new(delta[3], delta[4], delta[5]);
        let dq = UnitQuaternion::from_scaled_axis(omega);
        Self::new(dq * self.rotation, dq * self.translation + nu)
    }

    /// Geodesic angle (radians) between the two rotations.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Distance (meters) between the two camera centres.
    pub fn center_distance(&self, other: &Pose) -> f64 {
        (self.camera_center() - other.camera_center()).norm()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut q = UnitQuaternion::new_normalize(q.into_inner());
    // canonical hemisphere keeps text output stable
    if q.w < 0.0 {
        q = UnitQuaternion::new_unchecked(-q.into_inner());
    }
    q
}

impl fmt::Display for Pose {
    /// `qw qx qy qz tx ty tz`, round-trippable.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        let t = &self.translation;
        write!(
            f,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z
        )
    }
}

impl FromStr for Pose {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let vals = parse_floats(s, 7)?;
        Pose::from_components([vals[0], vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6]])
    }
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, GeometryError> {
    let vals = s
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| GeometryError::Parse(format!("not a number: {tok:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != n {
        return Err(GeometryError::Parse(format!(
            "expected {n} values, found {}",
            vals.len()
        )));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::Parse("non-finite value".into()));
    }
    Ok(vals)
}

/// Pinhole intrinsics. `fx`, `fy` fold the focal length and pixel pitch together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        u0: f64,
        v0: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            u0,
            v0,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.u0, self.v0]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.u0) || !(0.0..self.height as f64).contains(&self.v0)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.u0, self.v0, self.width, self.height
            )));
        }
        Ok(())
    }

    /// True when the pixel lies in `[0, width-1] × [0, height-1]`.
    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= (self.width - 1) as f64
            && px.v <= (self.height - 1) as f64
    }

    /// Unit-depth ray direction (camera frame) through a pixel.
    pub fn ray(&self, px: &Pixel) -> Vector3<f64> {
        Vector3::new((px.u - self.u0) / self.fx, (px.v - self.v0) / self.fy, 1.0)
    }
}

impl fmt::Display for CameraIntrinsics {
    /// `fx fy u0 v0 width height`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} {:?} {:?} {:?} {} {}",
            self.fx, self.fy, self.u0, self.v0, self.width, self.height
        )
    }
}

impl FromStr for CameraIntrinsics {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() != 6 {
            return Err(GeometryError::Parse(format!(
                "expected 6 values, found {}",
                toks.len()
            )));
        }
        let head = parse_floats(&toks[..4].join(" "), 4)?;
        let dim = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|_| GeometryError::Parse(format!("image dimension {tok:?} is not an integer")))
        };
        CameraIntrinsics::new(head[0], head[1], head[2], head[3], dim(toks[4])?, dim(toks[5])?)
    }
}

/// `P_C = R P_W + t`.
pub fn transform_to_camera(pose: &Pose, p_world: &Point3) -> Point3 {
    pose.transform(p_world)
}

/// Projects a camera-frame point. Fails with `BehindCamera` when `Z_C <= 1e-6`.
pub fn project(intr: &CameraIntrinsics, p_cam: &Point3) -> Result<Projection, GeometryError> {
    let z = p_cam.z;
    if !(z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera(z));
    }
    Ok(Projection {
        pixel: Pixel::new(intr.fx * p_cam.x / z + intr.u0, intr.fy * p_cam.y / z + intr.v0),
        depth: z,
    })
}

/// World point straight to pixel.
pub fn project_world(
    intr: &CameraIntrinsics,
    pose: &Pose,
    p_world: &Point3,
) -> Result<Projection, GeometryError> {
    project(intr, &pose.transform(p_world))
}

/// `∂(u,v)/∂p_c` at a camera-frame point.
pub fn projection_point_jacobian(
    intr: &CameraIntrinsics,
    p_cam: &Point3,
) -> Result<Matrix2x3<f64>, GeometryError> {
    let z = p_cam.z;
    if !(z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera(z));
    }
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    Ok(Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * p_cam.x * iz2,
        0.0,
        intr.fy * iz,
        -intr.fy * p_cam.y * iz2,
    ))
}

/// `∂(u,v)/∂[ω; ν]` for the left tangent increment described in the module docs.
pub fn project_jacobian(
    intr: &CameraIntrinsics,
    pose: &Pose,
    p_world: &Point3,
) -> Result<Matrix2x6<f64>, GeometryError> {
    let pc = pose.transform(p_world);
    let dpix = projection_point_jacobian(intr, &pc)?;
    // d(exp(ω) p_c)/dω at 0 is -[p_c]x
    let neg_skew = -pc.coords.cross_matrix();
    let rot = dpix * neg_skew;
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&rot);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpix);
    Ok(j)
}
