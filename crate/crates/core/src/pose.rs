//! Rigid poses, pinhole projection and the three delta-pose parameterizations.
//!
//! A [`Pose`] maps model-frame points into the camera frame (`x_cam = R x + t`).
//! Deltas between two poses can be expressed in three frames:
//!
//! * **untangled**: rotation about the object center with axes parallel to the
//!   camera axes, translation as an image-plane pixel shift plus a log depth ratio;
//! * **camera**: rotation about the camera origin (rotating the translation too);
//! * **model**: rotation about the object center in the model's own axes.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("point has non-positive camera depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Unit quaternion rotation, canonicalized so that `w >= 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.coords; // (x, y, z, w)
    let flip = if c.w != 0.0 {
        c.w < 0.0
    } else {
        // tie on w: first nonzero of (x, y, z) must be positive
        [c.x, c.y, c.z]
            .into_iter()
            .find(|v| *v != 0.0)
            .is_some_and(|v| v < 0.0)
    };
    if flip {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds a rotation from raw `(w, x, y, z)` components, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, PoseError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(PoseError::DegenerateQuaternion);
        }
        // already-unit input (e.g. deserialized) is kept bit-exact
        let q = if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            q
        } else {
            q / n
        };
        Ok(Self::from_unit(UnitQuaternion::new_unchecked(q)))
    }

    pub fn from_unit(q: UnitQuaternion<f64>) -> Self {
        Self { q: canonical(q) }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        Self::from_scaled_axis(axis * (angle / n))
    }

    /// Rotation vector (axis times angle, radians).
    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        Self::from_unit(UnitQuaternion::from_scaled_axis(v))
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix(m);
        Self::from_unit(UnitQuaternion::from_rotation_matrix(&r))
    }

    /// Intrinsic X-Y-Z Euler angles in radians: `R = Rx(a) * Ry(b) * Rz(c)`.
    pub fn from_euler_xyz(a: f64, b: f64, c: f64) -> Self {
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a);
        let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), b);
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c);
        Self::from_unit(rx * ry * rz)
    }

    pub fn from_euler_xyz_deg(a: f64, b: f64, c: f64) -> Self {
        Self::from_euler_xyz(a.to_radians(), b.to_radians(), c.to_radians())
    }

    /// Inverse of [`Rotation::from_euler_xyz`]; returns `(a, b, c)` in radians.
    pub fn to_euler_xyz(&self) -> (f64, f64, f64) {
        let m = self.matrix();
        let b = m[(0, 2)].clamp(-1.0, 1.0).asin();
        let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
        (a, b, c)
    }

    /// `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let c = self.q.coords;
        [c.w, c.x, c.y, c.z]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// `self * other`: apply `other` first.
    /// Composing with the identity returns the other operand bit-for-bit.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        if *other == Self::identity() {
            return *self;
        }
        if *self == Self::identity() {
            return *other;
        }
        let q = self.q * other.q;
        Self::from_unit(UnitQuaternion::new_normalize(q.into_inner()))
    }

    pub fn inverse(&self) -> Rotation {
        Self::from_unit(self.q.inverse())
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let c = self.q.coords;
        2.0 * c.xyz().norm().atan2(c.w.abs())
    }

    /// Rotation vector with norm in `[0, pi]`.
    pub fn scaled_axis(&self) -> Vector3<f64> {
        self.q.scaled_axis()
    }

    /// Same axis, angle multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Rotation {
        if factor == 1.0 {
            return *self;
        }
        Self::from_scaled_axis(self.scaled_axis() * factor)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rotation(w={w}, x={x}, y={y}, z={z})")
    }
}

/// Geodesic angle between two rotations, `2 acos |<q_a, q_b>|`, in `[0, pi]`.
///
/// Evaluated as `4 atan2(|a - b|, |a + b|)` (with `b` flipped onto `a`'s
/// hemisphere), which stays accurate for nearly equal rotations.
pub fn angular_distance(a: &Rotation, b: &Rotation) -> f64 {
    let (qa, mut qb) = (a.q.coords, b.q.coords);
    if qa.dot(&qb) < 0.0 {
        qb = -qb;
    }
    4.0 * (qa - qb).norm().atan2((qa + qb).norm())
}

/// Camera-from-model rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Pose composed with a model-frame rotation (`R * g`), translation kept.
    pub fn with_model_rotation(&self, g: &Rotation) -> Pose {
        Pose::new(self.rotation.compose(g), self.translation)
    }

    pub fn depth(&self) -> f64 {
        self.translation.z
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            q: self.rotation.wxyz(),
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let rot = Rotation::from_wxyz(r.q[0], r.q[1], r.q[2], r.q[3])
            .map_err(serde::de::Error::custom)?;
        Ok(Pose::new(rot, Vector3::from(r.t)))
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wxyz().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let q = <[f64; 4]>::deserialize(d)?;
        Rotation::from_wxyz(q[0], q[1], q[2], q[3]).map_err(serde::de::Error::custom)
    }
}

/// Pinhole intrinsics (no distortion). Pixel `(row i, col j)` covers the
/// continuous square `[j, j+1) x [i, i+1)`; its center is `(j + 0.5, i + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, PoseError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(PoseError::InvalidIntrinsics(
                "focal lengths must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(PoseError::InvalidIntrinsics("image size must be positive"));
        }
        Ok(())
    }

    /// LINEMOD-like default camera, 640x480.
    pub fn linemod() -> Self {
        Self {
            fx: 572.4114,
            fy: 573.57043,
            cx: 325.2611,
            cy: 242.04899,
            width: 640,
            height: 480,
        }
    }

    /// Width over height.
    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Projects a camera-frame point.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, PoseError> {
        if !(p.z > 0.0) {
            return Err(PoseError::NonPositiveDepth(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

/// Projects a model-frame point under `pose`.
pub fn project(
    pose: &Pose,
    point: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<Vector2<f64>, PoseError> {
    intr.project_camera_point(&pose.transform_point(point))
}

/// Delta pose in the untangled parameterization.
///
/// `v.x`, `v.y` are pixel shifts of the projected object center and `v.z` is
/// `ln(z_src / z_tgt)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UntangledDelta {
    pub rot: Rotation,
    pub v: Vector3<f64>,
}

impl UntangledDelta {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rot: Rotation, v: Vector3<f64>) -> Self {
        Self { rot, v }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|c| c.is_finite()) && self.rot.wxyz().iter().all(|c| c.is_finite())
    }

    /// Delta with rotation angle and `v` both scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rot: self.rot.scaled(factor),
            v: self.v * factor,
        }
    }
}

fn require_depth(t: &Vector3<f64>) -> Result<(), PoseError> {
    if t.z > 0.0 {
        Ok(())
    } else {
        Err(PoseError::NonPositiveDepth(t.z))
    }
}

/// Translation update shared by the untangled and model-frame maps.
pub fn apply_image_translation(
    v: &Vector3<f64>,
    t_src: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<Vector3<f64>, PoseError> {
    require_depth(t_src)?;
    if *v == Vector3::zeros() {
        return Ok(*t_src);
    }
    let z = t_src.z / v.z.exp();
    let x = (v.x / intr.fx + t_src.x / t_src.z) * z;
    let y = (v.y / intr.fy + t_src.y / t_src.z) * z;
    Ok(Vector3::new(x, y, z))
}

/// Image-space translation delta taking `t_src` to `t_tgt`.
pub fn image_translation_delta(
    t_src: &Vector3<f64>,
    t_tgt: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<Vector3<f64>, PoseError> {
    require_depth(t_src)?;
    require_depth(t_tgt)?;
    Ok(Vector3::new(
        intr.fx * (t_tgt.x / t_tgt.z - t_src.x / t_src.z),
        intr.fy * (t_tgt.y / t_tgt.z - t_src.y / t_src.z),
        (t_src.z / t_tgt.z).ln(),
    ))
}

pub fn apply_untangled(
    delta: &UntangledDelta,
    src: &Pose,
    intr: &CameraIntrinsics,
) -> Result<Pose, PoseError> {
    let t = apply_image_translation(&delta.v, &src.translation, intr)?;
    if delta.rot == Rotation::identity() {
        return Ok(Pose::new(src.rotation, t));
    }
    Ok(Pose::new(delta.rot.compose(&src.rotation), t))
}

pub fn compute_untangled(
    src: &Pose,
    tgt: &Pose,
    intr: &CameraIntrinsics,
) -> Result<UntangledDelta, PoseError> {
    let v = image_translation_delta(&src.translation, &tgt.translation, intr)?;
    let rot = if tgt.rotation == src.rotation {
        Rotation::identity()
    } else {
        tgt.rotation.compose(&src.rotation.inverse())
    };
    Ok(UntangledDelta { rot, v })
}

/// Entangled camera-frame update: `R' = dR R`, `t' = dR t + dt`.
pub fn apply_camera_frame(delta_r: &Rotation, delta_t: &Vector3<f64>, src: &Pose) -> Pose {
    Pose::new(
        delta_r.compose(&src.rotation),
        delta_r.rotate(&src.translation) + delta_t,
    )
}

/// Model-axes update: `R' = R dR`, translation as in the untangled map.
pub fn apply_model_frame(
    delta_r: &Rotation,
    v: &Vector3<f64>,
    src: &Pose,
    intr: &CameraIntrinsics,
) -> Result<Pose, PoseError> {
    let t = apply_image_translation(v, &src.translation, intr)?;
    Ok(Pose::new(src.rotation.compose(delta_r), t))
}

/// Coordinate frame in which a delta's rotation is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Untangled,
    Camera,
    Model,
}

impl Representation {
    pub const ALL: [Representation; 3] = [Self::Untangled, Self::Camera, Self::Model];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Untangled => "untangled",
            Self::Camera => "camera",
            Self::Model => "model",
        }
    }

    /// Applies `delta` to `src` under this representation.
    ///
    /// For `Camera`, the rotation acts about the camera origin (moving the
    /// object center to `dR t_src`) and `v` is then an image-space shift
    /// relative to that rotated center.
    pub fn apply(
        &self,
        delta: &UntangledDelta,
        src: &Pose,
        intr: &CameraIntrinsics,
    ) -> Result<Pose, PoseError> {
        match self {
            Self::Untangled => apply_untangled(delta, src, intr),
            Self::Model => apply_model_frame(&delta.rot, &delta.v, src, intr),
            Self::Camera => {
                let rotated = delta.rot.rotate(&src.translation);
                let t = apply_image_translation(&delta.v, &rotated, intr)?;
                Ok(apply_camera_frame(&delta.rot, &(t - rotated), src))
            }
        }
    }

    /// Exact inverse of [`Representation::apply`].
    pub fn compute(
        &self,
        src: &Pose,
        tgt: &Pose,
        intr: &CameraIntrinsics,
    ) -> Result<UntangledDelta, PoseError> {
        match self {
            Self::Untangled => compute_untangled(src, tgt, intr),
            Self::Model => {
                let v = image_translation_delta(&src.translation, &tgt.translation, intr)?;
                let rot = src.rotation.inverse().compose(&tgt.rotation);
                Ok(UntangledDelta { rot, v })
            }
            Self::Camera => {
                let rot = tgt.rotation.compose(&src.rotation.inverse());
                let rotated = rot.rotate(&src.translation);
                let v = image_translation_delta(&rotated, &tgt.translation, intr)?;
                Ok(UntangledDelta { rot, v })
            }
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Representation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "untangled" => Ok(Self::Untangled),
            "camera" => Ok(Self::Camera),
            "model" => Ok(Self::Model),
            other => Err(format!("unknown representation `{other}`")),
        }
    }
}
