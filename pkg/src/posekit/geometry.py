"""SE(3) rigid-body math, Euler/quaternion conversion, and the pinhole camera model.

Conventions, fixed once for the whole library:

- Quaternions are (w, x, y, z), unit norm, canonicalized so w >= 0 (a w of
  exactly 0 is disambiguated by making the first nonzero component positive).
  Canonicalization makes pose equality testable componentwise.
- Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll), radians,
  each wrapped to [-pi, pi). At gimbal lock (|pitch| = pi/2) roll is set to 0
  and the whole in-plane rotation is assigned to yaw.
- Camera rays are K^-1 [u, v, 1]^T, deliberately left unnormalized so the
  third component stays 1 and metric depth alignment is preserved.
- All arithmetic is float64; float32 belongs only at serialization boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# quat_to_euler switches to the gimbal-lock branch when |sin(pitch)| exceeds
# this. Tight enough that poses with |pitch| < pi/2 - 1e-6 never hit it.
_LOCK_SIN = 1.0 - 1e-13


def wrap_angle(theta: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def _canonicalize_quat(q: np.ndarray) -> np.ndarray:
    """Pick the representative of the quaternion double cover with w >= 0."""
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for component in q[1:]:
            if component != 0.0:
                return q if component > 0.0 else -q
    return q


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Se3Pose:
    """Rigid transform: translation in meters plus a unit quaternion (w, x, y, z).

    The quaternion is renormalized and canonicalized on construction, so two
    poses representing the same transform compare equal componentwise.
    """

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("pose components must be finite")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise ValueError("quaternion norm is zero")
        q = _canonicalize_quat(q / norm)
        object.__setattr__(self, "translation", _readonly(t))
        object.__setattr__(self, "rotation", _readonly(q))

    @staticmethod
    def identity() -> "Se3Pose":
        return Se3Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Se3Pose":
        return Se3Pose(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X (yaw-pitch-roll) angles in radians, wrapped to [-pi, pi)."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, wrap_angle(float(value)))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class CameraExtrinsics:
    """Transform taking base-frame coordinates into camera-frame coordinates."""

    pose_of_base_in_camera: Se3Pose


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def compose(a: Se3Pose, b: Se3Pose) -> Se3Pose:
    """Compose two rigid transforms; the result applies b first, then a."""
    rotation = quat_multiply(a.rotation, b.rotation)
    translation = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return Se3Pose(translation, rotation)


def invert(p: Se3Pose) -> Se3Pose:
    """Inverse transform: compose(p, invert(p)) is the identity."""
    conj = np.array([p.rotation[0], -p.rotation[1], -p.rotation[2], -p.rotation[3]])
    translation = -(quat_to_matrix(conj) @ p.translation)
    return Se3Pose(translation, conj)


def transform_point(p: Se3Pose, x) -> np.ndarray:
    """Apply the rigid transform to a 3-vector: R @ x + t."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    return quat_to_matrix(p.rotation) @ x + p.translation


def euler_to_quat(e: EulerAngles) -> np.ndarray:
    """Quaternion of intrinsic Z-Y-X angles, i.e. qz(yaw) * qy(pitch) * qx(roll)."""
    cr = math.cos(e.roll * 0.5)
    sr = math.sin(e.roll * 0.5)
    cp = math.cos(e.pitch * 0.5)
    sp = math.sin(e.pitch * 0.5)
    cy = math.cos(e.yaw * 0.5)
    sy = math.sin(e.yaw * 0.5)
    q = np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )
    return _canonicalize_quat(q / np.linalg.norm(q))


def quat_to_euler(q: np.ndarray) -> EulerAngles:
    """Intrinsic Z-Y-X angles of a unit quaternion.

    At gimbal lock (|pitch| = pi/2) the roll/yaw split is degenerate; roll is
    defined to be 0 and the remaining in-plane rotation goes to yaw.
    """
    r = quat_to_matrix(np.asarray(q, dtype=np.float64).reshape(4))
    sin_pitch = min(1.0, max(-1.0, -float(r[2, 0])))
    if abs(sin_pitch) >= _LOCK_SIN:
        pitch = math.copysign(math.pi / 2.0, sin_pitch)
        # Rows 0/1 collapse to functions of (roll -+ yaw); with roll := 0 the
        # surviving entries read -sin(yaw) and cos(yaw) for either lock sign.
        return EulerAngles(
            roll=0.0,
            pitch=pitch,
            yaw=math.atan2(-float(r[0, 1]), float(r[1, 1])),
        )
    return EulerAngles(
        roll=math.atan2(float(r[2, 1]), float(r[2, 2])),
        pitch=math.asin(sin_pitch),
        yaw=math.atan2(float(r[1, 0]), float(r[0, 0])),
    )


def compute_ray(k: CameraIntrinsics, u: float, v: float) -> np.ndarray:
    """Viewing direction K^-1 [u, v, 1]^T for a continuous pixel coordinate.

    The coordinate may lie outside the image (non-centered crops are valid).
    The ray is not normalized: the z component is exactly 1.
    """
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError("pixel coordinates must be finite")
    return np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])


def raymap(k: CameraIntrinsics) -> np.ndarray:
    """Dense H x W x 3 field of per-pixel rays sampled at pixel centers.

    Element (v, u) equals compute_ray(k, u + 0.5, v + 0.5), same arithmetic.
    """
    us = np.arange(k.width, dtype=np.float64) + 0.5
    vs = np.arange(k.height, dtype=np.float64) + 0.5
    out = np.empty((k.height, k.width, 3), dtype=np.float64)
    out[:, :, 0] = ((us - k.cx) / k.fx)[None, :]
    out[:, :, 1] = ((vs - k.cy) / k.fy)[:, None]
    out[:, :, 2] = 1.0
    return out


def base_to_camera(pose_in_base: Se3Pose, ext: CameraExtrinsics) -> Se3Pose:
    """Re-express a base-frame pose in the camera frame."""
    return compose(ext.pose_of_base_in_camera, pose_in_base)


def camera_to_base(pose_in_camera: Se3Pose, ext: CameraExtrinsics) -> Se3Pose:
    """Inverse of base_to_camera."""
    return compose(invert(ext.pose_of_base_in_camera), pose_in_camera)
