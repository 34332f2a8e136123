"""Rigid-body math shared by every module: poses, pose errors, wrenches.

Conventions:
    - Quaternions are [w, x, y, z], kept unit-norm (renormalized after every
      composition to bound drift).
    - Orientation errors use the quaternion logarithm (axis-angle vector),
      which is singularity-free for relative rotations below pi.
    - All arrays are float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def _as_vec(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"expected length-{n} vector, got shape {np.shape(x)}")
    return v


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = _as_vec(q, 4)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a*b (apply b first when rotating column vectors)."""
    aw, ax, ay, az = _as_vec(a, 4)
    bw, bx, by, bz = _as_vec(b, 4)
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    q = _as_vec(q, 4)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate 3-vector v by unit quaternion q."""
    q = _as_vec(q, 4)
    v = _as_vec(v, 3)
    u = q[1:]
    w = q[0]
    # v' = v + 2w(u x v) + 2 u x (u x v)
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion for a 3x3 rotation matrix (Shepperd's method)."""
    r = np.asarray(rot, dtype=float)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s,
                      (r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _as_vec(axis, 3)
    n = math.sqrt(float(axis @ axis))
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], axis / n * math.sin(half)))


def quat_log(q) -> np.ndarray:
    """Rotation vector (axis*angle) of a unit quaternion, |result| <= pi."""
    q = quat_normalize(q)
    if q[0] < 0.0:  # take the short way around
        q = -q
    vn = math.sqrt(float(q[1:] @ q[1:]))
    if vn < 1e-12:
        return 2.0 * q[1:]  # small-angle: q ~ [1, v/2]
    angle = 2.0 * math.atan2(vn, q[0])
    return q[1:] * (angle / vn)


def quat_exp(rotvec) -> np.ndarray:
    """Unit quaternion with rotation vector rotvec (inverse of quat_log)."""
    v = _as_vec(rotvec, 3)
    angle = math.sqrt(float(v @ v))
    if angle < 1e-12:
        return quat_normalize(np.concatenate(([1.0], 0.5 * v)))
    return quat_from_axis_angle(v, angle)


# ---------------------------------------------------------------------------
# pose / wrench / error types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose6:
    """Position + unit quaternion orientation; immutable value type."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec(self.position, 3).copy())
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    @staticmethod
    def identity() -> "Pose6":
        return Pose6()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose6":
        return Pose6(position=np.array([x, y, z]))

    @staticmethod
    def from_axis_angle(axis, angle: float, position=(0.0, 0.0, 0.0)) -> "Pose6":
        return Pose6(position=np.asarray(position, dtype=float),
                     orientation=quat_from_axis_angle(axis, angle))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def apply(self, point) -> np.ndarray:
        """Map a point from this pose's frame into the parent frame."""
        return self.position + quat_rotate(self.orientation, point)

    def inverse(self) -> "Pose6":
        qi = quat_conj(self.orientation)
        return Pose6(position=-quat_rotate(qi, self.position), orientation=qi)


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        f = _as_vec(self.force, 3)
        t = _as_vec(self.torque, 3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench components must be finite")
        object.__setattr__(self, "force", f.copy())
        object.__setattr__(self, "torque", t.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@dataclass(frozen=True)
class PoseError:
    """Translational (m) and rotational (axis-angle, rad) error split."""

    translational: np.ndarray
    rotational: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translational", _as_vec(self.translational, 3).copy())
        rot = _as_vec(self.rotational, 3).copy()
        if math.sqrt(float(rot @ rot)) > math.pi + 1e-9:
            raise ValueError("rotational error magnitude exceeds pi")
        object.__setattr__(self, "rotational", rot)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translational, self.rotational])


def compose(a: Pose6, b: Pose6) -> Pose6:
    """a∘b: apply b in a's frame."""
    return Pose6(position=a.position + quat_rotate(a.orientation, b.position),
                 orientation=quat_mul(a.orientation, b.orientation))


def pose_error(desired: Pose6, actual: Pose6) -> PoseError:
    """desired-minus-actual error; rotation as log of the relative quaternion."""
    rel = quat_mul(desired.orientation, quat_conj(actual.orientation))
    return PoseError(translational=desired.position - actual.position,
                     rotational=quat_log(rel))


# ---------------------------------------------------------------------------
# small fixed-size linear algebra used by the controller
# ---------------------------------------------------------------------------

def jacobian_transpose_apply(jac: np.ndarray, w) -> np.ndarray:
    """J^T w for a 6xN jacobian and 6-vector w."""
    jac = np.asarray(jac, dtype=float)
    if jac.shape[0] != 6:
        raise ValueError(f"jacobian must have 6 rows, got {jac.shape}")
    return jac.T @ _as_vec(w, 6)
