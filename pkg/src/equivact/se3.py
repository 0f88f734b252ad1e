"""Rigid transforms, rotations and the 6D rotation representation.

Rotations are stored as 3x3 matrices. Quaternions only appear transiently
(sampling and serialization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9
QUAT_NORM_TOL = 1e-6
_DEGENERATE = 1e-8


class DegenerateRot6D(ValueError):
    """Raised when a 6D rotation vector cannot be Gram-Schmidt orthonormalized."""


class InvalidPose(ValueError):
    pass


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        return False
    return abs(np.linalg.det(R) - 1.0) < tol


def validate(R: np.ndarray) -> dict:
    """Report orthonormality drift of ``R`` without correcting it."""
    R = np.asarray(R, dtype=float)
    return {
        "ortho_err": float(np.max(np.abs(R.T @ R - np.eye(3)))),
        "det_err": float(abs(np.linalg.det(R) - 1.0)),
    }


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be normalized."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion [w, x, y, z] to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion [w, x, y, z] with w >= 0.

    Uses the largest-diagonal branch for numerical stability.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


@dataclass(frozen=True, eq=False)
class Pose:
    """SE(3) element: rotation matrix ``R`` and translation ``t`` (meters).

    ``a @ b`` composes like the homogeneous product ``a.matrix @ b.matrix``.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def _wrap(cls, R: np.ndarray, t: np.ndarray) -> Pose:
        # fast path for freshly computed float arrays owned by no one else
        R.flags.writeable = False
        t.flags.writeable = False
        p = object.__new__(cls)
        object.__setattr__(p, "R", R)
        object.__setattr__(p, "t", t)
        return p

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_translation(cls, t) -> Pose:
        return cls(np.eye(3), t)

    @classmethod
    def from_rotation(cls, R) -> Pose:
        return cls(R, np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __matmul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return compose(self, other)

    def inv(self) -> Pose:
        return inverse(self)

    def apply(self, p) -> np.ndarray:
        """Transform a point (or an (N, 3) array of points)."""
        return np.asarray(p, dtype=float) @ self.R.T + self.t

    def is_valid(self) -> bool:
        return is_rotation(self.R) and bool(np.all(np.isfinite(self.t)))

    def allclose(self, other: Pose, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol, rtol=0) and np.allclose(self.t, other.t, atol=atol, rtol=0))

    def __repr__(self) -> str:
        q = matrix_to_quat(self.R) if is_rotation(self.R, 1e-6) else None
        return f"Pose(t={np.round(self.t, 6).tolist()}, q={None if q is None else np.round(q, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return Pose._wrap(a.R @ b.R, a.R @ b.t + a.t)


def inverse(a: Pose) -> Pose:
    Rt = a.R.T
    return Pose._wrap(Rt.copy(), -Rt @ a.t)


def to_rot6d(R: np.ndarray) -> np.ndarray:
    """First two columns of ``R``, concatenated column-major."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[:, 0], R[:, 1]])


def from_rot6d(v) -> np.ndarray:
    """Gram-Schmidt reconstruction: normalize c1, orthogonalize c2, c3 = c1 x c2."""
    v = np.asarray(v, dtype=float).reshape(6)
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    if not np.isfinite(n1) or n1 <= _DEGENERATE:
        raise DegenerateRot6D(f"first column norm {n1:.3g} too small")
    b1 = a1 / n1
    r2 = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(r2)
    if not np.isfinite(n2) or n2 <= _DEGENERATE:
        raise DegenerateRot6D(f"Gram-Schmidt residual norm {n2:.3g} too small")
    b2 = r2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def geodesic_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in [0, pi] of the relative rotation a^T b.

    Equal to arccos((tr(a^T b) - 1) / 2), evaluated as atan2(sin, cos) so that
    small angles keep full precision (plain arccos bottoms out near 1e-8).
    """
    D = np.asarray(a).T @ np.asarray(b)
    c = np.clip((np.trace(D) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    return float(np.arctan2(s, c))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(rotation angle, translation distance) between two poses."""
    return geodesic_angle(a.R, b.R), float(np.linalg.norm(a.t - b.t))


def random_rotation(seed) -> np.ndarray:
    """Uniform on SO(3): normalized Gaussian 4-vector read as a quaternion."""
    rng = _as_rng(seed)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def random_pose(seed, translation_range: float = 1.0) -> Pose:
    rng = _as_rng(seed)
    R = random_rotation(rng)
    t = rng.uniform(-translation_range, translation_range, size=3)
    return Pose(R, t)


def random_rotation_bounded(seed, max_angle: float) -> np.ndarray:
    """Rotation about a uniform random axis by an angle uniform in [0, max_angle]."""
    rng = _as_rng(seed)
    axis = rng.standard_normal(3)
    return axis_angle(axis, rng.uniform(0.0, max_angle))


def pose_to_dict(p: Pose) -> dict:
    return {"t": [float(x) for x in p.t], "q": [float(x) for x in matrix_to_quat(p.R)]}


def pose_from_dict(d: dict) -> Pose:
    try:
        t = np.asarray(d["t"], dtype=float)
        q = np.asarray(d["q"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidPose(f"malformed pose record: {exc}") from exc
    if t.shape != (3,) or q.shape != (4,):
        raise InvalidPose("pose needs t: [x,y,z] and q: [w,x,y,z]")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
        raise InvalidPose("non-finite pose entries")
    n = np.linalg.norm(q)
    if abs(n - 1.0) > QUAT_NORM_TOL:
        raise InvalidPose(f"quaternion norm {n:.17g} is not within {QUAT_NORM_TOL} of 1")
    return Pose(quat_to_matrix(q / n), t)
