"""Geometry-aware attention: block-diagonal pose operator, pose-embedded
self-attention, and noisy-action positional embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codecs import ActionObjective, CodecId, decode
from .embodiment import EmbodimentConfig
from .se3 import Pose


class DimensionNotMultipleOf4(ValueError):
    pass


class BehindCamera(ValueError):
    pass


MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("fx", "fy", "cx", "cy", "width", "height")}


@dataclass
class TokenSet:
    tokens: np.ndarray  # (N, d)
    planes: np.ndarray  # (N, 2) normalized camera-plane coordinates
    cam_poses: list  # N Poses, camera in base

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=float)
        self.planes = np.asarray(self.planes, dtype=float)
        n, d = self.tokens.shape
        if d % 4:
            raise DimensionNotMultipleOf4(f"token dimension {d} is not a multiple of 4")
        if self.planes.shape != (n, 2) or len(self.cam_poses) != n:
            raise ValueError("planes and cam_poses must have one entry per token")
        if not np.all(np.isfinite(self.planes)):
            raise ValueError("non-finite plane coordinates")


@dataclass
class AttentionWeights:
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wp: np.ndarray  # (d, 2)

    @classmethod
    def random(cls, d: int, seed) -> AttentionWeights:
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(d)
        return cls(*(rng.uniform(-s, s, size=shape) for shape in [(d, d), (d, d), (d, d), (d, 2)]))


def _as_matrix(T) -> np.ndarray:
    return T.matrix if isinstance(T, Pose) else np.asarray(T, dtype=float)


def sigma(T, d: int) -> np.ndarray:
    """Block-diagonal d x d matrix holding d/4 copies of the 4x4 matrix T."""
    if d % 4:
        raise DimensionNotMultipleOf4(f"dimension {d} is not a multiple of 4")
    return np.kron(np.eye(d // 4), _as_matrix(T))


def _sigma_batch(T: np.ndarray, d: int) -> np.ndarray:
    # (N, 4, 4) -> (N, d, d)
    n = T.shape[0]
    out = np.zeros((n, d, d))
    for b in range(d // 4):
        out[:, 4 * b : 4 * b + 4, 4 * b : 4 * b + 4] = T
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def pose_embedded_attention(ts: TokenSet, w: AttentionWeights, return_weights: bool = False):
    """Single-head self-attention with relative camera-pose embedding.

    Queries are transported by sigma(T_i^-1 transposed), keys and values by
    sigma(T_i), and outputs back by sigma(T_i^-1), where T_i is the camera
    pose of token i in the base frame. Logits then only see T_i^-1 T_j.
    """
    n, d = ts.tokens.shape
    if d % 4:
        raise DimensionNotMultipleOf4(f"dimension {d} is not a multiple of 4")
    x = ts.tokens + ts.planes @ w.Wp.T
    q, k, v = x @ w.Wq.T, x @ w.Wk.T, x @ w.Wv.T
    T = np.stack([_as_matrix(p) for p in ts.cam_poses])
    T_inv = np.linalg.inv(T)
    S_T = _sigma_batch(T, d)
    S_inv = _sigma_batch(T_inv, d)
    q2 = np.einsum("nji,nj->ni", S_inv, q)  # sigma(T^-1)^T q
    k2 = np.einsum("nij,nj->ni", S_T, k)
    v2 = np.einsum("nij,nj->ni", S_T, v)
    attn = softmax(q2 @ k2.T / np.sqrt(d), axis=1)
    o = np.einsum("nij,nj->ni", S_inv, attn @ v2)
    return (o, attn) if return_weights else o


def vanilla_attention(x: np.ndarray, w: AttentionWeights) -> np.ndarray:
    d = x.shape[1]
    q, k, v = x @ w.Wq.T, x @ w.Wk.T, x @ w.Wv.T
    return softmax(q @ k.T / np.sqrt(d), axis=1) @ v


def project_point(intr: CameraIntrinsics, T_bc: Pose, point_in_base) -> np.ndarray:
    """Pinhole projection to image coordinates normalized by width/height.

    Results outside [0, 1] are off-screen but still returned; see
    :func:`on_screen`.
    """
    p = T_bc.inv().apply(point_in_base)
    return project_camera_point(intr, p)


def project_camera_point(intr: CameraIntrinsics, p_cam) -> np.ndarray:
    x, y, z = np.asarray(p_cam, dtype=float)
    if not z > MIN_DEPTH:
        raise BehindCamera(f"camera depth {z:.3g} m is not positive")
    return np.array([(intr.fx * x / z + intr.cx) / intr.width, (intr.fy * y / z + intr.cy) / intr.height])


def on_screen(uv) -> bool:
    uv = np.asarray(uv)
    return bool(np.all((uv >= 0.0) & (uv <= 1.0)))


def action_positional_embedding(
    intr: CameraIntrinsics,
    m: EmbodimentConfig,
    codec: CodecId,
    y_noisy: ActionObjective,
    Wp: np.ndarray,
) -> np.ndarray:
    """Decode the noisy objective, project its position into the image, embed with Wp."""
    target = decode(codec, m, y_noisy).target_ee_in_base
    uv = project_point(intr, m.cam_in_base, target.t)
    return np.asarray(Wp) @ uv
