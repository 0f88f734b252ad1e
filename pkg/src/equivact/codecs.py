"""Action-space codecs: encode an action into a learning objective and decode it back.

Each codec is a pair of exact inverse maps for a fixed embodiment configuration
m = [ee_in_base (E), cam_in_base (C)]:

    be           y = A                      A = y
    ee           y = E^-1 A                 A = E y
    ce           y = C^-1 A                 A = C y
    ours-full    y = C^-1 A E^-1 C          A = C y C^-1 E
    ours-robust  y_R = Rc^T Ra Re^T Rc      R_A = Rc y_R Rc^T Re
                 y_t = Rc^T (ta - te)       t_A = Rc y_t + te
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .embodiment import Action, EmbodimentConfig
from .se3 import Pose, from_rot6d, to_rot6d

VEC_DIM = 10


class CodecId(enum.Enum):
    BE = "be"
    EE = "ee"
    CE = "ce"
    OURS_FULL = "ours-full"
    OURS_ROBUST = "ours-robust"

    @classmethod
    def parse(cls, name: str | CodecId) -> CodecId:
        if isinstance(name, CodecId):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for c in cls:
            if c.value == key:
                return c
        raise ValueError(f"unknown codec {name!r}; expected one of {[c.value for c in cls]}")


@dataclass(frozen=True)
class ActionObjective:
    """Network-side target: rotation, translation (m) and gripper."""

    rot: np.ndarray
    trans: np.ndarray
    gripper: float = 1.0
    gripper_clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rot", np.array(self.rot, dtype=float).reshape(3, 3))
        object.__setattr__(self, "trans", np.array(self.trans, dtype=float).reshape(3))
        object.__setattr__(self, "gripper", float(self.gripper))

    @property
    def pose(self) -> Pose:
        return Pose(self.rot, self.trans)

    @classmethod
    def from_pose(cls, p: Pose, gripper: float = 1.0) -> ActionObjective:
        return cls(p.R, p.t, gripper)


def decode(codec: CodecId, m: EmbodimentConfig, y: ActionObjective) -> Action:
    E, C = m.ee_in_base, m.cam_in_base
    if codec is CodecId.BE:
        T = y.pose
    elif codec is CodecId.EE:
        T = E @ y.pose
    elif codec is CodecId.CE:
        T = C @ y.pose
    elif codec is CodecId.OURS_FULL:
        T = C @ y.pose @ C.inv() @ E
    elif codec is CodecId.OURS_ROBUST:
        Rc = C.R
        T = Pose(Rc @ y.rot @ Rc.T @ E.R, Rc @ y.trans + E.t)
    else:
        raise ValueError(f"unsupported codec {codec!r}")
    return Action(T, y.gripper)


def decode_pose(codec: CodecId, m: EmbodimentConfig, y: Pose) -> Pose:
    return decode(codec, m, ActionObjective.from_pose(y)).target_ee_in_base


def encode(codec: CodecId, m: EmbodimentConfig, a: Action) -> ActionObjective:
    E, C, A = m.ee_in_base, m.cam_in_base, a.target_ee_in_base
    if codec is CodecId.BE:
        y = A
    elif codec is CodecId.EE:
        y = E.inv() @ A
    elif codec is CodecId.CE:
        y = C.inv() @ A
    elif codec is CodecId.OURS_FULL:
        y = C.inv() @ A @ E.inv() @ C
    elif codec is CodecId.OURS_ROBUST:
        Rc = C.R
        y = Pose(Rc.T @ A.R @ E.R.T @ Rc, Rc.T @ (A.t - E.t))
    else:
        raise ValueError(f"unsupported codec {codec!r}")
    return ActionObjective(y.R, y.t, a.gripper)


def objective_to_vec(y: ActionObjective) -> np.ndarray:
    """Layout: [t (3), rot6d (6), gripper (1)]."""
    return np.concatenate([y.trans, to_rot6d(y.rot), [y.gripper]])


def vec_to_objective(v) -> ActionObjective:
    """Inverse of :func:`objective_to_vec`; rotation via Gram-Schmidt.

    An out-of-range gripper is clamped and flagged on the result.
    """
    v = np.asarray(v, dtype=float).reshape(VEC_DIM)
    R = from_rot6d(v[3:9])
    g = float(v[9])
    clamped = not (-1.0 <= g <= 1.0)
    if clamped:
        warnings.warn(f"gripper value {g} clamped to [-1, 1]", stacklevel=2)
        g = float(np.clip(g, -1.0, 1.0))
    return ActionObjective(R, v[:3], g, clamped)
