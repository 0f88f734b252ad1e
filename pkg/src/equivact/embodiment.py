"""Embodiment configurations, actions and the transformation group acting on them."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .se3 import Pose, _as_rng, pose_from_dict, pose_to_dict, random_rotation_bounded

DEFAULT_ROT_RANGE = np.pi
DEFAULT_TRANS_RANGE = 1.0


@dataclass(frozen=True)
class EmbodimentConfig:
    """m = [ee_in_base, cam_in_base]."""

    ee_in_base: Pose
    cam_in_base: Pose

    def to_dict(self) -> dict:
        return {"ee_in_base": pose_to_dict(self.ee_in_base), "cam_in_base": pose_to_dict(self.cam_in_base)}

    @classmethod
    def from_dict(cls, d: dict) -> EmbodimentConfig:
        return cls(pose_from_dict(d["ee_in_base"]), pose_from_dict(d["cam_in_base"]))


@dataclass(frozen=True)
class Action:
    """Desired end-effector pose in the base frame plus a gripper command.

    Gripper: -1 fully closed, +1 fully open.
    """

    target_ee_in_base: Pose
    gripper: float = 1.0

    def __post_init__(self):
        g = float(self.gripper)
        if not (-1.0 <= g <= 1.0):
            raise ValueError(f"gripper {g} outside [-1, 1]")
        object.__setattr__(self, "gripper", g)

    def to_dict(self) -> dict:
        return {"pose": pose_to_dict(self.target_ee_in_base), "gripper": self.gripper}

    @classmethod
    def from_dict(cls, d: dict) -> Action:
        return cls(pose_from_dict(d["pose"]), float(d["gripper"]))


@dataclass(frozen=True)
class GroupElement:
    """g = [base_redef, ee_redef]: new-base-from-old-base and old-ee-from-new-ee."""

    base_redef: Pose
    ee_redef: Pose

    @classmethod
    def identity(cls) -> GroupElement:
        return cls(Pose.identity(), Pose.identity())


class SubgroupId(enum.Enum):
    G_FULL = "G_FULL"
    G_BASE = "G_BASE"
    G_EE = "G_EE"
    G_EE_ROT = "G_EE_ROT"
    G_EE_TRANS = "G_EE_TRANS"


def act_on_config(g: GroupElement, m: EmbodimentConfig) -> EmbodimentConfig:
    return EmbodimentConfig(
        g.base_redef @ m.ee_in_base @ g.ee_redef,
        g.base_redef @ m.cam_in_base,
    )


def act_on_action(g: GroupElement, a: Action) -> Action:
    return Action(g.base_redef @ a.target_ee_in_base @ g.ee_redef, a.gripper)


def act_on_pose(g: GroupElement, T: Pose) -> Pose:
    """Group action on a bare end-effector pose in base."""
    return g.base_redef @ T @ g.ee_redef


def compose_group(g2: GroupElement, g1: GroupElement) -> GroupElement:
    """Product such that acting with the result equals acting with g1, then g2."""
    return GroupElement(g2.base_redef @ g1.base_redef, g1.ee_redef @ g2.ee_redef)


def inverse_group(g: GroupElement) -> GroupElement:
    return GroupElement(g.base_redef.inv(), g.ee_redef.inv())


def in_subgroup(g: GroupElement, subgroup: SubgroupId, tol: float = 1e-12) -> bool:
    ident = Pose.identity()
    if subgroup is SubgroupId.G_FULL:
        return True
    if subgroup is SubgroupId.G_BASE:
        return g.ee_redef.allclose(ident, tol)
    if not g.base_redef.allclose(ident, tol):
        return False
    if subgroup is SubgroupId.G_EE_ROT:
        return bool(np.allclose(g.ee_redef.t, 0.0, atol=tol, rtol=0))
    if subgroup is SubgroupId.G_EE_TRANS:
        return bool(np.allclose(g.ee_redef.R, np.eye(3), atol=tol, rtol=0))
    return True


def _sample_pose(rng, rot_range: float, trans_range: float, rotate=True, translate=True) -> Pose:
    R = random_rotation_bounded(rng, rot_range) if rotate else np.eye(3)
    t = rng.uniform(-trans_range, trans_range, size=3) if translate else np.zeros(3)
    return Pose(R, t)


def sample_group(
    subgroup: SubgroupId,
    seed,
    rot_range: float = DEFAULT_ROT_RANGE,
    trans_range: float = DEFAULT_TRANS_RANGE,
) -> GroupElement:
    """Draw a generic element of ``subgroup``; deterministic per seed."""
    rng = _as_rng(seed)
    ident = Pose.identity()
    if subgroup is SubgroupId.G_FULL:
        return GroupElement(_sample_pose(rng, rot_range, trans_range), _sample_pose(rng, rot_range, trans_range))
    if subgroup is SubgroupId.G_BASE:
        return GroupElement(_sample_pose(rng, rot_range, trans_range), ident)
    if subgroup is SubgroupId.G_EE:
        return GroupElement(ident, _sample_pose(rng, rot_range, trans_range))
    if subgroup is SubgroupId.G_EE_ROT:
        return GroupElement(ident, _sample_pose(rng, rot_range, trans_range, translate=False))
    if subgroup is SubgroupId.G_EE_TRANS:
        return GroupElement(ident, _sample_pose(rng, rot_range, trans_range, rotate=False))
    raise ValueError(f"unknown subgroup {subgroup!r}")
