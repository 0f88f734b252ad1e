"""Randomized audits of decoder equivariance/invariance and calibration sensitivity."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .codecs import ActionObjective, CodecId, decode, encode
from .embodiment import (
    Action,
    EmbodimentConfig,
    GroupElement,
    SubgroupId,
    act_on_action,
    act_on_config,
    sample_group,
)
from .se3 import Pose, axis_angle, geodesic_angle, random_pose

EPS_PASS = 1e-8
EPS_FAIL = 1e-3
MIN_TRIALS = 100

CODEC_ORDER = [CodecId.BE, CodecId.EE, CodecId.CE, CodecId.OURS_FULL, CodecId.OURS_ROBUST]
SUBGROUP_ORDER = [
    SubgroupId.G_BASE,
    SubgroupId.G_EE,
    SubgroupId.G_EE_ROT,
    SubgroupId.G_EE_TRANS,
    SubgroupId.G_FULL,
]


class Verdict(enum.Enum):
    EQUIVARIANT = "EQUIVARIANT"
    INVARIANT = "INVARIANT"
    NEITHER = "NEITHER"


class InconclusiveClassification(RuntimeError):
    pass


class NoiseKind(enum.Enum):
    EXTRINSIC_ROT = "EXTRINSIC_ROT"
    EXTRINSIC_TRANS = "EXTRINSIC_TRANS"


def _table(rows):
    return {(c, s): v for c, per in rows.items() for s, v in zip(SUBGROUP_ORDER, per)}


_E, _I, _N = Verdict.EQUIVARIANT, Verdict.INVARIANT, Verdict.NEITHER
# columns follow SUBGROUP_ORDER: base, ee, ee-rot, ee-trans, full
EXPECTED_VERDICTS = _table(
    {
        CodecId.BE: [_I, _I, _I, _I, _I],
        CodecId.EE: [_E, _N, _N, _N, _N],
        CodecId.CE: [_E, _I, _I, _I, _N],
        CodecId.OURS_FULL: [_E, _E, _E, _E, _E],
        CodecId.OURS_ROBUST: [_E, _N, _E, _N, _N],
    }
)


@dataclass(frozen=True)
class ResidualSample:
    rot_err: float
    trans_err: float
    g: GroupElement
    seed: int

    @property
    def max_err(self) -> float:
        return max(self.rot_err, self.trans_err)


@dataclass
class Classification:
    codec: CodecId
    subgroup: SubgroupId
    verdict: Verdict
    max_rot_err: float
    max_trans_err: float
    trials: int
    equivariance_max: float = 0.0
    invariance_max: float = 0.0
    expected: Verdict | None = None

    @property
    def matches(self) -> bool:
        return self.expected is None or self.expected is self.verdict

    def to_dict(self) -> dict:
        return {
            "codec": self.codec.value,
            "subgroup": self.subgroup.value,
            "verdict": self.verdict.value,
            "expected": None if self.expected is None else self.expected.value,
            "match": self.matches,
            "max_rot_err": self.max_rot_err,
            "max_trans_err": self.max_trans_err,
            "equivariance_max": self.equivariance_max,
            "invariance_max": self.invariance_max,
            "trials": self.trials,
        }


@dataclass
class SensitivityReport:
    noise_kind: NoiseKind
    eps: float
    objective_delta_full: float
    objective_delta_robust: float
    lever_arm: float
    motion_norm: float

    def to_dict(self) -> dict:
        return {
            "noise_kind": self.noise_kind.value,
            "eps": self.eps,
            "objective_delta_full": self.objective_delta_full,
            "objective_delta_robust": self.objective_delta_robust,
            "lever_arm": self.lever_arm,
            "motion_norm": self.motion_norm,
        }


def trial_rng(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, index)])


def _residual(a: Pose, b: Pose, g: GroupElement, seed: int) -> ResidualSample:
    return ResidualSample(geodesic_angle(a.R, b.R), float(np.linalg.norm(a.t - b.t)), g, seed)


def decoder_residual(
    codec: CodecId, m: EmbodimentConfig, y: ActionObjective, g: GroupElement, seed: int = 0
) -> ResidualSample:
    """Equivariance defect: D(g.m, y) against g.D(m, y)."""
    lhs = decode(codec, act_on_config(g, m), y)
    rhs = act_on_action(g, decode(codec, m, y))
    return _residual(lhs.target_ee_in_base, rhs.target_ee_in_base, g, seed)


def decoder_invariance_residual(
    codec: CodecId, m: EmbodimentConfig, y: ActionObjective, g: GroupElement, seed: int = 0
) -> ResidualSample:
    """Invariance defect: D(g.m, y) against D(m, y)."""
    lhs = decode(codec, act_on_config(g, m), y)
    rhs = decode(codec, m, y)
    return _residual(lhs.target_ee_in_base, rhs.target_ee_in_base, g, seed)


def sample_trial(
    rng: np.random.Generator,
    subgroup: SubgroupId,
    rot_range: float = np.pi,
    trans_range: float = 1.0,
) -> tuple[EmbodimentConfig, ActionObjective, GroupElement]:
    """Random configuration, arbitrary objective and subgroup element."""
    m = EmbodimentConfig(random_pose(rng, trans_range), random_pose(rng, trans_range))
    y = ActionObjective.from_pose(random_pose(rng, trans_range), float(rng.uniform(-1, 1)))
    g = sample_group(subgroup, rng, rot_range, trans_range)
    return m, y, g


def classify(
    codec: CodecId,
    subgroup: SubgroupId,
    trials: int = 1000,
    seed: int = 0,
    eps_pass: float = EPS_PASS,
    eps_fail: float = EPS_FAIL,
    samples: list | None = None,
) -> Classification:
    """Empirical verdict for one (codec, subgroup) cell.

    When ``samples`` is a list, per-trial rows are appended to it.
    """
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    eq_rot = eq_trans = inv_rot = inv_trans = 0.0
    for i in range(trials):
        m, y, g = sample_trial(trial_rng(seed, i), subgroup)
        eq = decoder_residual(codec, m, y, g, i)
        inv = decoder_invariance_residual(codec, m, y, g, i)
        eq_rot, eq_trans = max(eq_rot, eq.rot_err), max(eq_trans, eq.trans_err)
        inv_rot, inv_trans = max(inv_rot, inv.rot_err), max(inv_trans, inv.trans_err)
        if samples is not None:
            samples.append(
                {
                    "codec": codec.value,
                    "subgroup": subgroup.value,
                    "trial": i,
                    "eq_rot_err": eq.rot_err,
                    "eq_trans_err": eq.trans_err,
                    "inv_rot_err": inv.rot_err,
                    "inv_trans_err": inv.trans_err,
                }
            )
    eq_max, inv_max = max(eq_rot, eq_trans), max(inv_rot, inv_trans)
    if eq_max < eps_pass:
        verdict, rot, trans = Verdict.EQUIVARIANT, eq_rot, eq_trans
    elif inv_max < eps_pass:
        verdict, rot, trans = Verdict.INVARIANT, inv_rot, inv_trans
    elif eq_max > eps_fail and inv_max > eps_fail:
        verdict, rot, trans = Verdict.NEITHER, eq_rot, eq_trans
    else:
        raise InconclusiveClassification(
            f"{codec.value}/{subgroup.value}: equivariance max {eq_max:.3g}, "
            f"invariance max {inv_max:.3g} fall between {eps_pass:g} and {eps_fail:g}"
        )
    return Classification(
        codec, subgroup, verdict, rot, trans, trials, eq_max, inv_max, EXPECTED_VERDICTS.get((codec, subgroup))
    )


def full_classification_table(trials: int = 1000, seed: int = 0, samples: list | None = None) -> list[Classification]:
    """All 25 (codec, subgroup) cells, each compared with the analytic expectation."""
    return [
        classify(c, s, trials, seed, samples=samples) for c in CODEC_ORDER for s in SUBGROUP_ORDER
    ]


def _perturb_camera(C: Pose, kind: NoiseKind, eps: float, direction: np.ndarray) -> Pose:
    if eps == 0.0:
        return C
    if kind is NoiseKind.EXTRINSIC_ROT:
        return Pose(axis_angle(direction, eps) @ C.R, C.t)
    return Pose(C.R, C.t + eps * direction / np.linalg.norm(direction))


def calibration_sensitivity(
    m: EmbodimentConfig,
    a: Action,
    eps_angles,
    trials: int = 100,
    seed: int = 0,
    noise_kind: NoiseKind = NoiseKind.EXTRINSIC_ROT,
) -> list[SensitivityReport]:
    """Mean translation change of the full and robust objectives under a miscalibrated camera.

    For EXTRINSIC_ROT the camera rotation is perturbed by ``eps`` radians about
    a random axis; for EXTRINSIC_TRANS its position moves ``eps`` meters in a
    random direction. The same directions are reused for every eps.
    """
    E, C, A = m.ee_in_base, m.cam_in_base, a.target_ee_in_base
    lever = float(np.linalg.norm((E.inv() @ C).t))
    if lever <= 1e-12:
        raise ValueError("camera must be offset from the end-effector (lever arm > 0)")
    motion = float(np.linalg.norm((E.inv() @ A).t))
    y_full = encode(CodecId.OURS_FULL, m, a).trans
    y_rob = encode(CodecId.OURS_ROBUST, m, a).trans
    dirs = [trial_rng(seed, i).standard_normal(3) for i in range(trials)]
    reports = []
    for eps in eps_angles:
        d_full = d_rob = 0.0
        for u in dirs:
            m_noisy = EmbodimentConfig(E, _perturb_camera(C, noise_kind, float(eps), u))
            d_full += np.linalg.norm(encode(CodecId.OURS_FULL, m_noisy, a).trans - y_full)
            d_rob += np.linalg.norm(encode(CodecId.OURS_ROBUST, m_noisy, a).trans - y_rob)
        reports.append(SensitivityReport(noise_kind, float(eps), d_full / trials, d_rob / trials, lever, motion))
    return reports


def lever_arm_setup(
    lever_arm: float,
    motion: float = 0.02,
    relative_angle: float = 1.0,
    seed: int = 0,
) -> tuple[EmbodimentConfig, Action]:
    """Configuration with a camera ``lever_arm`` meters from the end-effector.

    The commanded motion has translation ``motion`` and rotates the
    end-effector by ``relative_angle`` about an axis normal to the lever arm.
    Only the lever length depends on ``lever_arm``; all directions come from
    ``seed``.
    """
    rng = np.random.default_rng(seed)
    E = random_pose(rng, 0.5)
    lever_dir = rng.standard_normal(3)
    lever_dir /= np.linalg.norm(lever_dir)
    cam_rot = random_pose(rng, 0.0).R
    axis = np.cross(lever_dir, rng.standard_normal(3))
    motion_dir = rng.standard_normal(3)
    motion_dir /= np.linalg.norm(motion_dir)
    C = E @ Pose(cam_rot, lever_arm * lever_dir)
    A = E @ Pose(axis_angle(axis, relative_angle), motion * motion_dir)
    return EmbodimentConfig(E, C), Action(A, 1.0)


@dataclass
class SweepResult:
    reports: list[SensitivityReport] = field(default_factory=list)
    correlation_full: float = 0.0
    slope_full: float = 0.0
    slope_robust: float = 0.0

    @property
    def passed(self) -> bool:
        return self.correlation_full > 0.999 and abs(self.slope_robust) < 1e-6


def lever_arm_sweep(
    lever_arms,
    eps: float = 0.01,
    trials: int = 100,
    seed: int = 0,
    motion: float = 0.02,
    relative_angle: float = 1.0,
    noise_kind: NoiseKind = NoiseKind.EXTRINSIC_ROT,
) -> SweepResult:
    """Objective sensitivity as the lever arm grows; fits both deltas linearly."""
    out = SweepResult()
    for L in lever_arms:
        m, a = lever_arm_setup(float(L), motion, relative_angle, seed)
        out.reports.extend(calibration_sensitivity(m, a, [eps], trials, seed, noise_kind))
    x = np.array([r.lever_arm for r in out.reports])
    full = np.array([r.objective_delta_full for r in out.reports])
    rob = np.array([r.objective_delta_robust for r in out.reports])
    if len(x) >= 2 and np.ptp(x) > 0:
        out.slope_full = float(np.polyfit(x, full, 1)[0])
        out.slope_robust = float(np.polyfit(x, rob, 1)[0])
        out.correlation_full = float(np.corrcoef(x, full)[0, 1]) if np.ptp(full) > 0 else 0.0
    return out
