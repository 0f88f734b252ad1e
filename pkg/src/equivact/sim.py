"""Kinematic reach-grasp-lift world with several embodiment definitions.

The physical scene (gripper fingertip frame, object, camera) lives in a world
frame. An embodiment decides how that scene is expressed to the policy: where
its base frame sits and how its end-effector frame is attached to the
fingertip frame. Transforming the embodiment by a group element changes the
coordinates but never the physics, so observations (camera-frame physical
quantities) are identical across embodiments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import CameraIntrinsics, project_camera_point
from .codecs import CodecId, decode, encode, objective_to_vec, vec_to_objective
from .embodiment import Action, EmbodimentConfig, GroupElement, act_on_config
from .se3 import (
    DegenerateRot6D,
    Pose,
    axis_angle,
    geodesic_angle,
    pose_from_dict,
    pose_to_dict,
    random_rotation_bounded,
    rot_x,
    rot_z,
)

MAX_STEP_TRANS = 0.05
MAX_STEP_ROT = 0.2
SUCCESS_POS = 0.02
SUCCESS_ROT = 0.175
SUCCESS_LIFT = 0.05

OBJ_CENTER = np.array([0.5, 0.0, 0.02])
OBJ_HALF_EXTENT = 0.2
OBJ_MAX_YAW = np.pi / 3
PREGRASP_HEIGHT = 0.10
LIFT_Z = 0.15
GRASP_TOL_POS = 0.005
GRASP_TOL_ROT = 0.02
DESCEND_TOL_XY = 0.01
HOLD_STEPS = 2
MAX_EXPERT_STEPS = 30
EVAL_HORIZON = 30

CAM_JITTER_POS = 0.01
CAM_JITTER_ROT = 0.02

OBS_DIM = 11
DOWN = rot_x(np.pi)  # fingertip z axis pointing at the table


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose (z forward, x right, y down) at ``eye`` looking at ``target``."""
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


NOMINAL_CAMERA = look_at([0.5, -0.75, 0.6], [0.5, 0.0, 0.05])
DEFAULT_INTRINSICS = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640.0, 480.0)


def hidden_transform(ee_translation: bool = False) -> GroupElement:
    """The fixed embodiment change g* used for transfer tests.

    Base moved 0.4 m and yawed 70 degrees; end-effector frame rotated 80
    degrees about a tilted axis. ``ee_translation`` also shifts the
    end-effector origin, which the robust codec is not equivariant to.
    """
    base = Pose(rot_z(np.deg2rad(70.0)), [0.25, -0.3, 0.1])
    ee_t = [0.03, -0.02, 0.08] if ee_translation else [0.0, 0.0, 0.0]
    ee = Pose(axis_angle([1.0, 2.0, -1.0], np.deg2rad(80.0)), ee_t)
    return GroupElement(base, ee)


@dataclass(frozen=True)
class EmbodimentSpec:
    base_pose_in_world: Pose
    ee_frame_offset: Pose  # end-effector frame relative to the fingertip frame
    cam_pose_in_world: Pose
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    ee_redef_label: str = "fingertip"
    spec_id: str = "nominal"

    def transformed(self, g: GroupElement, label: str = "transformed") -> EmbodimentSpec:
        """Same physical robot described with redefined base and end-effector frames."""
        return replace(
            self,
            base_pose_in_world=self.base_pose_in_world @ g.base_redef.inv(),
            ee_frame_offset=self.ee_frame_offset @ g.ee_redef,
            ee_redef_label=label,
            spec_id=label,
        )

    def config(self, gripper_in_world: Pose, cam_in_world: Pose) -> EmbodimentConfig:
        base_inv = self.base_pose_in_world.inv()
        return EmbodimentConfig(base_inv @ gripper_in_world @ self.ee_frame_offset, base_inv @ cam_in_world)

    def to_world(self, target_ee_in_base: Pose) -> Pose:
        """Fingertip pose in world for a commanded end-effector pose in base."""
        return self.base_pose_in_world @ target_ee_in_base @ self.ee_frame_offset.inv()

    def to_base(self, gripper_in_world: Pose) -> Pose:
        return self.base_pose_in_world.inv() @ gripper_in_world @ self.ee_frame_offset

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "base_pose_in_world": pose_to_dict(self.base_pose_in_world),
            "ee_frame_offset": pose_to_dict(self.ee_frame_offset),
            "cam_pose_in_world": pose_to_dict(self.cam_pose_in_world),
            "intrinsics": self.intrinsics.to_dict(),
            "ee_redef_label": self.ee_redef_label,
        }


def sample_embodiment(seed: int = 0, transformed: bool = False, ee_translation: bool = False) -> EmbodimentSpec:
    """Nominal embodiment (camera mount slightly varied by ``seed``), optionally under g*."""
    rng = np.random.default_rng([int(seed), 101])
    cam = Pose(
        random_rotation_bounded(rng, CAM_JITTER_ROT) @ NOMINAL_CAMERA.R,
        NOMINAL_CAMERA.t + rng.uniform(-CAM_JITTER_POS, CAM_JITTER_POS, 3),
    )
    spec = EmbodimentSpec(Pose.identity(), Pose.identity(), cam)
    if transformed:
        spec = spec.transformed(hidden_transform(ee_translation), "transformed-ee-trans" if ee_translation else "transformed")
    return spec


# --------------------------------------------------------------------------
# world state and expert


@dataclass
class WorldState:
    gripper: Pose  # fingertip frame in world
    width: float  # +1 open, -1 closed
    obj_pos: np.ndarray
    obj_yaw: float
    cam: Pose  # camera in world (jittered per episode)
    attached: bool = False
    obj_start_z: float = OBJ_CENTER[2]
    grasp_pos_err: float = float("inf")
    grasp_rot_err: float = float("inf")
    holds: int = 0

    def copy(self) -> WorldState:
        return replace(self, obj_pos=self.obj_pos.copy())


def grasp_rotation(yaw: float) -> np.ndarray:
    return rot_z(yaw) @ DOWN


def grasp_rot_error(R: np.ndarray, yaw: float) -> float:
    """Orientation error to the grasp, using the gripper's half-turn symmetry."""
    G = grasp_rotation(yaw)
    return min(geodesic_angle(R, G), geodesic_angle(R, G @ rot_z(np.pi)))


def sample_world(seed) -> WorldState:
    rng = np.random.default_rng(seed)
    obj = OBJ_CENTER + np.array([*rng.uniform(-OBJ_HALF_EXTENT, OBJ_HALF_EXTENT, 2), 0.0])
    yaw = float(rng.uniform(-OBJ_MAX_YAW, OBJ_MAX_YAW))
    start = np.array([0.5, 0.0, 0.25]) + np.array([*rng.uniform(-0.1, 0.1, 2), rng.uniform(0.0, 0.05)])
    grip = Pose(grasp_rotation(float(rng.uniform(-0.3, 0.3))), start)
    return WorldState(grip, 1.0, obj, yaw, Pose.identity(), obj_start_z=float(obj[2]))


def jitter_camera(spec: EmbodimentSpec, rng) -> Pose:
    c = spec.cam_pose_in_world
    return Pose(
        random_rotation_bounded(rng, CAM_JITTER_ROT) @ c.R,
        c.t + rng.uniform(-CAM_JITTER_POS, CAM_JITTER_POS, 3),
    )


def _yaw_in_camera(axis_world: np.ndarray, cam: Pose) -> float:
    a = cam.R.T @ axis_world
    return float(np.arctan2(a[1], a[0]))


def observe(state: WorldState) -> np.ndarray:
    """Camera-frame physical features.

    [gripper point (3), object grasp point (3), object yaw (sin, cos),
    gripper yaw (sin, cos), gripper width]; yaws are angles of the object
    grasp axis and of the gripper closing axis expressed in the camera frame.
    """
    cam_inv = state.cam.inv()
    obj_axis = rot_z(state.obj_yaw)[:, 0]
    grip_axis = state.gripper.R[:, 0]
    oy = _yaw_in_camera(obj_axis, state.cam)
    gy = _yaw_in_camera(grip_axis, state.cam)
    return np.concatenate(
        [
            cam_inv.apply(state.gripper.t),
            cam_inv.apply(state.obj_pos),
            [np.sin(oy), np.cos(oy), np.sin(gy), np.cos(gy), state.width],
        ]
    )


def step_toward(current: Pose, goal: Pose, max_trans=MAX_STEP_TRANS, max_rot=MAX_STEP_ROT) -> Pose:
    """Move from ``current`` toward ``goal`` with capped translation and rotation."""
    d = goal.t - current.t
    n = np.linalg.norm(d)
    t = goal.t if n <= max_trans else current.t + d * (max_trans / n)
    rel = current.R.T @ goal.R
    ang = geodesic_angle(current.R, goal.R)
    if ang <= max_rot:
        R = goal.R
    else:
        w = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
        if np.linalg.norm(w) < 1e-9:  # half-turn: any perpendicular axis works
            vals, vecs = np.linalg.eigh(rel + rel.T)
            w = vecs[:, np.argmax(vals)]
        R = current.R @ axis_angle(w, max_rot)
    return Pose(R, t)


def expert_command(state: WorldState) -> tuple[Pose, float]:
    """Next fingertip pose in world (already capped) and gripper command."""
    P = state.gripper
    if state.attached:
        goal = Pose(P.R, [P.t[0], P.t[1], LIFT_Z])
        return step_toward(P, goal), -1.0
    if state.width < 0:
        return P, 1.0
    R_goal = grasp_rotation(state.obj_yaw)
    rot_err = geodesic_angle(P.R, R_goal)
    if np.linalg.norm(P.t - state.obj_pos) < GRASP_TOL_POS and rot_err < GRASP_TOL_ROT:
        return P, -1.0
    if np.linalg.norm(P.t[:2] - state.obj_pos[:2]) < DESCEND_TOL_XY and rot_err < GRASP_TOL_ROT:
        goal = Pose(R_goal, state.obj_pos)
    else:
        goal = Pose(R_goal, state.obj_pos + [0.0, 0.0, PREGRASP_HEIGHT])
    return step_toward(P, goal), 1.0


def advance(state: WorldState, target: Pose, gripper_cmd: float) -> WorldState:
    """Apply a (capped) fingertip target and gripper command to the world."""
    s = state.copy()
    target = step_toward(s.gripper, target)
    closing = gripper_cmd < 0 and s.width >= 0
    if closing:
        s.grasp_pos_err = float(np.linalg.norm(s.gripper.t - s.obj_pos))
        s.grasp_rot_err = grasp_rot_error(s.gripper.R, s.obj_yaw)
        s.attached = s.grasp_pos_err < SUCCESS_POS and s.grasp_rot_err < SUCCESS_ROT
    elif gripper_cmd >= 0 and s.width < 0:
        s.attached = False
    if s.attached:
        s.obj_pos = s.obj_pos + (target.t - s.gripper.t)
    s.gripper = target
    s.width = -1.0 if gripper_cmd < 0 else 1.0
    return s


def expert_done(state: WorldState) -> bool:
    return state.attached and state.gripper.t[2] >= LIFT_Z - 1e-9


@dataclass
class TaskResult:
    success: bool
    final_pos_err: float
    final_rot_err: float
    steps_used: int

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "final_pos_err": self.final_pos_err,
            "final_rot_err": self.final_rot_err,
            "steps_used": self.steps_used,
        }


def task_result(state: WorldState, steps: int) -> TaskResult:
    lifted = state.attached and state.obj_pos[2] - state.obj_start_z > SUCCESS_LIFT
    ok = bool(lifted and state.grasp_pos_err < SUCCESS_POS and state.grasp_rot_err < SUCCESS_ROT)
    return TaskResult(ok, state.grasp_pos_err, state.grasp_rot_err, steps)


# --------------------------------------------------------------------------
# episodes and datasets


@dataclass
class EpisodeStep:
    m: EmbodimentConfig
    obs: np.ndarray
    expert: Action
    episode_id: int = 0
    step_id: int = 0
    spec_id: str = ""

    def to_dict(self) -> dict:
        return {
            "m": self.m.to_dict(),
            "obs": [float(x) for x in self.obs],
            "expert": self.expert.to_dict(),
            "episode_id": self.episode_id,
            "step_id": self.step_id,
            "spec_id": self.spec_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeStep:
        obs = np.asarray(d["obs"], dtype=float)
        if obs.shape != (OBS_DIM,) or not np.all(np.isfinite(obs)):
            raise ValueError(f"obs must be {OBS_DIM} finite floats")
        return cls(
            EmbodimentConfig.from_dict(d["m"]),
            obs,
            Action.from_dict(d["expert"]),
            int(d.get("episode_id", 0)),
            int(d.get("step_id", 0)),
            str(d.get("spec_id", "")),
        )


def save_episodes(path, steps: list[EpisodeStep]) -> None:
    """Write a trajectory dataset: one JSON EpisodeStep per line."""
    from .report import dumps, write_outputs

    write_outputs({str(path): "".join(dumps(s.to_dict(), indent=None) + "\n" for s in steps)})


def load_episodes(path) -> list[EpisodeStep]:
    """Read a trajectory dataset; errors name the offending line."""
    import json

    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(EpisodeStep.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: {exc}") from exc
    return out


def episode_rng(seed: int, episode: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(episode), int(stream)])


def init_episode(spec: EmbodimentSpec, seed: int, episode: int = 0) -> WorldState:
    state = sample_world(episode_rng(seed, episode, 0))
    state.cam = jitter_camera(spec, episode_rng(seed, episode, 1))
    return state


def gen_episode(spec: EmbodimentSpec, seed: int, episode: int = 0) -> list[EpisodeStep]:
    """Scripted expert demonstration: pre-grasp, descend, close, lift, hold."""
    state = init_episode(spec, seed, episode)
    steps = []
    for i in range(MAX_EXPERT_STEPS):
        target, cmd = expert_command(state)
        m = spec.config(state.gripper, state.cam)
        steps.append(EpisodeStep(m, observe(state), Action(spec.to_base(target), cmd), episode, i, spec.spec_id))
        state = advance(state, target, cmd)
        if expert_done(state):
            state.holds += 1
            if state.holds > HOLD_STEPS:
                break
    return steps


def replay_episode(spec: EmbodimentSpec, steps: list[EpisodeStep], seed: int, episode: int = 0) -> TaskResult:
    """Execute recorded expert actions open-loop from the episode's initial state."""
    state = init_episode(spec, seed, episode)
    for s in steps:
        state = advance(state, spec.to_world(s.expert.target_ee_in_base), s.expert.gripper)
    return task_result(state, len(steps))


def make_dataset(spec: EmbodimentSpec, episodes: int, codec: CodecId, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(obs, objective vector) pairs, one per expert step."""
    data = []
    for e in range(episodes):
        for s in gen_episode(spec, seed, e):
            data.append((s.obs, objective_to_vec(encode(codec, s.m, s.expert))))
    return data


def world_positions_visible(spec: EmbodimentSpec, n: int = 100, seed: int = 0) -> bool:
    """True when sampled object positions all project with positive depth."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        cam = jitter_camera(spec, rng)
        p = OBJ_CENTER + np.array([*rng.uniform(-OBJ_HALF_EXTENT, OBJ_HALF_EXTENT, 2), 0.0])
        project_camera_point(spec.intrinsics, cam.inv().apply(p))
    return True


# --------------------------------------------------------------------------
# closed-loop evaluation


class ExpertModel:
    """Stand-in policy that returns the expert's objective (upper bound)."""


def _decode_command(codec: CodecId, spec: EmbodimentSpec, state: WorldState, yvec: np.ndarray):
    m = spec.config(state.gripper, state.cam)
    g = float(np.clip(yvec[9], -1.0, 1.0))
    v = np.array(yvec, dtype=float)
    v[9] = g
    try:
        a = decode(codec, m, vec_to_objective(v))
    except DegenerateRot6D:
        return state.gripper, g
    return spec.to_world(a.target_ee_in_base), g


def evaluate(model, codec: CodecId, spec: EmbodimentSpec, episodes: int = 50, seed: int = 0, schedule=None,
             num_infer_steps: int = 20, horizon: int = EVAL_HORIZON) -> tuple[float, list[TaskResult]]:
    """Closed-loop rollouts of ``model`` with ``codec`` on ``spec``.

    Episodes run in lockstep so one batched DDIM call serves every step.
    ``model`` may be an :class:`ExpertModel` for the oracle upper bound.
    """
    from .policy import NoiseSchedule, ddim_sample

    schedule = schedule or NoiseSchedule()
    states = [init_episode(spec, seed, e) for e in range(episodes)]
    noise_rng = np.random.default_rng([int(seed), 7919])
    for _ in range(horizon):
        if isinstance(model, ExpertModel):
            ys = []
            for s in states:
                target, cmd = expert_command(s)
                a = Action(spec.to_base(target), cmd)
                ys.append(objective_to_vec(encode(codec, spec.config(s.gripper, s.cam), a)))
            ys = np.array(ys)
        else:
            obs = np.array([observe(s) for s in states])
            ys = ddim_sample(model, schedule, obs, num_infer_steps, noise_rng)
        new_states = []
        for s, y in zip(states, ys):
            target, g = _decode_command(codec, spec, s, y)
            new_states.append(advance(s, target, g))
        states = new_states
    results = [task_result(s, horizon) for s in states]
    rate = sum(r.success for r in results) / max(len(results), 1)
    return rate, results


# --------------------------------------------------------------------------
# transfer experiment


@dataclass
class TransferConfig:
    codecs: tuple = (CodecId.BE, CodecId.EE, CodecId.CE, CodecId.OURS_ROBUST)
    train_eps: int = 200
    fewshot_eps: int = 20
    eval_eps: int = 50
    seed: int = 0
    train_iters: int = 10000
    finetune_iters: int = 3000
    lr: float = 0.1
    finetune_lr: float = 0.05
    batch_size: int = 256
    hidden: int = 128
    ee_translation: bool = False


@dataclass
class TransferRow:
    codec: CodecId
    condition: str
    success_rate: float
    episodes: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "codec": self.codec.value,
            "condition": self.condition,
            "success_rate": self.success_rate,
            "episodes": self.episodes,
            "seed": self.seed,
        }


def run_codec_transfer(codec: CodecId, cfg: TransferConfig) -> list[TransferRow]:
    """Train on the nominal embodiment, test zero-shot on g*, fine-tune and re-test."""
    from .policy import TrainConfig, fit

    nominal = sample_embodiment(cfg.seed)
    moved = sample_embodiment(cfg.seed, transformed=True, ee_translation=cfg.ee_translation)
    # disjoint seed streams for training, few-shot and evaluation worlds
    train_seed, few_seed, eval_seed = [int(x) for x in np.random.default_rng([cfg.seed, 17]).integers(0, 2**31, 3)]
    data = make_dataset(nominal, cfg.train_eps, codec, train_seed)
    tc = TrainConfig(lr=cfg.lr, iterations=cfg.train_iters, batch_size=cfg.batch_size, seed=cfg.seed, hidden=cfg.hidden)
    model = fit(data, tc)
    rows = []
    r, _ = evaluate(model, codec, nominal, cfg.eval_eps, eval_seed)
    rows.append(TransferRow(codec, "nominal", r, cfg.eval_eps, cfg.seed))
    r, _ = evaluate(model, codec, moved, cfg.eval_eps, eval_seed)
    rows.append(TransferRow(codec, "zeroshot", r, cfg.eval_eps, cfg.seed))
    few = make_dataset(moved, cfg.fewshot_eps, codec, few_seed)
    ft = TrainConfig(lr=cfg.finetune_lr, iterations=cfg.finetune_iters, batch_size=cfg.batch_size, seed=cfg.seed + 1, hidden=cfg.hidden)
    tuned = fit(few, ft, model=model)
    r, _ = evaluate(tuned, codec, moved, cfg.eval_eps, eval_seed)
    rows.append(TransferRow(codec, "fewshot", r, cfg.eval_eps, cfg.seed))
    return rows


def transfer_experiment(cfg: TransferConfig, workers: int = 1) -> list[TransferRow]:
    codecs = [CodecId.parse(c) for c in cfg.codecs]
    if workers > 1 and len(codecs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(codecs))) as pool:
            parts = list(pool.map(run_codec_transfer, codecs, [cfg] * len(codecs)))
    else:
        parts = [run_codec_transfer(c, cfg) for c in codecs]
    return [row for part in parts for row in part]
