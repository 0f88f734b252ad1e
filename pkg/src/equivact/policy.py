"""Minimal diffusion action head in numpy.

An MLP predicts the noise added to a 10-dim action objective. The denoise
step enters every hidden layer through FiLM (per-unit scale and shift computed
from a sinusoidal step embedding). Gradients are derived by hand.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .codecs import VEC_DIM

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "equivact-denoiser"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "F1", "c1", "W2", "b2", "F2", "c2", "W3", "b3")


class StepOutOfRange(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class NoiseSchedule:
    num_train_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    betas: np.ndarray = field(init=False)
    alphas_cumprod: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.linspace(self.beta_start, self.beta_end, self.num_train_steps)
        self.alphas_cumprod = np.cumprod(1.0 - self.betas)

    def check_step(self, k):
        k = np.asarray(k)
        if np.any(k < 0) or np.any(k >= self.num_train_steps):
            raise StepOutOfRange(f"step {k} outside [0, {self.num_train_steps})")


def q_sample(schedule: NoiseSchedule, x0, k, noise) -> np.ndarray:
    """Forward process: sqrt(abar_k) x0 + sqrt(1 - abar_k) noise. ``k`` may be per-row."""
    schedule.check_step(k)
    abar = schedule.alphas_cumprod[np.asarray(k)]
    if np.ndim(abar):
        abar = abar[:, None]
    return np.sqrt(abar) * np.asarray(x0) + np.sqrt(1.0 - abar) * np.asarray(noise)


def timestep_embedding(k, dim: int) -> np.ndarray:
    """Sinusoidal embedding, shape (len(k), dim)."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half - 1, 1))
    ang = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _sigmoid(x):
    with np.errstate(over="ignore"):  # exp overflow correctly yields 0
        return 1.0 / (1.0 + np.exp(-x))


def silu(x):
    return x * _sigmoid(x)


@dataclass
class DenoiserModel:
    """Two-hidden-layer FiLM MLP.

    ``obs_mean/obs_scale`` and ``act_mean/act_scale`` map raw observations and
    objective vectors to the normalized space the network and the diffusion
    process work in. They are fitted once and then frozen (fine-tuning keeps
    them).
    """

    obs_dim: int
    hidden: int = 128
    temb_dim: int = 32
    params: dict = field(default_factory=dict)
    obs_mean: np.ndarray = None
    obs_scale: np.ndarray = None
    act_mean: np.ndarray = None
    act_scale: np.ndarray = None
    train_losses: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.obs_mean is None:
            self.obs_mean = np.zeros(self.obs_dim)
            self.obs_scale = np.ones(self.obs_dim)
        if self.act_mean is None:
            self.act_mean = np.zeros(VEC_DIM)
            self.act_scale = np.ones(VEC_DIM)
        if not self.params:
            self.params = {n: np.zeros(s) for n, s in self.shapes().items()}

    def shapes(self) -> dict:
        H, E, D = self.hidden, self.temb_dim, self.obs_dim + VEC_DIM
        return {
            "W1": (H, D), "b1": (H,), "F1": (2 * H, E), "c1": (2 * H,),
            "W2": (H, H), "b2": (H,), "F2": (2 * H, E), "c2": (2 * H,),
            "W3": (VEC_DIM, H), "b3": (VEC_DIM,),
        }

    @classmethod
    def init(cls, obs_dim: int, hidden: int = 128, temb_dim: int = 32, seed=0) -> DenoiserModel:
        model = cls(obs_dim, hidden, temb_dim)
        rng = np.random.default_rng(seed)
        for name, shape in model.shapes().items():
            if name.startswith(("W", "F")):
                bound = 1.0 / np.sqrt(shape[1])
                if name.startswith("F"):
                    bound *= 0.1
                model.params[name] = rng.uniform(-bound, bound, size=shape)
        return model

    def copy(self) -> DenoiserModel:
        return DenoiserModel(
            self.obs_dim, self.hidden, self.temb_dim,
            {n: p.copy() for n, p in self.params.items()},
            self.obs_mean.copy(), self.obs_scale.copy(), self.act_mean.copy(), self.act_scale.copy(),
        )

    def normalize_obs(self, obs):
        return (np.asarray(obs, dtype=float) - self.obs_mean) / self.obs_scale

    def normalize_act(self, y):
        return (np.asarray(y, dtype=float) - self.act_mean) / self.act_scale

    def denormalize_act(self, x):
        return np.asarray(x) * self.act_scale + self.act_mean

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        arrays = dict(self.params)
        arrays.update(obs_mean=self.obs_mean, obs_scale=self.obs_scale, act_mean=self.act_mean, act_scale=self.act_scale)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "obs_dim": self.obs_dim,
            "hidden": self.hidden,
            "temb_dim": self.temb_dim,
            "arrays": {
                n: {"shape": list(a.shape), "data": [float(x) for x in np.ravel(a)]} for n, a in arrays.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> DenoiserModel:
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported denoiser checkpoint")
        arrays = {n: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for n, v in d["arrays"].items()}
        model = cls(
            int(d["obs_dim"]), int(d["hidden"]), int(d["temb_dim"]),
            {n: arrays[n] for n in PARAM_NAMES},
            arrays["obs_mean"], arrays["obs_scale"], arrays["act_mean"], arrays["act_scale"],
        )
        for n, s in model.shapes().items():
            if model.params[n].shape != tuple(s):
                raise ShapeMismatch(f"{n}: checkpoint shape {model.params[n].shape} != {s}")
        return model

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> DenoiserModel:
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _forward(model: DenoiserModel, obs_n: np.ndarray, x: np.ndarray, k):
    p = model.params
    H = model.hidden
    u = np.concatenate([obs_n, x], axis=1)
    e = timestep_embedding(np.broadcast_to(np.asarray(k), (x.shape[0],)), model.temb_dim)
    z1 = u @ p["W1"].T + p["b1"]
    f1 = e @ p["F1"].T + p["c1"]
    a1 = z1 * (1.0 + f1[:, :H]) + f1[:, H:]
    s1 = _sigmoid(a1)
    h1 = a1 * s1
    z2 = h1 @ p["W2"].T + p["b2"]
    f2 = e @ p["F2"].T + p["c2"]
    a2 = z2 * (1.0 + f2[:, :H]) + f2[:, H:]
    s2 = _sigmoid(a2)
    h2 = a2 * s2
    out = h2 @ p["W3"].T + p["b3"]
    return out, (u, e, z1, f1, a1, s1, h1, z2, f2, a2, s2, h2)


def _check_shapes(model: DenoiserModel, obs: np.ndarray, x: np.ndarray):
    if obs.ndim != 2 or obs.shape[1] != model.obs_dim:
        raise ShapeMismatch(f"obs shape {obs.shape}, model expects (*, {model.obs_dim})")
    if x.ndim != 2 or x.shape[1] != VEC_DIM or x.shape[0] != obs.shape[0]:
        raise ShapeMismatch(f"x shape {x.shape} incompatible with obs shape {obs.shape}")


def predict_noise(model: DenoiserModel, obs, x_k, k) -> np.ndarray:
    """Noise estimate for a (normalized-space) noisy objective ``x_k`` at step ``k``.

    Accepts a single sample (1-D inputs) or a batch (2-D inputs).
    """
    single = np.ndim(x_k) == 1
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    x = np.atleast_2d(np.asarray(x_k, dtype=float))
    _check_shapes(model, obs, x)
    out, _ = _forward(model, model.normalize_obs(obs), x, k)
    return out[0] if single else out


def loss_and_grad(model: DenoiserModel, batch) -> tuple[float, dict]:
    """Noise-prediction MSE and its gradient w.r.t. every parameter.

    ``batch`` is ``(obs, x_k, k, noise)`` with obs raw and x_k in normalized
    space; the loss averages over both batch and output dimensions.
    """
    obs, x, k, noise = batch
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_shapes(model, obs, x)
    p = model.params
    H = model.hidden
    out, (u, e, z1, f1, a1, s1, h1, z2, f2, a2, s2, h2) = _forward(model, model.normalize_obs(obs), x, k)
    r = out - noise
    n = r.size
    loss = float(np.sum(r * r) / n)

    def film_grads(d_f):
        return d_f.T @ e, d_f.sum(0)

    g = {}
    d_out = 2.0 * r / n
    g["W3"] = d_out.T @ h2
    g["b3"] = d_out.sum(0)
    d_a2 = (d_out @ p["W3"]) * (s2 * (1.0 + a2 * (1.0 - s2)))
    g["F2"], g["c2"] = film_grads(np.concatenate([d_a2 * z2, d_a2], axis=1))
    d_z2 = d_a2 * (1.0 + f2[:, :H])
    g["W2"] = d_z2.T @ h1
    g["b2"] = d_z2.sum(0)
    d_a1 = (d_z2 @ p["W2"]) * (s1 * (1.0 + a1 * (1.0 - s1)))
    g["F1"], g["c1"] = film_grads(np.concatenate([d_a1 * z1, d_a1], axis=1))
    d_z1 = d_a1 * (1.0 + f1[:, :H])
    g["W1"] = d_z1.T @ u
    g["b1"] = d_z1.sum(0)
    return loss, g


def ddim_timesteps(schedule: NoiseSchedule, num_infer_steps: int) -> np.ndarray:
    if not 1 <= num_infer_steps <= schedule.num_train_steps:
        raise StepOutOfRange(
            f"num_infer_steps={num_infer_steps} must lie in [1, {schedule.num_train_steps}]"
        )
    return np.round(np.linspace(schedule.num_train_steps - 1, 0, num_infer_steps)).astype(int)


def ddim_denoise(model: DenoiserModel, schedule: NoiseSchedule, obs, x_init, num_infer_steps: int = 20) -> np.ndarray:
    """Deterministic (eta = 0) DDIM from ``x_init``; returns normalized-space samples."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    x = np.atleast_2d(np.asarray(x_init, dtype=float)).copy()
    _check_shapes(model, obs, x)
    obs_n = model.normalize_obs(obs)
    steps = ddim_timesteps(schedule, num_infer_steps)
    abar = schedule.alphas_cumprod
    for i, k in enumerate(steps):
        eps, _ = _forward(model, obs_n, x, k)
        x0 = (x - np.sqrt(1.0 - abar[k]) * eps) / np.sqrt(abar[k])
        if i + 1 < len(steps):
            ap = abar[steps[i + 1]]
            x = np.sqrt(ap) * x0 + np.sqrt(1.0 - ap) * eps
        else:
            x = x0
    return x


def ddim_sample(model: DenoiserModel, schedule: NoiseSchedule, obs, num_infer_steps: int = 20, seed=0) -> np.ndarray:
    """Objective vector(s) for ``obs`` (1-D: one sample; 2-D: a batch).

    Initial noise comes from ``seed`` (an int or a Generator); output is in
    raw objective space.
    """
    single = np.ndim(obs) == 1
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x_init = rng.standard_normal((obs.shape[0], VEC_DIM))
    y = model.denormalize_act(ddim_denoise(model, schedule, obs, x_init, num_infer_steps))
    return y[0] if single else y


@dataclass
class TrainConfig:
    lr: float = 0.1
    iterations: int = 10000
    batch_size: int = 256
    seed: int = 0
    clip_norm: float = 1.0
    momentum: float = 0.9
    lr_final_frac: float = 0.05
    hidden: int = 128

    def __post_init__(self):
        for name in ("lr", "iterations", "batch_size", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def loss_improved(losses) -> bool:
    """Mean loss over the last 10% of iterations is below that of the first 10%."""
    losses = np.asarray(losses)
    n = max(1, len(losses) // 10)
    return float(np.mean(losses[-n:])) < float(np.mean(losses[:n]))


def _normalizer(data: np.ndarray, blocks) -> tuple[np.ndarray, np.ndarray]:
    mean = data.mean(0)
    scale = np.ones(data.shape[1])
    for sl in blocks:
        rms = np.sqrt(np.mean((data[:, sl] - mean[sl]) ** 2))
        scale[sl] = max(rms, 1e-3)
    return mean, scale


# translation, rot6d and gripper are scaled as blocks so rotations of the
# translation axes do not change the normalization.
ACT_BLOCKS = (slice(0, 3), slice(3, 9))


def fit(
    dataset,
    cfg: TrainConfig = None,
    model: DenoiserModel | None = None,
    schedule: NoiseSchedule | None = None,
) -> DenoiserModel:
    """Train (or fine-tune ``model``) on (obs, y-vector) pairs by clipped SGD.

    The learning rate decays by cosine from ``cfg.lr`` to
    ``cfg.lr * cfg.lr_final_frac``. Batches are drawn from a generator seeded
    by ``cfg.seed``, so runs are reproducible.
    """
    cfg = cfg or TrainConfig()
    schedule = schedule or NoiseSchedule()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    obs = np.asarray([d[0] for d in dataset], dtype=float)
    ys = np.asarray([d[1] for d in dataset], dtype=float)
    if ys.ndim != 2 or ys.shape[1] != VEC_DIM or not np.all(np.isfinite(ys)):
        raise ValueError("targets must be finite 10-vectors")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = DenoiserModel.init(obs.shape[1], cfg.hidden, seed=rng)
        model.obs_mean, model.obs_scale = obs.mean(0), np.maximum(obs.std(0), 1e-3)
        model.act_mean, model.act_scale = _normalizer(ys, ACT_BLOCKS)
    else:
        model = model.copy()
    x0_all = model.normalize_act(ys)
    velocity = {n: np.zeros_like(p) for n, p in model.params.items()}
    losses = np.empty(cfg.iterations)
    N = len(dataset)
    for it in range(cfg.iterations):
        idx = rng.integers(0, N, size=cfg.batch_size)
        k = rng.integers(0, schedule.num_train_steps, size=cfg.batch_size)
        noise = rng.standard_normal((cfg.batch_size, VEC_DIM))
        x_k = q_sample(schedule, x0_all[idx], k, noise)
        loss, grads = loss_and_grad(model, (obs[idx], x_k, k, noise))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at iteration {it} (lr={cfg.lr})")
        gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        clip = min(1.0, cfg.clip_norm / (gnorm + 1e-12))
        frac = it / max(cfg.iterations - 1, 1)
        lr = cfg.lr * (cfg.lr_final_frac + (1 - cfg.lr_final_frac) * 0.5 * (1 + np.cos(np.pi * frac)))
        for n, g in grads.items():
            v = velocity[n]
            v *= cfg.momentum
            v += clip * g
            model.params[n] -= lr * v
        losses[it] = loss
    log.debug("fit: %d iterations, final loss %.4g", cfg.iterations, losses[-1])
    model.train_losses = losses
    return model
