"""Insertion episode as a Markov decision process.

The agent sees the TCP pose since reset and the sensor wrench; the true
relative pose of peg and hole stays inside the environment.  World axes
coincide with the hole axes the robot believes in; the true hole differs
from that belief by the sampled initial error, which is why a centred
start in the robot's eyes is an offset start for the plant.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .controller import (ComplianceGains, ReferenceWrench, RevisionFactors, decouple_output,
                         decouple_state, effective_gains)
from .plant import (MM, FrameOffset, JammingError, PlantParams, PoseState, Wrench, fpm,
                    matrix_rpy, peg_frame, rotvec_matrix, state_equation, transform_wrench)

STATE_DIM = 12
ACTION_DIM = 6


@dataclass(frozen=True)
class RewardCoeffs:
    h_z: float = 100.0  # per metre of remaining depth
    h_F: float = 0.1  # per N
    h_M: float = 1.0  # per N*m

    def __post_init__(self):
        v = (self.h_z, self.h_F, self.h_M)
        if min(v) < 0 or max(v) <= 0:
            raise ValueError("reward coefficients must be nonnegative with at least one > 0")


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 80
    lateral_error: float = 0.3  # mm, half-width of the uniform start bias
    angular_error: float = 2.0  # mrad, tilt half-width
    yaw_error: float = 2.0  # mrad
    capture_radius: float = 0.5  # mm; starts beyond it are resampled
    force_limit: float = 60.0  # N
    moment_limit: float = 3.0  # N*m
    safety_penalty: float = 50.0
    feed: float = 0.4  # mm per step along the estimated hole axis
    translation_cap: float = 0.5  # mm per step
    rotation_cap: float = 0.5  # mrad per step
    sensor_height: float = 0.12  # m, TCP/sensor above the peg tip
    wrench_noise: float = 0.3  # N std (moments scaled by 0.01 m)
    latency: int = 1  # control periods between a wrench reading and the motion it commands
    grid: tuple = (32, 8)
    quad_tol: float = 3e-3
    quad_min_width: float = 3e-4
    # observation scaling: mm, mrad, N, N*m
    obs_scale: tuple = (1.0, 1.0, 10.0, 2.0, 2.0, 2.0, 20.0, 20.0, 20.0, 0.5, 0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        for name in ("force_limit", "moment_limit", "feed", "translation_cap", "rotation_cap",
                     "sensor_height", "capture_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if self.lateral_error < 0 or self.angular_error < 0 or self.yaw_error < 0:
            raise ValueError("error ranges must be nonnegative")
        if len(self.obs_scale) != STATE_DIM or min(self.obs_scale) <= 0:
            raise ValueError("obs_scale needs 12 positive entries")

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown episode keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("grid", "obs_scale"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class StepInfo:
    pose: PoseState
    depth_estimate: float
    success: bool = False
    failure: str = ""
    clipped: bool = False
    truncated: bool = False
    gains: np.ndarray = field(default_factory=lambda: np.zeros(6))


class InsertionEnv:
    """One insertion task: plant, constant gains and the episode rules."""

    def __init__(self, plant: PlantParams, gains: ComplianceGains, cfg: EpisodeConfig = EpisodeConfig(),
                 reward: RewardCoeffs = RewardCoeffs(), reference: ReferenceWrench = ReferenceWrench()):
        self.plant = plant
        self.gains = gains
        self.cfg = cfg
        self.reward_coeffs = reward
        self.reference = reference
        self.rng = np.random.default_rng(cfg.seed)
        self.p: PoseState | None = None
        self.done = True
        self.log: list[dict] = []

    # -- helpers ---------------------------------------------------------

    def _true_offset(self, p: PoseState) -> FrameOffset:
        """Pose of {A} in the sensor frame from the true relative pose."""
        _, R = peg_frame(p)
        Rt = R.T
        t = Rt @ np.array([-p.d_x, -p.d_y, 0.0]) + np.array([0.0, 0.0, p.l / 2.0 - self.cfg.sensor_height])
        return FrameOffset(Rt, t)

    def _estimated_offset(self) -> FrameOffset:
        R = self.R_tcp.T
        return FrameOffset(R, np.array([0.0, 0.0, self.l_est / 2.0 - self.cfg.sensor_height]))

    def _wrench(self, p: PoseState) -> Wrench:
        c = self.cfg
        F = fpm(self.plant, p, c.grid, tol=c.quad_tol, min_width=c.quad_min_width)
        Fs = transform_wrench(F, self._true_offset(p), "S")
        self.F_true = Fs
        if c.wrench_noise > 0:
            n = self.rng.normal(0.0, c.wrench_noise, 6) * np.repeat([1.0, 0.01], 3)
            Fs = Wrench.from_array(Fs.as_array() + n, "S")
        return Fs

    def _observe(self) -> np.ndarray:
        a, b, g = matrix_rpy(self.R_tcp)
        r = np.concatenate([self.x_tcp / MM, np.array([a, b, g]) * 1e3])
        raw = np.concatenate([r, self.F.as_array()])
        return raw / np.asarray(self.cfg.obs_scale)

    def _sample_start(self) -> PoseState:
        c = self.cfg
        for _ in range(1000):
            d = self.rng.uniform(-c.lateral_error, c.lateral_error, 2)
            ang = self.rng.uniform(-c.angular_error, c.angular_error, 2) * 1e-3
            yaw = self.rng.uniform(-c.yaw_error, c.yaw_error) * 1e-3 if c.yaw_error > 0 else 0.0
            if math.hypot(*d) <= c.capture_radius:
                return PoseState(d[0] * MM, d[1] * MM, 0.0, ang[0], ang[1], yaw)
        raise RuntimeError("could not sample a start inside the capture region")

    # -- MDP -------------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.p = self._sample_start()
        self.x_tcp = np.zeros(3)
        self.R_tcp = np.eye(3)
        self.z_contact = 0.0
        self.l_est = 0.0
        self.t = 0
        self.done = False
        self.F = self._wrench(self.p)
        self._pending = [self.F] * (self.cfg.latency + 1)
        self.log = []
        return self._observe()

    def reward(self, l: float, F: Wrench) -> float:
        h = self.reward_coeffs
        return float(-h.h_z * (self.plant.L - l) - h.h_F * np.linalg.norm(F.f) - h.h_M * np.linalg.norm(F.m))

    def step(self, action) -> tuple[np.ndarray, float, bool, StepInfo]:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        c = self.cfg
        a = action if isinstance(action, RevisionFactors) else RevisionFactors(np.asarray(action, dtype=float))
        K_eff = effective_gains(self.gains, a)
        offset = self._estimated_offset()
        F_dec = decouple_output(self._pending[0], offset)
        # the wrench is what the peg exerts on the hole, so the peg yields against it
        dp = -K_eff * (F_dec.as_array() - self.reference.as_array())
        dp[2] -= c.feed * MM
        inc = decouple_state(dp, offset, caps=(c.translation_cap * MM, c.rotation_cap * 1e-3))
        dr = inc.values
        true_off = self._true_offset(self.p)
        p_new, _ = state_equation(self.p, dr, true_off, self.plant.L)
        self.x_tcp = self.x_tcp + self.R_tcp @ dr[:3]
        self.R_tcp = self.R_tcp @ rotvec_matrix(dr[3:])
        self.l_est = max(0.0, self.z_contact - self.x_tcp[2])
        self.p = p_new
        self.t += 1
        info = StepInfo(pose=p_new, depth_estimate=self.l_est, clipped=inc.clipped, gains=K_eff)
        try:
            self.F = self._wrench(p_new)
        except JammingError as exc:
            info.failure = f"jamming: {exc}"
        self._pending = self._pending[1:] + [self.F]
        if not info.failure:
            r = self.reward(p_new.l, self.F)
            if np.linalg.norm(self.F.f) > c.force_limit or np.linalg.norm(self.F.m) > c.moment_limit:
                info.failure = "safety limit"
        if info.failure:
            r = self.reward(p_new.l, self.F) - c.safety_penalty
        info.success = not info.failure and p_new.l >= self.plant.L * (1 - 1e-9)
        info.truncated = not (info.success or info.failure) and self.t >= c.max_steps
        self.done = bool(info.success or info.failure or info.truncated)
        obs = self._observe()
        self.log.append({"step": self.t, "r": obs[:6] * np.asarray(c.obs_scale[:6]),
                         "F": self.F.as_array(), "F_true": self.F_true.as_array(), "a": a.a.copy(), "K": K_eff.copy(),
                         "reward": r, "done": self.done})
        return obs, r, self.done, info

    def clone(self) -> "InsertionEnv":
        """Independent copy, including the random generator state."""
        return copy.deepcopy(self)

    def write_log(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *[f"r{i}" for i in range(6)], "F_x", "F_y", "F_z", "M_x", "M_y", "M_z",
                        "Ft_x", "Ft_y", "Ft_z", "Mt_x", "Mt_y", "Mt_z", *[f"a{i}" for i in range(6)], *[f"K{i}" for i in range(6)], "reward", "done"])
            for row in self.log:
                w.writerow([row["step"], *[f"{v:.9g}" for v in row["r"]], *[f"{v:.9g}" for v in row["F"]],
                            *[f"{v:.9g}" for v in row["F_true"]],
                            *[f"{v:.6g}" for v in row["a"]], *[f"{v:.6g}" for v in row["K"]],
                            f"{row['reward']:.9g}", int(row["done"])])


def rollout(env: InsertionEnv, policy, horizon: int | None = None, seed: int | None = None):
    """Run ``policy(obs) -> action`` from reset; returns (states, actions, rewards, infos).

    ``states`` holds the observation before each step plus the final one.
    """
    obs = env.reset(seed)
    states, actions, rewards, infos = [obs], [], [], []
    n = env.cfg.max_steps if horizon is None else horizon
    for _ in range(n):
        a = np.asarray(policy(obs), dtype=float)
        obs, r, done, info = env.step(a)
        states.append(obs)
        actions.append(a)
        rewards.append(r)
        infos.append(info)
        if done:
            break
    return np.array(states), np.array(actions).reshape(-1, ACTION_DIM), np.array(rewards), infos


def rollout_zero_action(env: InsertionEnv, horizon: int | None = None, seed: int | None = None):
    """Constant-gain baseline (all revision factors zero)."""
    return rollout(env, lambda s: np.zeros(ACTION_DIM), horizon, seed)
