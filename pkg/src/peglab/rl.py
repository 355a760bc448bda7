"""Deterministic actor-critic (DDPG) trainer.

Networks and optimisers are torch; everything random (weight init,
exploration noise, replay sampling) is drawn from one numpy generator so a
seed pins a run down completely.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .env import ACTION_DIM, STATE_DIM, InsertionEnv

VERSION = "peglab-ddpg-1"

torch.set_num_threads(1)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class DdpgConfig:
    hidden: tuple = (64, 64)
    gamma: float = 0.9
    tau: float = 0.005  # soft target rate
    actor_lr: float = 5e-5
    critic_lr: float = 1e-3
    batch_size: int = 64
    buffer_size: int = 100_000
    warmup_episodes: int = 100
    noise_start: float = 0.2
    noise_end: float = 0.05
    noise_decay_episodes: int = 100
    updates_per_step: int = 1
    zero_init_actor: bool = True
    dtype: str = "float32"
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1 or not 0 <= self.tau <= 1:
            raise ValueError("gamma and tau must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("buffer must hold at least one batch")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> "DdpgConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown rl keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    def noise(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.noise_decay_episodes))
        return self.noise_start + frac * (self.noise_end - self.noise_start)


class Mlp(nn.Module):
    """Fully connected net; tanh hidden layers, optional tanh output."""

    def __init__(self, sizes, out_tanh: bool, zero_last: bool = False):
        super().__init__()
        self.sizes = tuple(int(s) for s in sizes)
        self.out_tanh = out_tanh
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:]))
        self.zero_last = zero_last

    def init(self, gen: torch.Generator):
        for k, layer in enumerate(self.layers):
            bound = 1.0 / math.sqrt(layer.in_features)
            with torch.no_grad():
                if k == len(self.layers) - 1 and self.zero_last:
                    layer.weight.zero_()
                    layer.bias.zero_()
                    continue
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)
        return self

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = torch.tanh(layer(x))
        x = self.layers[-1](x)
        return torch.tanh(x) if self.out_tanh else x


def _dtype(cfg: DdpgConfig):
    return torch.float64 if cfg.dtype == "float64" else torch.float32


class Agent:
    """Actor, critic, their targets and optimisers."""

    def __init__(self, cfg: DdpgConfig, seed: int, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        self.cfg = cfg
        self.state_dim, self.action_dim = state_dim, action_dim
        gen = torch.Generator().manual_seed(int(seed))
        dt = _dtype(cfg)
        self.actor = Mlp((state_dim, *cfg.hidden, action_dim), True, cfg.zero_init_actor).init(gen).to(dt)
        self.critic = Mlp((state_dim + action_dim, *cfg.hidden, 1), False).init(gen).to(dt)
        self.actor_target = Mlp(self.actor.sizes, True).to(dt)
        self.critic_target = Mlp(self.critic.sizes, False).to(dt)
        self.actor_target.load_state_dict(self.actor.state_dict())
        self.critic_target.load_state_dict(self.critic.state_dict())
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=cfg.actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=cfg.critic_lr)
        self.meta: dict = {}

    @property
    def dtype(self):
        return _dtype(self.cfg)

    def tensor(self, x):
        return torch.as_tensor(np.asarray(x), dtype=self.dtype)

    def act(self, s) -> np.ndarray:
        return actor_forward(self.actor, s, self.dtype)

    # -- persistence -----------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        path = Path(path)
        meta = {**self.meta, **(meta or {})}
        blob = {
            "version": VERSION,
            "config": asdict(self.cfg),
            "dims": (self.state_dim, self.action_dim),
            "actor": self.actor.state_dict(),
            "critic": self.critic.state_dict(),
            "actor_target": self.actor_target.state_dict(),
            "critic_target": self.critic_target.state_dict(),
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "meta": meta,
        }
        torch.save(blob, path)
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(
            {"version": VERSION, "config": asdict(self.cfg), "meta": meta}, indent=2, default=str))

    @classmethod
    def load(cls, path) -> "Agent":
        blob = torch.load(Path(path), weights_only=False)
        if blob.get("version") != VERSION:
            raise ValueError(f"checkpoint version {blob.get('version')!r} is not {VERSION!r}")
        cfg = DdpgConfig.from_dict(blob["config"])
        agent = cls(cfg, 0, *blob["dims"])
        for name in ("actor", "critic", "actor_target", "critic_target", "actor_opt", "critic_opt"):
            getattr(agent, name).load_state_dict(blob[name])
        agent.meta = dict(blob["meta"])
        return agent


def actor_forward(actor: Mlp, s, dtype=torch.float32) -> np.ndarray:
    """Revision factors in [-1, 1]^6 for one state or a batch."""
    with torch.no_grad():
        out = actor(torch.as_tensor(np.asarray(s), dtype=dtype))
    return out.numpy().astype(float)


def critic_forward(critic: Mlp, s, a, dtype=torch.float32) -> np.ndarray:
    with torch.no_grad():
        x = torch.cat([torch.as_tensor(np.asarray(s), dtype=dtype),
                       torch.as_tensor(np.asarray(a), dtype=dtype)], dim=-1)
        return critic(x).numpy().astype(float)[..., 0]


class ReplayBuffer:
    """Fixed-capacity FIFO store of (s, a, r, s', done)."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.d = np.zeros(capacity)
        self.n = 0
        self.head = 0

    def __len__(self):
        return self.n

    def add(self, s, a, r, s2, done):
        i = self.head
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = s, a, r, s2, float(done)
        self.head = (i + 1) % self.capacity
        self.n = min(self.n + 1, self.capacity)

    def sample(self, rng: np.random.Generator, k: int):
        idx = rng.integers(0, self.n, size=k)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]


@dataclass
class Batch:
    s: torch.Tensor
    a: torch.Tensor
    r: torch.Tensor
    s2: torch.Tensor
    d: torch.Tensor

    @classmethod
    def of(cls, arrays, dtype) -> "Batch":
        return cls(*(torch.as_tensor(x, dtype=dtype) for x in arrays))


def td_target(agent: Agent, b: Batch) -> torch.Tensor:
    with torch.no_grad():
        q2 = agent.critic_target(torch.cat([b.s2, agent.actor_target(b.s2)], dim=1))[:, 0]
        return agent.cfg.reward_scale * b.r + agent.cfg.gamma * (1.0 - b.d) * q2


def critic_loss(agent: Agent, b: Batch) -> torch.Tensor:
    q = agent.critic(torch.cat([b.s, b.a], dim=1))[:, 0]
    return torch.mean((q - td_target(agent, b)) ** 2)


def actor_loss(agent: Agent, b: Batch) -> torch.Tensor:
    return -torch.mean(agent.critic(torch.cat([b.s, agent.actor(b.s)], dim=1)))


def soft_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    with torch.no_grad():
        for pt, ps in zip(target.parameters(), source.parameters()):
            if tau == 1.0:
                pt.copy_(ps)
            elif tau > 0.0:
                pt.mul_(1.0 - tau).add_(ps, alpha=tau)


LossFn = Callable[[Agent, Batch], torch.Tensor]


def ddpg_update(agent: Agent, b: Batch, critic_fn: LossFn = critic_loss,
                actor_fn: LossFn = actor_loss) -> tuple[float, float]:
    """One critic step, one actor step, soft target update.  Returns (actor_loss, critic_loss)."""
    lc = critic_fn(agent, b)
    if not torch.isfinite(lc):
        raise NonFiniteLoss(f"critic loss is {lc.item()}")
    agent.critic_opt.zero_grad()
    lc.backward()
    agent.critic_opt.step()
    la = actor_fn(agent, b)
    if not torch.isfinite(la):
        raise NonFiniteLoss(f"actor loss is {la.item()}")
    agent.actor_opt.zero_grad()
    la.backward()
    agent.actor_opt.step()
    soft_update(agent.critic_target, agent.critic, agent.cfg.tau)
    soft_update(agent.actor_target, agent.actor, agent.cfg.tau)
    return float(la.item()), float(lc.item())


@dataclass
class EpisodeRecord:
    episode: int
    avg_reward: float
    total_reward: float
    steps: int
    success: bool


def run_episode(env: InsertionEnv, agent: Agent, rng: np.random.Generator, noise: float,
                buffer: ReplayBuffer | None = None, learn: bool = False, env_seed: int | None = None,
                critic_fn: LossFn = critic_loss, actor_fn: LossFn = actor_loss) -> EpisodeRecord:
    s = env.reset(env_seed)
    rewards = []
    success = False
    while True:
        a = agent.act(s)
        if noise > 0:
            a = a + rng.normal(0.0, noise, a.shape)
        a = np.clip(a, -1.0, 1.0)
        s2, r, done, info = env.step(a)
        rewards.append(r)
        if buffer is not None:
            # truncation is not a terminal state
            buffer.add(s, a, r, s2, done and not info.truncated)
        if learn and buffer is not None and len(buffer) >= agent.cfg.batch_size:
            for _ in range(agent.cfg.updates_per_step):
                b = Batch.of(buffer.sample(rng, agent.cfg.batch_size), agent.dtype)
                ddpg_update(agent, b, critic_fn, actor_fn)
        s = s2
        if done:
            success = info.success
            break
    return EpisodeRecord(-1, float(np.mean(rewards)), float(np.sum(rewards)), len(rewards), success)


def train(env: InsertionEnv, episodes: int, cfg: DdpgConfig, seed: int, agent: Agent | None = None,
          critic_fn: LossFn = critic_loss, actor_fn: LossFn = actor_loss,
          on_episode: Callable[[int, EpisodeRecord], None] | None = None,
          warmup_hook: Callable[[int], None] | None = None) -> tuple[Agent, list[EpisodeRecord]]:
    """Warm-up episodes fill the replay buffer; afterwards every step updates the agent.

    Environment seeds for episode k are drawn from the run generator, so
    two runs with one seed see the same start sequence.
    """
    rng = np.random.default_rng(seed)
    if agent is None:
        agent = Agent(cfg, int(rng.integers(2 ** 31)))
    buffer = ReplayBuffer(cfg.buffer_size, agent.state_dim, agent.action_dim)
    env_seeds = rng.integers(0, 2 ** 31, size=max(episodes, 1))
    curve = []
    for k in range(episodes):
        warm = k < cfg.warmup_episodes
        if warm and warmup_hook is not None:
            warmup_hook(k)
        rec = run_episode(env, agent, rng, cfg.noise(k), buffer, learn=not warm,
                          env_seed=int(env_seeds[k]), critic_fn=critic_fn, actor_fn=actor_fn)
        rec.episode = k
        curve.append(rec)
        if on_episode is not None:
            on_episode(k, rec)
    return agent, curve


def evaluate(env: InsertionEnv, agent: Agent, seeds) -> list[EpisodeRecord]:
    """Greedy episodes on the given start seeds."""
    rng = np.random.default_rng(0)
    out = []
    for k, sd in enumerate(seeds):
        rec = run_episode(env, agent, rng, 0.0, env_seed=int(sd))
        rec.episode = k
        out.append(rec)
    return out


def write_curve(curve: list[EpisodeRecord], path) -> None:
    with open(Path(path), "w") as fh:
        fh.write("episode,avg_reward,total_reward,steps,success\n")
        for r in curve:
            fh.write(f"{r.episode},{r.avg_reward:.9g},{r.total_reward:.9g},{r.steps},{int(r.success)}\n")
