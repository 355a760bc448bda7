"""Weighted dimensional policy distillation.

Source agents are probed one action dimension at a time in the target
task; the resulting similarities weight a per-dimension distillation term
added to the ordinary actor and critic losses.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .env import ACTION_DIM, InsertionEnv, rollout
from .rl import Agent, Batch, DdpgConfig, EpisodeRecord, actor_loss, critic_loss, train

METHODS = ("wdpd", "equal", "most", "least", "direct")
WEIGHT_AXES = ("source", "dimension")


@dataclass(frozen=True)
class TransferConfig:
    method: str = "wdpd"
    nu: float = 100.0
    omega_a: float = 2.0
    omega_c: float = 5.0
    sampling_times: int = 20
    horizon: int = 12  # n-step reward length; defaults to the state dimension
    weight_axis: str = "source"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.weight_axis not in WEIGHT_AXES:
            raise ValueError(f"weight_axis must be one of {WEIGHT_AXES}")
        if self.sampling_times < 1 or self.horizon < 1:
            raise ValueError("sampling_times and horizon must be >= 1")
        if min(self.nu, self.omega_a, self.omega_c) < 0:
            raise ValueError("nu, omega_a and omega_c must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "TransferConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown transfer keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SubPolicyActivation:
    source: int
    dimension: int
    action: np.ndarray

    @classmethod
    def of(cls, source: int, dimension: int, full_action) -> "SubPolicyActivation":
        full = np.asarray(full_action, dtype=float).reshape(-1)
        if not 0 <= dimension < full.size:
            raise ValueError(f"dimension {dimension} outside 0..{full.size - 1}")
        a = np.zeros_like(full)
        a[dimension] = full[dimension]
        return cls(source, dimension, a)


def sub_policy(agent: Agent, dimension: int, source: int = 0):
    """Policy that applies only slot ``dimension`` of the agent's greedy action."""
    return lambda s: SubPolicyActivation.of(source, dimension, agent.act(s)).action


# -- Algorithm pieces ------------------------------------------------------


@dataclass
class ProbeResult:
    n_step: float
    phi: np.ndarray  # (state_dim,)
    short: bool  # some rollout ended before the horizon


def attribution(active_states, baseline_states) -> np.ndarray:
    """phi(j, v) = mean_t |s_{t+1,v} - s'_{t+1,v}| over the paired next states."""
    a = np.asarray(active_states, dtype=float)
    b = np.asarray(baseline_states, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("need a nonempty (steps, state_dim) array")
    return np.mean(np.abs(a - b), axis=0)


def probe_dimension(env: InsertionEnv, agent: Agent, dimension: int, seeds, horizon: int = 12) -> ProbeResult:
    """Paired rollouts: sub-policy ``dimension`` versus zero action from identical seeds.

    Returns the mean n-step reward of the active rollouts and the mean
    attribution over all seeds.  Rollouts that stop early contribute the
    steps they have (and set ``short``); the paired baseline is cut to the
    same length.
    """
    env = env.clone()
    pol = sub_policy(agent, dimension)
    sums, phis, short = [], [], False
    for sd in seeds:
        s_act, _, r_act, _ = rollout(env, pol, horizon, int(sd))
        s_base, _, _, _ = rollout(env, lambda s: np.zeros(ACTION_DIM), horizon, int(sd))
        k = min(len(s_act), len(s_base)) - 1
        short |= len(r_act) < horizon
        sums.append(float(np.sum(r_act)))
        if k > 0:
            phis.append(attribution(s_act[1:k + 1], s_base[1:k + 1]))
    phi = np.mean(phis, axis=0) if phis else np.zeros(env_state_dim(env))
    return ProbeResult(float(np.mean(sums)), phi, short)


def env_state_dim(env: InsertionEnv) -> int:
    return len(env.cfg.obs_scale)


def n_step_reward(env: InsertionEnv, agent: Agent, dimension: int, sampling_times: int, seed: int,
                  horizon: int = 12) -> tuple[float, bool]:
    """Mean over ``sampling_times`` starts of the first-``horizon`` reward sum under one sub-policy."""
    seeds = np.random.default_rng(seed).integers(0, 2 ** 31, sampling_times)
    env = env.clone()
    pol = sub_policy(agent, dimension)
    sums, short = [], False
    for sd in seeds:
        _, _, r, _ = rollout(env, pol, horizon, int(sd))
        short |= len(r) < horizon
        sums.append(float(np.sum(r)))
    return float(np.mean(sums)), short


@dataclass(frozen=True)
class ConnectionGraph:
    G: np.ndarray  # (action_dim, state_dim)
    zero_columns: tuple

    def row_dot(self, other: "ConnectionGraph") -> np.ndarray:
        return np.sum(self.G * other.G, axis=1)

    def row_affinity(self, other: "ConnectionGraph") -> np.ndarray:
        """Row products after scaling each row to unit length; an all-zero row scores 0.

        Column normalisation alone leaves rows of arbitrary length, so the
        raw product of a graph with itself is not 1.
        """
        na = np.linalg.norm(self.G, axis=1)
        nb = np.linalg.norm(other.G, axis=1)
        den = na * nb
        return np.divide(self.row_dot(other), den, out=np.zeros_like(den), where=den > 0)


def connection_graph(phi) -> ConnectionGraph:
    """Normalise every state column of phi to unit L2 norm over actions."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise ValueError("attribution values must be nonnegative")
    norm = np.linalg.norm(phi, axis=0)
    zero = norm == 0
    G = np.divide(phi, norm, out=np.zeros_like(phi), where=~zero)
    return ConnectionGraph(G, tuple(int(v) for v in np.flatnonzero(zero)))


def similarity(N, G_source: list[ConnectionGraph], G_target: list[ConnectionGraph], nu: float) -> np.ndarray:
    """Sim[i, j] = N[i, j] + nu * affinity of row j in G_i and in the target graph for source i."""
    N = np.asarray(N, dtype=float)
    if N.shape[0] != len(G_source) or len(G_source) != len(G_target):
        raise ValueError("one N row and two graphs per source are required")
    dots = np.array([gs.row_affinity(gt) for gs, gt in zip(G_source, G_target)]).reshape(N.shape)
    return N + nu * dots


def weights(sim, axis: str = "source") -> np.ndarray:
    """Min-shifted weights normalised over sources (per dimension) or over dimensions (per source).

    Where every entry along the axis is equal the weights are uniform.
    """
    sim = np.asarray(sim, dtype=float)
    if not np.all(np.isfinite(sim)):
        raise ValueError("similarities must be finite")
    if axis not in WEIGHT_AXES:
        raise ValueError(f"axis must be one of {WEIGHT_AXES}")
    ax = 0 if axis == "source" else 1
    shifted = sim - sim.min(axis=ax, keepdims=True)
    total = shifted.sum(axis=ax, keepdims=True)
    uniform = np.full_like(sim, 1.0 / sim.shape[ax])
    return np.where(total > 0, shifted / np.where(total > 0, total, 1.0), uniform)


def method_weights(sim, method: str, axis: str = "source") -> np.ndarray:
    """Weight matrix for a transfer method.

    ``most`` and ``least`` pick one whole source by its summed similarity;
    ``direct`` switches distillation off.
    """
    sim = np.asarray(sim, dtype=float)
    k, m = sim.shape
    if method == "wdpd":
        return weights(sim, axis)
    if method == "equal":
        return np.full((k, m), 1.0 / k)
    if method == "direct":
        return np.zeros((k, m))
    if method in ("most", "least"):
        score = sim.sum(axis=1)
        pick = int(np.argmax(score) if method == "most" else np.argmin(score))
        W = np.zeros((k, m))
        W[pick] = 1.0
        return W
    raise ValueError(f"unknown method {method!r}")


@dataclass
class SimilarityReport:
    N: np.ndarray
    Sim: np.ndarray
    W: np.ndarray
    nu: float
    sampling_times: int
    G_source: list = field(default_factory=list)
    G_target: list = field(default_factory=list)
    short: np.ndarray | None = None
    labels: tuple = ()

    def write(self, out_dir) -> list[Path]:
        """Matrices N, Sim, W as CSV plus one long-format file; returns the paths written."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        labels = self.labels or tuple(str(i) for i in range(self.N.shape[0]))
        paths = []
        for name, mat in (("N", self.N), ("Sim", self.Sim), ("W", self.W)):
            p = out / f"similarity_{name}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["source", *[f"a{j}" for j in range(mat.shape[1])]])
                for lab, row in zip(labels, mat):
                    w.writerow([lab, *[f"{v:.9g}" for v in row]])
            paths.append(p)
        p = out / "similarity_long.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "dimension", "N", "Sim", "W", "graph_affinity"])
            for i, lab in enumerate(labels):
                dots = (self.G_source[i].row_affinity(self.G_target[i]) if self.G_source
                        else np.full(self.N.shape[1], np.nan))
                for j in range(self.N.shape[1]):
                    w.writerow([lab, j, f"{self.N[i, j]:.9g}", f"{self.Sim[i, j]:.9g}",
                                f"{self.W[i, j]:.9g}", f"{dots[j]:.9g}"])
        paths.append(p)
        return paths


@dataclass
class Source:
    """A trained source agent together with the task it was trained on."""

    agent: Agent
    env: InsertionEnv
    label: str = ""


def evaluate_similarity(target_env: InsertionEnv, sources: list[Source], tcfg: TransferConfig,
                        seed: int) -> SimilarityReport:
    """Probe every source sub-policy in its own task and in the target task.

    N comes from the target-task rollouts.  The source-task rollouts give
    G_i and the target-task rollouts give the target graph the row
    products are taken against.  No network is touched.
    """
    rng = np.random.default_rng(seed)
    k = len(sources)
    N = np.zeros((k, ACTION_DIM))
    short = np.zeros((k, ACTION_DIM), dtype=bool)
    G_src, G_tgt = [], []
    for i, src in enumerate(sources):
        phi_s = np.zeros((ACTION_DIM, env_state_dim(src.env)))
        phi_t = np.zeros((ACTION_DIM, env_state_dim(target_env)))
        for j in range(ACTION_DIM):
            seeds_t = rng.integers(0, 2 ** 31, tcfg.sampling_times)
            seeds_s = rng.integers(0, 2 ** 31, tcfg.sampling_times)
            pt = probe_dimension(target_env, src.agent, j, seeds_t, tcfg.horizon)
            ps = probe_dimension(src.env, src.agent, j, seeds_s, tcfg.horizon)
            N[i, j], short[i, j] = pt.n_step, pt.short
            phi_t[j], phi_s[j] = pt.phi, ps.phi
        G_src.append(connection_graph(phi_s))
        G_tgt.append(connection_graph(phi_t))
    Sim = similarity(N, G_src, G_tgt, tcfg.nu)
    W = method_weights(Sim, tcfg.method, tcfg.weight_axis)
    return SimilarityReport(N, Sim, W, tcfg.nu, tcfg.sampling_times, G_src, G_tgt, short,
                            tuple(s.label or str(i) for i, s in enumerate(sources)))


# -- losses ----------------------------------------------------------------


def _check_sources(agent: Agent, nets, W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != (len(nets), agent.action_dim):
        raise ValueError(f"W must be ({len(nets)}, {agent.action_dim}), got {W.shape}")
    return W


def wdpd_actor_loss(agent: Agent, b: Batch, source_actors, W, omega_a: float) -> torch.Tensor:
    """-Q(s, pi(s)) + omega_a * sum_ij W_ij * mean_batch (pi^j(s) - pi_i^j(s))^2."""
    W = _check_sources(agent, source_actors, W)
    loss = actor_loss(agent, b)
    if not np.any(W):
        return loss
    pi = agent.actor(b.s)
    distill = torch.zeros((), dtype=pi.dtype)
    for i, src in enumerate(source_actors):
        if src.sizes[-1] != agent.action_dim or src.sizes[0] != agent.state_dim:
            raise ValueError("source actor dimensions do not match the target agent")
        with torch.no_grad():
            target = src(b.s.to(next(src.parameters()).dtype)).to(pi.dtype)
        per_dim = torch.mean((pi - target) ** 2, dim=0)
        distill = distill + torch.sum(torch.as_tensor(W[i], dtype=pi.dtype) * per_dim)
    return loss + omega_a * distill


def wdpd_critic_loss(agent: Agent, b: Batch, source_critics, W, omega_c: float) -> torch.Tensor:
    """TD loss + omega_c * sum_i (sum_j W_ij) * mean_batch (Q(s,a) - Q_i(s,a))^2."""
    W = _check_sources(agent, source_critics, W)
    loss = critic_loss(agent, b)
    w_src = W.sum(axis=1)
    if not np.any(w_src):
        return loss
    sa = torch.cat([b.s, b.a], dim=1)
    q = agent.critic(sa)[:, 0]
    distill = torch.zeros((), dtype=q.dtype)
    for i, src in enumerate(source_critics):
        if src.sizes[0] != agent.state_dim + agent.action_dim:
            raise ValueError("source critic input size does not match the target agent")
        with torch.no_grad():
            qi = src(sa.to(next(src.parameters()).dtype))[:, 0].to(q.dtype)
        distill = distill + float(w_src[i]) * torch.mean((q - qi) ** 2)
    return loss + omega_c * distill


def loss_functions(sources: list[Source], W, tcfg: TransferConfig):
    """(critic_fn, actor_fn) closures for the trainer."""
    actors = [s.agent.actor for s in sources]
    critics = [s.agent.critic for s in sources]

    def critic_fn(agent, b):
        return wdpd_critic_loss(agent, b, critics, W, tcfg.omega_c)

    def actor_fn(agent, b):
        return wdpd_actor_loss(agent, b, actors, W, tcfg.omega_a)

    return critic_fn, actor_fn


def transfer_train(target_env: InsertionEnv, sources: list[Source], cfg: DdpgConfig, tcfg: TransferConfig,
                   episodes: int, seed: int, on_episode=None, report: SimilarityReport | None = None
                   ) -> tuple[Agent, list[EpisodeRecord], SimilarityReport | None]:
    """Similarity evaluation (read-only), then training with the distillation losses.

    The similarity probe draws from its own sub-seed and a cloned
    environment, so it does not disturb the training stream: with no
    sources, or method ``direct``, the run matches ``train`` exactly.
    A ``report`` from an earlier evaluation of the same sources skips the
    probe; its weights are recomputed for ``tcfg.method``.
    """
    if tcfg.method == "direct" or not sources:
        agent, curve = train(target_env, episodes, cfg, seed, on_episode=on_episode)
        return agent, curve, None
    if report is None:
        sim_seed = int(np.random.default_rng([seed, 1]).integers(2 ** 31))
        report = evaluate_similarity(target_env, sources, tcfg, sim_seed)
    elif report.Sim.shape[0] != len(sources):
        raise ValueError("similarity report does not match the number of sources")
    report = replace(report, W=method_weights(report.Sim, tcfg.method, tcfg.weight_axis))
    critic_fn, actor_fn = loss_functions(sources, report.W, tcfg)
    agent, curve = train(target_env, episodes, cfg, seed, critic_fn=critic_fn, actor_fn=actor_fn,
                         on_episode=on_episode)
    return agent, curve, report
