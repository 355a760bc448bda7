"""Config-driven experiment commands.

Every command takes a validated config dict, a master seed and an output
directory, writes CSV/JSON artifacts there and finishes by writing
``manifest.json``.  The config format is described in ``configs/README.md``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .controller import ComplianceGains
from .env import ACTION_DIM, EpisodeConfig, InsertionEnv, RewardCoeffs, rollout
from .etcl import (TaskGeometry, reconfigure, reconfigure_table, shape_scale, tuned_gains,
                   write_report)
from .geometry import max_radius
from .plant import MM, PlantParams
from .rl import VERSION as RL_VERSION
from .rl import Agent, DdpgConfig, EpisodeRecord, evaluate, train, write_curve
from .sections import section_from_dict
from .wdpd import METHODS, Source, SimilarityReport, TransferConfig, evaluate_similarity, transfer_train


class ConfigError(ValueError):
    """The configuration is malformed or cannot serve the requested command."""


# -- schema ----------------------------------------------------------------

_PLANT_KEYS = {f.name for f in fields(PlantParams)} - {"section", "L"}
_SCHEMA = {
    "seed": None,
    "seeds": None,
    "out": None,
    "plant": _PLANT_KEYS,
    "episode": {f.name for f in fields(EpisodeConfig)},
    "reward": {f.name for f in fields(RewardCoeffs)},
    "rl": {f.name for f in fields(DdpgConfig)},
    "tasks": None,  # name -> {section, L_mm, clearance?}
    "gains": {"reference", "loop_gain", "K_gamma"},
    "table": None,  # list of groups, checked in cmd_reconfigure
    "train": {"task", "episodes", "eval_episodes"},
    "transfer": {"target", "sources", "episodes", "method", "settings", "gain_factor",
                 "allow_gain_override", "threshold", "window"},
    "ablate": {"factors"},
    "test": {"task", "episodes", "small_factor", "large_factor", "checkpoints"},
}
_TASK_KEYS = {"section", "L_mm", "clearance"}


def validate(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for key, allowed in _SCHEMA.items():
        if allowed is None or key not in cfg:
            continue
        if not isinstance(cfg[key], dict):
            raise ConfigError(f"{key!r} must be a mapping")
        bad = set(cfg[key]) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
    for name, t in (cfg.get("tasks") or {}).items():
        if not isinstance(t, dict) or "section" not in t or "L_mm" not in t:
            raise ConfigError(f"task {name!r} needs 'section' and 'L_mm'")
        bad = set(t) - _TASK_KEYS
        if bad:
            raise ConfigError(f"unknown keys in task {name!r}: {sorted(bad)}")
    method = (cfg.get("transfer") or {}).get("method")
    if method is not None and method not in METHODS:
        raise ConfigError(f"transfer method must be one of {METHODS}")
    return cfg


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads 1e-5 and 2.0e9 as floats (YAML 1.2 style)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+][0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path) -> dict:
    try:
        cfg = yaml.load(Path(path).read_text(), Loader=_Loader)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = validate(cfg or {})
    base = Path(path).resolve().parent
    cfg = copy.deepcopy(cfg)
    cfg["_base"] = str(base)
    return cfg


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_") and k != "out"}
    blob = json.dumps(clean, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


SEED_NAMES = ("train", "similarity", "eval", "env")


def sub_seeds(master: int) -> dict:
    """Named, independent sub-seeds derived from one master seed."""
    ss = np.random.SeedSequence(int(master))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(SEED_NAMES, ss.spawn(len(SEED_NAMES)))}


# -- output bookkeeping ------------------------------------------------------


class RunWriter:
    """Tracks every artifact of a command; ``finish`` writes the manifest last."""

    def __init__(self, out, cfg: dict, command: str, seed: int, force: bool = False):
        self.out = Path(out)
        self.cfg = cfg
        self.hash = config_hash(cfg)
        manifest = self.out / "manifest.json"
        if manifest.exists() and not (force or cfg.get("_force")):
            old = json.loads(manifest.read_text())
            if old.get("config_hash") != self.hash:
                raise ConfigError(f"{self.out} holds a run with config hash {old.get('config_hash')}; "
                                  f"this config hashes to {self.hash} (use --force to overwrite)")
        self.out.mkdir(parents=True, exist_ok=True)
        if manifest.exists():
            manifest.unlink()
        self.command = command
        self.seed = int(seed)
        self.seeds = {"master": self.seed, **sub_seeds(seed)}
        self.files: list[Path] = []
        self.t0 = time.time()

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def add(self, paths) -> None:
        self.files.extend(Path(p) for p in paths)

    def json(self, rel: str, data) -> Path:
        p = self.path(rel)
        p.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return p

    def finish(self, extra: dict | None = None) -> Path:
        listed = sorted({str(p.relative_to(self.out)) for p in self.files})
        manifest = {
            "command": self.command,
            "config_hash": self.hash,
            "code_version": f"peglab {__version__} / {RL_VERSION}",
            "files": listed,
            "wall_clock_s": round(time.time() - self.t0, 3),
            "seeds": self.seeds,
            **(extra or {}),
        }
        p = self.out / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return p


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


# -- building blocks ------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    name: str
    plant: PlantParams

    @property
    def geometry(self) -> TaskGeometry:
        return TaskGeometry.of(self.plant.section, self.plant.L)


def get_task(cfg: dict, name: str) -> Task:
    tasks = cfg.get("tasks") or {}
    if name not in tasks:
        raise ConfigError(f"task {name!r} is not defined (have {sorted(tasks)})")
    t = tasks[name]
    plant = dict(cfg.get("plant") or {})
    if "clearance" in t:
        plant["clearance"] = t["clearance"]
    try:
        section = section_from_dict(t["section"])
        return Task(name, PlantParams(section, L=float(t["L_mm"]) * MM, **plant))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"task {name!r}: {exc}") from exc


def _gain_settings(cfg: dict):
    g = cfg.get("gains")
    if not g or "reference" not in g:
        raise ConfigError("a 'gains' block with a reference task is required")
    loop = np.asarray(g.get("loop_gain", [2.0, 2.0, 0.002, 2.0, 2.0]), dtype=float)
    if loop.shape != (5,) or np.any(loop <= 0):
        raise ConfigError("gains.loop_gain needs five positive entries")
    return str(g["reference"]), loop, float(g.get("K_gamma", 5.55e-2))


def task_gains(cfg: dict, name: str) -> tuple[ComplianceGains, str]:
    """Gains for a task: tuned on the reference task, reconfigured everywhere else."""
    ref_name, loop, K_gamma = _gain_settings(cfg)
    ref = get_task(cfg, ref_name)
    K_ref = tuned_gains(ref.plant, loop, K_gamma)
    if name == ref_name:
        return K_ref, "Tuned"
    task = get_task(cfg, name)
    s_ref = shape_scale(ref.plant, ref.geometry)
    s_tgt = shape_scale(task.plant, task.geometry)
    return reconfigure(K_ref, ref.geometry, s_ref, task.geometry, s_tgt), "Reconfigured"


def make_env(cfg: dict, task: Task, gains: ComplianceGains) -> InsertionEnv:
    try:
        ep = EpisodeConfig.from_dict(cfg.get("episode") or {})
        rw = RewardCoeffs(**(cfg.get("reward") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return InsertionEnv(task.plant, gains, ep, rw)


def rl_config(cfg: dict) -> DdpgConfig:
    try:
        return DdpgConfig.from_dict(cfg.get("rl") or {})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _resolve(cfg: dict, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _load_agent(cfg: dict, path) -> Agent:
    p = _resolve(cfg, path)
    if not p.exists():
        raise ConfigError(f"checkpoint {p} does not exist")
    return Agent.load(p)


def eval_seeds(seed: int, n: int) -> list[int]:
    return [int(v) for v in np.random.default_rng(sub_seeds(seed)["eval"]).integers(0, 2 ** 31, n)]


def moving_average(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window <= 1 or len(x) == 0:
        return x
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    for k in range(len(x)):
        lo = max(0, k + 1 - window)
        out[k] = (c[k + 1] - c[lo]) / (k + 1 - lo)
    return out


def episodes_to_threshold(curve: list[EpisodeRecord], threshold: float, window: int = 10,
                          start: int = 0) -> int:
    """First episode (counted from ``start``) whose trailing average reaches ``threshold``.

    Runs that never get there count as the full budget plus one.
    """
    avg = moving_average([r.avg_reward for r in curve], window)
    for k in range(max(start + window - 1, 0), len(avg)):
        if avg[k] >= threshold:
            return k + 1
    return len(curve) + 1


def final_reward(curve: list[EpisodeRecord], window: int = 10) -> float:
    return float(np.mean([r.avg_reward for r in curve[-window:]]))


# -- commands -------------------------------------------------------------------


def cmd_reconfigure(cfg: dict, seed: int, out) -> dict:
    """Reconfiguration tables from (R_hat, L, relative scales) rows.

    Either a ``table`` block (explicit rows, one or more groups) or the
    config's tasks, whose shape scales are then computed numerically.
    """
    w = RunWriter(out, cfg, "reconfigure", seed)
    summary = {}
    groups = cfg.get("table")
    if groups is None:
        groups = [_table_from_tasks(cfg)]
    if not isinstance(groups, list) or not groups:
        raise ConfigError("'table' must be a nonempty list of groups")
    for g in groups:
        for key in ("group", "reference", "K_ref", "rows"):
            if key not in g:
                raise ConfigError(f"table group is missing {key!r}")
        K_ref = ComplianceGains.from_array(g["K_ref"])
        try:
            rows = reconfigure_table(g["rows"], str(g["reference"]), K_ref)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"group {g['group']}: {exc}") from exc
        write_report(rows, w.path(f"table_{g['group']}.csv"))
        prod = np.array([r.product() for r in rows])
        spread = np.max(np.abs(prod / prod[0] - 1.0), axis=0)
        summary[str(g["group"])] = {
            "gains": {r.label: r.gains.as_array().tolist() for r in rows},
            "methods": {r.label: r.method for r in rows},
            "product_spread": spread.tolist(),
        }
    w.json("summary.json", summary)
    w.finish()
    return summary


def _table_from_tasks(cfg: dict) -> dict:
    ref_name, loop, K_gamma = _gain_settings(cfg)
    ref = get_task(cfg, ref_name)
    K_ref = tuned_gains(ref.plant, loop, K_gamma)
    s_ref = shape_scale(ref.plant, ref.geometry)
    rows = []
    for name in cfg.get("tasks") or {}:
        t = get_task(cfg, name)
        s = shape_scale(t.plant, t.geometry).relative_to(s_ref)
        rows.append({"label": name, "R_hat": max_radius(t.plant.section), "L": t.plant.L / MM,
                     "scales": s.as_array().tolist()})
    return {"group": "tasks", "reference": ref_name, "K_ref": K_ref.as_array().tolist(), "rows": rows}


def _budget(cfg: dict, block: str, key: str, default: int) -> int:
    v = int((cfg.get(block) or {}).get(key, default))
    if v < 0:
        raise ConfigError(f"{block}.{key} must be nonnegative")
    return v


def cmd_train(cfg: dict, seed: int, out) -> dict:
    tcfg = cfg.get("train") or {}
    if "task" not in tcfg:
        raise ConfigError("train.task is required")
    task = get_task(cfg, tcfg["task"])
    gains, how = task_gains(cfg, task.name)
    env = make_env(cfg, task, gains)
    w = RunWriter(out, cfg, "train", seed)
    seeds = w.seeds
    agent, curve = train(env, _budget(cfg, "train", "episodes", 200), rl_config(cfg), seeds["train"])
    write_curve(curve, w.path("curve.csv"))
    ev = evaluate(env, agent, eval_seeds(seed, _budget(cfg, "train", "eval_episodes", 8)))
    write_curve(ev, w.path("eval.csv"))
    meta = {"task": task.name, "gains": gains.as_array().tolist(), "gain_method": how,
            "config_hash": w.hash, "seed": seed}
    agent.save(w.path("agent.pt"), meta)
    w.files.append(w.out / "agent.pt.json")
    result = {"final_reward": final_reward(curve), "eval_reward": float(np.mean([r.avg_reward for r in ev])),
              "eval_success": float(np.mean([r.success for r in ev])), **meta}
    w.json("result.json", result)
    w.finish()
    return result


def _transfer_setup(cfg: dict, method: str | None):
    t = cfg.get("transfer") or {}
    if "target" not in t:
        raise ConfigError("transfer.target is required")
    method = method or t.get("method", "wdpd")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    try:
        tcfg = TransferConfig.from_dict({**(t.get("settings") or {}), "method": method})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sources = []
    if method != "direct":
        specs = t.get("sources") or []
        if not specs:
            raise ConfigError(f"method {method!r} needs transfer.sources")
        for s in specs:
            if "task" not in s or "checkpoint" not in s:
                raise ConfigError("each source needs 'task' and 'checkpoint'")
            task = get_task(cfg, s["task"])
            gains, _ = task_gains(cfg, task.name)
            sources.append(Source(_load_agent(cfg, s["checkpoint"]), make_env(cfg, task, gains), task.name))
    return t, tcfg, sources


def _target_env(cfg: dict, gain_factor: float, allow_override: bool) -> InsertionEnv:
    t = cfg["transfer"]
    task = get_task(cfg, t["target"])
    gains, _ = task_gains(cfg, task.name)
    if gain_factor != 1.0:
        if not allow_override:
            raise ConfigError("target gains must stay reconfigured; set transfer.allow_gain_override to deviate")
        f = np.ones(6)
        f[:5] = gain_factor
        gains = gains.scaled(f)
    return make_env(cfg, task, gains)


def run_transfer(cfg: dict, seed: int, writer: RunWriter, method: str, prefix: str = "",
                 gain_factor: float = 1.0, allow_override: bool = False,
                 report: SimilarityReport | None = None) -> tuple[dict, SimilarityReport | None]:
    t, tcfg, sources = _transfer_setup(cfg, method)
    env = _target_env(cfg, gain_factor, allow_override)
    episodes = _budget(cfg, "transfer", "episodes", 200)
    if report is None and sources:
        report = evaluate_similarity(env, sources, tcfg, writer.seeds["similarity"])
    agent, curve, rep = transfer_train(env, sources, rl_config(cfg), tcfg, episodes, writer.seeds["train"],
                                       report=report)
    write_curve(curve, writer.path(f"{prefix}curve.csv"))
    if rep is not None:
        writer.add(rep.write(writer.out / f"{prefix}similarity"))
    meta = {"task": env.plant.section.name, "method": method, "gain_factor": gain_factor,
            "gains": env.gains.as_array().tolist(), "config_hash": writer.hash, "seed": writer.seed}
    agent.save(writer.path(f"{prefix}agent.pt"), meta)
    writer.files.append(writer.out / f"{prefix}agent.pt.json")
    window = int(t.get("window", 10))
    result = {"method": method, "gain_factor": gain_factor, "final_reward": final_reward(curve, window),
              "W": None if rep is None else rep.W.tolist()}
    if "threshold" in t:
        result["episodes_to_threshold"] = episodes_to_threshold(curve, float(t["threshold"]), window,
                                                                rl_config(cfg).warmup_episodes)
    return result, report


def cmd_transfer(cfg: dict, seed: int, out, method: str | None = None) -> dict:
    t = cfg.get("transfer") or {}
    w = RunWriter(out, cfg, "transfer", seed)
    result, _ = run_transfer(cfg, seed, w, method or t.get("method", "wdpd"),
                             gain_factor=float(t.get("gain_factor", 1.0)),
                             allow_override=bool(t.get("allow_gain_override", False)))
    w.json("result.json", result)
    w.finish()
    return result


def cmd_ablate_gains(cfg: dict, seed: int, out, method: str | None = None) -> dict:
    t = cfg.get("transfer") or {}
    factors = [float(f) for f in (cfg.get("ablate") or {}).get("factors", [1.0, 4.0])]
    if not factors or min(factors) <= 0:
        raise ConfigError("ablate.factors must be positive")
    if len(t.get("sources") or []) != 1:
        raise ConfigError("the gain ablation transfers from exactly one source")
    w = RunWriter(out, cfg, "ablate-gains", seed)
    results, report = [], None
    for f in factors:
        # similarity depends on the target gains, so it is re-evaluated per factor
        r, _ = run_transfer(cfg, seed, w, method or t.get("method", "wdpd"), prefix=f"factor_{f:g}/",
                            gain_factor=f, allow_override=True, report=report)
        results.append(r)
    w.json("result.json", results)
    w.finish()
    return {"results": results}


TEST_VARIANTS = ("constant-small-K", "constant-large-K", "direct-trained", "reconfigured+WDPD",
                 "reconfigured+equal-distill")


def _episode_stats(env: InsertionEnv) -> dict:
    F = np.array([np.linalg.norm(row["F_true"][:3]) for row in env.log])
    M = np.array([np.linalg.norm(row["F_true"][3:]) for row in env.log])
    q = max(1, len(F) // 4)
    return {"peak_force": float(F.max()), "mean_force": float(F.mean()), "mean_moment": float(M.mean()),
            "late_force_std": float(np.std(F[-q:])), "steps": len(F)}


def cmd_test(cfg: dict, seed: int, out) -> dict:
    """Greedy episodes of the five controller variants on one task, with full logs."""
    tc = cfg.get("test") or {}
    if "task" not in tc:
        raise ConfigError("test.task is required")
    task = get_task(cfg, tc["task"])
    gains, _ = task_gains(cfg, task.name)
    ckpts = tc.get("checkpoints") or {}
    missing = [v for v in TEST_VARIANTS[2:] if v not in ckpts]
    if missing:
        raise ConfigError(f"test.checkpoints lacks {missing}")
    small, large = float(tc.get("small_factor", 0.25)), float(tc.get("large_factor", 2.0))
    variants = {}
    for name, factor in (("constant-small-K", small), ("constant-large-K", large)):
        f = np.ones(6)
        f[:5] = factor
        variants[name] = (gains.scaled(f), None)
    for name in TEST_VARIANTS[2:]:
        variants[name] = (gains, _load_agent(cfg, ckpts[name]))
    w = RunWriter(out, cfg, "test", seed)
    seeds = eval_seeds(seed, _budget(cfg, "test", "episodes", 5))
    summary = {}
    for name, (K, agent) in variants.items():
        env = make_env(cfg, task, K)
        pol = (lambda s: np.zeros(ACTION_DIM)) if agent is None else agent.act
        rows = []
        for k, sd in enumerate(seeds):
            _, _, rewards, infos = rollout(env, pol, seed=sd)
            env.write_log(w.path(f"{name}/episode_{k}.csv"))
            st = _episode_stats(env)
            st.update(success=bool(infos[-1].success), avg_reward=float(np.mean(rewards)))
            rows.append(st)
        summary[name] = {key: float(np.mean([r[key] for r in rows])) for key in rows[0]}
        summary[name]["episodes"] = rows
    w.json("summary.json", summary)
    w.finish()
    return summary


def cmd_report(cfg: dict, seed: int, out) -> dict:
    """Collect every result.json / summary.json under ``out`` into one table."""
    root = Path(out)
    if not root.exists():
        raise ConfigError(f"{root} does not exist")
    rows = []
    for p in sorted(root.rglob("result.json")):
        data = json.loads(p.read_text())
        for r in data if isinstance(data, list) else [data]:
            rows.append({"run": str(p.parent.relative_to(root)), **{k: v for k, v in r.items()
                                                                   if not isinstance(v, (list, dict))}})
    keys = sorted({k for r in rows for k in r} - {"run"})
    w = RunWriter(root / "report", cfg, "report", seed, force=True)
    with open(w.path("results.csv"), "w") as fh:
        fh.write(",".join(["run", *keys]) + "\n")
        for r in rows:
            fh.write(",".join([r["run"], *[str(r.get(k, "")) for k in keys]]) + "\n")
    w.finish({"runs": len(rows)})
    return {"runs": len(rows)}


COMMANDS = {
    "reconfigure": cmd_reconfigure,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "ablate-gains": cmd_ablate_gains,
    "test": cmd_test,
    "report": cmd_report,
}
