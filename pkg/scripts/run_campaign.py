"""Simulated transfer campaign behind the property-based acceptance checks.

Stages (each skipped when its manifest already exists):

* train    source agents on the cylinder and the cuboid;
* transfer all five methods into the pentagonal prism, one shared
           similarity evaluation per seed;
* ablate   single-source transfer with reconfigured and deviated target gains;
* test     greedy episodes of the five controller variants;
* summary  the numbers the acceptance suite reads (summary.json).

    python scripts/run_campaign.py [--config configs/campaign.yaml] [--seeds 0 1 2 3 4]
"""
from __future__ import annotations

import argparse
import copy
import json
import time
from pathlib import Path

import numpy as np

from peglab import experiments as ex
from peglab.wdpd import METHODS, evaluate_similarity

ROOT = Path(__file__).resolve().parents[1]


def done(out: Path) -> bool:
    return (out / "manifest.json").exists()


def stage_train(cfg, out: Path, episodes: int | None):
    for task in ("cylinder", "cuboid"):
        d = out / "train" / task
        if done(d):
            continue
        c = copy.deepcopy(cfg)
        c["train"]["task"] = task
        if episodes:
            c["train"]["episodes"] = episodes
        t = time.time()
        r = ex.cmd_train(c, 0, d)
        print(f"train {task}: eval {r['eval_reward']:.3f} success {r['eval_success']:.2f} ({time.time() - t:.0f}s)",
              flush=True)


def _with_sources(cfg, out: Path, tasks):
    c = copy.deepcopy(cfg)
    c["transfer"]["sources"] = [{"task": t, "checkpoint": str(out / "train" / t / "agent.pt")} for t in tasks]
    return c


def stage_transfer(cfg, out: Path, seeds, methods=METHODS):
    c = _with_sources(cfg, out, ("cylinder", "cuboid"))
    for seed in seeds:
        todo = [m for m in methods if not done(out / "transfer" / m / f"seed{seed}")]
        if not todo:
            continue
        report = None
        if any(m != "direct" for m in todo):
            _, tcfg, sources = ex._transfer_setup(c, "wdpd")
            env = ex._target_env(c, 1.0, False)
            t = time.time()
            report = evaluate_similarity(env, sources, tcfg, ex.sub_seeds(seed)["similarity"])
            print(f"seed {seed}: similarity in {time.time() - t:.0f}s\n{np.round(report.Sim, 2)}", flush=True)
        for m in todo:
            t = time.time()
            w = ex.RunWriter(out / "transfer" / m / f"seed{seed}", c, "transfer", seed)
            r, _ = ex.run_transfer(c, seed, w, m, report=report)
            w.json("result.json", r)
            w.finish()
            print(f"seed {seed} {m}: final {r['final_reward']:.3f} "
                  f"threshold@{r.get('episodes_to_threshold')} ({time.time() - t:.0f}s)", flush=True)


def stage_ablate(cfg, out: Path, seeds):
    c = _with_sources(cfg, out, ("cuboid",))
    for seed in seeds:
        d = out / "ablate" / f"seed{seed}"
        if done(d):
            continue
        t = time.time()
        r = ex.cmd_ablate_gains(c, seed, d, "wdpd")
        print(f"ablate seed {seed}: " + ", ".join(f"f={x['gain_factor']:g} {x['final_reward']:.3f}"
                                                  for x in r["results"]) + f" ({time.time() - t:.0f}s)", flush=True)


def stage_test(cfg, out: Path, seeds):
    for seed in seeds:
        d = out / "test" / f"seed{seed}"
        if done(d):
            continue
        c = copy.deepcopy(cfg)
        c["test"]["checkpoints"] = {
            "direct-trained": str(out / "transfer" / "direct" / f"seed{seed}" / "agent.pt"),
            "reconfigured+WDPD": str(out / "transfer" / "wdpd" / f"seed{seed}" / "agent.pt"),
            "reconfigured+equal-distill": str(out / "transfer" / "equal" / f"seed{seed}" / "agent.pt"),
        }
        r = ex.cmd_test(c, seed, d)
        print(f"test seed {seed}: " + "; ".join(f"{k} peak {v['peak_force']:.2f} mean {v['mean_force']:.2f} "
                                               f"late {v['late_force_std']:.2f}" for k, v in r.items()), flush=True)


def summarise(out: Path, seeds) -> dict:
    s = {"seeds": list(seeds), "transfer": {}, "ablate": {}, "test": {}}
    for m in METHODS:
        rs = [json.loads((out / "transfer" / m / f"seed{k}" / "result.json").read_text()) for k in seeds]
        s["transfer"][m] = {"final_reward": [r["final_reward"] for r in rs],
                            "episodes_to_threshold": [r.get("episodes_to_threshold") for r in rs]}
    for k in seeds:
        for r in json.loads((out / "ablate" / f"seed{k}" / "result.json").read_text()):
            s["ablate"].setdefault(f"{r['gain_factor']:g}", []).append(r["final_reward"])
    for k in seeds:
        for name, v in json.loads((out / "test" / f"seed{k}" / "summary.json").read_text()).items():
            d = s["test"].setdefault(name, {"peak_force": [], "mean_force": [], "late_force_std": []})
            for key in d:
                d[key].append(v[key])
    (out / "summary.json").write_text(json.dumps(s, indent=2) + "\n")
    return s


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "campaign.yaml"))
    ap.add_argument("--out", default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--stages", nargs="+", default=["train", "transfer", "ablate", "test", "summary"])
    ap.add_argument("--methods", nargs="+", default=list(METHODS))
    ap.add_argument("--train-episodes", type=int, default=None)
    args = ap.parse_args(argv)
    cfg = ex.load_config(args.config)
    out = Path(args.out) if args.out else (Path(cfg["_base"]) / cfg["out"]).resolve()
    if "train" in args.stages:
        stage_train(cfg, out, args.train_episodes)
    if "transfer" in args.stages:
        stage_transfer(cfg, out, args.seeds, args.methods)
    if "ablate" in args.stages:
        stage_ablate(cfg, out, args.seeds)
    if "test" in args.stages:
        stage_test(cfg, out, args.seeds)
    if "summary" in args.stages:
        print(json.dumps(summarise(out, args.seeds), indent=1))


if __name__ == "__main__":
    main()
