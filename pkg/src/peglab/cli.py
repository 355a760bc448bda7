"""Command line entry point: ``peglab <verb> --config FILE [--seed N] [--out DIR] [--method NAME]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .etcl import ProbeError
from .experiments import COMMANDS, ConfigError, load_config
from .plant import JammingError
from .wdpd import METHODS

log = logging.getLogger("peglab")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="peglab", description=__doc__)
    ap.add_argument("verb", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML experiment config")
    ap.add_argument("--seed", type=int, default=None, help="master seed (default: config 'seed' or 0)")
    ap.add_argument("--out", default=None, help="output directory (default: config 'out')")
    ap.add_argument("--method", choices=METHODS, default=None, help="transfer method override")
    ap.add_argument("--force", action="store_true", help="overwrite a run made with another config")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if args.out:
            out = args.out
        elif cfg.get("out"):
            # relative to the config file, like checkpoint paths
            out = str(Path(cfg["_base"]) / cfg["out"])
        else:
            raise ConfigError("no output directory: pass --out or set 'out' in the config")
        if args.method is not None and args.verb not in ("transfer", "ablate-gains"):
            raise ConfigError(f"--method does not apply to {args.verb}")
        cfg["_force"] = args.force
        fn = COMMANDS[args.verb]
        result = fn(cfg, seed, out, args.method) if args.verb in ("transfer", "ablate-gains") else fn(cfg, seed, out)
    except (ConfigError, ProbeError, JammingError, ValueError, FileNotFoundError) as exc:
        print(f"peglab {args.verb}: rejected: {exc}", file=sys.stderr)
        return 2
    log.info("result: %s", result)
    print(f"peglab {args.verb}: wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
