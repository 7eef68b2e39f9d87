"""``s2pg-lab`` command line.

    s2pg-lab run <config> [--seed N] [--out DIR] [--override key=value ...]
    s2pg-lab gradcheck
    s2pg-lab variance <config>
    s2pg-lab oracle <config>

Exit codes: 0 success, 2 invalid configuration, 3 failed run.
"""

from __future__ import annotations

import argparse
import sys

from s2pg_lab.harness.config import ConfigError, load_config
from s2pg_lab.harness.runner import RunFailed, run

__all__ = ["main", "build_parser"]


def _common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
    if needs_config:
        p.add_argument("config", help="JSON experiment file (or inline JSON object)")
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. algo.lr_actor=1e-3 (repeatable)")
    p.add_argument("--jobs", type=int, help="parallel seed workers")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2pg-lab", description="Stateful policy-gradient experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run the experiment described by a config"))
    _common(sub.add_parser("gradcheck", help="finite-difference check of all gradients"), needs_config=False)
    _common(sub.add_parser("variance", help="variance-bound regime sweep"))
    _common(sub.add_parser("oracle", help="estimator vs finite-difference oracle on the chain"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.command != "run":
        overrides.append(f"kind={args.command}")
    if args.seed is not None:
        overrides.append(f"seeds=[{args.seed}]")
    if args.out:
        overrides.append(f'out_dir="{args.out}"' if '"' not in args.out else f"out_dir={args.out}")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    try:
        source = getattr(args, "config", None) or {"out_dir": args.out or "runs/gradcheck"}
        cfg = load_config(source, overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        run(cfg, verbose=not args.quiet)
    except RunFailed as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
