"""Command line entry point: ``propel generate|train|evaluate|report|solve``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .exceptions import ConfigError, DataError, PropelError

log = logging.getLogger("propel")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value config file with a [propel] section")
    p.add_argument("--scale", type=float, help="multiplier on instance counts and time budgets")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def _overrides(args, extra: dict | None = None) -> dict:
    out = {"scale": args.scale, "seed": args.seed}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    out.update(extra or {})
    return out


def _config(args, extra: dict | None = None):
    from .pipeline import load_config

    return load_config(args.config, _overrides(args, extra))


def cmd_generate(args) -> int:
    from .pipeline import write_dataset

    extra = {"noise_absolute": True if args.noise_absolute else None, "demand_window": args.demand_window,
             "extra_test": args.extra_test}
    cfg = _config(args, extra)
    names = write_dataset(cfg, args.out, force=args.force)
    print(json.dumps({k: len(v) for k, v in names.items()}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    from .pipeline import train

    extra = {"tau": args.tau, "rc_sign": -1 if args.flip_rc else None,
             "weights_by_value": True if args.weights_by_value else None,
             "shared_model": True if args.shared_model else None,
             "reward_mode": args.reward, "normalize_reward": False if args.raw_reward else None}
    cfg = _config(args, extra)
    info = train(cfg, args.data, args.out)
    print(json.dumps(info, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate

    extra = {"methods": tuple(m.strip() for m in args.methods.split(",")) if args.methods else None,
             "tau": args.tau, "workers": args.workers}
    cfg = _config(args, extra)
    rows = evaluate(cfg, args.data, args.models, args.out, args.split)
    print(f"wrote {len(rows)} result rows to {Path(args.out) / 'results.csv'}")
    return 0


def cmd_report(args) -> int:
    from .pipeline import report

    out = report(args.results, args.out)
    for method, metric, mx, avg, n in out["summary"]:
        print(f"{method:7s} {metric:6s} max={100 * mx:7.2f}% avg={100 * avg:7.2f}% (n={n})")
    return 0


def _read_model(path: str):
    from .mip import loads
    from .mps import parse_mps
    from .scp import ScpInstance, build_mip

    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DataError(f"{path} not found") from None
    if path.lower().endswith(".mps"):
        return parse_mps(text)
    try:
        head = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not JSON ({exc})") from None
    if isinstance(head, dict) and str(head.get("format", "")).startswith("propel-scp"):
        return build_mip(ScpInstance.loads(text))
    return loads(text)


def cmd_solve(args) -> int:
    from .solve import SolveLimits, external_solve, format_solution, solve_mip

    mip = _read_model(args.instance)
    lim = SolveLimits(args.time_limit if args.time_limit else math.inf, args.rel_gap, args.node_limit,
                      args.deterministic)
    if args.solver == "builtin":
        res = solve_mip(mip, lim)
    elif args.solver.startswith("external:"):
        res = external_solve(mip, args.solver[len("external:"):], lim)
    else:
        raise ConfigError("--solver must be 'builtin' or 'external:<command template>'")
    text = format_solution(mip, res)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("status=%s objective=%s nodes=%d", res.status, res.best_objective, res.node_count)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="propel", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic instances and a split manifest")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.add_argument("--noise-absolute", action="store_true", help="additive instead of relative uniform noise")
    p.add_argument("--demand-window", type=int, help="periods pooled per demand row")
    p.add_argument("--extra-test", type=int, help="test instances added on top of the scaled count")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="label, fit fix models and the Q-network")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--flip-rc", action="store_true", help="negate reduced costs before scoring")
    p.add_argument("--weights-by-value", action="store_true")
    p.add_argument("--shared-model", action="store_true",
                   help="one classifier over features plus a variable-role one-hot")
    p.add_argument("--reward", choices=("objective", "gap"))
    p.add_argument("--raw-reward", action="store_true", help="do not divide rewards by |LP*|")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="benchmark OPT, PROPb, PROP and PROPEL on the test split")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models")
    p.add_argument("--out", required=True)
    p.add_argument("--methods", help="comma-separated subset of OPT,PROPb,PROP,PROPEL")
    p.add_argument("--split", default="test")
    p.add_argument("--tau", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarise a results directory")
    p.add_argument("--results", required=True, help="directory holding results.csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("solve", help="solve one model file (repo JSON, SCP JSON or MPS)")
    p.add_argument("instance")
    p.add_argument("--solver", default="builtin", help="builtin or external:<template with {input} {output} {time_limit}>")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--rel-gap", type=float, default=0.01)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--deterministic", action="store_true", help="count time in branch-and-bound nodes")
    p.add_argument("--output", help="solution file (default: stdout)")
    p.set_defaults(func=cmd_solve)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PropelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
