"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or solver
error, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import bounds
from .config import ConfigError, load_config
from .demand import PROFILES, TraceError, generate_trace
from .lpcore import IntegralityError
from .selftest import half_corruption, run_selftest
from .sim.scenario import CONTROLLERS, EXTRA_CONTROLLERS, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _err(msg: str) -> None:
    print(f"stochamod: {msg}", file=sys.stderr)


def parse_seeds(text: str) -> List[int]:
    """``"0,3,5"`` or ``"0-19"`` or a mix such as ``"0-4,10"``."""
    seeds: List[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        try:
            seeds.extend(range(int(m[1]), int(m[2]) + 1) if m else [int(part)])
        except ValueError:
            raise UsageError(f"bad seed {part!r}") from None
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def _controller_names(text: str) -> List[str]:
    names = [c.strip() for c in text.split(",") if c.strip()]
    if not names:
        raise UsageError("empty controller list")
    for c in names:
        if c not in CONTROLLERS + EXTRA_CONTROLLERS:
            raise UsageError(f"unknown controller {c!r}; choose from "
                             f"{', '.join(CONTROLLERS + EXTRA_CONTROLLERS)}")
    return names


def _series_path(out: Path) -> Path:
    return out.with_name(out.stem + ".epochs.csv")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    _controller_names(args.controller)
    stats = run_scenario(cfg, args.controller, args.seed)
    out = Path(args.out)
    out.write_text(stats.to_json())
    series = Path(args.series) if args.series else _series_path(out)
    series.write_text(stats.epochs_csv())
    return EXIT_OK


def _one_run(job):
    config_path, controller, seed = job
    stats = run_scenario(load_config(config_path), controller, seed)
    return controller, seed, stats.mean, stats.median, stats.p99, stats.reb_tasks


COMPARE_HEADER = ["controller", "mean", "median", "p99", "reb_tasks", "seeds"]


def cmd_compare(args) -> int:
    load_config(args.config)
    names = _controller_names(args.controllers)
    seeds = parse_seeds(args.seeds)
    jobs = [(args.config, c, s) for c in names for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_one_run, jobs))
    else:
        rows = [_one_run(j) for j in jobs]
    rows.sort(key=lambda r: (names.index(r[0]), r[1]))
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(COMPARE_HEADER)
        for c in names:
            mine = np.array([r[2:] for r in rows if r[0] == c], dtype=float)
            agg = mine.mean(axis=0)
            wr.writerow([c, repr(float(agg[0])), repr(float(agg[1])), repr(float(agg[2])),
                         repr(float(agg[3])), len(mine)])
    return EXIT_OK


def _read_vector(path: str) -> np.ndarray:
    text = Path(path).read_text().replace(",", " ").split()
    return np.array([float(v) for v in text], dtype=float)


def cmd_bounds(args) -> int:
    if not 0 < args.delta < 1:
        raise UsageError("--delta must lie strictly between 0 and 1")
    for name in ("sigma", "var_norm", "b"):
        if getattr(args, name) < 0:
            raise UsageError(f"--{name.replace('_', '-')} must be non-negative")
    if args.K < 1 or args.n < 1 or args.T < 1:
        raise UsageError("--K, --n and --T must be positive")
    if args.m < 2:
        raise UsageError("--m must be at least 2")
    if args.epsilon is not None and args.epsilon <= 0:
        raise UsageError("--epsilon must be positive")
    chi = np.zeros(0)
    if args.chi:
        try:
            chi = _read_vector(args.chi)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read chi vector: {exc}") from None
        if np.any(chi < 0):
            raise UsageError("chi entries must be non-negative")
    budget = bounds.ErrorBudget(
        stochastic_error=bounds.stochastic_error(args.sigma, args.K, args.n, args.T, args.m,
                                                 args.delta),
        model_error=bounds.model_error(chi, args.var_norm),
        sigma2=args.sigma ** 2, b=args.b, K=args.K, n=args.n, T=args.T, m=args.m,
        delta=args.delta)
    report = budget.to_dict()
    if args.epsilon is not None:
        report["epsilon"] = args.epsilon
        report["required_samples"] = bounds.required_samples(args.epsilon, args.sigma, args.n,
                                                             args.T, args.m, args.delta)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    if args.rate < 0 or args.n < 1:
        raise UsageError("--rate must be non-negative and --n positive")
    trace = generate_trace(args.n, args.duration, args.rate, args.profile, args.seed)
    trace.write_csv(args.out)
    return EXIT_OK


def cmd_selftest(args) -> int:
    corrupt = half_corruption if args.inject_fault else None
    results = run_selftest(quick=args.quick, corrupt=corrupt)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("selftest " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stochamod", description="Stochastic MPC for fleet rebalancing.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="run one scenario under one controller")
    s.add_argument("--config", required=True)
    s.add_argument("--controller", required=True)
    s.add_argument("--out", required=True, help="stats JSON path")
    s.add_argument("--series", help="epoch CSV path (default: <out stem>.epochs.csv)")
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="table of wait statistics per controller")
    c.add_argument("--config", required=True)
    c.add_argument("--controllers", required=True, help="comma-separated names")
    c.add_argument("--seeds", default="0", help="e.g. 0-19 or 1,2,5")
    c.add_argument("--out", required=True)
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bounds", help="finite-sample error budget")
    b.add_argument("--sigma", type=float, required=True)
    b.add_argument("--K", type=int, required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--T", type=int, required=True)
    b.add_argument("--m", type=int, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--epsilon", type=float)
    b.add_argument("--chi", help="file of chi entries (whitespace or comma separated)")
    b.add_argument("--var-norm", dest="var_norm", type=float, default=0.0)
    b.add_argument("--b", type=float, default=1.0)
    b.set_defaults(func=cmd_bounds)

    g = sub.add_parser("gen-trace", help="synthetic demand trace")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--duration", type=int, required=True, help="seconds")
    g.add_argument("--rate", type=float, required=True, help="requests per second")
    g.add_argument("--profile", choices=PROFILES, default="constant")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_trace)

    t = sub.add_parser("selftest", help="run the numeric property suite")
    t.add_argument("--quick", action="store_true")
    t.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, TraceError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except IntegralityError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
