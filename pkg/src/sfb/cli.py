"""Command line entry point ``sfb``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bounds import RateConstants, bound_curve_csv
from .core import ConfigError, ContractError
from .harness import (ExperimentConfig, build, compare_to_bound, fit_rate, log_grid,
                      run_experiment)
from .solver import check_assumptions


def _load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_json(fh.read())


def _window(text: str):
    try:
        a, b = (int(float(x)) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like a:b, got {text!r}") from None
    if not 1 <= a < b:
        raise argparse.ArgumentTypeError("window needs 1 <= a < b")
    return a, b


def _range(text: str):
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like lo:hi, got {text!r}") from None
    return lo, hi


def parse_grid(text: str) -> np.ndarray:
    """``a:b:k`` gives ``k`` log-spaced integers in ``[a, b]``; otherwise a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("grid spec must be a:b:k or a comma separated list")
        a, b, k = (int(float(p)) for p in parts)
        if not 1 <= a <= b or k < 1:
            raise ValueError("grid spec needs 1 <= a <= b and k >= 1")
        return np.unique(np.clip(log_grid(b - a + 1, k) + a - 1, a, b))
    return np.array(sorted({int(float(x)) for x in text.split(",") if x.strip()}), dtype=np.int64)


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    report = run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "rates.csv").write_text(report.to_csv())
    if report.merit_of_mean is not None:
        (out / "merit.csv").write_text(report.merit_csv())
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out}")
    return 0


def cmd_rates(args) -> int:
    cfg = _load_config(args.config)
    report = run_experiment(cfg)
    which = "merit_of_mean" if cfg.mode == "ergodic_vi" and report.mean_sq_dist is None \
        else "mean_sq_dist"
    slope, hw = fit_rate(report, args.window, which)
    result = {"slope": slope, "half_width": hw, "window": list(args.window)}
    ok = True
    if args.expect is not None:
        lo, hi = args.expect
        result["expected"] = [lo, hi]
        result["slope_ok"] = lo <= slope <= hi
        ok &= result["slope_ok"]
    if report.rate_constants is not None and report.s_n0 is not None:
        verdict = compare_to_bound(report, report.rate_constants)
        result["bound_pass_fraction"] = verdict.pass_fraction
        result["bound_ok"] = verdict.passed
        ok &= verdict.passed
    result["pass"] = bool(ok)
    print(json.dumps(result, indent=1))
    return 0 if ok else 1


def cmd_merit(args) -> int:
    cfg = _load_config(args.config)
    if cfg.mode != "ergodic_vi":
        raise ConfigError("mode", "merit needs mode 'ergodic_vi'")
    report = run_experiment(cfg)
    text = report.merit_csv()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "merit.csv").write_text(text)
        lines = ["n,bound"] + [f"{int(n)},{repr(float(b))}"
                               for n, b in zip(report.grid, report.ergodic_bound)
                               if np.isfinite(b)]
        (out / "bound.csv").write_text("\n".join(lines) + "\n")
    else:
        sys.stdout.write(text)
    return 0


def cmd_bound(args) -> int:
    with open(args.constants) as fh:
        data = json.load(fh)
    if "s_n0" not in data:
        raise ConfigError("constants", "missing s_n0")
    k = RateConstants.from_dict(data)
    grid = parse_grid(args.grid)
    sys.stdout.write(bound_curve_csv(k, float(data["s_n0"]), grid))
    return 0


def cmd_check(args) -> int:
    cfg = _load_config(args.config)
    st = build(cfg)
    rep = check_assumptions(st.problem, st.oracle, st.schedule, float(cfg.epsilon),
                            args.horizon or cfg.n_steps)
    out = rep.to_dict()
    if not args.full:
        out.pop("chi_sq_seq")
    print(json.dumps(out, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfb", description="Stochastic forward-backward splitting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run an experiment and write report files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("rates", help="fit the log-log rate; exit 1 on failure")
    p.add_argument("--config", required=True)
    p.add_argument("--window", required=True, type=_window)
    p.add_argument("--expect", type=_range, help="accepted slope range lo:hi")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("merit", help="merit and bound CSV for ergodic_vi runs")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_merit)

    p = sub.add_parser("bound", help="closed-form bound curve CSV")
    p.add_argument("--constants", required=True)
    p.add_argument("--grid", required=True)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("check", help="assumption report as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--full", action="store_true", help="include the chi^2 sequence")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
