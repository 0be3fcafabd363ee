"""Command line entry point: ``radnls {run, sweep, verify-geometry, exponents}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig, tomllib
from .errors import ConfigError, DomainError, UnsupportedError
from .exponents import solve_exponents
from .geometry import ManifoldProfile

log = logging.getLogger("radnls")


def _out_dir(arg, fallback):
    return Path(arg or os.environ.get(harness.ENV_OUTPUT) or fallback)


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    out = _out_dir(args.out, cfg["run.output_dir"])
    res = harness.run(cfg, out)
    if res.exit_code == harness.EXIT_CONFIG:
        print(f"config error: {res.error}", file=sys.stderr)
    elif res.exit_code != harness.EXIT_OK:
        print(f"{harness._STATUS[res.exit_code]}: {res.error or '; '.join(res.violations)}", file=sys.stderr)
    print(str(out / "report.json"))
    return res.exit_code


def cmd_sweep(args) -> int:
    try:
        text = Path(args.config).read_text()
        template = harness.parse_sweep(text)[0]
        out = _out_dir(args.out, template["run.output_dir"])
        code, rows = harness.sweep(text, out, args.workers)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    print(str(out / "sweep.csv"))
    return code


def cmd_verify_geometry(args) -> int:
    grid_spec = None
    if args.grid:
        try:
            grid_spec = tomllib.loads(Path(args.grid).read_text())
            grid_spec = grid_spec.get("grid", grid_spec)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return harness.EXIT_CONFIG
    try:
        code, report = harness.verify_geometry(grid_spec)
    except (ConfigError, DomainError, UnsupportedError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    text = json.dumps(harness._clean(report), indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    for f in report["failures"]:
        print(f"FAIL n={f['n']} k={f['k']} r={f['r'][:5]}{'...' if len(f['r']) > 5 else ''}", file=sys.stderr)
    return code


def cmd_exponents(args) -> int:
    k = args.k
    try:
        prof = ManifoldProfile(args.n, "inf" if str(k).lower() == "inf" else int(k))
        sol = solve_exponents(prof, args.sigma)
    except (DomainError, UnsupportedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    print(json.dumps(harness._clean(sol.to_dict()), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radnls", description="Radial NLS laboratory on rotationally symmetric manifolds")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help=f"output directory (env {harness.ENV_OUTPUT})")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run an (n, k, sigma) sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help=f"output directory (env {harness.ENV_OUTPUT})")
    s.add_argument("--workers", type=int, default=None, help=f"worker processes (env {harness.ENV_WORKERS})")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("verify-geometry", help="positivity certificate over an (n, k, r) grid")
    g.add_argument("--grid", help="TOML file with n, k and r or r_min/r_max/r_count")
    g.add_argument("--out", help="write the JSON report here instead of stdout")
    g.set_defaults(func=cmd_verify_geometry)

    e = sub.add_parser("exponents", help="solve the exponent system")
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--k", default="inf")
    e.add_argument("--sigma", type=float, required=True)
    e.set_defaults(func=cmd_exponents)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
