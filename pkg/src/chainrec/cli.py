"""Command-line entry point: ``chainrec analyze | close | exponents | shadow``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 budget exhausted (including a shadowing search that found no witness).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .cocycle import lyapunov_qr
from .errors import BudgetExceededError, ChainrecError, ConfigError
from .orbit_closing import PseudoOrbit, close_to_periodic, weak_shadow_check
from .report import RunConfig, report_to_text, run_analyze
from .systems import make_system

EXIT_OK = 0


def read_points_csv(path) -> np.ndarray:
    """One point per row, ``d`` columns; a non-numeric first row is taken as a header."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", stage="input") from exc
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        pts = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})", stage="input") from exc
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ConfigError(f"{path}: expected one point per row with a fixed column count", stage="input")
    return pts


def _system(args):
    try:
        params = json.loads(args.params) if args.params else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params is not valid JSON: {exc}", stage="config") from exc
    return make_system(args.system, params)


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {out}: {exc}", stage="output") from exc
    else:
        sys.stdout.write(text)


def _cmd_analyze(args) -> int:
    cfg = RunConfig.load(args.config)
    outputs = dict(cfg.outputs)
    for key in ("out", "dot", "csv"):
        val = getattr(args, key)
        if val:
            outputs["json" if key == "out" else key] = val
    overrides = {"outputs": outputs}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = RunConfig(**{**cfg.__dict__, **overrides})
    res = run_analyze(cfg)
    if not outputs.get("json"):
        sys.stdout.write(report_to_text(res.report))
    else:
        for row in res.report.classes:
            verdict = row["classification"]["verdict"] if row["classification"] else "-"
            flag = " quasi-attractor" if row["quasi_attractor"] else ""
            print(f"C{row['id']}: {row['box_count']} boxes{flag}; {verdict}")
    return EXIT_OK


def _cmd_close(args) -> int:
    s = _system(args)
    pts = read_points_csv(args.input)
    closed = not (pts.shape[0] > 1 and np.array_equal(pts[0], pts[-1]))
    po = PseudoOrbit.from_points(s, pts, closed=closed)
    orb = close_to_periodic(s, po, tol=args.tol)
    doc = orb.to_json()
    doc["pseudo_orbit_epsilon"] = po.jump
    _emit(doc, args.out)
    return EXIT_OK


def _cmd_exponents(args) -> int:
    s = _system(args)
    try:
        start = [float(v) for v in args.start.split(",")]
    except ValueError as exc:
        raise ConfigError("--start must be comma-separated numbers", stage="input") from exc
    spec = lyapunov_qr(s, start, args.n, args.burn_in)
    _emit(spec.to_json(), args.out)
    return EXIT_OK


def _cmd_shadow(args) -> int:
    s = _system(args)
    po = PseudoOrbit.from_points(s, read_points_csv(args.input))
    rep = weak_shadow_check(s, po, args.delta, args.budget)
    doc = rep.to_json()
    doc["pseudo_orbit_epsilon"] = po.jump
    _emit(doc, args.out)
    return EXIT_OK if rep.success else BudgetExceededError.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chainrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the chain-recurrence pipeline from a JSON config")
    a.add_argument("--config", required=True)
    a.add_argument("--out", help="report JSON path (default: stdout)")
    a.add_argument("--dot", help="condensation graph in DOT format")
    a.add_argument("--csv", help="periodic-orbit spectra as CSV")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=_cmd_analyze)

    def system_args(q):
        q.add_argument("--system", required=True)
        q.add_argument("--params", help="system parameters as a JSON object")
        q.add_argument("--out")

    c = sub.add_parser("close", help="close a periodic pseudo-orbit read from CSV")
    system_args(c)
    c.add_argument("--input", required=True, help="CSV, one point per row (one period)")
    c.add_argument("--tol", type=float, default=1e-10)
    c.set_defaults(func=_cmd_close)

    e = sub.add_parser("exponents", help="QR Lyapunov exponents along an orbit")
    system_args(e)
    e.add_argument("--start", required=True, help="comma-separated coordinates")
    e.add_argument("--n", type=int, default=10_000)
    e.add_argument("--burn-in", type=int, default=100)
    e.set_defaults(func=_cmd_exponents)

    w = sub.add_parser("shadow", help="search an orbit segment shadowing a pseudo-orbit")
    system_args(w)
    w.add_argument("--input", required=True)
    w.add_argument("--delta", type=float, required=True)
    w.add_argument("--budget", type=int, default=256)
    w.set_defaults(func=_cmd_shadow)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ChainrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
