"""Compare the compiled kernels with the pure-Python fallback.

Times edge enumeration (whole transition-graph build) and Tarjan SCC on the
cat map and the Morse gradient map over a range of grid depths, checks that
both backends return identical arrays, and prints one row per case.

    python benchmarks/bench_kernels.py [--depths 6 7 8] [--repeat 3] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from chainrec import kernels
from chainrec.chain_graph import build_transition_graph
from chainrec.phase_space import BoxGrid
from chainrec.systems import make_system


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_case(system, depth, repeat):
    sys_ = make_system(system, {})
    grid = BoxGrid(sys_.ambient, depth)
    eps = grid.box_diameter
    rows = []
    graphs = {}
    for name in sorted(kernels.BACKENDS):
        t, g = best_of(lambda: build_transition_graph(sys_, grid, eps, backend=name), repeat)
        graphs[name] = g
        rows.append(("graph", name, t, g.n_edges))
    ref = next(iter(graphs.values()))
    for g in graphs.values():
        if not (np.array_equal(g.indptr, ref.indptr) and np.array_equal(g.indices, ref.indices)):
            raise SystemExit(f"backends disagree on the {system} graph at depth {depth}")
    labels = {}
    for name in sorted(kernels.BACKENDS):
        t, lab = best_of(lambda: kernels.tarjan_scc(ref.indptr, ref.indices, backend=name), repeat)
        labels[name] = lab
        rows.append(("scc", name, t, int(lab[1])))
    first = next(iter(labels.values()))
    for lab in labels.values():
        if not (np.array_equal(lab[0], first[0]) and lab[1] == first[1]):
            raise SystemExit(f"backends disagree on the {system} SCCs at depth {depth}")
    return [{"system": system, "depth": depth, "boxes": grid.n_boxes, "stage": s, "backend": b,
             "seconds": round(t, 6), "size": n} for s, b, t, n in rows]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--depths", type=int, nargs="+", default=[6, 7, 8])
    p.add_argument("--systems", nargs="+", default=["cat_map", "morse_gradient_t1"])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", help="write the raw rows to this file")
    args = p.parse_args(argv)

    if len(kernels.BACKENDS) < 2:
        print("compiled extension not built: only the python backend is timed")
    results = []
    for system in args.systems:
        for depth in args.depths:
            results.extend(bench_case(system, depth, args.repeat))

    print(f"{'system':<20}{'depth':>6}{'boxes':>9}  {'stage':<6}{'backend':<10}{'seconds':>10}{'speedup':>9}")
    base = {(r["system"], r["depth"], r["stage"]): r["seconds"] for r in results if r["backend"] == "python"}
    for r in results:
        ref = base[(r["system"], r["depth"], r["stage"])]
        speed = ref / r["seconds"] if r["seconds"] > 0 else float("inf")
        print(f"{r['system']:<20}{r['depth']:>6}{r['boxes']:>9}  {r['stage']:<6}{r['backend']:<10}"
              f"{r['seconds']:>10.4f}{speed:>8.1f}x")
    if args.json:
        meta = {"python": platform.python_version(), "machine": platform.machine(), "repeat": args.repeat}
        with open(args.json, "w") as fh:
            json.dump({"meta": meta, "rows": results}, fh, indent=2)


if __name__ == "__main__":
    main()
