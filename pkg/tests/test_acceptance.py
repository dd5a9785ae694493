"""The ten acceptance criteria, each at its stated tolerance.

Every test records one line in ``ACCEPTANCE``; the ``conftest`` terminal-summary
hook prints them as a pass/fail table at the end of the run.
"""

import contextlib
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from chainrec.chain_graph import (
    TransitionGraph,
    build_filtration,
    build_transition_graph,
    chain_recurrence_classes,
    conley_function,
    is_attracting,
    quasi_attractors,
)
from chainrec.cli import main
from chainrec.cocycle import (
    PeriodicCocycle,
    check_contraction_at_period,
    check_domination,
    exponents_periodic,
    lyapunov_qr,
    pliss_points,
    split_from_eigen,
)
from chainrec.orbit_closing import (
    Cube,
    PseudoOrbit,
    close_to_periodic,
    generate_pseudo_orbit,
    perturb_points,
    select_closing_pair,
    weak_shadow_check,
)
from chainrec.phase_space import BoxGrid, hausdorff_distance
from chainrec.systems import make_system

from conftest import ACCEPTANCE, brute_hausdorff, brute_sccs
from test_orbit_closing import scan_triple

LAM = math.log((3 + math.sqrt(5)) / 2)
RUNS = 100


@contextlib.contextmanager
def criterion(number, text):
    try:
        yield
    except BaseException:
        ACCEPTANCE[number] = (False, text)
        raise
    ACCEPTANCE[number] = (True, text)


def test_c01_cat_single_class():
    with criterion(1, "cat map depth 8: one recurrent class over all 65536 boxes in < 30 s"):
        cat = make_system("cat_map", {})
        t0 = time.perf_counter()
        grid = BoxGrid(cat.ambient, 8)
        g = build_transition_graph(cat, grid, grid.box_diameter)
        classes, order = chain_recurrence_classes(g)
        elapsed = time.perf_counter() - t0
        assert grid.n_boxes == 65536
        assert len(order.recurrent_ids) == 1
        assert len(classes[order.recurrent_ids[0]].boxes) == grid.n_boxes
        assert elapsed < 30


def test_c02_morse_decomposition():
    with criterion(2, "Morse depth 7: 4 classes, quasi-attractor at (1/2,1/2), filtration 4, exact Conley order"):
        s = make_system("morse_gradient_t1", {})
        grid = BoxGrid(s.ambient, 7)
        g = build_transition_graph(s, grid, grid.box_diameter)
        classes, order = chain_recurrence_classes(g)
        rec = order.recurrent_ids
        assert len(rec) == 4
        cls = {p: order.class_of(int(grid.box_ids_of([p])[0])) for p in [(0, 0), (0, 0.5), (0.5, 0), (0.5, 0.5)]}
        assert sorted(cls.values()) == sorted(rec)
        assert [q.class_id for q in quasi_attractors(order)] == [cls[(0.5, 0.5)]]
        f = build_filtration(order, rec)
        assert len(f) == 4
        masks = [lv.mask() for lv in f.levels]
        for a, b in zip(masks, masks[1:]):
            assert is_attracting(g, a) and np.all(b <= a) and np.any(a & ~b)
        h = conley_function(order).class_values
        assert all(isinstance(v, Fraction) for v in h)
        top, low = h[cls[(0, 0)]], h[cls[(0.5, 0.5)]]
        for saddle in ((0, 0.5), (0.5, 0)):
            assert top > h[cls[saddle]] > low


def test_c03_cat_spectrum():
    with criterion(3, "cat spectrum: exact +-0.9624236501 to 1e-9, QR to 1e-3 at n = 1e4"):
        c = PeriodicCocycle.from_matrices([[[2, 1], [1, 1]]])
        exact = exponents_periodic(c).exponents
        assert abs(exact[0] + 0.9624236501) < 1e-9 and abs(exact[1] - 0.9624236501) < 1e-9
        assert np.allclose(exact, (-LAM, LAM), atol=1e-12, rtol=0)
        qr = lyapunov_qr(make_system("cat_map", {}), (0.3141, 0.2718), 10**4).exponents
        assert np.allclose(qr, (-LAM, LAM), atol=1e-3, rtol=0)


def test_c04_periodic_closing():
    with criterion(4, "closing: (1/5,2/5) period-2 orbit from eps = 1e-3 pseudo-orbit, residual <= 1e-10, d_H <= 5e-3"):
        cat = make_system("cat_map", {})
        exact = np.array([[0.2, 0.4], [0.8, 0.6]])
        noisy = perturb_points(cat.ambient, exact, 1e-3, seed=2024)
        po = PseudoOrbit.from_points(cat, noisy, closed=True)
        orb = close_to_periodic(cat, po)
        assert orb.period == 2 and orb.residual <= 1e-10
        assert brute_hausdorff(orb.points, exact) < 1e-12
        assert orb.hausdorff_to_pseudo <= 5e-3
        assert brute_hausdorff(noisy, orb.points) <= 5e-3


def test_c05_weak_shadowing():
    with criterion(5, "shadowing: 100/100 cat pseudo-orbits (n=100, eps=1e-3) within d_H < 1e-2; identity drift fails"):
        cat = make_system("cat_map", {})
        rng = np.random.default_rng(5)
        ok = 0
        for seed in range(RUNS):
            po = generate_pseudo_orbit(cat, rng.random(2), 100, 1e-3, seed)
            assert po.jump <= 1e-3
            rep = weak_shadow_check(cat, po, 1e-2)
            dh = hausdorff_distance(rep.witness, po.points, cat.ambient)
            ok += rep.success and dh < 1e-2 and abs(dh - rep.hausdorff) <= 1e-12
        assert ok == RUNS
        ident = make_system("identity", {"d": 2})
        pts = np.array([[0.1 + 0.01 * i, 0.5] for i in range(31)])
        rep = weak_shadow_check(ident, PseudoOrbit.from_points(ident, pts), 1e-2)
        assert not rep.success and rep.message == "not found within budget"


def test_c06_closing_pairs():
    with criterion(6, "closing pairs: 100 random return sets (<= 50 returns, d = 2), zero violations"):
        eps = 0.04
        assert (1 + eps) ** 9 <= 1.5
        violations = 0
        for seed in range(RUNS):
            rng = np.random.default_rng(seed)
            m = int(rng.integers(0, 49))
            c0 = Cube((0.5, 0.5), 0.1)
            mids = 0.5 + rng.uniform(-0.2, 0.2, size=(m, 2))
            ends = 0.5 + rng.uniform(-0.1, 0.1, size=(2, 2))
            pts = np.vstack([ends[:1], mids, ends[1:]])
            idx = np.sort(rng.choice(500, size=m + 2, replace=False))
            returns = [(int(i), tuple(p)) for i, p in zip(idx, pts)]
            t = select_closing_pair(returns, c0, eps)
            violations += not scan_triple(returns, t)
        assert violations == 0


def test_c07_scc_oracle():
    with criterion(7, "SCC oracle: 200 random digraphs (<= 64 nodes) match transitive-closure SCCs"):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 65))
            m = int(rng.integers(0, 3 * n + 1))
            edges = rng.integers(0, n, size=(m, 2)).tolist()
            classes, _ = chain_recurrence_classes(TransitionGraph.from_edges(n, edges))
            want, _ = brute_sccs(n, edges)
            assert {frozenset(c.boxes) for c in classes} == want


def test_c08_truth_table():
    with criterion(8, "truth table: cat 1-dominated, (1/2)I fails N=1 passes N=2, Pliss {0,1}"):
        cat = PeriodicCocycle.from_matrices([[[2, 1], [1, 1]]])
        dom = check_domination(cat, split_from_eigen(cat, 1), 1)
        assert dom.holds and dom.margin == pytest.approx(math.log(math.exp(-1) / math.exp(-2 * LAM)), abs=1e-12)
        assert dom.margin > 0
        half = PeriodicCocycle.from_matrices([0.5 * np.eye(2)] * 8)
        assert not check_contraction_at_period(half, 1).holds
        assert check_contraction_at_period(half, 2).holds
        pl = pliss_points(PeriodicCocycle.from_matrices([v * np.eye(2) for v in (1 / 8, 1 / 8, 1 / 8, 2)]), 1)
        assert pl.indices == (0, 1) and pl.proportion == 0.5


def _random_cocycle(rng):
    d = int(rng.integers(2, 4))
    tau = int(rng.integers(1, 6))
    while True:
        mats = rng.uniform(-2, 2, size=(tau, d, d))
        if all(np.linalg.cond(a) < 1e3 for a in mats):
            return PeriodicCocycle.from_matrices(mats)


def _random_graph(rng):
    n = int(rng.integers(1, 25))
    return n, rng.integers(0, n, size=(int(rng.integers(0, 3 * n + 1)), 2)).tolist()


def test_c09_property_suites():
    with criterion(9, "property suites: six properties x 100 random instances, zero failures"):
        rng = np.random.default_rng(9)
        counts = dict.fromkeys(["sum", "cyclic", "inverse", "eps", "filtration", "conley"], 0)
        for _ in range(RUNS):
            c = _random_cocycle(rng)
            lam = np.array(exponents_periodic(c).exponents)
            logdet = sum(math.log(abs(np.linalg.det(c.matrix(i)))) for i in range(c.period)) / c.period
            counts["sum"] += abs(lam.sum() - logdet) <= 1e-10
            rot = np.array(exponents_periodic(c.rotate(int(rng.integers(1, 7)))).exponents)
            counts["cyclic"] += np.allclose(rot, lam, atol=1e-10, rtol=0)
            inv = np.array(exponents_periodic(c.inverse()).exponents)
            counts["inverse"] += np.allclose(inv, -lam[::-1], atol=1e-10, rtol=0)

        morse = make_system("morse_gradient_t1", {})
        grid = BoxGrid(morse.ambient, 4)
        for _ in range(RUNS):
            e1, e2 = np.sort(rng.uniform(0, 0.2, size=2))
            r = []
            for e in (e1, e2):
                classes, _ = chain_recurrence_classes(build_transition_graph(morse, grid, e))
                r.append({b for k in classes if k.recurrent for b in k.boxes})
            counts["eps"] += r[0] <= r[1]

        for _ in range(RUNS):
            n, edges = _random_graph(rng)
            g = TransitionGraph.from_edges(n, edges)
            classes, order = chain_recurrence_classes(g)
            rec = order.recurrent_ids
            sel = [k for k in rec if rng.random() < 0.7]
            f = build_filtration(order, sel)
            masks = [lv.mask() for lv in f.levels]
            counts["filtration"] += all(is_attracting(g, m) for m in masks) and all(
                np.all(b <= a) for a, b in zip(masks, masks[1:]))
            tab = conley_function(order).table()
            counts["conley"] += all(
                tab[u] > tab[v] if order.class_of(u) != order.class_of(v) else tab[u] == tab[v]
                for u, v in g.edge_set())
        assert counts == dict.fromkeys(counts, RUNS), counts


def test_c10_determinism(tmp_path, capsys):
    with criterion(10, "determinism: two analyze runs, same config and seed, byte-identical JSON without timing"):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"system": {"name": "morse_gradient_t1", "params": {}}, "depth": 6}))
        texts = []
        for i in range(2):
            out = tmp_path / f"r{i}.json"
            assert main(["analyze", "--config", str(cfg), "--out", str(out), "--seed", "11"]) == 0
            doc = json.loads(out.read_text())
            assert doc["timing"]
            doc.pop("timing")
            texts.append(json.dumps(doc, sort_keys=True, indent=2).encode())
        capsys.readouterr()
        assert texts[0] == texts[1]
