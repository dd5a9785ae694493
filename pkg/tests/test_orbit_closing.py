from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from chainrec.errors import ConfigError, DegenerateClosingError, DomainError
from chainrec.orbit_closing import (
    Cube,
    PseudoOrbit,
    close_to_periodic,
    generate_pseudo_orbit,
    perturb_points,
    select_closing_pair,
    weak_shadow_check,
    winding_vector,
)
from chainrec.phase_space import hausdorff_distance
from chainrec.systems import evaluate, make_system

from conftest import brute_hausdorff

EPS2 = 0.04  # (1.04)^9 <= 3/2
CAT = make_system("cat_map", {})
HALVING = make_system("user_defined", {"map": ["0.5*x"], "ambient": {"lower": [0], "upper": [1]}})


def scan_triple(returns, t):
    """Independent check of the closing-pair conditions by a direct loop."""
    pts = dict(returns)
    inside = lambda p, c, r: max(abs(a - b) for a, b in zip(p, c)) <= r
    ok = t.y_index < t.x_index
    ok &= np.allclose(pts[t.x_index], t.x) and np.allclose(pts[t.y_index], t.y)
    ok &= inside(t.x, t.cube.center, t.cube.radius) and inside(t.y, t.cube.center, t.cube.radius)
    big = t.cube.radius * (1 + t.eps_cube)
    for k, p in returns:
        if t.y_index < k < t.x_index and inside(p, t.cube.center, big):
            ok = False
    return ok


def exact_cat_orbit(a, b, q, limit=60):
    cat = CAT
    x0 = [Fraction(a, q), Fraction(b, q)]
    orb = [x0]
    while True:
        nxt = evaluate(cat, orb[-1], 1)
        if nxt == x0:
            return orb
        orb.append(nxt)
        if len(orb) > limit:
            return None


# -- pseudo-orbits ---------------------------------------------------------------


def test_zero_eps_is_exact_orbit(cat):
    po = generate_pseudo_orbit(cat, (0.1, 0.3), 7, 0.0, seed=1)
    assert po.jump == 0.0
    x = np.array([0.1, 0.3])
    for p in po.points[1:]:
        x = cat.step(x)
        assert np.array_equal(p, x)


def test_cat_fixed_point_pseudo_orbit(cat):
    po = generate_pseudo_orbit(cat, (0.0, 0.0), 5, 0.0)
    assert np.array_equal(po.points, np.zeros((6, 2)))


def test_seed_determinism(cat, morse):
    for s in (cat, morse):
        a = generate_pseudo_orbit(s, (0.2, 0.7), 50, 1e-2, seed=42)
        b = generate_pseudo_orbit(s, (0.2, 0.7), 50, 1e-2, seed=42)
        c = generate_pseudo_orbit(s, (0.2, 0.7), 50, 1e-2, seed=43)
        assert a.points.tobytes() == b.points.tobytes()
        assert a.points.tobytes() != c.points.tobytes()


@given(st.floats(0, 0.1), st.integers(0, 2**31), st.integers(1, 60))
def test_jump_bound(eps, seed, n):
    po = generate_pseudo_orbit(CAT, (0.3, 0.9), n, eps, seed)
    assert po.jump <= eps + 1e-12
    assert generate_pseudo_orbit(HALVING, (0.9,), n, eps, seed).jump <= eps + 1e-12


def test_pseudo_orbit_validation(cat):
    with pytest.raises(ConfigError):
        generate_pseudo_orbit(cat, (0, 0), 0, 0.1)
    with pytest.raises(ConfigError):
        generate_pseudo_orbit(cat, (0, 0), 3, -0.1)
    with pytest.raises(DomainError):
        PseudoOrbit.from_points(cat, [[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    po = PseudoOrbit.from_points(cat, [[0.2, 0.4], [0.8, 0.6]], closed=True)
    assert po.periodic and po.period == 2 and po.jump < 1e-12


def test_winding_rejects_large_jumps(ident2):
    po = PseudoOrbit.from_points(ident2, [[0.1, 0.1], [0.5, 0.1], [0.1, 0.1]])
    with pytest.raises(ConfigError):
        winding_vector(ident2, po)


# -- closing pair selection ------------------------------------------------------


def test_closing_pair_vacuous():
    c0 = Cube((0.5, 0.5), 0.1)
    returns = [(0, (0.48, 0.5)), (5, (0.52, 0.5)), (3, (0.9, 0.9))]
    t = select_closing_pair(returns, c0, EPS2)
    assert (t.y_index, t.x_index, t.cube, t.steps, t.depth) == (0, 5, c0, 0, 0)
    assert scan_triple(returns, t)


def test_closing_pair_one_step():
    c0 = Cube((0.5, 0.5), 0.1)
    returns = [(0, (0.48, 0.5)), (2, (0.55, 0.5)), (4, (0.52, 0.5))]
    t = select_closing_pair(returns, c0, EPS2)
    assert t.steps == 1 and t.y_index == 2 and t.x_index == 4
    assert t.cube.radius == pytest.approx(0.1 * (1 + EPS2))
    assert scan_triple(returns, t)


def test_closing_pair_eps_bound():
    with pytest.raises(ConfigError):
        select_closing_pair([(0, (0.5, 0.5)), (1, (0.5, 0.5))], Cube((0.5, 0.5), 0.1), 0.05)


@st.composite
def return_sets(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    m = draw(st.integers(0, 48))
    r = 0.1
    c0 = Cube((0.5, 0.5), r)
    spread = draw(st.sampled_from([0.12, 0.15, 0.3]))
    mids = 0.5 + rng.uniform(-spread, spread, size=(m, 2))
    ends = 0.5 + rng.uniform(-r, r, size=(2, 2))
    pts = np.vstack([ends[:1], mids, ends[1:]])
    idx = np.sort(rng.choice(1000, size=m + 2, replace=False))
    return [(int(i), tuple(p)) for i, p in zip(idx, pts)], c0


@given(return_sets())
def test_closing_pair_property(data):
    returns, c0 = data
    t = select_closing_pair(returns, c0, EPS2)
    assert scan_triple(returns, t)
    assert t.depth <= len({p for _, p in returns})
    radii = [c.radius for c in t.chain]
    assert radii[0] == pytest.approx(2 * c0.radius)
    for a, b, ca, cb in zip(radii, radii[1:], t.chain, t.chain[1:]):
        assert b == pytest.approx(a / 2)
        assert ca.contains_cube(cb) and ca != cb


def test_closing_from_cat_orbit_returns(cat):
    x = np.array([0.123, 0.456])
    pts = [x]
    for _ in range(3000):
        pts.append(cat.step(pts[-1]))
    c0 = Cube((0.5, 0.5), 0.05)
    rets = [(i, tuple(p)) for i, p in enumerate(pts) if c0.scaled(2).contains(p)[0]]
    inner = [i for i, p in rets if c0.contains(p)[0]]
    t = select_closing_pair(rets, c0, EPS2, y_index=inner[0], x_index=inner[-1])
    assert scan_triple(rets, t)


# -- periodic closing ------------------------------------------------------------


def test_close_exact_period_two(cat):
    po = PseudoOrbit.from_points(cat, [[0.2, 0.4], [0.8, 0.6]], closed=True)
    orb = close_to_periodic(cat, po)
    assert orb.period == 2 and orb.residual == 0.0
    assert {tuple(p) for p in orb.points.tolist()} == {(0.2, 0.4), (0.8, 0.6)}
    assert orb.exact_points == ((Fraction(1, 5), Fraction(2, 5)), (Fraction(4, 5), Fraction(3, 5)))


def test_close_perturbed_period_two(cat):
    exact = np.array([[0.2, 0.4], [0.8, 0.6]])
    for seed in range(20):
        pts = perturb_points(cat.ambient, exact, 1e-3, seed)
        orb = close_to_periodic(cat, PseudoOrbit.from_points(cat, pts, closed=True))
        assert brute_hausdorff(orb.points, exact) < 1e-12
        assert orb.hausdorff_to_pseudo <= 5e-3


def test_close_identity_degenerate(ident2):
    po = PseudoOrbit.from_points(ident2, [[0.3, 0.3], [0.31, 0.3]], closed=True)
    with pytest.raises(DegenerateClosingError):
        close_to_periodic(ident2, po)


def test_close_requires_periodic(cat):
    with pytest.raises(ConfigError):
        close_to_periodic(cat, generate_pseudo_orbit(cat, (0.1, 0.2), 3, 0.0))


def test_close_reports_minimal_period(cat):
    po = PseudoOrbit.from_points(cat, [[0.2, 0.4], [0.8, 0.6]] * 2, closed=True)
    assert close_to_periodic(cat, po).period == 2


def test_close_nonlinear_fixed_points(morse):
    # only the sink tolerates a kick: time-one expansion elsewhere is about e^40
    pts = perturb_points(morse.ambient, [(0.5, 0.5)], 1e-4, 3)
    for start, want in [(pts, (0.5, 0.5)), ([(0.0, 0.5)], (0.0, 0.5)), ([(0.0, 0.0)], (0.0, 0.0))]:
        orb = close_to_periodic(morse, PseudoOrbit.from_points(morse, start, closed=True))
        assert orb.period == 1 and brute_hausdorff(orb.points, [want]) < 1e-9


@given(st.integers(2, 9).flatmap(lambda q: st.tuples(st.integers(0, q - 1), st.integers(0, q - 1), st.just(q))),
       st.integers(0, 1000))
def test_closing_consistency(abq, seed):
    cat = CAT
    orb = exact_cat_orbit(*abq)
    assume(orb is not None)
    exact = np.array([[float(c) for c in p] for p in orb])
    # exact orbit is a fixed point of the pipeline
    got = close_to_periodic(cat, PseudoOrbit.from_points(cat, exact, closed=True))
    assert got.period == len(orb) and got.residual <= 1e-10
    assert brute_hausdorff(got.points, exact) < 1e-12
    # perturbed copy closes back onto the orbit with consecutive points linked
    noisy = perturb_points(cat.ambient, exact, 1e-4, seed)
    got = close_to_periodic(cat, PseudoOrbit.from_points(cat, noisy, closed=True))
    assert got.period == len(orb)
    nxt = np.roll(got.points, -1, axis=0)
    assert np.all(cat.ambient.distance(cat.step(got.points), nxt) < 1e-10)
    assert brute_hausdorff(got.points, exact) < 1e-9


# -- weak shadowing --------------------------------------------------------------


def test_shadow_exact_segment(cat, morse):
    for s in (cat, morse):
        po = generate_pseudo_orbit(s, (0.31, 0.17), 30, 0.0)
        rep = weak_shadow_check(s, po, 1e-9)
        assert rep.success and rep.hausdorff == 0.0 and rep.method == "orbit_of_start"


def test_shadow_cat_pseudo_orbits(cat):
    rng = np.random.default_rng(0)
    for seed in range(25):
        po = generate_pseudo_orbit(cat, rng.random(2), 100, 1e-3, seed)
        rep = weak_shadow_check(cat, po, 1e-2)
        assert rep.success
        assert rep.defect <= 1e-10
        assert abs(hausdorff_distance(rep.witness, po.points, cat.ambient) - rep.hausdorff) <= 1e-12
        assert abs(brute_hausdorff(rep.witness, po.points) - rep.hausdorff) <= 1e-12


def test_shadow_identity_drift(ident2):
    steps = 30
    pts = np.array([[0.1 + 0.01 * i, 0.5] for i in range(steps + 1)])
    po = PseudoOrbit.from_points(ident2, pts)
    assert po.jump <= 1e-2 + 1e-12
    rep = weak_shadow_check(ident2, po, 1e-2, search_budget=64)
    assert not rep.success
    assert rep.message == "not found within budget"
    assert rep.hausdorff >= 0.15 - 1e-12
    assert rep.candidates_tried <= 64


def test_shadow_rejects_bad_delta(cat):
    with pytest.raises(ConfigError):
        weak_shadow_check(cat, generate_pseudo_orbit(cat, (0, 0), 2, 0.0), 0.0)
