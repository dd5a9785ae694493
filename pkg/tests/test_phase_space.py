import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chainrec.errors import ConfigError, DomainError
from chainrec.phase_space import Ambient, BoxGrid, BoxSet, hausdorff_distance, wrap01

from conftest import brute_hausdorff

T2 = Ambient.torus(2)
unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
point_sets = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(2)), elements=unit)


def test_subdivide_counts():
    g = BoxGrid(T2, 0)
    assert g.n_boxes == 1
    assert g.subdivide().n_boxes == 4
    # the count formula 2^(d*depth): 2^15 at depth 5, 2^18 = 262144 at depth 6
    assert BoxGrid(Ambient.torus(3), 5).n_boxes == 2 ** 15
    assert BoxGrid(Ambient.torus(3), 6).n_boxes == 262144


def test_children_index_doubling():
    g = BoxGrid(T2, 3)
    assert sorted(g.children((5, 2))) == [(10, 4), (10, 5), (11, 4), (11, 5)]


def test_children_tile_parent():
    g = BoxGrid(T2, 3)
    fine = g.subdivide()
    lo, hi = g.bounds(g.box_id((5, 2)))
    kids = fine.box_id(np.array(g.children((5, 2))))
    klo, khi = fine.bounds(kids)
    assert np.allclose(klo.min(0), lo) and np.allclose(khi.max(0), hi)
    assert np.isclose(np.prod(khi - klo, axis=1).sum(), np.prod(hi - lo))
    assert np.all(fine.parent_ids(kids, g) == g.box_id((5, 2)))


def test_depth_ceiling():
    with pytest.raises(ConfigError, match="limit 4"):
        BoxGrid(T2, 4).subdivide(max_depth=4)
    with pytest.raises(ConfigError):
        BoxGrid(T2, 31)


def test_box_of_examples():
    g = BoxGrid(T2, 2)
    assert tuple(g.box_of([0.3, 0.7])) == (1, 2)
    assert tuple(BoxGrid(T2, 7).box_of([0.0, 0.0])) == (0, 0)
    assert tuple(g.box_of([0.25, 0.25])) == (1, 1)


def test_box_of_wraps_on_torus():
    g = BoxGrid(T2, 2)
    assert tuple(g.box_of([1.3, -0.3])) == (1, 2)


def test_box_ambient_bounds():
    amb = Ambient.box([-1.0, 0.0], [1.0, 1.0])
    g = BoxGrid(amb, 2)
    assert g.shape == (8, 4)
    assert tuple(g.box_of([1.0, 1.0])) == (7, 3)
    with pytest.raises(DomainError):
        g.box_of([1.5, 0.5])


def test_non_integer_extent_rejected():
    with pytest.raises(ConfigError):
        Ambient.box([0.0], [1.5])


def test_hausdorff_examples():
    assert hausdorff_distance([[0.5, 0.5]], [[0.5, 0.5]]) == 0.0
    assert hausdorff_distance([[0.0, 0.0]], [[0.5, 0.0]]) == pytest.approx(0.5)
    assert hausdorff_distance([[0.0, 0.0]], np.empty((0, 2))) == pytest.approx(math.sqrt(2) / 2)
    with pytest.raises(DomainError):
        hausdorff_distance(np.empty((0, 2)), np.empty((0, 2)))


def test_hausdorff_box_ambient():
    amb = Ambient.box([0.0, 0.0], [1.0, 1.0])
    assert hausdorff_distance([[0.0, 0.0]], [[0.9, 0.0]], amb) == pytest.approx(0.9)


def test_boxset_operations():
    g = BoxGrid(T2, 2)
    a = BoxSet(g, [3, 1, 1, 7])
    b = BoxSet(g, [7, 8])
    assert a.to_json() == [1, 3, 7]
    assert a.union(b).to_json() == [1, 3, 7, 8]
    assert a.intersection(b).to_json() == [7]
    assert a.difference(b).to_json() == [1, 3]
    assert 3 in a and 4 not in a
    assert BoxSet.from_mask(g, a.mask()) == a
    assert BoxSet(g, [7]).issubset(a)
    with pytest.raises(DomainError):
        BoxSet(g, [16])


@given(arrays(np.float64, (50, 2), elements=st.floats(-3, 3, allow_nan=False)), st.integers(0, 10))
def test_tiling_and_refinement(pts, depth):
    g = BoxGrid(T2, depth)
    ids = g.box_ids_of(pts)
    lo, hi = g.bounds(ids)
    p = wrap01(pts)
    assert np.all((lo <= p) & (p <= hi))
    fine = g.subdivide()
    assert np.array_equal(fine.parent_ids(fine.box_ids_of(pts), g), ids)


@given(point_sets, point_sets, point_sets)
def test_hausdorff_metric_properties(a, b, c):
    dab = hausdorff_distance(a, b)
    assert dab == pytest.approx(brute_hausdorff(a, b), abs=1e-12)
    assert dab == pytest.approx(hausdorff_distance(b, a), abs=1e-12)
    assert hausdorff_distance(a, c) <= dab + hausdorff_distance(b, c) + 1e-12


@given(point_sets, arrays(np.float64, (1, 2), elements=unit))
def test_hausdorff_adding_a_point(a, extra):
    bound = brute_hausdorff(extra, a)  # distance from the new point to a
    assert hausdorff_distance(a, np.vstack([a, extra])) <= bound + 1e-12
