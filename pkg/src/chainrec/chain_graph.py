"""Box transition graphs and the Conley decomposition they induce.

A box ``u`` has an edge to ``v`` when the eps-inflated image of ``u`` meets ``v``.
Paths in this graph are eps-pseudo-orbits at grid resolution, so strongly
connected components with at least one edge approximate the chain-recurrence
classes and reachability between them approximates the order on classes.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, InconsistencyError, NumericalError
from .phase_space import BoxGrid, BoxSet, wrap01, wrap_half
from .systems import SystemSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransitionGraph:
    grid: BoxGrid
    epsilon: float
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    samples_per_axis: int = 3
    rigorous: bool = False
    lipschitz: float | None = None
    spread_cap: float | None = None

    @property
    def n_boxes(self) -> int:
        return self.indptr.size - 1

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1])

    def successors(self, box_id: int) -> np.ndarray:
        return self.indices[self.indptr[box_id]:self.indptr[box_id + 1]]

    def sources(self) -> np.ndarray:
        """Source box of every edge, aligned with ``indices``."""
        return np.repeat(np.arange(self.n_boxes, dtype=np.int64), np.diff(self.indptr))

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.sources().tolist(), self.indices.tolist()))

    def has_edge(self, u: int, v: int) -> bool:
        row = self.successors(u)
        i = np.searchsorted(row, v)
        return bool(i < row.size and row[i] == v)

    def transpose(self) -> tuple[np.ndarray, np.ndarray]:
        src = self.sources()
        order = np.lexsort((src, self.indices))
        indptr = np.zeros(self.n_boxes + 1, dtype=np.int64)
        np.add.at(indptr, self.indices + 1, 1)
        return np.cumsum(indptr), src[order]

    @classmethod
    def from_edges(cls, n: int, edges, grid: BoxGrid | None = None, epsilon: float = 0.0) -> "TransitionGraph":
        """Graph over ``n`` abstract vertices (tests and synthetic examples).

        Without a grid, a 1-d box grid of ``n`` cells is used as the carrier.
        """
        e = np.asarray(sorted(set(map(tuple, edges))), dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise DomainError("edge references a missing vertex")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, e[:, 0] + 1, 1)
        if grid is None:
            from .phase_space import Ambient

            grid = BoxGrid(Ambient.box([0.0], [float(n)]), 0)
        if grid.n_boxes != n:
            raise ConfigError("grid box count does not match vertex count")
        return cls(grid, epsilon, np.cumsum(indptr), e[:, 1].copy())


def _sample_offsets(m: int, d: int) -> np.ndarray:
    ticks = np.linspace(0.0, 1.0, m)
    grids = np.meshgrid(*([ticks] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _cell_spread(images: np.ndarray, m: int, d: int, periodic: bool) -> np.ndarray:
    """Per-sample max sup-norm diameter of the images of the lattice cells touching it."""
    nb = images.shape[0]
    img = images.reshape((nb,) + (m,) * d + (d,))
    corners = list(itertools.product((0, 1), repeat=d))

    def corner(c):
        return img[(slice(None),) + tuple(slice(ci, ci + m - 1) for ci in c)]

    cell = np.zeros((nb,) + (m - 1,) * d)
    views = [corner(c) for c in corners]
    for i, j in itertools.combinations(range(len(corners)), 2):
        diff = views[i] - views[j]
        if periodic:
            diff = wrap_half(diff)
        np.maximum(cell, np.abs(diff).max(axis=-1), out=cell)
    spread = np.zeros((nb,) + (m,) * d)
    for c in corners:
        sl = (slice(None),) + tuple(slice(ci, ci + m - 1) for ci in c)
        np.maximum(spread[sl], cell, out=spread[sl])
    return spread.reshape(nb, -1)


def build_transition_graph(
    sys: SystemSpec,
    grid: BoxGrid,
    epsilon: float,
    samples_per_axis: int = 3,
    *,
    lipschitz: float | None = None,
    spread_cap: float | None = None,
    chunk_boxes: int = 1 << 14,
    backend: str | None = None,
) -> TransitionGraph:
    """Sampled outer approximation of the eps-inflated box image relation.

    Each box is sampled on a ``samples_per_axis**d`` lattice including its corners.
    Without a Lipschitz bound each sample image is inflated (in the sup norm) by
    ``epsilon`` plus the largest image diameter of the lattice cells touching it,
    capped at ``spread_cap`` (default: one box side). For affine maps this covers
    the whole image of the box. With a sup-norm Lipschitz bound ``L`` the
    inflation is ``L * box_radius + epsilon`` and the graph is a guaranteed
    outer enclosure (``rigorous`` flag set).
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be nonnegative", stage="graph")
    if samples_per_axis < 2:
        raise ConfigError("samples_per_axis must be at least 2", stage="graph")
    if sys.ambient != grid.ambient:
        raise ConfigError("system and grid live on different ambient spaces", stage="graph")
    if lipschitz is not None and lipschitz < 0:
        raise ConfigError("Lipschitz bound must be nonnegative", stage="graph")
    d = grid.dim
    m = samples_per_axis
    cap = grid.side if spread_cap is None else float(spread_cap)
    offsets = _sample_offsets(m, d) * grid.side
    S = offsets.shape[0]
    shape = np.asarray(grid.shape, dtype=np.int64)
    lower = np.asarray(grid.ambient.lower)
    periodic = grid.ambient.periodic

    lo_all = np.empty((grid.n_boxes * S, d), dtype=np.int64)
    hi_all = np.empty_like(lo_all)
    for start in range(0, grid.n_boxes, chunk_boxes):
        ids = np.arange(start, min(start + chunk_boxes, grid.n_boxes), dtype=np.int64)
        lows, _ = grid.bounds(ids)
        samples = (lows[:, None, :] + offsets[None, :, :]).reshape(-1, d)
        if periodic:
            samples = wrap01(samples)
        try:
            images = np.asarray(sys.lift(samples), dtype=float).reshape(ids.size, S, d)
        except Exception as exc:
            raise NumericalError(f"map evaluation failed: {exc}", stage="graph", entity=int(ids[0])) from exc
        bad = ~np.all(np.isfinite(images), axis=(1, 2))
        if np.any(bad):
            raise NumericalError("non-finite image", stage="graph", entity=int(ids[np.argmax(bad)]))
        if lipschitz is not None:
            radius = np.full((ids.size, S), lipschitz * grid.radius + epsilon)
        else:
            spread = _cell_spread(images, m, d, periodic)
            radius = epsilon + np.minimum(spread, cap)
        if periodic:
            images = wrap01(images)
        rel_lo = (images - radius[..., None] - lower) / grid.side
        rel_hi = (images + radius[..., None] - lower) / grid.side
        k_lo = (np.ceil(rel_lo) - 1).astype(np.int64)
        k_hi = np.floor(rel_hi).astype(np.int64)
        if periodic:
            full = (k_hi - k_lo + 1) >= shape
            k_lo = np.where(full, 0, k_lo)
            k_hi = np.where(full, shape - 1, k_hi)
        else:
            k_lo = np.maximum(k_lo, 0)
            k_hi = np.minimum(k_hi, shape - 1)
        rows = slice(start * S, (start + ids.size) * S)
        lo_all[rows] = k_lo.reshape(-1, d)
        hi_all[rows] = k_hi.reshape(-1, d)

    indptr, indices = kernels.enumerate_edges(
        np.ascontiguousarray(lo_all), np.ascontiguousarray(hi_all), S, shape, periodic, grid.n_boxes,
        backend=backend,
    )
    log.debug("transition graph: %d boxes, %d edges", grid.n_boxes, indices.size)
    return TransitionGraph(
        grid=grid,
        epsilon=float(epsilon),
        indptr=indptr,
        indices=indices,
        samples_per_axis=m,
        rigorous=lipschitz is not None,
        lipschitz=lipschitz,
        spread_cap=None if lipschitz is not None else cap,
    )


# --------------------------------------------------------------------------- #
# classes and order


@dataclass(frozen=True)
class ChainClass:
    id: int
    boxes: BoxSet
    recurrent: bool


@dataclass(eq=False)
class CondensationOrder:
    """Reachability order between chain classes of one transition graph.

    ``reach[k]`` is the set of recurrent classes reachable from recurrent class
    ``k`` by a nonempty box path, excluding ``k`` itself.
    """

    graph: TransitionGraph
    classes: list[ChainClass]
    labels: np.ndarray = field(repr=False)
    class_indptr: np.ndarray = field(repr=False)
    class_indices: np.ndarray = field(repr=False)
    topo: list[int]
    reach: dict[int, frozenset[int]]

    @property
    def recurrent_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.recurrent]

    @property
    def minimal(self) -> list[int]:
        return [k for k in self.recurrent_ids if not self.reach[k]]

    def precedes(self, k: int, k2: int) -> bool:
        """``k`` reaches ``k2`` by a box path (the chain order between classes)."""
        return k2 in self.reach[k]

    def class_successors(self, k: int) -> np.ndarray:
        return self.class_indices[self.class_indptr[k]:self.class_indptr[k + 1]]

    def hasse_edges(self) -> list[tuple[int, int]]:
        """Transitive reduction of the order on recurrent classes."""
        out = []
        for k in self.recurrent_ids:
            for k2 in sorted(self.reach[k]):
                if not any(k2 in self.reach[j] for j in self.reach[k] if j != k2):
                    out.append((k, k2))
        return sorted(out)

    def closure_edges(self) -> list[tuple[int, int]]:
        return sorted((k, k2) for k in self.recurrent_ids for k2 in self.reach[k])

    def class_of(self, box_id: int) -> int:
        return int(self.labels[box_id])


def chain_recurrence_classes(g: TransitionGraph, backend: str | None = None) -> tuple[list[ChainClass], CondensationOrder]:
    """Strongly connected components of ``g`` and the order they inherit.

    Recurrent classes (some internal edge, self-loops included) are numbered
    first, by smallest member box id; transient components follow, numbered the
    same way.
    """
    n = g.n_boxes
    if n == 0:
        raise ConfigError("empty transition graph", stage="classes")
    raw, n_comp = kernels.tarjan_scc(g.indptr, g.indices, backend=backend)
    src = g.sources()
    internal = raw[src] == raw[g.indices]
    has_edge = np.zeros(n_comp, dtype=bool)
    has_edge[raw[src[internal]]] = True

    min_box = np.full(n_comp, n, dtype=np.int64)
    np.minimum.at(min_box, raw, np.arange(n, dtype=np.int64))
    order = np.lexsort((min_box, ~has_edge))  # recurrent first, then by smallest box
    new_id = np.empty(n_comp, dtype=np.int64)
    new_id[order] = np.arange(n_comp)
    labels = new_id[raw]

    members = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[members], np.arange(n_comp + 1))
    classes = [
        ChainClass(k, BoxSet(g.grid, members[bounds[k]:bounds[k + 1]]), bool(has_edge[order[k]]))
        for k in range(n_comp)
    ]

    # condensation DAG between all classes
    cs, cd = labels[src], labels[g.indices]
    cross = cs != cd
    keys = np.unique(cs[cross] * n_comp + cd[cross])
    ks, kd = keys // n_comp, keys % n_comp
    cindptr = np.zeros(n_comp + 1, dtype=np.int64)
    np.add.at(cindptr, ks + 1, 1)
    cindptr = np.cumsum(cindptr)

    # Tarjan completes sinks first: increasing raw label is reverse topological
    rev_topo = new_id[np.arange(n_comp)].tolist()
    recurrent = [c.recurrent for c in classes]
    bits: list[int] = [0] * n_comp
    kd_list = kd.tolist()
    cptr = cindptr.tolist()
    for k in rev_topo:
        acc = 0
        for j in kd_list[cptr[k]:cptr[k + 1]]:
            acc |= bits[j]
            if recurrent[j]:
                acc |= 1 << j
        bits[k] = acc
    reach = {}
    for k in range(n_comp):
        if recurrent[k]:
            b = bits[k]
            reach[k] = frozenset(j for j in _bit_indices(b))
    topo = list(reversed(rev_topo))
    cond = CondensationOrder(g, classes, labels, cindptr, kd, topo, reach)
    return classes, cond


def _bit_indices(b: int):
    i = 0
    while b:
        if b & 1:
            yield i
        b >>= 1
        i += 1


# --------------------------------------------------------------------------- #
# reachability helpers


def forward_closure(indptr: np.ndarray, indices: np.ndarray, seeds) -> np.ndarray:
    """Mask of vertices reachable from ``seeds`` (seeds included)."""
    n = indptr.size - 1
    seen = np.zeros(n, dtype=bool)
    frontier = np.unique(np.asarray(seeds, dtype=np.int64))
    seen[frontier] = True
    while frontier.size:
        starts = indptr[frontier]
        counts = indptr[frontier + 1] - starts
        total = int(counts.sum())
        if total == 0:
            break
        pos = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts) + np.arange(total)
        nxt = np.unique(indices[pos])
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return seen


def backward_closure(g: TransitionGraph, seeds) -> np.ndarray:
    tp, ti = g.transpose()
    return forward_closure(tp, ti, seeds)


@dataclass(frozen=True)
class QuasiAttractor:
    class_id: int
    neighborhood: BoxSet


def attracting_neighborhood(order: CondensationOrder, class_id: int) -> BoxSet | None:
    """Boxes none of whose paths reach a recurrent box outside the class.

    This set is forward invariant; it is returned only when it contains the class,
    which happens exactly for quasi-attractors. ``None`` otherwise.
    """
    g = order.graph
    k = _check_class(order, class_id)
    other = np.flatnonzero(np.isin(order.labels, [j for j in order.recurrent_ids if j != k]))
    bad = backward_closure(g, other) if other.size else np.zeros(g.n_boxes, dtype=bool)
    nbhd = BoxSet.from_mask(g.grid, ~bad)
    if not order.classes[k].boxes.issubset(nbhd):
        return None
    return nbhd


def quasi_attractors(order: CondensationOrder) -> list[QuasiAttractor]:
    out = []
    for k in order.minimal:
        nbhd = attracting_neighborhood(order, k)
        if nbhd is None:
            raise InconsistencyError("minimal class without attracting neighborhood", stage="classes", entity=k)
        out.append(QuasiAttractor(k, nbhd))
    return out


def _check_class(order: CondensationOrder, class_id) -> int:
    k = int(class_id)
    if not 0 <= k < len(order.classes):
        raise DomainError(f"unknown class id {class_id}", stage="classes", entity=class_id)
    return k


def chain_stable_set(order: CondensationOrder, class_id) -> BoxSet:
    """Boxes with a path into the class (graph-level chain stable set)."""
    k = _check_class(order, class_id)
    mask = backward_closure(order.graph, order.classes[k].boxes.ids)
    return BoxSet.from_mask(order.graph.grid, mask)


def chain_unstable_set(order: CondensationOrder, class_id) -> BoxSet:
    k = _check_class(order, class_id)
    g = order.graph
    return BoxSet.from_mask(g.grid, forward_closure(g.indptr, g.indices, order.classes[k].boxes.ids))


# --------------------------------------------------------------------------- #
# filtrations


@dataclass(frozen=True)
class Filtration:
    levels: list[BoxSet]
    selected: list[int]

    def __len__(self) -> int:
        return len(self.levels) - 1


def linear_extension(order: CondensationOrder, ids) -> list[int]:
    """Sort recurrent classes so that upstream classes come first; ties by id."""
    ids = sorted(set(int(i) for i in ids))
    indeg = {k: sum(1 for j in ids if j != k and order.precedes(j, k)) for k in ids}
    heap = [k for k in ids if indeg[k] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        k = heapq.heappop(heap)
        out.append(k)
        for j in ids:
            if j != k and order.precedes(k, j):
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(heap, j)
    if len(out) != len(ids):
        raise InconsistencyError("cycle among recurrent classes", stage="filtration")
    return out


def is_attracting(g: TransitionGraph, mask: np.ndarray) -> bool:
    """Every edge leaving a box of the set lands in the set."""
    src = g.sources()
    return bool(np.all(mask[g.indices[mask[src]]]))


def build_filtration(order: CondensationOrder, selected) -> Filtration:
    """Nested attracting box sets with exactly one selected class per gap.

    Level ``i >= 1`` is the forward closure of the selected classes from position
    ``i`` on in a linear extension of the order; level 0 is every box.
    """
    sel = [int(k) for k in selected]
    if len(set(sel)) != len(sel):
        raise ConfigError("selected classes must be distinct", stage="filtration")
    for k in sel:
        _check_class(order, k)
        if not order.classes[k].recurrent:
            raise ConfigError(f"class {k} is not recurrent", stage="filtration", entity=k)
    g = order.graph
    seq = linear_extension(order, sel)
    masks = [np.ones(g.n_boxes, dtype=bool)]
    for i in range(1, len(seq)):
        seeds = np.concatenate([order.classes[k].boxes.ids for k in seq[i:]])
        masks.append(forward_closure(g.indptr, g.indices, seeds))
    masks.append(np.zeros(g.n_boxes, dtype=bool))

    for i, mk in enumerate(masks):
        if not is_attracting(g, mk):
            raise InconsistencyError("filtration level is not attracting", stage="filtration", entity=i)
    for i, k in enumerate(seq):
        gap = masks[i] & ~masks[i + 1]
        if np.any(masks[i + 1] & ~masks[i]) or not np.any(gap):
            raise InconsistencyError("filtration levels are not strictly nested", stage="filtration", entity=i)
        inside = [j for j in seq if np.all(gap[order.classes[j].boxes.ids])]
        if inside != [k]:
            raise InconsistencyError("gap does not isolate exactly one selected class", stage="filtration", entity=i)
    return Filtration([BoxSet.from_mask(g.grid, mk) for mk in masks], seq)


# --------------------------------------------------------------------------- #
# complete Lyapunov function


@dataclass(frozen=True, eq=False)
class CompleteLyapunovFunction:
    class_values: list[Fraction]
    labels: np.ndarray = field(repr=False)

    def value(self, box_id: int) -> Fraction:
        return self.class_values[int(self.labels[box_id])]

    def table(self) -> list[Fraction]:
        return [self.class_values[k] for k in self.labels.tolist()]


def conley_function(order: CondensationOrder, g: TransitionGraph | None = None) -> CompleteLyapunovFunction:
    """Exact rational function, constant on classes and strictly decreasing across classes.

    Classes are placed on a topological order of the condensation (ties broken by
    smallest class id); the class at position ``p`` of ``n`` gets ``(n - p) / n``.
    """
    g = order.graph if g is None else g
    n = len(order.classes)
    indeg = np.zeros(n, dtype=np.int64)
    np.add.at(indeg, order.class_indices, 1)
    heap = [k for k in range(n) if indeg[k] == 0]
    heapq.heapify(heap)
    pos = np.empty(n, dtype=np.int64)
    p = 0
    cptr = order.class_indptr.tolist()
    cidx = order.class_indices.tolist()
    indeg = indeg.tolist()
    while heap:
        k = heapq.heappop(heap)
        pos[k] = p
        p += 1
        for j in cidx[cptr[k]:cptr[k + 1]]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if p != n:
        raise InconsistencyError("condensation is not acyclic", stage="conley")
    values = [Fraction(int(n - pos[k]), n) for k in range(n)]

    # edge-by-edge verification in exact arithmetic
    for k in range(n):
        vk = values[k]
        for j in cidx[cptr[k]:cptr[k + 1]]:
            if not values[j] < vk:
                raise InconsistencyError("Lyapunov function does not decrease", stage="conley", entity=(k, j))
    rec_vals = [values[k] for k in order.recurrent_ids]
    if len(set(rec_vals)) != len(rec_vals):
        raise InconsistencyError("recurrent classes share a value", stage="conley")
    return CompleteLyapunovFunction(values, order.labels)
