"""Discretized phase space: ambient spaces, dyadic box grids, box sets, Hausdorff distance.

Points are plain ``numpy`` arrays of shape ``(d,)`` or ``(n, d)``; the ambient
space they live in is carried separately by an :class:`Ambient`.

Box grids are dyadic. At depth ``k`` each unit of ambient extent is cut into
``2**k`` intervals per axis, so a box has half side ``2**(-k-1)``. Boxes are
half-open: a point on a shared face belongs to the box with the larger index
(``floor`` rule); on the upper face of a box-shaped ambient the last box is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DomainError

MAX_DEPTH = 30


def wrap01(x):
    """Reduce coordinates mod 1 into ``[0, 1)`` (guards the ``-tiny -> 1.0`` case)."""
    y = np.asarray(x, dtype=float) % 1.0
    return np.where(y >= 1.0, 0.0, y)


def wrap_half(x):
    """Reduce a displacement mod 1 into ``[-1/2, 1/2)``."""
    return (np.asarray(x, dtype=float) + 0.5) % 1.0 - 0.5


@dataclass(frozen=True)
class Ambient:
    """The space a system acts on: the flat torus ``R^d/Z^d`` or a box of integer extents."""

    kind: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise ConfigError(f"unknown ambient kind {self.kind!r}")
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ConfigError("ambient bounds must be nonempty and of equal length")
        for lo, hi in zip(self.lower, self.upper):
            ext = hi - lo
            if ext <= 0 or ext != int(ext):
                # dyadic grids need integer extents for exact parent/child arithmetic
                raise ConfigError(f"ambient extent {ext} is not a positive integer")
        if self.kind == "torus" and (any(lo != 0 for lo in self.lower) or any(hi != 1 for hi in self.upper)):
            raise ConfigError("torus ambient must be the unit torus")

    @classmethod
    def torus(cls, d: int) -> "Ambient":
        return cls("torus", (0.0,) * d, (1.0,) * d)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Ambient":
        return cls("box", tuple(float(v) for v in lower), tuple(float(v) for v in upper))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(int(hi - lo) for lo, hi in zip(self.lower, self.upper))

    @property
    def diameter(self) -> float:
        if self.periodic:
            return math.sqrt(self.dim) / 2
        return math.sqrt(sum(e * e for e in self.extents))

    def canonicalize(self, points):
        pts = np.asarray(points, dtype=float)
        if self.periodic:
            return wrap01(pts)
        return pts

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.periodic:
            return np.all(np.isfinite(pts), axis=1)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def displacement(self, a, b):
        """Shortest vector from ``a`` to ``b`` (nearest lift on the torus)."""
        delta = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        return wrap_half(delta) if self.periodic else delta

    def distance(self, a, b):
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def to_json(self) -> dict:
        return {"kind": self.kind, "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Box:
    grid: "BoxGrid"
    multi_index: tuple[int, ...]

    @property
    def grid_depth(self) -> int:
        return self.grid.depth

    @property
    def id(self) -> int:
        return int(self.grid.box_id(self.multi_index))

    @property
    def radius(self) -> float:
        return self.grid.radius

    @property
    def center(self) -> np.ndarray:
        return self.grid.centers(np.asarray([self.id]))[0]

    def contains(self, point, closed: bool = True) -> bool:
        lo, hi = self.grid.bounds(np.asarray([self.id]))
        p = self.grid.ambient.canonicalize(point)
        if closed:
            return bool(np.all((p >= lo[0]) & (p <= hi[0])))
        return bool(np.all((p >= lo[0]) & (p < hi[0])))

    def to_json(self) -> list:
        return [self.grid.depth, list(self.multi_index)]


@dataclass(frozen=True)
class BoxGrid:
    ambient: Ambient
    depth: int

    def __post_init__(self):
        if not 0 <= self.depth <= MAX_DEPTH:
            raise ConfigError(f"grid depth {self.depth} outside [0, {MAX_DEPTH}]")

    @property
    def dim(self) -> int:
        return self.ambient.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple((1 << self.depth) * e for e in self.ambient.extents)

    @property
    def n_boxes(self) -> int:
        return math.prod(self.shape)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.depth)

    @property
    def radius(self) -> float:
        return 2.0 ** (-self.depth - 1)

    @property
    def box_diameter(self) -> float:
        return self.side * math.sqrt(self.dim)

    def subdivide(self, max_depth: int = MAX_DEPTH) -> "BoxGrid":
        if self.depth + 1 > max_depth:
            raise ConfigError(f"cannot subdivide beyond depth limit {max_depth}")
        return BoxGrid(self.ambient, self.depth + 1)

    # index arithmetic -------------------------------------------------------
    def box_id(self, multi_index) -> np.ndarray | int:
        idx = np.asarray(multi_index, dtype=np.int64)
        self._check_index(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)

    def multi_index(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if np.any((ids < 0) | (ids >= self.n_boxes)):
            raise DomainError("box id out of range for grid")
        return np.stack(np.unravel_index(ids, self.shape), axis=-1)

    def _check_index(self, idx: np.ndarray) -> None:
        if idx.shape[-1] != self.dim:
            raise DomainError(f"multi-index must have {self.dim} components")
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise DomainError(f"multi-index {idx.tolist()} outside grid shape {self.shape}")

    def box(self, multi_index: Iterable[int]) -> Box:
        idx = tuple(int(i) for i in multi_index)
        self._check_index(np.asarray(idx))
        return Box(self, idx)

    def children(self, multi_index) -> list[tuple[int, ...]]:
        idx = np.asarray(multi_index, dtype=np.int64)
        self._check_index(idx)
        offsets = np.array(np.meshgrid(*([[0, 1]] * self.dim), indexing="ij")).reshape(self.dim, -1).T
        return [tuple(int(v) for v in 2 * idx + o) for o in offsets]

    def parent_ids(self, ids, coarse: "BoxGrid") -> np.ndarray:
        """Ids in the coarser grid ``coarse`` of the ancestors of ``ids``."""
        shift = self.depth - coarse.depth
        if shift < 0 or coarse.ambient != self.ambient:
            raise ConfigError("parent grid must share the ambient and be coarser")
        return coarse.box_id(self.multi_index(ids) >> shift)

    # geometry ---------------------------------------------------------------
    def box_of(self, points) -> np.ndarray:
        """Multi-index of the box containing each point (floor rule)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise DomainError(f"point dimension {pts.shape[1]} != grid dimension {self.dim}")
        if not np.all(self.ambient.contains(pts)):
            raise DomainError("point outside ambient bounds")
        pts = self.ambient.canonicalize(pts)
        rel = (pts - np.asarray(self.ambient.lower)) * (1 << self.depth)
        idx = np.floor(rel).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return idx[0] if single else idx

    def box_ids_of(self, points) -> np.ndarray:
        return self.box_id(np.atleast_2d(self.box_of(points)))

    def bounds(self, ids) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.ambient.lower) + self.multi_index(ids) * self.side
        return lo, lo + self.side

    def centers(self, ids) -> np.ndarray:
        lo, _ = self.bounds(ids)
        return lo + self.radius

    def all_ids(self) -> np.ndarray:
        return np.arange(self.n_boxes, dtype=np.int64)

    def to_json(self) -> dict:
        return {"ambient": self.ambient.to_json(), "depth": self.depth}


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Sorted, duplicate-free set of box ids of one grid."""

    grid: BoxGrid
    ids: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = np.unique(np.asarray(self.ids, dtype=np.int64))
        if ids.size and (ids[0] < 0 or ids[-1] >= self.grid.n_boxes):
            raise DomainError("box id outside grid")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.ids.size)

    def __iter__(self):
        return iter(self.ids.tolist())

    def __contains__(self, box_id) -> bool:
        i = np.searchsorted(self.ids, box_id)
        return bool(i < self.ids.size and self.ids[i] == box_id)

    def __eq__(self, other) -> bool:
        return isinstance(other, BoxSet) and self.grid == other.grid and np.array_equal(self.ids, other.ids)

    def __hash__(self):
        return hash((self.grid, self.ids.tobytes()))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.n_boxes, dtype=bool)
        m[self.ids] = True
        return m

    @classmethod
    def from_mask(cls, grid: BoxGrid, mask) -> "BoxSet":
        return cls(grid, np.flatnonzero(mask))

    def union(self, other: "BoxSet") -> "BoxSet":
        return BoxSet(self.grid, np.union1d(self.ids, other.ids))

    def intersection(self, other: "BoxSet") -> "BoxSet":
        return BoxSet(self.grid, np.intersect1d(self.ids, other.ids, assume_unique=True))

    def difference(self, other: "BoxSet") -> "BoxSet":
        return BoxSet(self.grid, np.setdiff1d(self.ids, other.ids, assume_unique=True))

    def issubset(self, other: "BoxSet") -> bool:
        return bool(np.all(np.isin(self.ids, other.ids, assume_unique=True)))

    def to_json(self) -> list[int]:
        return self.ids.tolist()


def hausdorff_distance(a, b, ambient: Ambient | None = None) -> float:
    """Two-sided Hausdorff distance between finite point sets.

    On the torus the flat quotient metric is used. If exactly one set is empty the
    ambient diameter is returned.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, ambient.dim if ambient else max(a.size, 1)) if a.size else a.reshape(0, 0)
    if b.ndim == 1:
        b = b.reshape(-1, ambient.dim if ambient else max(b.size, 1)) if b.size else b.reshape(0, 0)
    if a.size == 0 and b.size == 0:
        raise DomainError("Hausdorff distance of two empty sets is undefined")
    d = (a if a.size else b).shape[1]
    if ambient is None:
        ambient = Ambient.torus(d)
    if a.size == 0 or b.size == 0:
        return ambient.diameter
    if a.shape[1] != ambient.dim or b.shape[1] != ambient.dim:
        raise DomainError("point sets do not match the ambient dimension")
    return max(_directed(a, b, ambient), _directed(b, a, ambient))


def _directed(a: np.ndarray, b: np.ndarray, ambient: Ambient) -> float:
    if ambient.periodic:
        # periodic KD-tree needs data strictly inside [0, 1)
        tree = cKDTree(wrap01(b), boxsize=1.0)
        dist, _ = tree.query(wrap01(a))
    else:
        tree = cKDTree(b)
        dist, _ = tree.query(a)
    return float(np.max(dist))
