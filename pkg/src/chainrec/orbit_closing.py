"""Pseudo-orbits, closing-pair selection, Newton closing and weak shadowing.

The periodic closing solves ``f^tau(x) = x + w`` on the universal cover, where the
integer winding vector ``w`` is read off the pseudo-orbit. Shadowing of open
pseudo-orbits uses a multiple-shooting Newton iteration with minimum-norm
corrections, which converges near any pseudo-orbit of a hyperbolic map.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConfigError, DegenerateClosingError, DomainError, InconsistencyError, NoConvergenceError
from .phase_space import Ambient, hausdorff_distance, wrap_half
from .systems import SystemSpec, evaluate

MAX_JUMP_PER_AXIS = 0.25
DEGENERACY_TOL = 1e-9  # eigenvalue of Df^tau this close to 1 blocks the closing


# --------------------------------------------------------------------------- #
# pseudo-orbits


@dataclass(frozen=True, eq=False)
class PseudoOrbit:
    """Points ``z_0..z_n`` with ``jump = max_i d(f(z_i), z_{i+1})``.

    A periodic pseudo-orbit stores ``z_n = z_0`` explicitly; its period is ``n``.
    """

    points: np.ndarray = field(repr=False)
    jump: float
    periodic: bool
    ambient: Ambient

    @property
    def n(self) -> int:
        return self.points.shape[0] - 1

    @property
    def period(self) -> int:
        if not self.periodic:
            raise ConfigError("pseudo-orbit is not periodic")
        return self.n

    @property
    def distinct_points(self) -> np.ndarray:
        return self.points[:-1] if self.periodic else self.points

    def to_json(self) -> dict:
        return {
            "points": self.points.tolist(),
            "epsilon": self.jump,
            "periodic": self.periodic,
        }

    @classmethod
    def from_points(cls, sys: SystemSpec, points, closed: bool = False) -> "PseudoOrbit":
        """Build from a point list; ``closed=True`` treats the list as one period
        (``z_0`` is appended). A list whose last point equals its first is periodic."""
        pts = sys.ambient.canonicalize(np.atleast_2d(np.asarray(points, dtype=float)))
        if pts.shape[1] != sys.dim:
            raise DomainError("pseudo-orbit dimension does not match the system")
        if closed:
            pts = np.vstack([pts, pts[:1]])
        if pts.shape[0] < 2:
            raise ConfigError("a pseudo-orbit needs at least two points")
        periodic = bool(np.array_equal(pts[0], pts[-1]))
        jumps = pseudo_orbit_jumps(sys, pts)
        return cls(pts, float(jumps.max()), periodic, sys.ambient)


def pseudo_orbit_jumps(sys: SystemSpec, points: np.ndarray) -> np.ndarray:
    return sys.ambient.distance(sys.step(points[:-1]), points[1:])


def _uniform_kick(rng: np.random.Generator, shape, eps: float, d: int) -> np.ndarray:
    # per-axis half width eps/sqrt(d): sup norm and Euclidean norm both stay <= eps
    return rng.uniform(-1.0, 1.0, size=shape) * (eps / math.sqrt(d))


def _settle(ambient: Ambient, pts: np.ndarray) -> np.ndarray:
    if ambient.periodic:
        return ambient.canonicalize(pts)
    return np.clip(pts, ambient.lower, ambient.upper)


def generate_pseudo_orbit(sys: SystemSpec, start, n: int, eps: float, seed: int = 0) -> PseudoOrbit:
    if n < 1 or eps < 0:
        raise ConfigError("need n >= 1 and eps >= 0", stage="closing")
    rng = np.random.default_rng(seed)
    pts = np.empty((n + 1, sys.dim))
    pts[0] = sys.ambient.canonicalize(np.asarray(start, dtype=float))
    for i in range(n):
        img = sys.lift(pts[i:i + 1])[0]
        kick = _uniform_kick(rng, sys.dim, eps, sys.dim) if eps > 0 else 0.0
        pts[i + 1] = _settle(sys.ambient, img + kick)
    return PseudoOrbit.from_points(sys, pts)


def perturb_points(ambient: Ambient, points, eps: float, seed: int = 0) -> np.ndarray:
    """Move every point by an independent kick of norm at most ``eps``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rng = np.random.default_rng(seed)
    return _settle(ambient, pts + _uniform_kick(rng, pts.shape, eps, pts.shape[1]))


# --------------------------------------------------------------------------- #
# nested-cube selection of a closing pair


@dataclass(frozen=True)
class Cube:
    """Sup-norm cube ``center +- radius``."""

    center: tuple[float, ...]
    radius: float

    def scaled(self, factor: float) -> "Cube":
        return Cube(self.center, self.radius * factor)

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(np.abs(p - np.asarray(self.center)) <= self.radius, axis=1)

    def contains_cube(self, other: "Cube") -> bool:
        gap = np.abs(np.asarray(other.center) - np.asarray(self.center)) + other.radius
        return bool(np.all(gap <= self.radius * (1 + 1e-12)))

    def subcube_index(self, point) -> tuple[int, ...]:
        """Which of the ``3^d`` half-radius subcubes of ``(3/2) * self`` holds ``point``."""
        rel = (np.asarray(point, dtype=float) - (np.asarray(self.center) - 1.5 * self.radius)) / self.radius
        return tuple(int(v) for v in np.clip(np.floor(rel), 0, 2))

    def subcube(self, index: Sequence[int]) -> "Cube":
        c = np.asarray(self.center) + self.radius * (np.asarray(index) - 1)
        return Cube(tuple(float(v) for v in c), self.radius / 2)


@dataclass(frozen=True)
class ClosingTriple:
    """``x = f^t(y)``, both in ``cube``, no intermediate return in ``(1+eps) * cube``."""

    x: np.ndarray
    y: np.ndarray
    x_index: int
    y_index: int
    cube: Cube
    eps_cube: float
    chain: tuple[Cube, ...] = ()
    depth: int = 0
    steps: int = 0


def _as_returns(returns) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray([int(t) for t, _ in returns], dtype=np.int64)
    pts = np.asarray([np.asarray(p, dtype=float) for _, p in returns], dtype=float)
    if pts.ndim != 2:
        raise ConfigError("returns must be (iterate index, point) pairs", stage="closing")
    if np.unique(idx).size != idx.size:
        raise ConfigError("iterate indices must be distinct", stage="closing")
    order = np.argsort(idx)
    return idx[order], pts[order]


def closing_violations(returns, triple: ClosingTriple) -> list[str]:
    """Exhaustive check of the three closing-pair conditions against the return list."""
    idx, pts = _as_returns(returns)
    out = []
    pos = {int(t): i for i, t in enumerate(idx)}
    if triple.x_index not in pos or triple.y_index not in pos:
        out.append("x or y is not a supplied return")
        return out
    if not np.allclose(pts[pos[triple.x_index]], triple.x) or not np.allclose(pts[pos[triple.y_index]], triple.y):
        out.append("points do not match their iterate indices")
    if triple.x_index <= triple.y_index:
        out.append("x is not a future iterate of y")
    if not np.all(triple.cube.contains(np.vstack([triple.x, triple.y]))):
        out.append("x or y outside the cube")
    between = (idx > triple.y_index) & (idx < triple.x_index)
    big = triple.cube.scaled(1 + triple.eps_cube)
    if np.any(big.contains(pts[between])):
        out.append("an intermediate iterate lies in the enlarged cube")
    return out


def select_closing_pair(
    returns,
    c0: Cube,
    eps_cube: float,
    y_index: int | None = None,
    x_index: int | None = None,
) -> ClosingTriple:
    """Combinatorial selection of a closable return pair by nested cubes.

    ``returns`` lists ``(iterate index, chart point)`` pairs; the initial pair
    defaults to the earliest (``y``) and latest (``x``) returns. ``c0`` is the
    small cube holding both. Each round tries the triples
    ``T(j) = (x_k, z(j), (1+eps)^j * C_k)`` where ``z(j)`` is the earliest
    intermediate return in ``(1+eps)^j * C_k``; if ``T(3^d)`` still fails, two of
    the ``z(j)`` share one of the ``3^d`` half-radius subcubes of ``(3/2) * C_k``,
    which becomes ``C_{k+1}``.
    """
    idx, pts = _as_returns(returns)
    d = pts.shape[1]
    L = 3 ** d
    if eps_cube <= 0 or (1 + eps_cube) ** L > 1.5:
        raise ConfigError(f"eps_cube must satisfy (1+eps)^{L} <= 3/2", stage="closing")
    pos = {int(t): i for i, t in enumerate(idx)}
    yk = int(idx[0]) if y_index is None else int(y_index)
    xk = int(idx[-1]) if x_index is None else int(x_index)
    if yk not in pos or xk not in pos:
        raise ConfigError("initial pair must be among the returns", stage="closing")
    if xk <= yk:
        raise ConfigError("x_0 must be a future iterate of y_0", stage="closing")
    if not np.all(c0.contains(pts[[pos[yk], pos[xk]]])):
        raise ConfigError("initial pair must lie in C0", stage="closing")

    chain = [c0.scaled(2)]
    steps = 0
    depth = 0
    while True:
        ck = chain[-1].scaled(0.5)
        zs = [yk]
        for j in range(L + 1):
            cube_j = ck.scaled((1 + eps_cube) ** j)
            between = (idx > zs[-1]) & (idx < xk)
            hit = between & cube_j.scaled(1 + eps_cube).contains(pts)
            if not np.any(hit):
                triple = ClosingTriple(
                    x=pts[pos[xk]].copy(), y=pts[pos[zs[-1]]].copy(), x_index=xk, y_index=zs[-1],
                    cube=cube_j, eps_cube=eps_cube, chain=tuple(chain), depth=depth, steps=steps,
                )
                bad = closing_violations(list(zip(idx.tolist(), pts)), triple)
                if bad:
                    raise InconsistencyError("; ".join(bad), stage="closing")
                return triple
            if j == L:
                break
            zs.append(int(idx[np.argmax(hit)]))  # earliest intermediate return
            steps += 1
        # pigeonhole: L + 1 points z(0..L) in 3^d subcubes of (3/2) * C_k
        seen: dict[tuple[int, ...], int] = {}
        pair = None
        for z in zs:
            key = ck.subcube_index(pts[pos[z]])
            if key in seen:
                pair = (seen[key], z, key)
                break
            seen[key] = z
        if pair is None:
            raise InconsistencyError("pigeonhole failed: returns outside (3/2)C_k", stage="closing")
        yk, xk, key = pair
        chain.append(ck.subcube(key).scaled(2))
        depth += 1


# --------------------------------------------------------------------------- #
# periodic closing


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    point: np.ndarray
    period: int
    points: np.ndarray = field(repr=False)
    residual: float
    winding: tuple[int, ...] = ()
    hausdorff_to_pseudo: float | None = None
    iterations: int = 0
    exact_points: tuple[tuple[Fraction, ...], ...] | None = field(default=None, repr=False)
    hyperbolicity: dict | None = None

    def with_hyperbolicity(self, data: dict) -> "PeriodicOrbit":
        return replace(self, hyperbolicity=data)

    def to_json(self) -> dict:
        out = {
            "period": self.period,
            "points": self.points.tolist(),
            "residual": self.residual,
            "winding": list(self.winding),
        }
        if self.exact_points is not None:
            out["exact_points"] = [[str(c) for c in p] for p in self.exact_points]
        if self.hausdorff_to_pseudo is not None:
            out["hausdorff_to_pseudo"] = self.hausdorff_to_pseudo
        if self.hyperbolicity is not None:
            out["hyperbolicity"] = self.hyperbolicity
        return out


def winding_vector(sys: SystemSpec, po: PseudoOrbit) -> np.ndarray:
    """Integer displacement of the lifted pseudo-orbit over one period."""
    if not sys.ambient.periodic:
        return np.zeros(sys.dim, dtype=np.int64)
    x = po.points[0].copy()
    for i in range(po.n):
        img = sys.lift(x[None, :])[0]
        step = wrap_half(po.points[i + 1] - img)
        if np.any(np.abs(step) > MAX_JUMP_PER_AXIS):
            raise ConfigError(
                "ambiguous lift: pseudo-orbit jump exceeds 1/4 on some axis", stage="closing", entity=i
            )
        x = img + step
    return np.rint(x - po.points[0]).astype(np.int64)


def _lifted_power(sys: SystemSpec, x: np.ndarray, tau: int) -> tuple[np.ndarray, np.ndarray]:
    J = np.eye(sys.dim)
    y = x.copy()
    for _ in range(tau):
        J = sys.jacobians(y[None, :])[0] @ J
        y = sys.lift(y[None, :])[0]
    return y, J


def _exact_periodic_point(sys: SystemSpec, tau: int, w: np.ndarray) -> tuple[Fraction, ...] | None:
    """Solve ``(A^tau - I) x = w`` in rationals for an integer-matrix torus map."""
    if sys.integer_matrix is None:
        return None
    A = [[Fraction(v) for v in row] for row in sys.integer_matrix]
    d = len(A)
    P = [[Fraction(int(i == j)) for j in range(d)] for i in range(d)]
    for _ in range(tau):
        P = [[sum(A[i][k] * P[k][j] for k in range(d)) for j in range(d)] for i in range(d)]
    M = [[P[i][j] - (1 if i == j else 0) for j in range(d)] + [Fraction(int(w[i]))] for i in range(d)]
    # Gauss-Jordan elimination in exact arithmetic
    for col in range(d):
        piv = next((r for r in range(col, d) if M[r][col] != 0), None)
        if piv is None:
            return None
        M[col], M[piv] = M[piv], M[col]
        inv = 1 / M[col][col]
        M[col] = [v * inv for v in M[col]]
        for r in range(d):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return tuple(M[i][d] - math.floor(M[i][d]) for i in range(d))


def _closing_matrix(sys: SystemSpec, x: np.ndarray, tau: int) -> np.ndarray:
    _, J = _lifted_power(sys, x, tau)
    # distance of the spectrum to 1, not the conditioning of J - I: saddles with
    # huge expansion are badly conditioned yet perfectly hyperbolic
    if np.min(np.abs(np.linalg.eigvals(J) - 1.0)) <= DEGENERACY_TOL:
        raise DegenerateClosingError(
            "Df^tau - I is singular (eigenvalue 1): non-hyperbolic closing", stage="closing"
        )
    return J - np.eye(sys.dim)


def close_to_periodic(
    sys: SystemSpec,
    po: PseudoOrbit,
    tol: float = 1e-10,
    max_iter: int = 100,
    max_halvings: int = 20,
) -> PeriodicOrbit:
    """Damped Newton closing of a periodic pseudo-orbit into a true periodic orbit."""
    if not po.periodic:
        raise ConfigError("pseudo-orbit is not periodic", stage="closing")
    if not sys.jacobian_available:
        raise ConfigError("closing needs Jacobians", stage="closing")
    tau = po.period
    w = winding_vector(sys, po)
    x = po.points[0].copy()

    def residual(v):
        y, _ = _lifted_power(sys, v, tau)
        return y - v - w

    r = residual(x)
    it = 0
    while np.linalg.norm(r) >= tol:
        if it >= max_iter:
            raise NoConvergenceError(
                f"Newton closing did not converge in {max_iter} iterations",
                residual=float(np.linalg.norm(r)), stage="closing",
            )
        M = _closing_matrix(sys, x, tau)
        delta = np.linalg.solve(M, -r)
        norm0 = np.linalg.norm(r)
        best = None
        step = 1.0
        for _ in range(max_halvings + 1):
            cand = x + step * delta
            rc = residual(cand)
            if best is None or np.linalg.norm(rc) < best[1]:
                best = (cand, np.linalg.norm(rc), rc)
            if np.linalg.norm(rc) < norm0:
                break
            step *= 0.5
        x, _, r = best
        it += 1
    if it == 0:
        _closing_matrix(sys, x, tau)  # a seed that is already closed must still be hyperbolic

    exact = _exact_periodic_point(sys, tau, w)
    if exact is not None:
        x = np.array([float(c) for c in exact])
    x = sys.ambient.canonicalize(x)
    pts = _orbit_points(sys, x, tau)
    period = tau
    exact_pts = None
    if exact is not None:
        cyc = [tuple(exact)]
        for _ in range(tau - 1):
            cyc.append(tuple(evaluate(sys, list(cyc[-1]), 1)))
        back = tuple(evaluate(sys, list(cyc[-1]), 1))
        res = 0.0 if back == cyc[0] else float(sys.ambient.distance(np.array(back, float), x))
        for q in _proper_divisors(tau):
            if cyc[q] == cyc[0]:
                period = q
                break
        exact_pts = tuple(cyc[:period])
        pts = np.array([[float(c) for c in p] for p in cyc])
    else:
        res = float(sys.ambient.distance(sys.step(pts[-1]), x))
        for q in _proper_divisors(tau):
            if sys.ambient.distance(pts[q], x) < max(tol, 1e-9):
                period = q
                break
    pts = pts[:period]
    dh = hausdorff_distance(po.distinct_points, pts, sys.ambient)
    return PeriodicOrbit(
        point=x, period=period, points=pts, residual=res, winding=tuple(int(v) for v in w),
        hausdorff_to_pseudo=dh, iterations=it, exact_points=exact_pts,
    )


def _orbit_points(sys: SystemSpec, x: np.ndarray, n: int) -> np.ndarray:
    pts = np.empty((n, sys.dim))
    pts[0] = x
    for i in range(1, n):
        pts[i] = sys.step(pts[i - 1])
    return pts


def _proper_divisors(n: int) -> list[int]:
    return [q for q in range(1, n) if n % q == 0]


# --------------------------------------------------------------------------- #
# weak shadowing


def refine_pseudo_orbit(
    sys: SystemSpec, points, tol: float = 1e-12, max_iter: int = 30
) -> tuple[np.ndarray, float]:
    """Multiple-shooting Newton: nearest sequence with ``f(x_i) = x_{i+1}``.

    Each step applies the minimum-norm correction of the linearized defect
    equations ``Df(x_i) d_i - d_{i+1} = -(f(x_i) - x_{i+1})``. Returns the refined
    points and their final max defect.
    """
    x = np.array(points, dtype=float)
    n = x.shape[0] - 1
    d = sys.dim
    amb = sys.ambient

    def defects(v):
        return amb.displacement(v[1:], sys.step(v[:-1]))

    r = defects(x)
    err = float(np.abs(r).max()) if n else 0.0
    it = 0
    while err > tol and it < max_iter:
        jac = sys.jacobians(x[:-1])
        rows = np.repeat(np.arange(n * d), d)
        cols = (np.arange(n)[:, None, None] * d + np.arange(d)[None, None, :]).repeat(d, axis=1).ravel()
        blocks = sp.csr_matrix((jac.ravel(), (rows, cols)), shape=(n * d, (n + 1) * d))
        J = blocks - sp.eye(n * d, (n + 1) * d, k=d, format="csr")
        y = spsolve((J @ J.T).tocsc(), -r.ravel())
        x = x + (J.T @ y).reshape(n + 1, d)
        x = amb.canonicalize(x) if amb.periodic else x
        r = defects(x)
        new_err = float(np.abs(r).max())
        it += 1
        if not np.isfinite(new_err):
            break
        err = new_err
    return x, err


@dataclass(frozen=True, eq=False)
class ShadowReport:
    success: bool
    delta: float
    hausdorff: float
    start: np.ndarray | None
    length: int
    method: str
    witness: np.ndarray | None = field(default=None, repr=False)
    defect: float = 0.0
    candidates_tried: int = 0
    message: str = ""

    def to_json(self) -> dict:
        return {
            "success": self.success,
            "delta": self.delta,
            "hausdorff": self.hausdorff,
            "start": None if self.start is None else self.start.tolist(),
            "length": self.length,
            "method": self.method,
            "defect": self.defect,
            "candidates_tried": self.candidates_tried,
            "message": self.message,
        }


def weak_shadow_check(
    sys: SystemSpec,
    po: PseudoOrbit,
    delta: float,
    search_budget: int = 256,
    defect_tol: float = 1e-10,
) -> ShadowReport:
    """Look for a true orbit segment within Hausdorff distance ``delta`` of ``po``.

    Candidates, in order: the forward orbit of ``z_0``; the multiple-shooting
    Newton refinement of the whole pseudo-orbit; the Newton closing when ``po`` is
    periodic; forward orbits of the other pseudo-orbit points; then forward
    orbits from a uniform lattice of the ambient space. A failure means nothing
    was found within ``search_budget`` candidates.
    """
    if delta <= 0:
        raise ConfigError("delta must be positive", stage="shadow")
    target = po.points
    n = po.n
    amb = sys.ambient
    best = None
    tried = 0

    def consider(points, method, defect=0.0):
        nonlocal best
        dh = hausdorff_distance(points, target, amb)
        rep = ShadowReport(
            success=dh < delta, delta=delta, hausdorff=dh, start=np.asarray(points[0]).copy(),
            length=points.shape[0] - 1, method=method, witness=np.asarray(points).copy(), defect=defect,
        )
        if best is None or dh < best.hausdorff:
            best = rep
        return rep.success

    def forward(x):
        out = np.empty((n + 1, sys.dim))
        out[0] = x
        for i in range(n):
            out[i + 1] = sys.step(out[i])
        return out

    def candidates():
        yield "orbit_of_start", lambda: (forward(target[0]), 0.0)
        if sys.jacobian_available:
            def newton():
                pts, err = refine_pseudo_orbit(sys, target, tol=defect_tol * 1e-2)
                return (pts, err) if err <= defect_tol else None
            yield "newton_refinement", newton
            if po.periodic:
                def closed():
                    orb = close_to_periodic(sys, po)
                    reps = int(np.ceil((n + 1) / orb.period))
                    return np.tile(orb.points, (reps, 1))[: n + 1], orb.residual
                yield "periodic_closing", closed
        for i in range(1, n + 1):
            yield f"orbit_of_point_{i}", (lambda i=i: (forward(target[i]), 0.0))
        per_axis = max(2, int(round(search_budget ** (1.0 / sys.dim))))
        ticks = [np.linspace(lo, hi, per_axis, endpoint=not amb.periodic) for lo, hi in zip(amb.lower, amb.upper)]
        for pt in itertools.product(*ticks):
            yield "lattice_start", (lambda pt=pt: (forward(np.asarray(pt, dtype=float)), 0.0))

    for method, make in candidates():
        if tried >= search_budget:
            break
        tried += 1
        try:
            got = make()
        except (NoConvergenceError, DegenerateClosingError, ArithmeticError, DomainError):
            continue
        if got is None:
            continue
        pts, defect = got
        if consider(pts, method, defect):
            return replace(best, candidates_tried=tried, message="witness found")
    if best is None:
        return ShadowReport(False, delta, amb.diameter, None, 0, "none", candidates_tried=tried,
                            message="not found within budget")
    return replace(best, success=False, candidates_tried=tried, message="not found within budget")
