"""Periodic linear cocycles along periodic orbits and hyperbolicity checks.

Indexing is zero based: ``matrices[i]`` maps the fibre over ``p_i`` to the fibre
over ``p_{i+1}``, and ``block(i, N) = A_{i+N-1} ... A_i``. All contraction and
domination thresholds use a base constant ``b > 1`` (``e`` by default): a block
contracts when its norm is at most ``1/b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, InconsistencyError, NumericalError
from .orbit_closing import PeriodicOrbit
from .systems import SystemSpec

BASE = math.e
INVARIANCE_TOL = 1e-8
ZERO_EXPONENT_TOL = 1e-3
_SLACK = 1e-12


def _check_base(base: float) -> float:
    if not base > 1:
        raise ConfigError("base constant must exceed 1", stage="cocycle")
    return float(base)


@dataclass(frozen=True, eq=False)
class PeriodicCocycle:
    matrices: np.ndarray = field(repr=False)
    bound: float

    @classmethod
    def from_matrices(cls, matrices) -> "PeriodicCocycle":
        mats = np.array(matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or mats.shape[0] < 1:
            raise ConfigError("a cocycle is a non-empty list of square matrices", stage="cocycle")
        if not np.all(np.isfinite(mats)):
            raise NumericalError("non-finite cocycle entry", stage="cocycle")
        bound = 0.0
        for i, a in enumerate(mats):
            sv = np.linalg.svd(a, compute_uv=False)
            if not sv[-1] > 1e-300:
                raise NumericalError("singular cocycle matrix", stage="cocycle", entity=i)
            bound = max(bound, sv[0], 1.0 / sv[-1])
        mats.setflags(write=False)
        return cls(mats, float(bound))

    @property
    def period(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def matrix(self, i: int) -> np.ndarray:
        return self.matrices[i % self.period]

    def block(self, i: int, n: int) -> np.ndarray:
        out = np.eye(self.dim)
        for j in range(i, i + n):
            out = self.matrix(j) @ out
        return out

    def product(self) -> np.ndarray:
        """``A_tau ... A_1``, the return map over the base point ``p_0``."""
        return self.block(0, self.period)

    def rotate(self, k: int) -> "PeriodicCocycle":
        return PeriodicCocycle.from_matrices(np.roll(self.matrices, -k, axis=0))

    def inverse(self) -> "PeriodicCocycle":
        """Cocycle of ``f^{-1}``: inverses in reverse order."""
        return PeriodicCocycle.from_matrices(np.linalg.inv(self.matrices[::-1]))

    def restrict(self, split: "SplittingSpec") -> tuple["PeriodicCocycle", "PeriodicCocycle"]:
        """Restrictions to ``E`` and ``F`` in the orthonormal bases of ``split``."""
        split.check_invariant(self)
        out = []
        for bases in (split.bases_e, split.bases_f):
            mats = [bases[(i + 1) % self.period].T @ self.matrix(i) @ bases[i] for i in range(self.period)]
            out.append(PeriodicCocycle.from_matrices(mats))
        return out[0], out[1]

    def to_json(self) -> dict:
        return {"period": self.period, "matrices": self.matrices.tolist(), "bound": self.bound}


def cocycle_from_orbit(sys: SystemSpec, orbit: PeriodicOrbit) -> PeriodicCocycle:
    if not sys.jacobian_available:
        raise ConfigError(f"system {sys.name!r} has no Jacobian", stage="cocycle")
    return PeriodicCocycle.from_matrices(sys.jacobians(np.atleast_2d(orbit.points)))


# --------------------------------------------------------------------------- #
# spectra


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: tuple[float, ...]
    source: str
    iterations: int = 0
    drift: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def multiplicities(self, tol: float = 1e-9) -> list[tuple[float, int]]:
        groups: list[list[float]] = []
        for lam in self.exponents:
            if groups and abs(lam - groups[-1][-1]) <= tol:
                groups[-1].append(lam)
            else:
                groups.append([lam])
        return [(float(np.mean(g)), len(g)) for g in groups]

    def index(self, zero_tol: float = ZERO_EXPONENT_TOL) -> int | None:
        """Stable dimension, or ``None`` when some exponent is within ``zero_tol`` of 0."""
        lam = np.asarray(self.exponents)
        if np.any(np.abs(lam) <= zero_tol):
            return None
        return int(np.sum(lam < 0))

    def to_json(self) -> dict:
        out = {"exponents": list(self.exponents), "source": self.source}
        if self.source == "qr-estimate":
            out.update(iterations=self.iterations, drift=self.drift)
        return out


def _scaled_product(c: PeriodicCocycle) -> tuple[np.ndarray, float]:
    p = np.eye(c.dim)
    log_scale = 0.0
    for a in c.matrices:
        p = a @ p
        s = np.linalg.norm(p, 2)
        p /= s
        log_scale += math.log(s)
    return p, log_scale


def periodic_eigenvalues(c: PeriodicCocycle) -> tuple[np.ndarray, float]:
    """Eigenvalues of the normalized product and the log of the dropped scale."""
    p, log_scale = _scaled_product(c)
    try:
        ev = np.linalg.eigvals(p)
    except np.linalg.LinAlgError:
        ev = None
    if ev is None or not np.all(np.isfinite(ev)):
        ev = np.diag(scipy.linalg.schur(p, output="complex")[0])
    if not np.all(np.isfinite(ev)):
        raise NumericalError("eigenvalue computation failed", stage="cocycle")
    return ev, log_scale


def _log_moduli(c: PeriodicCocycle) -> np.ndarray:
    ev, log_scale = periodic_eigenvalues(c)
    with np.errstate(divide="ignore"):
        return np.sort(np.log(np.abs(ev)) + log_scale)


def exponents_periodic(c: PeriodicCocycle) -> LyapunovSpectrum:
    """Exact spectrum ``log|eigenvalues of the product| / tau``.

    Eigenvalues far below the dominant one lose relative accuracy (or underflow)
    in the forward product, so the weak half is read off the inverse cocycle,
    where those directions dominate.
    """
    fwd = _log_moduli(c)
    try:
        inv = c.inverse()
        back = -_log_moduli(inv)[::-1]
    except (NumericalError, np.linalg.LinAlgError):
        back = np.full_like(fwd, -np.inf)
    # the top of each spectrum is accurate; split at the midpoint of the two extremes
    mid = 0.5 * (fwd[-1] + back[0]) if np.isfinite(back[0]) else -np.inf
    lam = np.where((fwd >= mid) | ~np.isfinite(back), fwd, back)
    if not np.all(np.isfinite(lam)):
        raise NumericalError("eigenvalue underflow in the period product", stage="cocycle")
    lam = np.sort(lam / c.period)
    return LyapunovSpectrum(tuple(float(v) for v in lam), "exact-periodic")


def lyapunov_qr(sys: SystemSpec, start, n: int, burn_in: int = 100) -> LyapunovSpectrum:
    """QR estimate of the Lyapunov spectrum along the forward orbit of ``start``."""
    if not sys.jacobian_available:
        raise ConfigError(f"system {sys.name!r} has no Jacobian", stage="exponents")
    if n < 1 or burn_in < 0 or n < 10 * burn_in:
        raise ConfigError("need n >= 1 and n >= 10 * burn_in", stage="exponents")
    x = sys.ambient.canonicalize(np.asarray(start, dtype=float).reshape(sys.dim))
    q = np.eye(sys.dim)
    sums = np.zeros(sys.dim)
    half = None
    for k in range(burn_in + n):
        jac = sys.jacobians(x[None, :])[0]
        if not np.all(np.isfinite(jac)):
            raise NumericalError("non-finite Jacobian", stage="exponents", entity=k)
        q, r = np.linalg.qr(jac @ q)
        if k >= burn_in:
            sums += np.log(np.abs(np.diag(r)))
            if k - burn_in + 1 == n // 2:
                half = np.sort(sums / (n // 2))
        x = sys.step(x)
    est = np.sort(sums / n)
    drift = float(np.max(np.abs(est - half))) if half is not None else float("inf")
    return LyapunovSpectrum(tuple(float(v) for v in est), "qr-estimate", iterations=n, drift=drift)


# --------------------------------------------------------------------------- #
# splittings


def _orth(m: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(m)
    return q


@dataclass(frozen=True, eq=False)
class SplittingSpec:
    """Periodic splitting ``E + F`` given by orthonormal bases over each base point."""

    bases_e: np.ndarray = field(repr=False)
    bases_f: np.ndarray = field(repr=False)

    def __post_init__(self):
        e, f = np.asarray(self.bases_e), np.asarray(self.bases_f)
        if e.ndim != 3 or f.ndim != 3 or e.shape[0] != f.shape[0] or e.shape[1] != f.shape[1]:
            raise ConfigError("splitting bases must be (tau, d, k) arrays", stage="cocycle")
        if e.shape[2] + f.shape[2] != e.shape[1]:
            raise ConfigError("dim E + dim F must equal d", stage="cocycle")
        for i in range(e.shape[0]):
            sv = np.linalg.svd(np.hstack([e[i], f[i]]), compute_uv=False)
            if sv.size and sv[-1] < 1e-8:
                raise ConfigError("E and F are not complementary", stage="cocycle", entity=i)

    @classmethod
    def from_bases(cls, bases_e, bases_f) -> "SplittingSpec":
        e = np.asarray([_orth(np.asarray(b, float)) for b in bases_e])
        f = np.asarray([_orth(np.asarray(b, float)) for b in bases_f])
        return cls(e, f)

    @property
    def dim_e(self) -> int:
        return self.bases_e.shape[2]

    @property
    def dim_f(self) -> int:
        return self.bases_f.shape[2]

    @property
    def period(self) -> int:
        return self.bases_e.shape[0]

    def swapped(self) -> "SplittingSpec":
        return SplittingSpec(self.bases_f, self.bases_e)

    def invariance_residual(self, c: PeriodicCocycle) -> float:
        if c.period % self.period and self.period % c.period:
            raise ConfigError("splitting and cocycle periods are incompatible", stage="cocycle")
        worst = 0.0
        for i in range(max(c.period, self.period)):
            a = c.matrix(i)
            for bases in (self.bases_e, self.bases_f):
                q0, q1 = bases[i % self.period], bases[(i + 1) % self.period]
                img = a @ q0
                res = img - q1 @ (q1.T @ img)
                worst = max(worst, np.linalg.norm(res, 2) / np.linalg.norm(a, 2))
        return float(worst)

    def check_invariant(self, c: PeriodicCocycle, tol: float = INVARIANCE_TOL) -> None:
        res = self.invariance_residual(c)
        if res > tol:
            raise ConfigError(f"splitting is not invariant (residual {res:.3g})", stage="cocycle")


def split_from_eigen(c: PeriodicCocycle, dim_e: int) -> SplittingSpec:
    """Splitting into the ``dim_e`` weakest and the remaining eigendirections of the product.

    Requires a strict gap in eigenvalue moduli between the two groups; the
    subspaces over the other base points are transported by the cocycle.
    """
    d = c.dim
    if not 0 < dim_e < d:
        raise ConfigError("dim E must lie strictly between 0 and d", stage="cocycle")
    p, _ = _scaled_product(c)
    ev, _ = periodic_eigenvalues(c)
    mod = np.sort(np.abs(ev))
    if not mod[dim_e] > mod[dim_e - 1] * (1 + 1e-9):
        raise ConfigError("no eigenvalue-modulus gap at this dimension", stage="cocycle")
    thr = math.sqrt(mod[dim_e] * mod[dim_e - 1])
    te, ze, ke = scipy.linalg.schur(p, sort=lambda re, im: math.hypot(re, im) < thr)
    tf, zf, kf = scipy.linalg.schur(p, sort=lambda re, im: math.hypot(re, im) > thr)
    if ke != dim_e or kf != d - dim_e:
        raise NumericalError("Schur reordering did not separate the spectrum", stage="cocycle")
    e = [ze[:, :dim_e]]
    f = [zf[:, : d - dim_e]]
    for i in range(c.period - 1):
        e.append(_orth(c.matrix(i) @ e[-1]))
        f.append(_orth(c.matrix(i) @ f[-1]))
    return SplittingSpec(np.asarray(e), np.asarray(f))


# --------------------------------------------------------------------------- #
# contraction, domination, Pliss points


@dataclass(frozen=True)
class CheckResult:
    holds: bool
    margin: float
    N: int
    worst_index: int = 0

    def to_json(self) -> dict:
        return {"holds": self.holds, "margin": self.margin, "N": self.N, "worst_index": self.worst_index}


def check_contraction_at_period(c: PeriodicCocycle, N: int, base: float = BASE) -> CheckResult:
    """Uniform contraction at the period with blocks of length ``N``.

    For every offset ``i`` the product of the norms of the ``m = floor(tau/N)``
    consecutive ``N``-blocks starting at ``i`` must be at most ``base^-m``;
    when ``N`` does not divide ``tau`` the trailing partial block is ignored.
    The margin is the worst value of ``-m log(base) - log(product)``.
    """
    base = _check_base(base)
    if not 1 <= N <= c.period:
        raise ConfigError("N must satisfy 1 <= N <= tau", stage="cocycle")
    m = c.period // N
    lognorm = np.array([math.log(np.linalg.norm(c.block(i, N), 2)) for i in range(c.period)])
    worst, where = math.inf, 0
    for i in range(c.period):
        total = sum(lognorm[(i + j * N) % c.period] for j in range(m))
        margin = -m * math.log(base) - total
        if margin < worst:
            worst, where = margin, i
    return CheckResult(bool(worst >= -_SLACK), float(worst), N, where)


def check_domination(c: PeriodicCocycle, split: SplittingSpec, N: int, base: float = BASE) -> CheckResult:
    """``N``-domination of ``E`` by ``F``: ``|block u| <= |block v| / base`` for unit ``u in E, v in F``.

    The margin is the worst ``log(min sv of block|F) - log(max sv of block|E) - log(base)``.
    """
    base = _check_base(base)
    if N < 1:
        raise ConfigError("N must be positive", stage="cocycle")
    split.check_invariant(c)
    worst, where = math.inf, 0
    for i in range(max(c.period, split.period)):
        b = c.block(i, N)
        se = np.linalg.svd(b @ split.bases_e[i % split.period], compute_uv=False)[0]
        sf = np.linalg.svd(b @ split.bases_f[i % split.period], compute_uv=False)[-1]
        margin = math.log(sf) - math.log(se) - math.log(base)
        if margin < worst:
            worst, where = margin, i
    return CheckResult(bool(worst >= -_SLACK), float(worst), N, where)


def dominated_splittings(c: PeriodicCocycle, N: int, base: float = BASE) -> list[int]:
    """Dimensions ``k`` whose eigen-splitting (``k`` weakest directions vs rest) is ``N``-dominated."""
    out = []
    for k in range(1, c.dim):
        try:
            split = split_from_eigen(c, k)
        except ConfigError:
            continue
        if check_domination(c, split, N, base).holds:
            out.append(k)
    return out


@dataclass(frozen=True)
class PlissReport:
    bundle: str
    N: int
    indices: tuple[int, ...]
    proportion: float
    period: int

    def to_json(self) -> dict:
        return {
            "bundle": self.bundle, "N": self.N, "indices": list(self.indices),
            "proportion": self.proportion, "period": self.period,
        }


def _pliss_partial_sums(lognorm: np.ndarray, i: int, N: int, tau: int, blocks: int, base: float) -> np.ndarray:
    steps = np.array([lognorm[(i + j * N) % tau] for j in range(blocks)]) + math.log(base)
    return np.cumsum(steps)


def pliss_points(
    c: PeriodicCocycle,
    N: int,
    split: SplittingSpec | None = None,
    bundle: str = "E",
    base: float = BASE,
) -> PlissReport:
    """Indices ``i`` that are ``N``-hyperbolic along the bundle.

    ``i`` qualifies when for every ``k >= 1`` the product of the norms of the
    ``k`` consecutive ``N``-blocks starting at ``i`` is at most ``base^-k``.
    The block sequence is periodic with ``P = lcm(tau, N) / N`` blocks (padding
    by cyclic repetition when ``N`` does not divide ``tau``), so ``k <= P``
    suffices; a scan over ``2P`` blocks confirms every verdict.
    """
    base = _check_base(base)
    if N < 1:
        raise ConfigError("N must be positive", stage="cocycle")
    if split is not None:
        ce, cf = c.restrict(split)
        c = {"E": ce, "F": cf}.get(bundle)
        if c is None:
            raise ConfigError("bundle must be 'E' or 'F'", stage="cocycle")
    tau = c.period
    P = math.lcm(tau, N) // N
    lognorm = np.array([math.log(np.linalg.norm(c.block(i, N), 2)) for i in range(tau)])
    hits = []
    for i in range(tau):
        short = bool(np.all(_pliss_partial_sums(lognorm, i, N, tau, P, base) <= _SLACK))
        long = bool(np.all(_pliss_partial_sums(lognorm, i, N, tau, 2 * P, base) <= _SLACK))
        if short != long:
            raise InconsistencyError("one-period and two-period Pliss scans disagree", stage="cocycle", entity=i)
        if short:
            hits.append(i)
    return PlissReport(bundle, N, tuple(hits), len(hits) / tau, tau)


# --------------------------------------------------------------------------- #
# perturbation statements: hypothesis and conclusion checkers


def perturbation_distance(a: PeriodicCocycle, b: PeriodicCocycle) -> float:
    """``max_i max(|A_i - B_i|, |A_i^-1 - B_i^-1|)`` over one common period."""
    if a.dim != b.dim:
        raise ConfigError("cocycles have different dimensions", stage="cocycle")
    n = math.lcm(a.period, b.period)
    worst = 0.0
    for i in range(n):
        ai, bi = a.matrix(i), b.matrix(i)
        worst = max(
            worst,
            np.linalg.norm(ai - bi, 2),
            np.linalg.norm(np.linalg.inv(ai) - np.linalg.inv(bi), 2),
        )
    return float(worst)


@dataclass(frozen=True)
class DichotomyCheck:
    close: bool
    first_case: bool
    second_case: bool

    @property
    def consistent(self) -> bool:
        """The statement is satisfied by this pair when the perturbation is close and a case holds."""
        return self.close and (self.first_case or self.second_case)


def check_contraction_dichotomy(a, b, eps: float, N: int, base: float = BASE) -> DichotomyCheck:
    """Either ``A`` is ``N``-uniformly contracted at the period, or the close ``B`` has a positive exponent."""
    return DichotomyCheck(
        perturbation_distance(a, b) <= eps,
        check_contraction_at_period(a, min(N, a.period), base).holds,
        max(exponents_periodic(b).exponents) > 0,
    )


def check_real_spectrum(a, b, eps: float, tol: float = 1e-9) -> DichotomyCheck:
    """``B`` close to ``A`` with real simple eigenvalues and exponent-wise ``eps``-close spectra.

    ``first_case`` reports real simple eigenvalues of ``B``; ``second_case`` the
    exponent closeness. Both are required by the statement.
    """
    ev, _ = periodic_eigenvalues(b)
    real = bool(np.all(np.abs(ev.imag) <= tol * np.maximum(1.0, np.abs(ev))))
    re = np.sort(ev.real)
    simple = real and bool(np.all(np.diff(re) > tol * np.maximum(1.0, np.abs(re[1:]))))
    la, lb = np.array(exponents_periodic(a).exponents), np.array(exponents_periodic(b).exponents)
    return DichotomyCheck(perturbation_distance(a, b) <= eps, simple, bool(np.all(np.abs(la - lb) <= eps)))


def check_domination_dichotomy(a, b, eps: float, N: int, base: float = BASE, tol: float = 1e-9) -> DichotomyCheck:
    """Either ``A`` has a non-trivial ``N``-dominated eigen-splitting, or the close ``B``
    has real eigenvalues all of one modulus."""
    ev, _ = periodic_eigenvalues(b)
    real = bool(np.all(np.abs(ev.imag) <= tol * np.maximum(1.0, np.abs(ev))))
    mod = np.abs(ev)
    same = real and bool(mod.max() - mod.min() <= tol * mod.max())
    return DichotomyCheck(perturbation_distance(a, b) <= eps, bool(dominated_splittings(a, N, base)), same)


# --------------------------------------------------------------------------- #
# classification of chain classes


@dataclass(frozen=True)
class OrbitHyperbolicity:
    period: int
    exponents: tuple[float, ...]
    index: int | None
    dominated_at: int | None

    def to_json(self) -> dict:
        return {
            "period": self.period, "exponents": list(self.exponents),
            "index": self.index, "dominated_at": self.dominated_at,
        }


@dataclass(frozen=True)
class Classification:
    class_id: int
    verdict: str
    index: int | None
    orbits: tuple[OrbitHyperbolicity, ...] = ()

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id, "verdict": self.verdict, "index": self.index,
            "orbits": [o.to_json() for o in self.orbits],
        }


def orbit_hyperbolicity(
    sys: SystemSpec, orbit: PeriodicOrbit, N_max: int = 8,
    zero_tol: float = ZERO_EXPONENT_TOL, base: float = BASE,
) -> OrbitHyperbolicity:
    c = cocycle_from_orbit(sys, orbit)
    spec = exponents_periodic(c)
    idx = spec.index(zero_tol)
    dominated = None
    if idx is not None and 0 < idx < sys.dim:
        try:
            split = split_from_eigen(c, idx)
        except ConfigError:
            split = None
        if split is not None:
            dominated = next(
                (N for N in range(1, N_max + 1) if check_domination(c, split, N, base).holds), None
            )
    return OrbitHyperbolicity(orbit.period, spec.exponents, idx, dominated)


def classify_class(
    sys: SystemSpec,
    cls,
    orbits: Sequence[PeriodicOrbit],
    N_max: int = 8,
    zero_tol: float = ZERO_EXPONENT_TOL,
    base: float = BASE,
) -> Classification:
    """Hyperbolicity verdict for a chain class from its periodic orbits.

    Verdicts: ``sink``, ``source``, ``saddle, index i`` (one index, stable and
    unstable eigen-bundles dominated at some ``N <= N_max`` on every orbit),
    ``mixed-index``, ``nonuniform`` (an exponent within ``zero_tol`` of zero or
    no domination up to ``N_max``), ``unclassified: no periodic data``.
    """
    if not orbits:
        return Classification(cls.id, "unclassified: no periodic data", None)
    grid = cls.boxes.grid
    for orb in orbits:
        ids = grid.box_ids_of(np.atleast_2d(orb.points))
        if not np.all(np.isin(ids, cls.boxes.ids)):
            raise ConfigError("periodic orbit leaves the class boxes", stage="classify", entity=cls.id)
    recs = tuple(orbit_hyperbolicity(sys, o, N_max, zero_tol, base) for o in orbits)
    indices = {r.index for r in recs}
    if None in indices:
        return Classification(cls.id, "nonuniform", None, recs)
    if len(indices) > 1:
        return Classification(cls.id, "mixed-index", None, recs)
    (idx,) = indices
    if idx == sys.dim:
        return Classification(cls.id, "sink", idx, recs)
    if idx == 0:
        return Classification(cls.id, "source", idx, recs)
    if all(r.dominated_at is not None for r in recs):
        return Classification(cls.id, f"saddle, index {idx}", idx, recs)
    return Classification(cls.id, "nonuniform", idx, recs)
