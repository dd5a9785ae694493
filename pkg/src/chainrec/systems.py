"""Catalog of discrete dynamical systems with evaluation, inversion and Jacobians.

Every system works on batches: the internal callables take an ``(n, d)`` array and
return the *lift* of the image (no reduction mod 1), so callers that need winding
information (closing, shadowing) can read it off directly. ``SystemSpec.step``
returns canonical points.
"""

from __future__ import annotations

import ast
import math
import operator
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .phase_space import Ambient, wrap_half

SYSTEM_NAMES = (
    "cat_map",
    "morse_gradient_t1",
    "derived_anosov_3d",
    "identity",
    "rotation",
    "linear_torus",
    "user_defined",
)

FD_STEP = 1e-6

CAT_MATRIX = ((2, 1), (1, 1))
# Companion matrix of t^3 - 6t^2 + 5t - 1: det 1, spectrum ~ {0.3080, 0.6431, 5.0489}.
DA_MATRIX = ((0, 0, 1), (1, 0, -5), (0, 1, 6))


@dataclass(frozen=True)
class TangentMap:
    base: np.ndarray
    matrix: np.ndarray
    approximate: bool = False


@dataclass(frozen=True, eq=False)
class SystemSpec:
    name: str
    dim: int
    ambient: Ambient
    params: Mapping[str, Any]
    invertible: bool
    jacobian_available: bool
    jacobian_exact: bool = True
    lift: Callable[[np.ndarray], np.ndarray] = field(default=None, repr=False)
    inverse_lift: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    jacobian_fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    integer_matrix: tuple[tuple[int, ...], ...] | None = None

    def step(self, points) -> np.ndarray:
        """One forward iterate of a batch ``(n, d)``, canonicalized."""
        pts = np.asarray(points, dtype=float)
        out = self.lift(np.atleast_2d(pts))
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite image", stage="evaluate", entity=self.name)
        if not self.ambient.periodic and not np.all(self.ambient.contains(out)):
            raise DomainError("orbit left the ambient box", stage="evaluate", entity=self.name)
        out = self.ambient.canonicalize(out)
        return out[0] if pts.ndim == 1 else out

    def step_back(self, points) -> np.ndarray:
        if not self.invertible:
            raise ConfigError(f"system {self.name!r} is not invertible", stage="evaluate")
        pts = np.asarray(points, dtype=float)
        out = self.ambient.canonicalize(self.inverse_lift(np.atleast_2d(pts)))
        return out[0] if pts.ndim == 1 else out

    def jacobians(self, points) -> np.ndarray:
        """Batch of Jacobian matrices ``(n, d, d)`` at the given points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.jacobian_fn is None:
            raise ConfigError(f"no Jacobian available for {self.name!r}", stage="jacobian")
        jac = self.jacobian_fn(pts)
        if not np.all(np.isfinite(jac)):
            raise NumericalError("non-finite Jacobian", stage="jacobian", entity=self.name)
        return jac

    def to_json(self) -> dict:
        params = {k: v for k, v in self.params.items() if not callable(v)}
        return {"name": self.name, "params": _jsonable(params)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------- #
# evaluation API


def evaluate(sys: SystemSpec, p, steps: int = 1):
    """``f^steps(p)``; ``p`` is a point ``(d,)`` or a batch ``(n, d)``.

    Points given as :class:`fractions.Fraction` are iterated exactly when the
    system is an integer-matrix torus automorphism.
    """
    steps = int(steps)
    if steps < 0 and not sys.invertible:
        raise ConfigError(f"negative steps on non-invertible system {sys.name!r}", stage="evaluate")
    if _is_exact(p):
        if sys.integer_matrix is None:
            raise ConfigError("exact rational iteration needs an integer-matrix torus map", stage="evaluate")
        return _evaluate_exact(sys, p, steps)
    x = np.asarray(p, dtype=float)
    if x.shape[-1] != sys.dim:
        raise DomainError(f"point dimension {x.shape[-1]} != system dimension {sys.dim}")
    if not np.all(sys.ambient.contains(x)):
        raise DomainError("point outside ambient space", stage="evaluate")
    x = sys.ambient.canonicalize(x)
    move = sys.step if steps >= 0 else sys.step_back
    for _ in range(abs(steps)):
        y = move(x)
        if np.array_equal(y, x):
            break  # bitwise fixed: every later iterate repeats it
        x = y
    return x


def _is_exact(p) -> bool:
    if isinstance(p, np.ndarray):
        return p.dtype == object and any(isinstance(c, Fraction) for c in p.ravel())
    try:
        return any(isinstance(c, Fraction) for c in np.asarray(p, dtype=object).ravel())
    except Exception:
        return False


def _evaluate_exact(sys: SystemSpec, p, steps: int):
    mat = sys.integer_matrix
    if steps < 0:
        mat = _integer_inverse(mat)
    pts = np.asarray(p, dtype=object)
    single = pts.ndim == 1
    rows = [list(map(Fraction, r)) for r in np.atleast_2d(pts)]
    out = []
    for x in rows:
        x = [c - math.floor(c) for c in x]
        for _ in range(abs(steps)):
            x = [sum(a * c for a, c in zip(row, x)) for row in mat]
            x = [c - math.floor(c) for c in x]
        out.append(x)
    return out[0] if single else out


def _integer_inverse(mat):
    inv = np.linalg.inv(np.asarray(mat, dtype=float))
    r = np.rint(inv).astype(np.int64)
    if not np.array_equal(r @ np.asarray(mat, dtype=np.int64), np.eye(len(mat), dtype=np.int64)):
        raise ConfigError("integer matrix is not invertible over Z")
    return tuple(tuple(int(v) for v in row) for row in r)


def jacobian(sys: SystemSpec, p) -> TangentMap:
    if not sys.jacobian_available:
        raise ConfigError(f"Jacobian unavailable for {sys.name!r}", stage="jacobian")
    x = sys.ambient.canonicalize(np.asarray(p, dtype=float))
    mat = sys.jacobians(x[None, :])[0]
    return TangentMap(base=x, matrix=mat, approximate=not sys.jacobian_exact)


def orbit(sys: SystemSpec, p, n: int) -> np.ndarray:
    """Points ``p, f(p), ..., f^n(p)`` as an ``(n+1, d)`` array."""
    x = sys.ambient.canonicalize(np.asarray(p, dtype=float))
    out = np.empty((n + 1, sys.dim))
    out[0] = x
    for i in range(n):
        x = sys.step(x)
        out[i + 1] = x
    return out


# --------------------------------------------------------------------------- #
# factory


def make_system(name: str, params: Mapping[str, Any] | None = None) -> SystemSpec:
    params = dict(params or {})
    builders = {
        "cat_map": _cat_map,
        "identity": _identity,
        "rotation": _rotation,
        "linear_torus": _linear_torus,
        "morse_gradient_t1": _morse,
        "derived_anosov_3d": _derived_anosov,
        "user_defined": _user_defined,
    }
    if name not in builders:
        raise ConfigError(f"unknown system {name!r}; expected one of {', '.join(SYSTEM_NAMES)}", stage="system")
    return builders[name](params)


def _linear_system(name, matrix, params) -> SystemSpec:
    A = np.asarray(matrix, dtype=np.int64)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ConfigError("linear_torus matrix must be square", stage="system")
    det = int(round(np.linalg.det(A)))
    if abs(det) != 1:
        raise ConfigError(f"matrix determinant {det} is not +-1: not a torus diffeomorphism", stage="system")
    mat = tuple(tuple(int(v) for v in row) for row in A)
    Af = A.astype(float)
    Ainv = np.asarray(_integer_inverse(mat), dtype=float)
    return SystemSpec(
        name=name,
        dim=d,
        ambient=Ambient.torus(d),
        params=params,
        invertible=True,
        jacobian_available=True,
        lift=lambda x: x @ Af.T,
        inverse_lift=lambda x: x @ Ainv.T,
        jacobian_fn=lambda x: np.broadcast_to(Af, (x.shape[0], d, d)).copy(),
        integer_matrix=mat,
    )


def _cat_map(params):
    if params:
        raise ConfigError("cat_map takes no parameters", stage="system")
    return _linear_system("cat_map", CAT_MATRIX, params)


def _identity(params):
    d = int(params.get("d", params.get("dim", 2)))
    if d < 1:
        raise ConfigError("identity needs d >= 1", stage="system")
    return _linear_system("identity", np.eye(d, dtype=int), {"d": d})


def _linear_torus(params):
    if "matrix" not in params:
        raise ConfigError("linear_torus needs 'matrix'", stage="system")
    m = np.asarray(params["matrix"])
    if not np.array_equal(m, np.round(m)):
        raise ConfigError("linear_torus matrix must have integer entries", stage="system")
    return _linear_system("linear_torus", m.astype(np.int64), {"matrix": m.astype(int).tolist()})


def _rotation(params):
    alpha = np.atleast_1d(np.asarray(params.get("angles", params.get("alpha", [0.5 ** 0.5 - 0.5])), dtype=float))
    d = alpha.size
    return SystemSpec(
        name="rotation",
        dim=d,
        ambient=Ambient.torus(d),
        params={"angles": alpha.tolist()},
        invertible=True,
        jacobian_available=True,
        lift=lambda x: x + alpha,
        inverse_lift=lambda x: x - alpha,
        jacobian_fn=lambda x: np.broadcast_to(np.eye(d), (x.shape[0], d, d)).copy(),
    )


# -- Morse gradient time-1 map ------------------------------------------------

TWO_PI = 2.0 * math.pi


def _morse_field(x):
    # descent flow of h(x, y) = cos(2 pi x) + cos(2 pi y)
    return TWO_PI * np.sin(TWO_PI * x)


def _morse_field_derivative(x):
    return TWO_PI * TWO_PI * np.cos(TWO_PI * x)


def _morse_flow(x, n_steps, t, with_jacobian=False):
    """Fixed-step RK4 of the descent flow; optional variational equation.

    The field is diagonal (each coordinate evolves on its own), so the variational
    matrix stays diagonal and is integrated as a vector.
    """
    h = t / n_steps
    y = np.array(x, dtype=float)
    J = np.ones_like(y) if with_jacobian else None
    for _ in range(n_steps):
        k1 = _morse_field(y)
        y2 = y + 0.5 * h * k1
        k2 = _morse_field(y2)
        y3 = y + 0.5 * h * k2
        k3 = _morse_field(y3)
        y4 = y + h * k3
        k4 = _morse_field(y4)
        if with_jacobian:
            j1 = _morse_field_derivative(y) * J
            j2 = _morse_field_derivative(y2) * (J + 0.5 * h * j1)
            j3 = _morse_field_derivative(y3) * (J + 0.5 * h * j2)
            j4 = _morse_field_derivative(y4) * (J + h * j3)
            J = J + h / 6.0 * (j1 + 2 * j2 + 2 * j3 + j4)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y, J


def _morse(params):
    n_steps = int(params.get("steps", 64))
    t = float(params.get("time", 1.0))
    if n_steps < 1 or t <= 0:
        raise ConfigError("morse_gradient_t1 needs steps >= 1 and time > 0", stage="system")

    def jac(x):
        _, J = _morse_flow(x, n_steps, t, with_jacobian=True)
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = J[:, 0]
        out[:, 1, 1] = J[:, 1]
        return out

    # Mathematically a diffeomorphism, but the time-1 map contracts by ~e^-39.5
    # near the minimum, so the inverse is not computable in double precision.
    return SystemSpec(
        name="morse_gradient_t1",
        dim=2,
        ambient=Ambient.torus(2),
        params={"steps": n_steps, "time": t},
        invertible=False,
        jacobian_available=True,
        lift=lambda x: _morse_flow(x, n_steps, t)[0],
        jacobian_fn=jac,
    )


# -- derived from Anosov on T^3 -------------------------------------------------


def hermite_bump(s):
    """Cubic Hermite bump: 1 at 0, 0 for s >= 1, C^1 with zero slope at both ends."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return 1.0 - 3.0 * s * s + 2.0 * s ** 3


def hermite_bump_derivative(s):
    s = np.asarray(s, dtype=float)
    inside = (s >= 0) & (s < 1)
    return np.where(inside, -6.0 * s + 6.0 * s * s, 0.0)


# min over [0, 1] of bump(s) + s * bump'(s) = 1 - 9 s^2 + 8 s^3, reached at s = 3/4
_BUMP_SLOPE_FLOOR = -0.6875


def _derived_anosov(params):
    a = float(params.get("a", 4.0))
    b = float(params.get("b", 2.0))
    rho = float(params.get("radius", 0.1))
    kappa = float(params.get("kappa", 1.25))
    profile = params.get("profile", "hermite")
    if a < 1 or b < 1:
        raise ConfigError("derived_anosov_3d needs a, b >= 1", stage="system")
    if profile != "hermite":
        raise ConfigError(f"unknown deformation profile {profile!r}", stage="system")
    A = np.asarray(DA_MATRIX, dtype=float)
    evals, P = np.linalg.eig(A)
    order = np.argsort(-np.abs(evals))  # (unstable, weak stable, strong stable)
    evals = evals.real[order]
    lam_u, lam_2, lam_1 = evals
    P = P.real[:, order]
    P /= np.linalg.norm(P, axis=0)
    # local coordinates (x, y, z) = (unstable, strong stable, weak stable)
    P = P[:, [0, 2, 1]]
    Pinv = np.linalg.inv(P)
    floor = lam_2 + (kappa - lam_2) * _BUMP_SLOPE_FLOOR if kappa > lam_2 else min(kappa, lam_2)
    if kappa <= 0 or floor <= 0 or kappa >= lam_u:
        raise ConfigError(
            f"kappa={kappa} breaks invertibility or domination (needs 0 < kappa < "
            f"{lam_2 * (1 - 1 / _BUMP_SLOPE_FLOOR):.4f})",
            stage="system",
        )
    if np.linalg.norm(P, 2) * rho / a >= 0.25:
        raise ConfigError("deformation ball too large for the torus", stage="system")
    scale = np.array([a, a * b, a * b])

    def local(x):
        v = wrap_half(x)  # fixed point p = 0
        w = v @ Pinv.T
        W = w * scale
        r = np.linalg.norm(W, axis=1)
        return w, W, r / rho

    def lift(x):
        w, _, s = local(x)
        mu_minus = np.where(s < 1, (kappa - lam_2) * hermite_bump(s), 0.0)
        corr = np.where((s < 1)[:, None], (mu_minus * w[:, 2])[:, None] * P[:, 2][None, :], 0.0)
        return x @ A.T + corr

    def jac(x):
        w, W, s = local(x)
        n = x.shape[0]
        Jw = np.zeros((n, 3, 3))
        Jw[:, 0, 0] = lam_u
        Jw[:, 1, 1] = lam_1
        mu = lam_2 + np.where(s < 1, (kappa - lam_2) * hermite_bump(s), 0.0)
        Jw[:, 2, 2] = mu
        with np.errstate(invalid="ignore", divide="ignore"):
            ds = np.where((s > 0)[:, None], scale * W / (np.linalg.norm(W, axis=1) * rho)[:, None], 0.0)
        dmu = (kappa - lam_2) * hermite_bump_derivative(s)[:, None] * ds
        Jw[:, 2, :] += w[:, 2:3] * dmu
        return P @ Jw @ Pinv

    Ainv = np.linalg.inv(A)
    span = 1.0 / floor

    def inverse_lift(y):
        x0 = y @ Ainv.T
        # candidate inside the deformation ball: invert coordinate-wise in eigen-coordinates
        v1 = wrap_half(y)
        w1 = v1 @ Pinv.T
        wx = w1[:, 0] / lam_u
        wy = w1[:, 1] / lam_1
        target = w1[:, 2]
        lo = -np.abs(target) * span - 1e-300
        hi = np.abs(target) * span + 1e-300
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            W = np.stack([a * wx, a * b * wy, a * b * mid], axis=1)
            s = np.linalg.norm(W, axis=1) / rho
            g = (lam_2 + np.where(s < 1, (kappa - lam_2) * hermite_bump(s), 0.0)) * mid - target
            lo = np.where(g < 0, mid, lo)
            hi = np.where(g < 0, hi, mid)
        w_in = np.stack([wx, wy, 0.5 * (lo + hi)], axis=1)
        x1 = y - v1 + w_in @ P.T
        err0 = np.linalg.norm(wrap_half(lift(x0) - y), axis=1)
        err1 = np.linalg.norm(wrap_half(lift(x1) - y), axis=1)
        return np.where((err1 < err0)[:, None], x1, x0)

    return SystemSpec(
        name="derived_anosov_3d",
        dim=3,
        ambient=Ambient.torus(3),
        params={"a": a, "b": b, "radius": rho, "kappa": kappa, "profile": profile},
        invertible=True,
        jacobian_available=True,
        lift=lift,
        inverse_lift=inverse_lift,
        jacobian_fn=jac,
    )


def deformation_support(sys: SystemSpec, points) -> np.ndarray:
    """Mask of points inside the deformation ball of a ``derived_anosov_3d`` system."""
    if sys.name != "derived_anosov_3d":
        raise ConfigError("deformation support only defined for derived_anosov_3d")
    p = sys.params
    A = np.asarray(DA_MATRIX, dtype=float)
    evals, P = np.linalg.eig(A)
    order = np.argsort(-np.abs(evals))
    P = P.real[:, order]
    P /= np.linalg.norm(P, axis=0)
    P = P[:, [0, 2, 1]]
    w = wrap_half(np.atleast_2d(points)) @ np.linalg.inv(P).T
    W = w * np.array([p["a"], p["a"] * p["b"], p["a"] * p["b"]])
    return np.linalg.norm(W, axis=1) / p["radius"] < 1


# -- user defined ----------------------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh,
    "arctan": np.arctan, "atan": np.arctan, "floor": np.floor,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.Div: operator.truediv, ast.Pow: operator.pow, ast.Mod: operator.mod,
}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def compile_expression(src: str, d: int) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an arithmetic expression over ``x0..x{d-1}`` (or ``x, y, z``) to a batch function.

    Only numbers, coordinate names, ``pi``, ``e``, the functions in ``_FUNCS`` and
    arithmetic operators are accepted.
    """
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc.msg}", stage="system") from None
    names = {f"x{i}": i for i in range(d)}
    if d <= 3:
        names.update({n: i for i, n in enumerate("xyz"[:d])})

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            v = float(node.value)
            return lambda X: v
        if isinstance(node, ast.Name):
            if node.id in names:
                i = names[node.id]
                return lambda X: X[:, i]
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda X: v
            raise ConfigError(f"unknown name {node.id!r} in expression {src!r}", stage="system")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, l, r = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda X: op(l(X), r(X))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            op, o = _UNOPS[type(node.op)], build(node.operand)
            return lambda X: op(o(X))
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            fn, arg = _FUNCS[node.func.id], build(node.args[0])
            return lambda X: fn(arg(X))
        raise ConfigError(f"unsupported construct in expression {src!r}", stage="system")

    f = build(tree)
    return lambda X: np.broadcast_to(np.asarray(f(X), dtype=float), (X.shape[0],))


def _user_defined(params):
    fd_enabled = bool(params.get("finite_differences", True))
    if "evaluator" in params:
        fn = params["evaluator"]
        if not callable(fn):
            raise ConfigError("user_defined evaluator must be callable", stage="system")
        d = int(params.get("dim", 2))
        if not params.get("reentrant", True):
            lock = threading.Lock()
            raw = fn

            def fn(X):
                with lock:
                    return raw(X)

        lift = lambda X: np.asarray(fn(X), dtype=float).reshape(X.shape)
        jac_src = params.get("jacobian_fn")
        inv = params.get("inverse_fn")
    elif "map" in params:
        exprs = list(params["map"])
        d = len(exprs)
        comps = [compile_expression(s, d) for s in exprs]
        lift = lambda X: np.stack([c(X) for c in comps], axis=1)
        jac_src = None
        if "jacobian" in params:
            rows = params["jacobian"]
            if len(rows) != d or any(len(r) != d for r in rows):
                raise ConfigError("jacobian expressions must form a d x d array", stage="system")
            jcomp = [[compile_expression(s, d) for s in r] for r in rows]
            jac_src = lambda X: np.stack([np.stack([c(X) for c in r], axis=1) for r in jcomp], axis=1)
        inv = None
        if "inverse" in params:
            icomp = [compile_expression(s, d) for s in params["inverse"]]
            inv = lambda X: np.stack([c(X) for c in icomp], axis=1)
    else:
        raise ConfigError("user_defined system needs 'map' expressions or an 'evaluator'", stage="system")

    amb = params.get("ambient", "torus")
    if amb == "torus":
        ambient = Ambient.torus(d)
    else:
        ambient = Ambient.box(amb["lower"], amb["upper"])
        if ambient.dim != d:
            raise ConfigError("ambient dimension does not match the map", stage="system")

    exact = jac_src is not None
    if jac_src is not None:
        jac = jac_src
    elif fd_enabled:
        jac = lambda X: finite_difference_jacobian(lift, X, ambient.periodic)
    else:
        jac = None
    return SystemSpec(
        name="user_defined",
        dim=d,
        ambient=ambient,
        params=params,
        invertible=inv is not None,
        jacobian_available=jac is not None,
        jacobian_exact=exact,
        lift=lift,
        inverse_lift=inv,
        jacobian_fn=jac,
    )


def finite_difference_jacobian(lift, X, periodic: bool, h: float = FD_STEP) -> np.ndarray:
    n, d = X.shape
    out = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        diff = lift(X + e) - lift(X - e)
        if periodic:
            diff = wrap_half(diff)
        out[:, :, j] = diff / (2 * h)
    return out
