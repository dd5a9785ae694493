"""Run configuration, pipeline orchestration and artifact export.

A run builds the box transition graph, extracts the chain classes and their
order, then optionally a filtration, a complete Lyapunov function, periodic
orbits seeded inside every recurrent class, their exponents, and a
hyperbolicity verdict per class. Everything except the ``timing`` section of the
JSON report is a deterministic function of the configuration and seed.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import chain_graph as cg
from .cocycle import (
    BASE,
    ZERO_EXPONENT_TOL,
    Classification,
    classify_class,
    cocycle_from_orbit,
    exponents_periodic,
)
from .errors import BudgetExceededError, ChainrecError, ConfigError, NumericalError
from .orbit_closing import PeriodicOrbit, PseudoOrbit, close_to_periodic
from .phase_space import MAX_DEPTH, BoxGrid
from .systems import SystemSpec, make_system

SCHEMA_VERSION = "1"
STAGES = ("classes", "filtration", "conley", "closing", "exponents", "classify")
STAGE_DEPENDENCIES = {
    "classify": ("closing", "exponents"),
    "exponents": ("closing",),
    "closing": ("classes",),
    "filtration": ("classes",),
    "conley": ("classes",),
}
_DEFAULTS: dict[str, Any] = {
    "system": {"name": "cat_map", "params": {}},
    "depth": 8,
    "epsilon": "box_diameter",
    "samples_per_axis": 3,
    "lipschitz": None,
    "stages": {s: True for s in STAGES},
    "outputs": {"json": None, "dot": None, "csv": None},
    "seed": 0,
    "closing": {"max_period": 2, "seeds_per_class": 4, "tol": 1e-10},
    "exponents": {"N_max": 8, "zero_tol": ZERO_EXPONENT_TOL, "base": BASE},
    "budget": {"max_boxes": 1 << 22, "max_edges": 1 << 28},
    "backend": None,
}


@dataclass(frozen=True)
class RunConfig:
    system: str
    params: Mapping[str, Any]
    depth: int
    epsilon: float | str
    samples_per_axis: int = 3
    lipschitz: float | None = None
    stages: Mapping[str, bool] = field(default_factory=lambda: {s: True for s in STAGES})
    outputs: Mapping[str, str | None] = field(default_factory=lambda: dict(_DEFAULTS["outputs"]))
    seed: int = 0
    closing: Mapping[str, Any] = field(default_factory=lambda: dict(_DEFAULTS["closing"]))
    exponents: Mapping[str, Any] = field(default_factory=lambda: dict(_DEFAULTS["exponents"]))
    budget: Mapping[str, int] = field(default_factory=lambda: dict(_DEFAULTS["budget"]))
    backend: str | None = None

    def __post_init__(self):
        if not isinstance(self.depth, int) or not 1 <= self.depth <= MAX_DEPTH:
            raise ConfigError(f"depth must be an integer in [1, {MAX_DEPTH}]", stage="config")
        if isinstance(self.epsilon, str):
            if self.epsilon != "box_diameter":
                raise ConfigError("epsilon must be a number or 'box_diameter'", stage="config")
        elif not (isinstance(self.epsilon, (int, float)) and self.epsilon >= 0):
            raise ConfigError("epsilon must be >= 0", stage="config")
        if not isinstance(self.samples_per_axis, int) or self.samples_per_axis < 1:
            raise ConfigError("samples_per_axis must be a positive integer", stage="config")
        if self.lipschitz is not None and not self.lipschitz > 0:
            raise ConfigError("lipschitz bound must be positive", stage="config")
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}", stage="config")
        for stage, deps in STAGE_DEPENDENCIES.items():
            if self.enabled(stage):
                missing = [d for d in deps if not self.enabled(d)]
                if missing:
                    raise ConfigError(
                        f"stage {stage!r} requires {', '.join(repr(m) for m in missing)} to be enabled",
                        stage="config", entity=stage,
                    )
        if int(self.closing["max_period"]) < 1 or int(self.closing["seeds_per_class"]) < 1:
            raise ConfigError("closing needs max_period >= 1 and seeds_per_class >= 1", stage="config")

    def enabled(self, stage: str) -> bool:
        return bool(self.stages.get(stage, False))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("configuration must be a JSON object", stage="config")
        unknown = set(data) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}", stage="config")
        merged = copy.deepcopy(_DEFAULTS)
        for key, value in data.items():
            if isinstance(merged[key], dict) and key != "system":
                if not isinstance(value, Mapping):
                    raise ConfigError(f"{key!r} must be an object", stage="config")
                bad = set(value) - set(merged[key])
                if bad:
                    raise ConfigError(f"unknown keys {sorted(bad)} in {key!r}", stage="config")
                merged[key].update(value)
            else:
                merged[key] = value
        system = merged["system"]
        if isinstance(system, str):
            system = {"name": system, "params": {}}
        if not isinstance(system, Mapping) or "name" not in system:
            raise ConfigError("system must name a catalog entry", stage="config")
        if "stages" in data:
            merged["stages"] = {s: bool(data["stages"].get(s, False)) for s in STAGES}
        return cls(
            system=str(system["name"]), params=dict(system.get("params", {})),
            depth=merged["depth"], epsilon=merged["epsilon"], samples_per_axis=merged["samples_per_axis"],
            lipschitz=merged["lipschitz"], stages=merged["stages"], outputs=merged["outputs"],
            seed=int(merged["seed"]), closing=merged["closing"], exponents=merged["exponents"],
            budget=merged["budget"], backend=merged["backend"],
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", stage="config") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}", stage="config") from exc
        return cls.from_dict(data)

    def to_json(self) -> dict:
        return {
            "system": {"name": self.system, "params": _plain(self.params)},
            "depth": self.depth,
            "epsilon": self.epsilon,
            "samples_per_axis": self.samples_per_axis,
            "lipschitz": self.lipschitz,
            "stages": {s: self.enabled(s) for s in STAGES},
            "seed": self.seed,
            "closing": _plain(self.closing),
            "exponents": _plain(self.exponents),
            "budget": _plain(self.budget),
        }


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if callable(obj):
        return repr(obj)
    return obj


@dataclass
class AnalysisReport:
    config: dict
    grid: dict
    classes: list[dict]
    condensation_edges: list[list[int]]
    filtration: dict | None
    lyapunov_function: dict | None
    periodic_orbits: list[dict]
    rigor: dict
    timing: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "grid": self.grid,
            "classes": self.classes,
            "condensation_edges": self.condensation_edges,
            "filtration": self.filtration,
            "lyapunov_function": self.lyapunov_function,
            "periodic_orbits": self.periodic_orbits,
            "rigor": self.rigor,
            "timing": self.timing,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "AnalysisReport":
        return cls(
            config=doc["config"], grid=doc["grid"], classes=doc["classes"],
            condensation_edges=doc["condensation_edges"], filtration=doc["filtration"],
            lyapunov_function=doc["lyapunov_function"], periodic_orbits=doc["periodic_orbits"],
            rigor=doc["rigor"], timing=doc.get("timing", {}), schema_version=doc["schema_version"],
        )

    def deterministic_json(self) -> dict:
        doc = self.to_json()
        doc.pop("timing")
        return doc


@dataclass
class AnalysisResult:
    """In-memory products of a run, next to the serializable report."""

    report: AnalysisReport
    system: SystemSpec
    graph: cg.TransitionGraph
    order: cg.CondensationOrder
    filtration: cg.Filtration | None = None
    lyapunov: cg.CompleteLyapunovFunction | None = None
    orbits: dict[int, list[PeriodicOrbit]] = field(default_factory=dict)
    classifications: dict[int, Classification] = field(default_factory=dict)


# --------------------------------------------------------------------------- #
# periodic-orbit seeding


def _same_orbit(sys: SystemSpec, a: PeriodicOrbit, b: PeriodicOrbit, tol: float = 1e-8) -> bool:
    if a.period != b.period:
        return False
    return bool(np.min(sys.ambient.distance(b.points, a.point[None, :])) < tol)


def seed_periodic_orbits(
    sys: SystemSpec,
    cls: cg.ChainClass,
    rng: np.random.Generator,
    max_period: int = 2,
    seeds_per_class: int = 4,
    tol: float = 1e-10,
) -> list[PeriodicOrbit]:
    """Newton-close the best near-returns among the box corners and jittered box centers of a class.

    Box corners are included because symmetric systems place fixed points on
    dyadic lattice points, where strongly expanding orbits can still be closed;
    elsewhere their Newton basin is below float resolution.

    For each period ``tau <= max_period`` the ``seeds_per_class`` points with the
    smallest return distance ``d(f^tau(x), x)`` seed a closing; orbits leaving the
    class boxes, failed closings and duplicates are dropped.
    """
    grid = cls.boxes.grid
    ids = cls.boxes.ids
    lo, _ = grid.bounds(ids)
    offsets = np.array(list(itertools.product((0.0, 1.0), repeat=grid.dim))) * grid.side
    corners = (lo[:, None, :] + offsets[None]).reshape(-1, grid.dim)
    corners = np.unique(sys.ambient.canonicalize(corners), axis=0)
    jittered = grid.centers(ids) + rng.uniform(-0.5, 0.5, size=(ids.size, grid.dim)) * grid.radius
    pts = np.vstack([corners, sys.ambient.canonicalize(jittered) if sys.ambient.periodic else jittered])
    found: list[PeriodicOrbit] = []
    members = set(ids.tolist())
    for tau in range(1, max_period + 1):
        traj = [pts]
        try:
            for _ in range(tau):
                traj.append(sys.step(traj[-1]))
        except ChainrecError:
            continue
        res = sys.ambient.distance(traj[-1], pts)
        for j in np.argsort(res, kind="stable")[:seeds_per_class]:
            if res[j] >= 0.2:
                break
            po = PseudoOrbit.from_points(sys, np.array([t[j] for t in traj[:-1]]), closed=True)
            try:
                orb = close_to_periodic(sys, po, tol=tol)
            except (NumericalError, ChainrecError):
                continue
            if not set(grid.box_ids_of(orb.points).tolist()) <= members:
                continue
            if any(_same_orbit(sys, o, orb) for o in found):
                continue
            found.append(orb)
    found.sort(key=lambda o: (o.period, tuple(np.round(o.point, 12))))
    return found


# --------------------------------------------------------------------------- #
# pipeline


def _resolve_epsilon(cfg: RunConfig, grid: BoxGrid) -> float:
    return grid.box_diameter if cfg.epsilon == "box_diameter" else float(cfg.epsilon)


def run_analyze(cfg: RunConfig, write: bool = True) -> AnalysisResult:
    """Execute the enabled stages in dependency order and write the configured outputs."""
    timing: dict[str, float] = {}

    def timed(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        timing[name] = round(time.perf_counter() - t0, 6)
        return out

    sys = make_system(cfg.system, cfg.params)
    grid = BoxGrid(sys.ambient, cfg.depth)
    if grid.n_boxes > int(cfg.budget["max_boxes"]):
        raise BudgetExceededError(
            f"{grid.n_boxes} boxes exceed the budget of {cfg.budget['max_boxes']}", stage="graph", entity=cfg.depth
        )
    eps = _resolve_epsilon(cfg, grid)
    g = timed(
        "graph", cg.build_transition_graph, sys, grid, eps, cfg.samples_per_axis,
        lipschitz=cfg.lipschitz, backend=cfg.backend,
    )
    if g.n_edges > int(cfg.budget["max_edges"]):
        raise BudgetExceededError(
            f"{g.n_edges} edges exceed the budget of {cfg.budget['max_edges']}", stage="graph"
        )
    classes, order = timed("classes", cg.chain_recurrence_classes, g, backend=cfg.backend)
    result = AnalysisResult(report=None, system=sys, graph=g, order=order)  # type: ignore[arg-type]

    if cfg.enabled("filtration"):
        result.filtration = timed("filtration", cg.build_filtration, order, order.recurrent_ids)
    if cfg.enabled("conley"):
        result.lyapunov = timed("conley", cg.conley_function, order, g)
    if cfg.enabled("closing"):
        rng = np.random.default_rng(cfg.seed)
        t0 = time.perf_counter()
        for k in order.recurrent_ids:
            result.orbits[k] = seed_periodic_orbits(
                sys, classes[k], rng, int(cfg.closing["max_period"]),
                int(cfg.closing["seeds_per_class"]), float(cfg.closing["tol"]),
            )
        timing["closing"] = round(time.perf_counter() - t0, 6)
    ex = cfg.exponents
    spectra: dict[tuple[int, int], tuple[float, ...]] = {}
    if cfg.enabled("exponents"):
        t0 = time.perf_counter()
        for k, orbs in result.orbits.items():
            for i, orb in enumerate(orbs):
                spectra[(k, i)] = exponents_periodic(cocycle_from_orbit(sys, orb)).exponents
        timing["exponents"] = round(time.perf_counter() - t0, 6)
    if cfg.enabled("classify"):
        t0 = time.perf_counter()
        for k in order.recurrent_ids:
            result.classifications[k] = classify_class(
                sys, classes[k], result.orbits.get(k, []), int(ex["N_max"]),
                float(ex["zero_tol"]), float(ex["base"]),
            )
        timing["classify"] = round(time.perf_counter() - t0, 6)

    result.report = _assemble(cfg, result, eps, spectra, timing)
    if write:
        write_outputs(result, cfg.outputs)
    return result


def _assemble(cfg: RunConfig, res: AnalysisResult, eps: float, spectra, timing) -> AnalysisReport:
    order, g = res.order, res.graph
    minimal = set(order.minimal)
    class_rows = []
    for k in order.recurrent_ids:
        c = order.classes[k]
        cl = res.classifications.get(k)
        class_rows.append({
            "id": k,
            "box_count": len(c.boxes),
            "recurrent": True,
            "quasi_attractor": k in minimal,
            "classification": None if cl is None else cl.to_json(),
        })
    filt = None
    if res.filtration is not None:
        filt = {
            "length": len(res.filtration),
            "selected": list(res.filtration.selected),
            "level_box_counts": [len(lv) for lv in res.filtration.levels],
            "attracting": True,
        }
    lyap = None
    if res.lyapunov is not None:
        vals = res.lyapunov.class_values
        lyap = {
            "n_classes": len(vals),
            "recurrent_values": [{"class_id": k, "value": str(vals[k])} for k in order.recurrent_ids],
            "strictly_decreasing": True,
        }
    orbit_rows = []
    for k in sorted(res.orbits):
        for i, orb in enumerate(res.orbits[k]):
            lam = spectra.get((k, i))
            idx = None
            if lam is not None:
                idx = None if any(abs(v) <= float(cfg.exponents["zero_tol"]) for v in lam) else sum(v < 0 for v in lam)
            orbit_rows.append({
                "id": len(orbit_rows),
                "class_id": k,
                "period": orb.period,
                "points": orb.points.tolist(),
                "residual": orb.residual,
                "exponents": None if lam is None else list(lam),
                "index": idx,
            })
    return AnalysisReport(
        config=cfg.to_json(),
        grid={
            "depth": g.grid.depth,
            "n_boxes": g.n_boxes,
            "n_edges": g.n_edges,
            "epsilon": eps,
            "samples_per_axis": g.samples_per_axis,
            "ambient": sys_ambient_json(res.system),
        },
        classes=class_rows,
        condensation_edges=[list(e) for e in order.hasse_edges()],
        filtration=filt,
        lyapunov_function=lyap,
        periodic_orbits=orbit_rows,
        rigor={
            "graph_rigorous": bool(g.rigorous),
            "lipschitz": g.lipschitz,
            "jacobian_exact": bool(res.system.jacobian_exact),
            "kernel_backend": cfg.backend or _active_backend(),
        },
        timing=timing,
    )


def sys_ambient_json(sys: SystemSpec) -> dict:
    return _plain(sys.ambient.to_json())


def _active_backend() -> str:
    from .kernels import BACKEND

    return BACKEND


# --------------------------------------------------------------------------- #
# exports


def export_dot(order: cg.CondensationOrder, classes=None) -> str:
    """DOT digraph of the recurrent classes with the Hasse edges of their order."""
    classes = order.classes if classes is None else classes
    rec = sorted(c.id for c in classes if c.recurrent)
    lines = ["digraph condensation {"]
    for k in rec:
        lines.append(f'  C{k} [label="C{k} ({len(order.classes[k].boxes)})"];')
    for a, b in sorted(order.hasse_edges()):
        lines.append(f"  C{a} -> C{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def report_to_text(r: AnalysisReport) -> str:
    return json.dumps(r.to_json(), sort_keys=True, indent=2) + "\n"


def export_report(r: AnalysisReport, path) -> None:
    _write_text(path, report_to_text(r))


def read_report(path) -> AnalysisReport:
    try:
        return AnalysisReport.from_json(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise ConfigError(f"cannot read report {path}: {exc}", stage="report") from exc


def spectra_csv(r: AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["orbit_id", "class_id", "period", "exponents", "index"])
    for row in r.periodic_orbits:
        lam = row["exponents"]
        w.writerow([
            row["id"], row["class_id"], row["period"],
            "" if lam is None else ";".join(repr(v) for v in lam),
            "" if row["index"] is None else row["index"],
        ])
    return buf.getvalue()


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}", stage="report") from exc


def write_outputs(res: AnalysisResult, outputs: Mapping[str, str | None]) -> None:
    if outputs.get("json"):
        export_report(res.report, outputs["json"])
    if outputs.get("dot"):
        _write_text(outputs["dot"], export_dot(res.order))
    if outputs.get("csv"):
        _write_text(outputs["csv"], spectra_csv(res.report))


# --------------------------------------------------------------------------- #
# validation


def load_schema() -> dict:
    return json.loads(resources.files("chainrec").joinpath("schema/report-v1.json").read_text())


def validate_report(doc: Mapping[str, Any]) -> None:
    """Schema validation plus the cross-field consistency rules.

    Raises ``ConfigError`` on the first violation.
    """
    import jsonschema

    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"report does not match the schema: {exc.message}", stage="report") from exc
    ids = [c["id"] for c in doc["classes"]]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate class ids", stage="report")
    known = set(ids)
    for a, b in doc["condensation_edges"]:
        if a not in known or b not in known or a == b:
            raise ConfigError(f"edge ({a}, {b}) refers to unknown classes", stage="report")
    has_out = {a for a, _ in doc["condensation_edges"]}
    for c in doc["classes"]:
        if c["quasi_attractor"] != (c["id"] not in has_out):
            raise ConfigError("quasi-attractor flag disagrees with the edges", stage="report", entity=c["id"])
    for o in doc["periodic_orbits"]:
        if o["class_id"] not in known:
            raise ConfigError("periodic orbit refers to an unknown class", stage="report", entity=o["id"])
