"""Set-oriented chain-recurrence toolkit.

Box transition graphs and their chain classes, filtrations and complete
Lyapunov functions; pseudo-orbit closing and shadowing; periodic cocycles,
Lyapunov exponents and hyperbolicity checks.
"""

from .chain_graph import (
    ChainClass,
    CompleteLyapunovFunction,
    CondensationOrder,
    Filtration,
    QuasiAttractor,
    TransitionGraph,
    build_filtration,
    build_transition_graph,
    chain_recurrence_classes,
    chain_stable_set,
    chain_unstable_set,
    conley_function,
    quasi_attractors,
)
from .cocycle import (
    LyapunovSpectrum,
    PeriodicCocycle,
    PlissReport,
    SplittingSpec,
    check_contraction_at_period,
    check_domination,
    classify_class,
    cocycle_from_orbit,
    exponents_periodic,
    lyapunov_qr,
    pliss_points,
    split_from_eigen,
)
from .errors import (
    BudgetExceededError,
    ChainrecError,
    ConfigError,
    DegenerateClosingError,
    DomainError,
    InconsistencyError,
    NoConvergenceError,
    NumericalError,
)
from .orbit_closing import (
    ClosingTriple,
    Cube,
    PeriodicOrbit,
    PseudoOrbit,
    close_to_periodic,
    generate_pseudo_orbit,
    select_closing_pair,
    weak_shadow_check,
)
from .phase_space import Ambient, Box, BoxGrid, BoxSet, hausdorff_distance
from .report import AnalysisReport, RunConfig, export_dot, export_report, read_report, run_analyze
from .systems import SystemSpec, TangentMap, evaluate, jacobian, make_system, orbit

__version__ = "0.1.0"
