"""Numerical toolkit for time-dependent tug-of-war with noise and its DPP."""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .analysis import (
    ErrorTable,
    ReferenceSolution,
    ScanSpec,
    asymptotic_study,
    boundary_modulus_scan,
    convergence_study,
    custom_smooth,
    fit_exit_constant,
    heat_reference,
    radial_w,
    ramp_data,
    taylor_residual,
)
from .dpp_core import (
    BoundaryData,
    Comparison,
    ConvergenceError,
    apply_T,
    compare_solutions,
    dpp_residual,
    solve_elliptic_dpp,
    solve_parabolic_dpp,
)
from .game import (
    GameTrajectory,
    RandomStrategy,
    annulus_exit_time,
    estimate_value,
    greedy_pair,
    greedy_strategy,
    martingale_diagnostic,
    play_game,
    pull_strategy,
    simulate_batch,
    value_process,
)
from .geometry import (
    DomainGeometry,
    GameParams,
    RegionTag,
    SpaceTimePoint,
    classify_region,
    delta_weight,
    dist_to_boundary,
    exterior_sphere,
)
from .grid import GridFunction, Lattice, OutOfDomainError
from .quadrature import BallRule, DirectionSet, a_epsilon, ball_average, midrange_over_directions
from .rng import RngSpec
