"""Numerical toolkit for finite-gap GSMP matrices.

Spectral sets and their rational potential, GSMP windows with
Lambda#-certification, isospectral surface points, the Jacobi flow and the
Killip-Simon diagnostics that go with it.
"""

__version__ = "0.1.0"

from .spectral_sets import (
    IntervalSystem,
    PotentialReport,
    PotentialV,
    SolverError,
    eval_potential,
    potential_preimage,
    solve_potential,
    validate_interval_system,
    verify_potential,
)
from .gsmp import (
    ClassViolation,
    GsmpBlockPair,
    GsmpWindow,
    assemble_V_of_A,
    assemble_window,
    check_gsmp_class,
    lambda_iso,
    lambda_sharp,
    magic_residual,
    transfer_matrix,
)
from .isospectral import IsoPoint, build_periodic, iso_jacobian, sample_torus, solve_iso_point
from .flow import FlowDiscrepancy, FlowTrace, extract_jacobi, flow_J, flow_O, flow_run
from .analysis import (
    JacobiWindow,
    KsReport,
    dist_eta,
    dist_to_isospectral,
    ks_delta,
    ks_functional_H,
    ks_spectral_side,
    lanczos_F,
    resolvent_r,
    spectral_data,
)
from .experiments import PerturbationSpec, dichotomy_run, perturb_window

__all__ = [
    "__version__",
    "IntervalSystem",
    "PotentialReport",
    "PotentialV",
    "SolverError",
    "eval_potential",
    "potential_preimage",
    "solve_potential",
    "validate_interval_system",
    "verify_potential",
    "ClassViolation",
    "GsmpBlockPair",
    "GsmpWindow",
    "assemble_V_of_A",
    "assemble_window",
    "check_gsmp_class",
    "lambda_iso",
    "lambda_sharp",
    "magic_residual",
    "transfer_matrix",
    "IsoPoint",
    "build_periodic",
    "iso_jacobian",
    "sample_torus",
    "solve_iso_point",
    "FlowDiscrepancy",
    "FlowTrace",
    "extract_jacobi",
    "flow_J",
    "flow_O",
    "flow_run",
    "JacobiWindow",
    "KsReport",
    "dist_eta",
    "dist_to_isospectral",
    "ks_delta",
    "ks_functional_H",
    "ks_spectral_side",
    "lanczos_F",
    "resolvent_r",
    "spectral_data",
    "PerturbationSpec",
    "dichotomy_run",
    "perturb_window",
]
