"""Impulsive control of systems with commensurate time delays.

Impulse controls are represented through graph completions: a time change
``phi0`` and chained block controls ``phi_l`` turn the delayed impulsive
system into an ordinary control-affine system without delays, which is
simulated, differentiated and optimized here.
"""

from .adjoint_pmp import (
    TerminalLinearization,
    certify,
    check_extended_pmp,
    check_impulse_pmp,
    cost_gradient,
    fit_multipliers,
    impulse_multipliers,
    integrate_extended_adjoint,
)
from .cone import ControlCone
from .dynamics import DelayDynamics, HermiteHistory, MayerProblemData, TargetBox, TargetLevelSet
from .equivalence import (
    ImpulseTrajectory,
    JumpArcSet,
    extended_to_impulse,
    gc_solution,
    impulse_to_extended,
    roundtrip,
    simulate_impulse,
    strict_sense_approximation,
)
from .extsys import ExtendedProcess, integrate_acs
from .graphcomp import ExtendedControl, build_extended, canonicalize, rectilinear_gc, reparameterize
from .measures import ImpulseControl, ScalarMeasure, VectorMeasure, validate_impulse_control
from .monotone import MonotoneCurve
from .optimize import OptimizeResult, TranscriptionConfig, solve_pext
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__version__ = "0.1.0"
