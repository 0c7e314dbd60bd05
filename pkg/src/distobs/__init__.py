"""Distributed observer-based control for multi-channel linear systems.

Builds, for each channel of a jointly controllable and jointly observable
plant, a local dynamic controller that shares state estimates over a strongly
connected neighbor graph.  The stacked estimation-error system is autonomous
and its spectrum is placed at a prescribed symmetric set, so closed-loop
eigenvalues split into the state-feedback part and the chosen error part.
"""

from .errors import NumericalError, SynthesisError, ValidationError
from .model import (
    MultiChannelSystem,
    NeighborGraph,
    StructureReport,
    check_joint,
    controllability_index,
    is_controllable,
    is_observable,
    is_strongly_connected,
    numerical_rank,
    spanning_tree,
)
from .errorsys import ErrorSystem, assemble_open_loop, build_atilde
from .treegain import gain_sweep, lift_tree_gains, tree_gain_matrix
from .synth import (
    ObserverGains,
    SpectrumSpec,
    SynthesisConfig,
    SynthesisReport,
    VerificationReport,
    draw_random_gains,
    match_spectra,
    place_spectrum,
    synthesize,
    verify_open_loop,
)
from .sim import (
    ClosedLoop,
    SimTrace,
    assemble_closed_loop,
    initial_state,
    simulate_continuous,
    simulate_discrete,
    spectrum,
)
from .setpoint import (
    SetpointDesign,
    SetpointProblem,
    design_setpoint_controller,
    evaluate_tracking,
    setpoint_feasible,
)
from .delay import (
    DelaySpec,
    LiftedErrorSystem,
    assemble_closed_loop_delayed,
    lift_delayed_error_system,
    run_delay_demo,
    synthesize_delayed,
)
from .fileio import load_gains, load_system, parse_spectrum, save_gains

__version__ = "0.1.0"

__all__ = [
    "ClosedLoop",
    "DelaySpec",
    "ErrorSystem",
    "LiftedErrorSystem",
    "MultiChannelSystem",
    "NeighborGraph",
    "NumericalError",
    "ObserverGains",
    "SetpointDesign",
    "SetpointProblem",
    "SimTrace",
    "SpectrumSpec",
    "StructureReport",
    "SynthesisConfig",
    "SynthesisError",
    "SynthesisReport",
    "ValidationError",
    "VerificationReport",
    "assemble_closed_loop",
    "assemble_closed_loop_delayed",
    "assemble_open_loop",
    "build_atilde",
    "check_joint",
    "controllability_index",
    "design_setpoint_controller",
    "draw_random_gains",
    "evaluate_tracking",
    "gain_sweep",
    "initial_state",
    "is_controllable",
    "is_observable",
    "is_strongly_connected",
    "lift_delayed_error_system",
    "lift_tree_gains",
    "load_gains",
    "load_system",
    "match_spectra",
    "numerical_rank",
    "parse_spectrum",
    "place_spectrum",
    "run_delay_demo",
    "save_gains",
    "setpoint_feasible",
    "simulate_continuous",
    "simulate_discrete",
    "spanning_tree",
    "spectrum",
    "synthesize",
    "synthesize_delayed",
    "tree_gain_matrix",
    "verify_open_loop",
]
