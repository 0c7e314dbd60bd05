"""Constant set-point tracking via integral augmentation.

Each channel integrates its own tracking mismatch, w_i' = y_i - r_i; the
augmented plant [x; w] is then regulated by the standard pipeline with the
integrator states as the measured outputs.  Feasibility is the usual
square-plant condition: [A B; C 0] must have full rank n + (total outputs),
i.e. the plant has no transmission zero at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import (MultiChannelSystem, NeighborGraph, RANK_TOL, as_vector,
                    check_joint, numerical_rank)
from .synth import (ObserverGains, SpectrumSpec, SynthesisConfig,
                    SynthesisReport, place_spectrum, synthesize)
from .sim import assemble_closed_loop, initial_state, simulate_continuous


@dataclass
class SetpointProblem:
    """A square multi-channel plant, its graph, and the reference vector."""

    sys: MultiChannelSystem
    graph: NeighborGraph
    r: np.ndarray

    def __post_init__(self):
        total_in = sum(self.sys.input_widths)
        total_out = sum(self.sys.output_widths)
        if total_in != total_out:
            raise ValidationError(
                f"set-point design needs a square plant; got {total_in} inputs "
                f"and {total_out} outputs")
        if self.graph.m != self.sys.m:
            raise ValidationError(
                f"graph has {self.graph.m} vertices for {self.sys.m} channels")
        self.r = as_vector(self.r, length=total_out, name="r")

    @property
    def total_outputs(self) -> int:
        return sum(self.sys.output_widths)


def setpoint_feasible(sys: MultiChannelSystem, tol: float = RANK_TOL) -> bool:
    """Rank test on [A B; C 0]: full rank means no transmission zero at s=0."""
    n = sys.n
    total_out = sum(sys.output_widths)
    B = sys.b_all()
    C = sys.c_all()
    M = np.block([[sys.A, B],
                  [C, np.zeros((total_out, B.shape[1]))]])
    return numerical_rank(M, tol) == n + total_out


def augment_with_integrators(p: SetpointProblem):
    """Reference-free augmented plant: state [x; w], measured outputs w_i.

    Returns (augmented system, rtilde) where rtilde = [0; r] is the constant
    forcing that the true augmented plant subtracts; the design itself runs
    on the unforced system.
    """
    sys = p.sys
    n = sys.n
    total_out = p.total_outputs
    A_aug = np.block([[sys.A, np.zeros((n, total_out))],
                      [sys.c_all(), np.zeros((total_out, total_out))]])
    B_aug = tuple(np.vstack([Bi, np.zeros((total_out, Bi.shape[1]))])
                  for Bi in sys.B)
    C_aug = []
    ofs = 0
    for pi in sys.output_widths:
        Ci = np.zeros((pi, n + total_out))
        Ci[:, n + ofs:n + ofs + pi] = np.eye(pi)
        C_aug.append(Ci)
        ofs += pi
    rtilde = np.concatenate([np.zeros(n), p.r])
    return MultiChannelSystem(A=A_aug, B=B_aug, C=tuple(C_aug)), rtilde


@dataclass
class SetpointDesign:
    problem: SetpointProblem
    augmented: MultiChannelSystem
    rtilde: np.ndarray
    F: tuple[np.ndarray, ...]           # per-channel feedback on [x; w]
    plant_spectrum: tuple[complex, ...]
    gains: ObserverGains
    report: SynthesisReport


def design_setpoint_controller(p: SetpointProblem, q: int, spectrum=None,
                               rate: float = 1.0,
                               config: SynthesisConfig | None = None) -> SetpointDesign:
    """Feasibility gate, integral augmentation, feedback placement, synthesis.

    The combined feedback puts the augmented plant's spectrum at
    -rate * linspace(1, 2); the estimation-error spectrum defaults to the
    same band sized for full mode.  Any supplied spectrum must be strictly
    stable, since the whole point is convergence of y_i to r_i.
    """
    cfg = config or SynthesisConfig()
    if not rate > 0:
        raise ValidationError(f"rate must be positive, got {rate}")
    if not setpoint_feasible(p.sys, cfg.rank_tol):
        raise ValidationError(
            "set-point infeasible: [A B; C 0] is rank deficient "
            "(transmission zero at the origin)")
    aug, rtilde = augment_with_integrators(p)
    structure = check_joint(aug, cfg.rank_tol)
    if not structure.ok:
        raise ValidationError("augmented system assumptions violated: "
                              + "; ".join(structure.issues))

    n_aug, m = aug.n, aug.m
    plant_spec = tuple(-rate * v for v in np.linspace(1.0, 2.0, n_aug))
    F_all = place_spectrum(aug.A, aug.b_all(), SpectrumSpec(tuple(map(complex, plant_spec))),
                           tol=cfg.place_tol, seed=cfg.seed)
    F = []
    ofs = 0
    for mi in aug.input_widths:
        F.append(F_all[ofs:ofs + mi, :])
        ofs += mi

    if spectrum is None:
        spectrum = SpectrumSpec(tuple(
            complex(-rate * v) for v in np.linspace(1.0, 2.0, 2 * n_aug * m)))
    elif not isinstance(spectrum, SpectrumSpec):
        spectrum = SpectrumSpec(tuple(spectrum))
    if max(v.real for v in spectrum.values) >= 0:
        raise ValidationError("set-point spectrum must be strictly stable")

    gains, report = synthesize(aug, p.graph, F, spectrum, q, "full", cfg)
    return SetpointDesign(problem=p, augmented=aug, rtilde=rtilde,
                          F=tuple(F), plant_spectrum=tuple(map(complex, plant_spec)),
                          gains=gains, report=report)


def evaluate_tracking(design: SetpointDesign, T: float | None = None,
                      x0=None, seed: int = 0, h: float | None = None):
    """Simulate the forced loop and report per-output |y_i(T) - r_i|.

    x0 is the original plant's initial state (integrators, estimators, and
    the controller start at zero).  Estimates carry a constant offset in
    steady state here; only the tracked outputs are required to converge.
    """
    p = design.problem
    cl = assemble_closed_loop(design.augmented, p.graph, design.F,
                              design.gains, forcing=-design.rtilde)
    if T is None:
        slowest = max(max(v.real for v in design.report.target),
                      max(v.real for v in design.plant_spectrum))
        T = 20.0 / abs(slowest)
    n = p.sys.n
    if x0 is None:
        rng = np.random.default_rng(seed)
        v = rng.normal(size=n)
        x0 = v / np.linalg.norm(v)
    else:
        x0 = as_vector(x0, length=n, name="x0")
    x0_aug = np.concatenate([x0, np.zeros(design.augmented.n - n)])
    state0 = initial_state(cl, x0=x0_aug)
    trace = simulate_continuous(cl, state0, T, h)

    x_orig = trace.x()[:, :n]
    y_final = p.sys.c_all() @ x_orig[-1]
    errors = np.abs(y_final - p.r)
    return trace, errors
