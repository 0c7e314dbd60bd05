"""Transmission delays in discrete time, handled by shift-register lifting.

Neighbor states arriving d steps late are lined up at the worst-case delay D:
every estimator keeps D back-copies of its own estimate and differences the
D-old values, so the consensus terms read e_i(t-D) - e_j(t-D).  Stacking each
channel's current error with its D taps gives an ordinary linear system of
dimension n*m*(D+1) and the delay-free synthesis machinery carries over, with
one twist: uniform cross-channel shifts of each tap level are invisible to
the lifted output, so n*D closed-loop modes are pinned at zero (they drain
out of the register in at most D steps) and target spectra must include them.
With D = 0 the lift is the identity and the pipeline reduces exactly to the
delay-free one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SynthesisError, ValidationError
from .model import (MultiChannelSystem, NeighborGraph, check_joint,
                    is_controllable, is_strongly_connected)
from .errorsys import _validate_gains, validate_feedback
from .synth import (ObserverGains, SpectrumSpec, SynthesisConfig,
                    SynthesisReport, VerificationReport, assemble_final_gains,
                    closed_loop_error_matrix, controllable_split,
                    design_channel_controller, draw_random_gains,
                    match_spectra, separation_halves, split_output_columns,
                    synthesize)
from .sim import ClosedLoop


@dataclass(frozen=True)
class DelaySpec:
    """Per-arc communication delays, in steps; unlisted arcs are delay-free."""

    delays: dict[tuple[int, int], int]

    def __post_init__(self):
        clean = {}
        for arc, d in self.delays.items():
            j, i = arc
            if j == i:
                raise ValidationError(f"arc {arc}: self-arcs carry no delay")
            if not (isinstance(d, int) and d >= 0):
                raise ValidationError(f"arc {arc}: delay must be a nonnegative int, got {d!r}")
            clean[(int(j), int(i))] = int(d)
        object.__setattr__(self, "delays", clean)

    @property
    def max_delay(self) -> int:
        return max(self.delays.values(), default=0)

    def check_against(self, graph: NeighborGraph) -> None:
        for (j, i) in self.delays:
            if j not in graph.neighbor_set(i) or j == i:
                raise ValidationError(
                    f"delay listed for ({j} -> {i}), which is not a graph arc")


@dataclass
class LiftedErrorSystem:
    """Stacked delayed error dynamics; block layout is channel-major,
    [e_i; e_i(t-1); ...; e_i(t-D)] per channel."""

    sys: MultiChannelSystem
    graph: NeighborGraph
    q: int
    dspec: DelaySpec
    a_open: np.ndarray
    input_map: np.ndarray
    y_map: np.ndarray
    y_widths: tuple[int, ...]
    neighbor_order: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def m(self) -> int:
        return self.sys.m

    @property
    def max_delay(self) -> int:
        return self.dspec.max_delay

    @property
    def dim(self) -> int:
        return self.sys.n * self.sys.m * (self.dspec.max_delay + 1)


def lift_delayed_error_system(sys: MultiChannelSystem, graph: NeighborGraph,
                              F, K, H, q: int, dspec: DelaySpec) -> LiftedErrorSystem:
    """Assemble the lifted open-loop error system for injection channel q."""
    n, m = sys.n, sys.m
    if graph.m != m:
        raise ValidationError(f"graph has {graph.m} vertices for {m} channels")
    if not (1 <= q <= m):
        raise ValidationError(f"injection channel q={q} outside 1..{m}")
    dspec.check_against(graph)
    F = validate_feedback(sys, F)
    K, H = _validate_gains(sys, graph, K, H)

    D = dspec.max_delay
    w = n * (D + 1)
    N = m * w

    def cur(i: int) -> slice:
        return slice((i - 1) * w, (i - 1) * w + n)

    def tap(i: int, k: int) -> slice:
        start = (i - 1) * w + k * n
        return slice(start, start + n)

    bf = [sys.B[j] @ F[j] for j in range(m)]
    bf_sum = sum(bf)
    M = np.zeros((N, N))
    neighbor_order = tuple(graph.in_neighbors(i) for i in range(1, m + 1))

    for i in range(1, m + 1):
        M[cur(i), cur(i)] += sys.A + K[i - 1] @ sys.C[i - 1] + bf_sum
        for j in range(1, m + 1):
            M[cur(i), cur(j)] -= bf[j - 1]
        for j in neighbor_order[i - 1]:
            Hij = H[i - 1][j]
            M[cur(i), tap(i, D)] += Hij
            M[cur(i), tap(j, D)] -= Hij
        for k in range(1, D + 1):
            M[tap(i, k), tap(i, k - 1)] = np.eye(n)

    input_map = np.zeros((N, n))
    input_map[cur(q)] = np.eye(n)

    p_q = sys.output_widths[q - 1]
    qn = neighbor_order[q - 1]
    y_map = np.zeros((p_q + n * len(qn), N))
    y_map[:p_q, cur(q)] = sys.C[q - 1]
    for idx, j in enumerate(qn):
        rows = slice(p_q + idx * n, p_q + (idx + 1) * n)
        y_map[rows, tap(q, D)] = np.eye(n)
        y_map[rows, tap(j, D)] = -np.eye(n)
    y_widths = (p_q,) + (n,) * len(qn)

    return LiftedErrorSystem(sys=sys, graph=graph, q=q, dspec=dspec,
                             a_open=M, input_map=input_map, y_map=y_map,
                             y_widths=y_widths, neighbor_order=neighbor_order)


def synthesize_delayed(sys: MultiChannelSystem, graph: NeighborGraph, F,
                       spectrum, q: int, dspec: DelaySpec, mode: str = "full",
                       config: SynthesisConfig | None = None):
    """Theorem-style synthesis on the lifted system.

    With no delay anywhere this delegates to the delay-free pipeline, seed for
    seed.  For D > 0 the deterministic tree-gain argument is not available,
    so gain draws are retried until the lifted open loop verifies
    (controllable through channel q and observable; no index demand).
    """
    cfg = config or SynthesisConfig()
    if dspec.max_delay == 0:
        return synthesize(sys, graph, F, spectrum, q, mode, cfg)
    if mode != "full":
        raise ValidationError("delayed synthesis supports full mode only")
    if not is_strongly_connected(graph):
        raise ValidationError("neighbor graph must be strongly connected")
    structure = check_joint(sys, cfg.rank_tol)
    if not structure.ok:
        raise ValidationError("system assumptions violated: "
                              + "; ".join(structure.issues))
    lifted_dim = sys.n * sys.m * (dspec.max_delay + 1)
    spec = spectrum if isinstance(spectrum, SpectrumSpec) else SpectrumSpec(tuple(spectrum))
    if len(spec) != 2 * lifted_dim:
        raise ValidationError(
            f"full mode on the lifted system needs {2 * lifted_dim} "
            f"target eigenvalues, got {len(spec)}")
    lam_state, lam_inject = spec.split(lifted_dim)
    # Structurally-zero targets (the immovable shift modes, plus any further
    # deliberate zeros) are certified exactly via the invariant-chain residual
    # below; computed eigenvalues of a defective zero smear like
    # eps^(1/chain), so they only get a loose spectral sanity bound.  Nonzero
    # targets are checked half by half through the exact separation split,
    # which keeps the verification free of the coupled matrix's eigenvalue
    # conditioning; the halves still smear a little at high gain.
    final_tol = max(cfg.place_tol, 1e-4)
    zero_sanity = 1e-2
    design_cfg = replace(cfg, place_tol=final_tol)

    stages: list[dict] = []
    best = None
    any_verified = False
    for attempt in range(cfg.max_retries):
        sub_seed = cfg.seed + attempt
        K, H = draw_random_gains(sys, graph, sub_seed)
        err = lift_delayed_error_system(sys, graph, F, K, H, q, dspec)
        ver = verify_lifted(err, cfg.rank_tol)
        stages.append({"stage": "verify", "seed": sub_seed, "tree_gain": None,
                       "controllable": ver.controllable,
                       "observable": ver.observable,
                       "detectable": ver.detectable,
                       "unobservable_dim": ver.unobservable_dim,
                       "ok": ver.ok})
        if not ver.ok:
            continue
        any_verified = True
        try:
            bars = design_channel_controller(err, spec, "full", design_cfg,
                                             allow_fixed_injection=True)
        except SynthesisError as exc:
            stages.append({"stage": "design", "seed": sub_seed, "mode": "full",
                           "ok": False, "reason": str(exc)})
            continue
        Mcl = closed_loop_error_matrix(err, bars)
        chain_res = _shift_chain_residual(Mcl, err)
        (half_s, half_i), leak = separation_halves(Mcl, lifted_dim)
        eig_state = np.linalg.eigvals(half_s)
        eig_inject = np.linalg.eigvals(half_i)
        rel_s, zero_s = _split_mismatch(eig_state, lam_state.values)
        rel_i, zero_i = _split_mismatch(eig_inject, lam_inject.values)
        rel_nonzero = max(rel_s, rel_i)
        abs_zero = max(zero_s, zero_i)
        achieved = np.concatenate([eig_state, eig_inject])
        ok = bool(chain_res <= 1e-9 and leak <= 1e-9
                  and rel_nonzero <= final_tol and abs_zero <= zero_sanity)
        stages.append({"stage": "design", "seed": sub_seed, "mode": "full",
                       "max_rel_mismatch": rel_nonzero,
                       "zero_mode_smear": abs_zero,
                       "separation_leak": leak,
                       "shift_chain_residual": chain_res, "ok": ok})
        if best is None or rel_nonzero < best[0]:
            best = (rel_nonzero, chain_res, abs_zero, leak, sub_seed, K, H,
                    err, ver, bars, achieved)
        if ok:
            break
    if best is None:
        if any_verified:
            raise SynthesisError(
                f"lifted controller design failed for every verified gain "
                f"seed starting at {cfg.seed}")
        raise SynthesisError(
            f"lifted open-loop verification failed for {cfg.max_retries} "
            f"gain seeds starting at {cfg.seed}")
    (rel_err, chain_res, abs_zero, leak, sub_seed, K, H, err, ver, bars,
     achieved) = best
    if chain_res > 1e-9:
        raise SynthesisError(
            f"closed-loop shift chain is not exactly nilpotent "
            f"(residual {chain_res:.3e}); lifted assembly is inconsistent")
    if leak > 1e-9:
        raise SynthesisError(
            f"assembled lifted closed loop lost the separation structure "
            f"(leak {leak:.3e}); assembly is inconsistent")
    if rel_err > final_tol or abs_zero > zero_sanity:
        raise SynthesisError(
            f"closed-loop lifted spectrum missed the target: best mismatch "
            f"{rel_err:.3e} (zero-mode smear {abs_zero:.3e}) over "
            f"{cfg.max_retries} gain seeds exceeds {final_tol:g}")
    gains = assemble_final_gains(err, K, H, bars)
    gains.mode = "full"
    achieved_sorted = tuple(sorted((complex(v) for v in achieved),
                                   key=lambda v: (v.real, v.imag)))
    report = SynthesisReport(ok=True, q=q, mode="full", seed_used=sub_seed,
                             tree_gain=None, verification=ver,
                             target=spec.sorted_values(),
                             achieved=achieved_sorted,
                             max_rel_mismatch=rel_err, stages=stages)
    return gains, report


def _shift_chain_residual(Mcl: np.ndarray, lifted: LiftedErrorSystem) -> float:
    """Exactness of the invariant nilpotent chain in the closed loop.

    For each tap level k and unit direction, the vector that is uniform
    across channels at tap k (zero elsewhere, zero controller state) must map
    to the same vector at tap k+1, and tap D must map to zero.  All entries
    involved are exact zeros or copies, so the residual is 0 up to roundoff;
    anything larger means the assembly violates the lift structure.
    """
    n, m, D = lifted.n, lifted.m, lifted.max_delay
    w = n * (D + 1)
    dim2 = Mcl.shape[0]
    res = 0.0
    for k in range(1, D + 1):
        for j in range(n):
            u = np.zeros(dim2)
            for i in range(m):
                u[i * w + k * n + j] = 1.0
            out = Mcl @ u
            if k < D:
                expect = np.zeros(dim2)
                for i in range(m):
                    expect[i * w + (k + 1) * n + j] = 1.0
            else:
                expect = np.zeros(dim2)
            res = max(res, float(np.abs(out - expect).max()))
    return res


def _split_mismatch(achieved, targets) -> tuple[float, float]:
    """Assignment-matched mismatch, split by target kind.

    Returns (worst relative error over nonzero targets, worst absolute error
    over exactly-zero targets).
    """
    match = match_spectra(achieved, targets)
    rel_nonzero = 0.0
    abs_zero = 0.0
    for a, t in match.pairs:
        if abs(t) < 1e-12:
            abs_zero = max(abs_zero, abs(a - t))
        else:
            rel_nonzero = max(rel_nonzero, abs(a - t) / max(1.0, abs(t)))
    return rel_nonzero, abs_zero


def verify_lifted(lifted: LiftedErrorSystem, tol: float) -> VerificationReport:
    """Gate for the lifted pair: controllable through the injection channel,
    and detectable with every unobservable mode structurally at zero.

    Uniform cross-channel shifts of each tap level are invisible to the
    lifted output no matter which gains are drawn, so strict observability
    is never attainable for D > 0; those modes leave the shift register in
    at most D steps, which is all spectral assignment of the rest needs.
    """
    ctrb = is_controllable(lifted.a_open, lifted.input_map, tol)
    N = lifted.a_open.shape[0]
    T, r = controllable_split(lifted.a_open.T, lifted.y_map.T, tol)
    observable = r == N
    detectable = observable
    unobs_dim = N - r
    if not observable:
        At = T.T @ lifted.a_open.T @ T
        modes = np.linalg.eigvals(At[r:, r:])
        detectable = bool(np.abs(modes).max() <= 1e-6)
    return VerificationReport(controllable=ctrb, ctrb_index=None,
                              required_index=None, observable=observable,
                              detectable=detectable,
                              unobservable_dim=unobs_dim)


def assemble_closed_loop_delayed(sys: MultiChannelSystem, graph: NeighborGraph,
                                 F, gains: ObserverGains,
                                 dspec: DelaySpec) -> ClosedLoop:
    """Discrete closed loop with shift taps: [x; (xhat_i, taps)_i; z]."""
    F = validate_feedback(sys, F)
    n, m = sys.n, sys.m
    if graph.m != m:
        raise ValidationError(f"graph has {graph.m} vertices for {m} channels")
    dspec.check_against(graph)
    q = gains.q
    nu = gains.order
    D = dspec.max_delay
    w = n * (D + 1)
    N = n + m * w + nu
    M = np.zeros((N, N))

    xs = slice(0, n)

    def cur(i: int) -> slice:
        return slice(n + (i - 1) * w, n + (i - 1) * w + n)

    def tap(i: int, k: int) -> slice:
        start = n + (i - 1) * w + k * n
        return slice(start, start + n)

    zs = slice(n + m * w, N)
    bf = [sys.B[j] @ F[j] for j in range(m)]
    bf_sum = sum(bf)

    M[xs, xs] = sys.A
    for i in range(1, m + 1):
        M[xs, cur(i)] += bf[i - 1]

    kbar, hbar = split_output_columns(gains.Bbar, gains.y_widths, gains.q_neighbors)
    for i in range(1, m + 1):
        Ki, Ci = gains.K[i - 1], sys.C[i - 1]
        M[cur(i), cur(i)] += sys.A + Ki @ Ci + bf_sum
        M[cur(i), xs] += -Ki @ Ci
        for j, Hij in gains.H[i - 1].items():
            M[cur(i), tap(i, D)] += Hij
            M[cur(i), tap(j, D)] -= Hij
        if i == q and nu:
            M[cur(i), zs] += gains.Cbar
        for k in range(1, D + 1):
            M[tap(i, k), tap(i, k - 1)] = np.eye(n)

    if nu:
        Cq = sys.C[q - 1]
        M[zs, zs] = gains.Abar
        M[zs, cur(q)] += kbar @ Cq
        M[zs, xs] += -kbar @ Cq
        for j, Hj in hbar.items():
            M[zs, tap(q, D)] += Hj
            M[zs, tap(j, D)] -= Hj

    return ClosedLoop(matrix=M, forcing=None, discrete=True, sys=sys,
                      n=n, m=m, est_dim=w, order=nu)


def delayed_error_loop(sys: MultiChannelSystem, graph: NeighborGraph, F,
                       gains: ObserverGains, dspec: DelaySpec) -> np.ndarray:
    """Autonomous closed-loop matrix of the lifted errors and compensator.

    The error dynamics do not see the plant state, so this matrix is the
    right object for measuring convergence rates: iterating it is free of
    the rounding noise that flows through x into the estimator equations of
    the full stack and floors the error norms near machine precision.
    """
    if gains.Dbar.size and np.any(gains.Dbar != 0.0):
        raise ValidationError(
            "gains carry a folded feedthrough; rebuild from the synthesis run")
    err = lift_delayed_error_system(sys, graph, F, gains.K, gains.H,
                                    gains.q, dspec)
    return closed_loop_error_matrix(
        err, (gains.Abar, gains.Bbar, gains.Cbar, gains.Dbar))


def section_scenario() -> tuple[NeighborGraph, DelaySpec]:
    """The packaged three-channel scenario: its graph and arc delays."""
    graph = NeighborGraph.from_lists([[1, 2], [1, 2, 3], [2, 3]])
    dspec = DelaySpec({(2, 1): 2, (1, 2): 1, (3, 2): 0, (2, 3): 2})
    return graph, dspec


def random_discrete_system(n: int, m: int, seed: int,
                           spectral_radius: float = 0.8) -> MultiChannelSystem:
    """Seeded jointly controllable/observable discrete plant, scaled stable."""
    rng = np.random.default_rng(seed)
    for _ in range(64):
        A = rng.uniform(-1.0, 1.0, size=(n, n))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        if rho > 0:
            A = A * (spectral_radius / rho)
        B = tuple(rng.uniform(-1.0, 1.0, size=(n, 1)) for _ in range(m))
        C = tuple(rng.uniform(-1.0, 1.0, size=(1, n)) for _ in range(m))
        sys = MultiChannelSystem(A=A, B=B, C=C)
        if check_joint(sys).ok:
            return sys
    raise SynthesisError(f"no jointly controllable/observable draw in 64 tries (seed {seed})")


def _ring_targets(count: int, radius: float) -> tuple[complex, ...]:
    """Conjugate-closed, pairwise-distinct targets of modulus radius."""
    if count <= 0:
        return ()
    vals: list[complex] = []
    if count % 2:
        vals.append(complex(-radius, 0.0))
    pairs = count // 2
    # keep angles clear of the real axis so each pair stays distinct
    for th in np.linspace(0.35, np.pi - 0.35, pairs):
        vals.append(radius * np.exp(1j * th))
        vals.append(radius * np.exp(-1j * th))
    return tuple(vals)


def fit_decay_rate(norms: np.ndarray, skip: int = 0,
                   floor_rel: float = 1e-13) -> float:
    """Per-step decay ratio from a log-linear fit of the tail of ||e(t)||.

    Early samples carry lifting transients and non-normal growth, so the fit
    uses the second half of the samples that sit above the relative floor.
    Returns 0.0 when the error collapses below the floor immediately.
    """
    norms = np.asarray(norms, dtype=float)
    if norms.size <= skip + 2:
        raise ValidationError("trace too short to fit a decay rate")
    floor = max(norms.max(), 1.0) * floor_rel
    idx = np.arange(skip, norms.size)
    idx = idx[norms[skip:] > floor]
    if idx.size < 3:
        return 0.0
    tail = idx[idx.size // 2:] if idx.size >= 6 else idx
    slope = np.polyfit(tail.astype(float), np.log(norms[tail]), 1)[0]
    return float(np.exp(slope))


@dataclass
class DelayDemoReport:
    n: int
    seed: int
    rho: float
    steps: int
    runs: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.runs) and all(r["ok"] for r in self.runs)

    def to_dict(self) -> dict:
        return {"n": self.n, "seed": self.seed, "rho": self.rho,
                "steps": self.steps, "ok": self.ok, "runs": self.runs}


def run_delay_demo(n: int = 2, seed: int = 0, rho: float = 0.5,
                   steps: int = 60, qs: tuple[int, ...] = (1, 2, 3),
                   scenario: tuple[NeighborGraph, DelaySpec] | None = None,
                   config: SynthesisConfig | None = None) -> DelayDemoReport:
    """Synthesize and simulate the packaged delayed scenario for each channel.

    The slowest target is a lone real mode at -rho; everything else sits on
    conjugate rings of smaller radius, so max|target| = rho and the tail of
    the simulated error fits a clean line.  Each run checks the fitted decay
    ratio against rho + 0.05.
    """
    if not (0 < rho < 1):
        raise ValidationError(f"rho must sit in (0, 1), got {rho}")
    graph, dspec = scenario if scenario is not None else section_scenario()
    sys = random_discrete_system(n, graph.m, seed)
    F = tuple(np.zeros((1, n)) for _ in range(graph.m))
    cfg = config or SynthesisConfig(seed=seed)

    report = DelayDemoReport(n=n, seed=seed, rho=rho, steps=steps)
    D = dspec.max_delay
    lifted_dim = n * graph.m * (D + 1)
    # n*D injection-side modes are pinned at zero by the shift structure, so
    # the target multiset carries them explicitly.  The halves live on rings
    # of different radii: every target stays well separated from the rest,
    # where a tight comb on the real axis would wreck the placement
    # conditioning for no design benefit.  A ring full of equal-modulus
    # oscillators never settles into a single-mode tail, so the slowest
    # mode is a lone real one.
    state_half = ((complex(-rho),)
                  + _ring_targets(lifted_dim - 1, 0.8 * rho))
    # the injection side is the fragile placement; a small ring there would
    # demand huge gains whose rounding alone displaces the modes, so it gets
    # the largest radius the decay bound allows
    inject_half = (0j,) * (n * D) + _ring_targets(lifted_dim - n * D,
                                                  0.95 * rho)
    targets = SpectrumSpec(state_half + inject_half)

    for q in qs:
        gains, synth_rep = synthesize_delayed(sys, graph, F, targets, q,
                                              dspec, "full", cfg)
        # iterate the autonomous error loop: in the full stack the rounding
        # noise of the plant coordinates floors the error norms and hides
        # fast rates, while this recursion decays all the way down
        Mcl = delayed_error_loop(sys, graph, F, gains, dspec)
        rng = np.random.default_rng((seed, q))
        e = rng.normal(0.0, 1.0, Mcl.shape[0])
        norms = np.empty(steps + 1)
        norms[0] = float(np.linalg.norm(e))
        for t in range(steps):
            e = Mcl @ e
            norms[t + 1] = float(np.linalg.norm(e))
        rate = fit_decay_rate(norms, skip=D + 2, floor_rel=1e-300)
        bound = rho + 0.05
        report.runs.append({
            "q": q,
            "lifted_dim": lifted_dim,
            "max_rel_mismatch": synth_rep.max_rel_mismatch,
            "decay_rate": rate,
            "bound": bound,
            "ok": bool(rate <= bound and synth_rep.ok),
        })
    return report
