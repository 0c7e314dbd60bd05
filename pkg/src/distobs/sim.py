"""Closed-loop assembly, spectra, and fixed-step simulation.

The stacked closed-loop state is [x; xhat_1; ...; xhat_m; z]: plant, one
estimator block per channel, then the channel controller's internal state.
In delayed (discrete) loops each estimator block also carries its shift taps;
`est_dim` records the per-channel block size so traces can find the current
estimate either way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import MultiChannelSystem, NeighborGraph, as_vector
from .errorsys import validate_feedback
from .synth import ObserverGains, split_output_columns


@dataclass
class ClosedLoop:
    matrix: np.ndarray
    forcing: np.ndarray | None          # constant drive on the full state, or None
    discrete: bool
    sys: MultiChannelSystem
    n: int
    m: int
    est_dim: int                        # per-channel estimator block width
    order: int                          # channel controller order

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def x_slice(self) -> slice:
        return slice(0, self.n)

    def est_slice(self, i: int) -> slice:
        """Full estimator block of channel i (current estimate plus any taps)."""
        start = self.n + (i - 1) * self.est_dim
        return slice(start, start + self.est_dim)

    def xhat_slice(self, i: int) -> slice:
        start = self.n + (i - 1) * self.est_dim
        return slice(start, start + self.n)

    def z_slice(self) -> slice:
        start = self.n + self.m * self.est_dim
        return slice(start, start + self.order)


def assemble_closed_loop(sys: MultiChannelSystem, graph: NeighborGraph, F,
                         gains: ObserverGains, forcing=None) -> ClosedLoop:
    """Wire plant, estimators, and channel controller into one state matrix.

    Every estimator runs the plant model under the agreed feedback applied to
    its own estimate, corrects with its local measurement, and pulls toward
    the neighbors it hears; channel q additionally receives the controller
    output.  `forcing` (length n) is a constant drive on the plant equation,
    used for set-point runs.
    """
    F = validate_feedback(sys, F)
    n, m = sys.n, sys.m
    if graph.m != m:
        raise ValidationError(f"graph has {graph.m} vertices for {m} channels")
    q = gains.q
    nu = gains.order
    N = n + m * n + nu
    M = np.zeros((N, N))

    def xsl(i=None):
        if i is None:
            return slice(0, n)
        return slice(n + (i - 1) * n, n + i * n)

    zsl = slice(n + m * n, N)
    bf = [sys.B[j] @ F[j] for j in range(m)]
    bf_sum = sum(bf)

    M[xsl(), xsl()] = sys.A
    for i in range(1, m + 1):
        M[xsl(), xsl(i)] += bf[i - 1]

    kbar, hbar = split_output_columns(gains.Bbar, gains.y_widths, gains.q_neighbors)
    for i in range(1, m + 1):
        Ki, Ci = gains.K[i - 1], sys.C[i - 1]
        M[xsl(i), xsl(i)] += sys.A + Ki @ Ci + bf_sum
        M[xsl(i), xsl()] += -Ki @ Ci
        for j, Hij in gains.H[i - 1].items():
            M[xsl(i), xsl(i)] += Hij
            M[xsl(i), xsl(j)] += -Hij
        if i == q and nu:
            M[xsl(i), zsl] += gains.Cbar

    if nu:
        Cq = sys.C[q - 1]
        M[zsl, zsl] = gains.Abar
        M[zsl, xsl(q)] += kbar @ Cq
        M[zsl, xsl()] += -kbar @ Cq
        for j, Hj in hbar.items():
            M[zsl, xsl(q)] += Hj
            M[zsl, xsl(j)] += -Hj

    force = None
    if forcing is not None:
        f = as_vector(forcing, length=n, name="forcing")
        force = np.zeros(N)
        force[:n] = f

    return ClosedLoop(matrix=M, forcing=force, discrete=False, sys=sys,
                      n=n, m=m, est_dim=n, order=nu)


def spectrum(M) -> np.ndarray:
    """Eigenvalues sorted by (real, imag)."""
    M = np.asarray(M, dtype=float)
    eig = np.linalg.eigvals(M)
    order = np.lexsort((eig.imag, eig.real))
    return eig[order]


def initial_state(cl: ClosedLoop, x0=None, xhat0=None, z0=None,
                  seed: int = 0) -> np.ndarray:
    """Stacked initial state; defaults: random unit plant state, zero elsewhere.

    xhat0, when given, fills each estimator block as constant prehistory ( the
    same value on every shift tap).
    """
    state = np.zeros(cl.dim)
    if x0 is None:
        rng = np.random.default_rng(seed)
        v = rng.normal(size=cl.n)
        x0 = v / np.linalg.norm(v)
    state[cl.x_slice()] = as_vector(x0, length=cl.n, name="x0")
    if xhat0 is not None:
        if len(xhat0) != cl.m:
            raise ValidationError(f"expected {cl.m} estimator initial states")
        taps = cl.est_dim // cl.n
        for i in range(1, cl.m + 1):
            v = as_vector(xhat0[i - 1], length=cl.n, name=f"xhat0_{i}")
            state[cl.est_slice(i)] = np.tile(v, taps)
    if z0 is not None:
        state[cl.z_slice()] = as_vector(z0, length=cl.order, name="z0")
    return state


@dataclass
class SimTrace:
    """Recorded closed-loop run; errors are recomputed from stored states."""

    t: np.ndarray
    states: np.ndarray
    cl: ClosedLoop

    def x(self) -> np.ndarray:
        return self.states[:, self.cl.x_slice()]

    def xhat(self, i: int) -> np.ndarray:
        return self.states[:, self.cl.xhat_slice(i)]

    def z(self) -> np.ndarray:
        return self.states[:, self.cl.z_slice()]

    def e(self, i: int) -> np.ndarray:
        return self.xhat(i) - self.x()

    def y(self, i: int) -> np.ndarray:
        return self.x() @ self.cl.sys.C[i - 1].T

    def error_norms(self) -> np.ndarray:
        """Euclidean norm of the stacked estimation error at each sample."""
        errs = np.hstack([self.e(i) for i in range(1, self.cl.m + 1)])
        return np.linalg.norm(errs, axis=1)

    def to_csv(self, path) -> None:
        cl = self.cl
        cols: list[str] = ["time"]
        series: list[np.ndarray] = [self.t]

        def add(prefix, arr):
            for k in range(arr.shape[1]):
                cols.append(f"{prefix}[{k}]")
                series.append(arr[:, k])

        add("x", self.x())
        for i in range(1, cl.m + 1):
            add(f"xhat{i}", self.xhat(i))
        add("z", self.z())
        for i in range(1, cl.m + 1):
            add(f"e{i}", self.e(i))
        for i in range(1, cl.m + 1):
            add(f"y{i}", self.y(i))

        data = np.column_stack(series)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def simulate_continuous(cl: ClosedLoop, x0, T: float, h: float | None = None) -> SimTrace:
    """Classical fixed-step fourth-order integration of the closed loop.

    The step must satisfy h * max|eig| <= 0.1; by default h = 0.05 / max|eig|,
    so accuracy is tied to the fastest closed-loop mode.
    """
    if cl.discrete:
        raise ValidationError("closed loop is discrete; use simulate_discrete")
    if not T > 0:
        raise ValidationError(f"horizon must be positive, got {T}")
    state = as_vector(x0, length=cl.dim, name="x0")
    M = cl.matrix
    eigmax = float(np.max(np.abs(np.linalg.eigvals(M))))
    if h is None:
        h = 0.05 / eigmax if eigmax > 0 else T / 100.0
    if not h > 0:
        raise ValidationError(f"step must be positive, got {h}")
    if h * eigmax > 0.1 + 1e-12:
        raise ValidationError(
            f"step h={h:g} too coarse for max|eig|={eigmax:g}; "
            f"need h <= {0.1 / eigmax:g}")
    u = cl.forcing if cl.forcing is not None else np.zeros(cl.dim)

    steps = max(1, int(np.ceil(T / h - 1e-9)))
    out = np.empty((steps + 1, cl.dim))
    out[0] = state
    for k in range(steps):
        k1 = M @ state + u
        k2 = M @ (state + 0.5 * h * k1) + u
        k3 = M @ (state + 0.5 * h * k2) + u
        k4 = M @ (state + h * k3) + u
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = state
    t = h * np.arange(steps + 1)
    return SimTrace(t=t, states=out, cl=cl)


def simulate_discrete(cl: ClosedLoop, x0, steps: int) -> SimTrace:
    """Exact iteration of a discrete closed loop."""
    if not cl.discrete:
        raise ValidationError("closed loop is continuous; use simulate_continuous")
    if steps < 1:
        raise ValidationError(f"need at least one step, got {steps}")
    state = as_vector(x0, length=cl.dim, name="x0")
    M = cl.matrix
    u = cl.forcing if cl.forcing is not None else np.zeros(cl.dim)
    out = np.empty((steps + 1, cl.dim))
    out[0] = state
    for k in range(steps):
        state = M @ state + u
        out[k + 1] = state
    return SimTrace(t=np.arange(steps + 1, dtype=float), states=out, cl=cl)
