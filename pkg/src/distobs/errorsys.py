"""Stacked estimation-error dynamics for the networked observer.

With per-channel errors e_i = xhat_i - x stacked as eps = col(e_1, ..., e_m),
the open-loop error system driven through channel q is

    eps' = (Atilde + sum_i Btilde_i (K_i Chat_i + H_i Ctilde_i)) eps + Btilde_q u_q
    y_q  = [C_q e_q;  e_q - e_j  for j in N_q, j != q]

where Btilde_i = kron(b_i, I_n) injects into block i, Chat_i = C_i Btilde_i^T
reads channel i's local residual, and Ctilde_i stacks the neighbor differences
e_i - e_j.  Self-loop rows (e_i - e_i = 0) carry nothing and are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import MultiChannelSystem, NeighborGraph, as_matrix


def build_btilde(i: int, m: int, n: int) -> np.ndarray:
    """kron(b_i, I_n): the nm x n map placing an n-vector into stacked block i."""
    if not (1 <= i <= m):
        raise ValidationError(f"channel {i} outside 1..{m}")
    b = np.zeros((m, 1))
    b[i - 1, 0] = 1.0
    return np.kron(b, np.eye(n))


def incidence_row(i: int, j: int, m: int) -> np.ndarray:
    """Row vector of length m with +1 at i and -1 at j (the arc j -> i)."""
    if i == j:
        raise ValidationError("incidence row needs two distinct vertices")
    for v in (i, j):
        if not (1 <= v <= m):
            raise ValidationError(f"vertex {v} outside 1..{m}")
    row = np.zeros(m)
    row[i - 1] = 1.0
    row[j - 1] = -1.0
    return row


def build_atilde(sys: MultiChannelSystem, F) -> np.ndarray:
    """Gain-free part of the stacked error dynamics.

    Atilde = kron(I_m, A + sum_j B_j F_j) - Q with Q's (i,j) block equal to
    B_j F_j; block row i of Atilde*eps is then A e_i + sum_j B_j F_j (e_i - e_j).
    """
    F = validate_feedback(sys, F)
    n, m = sys.n, sys.m
    bf = [sys.B[j] @ F[j] for j in range(m)]
    core = sys.A + sum(bf)
    atilde = np.kron(np.eye(m), core)
    for i in range(m):
        for j in range(m):
            atilde[i * n:(i + 1) * n, j * n:(j + 1) * n] -= bf[j]
    return atilde


def validate_feedback(sys: MultiChannelSystem, F) -> tuple[np.ndarray, ...]:
    """Check one feedback gain per channel, shaped m_i x n."""
    if len(F) != sys.m:
        raise ValidationError(f"expected {sys.m} feedback gains, got {len(F)}")
    return tuple(
        as_matrix(Fi, rows=sys.input_widths[i], cols=sys.n, name=f"F_{i + 1}")
        for i, Fi in enumerate(F))


@dataclass
class ErrorSystem:
    """Assembled open-loop error dynamics for one injection channel q."""

    sys: MultiChannelSystem
    graph: NeighborGraph
    q: int
    a_base: np.ndarray                      # Atilde, before gain injection
    a_open: np.ndarray                      # Atilde + observer-gain terms
    btilde: tuple[np.ndarray, ...]          # per-channel injection maps
    chat: tuple[np.ndarray, ...]            # per-channel local output reads
    ctilde: tuple[np.ndarray, ...]          # per-channel stacked neighbor differences
    neighbor_order: tuple[tuple[int, ...], ...]  # sorted N_i minus self, per channel
    y_map: np.ndarray                       # injection channel's full output map
    y_widths: tuple[int, ...]               # row-block widths of y_map

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def m(self) -> int:
        return self.sys.m

    @property
    def dim(self) -> int:
        return self.sys.n * self.sys.m

    @property
    def input_map(self) -> np.ndarray:
        """Btilde_q, through which the channel controller acts."""
        return self.btilde[self.q - 1]


def _validate_gains(sys: MultiChannelSystem, graph: NeighborGraph, K, H):
    n, m = sys.n, sys.m
    if len(K) != m:
        raise ValidationError(f"expected {m} output-injection gains, got {len(K)}")
    if len(H) != m:
        raise ValidationError(f"expected {m} consensus gain maps, got {len(H)}")
    Kv = tuple(as_matrix(Ki, rows=n, cols=sys.output_widths[i], name=f"K_{i + 1}")
               for i, Ki in enumerate(K))
    Hv = []
    for i in range(1, m + 1):
        expected = graph.in_neighbors(i)
        got = tuple(sorted(H[i - 1]))
        if got != expected:
            raise ValidationError(
                f"channel {i}: consensus gains keyed {got}, expected neighbors {expected}")
        Hv.append({j: as_matrix(H[i - 1][j], rows=n, cols=n, name=f"H_{i}{j}")
                   for j in expected})
    return Kv, tuple(Hv)


def assemble_open_loop(sys: MultiChannelSystem, graph: NeighborGraph, F,
                       K, H, q: int) -> ErrorSystem:
    """Build the stacked open-loop error system for injection channel q.

    K is one n x p_i gain per channel; H[i-1] maps each neighbor j (j in N_i,
    j != i) to the n x n gain on the difference e_i - e_j.
    """
    n, m = sys.n, sys.m
    if graph.m != m:
        raise ValidationError(f"graph has {graph.m} vertices for {m} channels")
    if not (1 <= q <= m):
        raise ValidationError(f"injection channel q={q} outside 1..{m}")
    K, H = _validate_gains(sys, graph, K, H)

    a_base = build_atilde(sys, F)
    btilde = tuple(build_btilde(i, m, n) for i in range(1, m + 1))
    chat = tuple(sys.C[i - 1] @ btilde[i - 1].T for i in range(1, m + 1))

    neighbor_order = tuple(graph.in_neighbors(i) for i in range(1, m + 1))
    ctilde = []
    for i in range(1, m + 1):
        rows = [np.kron(incidence_row(i, j, m), np.eye(n))
                for j in neighbor_order[i - 1]]
        ctilde.append(np.vstack(rows) if rows else np.zeros((0, n * m)))
    ctilde = tuple(ctilde)

    a_open = a_base.copy()
    for i in range(1, m + 1):
        block = K[i - 1] @ chat[i - 1]
        if neighbor_order[i - 1]:
            h_cat = np.hstack([H[i - 1][j] for j in neighbor_order[i - 1]])
            block = block + h_cat @ ctilde[i - 1]
        a_open += btilde[i - 1] @ block

    y_map = np.vstack([chat[q - 1], ctilde[q - 1]])
    y_widths = (sys.output_widths[q - 1],) + (n,) * len(neighbor_order[q - 1])

    return ErrorSystem(sys=sys, graph=graph, q=q, a_base=a_base, a_open=a_open,
                       btilde=btilde, chat=chat, ctilde=ctilde,
                       neighbor_order=neighbor_order, y_map=y_map,
                       y_widths=y_widths)
