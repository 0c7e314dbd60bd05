"""Deterministic consensus gains that secure single-channel controllability.

A spanning tree rooted at the injection channel q yields an m x m matrix G
with zero row sums whose pair (G, b_q) is controllable; lifting G by
kron(., I_n) gives consensus gains under which the stacked error system is
controllable through channel q with controllability index exactly m.  A
scalar sweep then transfers that index to an arbitrary base matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import SynthesisError, ValidationError
from .model import (NeighborGraph, as_matrix, controllability_index,
                    spanning_tree, RANK_TOL)
from .errorsys import build_btilde, incidence_row

# Candidate scalars tried, in order, by gain_sweep.
SWEEP_LADDER = (1.0, 2.0, 4.0, 8.0, 16.0, 0.5, 0.25)


def tree_gain_matrix(graph: NeighborGraph, q: int) -> np.ndarray:
    """m x m tree-gain matrix for root q.

    Vertex weights are v_q = 0 and v_i = i otherwise (distinct by
    construction).  Row i carries v_i at column i and -v_i at the tree
    parent's column, so row sums vanish and nonzeros sit only on arcs of the
    neighbor graph.
    """
    tree = spanning_tree(graph, q)
    m = graph.m
    G = np.zeros((m, m))
    for i in range(1, m + 1):
        if i == q:
            continue
        G[i - 1, i - 1] = float(i)
        G[i - 1, tree.parent[i] - 1] = -float(i)
    return G


def lift_tree_gains(G, graph: NeighborGraph, n: int) -> list[dict[int, np.ndarray]]:
    """Expand tree-gain rows into per-arc n x n consensus gain blocks.

    Row i of G equals v_i * (e_i - e_parent)^T, so channel i gets the single
    block v_i * I_n on its tree-parent arc and zero blocks elsewhere.  The
    result is keyed like observer consensus gains: H[i-1][j] acts on e_i - e_j,
    which lands -H[i-1][j] on block column j, hence the sign flip below.
    Asserts the defining identity sum_i Btilde_i Hhat_i Ctilde_i = kron(G, I_n).
    """
    m = graph.m
    G = as_matrix(G, rows=m, cols=m, name="G")
    lifted: list[dict[int, np.ndarray]] = []
    for i in range(1, m + 1):
        blocks: dict[int, np.ndarray] = {}
        for j in graph.in_neighbors(i):
            blocks[j] = -G[i - 1, j - 1] * np.eye(n)
        row_rest = G[i - 1].copy()
        row_rest[i - 1] = 0.0
        for j in graph.in_neighbors(i):
            row_rest[j - 1] = 0.0
        if np.any(row_rest):
            raise ValidationError(
                f"G row {i} has weight outside the neighbor set of {i}")
        lifted.append(blocks)

    assembled = np.zeros((n * m, n * m))
    for i in range(1, m + 1):
        bt = build_btilde(i, m, n)
        for j, blk in lifted[i - 1].items():
            assembled += bt @ blk @ np.kron(incidence_row(i, j, m), np.eye(n))
    assert np.allclose(assembled, np.kron(G, np.eye(n))), \
        "lifted consensus gains do not reproduce kron(G, I_n)"
    return lifted


def gain_sweep(M, A_part, B, target_index: int,
               ladder: tuple[float, ...] = SWEEP_LADDER,
               tol: float = RANK_TOL) -> float:
    """Pick g from the ladder so (M + g*A_part, B) is controllable with index
    at most target_index.

    Requires (A_part, B) itself controllable with index target_index; almost
    every scalar works, so a short fixed ladder suffices and keeps runs
    reproducible.  When rank(B) * target_index equals the state dimension the
    accepted index is exactly target_index, since no smaller index is possible.
    """
    M = as_matrix(M, name="M")
    N = M.shape[0]
    A_part = as_matrix(A_part, rows=N, cols=N, name="A_part")
    if M.shape[1] != N:
        raise ValidationError(f"M must be square, got {M.shape}")
    B = as_matrix(B, rows=N, name="B")

    base_index = controllability_index(A_part, B, tol)
    if base_index != target_index:
        raise ValidationError(
            f"(A_part, B) has controllability index {base_index}, "
            f"expected {target_index}")

    for g in ladder:
        idx = controllability_index(M + g * A_part, B, tol)
        if idx is not None and idx <= target_index:
            return float(g)
    raise SynthesisError(
        f"no ladder gain in {ladder} kept controllability index <= {target_index}")
