"""Multi-channel system and neighbor-graph types, plus the rank tests under everything.

Channels and graph vertices are 1-indexed in every public signature; Python
sequences holding per-channel data are positional (entry 0 belongs to channel 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Relative singular-value cutoff used by every rank decision in the package.
RANK_TOL = 1e-10


def as_matrix(a, rows: int | None = None, cols: int | None = None,
              name: str = "matrix") -> np.ndarray:
    """Validate array_like as a finite real 2-D float matrix, optionally with fixed shape."""
    try:
        M = np.asarray(a, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: not interpretable as a real matrix ({exc})") from None
    if M.ndim != 2:
        raise ValidationError(f"{name}: expected a 2-D matrix, got shape {M.shape}")
    if rows is not None and M.shape[0] != rows:
        raise ValidationError(f"{name}: expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ValidationError(f"{name}: expected {cols} columns, got {M.shape[1]}")
    if M.size and not np.all(np.isfinite(M)):
        raise ValidationError(f"{name}: non-finite entries are not allowed")
    return M


def as_vector(a, length: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate array_like as a finite real 1-D float vector."""
    try:
        v = np.asarray(a, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: not interpretable as a real vector ({exc})") from None
    if length is not None and v.size != length:
        raise ValidationError(f"{name}: expected length {length}, got {v.size}")
    if v.size and not np.all(np.isfinite(v)):
        raise ValidationError(f"{name}: non-finite entries are not allowed")
    return v


def numerical_rank(M, tol: float = RANK_TOL) -> int:
    """Rank as the count of singular values above tol * sigma_max * max(rows, cols).

    The cutoff is relative, so uniform scaling of M does not change the answer.
    An all-zero (or empty) matrix has rank 0.
    """
    M = as_matrix(M, name="rank argument")
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    smax = s[0]
    if smax == 0.0:
        return 0
    return int(np.sum(s > tol * smax * max(M.shape)))


def controllability_matrix(A, B) -> np.ndarray:
    """[B, AB, ..., A^(n-1) B]."""
    A = as_matrix(A, name="A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValidationError(f"A must be square, got {A.shape}")
    B = as_matrix(B, rows=n, name="B")
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def is_controllable(A, B, tol: float = RANK_TOL) -> bool:
    A = as_matrix(A, name="A")
    return numerical_rank(controllability_matrix(A, B), tol) == A.shape[0]


def controllability_index(A, B, tol: float = RANK_TOL) -> int | None:
    """Smallest k with rank [B, AB, ..., A^(k-1)B] = n, or None if never reached.

    The index is at least ceil(n / rank B); by Cayley-Hamilton the search can
    stop at k = n.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValidationError(f"A must be square, got {A.shape}")
    B = as_matrix(B, rows=n, name="B")
    blocks = [B]
    for k in range(1, n + 1):
        if numerical_rank(np.hstack(blocks), tol) == n:
            return k
        blocks.append(A @ blocks[-1])
    return None


def is_observable(A, C, tol: float = RANK_TOL) -> bool:
    """Observability of (C, A), by duality with controllability of (A^T, C^T)."""
    A = as_matrix(A, name="A")
    C = as_matrix(C, cols=A.shape[0], name="C")
    return is_controllable(A.T, C.T, tol)


@dataclass(frozen=True)
class NeighborGraph:
    """Directed neighbor graph on vertices 1..m.

    neighbors[i-1] is the set N_i of channels whose estimates channel i can
    read; every vertex must list itself.  An arc j -> i exists exactly when
    j is in N_i.
    """

    m: int
    neighbors: tuple[frozenset[int], ...]

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"graph needs at least one vertex, got m={self.m}")
        if len(self.neighbors) != self.m:
            raise ValidationError(
                f"expected {self.m} neighbor sets, got {len(self.neighbors)}")
        for i, ns in enumerate(self.neighbors, start=1):
            for j in ns:
                if not (isinstance(j, int) and 1 <= j <= self.m):
                    raise ValidationError(
                        f"vertex {i}: neighbor label {j!r} outside 1..{self.m}")
            if i not in ns:
                raise ValidationError(
                    f"vertex {i} is missing its self-loop (i must be in N_i)")

    @classmethod
    def from_lists(cls, neighbor_lists) -> "NeighborGraph":
        sets = tuple(frozenset(int(j) for j in ns) for ns in neighbor_lists)
        return cls(m=len(sets), neighbors=sets)

    def neighbor_set(self, i: int) -> frozenset[int]:
        self._check_vertex(i)
        return self.neighbors[i - 1]

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        """Channels j != i whose state channel i receives, ascending."""
        return tuple(sorted(self.neighbor_set(i) - {i}))

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        """Channels w != i that receive channel i's state, ascending."""
        self._check_vertex(i)
        return tuple(w for w in range(1, self.m + 1)
                     if w != i and i in self.neighbors[w - 1])

    def degree(self, i: int) -> int:
        """k_i = |N_i|, counting the self-loop."""
        return len(self.neighbor_set(i))

    def _check_vertex(self, i: int) -> None:
        if not (1 <= i <= self.m):
            raise ValidationError(f"vertex {i} outside 1..{self.m}")


def is_strongly_connected(g: NeighborGraph) -> bool:
    """True when every vertex reaches every other along arcs j -> i (j in N_i)."""
    if g.m == 1:
        return True

    def reach(start: int, forward: bool) -> set[int]:
        seen = {start}
        frontier = [start]
        while frontier:
            u = frontier.pop()
            step = g.out_neighbors(u) if forward else g.in_neighbors(u)
            for w in step:
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        return seen

    full = set(range(1, g.m + 1))
    return reach(1, forward=True) == full and reach(1, forward=False) == full


@dataclass(frozen=True)
class SpanningTree:
    """BFS spanning tree with arcs oriented away from the root."""

    root: int
    parent: dict[int, int]      # vertex -> parent; root has no entry
    depth: dict[int, int]
    order: tuple[int, ...]      # BFS visit order, root first


def spanning_tree(g: NeighborGraph, root: int) -> SpanningTree:
    """BFS tree rooted at `root`, expanding out-arcs in ascending vertex order.

    Deterministic: the frontier is FIFO and children are discovered ascending,
    so equal inputs always give the same parent map.  Raises if some vertex is
    unreachable (the graph is then not strongly connected).
    """
    g._check_vertex(root)
    parent: dict[int, int] = {}
    depth = {root: 0}
    order = [root]
    queue = [root]
    while queue:
        u = queue.pop(0)
        for w in g.out_neighbors(u):
            if w not in depth:
                parent[w] = u
                depth[w] = depth[u] + 1
                order.append(w)
                queue.append(w)
    if len(order) != g.m:
        missing = sorted(set(range(1, g.m + 1)) - set(order))
        raise ValidationError(
            f"vertices {missing} unreachable from root {root}; "
            f"graph is not strongly connected")
    return SpanningTree(root=root, parent=parent, depth=depth, order=tuple(order))


@dataclass
class MultiChannelSystem:
    """x' = A x + sum_i B_i u_i with per-channel measurements y_i = C_i x."""

    A: np.ndarray
    B: tuple[np.ndarray, ...]
    C: tuple[np.ndarray, ...]

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValidationError(f"A must be square, got {A.shape}")
        if len(self.B) != len(self.C):
            raise ValidationError(
                f"channel count mismatch: {len(self.B)} input maps, "
                f"{len(self.C)} output maps")
        if len(self.B) < 2:
            raise ValidationError("need at least two channels")
        B = tuple(as_matrix(Bi, rows=n, name=f"B_{i}")
                  for i, Bi in enumerate(self.B, start=1))
        C = tuple(as_matrix(Ci, cols=n, name=f"C_{i}")
                  for i, Ci in enumerate(self.C, start=1))
        self.A, self.B, self.C = A, B, C

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return len(self.B)

    @property
    def input_widths(self) -> tuple[int, ...]:
        return tuple(Bi.shape[1] for Bi in self.B)

    @property
    def output_widths(self) -> tuple[int, ...]:
        return tuple(Ci.shape[0] for Ci in self.C)

    def b_all(self) -> np.ndarray:
        return np.hstack(self.B)

    def c_all(self) -> np.ndarray:
        return np.vstack(self.C)


@dataclass
class StructureReport:
    """Outcome of the joint controllability / observability screen."""

    joint_controllable: bool
    joint_observable: bool
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def lines(self) -> list[str]:
        out = [
            f"joint controllability: {'ok' if self.joint_controllable else 'FAIL'}",
            f"joint observability:   {'ok' if self.joint_observable else 'FAIL'}",
        ]
        out += [f"issue: {msg}" for msg in self.issues]
        return out


def check_joint(sys: MultiChannelSystem, tol: float = RANK_TOL) -> StructureReport:
    """Screen the standing assumptions: nonzero channels, joint ctrb/obsv."""
    issues: list[str] = []
    for i, Bi in enumerate(sys.B, start=1):
        if not np.any(Bi):
            issues.append(f"B_{i} is zero")
    for i, Ci in enumerate(sys.C, start=1):
        if not np.any(Ci):
            issues.append(f"C_{i} is zero")
    ctrb_ok = is_controllable(sys.A, sys.b_all(), tol)
    obsv_ok = is_observable(sys.A, sys.c_all(), tol)
    if not ctrb_ok:
        issues.append("(A, [B_1 ... B_m]) is not controllable")
    if not obsv_ok:
        issues.append("(stacked C, A) is not observable")
    return StructureReport(joint_controllable=ctrb_ok,
                           joint_observable=obsv_ok,
                           issues=issues)
