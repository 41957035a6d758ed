"""Undirected population networks: storage, distance queries, summary statistics.

Adjacency is stored as sorted neighbor lists (CSR arrays). Distances are
computed by truncated breadth-first search and exposed as exact-distance
shells; a pair further apart than the cap is reported as absent rather than
with a sentinel value.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import UserInputError

DENSE_CAP = 5000


@dataclass(frozen=True)
class Network:
    """Fixed undirected graph over nodes 0..n-1 with no self-loops.

    ``indices[indptr[i]:indptr[i+1]]`` lists i's neighbors in ascending order.
    Instances are immutable and safe for concurrent reads.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    labels: tuple | None = None

    @classmethod
    def from_edges(cls, n: int, edges, labels=None) -> "Network":
        """Build from an iterable of (i, j) pairs; symmetrizes and deduplicates."""
        pairs = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise UserInputError(f"self-loop ({i},{i}) is not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise UserInputError(f"edge ({i},{j}) out of range for n={n}")
            pairs.add((min(i, j), max(i, j)))
        deg = np.zeros(n, dtype=np.int64)
        for i, j in pairs:
            deg[i] += 1
            deg[j] += 1
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.zeros(indptr[-1], dtype=np.int64)
        fill = indptr[:-1].copy()
        for i, j in sorted(pairs):
            indices[fill[i]] = j
            fill[i] += 1
            indices[fill[j]] = i
            fill[j] += 1
        # per-row sort: rows were filled in sorted pair order for i<j only
        for i in range(n):
            row = indices[indptr[i]:indptr[i + 1]]
            row.sort()
        return cls(n=n, indptr=indptr, indices=indices, labels=labels)

    @classmethod
    def from_dense(cls, a) -> "Network":
        a = np.asarray(a)
        if not np.array_equal(a, a.T):
            raise UserInputError("adjacency matrix must be symmetric")
        if np.any(np.diag(a) != 0):
            raise UserInputError("adjacency matrix must have a zero diagonal")
        ii, jj = np.nonzero(np.triu(a, 1))
        return cls.from_edges(a.shape[0], zip(ii.tolist(), jj.tolist()))

    @property
    def edge_count(self) -> int:
        return self.indices.size // 2

    @property
    def degrees(self) -> np.ndarray:
        return self.indptr[1:] - self.indptr[:-1]

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def has_edge(self, i: int, j: int) -> bool:
        row = self.neighbors(i)
        pos = np.searchsorted(row, j)
        return pos < row.size and row[pos] == j

    def to_dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.n > cap:
            raise UserInputError(
                f"dense materialization refused for n={self.n} > cap={cap}")
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for i in range(self.n):
            a[i, self.neighbors(i)] = 1
        return a

    def edge_set(self) -> set:
        out = set()
        for i in range(self.n):
            for j in self.neighbors(i):
                if i < j:
                    out.add((i, int(j)))
        return out


# the population graph is just a Network; the alias keeps call sites readable
PopulationGraph = Network


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Exact-distance shells per node, truncated at ``smax``.

    For node i, ``order[node_ptr[i]:node_ptr[i+1]]`` holds the nodes within
    distance smax (i itself first) and ``dist`` their distances. Pairs beyond
    smax do not appear; ``distance`` returns None for them.
    """

    smax: int
    node_ptr: np.ndarray
    order: np.ndarray
    dist: np.ndarray
    _n: int = field(default=0)

    @property
    def n(self) -> int:
        return self.node_ptr.size - 1

    def reach(self, i: int):
        """(nodes, distances) within smax of i, including i at distance 0."""
        lo, hi = self.node_ptr[i], self.node_ptr[i + 1]
        return self.order[lo:hi], self.dist[lo:hi]

    def shell(self, i: int, s: int) -> np.ndarray:
        nodes, d = self.reach(i)
        return nodes[d == s]

    def ball(self, i: int, s: int) -> np.ndarray:
        nodes, d = self.reach(i)
        return nodes[d <= s]

    def distance(self, i: int, j: int):
        """Exact distance, or None when it exceeds smax."""
        nodes, d = self.reach(i)
        pos = np.nonzero(nodes == j)[0]
        if pos.size == 0:
            return None
        return int(d[pos[0]])


def build_index(g: Network, smax: int) -> NeighborhoodIndex:
    """Index exact-distance shells of every node up to ``smax``."""
    if smax < 0:
        raise UserInputError("smax must be >= 0")
    node_ptr, order, dist = _kernels.truncated_shells(g.indptr, g.indices, smax)
    return NeighborhoodIndex(smax=int(smax), node_ptr=node_ptr, order=order, dist=dist)


def load_edge_list(source, n: int | None = None, one_based: bool = False,
                   labels=None) -> Network:
    """Parse an edge-list text stream into a :class:`Network`.

    Records are whitespace- or comma-separated index pairs, one per line; an
    optional non-numeric header line is skipped. ``one_based`` shifts indices
    down by one. When ``n`` is omitted it is inferred from the largest index.

    Raises :class:`UserInputError` naming the offending line for malformed
    records, self-loops, and out-of-range endpoints.
    """
    if isinstance(source, (str, bytes)):
        source = io.StringIO(source.decode() if isinstance(source, bytes) else source)
    base = 1 if one_based else 0
    raw = []
    seen_record = False
    for lineno, line in enumerate(source, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        tokens = text.replace(",", " ").split()
        if not seen_record and any(not _is_int(t) for t in tokens):
            continue  # header row
        seen_record = True
        if len(tokens) != 2 or not all(_is_int(t) for t in tokens):
            raise UserInputError(f"malformed edge record at line {lineno}: {text!r}")
        i, j = int(tokens[0]) - base, int(tokens[1]) - base
        if i == j:
            raise UserInputError(f"self-loop at line {lineno}")
        raw.append((lineno, i, j))
    if n is None:
        n = 1 + max((max(i, j) for _, i, j in raw), default=-1)
    for lineno, i, j in raw:
        if not (0 <= i < n and 0 <= j < n):
            raise UserInputError(
                f"edge index out of range [0, {n}) at line {lineno}")
    return Network.from_edges(n, [(i, j) for _, i, j in raw], labels=labels)


def network_summary(g: Network) -> dict:
    """Node/edge counts plus mean degree and mean second-order degree.

    The second-order degree of i counts distinct nodes at exact distance 2:
    friends-of-friends that are neither i nor directly connected to i.
    """
    idx = build_index(g, 2)
    second = np.array([idx.shell(i, 2).size for i in range(g.n)], dtype=np.float64)
    return {
        "nodes": int(g.n),
        "edges": int(g.edge_count),
        "mean_degree": float(g.degrees.mean()) if g.n else 0.0,
        "mean_second_order_degree": float(second.mean()) if g.n else 0.0,
    }


def sparsity_diagnostics(g: Network, k: int,
                         index: NeighborhoodIndex | None = None) -> dict:
    """Plausibility numbers for the sparsity conditions behind the HAC theory.

    Reports, for dependence radius ``k`` (truncation 2k):

    - ``delta_boundary_sum``: sum over 1 <= s <= 2k of the mean exact-shell size;
    - ``delta_2k_second_moment_ratio``: mean squared ball size within 2k over n,
      where each ball contains the node itself (an empty graph thus reports
      1/n, not 0 -- the self-neighborhood convention);
    - ``j_quadruple_ratio``: sum over 0 <= s <= 2k of the quadruple counts
      |{(i,j,i',j'): d(i,j)=s, i' in ball(i,2k), j' in ball(j,2k)}| over n^2,
      which also includes the i=j self-pairs at s=0.

    All three should stay modest relative to n for the variance estimator's
    asymptotics to be believable; they are reported, never asserted.
    """
    if index is None or index.smax < 2 * k:
        index = build_index(g, 2 * k)
    n = g.n
    two_k = 2 * k
    ball_sizes = np.zeros(n, dtype=np.float64)
    shell_means = np.zeros(two_k + 1, dtype=np.float64)
    for i in range(n):
        _, d = index.reach(i)
        ball_sizes[i] = d.size
        for s in range(1, two_k + 1):
            shell_means[s] += np.count_nonzero(d == s)
    shell_means /= max(n, 1)
    j_total = 0.0
    for i in range(n):
        nodes, d = index.reach(i)
        j_total += ball_sizes[i] * np.sum(ball_sizes[nodes[d <= two_k]])
    return {
        "delta_boundary_sum": float(shell_means[1:].sum()),
        "delta_2k_second_moment_ratio": float(np.mean(ball_sizes ** 2) / n) if n else 0.0,
        "j_quadruple_ratio": float(j_total / n ** 2) if n else 0.0,
    }


def _is_int(token: str) -> bool:
    try:
        int(token)
        return True
    except ValueError:
        return False
