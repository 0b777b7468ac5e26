"""Volume growth of the free product and the entropy inequalities."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from math import log

import numpy as np

from .xi import FreeProductSpec

POWER_TOL = 1e-12
POWER_MAX_ITER = 10**5


def perron_root(A: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> tuple[float, np.ndarray]:
    """Dominant eigenvalue of a nonnegative matrix by power iteration on ``A + I``.

    The unit shift makes irreducible periodic matrices primitive; the iteration
    starts from the all-ones vector.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = A + np.eye(n)
    v = np.ones(n) / n
    mu = 0.0
    for _ in range(max_iter):
        w = B @ v
        new_mu = float(w.sum())
        w /= new_mu
        if abs(new_mu - mu) <= tol * new_mu and np.max(np.abs(w - v)) <= tol:
            v, mu = w, new_mu
            break
        v, mu = w, new_mu
    return mu - 1.0, v


def power_residual(A: np.ndarray, lam: float, v: np.ndarray) -> float:
    return float(np.max(np.abs(A @ v - lam * v)) / np.max(np.abs(v)))


def block_matrix(spec: FreeProductSpec) -> np.ndarray:
    sizes = np.array([f.size - 1 for f in spec.factors], dtype=float)
    D = np.tile(sizes, (spec.r, 1))
    np.fill_diagonal(D, 0.0)
    return D


def lambda_block(spec: FreeProductSpec) -> float:
    lam, _ = perron_root(block_matrix(spec))
    return lam


def sphere_counts_block(spec: FreeProductSpec, n_max: int) -> list[int]:
    """Number of words of block length ``n`` for ``n = 0..n_max`` (exact integers)."""
    sizes = [f.size - 1 for f in spec.factors]
    # by_type[i]: words of the current length ending with a letter of factor i
    by_type = list(sizes)
    counts = [1, sum(by_type)]
    for _ in range(2, n_max + 1):
        total = sum(by_type)
        by_type = [sizes[i] * (total - by_type[i]) for i in range(spec.r)]
        counts.append(sum(by_type))
    return counts[: n_max + 1]


def _bfs_tree(chain) -> list[list[int]]:
    """Children lists of a distance-preserving BFS spanning tree; ties go to the smallest index."""
    P = chain.transitions
    children = [[] for _ in range(chain.size)]
    seen = {0}
    queue = deque([0])
    while queue:
        x = queue.popleft()
        for y in np.flatnonzero(P[x] > 0):
            y = int(y)
            if y not in seen:
                seen.add(y)
                children[x].append(y)
                queue.append(y)
    return children


@dataclass(frozen=True, eq=False)
class ConeGraph:
    """Finite directed graph whose directed cover is a spanning tree of the free product.

    Vertex 0 is the root; the others are labelled ``(factor, state)``.
    """

    labels: tuple[tuple[int, int] | None, ...]
    adjacency: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.labels)

    def out_degrees(self) -> list[int]:
        return [int(d) for d in self.adjacency.sum(axis=1)]


def build_cone_graph(spec: FreeProductSpec) -> ConeGraph:
    labels: list = [None]
    index = {}
    for i, f in enumerate(spec.factors):
        for s in range(1, f.size):
            index[(i, s)] = len(labels)
            labels.append((i, s))
    A = np.zeros((len(labels), len(labels)), dtype=int)
    trees = [_bfs_tree(f) for f in spec.factors]
    for i, children in enumerate(trees):
        for x, kids in enumerate(children):
            src = 0 if x == 0 else index[(i, x)]
            for y in kids:
                A[src, index[(i, y)]] = 1
    for i, f in enumerate(spec.factors):
        for x in range(1, f.size):
            for j, children in enumerate(trees):
                if j == i:
                    continue
                for y in children[0]:
                    A[index[(i, x)], index[(j, y)]] = 1
    return ConeGraph(tuple(labels), A)


def lambda_metric(graph: ConeGraph) -> float:
    lam, _ = perron_root(graph.adjacency)
    return lam


def sphere_counts_metric(graph: ConeGraph, n_max: int) -> list[int]:
    """Paths of length ``n`` from the root of the cone graph, ``n = 0..n_max``."""
    A = graph.adjacency.astype(object)
    v = [0] * graph.n_vertices
    v[0] = 1
    counts = [1]
    for _ in range(n_max):
        v = [sum(v[a] * A[a, b] for a in range(graph.n_vertices)) for b in range(graph.n_vertices)]
        counts.append(int(sum(v)))
    return counts


def sphere_counts_bfs(spec: FreeProductSpec, n_max: int) -> list[int]:
    """Graph-metric sphere sizes by breadth-first search on the free product itself."""
    succ = [[np.flatnonzero(f.transitions[x] > 0).tolist() for x in range(f.size)] for f in spec.factors]
    start = ()
    dist = {start: 0}
    counts = [0] * (n_max + 1)
    counts[0] = 1
    queue = deque([start])
    while queue:
        w = queue.popleft()
        d = dist[w]
        if d == n_max:
            continue
        top = w[-1][0] if w else None
        for i in range(spec.r):
            if i == top:
                for y in succ[i][w[-1][1]]:
                    nxt = w[:-1] if y == 0 else w[:-1] + ((i, y),)
                    if nxt not in dist:
                        dist[nxt] = d + 1
                        counts[d + 1] += 1
                        queue.append(nxt)
            else:
                for y in succ[i][0]:
                    nxt = w + ((i, y),)
                    if nxt not in dist:
                        dist[nxt] = d + 1
                        counts[d + 1] += 1
                        queue.append(nxt)
    return counts


@dataclass
class InequalityCheck:
    h: float
    bound_block: float
    bound_metric: float | None
    slack_block: float
    slack_metric: float | None
    block_ok: bool
    metric_ok: bool | None


def check_inequalities(h: float, ell0: float, ell1_est: float | None, lambda0: float, lambda1: float,
                       ell1_stderr: float = 0.0) -> InequalityCheck:
    """Entropy against growth times drift, for block length and for the graph metric.

    The metric bound uses a Monte Carlo drift, so it is allowed three standard
    errors of slack.
    """
    g0, g1 = log(lambda0), log(lambda1)
    b0 = g0 * ell0
    ok0 = h <= b0 + 1e-9
    if ell1_est is None:
        return InequalityCheck(h, b0, None, b0 - h, None, ok0, None)
    b1 = g1 * ell1_est
    ok1 = h <= b1 + 3.0 * ell1_stderr * g1
    return InequalityCheck(h, b0, b1, b0 - h, b1 - h, ok0, ok1)


@dataclass
class GrowthReport:
    lambda0: float
    lambda1: float
    g0: float
    g1: float
    residual0: float
    residual1: float
    sphere_counts_block: list[int]
    sphere_counts_metric: list[int]
    cone_vertices: int


def growth_report(spec: FreeProductSpec, n_max: int = 12) -> GrowthReport:
    D = block_matrix(spec)
    lam0, v0 = perron_root(D)
    cone = build_cone_graph(spec)
    lam1, v1 = perron_root(cone.adjacency)
    return GrowthReport(
        lam0, lam1, log(lam0), log(lam1),
        power_residual(D, lam0, v0), power_residual(cone.adjacency, lam1, v1),
        sphere_counts_block(spec, n_max), sphere_counts_metric(cone, n_max), cone.n_vertices,
    )
