"""Finite factor chains and their generating functions.

A factor is a finite Markov chain on a labelled state set whose first state is
the root.  All generating functions at a real argument ``z`` are read off the
resolvent ``(I - z P)^{-1}``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import SingularResolvent, ValidationError

STOCHASTIC_TOL = 1e-12
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FactorChain:
    """One rooted factor ``(V_i, o_i, P_i)``.

    ``states[0]`` is the root.  ``transitions`` is a dense row-stochastic
    matrix indexed like ``states``.
    """

    factor_id: int
    states: tuple[str, ...]
    transitions: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        P.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))

    @classmethod
    def from_edges(cls, factor_id: int, states: Sequence[str], edges) -> "FactorChain":
        """Build a chain from ``(src, dst, prob)`` triples; prob may be a Fraction or string."""
        index = {s: k for k, s in enumerate(states)}
        P = np.zeros((len(states), len(states)))
        for src, dst, prob in edges:
            P[index[src], index[dst]] += float(Fraction(prob)) if isinstance(prob, str) else float(prob)
        return cls(factor_id, tuple(states), P)

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def root(self) -> str:
        return self.states[0]

    def index(self, state) -> int:
        if isinstance(state, (int, np.integer)):
            return int(state)
        return self.states.index(state)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.transitions))))

    def root_distances(self) -> np.ndarray:
        """Directed graph distance from the root to every state (BFS on positive entries)."""
        dist = np.full(self.size, -1, dtype=int)
        dist[0] = 0
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for y in np.flatnonzero(self.transitions[x] > 0):
                if dist[y] < 0:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        return dist

    def distances_to_root(self) -> np.ndarray:
        """Directed graph distance from every state back to the root."""
        return FactorChain(self.factor_id, self.states, self.transitions.T).root_distances()


@dataclass
class ValidationReport:
    factor_id: int
    violations: list[str]
    epsilon0: float
    K: int

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_factor(chain: FactorChain, horizon: int = 1) -> ValidationReport:
    """Check the standing assumptions on a factor and extract the uniform-irreducibility constants.

    For every positive transition ``(x, y)`` the best witness ``max_{k<=K} p^(k)(x, y)``
    is taken; ``epsilon0`` is the minimum of these over all positive transitions and
    ``K`` is the smallest horizon (up to ``horizon``) attaining that minimum.
    """
    P = chain.transitions
    violations = []
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != len(chain.states):
        return ValidationReport(chain.factor_id, ["transition matrix shape does not match state list"], 0.0, 0)
    if len(set(chain.states)) != len(chain.states):
        violations.append("duplicate state labels")
    if chain.size < 2:
        violations.append("fewer than 2 states")
    if np.any(P < 0):
        violations.append("negative transition probability")
    rows = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > STOCHASTIC_TOL)
    if bad.size:
        violations.append(
            "not stochastic: rows " + ", ".join(f"{chain.states[k]} (sum {rows[k]:.12g})" for k in bad)
        )
    if np.any(np.diag(P) != 0):
        violations.append("nonzero diagonal (self-loops are not allowed)")
    unreachable = np.flatnonzero(chain.root_distances() < 0)
    if unreachable.size:
        violations.append("unreachable from root: " + ", ".join(chain.states[k] for k in unreachable))

    edges = P > 0
    best = np.where(edges, P, 0.0)
    eps = float(best[edges].min()) if edges.any() else 0.0
    K = 1
    Pk = P.copy()
    for k in range(2, horizon + 1):
        Pk = Pk @ P
        best = np.maximum(best, np.where(edges, Pk, 0.0))
        cand = float(best[edges].min())
        if cand > eps:
            eps, K = cand, k
    return ValidationReport(chain.factor_id, violations, eps, K)


def require_valid(chain: FactorChain) -> None:
    report = validate_factor(chain)
    if not report.ok:
        raise ValidationError(f"factor {chain.factor_id} is invalid", report.violations)


@dataclass(frozen=True, eq=False)
class FactorResolventCache:
    """Green matrix of one factor at a real point ``z`` and its ``z``-derivative."""

    factor_id: int
    z: float
    green: np.ndarray = field(repr=False)
    green_dz: np.ndarray = field(repr=False)
    residual: float = 0.0


def green_factor(chain: FactorChain, z: float) -> FactorResolventCache:
    """``G_i(x, y | z)`` for all pairs, by LU solve of ``(I - zP) G = I``.

    The derivative uses the resolvent identity ``dG/dz = G P G``.
    """
    z = float(z)
    if z < 0:
        raise SingularResolvent(f"negative evaluation point z={z}")
    P = chain.transitions
    if z * chain.spectral_radius() >= 1.0:
        raise SingularResolvent(f"z={z} is outside the resolvent domain of factor {chain.factor_id}")
    n = chain.size
    A = np.eye(n) - z * P
    try:
        G = np.linalg.solve(A, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularResolvent(str(exc)) from exc
    residual = float(np.max(np.abs(A @ G - np.eye(n))))
    if not np.all(np.isfinite(G)) or residual > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(G)))):
        raise SingularResolvent(f"resolvent residual {residual:.3g} at z={z}")
    if np.min(G) < -RESIDUAL_TOL * max(1.0, float(np.max(G))):
        raise SingularResolvent(f"negative Green function entries at z={z}")
    G = np.maximum(G, 0.0)
    dG = G @ P @ G
    G.setflags(write=False)
    dG.setflags(write=False)
    return FactorResolventCache(chain.factor_id, z, G, dG, residual)


def first_visit(cache: FactorResolventCache, x: int, y: int) -> float:
    """``F_i(x, y | z) = G_i(x, y | z) / G_i(y, y | z)``."""
    return float(cache.green[x, y] / cache.green[y, y])


def last_visit(cache: FactorResolventCache, x: int, y: int) -> float:
    """``L_i(x, y | z) = G_i(x, y | z) / G_i(x, x | z)``."""
    return float(cache.green[x, y] / cache.green[x, x])


def first_return(cache: FactorResolventCache, x: int) -> float:
    """``U_i(x, x | z) = 1 - 1 / G_i(x, x | z)``."""
    return float(1.0 - 1.0 / cache.green[x, x])


def first_visit_dz(cache: FactorResolventCache, x: int, y: int) -> float:
    """``d/dz F_i(x, y | z)`` by the quotient rule on the resolvent."""
    G, dG = cache.green, cache.green_dz
    return float((dG[x, y] * G[y, y] - G[x, y] * dG[y, y]) / G[y, y] ** 2)


def last_visit_row(cache: FactorResolventCache) -> np.ndarray:
    """``L_i(o_i, x | z)`` for every state ``x`` (index 0 is the root, value 1)."""
    return np.asarray(cache.green[0] / cache.green[0, 0])


def partial_green(chain: FactorChain, z: float, N: int) -> np.ndarray:
    """``sum_{n<=N} P^n z^n`` by repeated multiplication (brute-force oracle)."""
    P = chain.transitions
    term = np.eye(chain.size)
    total = term.copy()
    for _ in range(N):
        term = z * (term @ P)
        total += term
    return total


def identity_residuals(chain: FactorChain, cache: FactorResolventCache) -> dict[str, float]:
    """Largest violations of the standard identities between ``G``, ``F`` and ``L``.

    ``first_step``: ``F(x, y) = sum_w z p(x, w) F(w, y)`` for ``x != y``.
    ``last_step``: ``L(x, y) = sum_w L(x, w) z p(w, y)`` for ``x != y``.
    ``row_sum``: ``sum_y G(x, y) = 1 / (1 - z)`` (only for ``z < 1``).
    ``last_visit_sum``: ``sum_y L(o, y) = 1 / ((1 - z) G(o, o))``.
    """
    P, G, z = chain.transitions, cache.green, cache.z
    F = G / np.diag(G)[None, :]
    L = G / np.diag(G)[:, None]
    off = ~np.eye(chain.size, dtype=bool)
    out = {
        "resolvent": cache.residual,
        "first_step": float(np.max(np.abs((F - z * P @ F)[off]))),
        "last_step": float(np.max(np.abs((L - z * L @ P)[off]))),
    }
    if z < 1.0:
        out["row_sum"] = float(np.max(np.abs(G.sum(axis=1) - 1.0 / (1.0 - z))))
        out["last_visit_sum"] = float(abs(L[0].sum() - 1.0 / ((1.0 - z) * G[0, 0])))
    return out
