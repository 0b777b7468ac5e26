"""Entropy of random walks on free products of groups.

Each factor is a group carrying a step distribution on its non-identity
elements.  The entropy is expressed through the first-visit generating
functions of the factor walks evaluated at the time-change ``xi_i``; for
infinite factors the inner sum over group elements is truncated with a
certified tail bound.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from math import comb, log, sqrt
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import bisect

from .errors import NoConvergence, NoRoot, TailBoundTooLoose
from .factor import FactorChain, green_factor


class GroupFactor(ABC):
    """What a group factor must supply to the entropy formula.

    Elements are hashable; the identity is ``self.identity``.  ``first_visit`` and
    ``green_root`` take a real argument ``w`` in ``(0, 1)``.  ``elements(N)``
    enumerates a finite set of non-identity elements and ``tail_bound(N, w)``
    bounds ``sum F(g') |log F(g g')/F(g')|`` over the elements it leaves out,
    uniformly in ``g`` from the support.
    """

    identity: Hashable

    @abstractmethod
    def support(self) -> dict: ...

    @abstractmethod
    def multiply(self, g, h): ...

    @abstractmethod
    def first_visit(self, g, w: float) -> float: ...

    @abstractmethod
    def green_root(self, w: float) -> float: ...

    @abstractmethod
    def elements(self, N: int) -> list: ...

    @abstractmethod
    def tail_bound(self, N: int, w: float) -> float: ...

    def is_finite(self) -> bool:
        return False

    def single_step_entropy(self) -> float:
        return -sum(p * log(p) for p in self.support().values() if p > 0)

    def root_return(self, w: float) -> float:
        """``sum_s mu(s) F(s, e | w)``, i.e. first return at ``w`` divided by ``w``."""
        return (1.0 - 1.0 / self.green_root(w)) / w


class FiniteGroupFactor(GroupFactor):
    """A finite group given by its multiplication table; element 0 is the identity."""

    def __init__(self, table: Sequence[Sequence[int]], mu: dict[int, float], factor_id: int = 0, name: str = "G"):
        self.table = np.asarray(table, dtype=int)
        n = self.table.shape[0]
        self.identity = 0
        self._mu = {int(k): float(v) for k, v in mu.items() if v > 0}
        if 0 in self._mu:
            raise ValueError("step distribution must not charge the identity")
        self._inv = [int(np.flatnonzero(self.table[g] == 0)[0]) for g in range(n)]
        P = np.zeros((n, n))
        for x in range(n):
            for s, p in self._mu.items():
                P[x, self.table[x, s]] += p
        self.chain = FactorChain(factor_id, tuple(f"{name}{k}" for k in range(n)), P)
        self._cache = {}

    @classmethod
    def cyclic(cls, m: int, mu: dict[int, float], factor_id: int = 0, name: str = "Z") -> "FiniteGroupFactor":
        table = [[(a + b) % m for b in range(m)] for a in range(m)]
        return cls(table, mu, factor_id, name)

    def is_finite(self) -> bool:
        return True

    def support(self) -> dict:
        return dict(self._mu)

    def multiply(self, g, h):
        return int(self.table[g, h])

    def _green(self, w):
        if w not in self._cache:
            self._cache[w] = green_factor(self.chain, w).green
        return self._cache[w]

    def first_visit(self, g, w):
        G = self._green(w)
        return float(G[0, g] / G[g, g])

    def green_root(self, w):
        return float(self._green(w)[0, 0])

    def elements(self, N):
        return list(range(1, self.table.shape[0]))

    def tail_bound(self, N, w):
        return 0.0


@dataclass(frozen=True)
class HalfSpace:
    """First arrival at level 1 of the ``Z x Z/2`` walk, split by the arrival point."""

    a: float
    b: float
    iterations: int

    @property
    def total(self) -> float:
        return self.a + self.b


def _minimal_root(c: float, lin: float) -> float:
    """Smallest root of ``x = c (1 + lin x + x^2)``."""
    disc = (1.0 - c * lin) ** 2 - 4.0 * c * c
    if disc < 0:
        raise NoRoot("half-space equation has no real root")
    return (1.0 - c * lin - sqrt(disc)) / (2.0 * c)


class ZZ2Factor(GroupFactor):
    """``Z x Z/2`` with mass 1/3 on each of ``(1,0)``, ``(-1,0)``, ``(0,1)``.

    ``a = (1,0)``, ``b = (1,1)``, ``c = (0,1)``; the projection to the first
    coordinate is the level.
    """

    identity = (0, 0)
    A, B, C = (1, 0), (1, 1), (0, 1)

    def support(self):
        return {(1, 0): 1 / 3, (-1, 0): 1 / 3, (0, 1): 1 / 3}

    def multiply(self, g, h):
        return (g[0] + h[0], (g[1] + h[1]) % 2)

    @staticmethod
    @lru_cache(maxsize=256)
    def half_space(w: float, damping: float = 1.0, max_iter: int = 100000) -> HalfSpace:
        """Solve the quadratic pair for the level-1 arrival functions by monotone iteration from 0.

        Falls back to the scalar quadratics satisfied by ``a + b`` and ``a - b``.
        """
        c = w / 3.0
        a = b = 0.0
        for it in range(1, max_iter + 1):
            na = c * (1.0 + b + a * a + b * b)
            nb = c * (a + 2.0 * a * b)
            na = a + damping * (na - a)
            nb = b + damping * (nb - b)
            if abs(na - a) + abs(nb - b) < 1e-16:
                return HalfSpace(na, nb, it)
            a, b = na, nb
        S = _minimal_root(c, 1.0)
        D = _minimal_root(c, -1.0)
        return HalfSpace((S + D) / 2.0, (S - D) / 2.0, max_iter)

    @staticmethod
    def half_space_residual(w: float, hs: HalfSpace) -> float:
        c = w / 3.0
        a, b = hs.a, hs.b
        return max(abs(a - c * (1 + b + a * a + b * b)), abs(b - c * (a + 2 * a * b)))

    @classmethod
    @lru_cache(maxsize=256)
    def base_first_visits(cls, w: float) -> tuple[float, float, float]:
        """``F(a|w), F(b|w), F(c|w)`` from the 3x3 linear system."""
        hs = cls.half_space(w)
        c = w / 3.0
        M = np.array([
            [1.0 - c * hs.a, -c * (1.0 + hs.b), 0.0],
            [-c * (1.0 + hs.b), 1.0 - c * hs.a, -c],
            [0.0, -2.0 * c, 1.0],
        ])
        rhs = np.array([c, 0.0, c])
        Fa, Fb, Fc = np.linalg.solve(M, rhs)
        return float(Fa), float(Fb), float(Fc)

    @classmethod
    def linear_residual(cls, w: float) -> float:
        hs = cls.half_space(w)
        Fa, Fb, Fc = cls.base_first_visits(w)
        c = w / 3.0
        return max(
            abs(Fa - c * (1 + Fb + hs.a * Fa + hs.b * Fb)),
            abs(Fb - c * (Fc + Fa + hs.a * Fb + hs.b * Fa)),
            abs(Fc - c * (1 + 2 * Fb)),
        )

    def closed_form(self, n: int, j: int, w: float) -> float:
        return zz2_f_closed_form(n, j, w)

    def first_visit(self, g, w):
        return zz2_f_closed_form(g[0], g[1], w)

    def green_root(self, w):
        Fa, _, Fc = self.base_first_visits(w)
        return 1.0 / (1.0 - (2.0 / 3.0) * w * Fa - (1.0 / 3.0) * w * Fc)

    def elements(self, N):
        return [(n, j) for n in range(-N, N + 1) for j in (0, 1) if (n, j) != (0, 0)]

    def tail_bound(self, N, w):
        """Bound from ``Fhat^{|n|-1} min(F(a),F(b)) <= F((n,j)) <= Fhat^{|n|}`` (valid for ``N >= 1``)."""
        if N < 1:
            return float("inf")
        fhat = self.half_space(w).total
        Fa, Fb, _ = self.base_first_visits(w)
        m = min(Fa, Fb)
        return 4.0 * (-log(m)) * fhat ** (N + 1) / (1.0 - fhat)


def zz2_f_closed_form(n: int, j: int, w: float) -> float:
    """First-visit function of ``(+-n, j)`` via the even/odd binomial sums."""
    n = abs(int(n))
    j = int(j) % 2
    Fa, Fb, Fc = ZZ2Factor.base_first_visits(w)
    if n == 0:
        return 1.0 if j == 0 else Fc
    hs = ZZ2Factor.half_space(w)
    a, b = hs.a, hs.b
    even = sum(comb(n, 2 * k) * b ** (2 * k) * a ** (n - 2 * k) for k in range(n // 2 + 1))
    odd = sum(comb(n, 2 * k + 1) * b ** (2 * k + 1) * a ** (n - 2 * k - 1) for k in range((n - 1) // 2 + 1))
    return even + odd * Fc if j == 0 else odd + even * Fc


def fhat_level(w: float) -> float:
    """Probability-generating weight of ever reaching level 1: smallest root of ``x = (w/3)(1 + x + x^2)``."""
    return _minimal_root(w / 3.0, 1.0)


def _zz2_equation(w: float) -> float:
    return 1.0 / (2.0 - 2.0 * w) - ZZ2Factor().green_root(w)


def solve_zz2_xi(alphas: Sequence[float] = (0.5, 0.5), tol: float = 1e-12) -> float:
    """Common ``xi`` of the symmetric two-factor ``Z x Z/2`` product, by bisection."""
    if len(alphas) != 2 or abs(alphas[0] - 0.5) > 1e-15 or abs(alphas[1] - 0.5) > 1e-15:
        raise ValueError("the scalar reduction needs two factors with equal weights")
    grid = np.linspace(0.01, 0.99, 99)
    vals = [_zz2_equation(w) for w in grid]
    for lo, hi, flo, fhi in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if flo < 0 <= fhi:
            return float(bisect(_zz2_equation, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))
    raise NoRoot("no sign change of the xi equation on (0, 1)")


def solve_group_xi(factors: Sequence[GroupFactor], alphas: Sequence[float], z: float = 1.0,
                   max_iter: int = 10**6) -> np.ndarray:
    """Monotone fixed-point iteration for the time-changes of group factors."""
    a = np.asarray(alphas, dtype=float)
    xi = a * z
    for _ in range(max_iter):
        A = np.array([f.root_return(w) for f, w in zip(factors, xi)])
        weighted = a * A
        new = a * z / (1.0 - z * (weighted.sum() - weighted))
        if np.any(new >= 1.0) or np.any(new <= 0):
            raise NoConvergence("xi left (0, 1)")
        if np.max(np.abs(new - xi)) < 1e-15:
            return new
        xi = new
    raise NoConvergence("group xi iteration did not converge", max_iter)


@dataclass
class GroupEntropyResult:
    h: float
    rho: list[float]
    truncation: int
    tail_bound: float
    first_letter_mass: list[float]


def entropy_groups(factors: Sequence[GroupFactor], alphas: Sequence[float], xi: Sequence[float],
                   rel_tol: float = 1e-6, n_start: int = 4, n_cap: int = 200) -> GroupEntropyResult:
    """Entropy of the free product of group factors.

    The truncation level grows until the certified tail is below ``rel_tol`` times
    the running total; exceeding ``n_cap`` raises ``TailBoundTooLoose``.
    """
    N = n_start
    while True:
        h, rho, mass, tail = _entropy_groups_at(factors, alphas, xi, N)
        if tail <= rel_tol * abs(h):
            return GroupEntropyResult(h, rho, N, tail, mass)
        if N >= n_cap or all(f.is_finite() for f in factors):
            if tail <= rel_tol * abs(h):
                return GroupEntropyResult(h, rho, N, tail, mass)
            raise TailBoundTooLoose(rel_tol * abs(h), tail)
        N = min(2 * N, n_cap)


def _entropy_groups_at(factors, alphas, xi, N):
    h = 0.0
    tail = 0.0
    rhos, masses = [], []
    for f, alpha, w in zip(factors, alphas, xi):
        G = f.green_root(w)
        escape = (1.0 - w) * G
        rho = 1.0 - escape
        elems = f.elements(N)
        F = {g: f.first_visit(g, w) for g in elems}
        masses.append(float(escape * sum(F.values())))
        rhos.append(float(rho))
        for g, mu in f.support().items():
            inner = 0.0
            for g2, Fg2 in F.items():
                gg = f.multiply(g, g2)
                Fgg = 1.0 if gg == f.identity else F.get(gg)
                if Fgg is None:
                    Fgg = f.first_visit(gg, w)
                inner += Fg2 * log(Fgg / Fg2)
            h -= alpha * mu * ((1.0 - rho) * log(f.first_visit(g, w)) + escape * inner)
        tail += alpha * escape * f.tail_bound(N, w)
    return float(h), rhos, masses, float(tail)
