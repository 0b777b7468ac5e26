"""The coupled fixed-point system for the factor time-changes ``xi_i(z)``.

At a real point ``z`` the weights solve

    xi_i = alpha_i z / (1 - z * sum_{j != i} alpha_j A_j(xi_j)),
    A_j(w) = sum_s p_j(o_j, s) F_j(s, o_j | w),

where ``A_j(w)`` is the probability-generating weight of leaving the root of
factor ``j`` and coming back.  The map is coordinatewise increasing on
``[0, 1)^r`` so iterating from ``alpha * z`` converges monotonically from below
to the minimal solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    NoConvergence,
    SingularJacobian,
    SingularResolvent,
    SpecError,
    TransienceGateFailed,
)
from .factor import FactorChain, FactorResolventCache, first_visit, first_visit_dz, green_factor, validate_factor

FIXED_POINT_TOL = 1e-12
STEP_TOL = 1e-14
MAX_ITER = 10**6


@dataclass(frozen=True, eq=False)
class FreeProductSpec:
    factors: tuple[FactorChain, ...]
    alphas: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        a = np.array(self.alphas, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @property
    def r(self) -> int:
        return len(self.factors)

    @property
    def excluded(self) -> bool:
        """Two factors with two states each: the product walk is recurrent."""
        return self.r == 2 and all(f.size == 2 for f in self.factors)

    def violations(self) -> list[str]:
        out = self.structural_violations()
        if self.excluded:
            out.append("excluded case: two factors with two states each (recurrent walk)")
        return out

    def structural_violations(self) -> list[str]:
        out = []
        if self.r < 2:
            out.append("need at least 2 factors")
        if len(self.alphas) != self.r:
            out.append("number of weights differs from number of factors")
        elif np.any(self.alphas <= 0) or abs(float(self.alphas.sum()) - 1.0) > 1e-12:
            out.append("weights must be positive and sum to 1")
        seen = set()
        for f in self.factors:
            labels = set(f.states)
            if labels & seen:
                out.append(f"factor {f.factor_id} shares state labels with an earlier factor")
            seen |= labels
        for f in self.factors:
            out.extend(f"factor {f.factor_id}: {v}" for v in validate_factor(f).violations)
        return out

    def validate(self) -> None:
        v = self.violations()
        if v:
            raise SpecError("invalid free product specification", v)


@dataclass(frozen=True, eq=False)
class XiSolution:
    z: float
    xi: np.ndarray
    residuals: np.ndarray
    iterations: int
    monotone: bool
    caches: tuple[FactorResolventCache, ...] = field(repr=False)
    xi_prime: np.ndarray | None = None
    r_gate: float | None = None

    @property
    def xi_min(self) -> float:
        return float(self.xi.min())

    @property
    def xi_max(self) -> float:
        return float(self.xi.max())

    def green_root(self, i: int) -> float:
        return float(self.caches[i].green[0, 0])

    def green_root_dz(self, i: int) -> float:
        return float(self.caches[i].green_dz[0, 0])

    def hbar(self, spec: FreeProductSpec) -> np.ndarray:
        """Excursion weights avoiding factor ``i`` at the root, ``1 - alpha_i z / xi_i``."""
        return 1.0 - spec.alphas * self.z / self.xi


def _root_return(chain: FactorChain, cache: FactorResolventCache) -> tuple[float, float]:
    """``A(w) = sum_s p(o, s) F(s, o | w)`` and its derivative in ``w``."""
    row = chain.transitions[0]
    A = dA = 0.0
    for s in np.flatnonzero(row > 0):
        A += row[s] * first_visit(cache, s, 0)
        dA += row[s] * first_visit_dz(cache, s, 0)
    return A, dA


def _evaluate(spec: FreeProductSpec, xi: np.ndarray):
    caches, A, dA = [], np.empty(spec.r), np.empty(spec.r)
    for j, chain in enumerate(spec.factors):
        if not 0.0 <= xi[j] < 1.0:
            raise NoConvergence(f"xi_{j} left (0, 1): {xi[j]!r}")
        c = green_factor(chain, xi[j])
        caches.append(c)
        A[j], dA[j] = _root_return(chain, c)
    return caches, A, dA


def _phi(spec: FreeProductSpec, z: float, A: np.ndarray) -> np.ndarray:
    weighted = spec.alphas * A
    others = weighted.sum() - weighted
    denom = 1.0 - z * others
    if np.any(denom <= 0):
        raise NoConvergence("fixed-point denominator vanished")
    return spec.alphas * z / denom


def solve_xi(spec: FreeProductSpec, z: float = 1.0, start: np.ndarray | None = None,
             max_iter: int = MAX_ITER) -> XiSolution:
    """Solve the fixed-point system at ``z`` by monotone iteration.

    ``start`` must lie below the solution (a previous solution at a smaller ``z``
    qualifies); the default is ``alpha * z``.
    """
    z = float(z)
    xi = spec.alphas * z if start is None else np.array(start, dtype=float)
    monotone = True
    try:
        for it in range(1, max_iter + 1):
            caches, A, _ = _evaluate(spec, xi)
            new = _phi(spec, z, A)
            step = float(np.max(np.abs(new - xi)))
            if np.any(new < xi - 1e-15):
                monotone = False
            xi = new
            if step < STEP_TOL:
                break
        else:
            raise NoConvergence(f"no convergence after {max_iter} iterations", max_iter, step)
        caches, A, _ = _evaluate(spec, xi)
    except SingularResolvent as exc:
        raise NoConvergence(f"iteration left the resolvent domain: {exc}") from exc
    residuals = np.abs(xi - _phi(spec, z, A))
    if np.max(residuals) > FIXED_POINT_TOL:
        raise NoConvergence("fixed-point residual above tolerance", it, float(np.max(residuals)))
    return XiSolution(z, xi, residuals, it, monotone, tuple(caches))


def _jacobian(spec: FreeProductSpec, sol: XiSolution):
    """``dPhi/dxi`` and ``dPhi/dz`` at the solution."""
    r = spec.r
    A = np.empty(r)
    dA = np.empty(r)
    for j, chain in enumerate(spec.factors):
        A[j], dA[j] = _root_return(chain, sol.caches[j])
    z, a = sol.z, spec.alphas
    weighted = a * A
    others = weighted.sum() - weighted
    denom = 1.0 - z * others
    J = np.zeros((r, r))
    for i in range(r):
        for j in range(r):
            if i != j:
                J[i, j] = a[i] * z * z * a[j] * dA[j] / denom[i] ** 2
    dz = a / denom**2
    return J, dz


def xi_derivative(spec: FreeProductSpec, sol: XiSolution) -> np.ndarray:
    """``xi'(z)`` by implicit differentiation: ``(I - dPhi/dxi) xi' = dPhi/dz``."""
    J, dz = _jacobian(spec, sol)
    M = np.eye(spec.r) - J
    if np.linalg.cond(M) > 1e12:
        raise SingularJacobian(f"implicit-differentiation matrix is singular at z={sol.z}")
    return np.linalg.solve(M, dz)


def solve_with_derivative(spec: FreeProductSpec, z: float = 1.0) -> XiSolution:
    sol = solve_xi(spec, z)
    xp = xi_derivative(spec, sol)
    return XiSolution(sol.z, sol.xi, sol.residuals, sol.iterations, sol.monotone, sol.caches, xp, sol.r_gate)


def _return_factor(sol: XiSolution, j: int) -> float:
    """``1 / ((1 - xi_j) G_j(o_j, o_j | xi_j))``."""
    return 1.0 / ((1.0 - sol.xi[j]) * sol.green_root(j))


def gamma(spec: FreeProductSpec, sol: XiSolution, i: int, j: int, z: float | None = None) -> float:
    """``gamma_{i,j}(z)``; a different ``z`` than the solution's triggers a fresh solve."""
    if i == j:
        raise ValueError("gamma is defined for i != j only")
    if z is not None and float(z) != sol.z:
        sol = solve_xi(spec, z)
    xi = sol.xi
    return float((xi[i] / xi[j]) * (_return_factor(sol, j) - 1.0) / spec.alphas[i])


def gamma_prime(spec: FreeProductSpec, sol: XiSolution, i: int, j: int) -> float:
    """Analytic ``d/dz gamma_{i,j}`` at the solution point."""
    if i == j:
        raise ValueError("gamma is defined for i != j only")
    xp = sol.xi_prime if sol.xi_prime is not None else xi_derivative(spec, sol)
    xi = sol.xi
    Gj, dGj = sol.green_root(j), sol.green_root_dz(j)
    T = _return_factor(sol, j)
    dT = xp[j] * (Gj - (1.0 - xi[j]) * dGj) / ((1.0 - xi[j]) * Gj) ** 2
    ratio = xi[i] / xi[j]
    dratio = xp[i] / xi[j] - xi[i] * xp[j] / xi[j] ** 2
    return float((dratio * (T - 1.0) + ratio * dT) / spec.alphas[i])


def certify_transience(spec: FreeProductSpec, delta: float = 1e-3, steps: int = 10,
                       base: XiSolution | None = None) -> float:
    """Certify numerically that the system stays solvable up to ``z = 1 + delta``.

    Continuation from ``z = 1`` in ``steps`` equal increments with warm starts.
    """
    spec.validate()
    try:
        sol = base if base is not None else solve_xi(spec, 1.0)
        for k in range(1, steps + 1):
            sol = solve_xi(spec, 1.0 + delta * k / steps, start=sol.xi)
    except NoConvergence as exc:
        raise TransienceGateFailed(f"continuation to z={1 + delta} failed: {exc}") from exc
    if not np.all(sol.xi < 1.0):
        raise TransienceGateFailed("xi reached 1 before z=1+delta")
    return 1.0 + delta


def symmetric_scalar_equation(chain: FactorChain, r: int):
    """Scalar reduction for ``r`` identical factors with equal weights.

    Returns ``f(w)`` whose root in ``(0, 1)`` is the common ``xi`` at ``z``.
    """

    def f(w: float, z: float = 1.0) -> float:
        c = green_factor(chain, w)
        A, _ = _root_return(chain, c)
        return w * (1.0 - z * (r - 1) / r * A) - z / r

    return f


def as_spec(factors: Sequence[FactorChain], alphas) -> FreeProductSpec:
    spec = FreeProductSpec(tuple(factors), np.asarray(alphas, dtype=float))
    spec.validate()
    return spec
