"""Letter-type chain, exit-letter chain, block-length drift and the length function."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import MalformedWord, StationarityResidual
from .factor import last_visit_row
from .xi import FreeProductSpec, XiSolution, gamma_prime, xi_derivative

KERNEL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TypeChain:
    q_hat: np.ndarray
    nu: np.ndarray
    normalizer: float
    nu_eigen: np.ndarray = field(repr=False)

    def residuals(self) -> dict[str, float]:
        return {
            "row_sum": float(np.max(np.abs(self.q_hat.sum(axis=1) - 1.0))),
            "stationarity": float(np.max(np.abs(self.nu @ self.q_hat - self.nu))),
            "closed_form_vs_eigen": float(np.max(np.abs(self.nu - self.nu_eigen))),
        }


@dataclass(frozen=True, eq=False)
class ExitChainKernel:
    """Exit-letter chain on ``{(g, i) : g in V_i^x}``.

    The kernel does not depend on the source letter, so only the per-(i -> j)
    target distributions are stored: ``targets[i][j][h-1] = q((*, i), (h, j))``.
    """

    nu: np.ndarray
    targets: tuple[tuple[np.ndarray, ...], ...] = field(repr=False)
    pi: tuple[np.ndarray, ...] = field(repr=False)
    length: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def r(self) -> int:
        return len(self.pi)

    def q(self, i: int, h: int, j: int) -> float:
        """``q((*, i), (h, j))`` with ``h`` a non-root state index of factor ``j``."""
        if i == j or h == 0:
            return 0.0
        return float(self.targets[i][j][h - 1])

    def states(self):
        for i, p in enumerate(self.pi):
            for g in range(1, len(p) + 1):
                yield g, i

    def residuals(self) -> dict[str, float]:
        r = self.r
        rows = [sum(float(self.targets[i][j].sum()) for j in range(r) if j != i) for i in range(r)]
        marg = np.array([p.sum() for p in self.pi])
        stat = 0.0
        for j in range(r):
            pq = sum(marg[i] * self.targets[i][j] for i in range(r) if i != j)
            stat = max(stat, float(np.max(np.abs(pq - self.pi[j]))))
        return {
            "row_sum": float(np.max(np.abs(np.array(rows) - 1.0))),
            "stationarity": stat,
            "pi_total": abs(float(marg.sum()) - 1.0),
        }


def _transfer_weight(spec: FreeProductSpec, xi: np.ndarray, i: int, j: int) -> float:
    a = spec.alphas
    return (a[j] / a[i]) * (xi[i] / xi[j]) * ((1.0 - xi[j]) / (1.0 - xi[i]))


def _stationary(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(M.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    vec = np.real(v[:, k])
    return vec / vec.sum()


def build_type_chain(spec: FreeProductSpec, sol: XiSolution) -> TypeChain:
    r, a, xi = spec.r, spec.alphas, sol.xi
    G = np.array([sol.green_root(i) for i in range(r)])
    q = np.zeros((r, r))
    for i in range(r):
        for j in range(r):
            if i != j:
                q[i, j] = _transfer_weight(spec, xi, i, j) * (1.0 / ((1.0 - xi[j]) * G[j]) - 1.0)
    weights = a * (1.0 - xi) / xi * (1.0 - (1.0 - xi) * G)
    C = float(weights.sum())
    nu = weights / C
    tc = TypeChain(q, nu, C, _stationary(q))
    res = tc.residuals()
    worst = max(res.values())
    if worst > KERNEL_TOL:
        raise StationarityResidual(f"type chain residuals {res}", worst)
    return tc


def build_exit_chain(spec: FreeProductSpec, sol: XiSolution, tc: TypeChain | None = None) -> ExitChainKernel:
    tc = tc if tc is not None else build_type_chain(spec, sol)
    r, xi = spec.r, sol.xi
    L = [last_visit_row(sol.caches[j])[1:] for j in range(r)]
    targets = []
    for i in range(r):
        row = []
        for j in range(r):
            if i == j:
                row.append(np.zeros_like(L[j]))
            else:
                row.append(_transfer_weight(spec, xi, i, j) * L[j])
        targets.append(tuple(row))
    pi = tuple(sum(tc.nu[i] * targets[i][j] for i in range(r) if i != j) for j in range(r))
    length = tuple(-np.log(L[j]) for j in range(r))
    kernel = ExitChainKernel(tc.nu, tuple(targets), pi, length)
    res = kernel.residuals()
    worst = max(res.values())
    if worst > KERNEL_TOL:
        raise StationarityResidual(f"exit chain residuals {res}", worst)
    return kernel


def rate_of_escape_block(spec: FreeProductSpec, sol: XiSolution, tc: TypeChain) -> float:
    """Almost-sure block-length drift ``lim ||X_n|| / n``."""
    if sol.xi_prime is None:
        sol = replace(sol, xi_prime=xi_derivative(spec, sol))
    xi, a = sol.xi, spec.alphas
    total = 0.0
    for i in range(spec.r):
        for j in range(spec.r):
            if i != j:
                total += tc.nu[i] * a[j] * (1.0 - xi[j]) / (1.0 - xi[i]) * gamma_prime(spec, sol, i, j)
    return 1.0 / total


def length_of_word(kernel: ExitChainKernel, word: Sequence[tuple[int, int]]) -> float:
    """Additive length ``sum_k -log L_{tau_k}(o, x_k | xi)`` of a word given as ``(factor, state)`` letters."""
    total = 0.0
    prev = None
    for f, s in word:
        if f == prev:
            raise MalformedWord(f"consecutive letters from factor {f}")
        if s == 0:
            raise MalformedWord("a root state cannot be a letter")
        total += float(kernel.length[f][s - 1])
        prev = f
    return total


def c_h(spec: FreeProductSpec, sol: XiSolution, tc: TypeChain, kernel: ExitChainKernel) -> tuple[float, float]:
    """Mean letter length under the exit-letter stationary measure.

    Returns ``(direct, via_pi)``: the double sum over type pairs and letters, and
    ``sum l * pi`` over the kernel's stationary measure.
    """
    xi = sol.xi
    direct = 0.0
    for i in range(spec.r):
        for j in range(spec.r):
            if i == j:
                continue
            L = last_visit_row(sol.caches[j])[1:]
            direct += float(np.sum(-np.log(L) * tc.nu[i] * _transfer_weight(spec, xi, i, j) * L))
    via_pi = float(sum(np.dot(kernel.length[j], kernel.pi[j]) for j in range(spec.r)))
    return direct, via_pi
