"""Asymptotic entropy by three independent routes.

* ``entropy_v1``: block drift times the mean exit-letter length.
* ``entropy_v2``: block drift times the entropy rate of the exit-letter chain.
* ``entropy_v3``: quotient of the two partial derivatives of the denominator of
  the double generating function, evaluated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DivisionNearZero
from .exit_chain import ExitChainKernel
from .xi import FreeProductSpec, XiSolution, xi_derivative


@dataclass(frozen=True)
class DgfDerivatives:
    dg_dr: float
    dg_ds: float


@dataclass(frozen=True)
class EntropyTriple:
    h_v1: float
    h_v2: float
    h_v3: float
    h_q: float

    @property
    def spread(self) -> float:
        vals = (self.h_v1, self.h_v2, self.h_v3)
        return max(abs(a - b) / max(abs(a), abs(b)) for a, b in combinations(vals, 2))


def entropy_v1(ell0: float, ch: float) -> float:
    return ell0 * ch


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def exit_entropy_rate(kernel: ExitChainKernel) -> float:
    """Entropy rate of the exit-letter chain, ``-sum pi q log q`` (0 log 0 = 0)."""
    r = kernel.r
    marg = [float(p.sum()) for p in kernel.pi]
    total = 0.0
    for i in range(r):
        row = sum(float(_xlogx(kernel.targets[i][j]).sum()) for j in range(r) if j != i)
        total -= marg[i] * row
    return total


def entropy_v2(ell0: float, kernel: ExitChainKernel) -> tuple[float, float]:
    hq = exit_entropy_rate(kernel)
    return ell0 * hq, hq


def dgf_derivatives(spec: FreeProductSpec, sol: XiSolution) -> DgfDerivatives:
    xp = sol.xi_prime if sol.xi_prime is not None else xi_derivative(spec, sol)
    dg_dr = 0.0
    dg_ds = 0.0
    for i in range(spec.r):
        xi = sol.xi[i]
        row = np.asarray(sol.caches[i].green[0])
        Goo = row[0]
        inner = float(np.sum(row * np.log(row))) - np.log(Goo) / (1.0 - xi)
        dg_dr -= Goo * (1.0 - xi) ** 2 * inner
        dg_ds += xp[i] * (Goo - (1.0 - xi) * sol.green_root_dz(i))
    return DgfDerivatives(float(dg_dr), float(dg_ds))


def entropy_v3(spec: FreeProductSpec, sol: XiSolution) -> tuple[float, DgfDerivatives]:
    d = dgf_derivatives(spec, sol)
    if abs(d.dg_ds) < 1e-14:
        raise DivisionNearZero(f"dg/ds = {d.dg_ds:g}")
    return d.dg_dr / d.dg_ds, d
