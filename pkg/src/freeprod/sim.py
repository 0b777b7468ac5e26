"""Monte Carlo simulation of the free-product walk and brute-force oracles.

Randomness comes from a counter-based generator: walker ``w`` of a run with
master seed ``s`` draws its ``c``-th uniform as a pure function of ``(s, w, c)``.
Walkers therefore never share state, and serial, parallel and pure-Python runs
produce identical trajectories.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from math import log, sqrt

import numpy as np
from numba import njit, prange

from .errors import StateSpaceExplosion
from .exit_chain import ExitChainKernel
from .factor import first_visit
from .xi import FreeProductSpec, XiSolution, solve_xi

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
TWO_M53 = 2.0**-53

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_U1 = np.uint64(1)
_S11, _S27, _S30, _S31 = np.uint64(11), np.uint64(27), np.uint64(30), np.uint64(31)

BURN_IN = 10
TOP_BUFFER = 20
CHUNK = 8192
ENUM_GUARD = 10**7


def mix64(x: int) -> int:
    x = (x + GOLDEN) & MASK
    x = ((x ^ (x >> 30)) * _M1) & MASK
    x = ((x ^ (x >> 27)) * _M2) & MASK
    return x ^ (x >> 31)


class CounterRNG:
    """Pure-Python twin of the compiled generator."""

    def __init__(self, seed: int, walker: int):
        self.key = mix64((seed & MASK) ^ mix64(walker + 1))
        self.counter = 0

    def uniform(self) -> float:
        v = mix64((self.key + self.counter * GOLDEN) & MASK)
        self.counter += 1
        return (v >> 11) * TWO_M53


@njit(cache=True)
def _mix(x):
    x = x + _U_GOLDEN
    x = (x ^ (x >> _S30)) * _U_M1
    x = (x ^ (x >> _S27)) * _U_M2
    return x ^ (x >> _S31)


@njit(cache=True)
def _uniform(key, c):
    v = _mix(key + np.uint64(c) * _U_GOLDEN)
    return float(v >> _S11) * TWO_M53


@njit(cache=True)
def _pick(cum, u):
    k = 0
    while u >= cum[k]:
        k += 1
    return k


def _walk_body(seed, w0, nw, horizon, alpha_cum, p_cum, len_l, len_f, dist, logq, burn, buffer,
               keep_words, code_off, depth_out, l_out, f_out, d_out, hq_sum, hq_cnt, counts, words):
    for k in prange(nw):
        key = _mix(seed ^ _mix(np.uint64(w0 + k) + _U1))
        fac = np.empty(horizon + 1, dtype=np.int64)
        st = np.empty(horizon + 1, dtype=np.int64)
        depth = 0
        c = 0
        for _t in range(horizon):
            i = _pick(alpha_cum, _uniform(key, c))
            u = _uniform(key, c + 1)
            c += 2
            if depth > 0 and fac[depth - 1] == i:
                y = _pick(p_cum[i, st[depth - 1]], u)
                if y == 0:
                    depth -= 1
                else:
                    st[depth - 1] = y
            else:
                fac[depth] = i
                st[depth] = _pick(p_cum[i, 0], u)
                depth += 1
        sl = 0.0
        sf = 0.0
        sd = 0
        hs = 0.0
        hc = 0
        for d in range(depth):
            i = fac[d]
            s = st[d]
            sl += len_l[i, s]
            sf += len_f[i, s]
            sd += dist[i, s]
            if d >= burn and d < depth - buffer:
                prev = fac[d - 1]
                hs += logq[prev, i, s]
                hc += 1
                counts[k, prev, i, s] += 1
            if keep_words:
                words[k, d] = code_off[i] + s - 1
        depth_out[k] = depth
        l_out[k] = sl
        f_out[k] = sf
        d_out[k] = sd
        hq_sum[k] = hs
        hq_cnt[k] = hc


_kernel_serial = njit(cache=True)(_walk_body)
_kernel_parallel = njit(cache=True, parallel=True)(_walk_body)


@dataclass(frozen=True, eq=False)
class SimTables:
    """Lookup tables the compiled walker needs, padded to the largest factor."""

    alpha_cum: np.ndarray
    p_cum: np.ndarray
    len_l: np.ndarray
    len_f: np.ndarray
    dist: np.ndarray
    logq: np.ndarray
    q: np.ndarray
    code_off: np.ndarray
    sizes: tuple[int, ...]
    analytic: bool

    @property
    def r(self) -> int:
        return len(self.sizes)

    def decode(self, code: int) -> tuple[int, int]:
        i = int(np.searchsorted(self.code_off, code, side="right")) - 1
        return i, int(code - self.code_off[i] + 1)


def _cumulative(row: np.ndarray) -> np.ndarray:
    cum = np.cumsum(row)
    last = int(np.flatnonzero(row > 0)[-1])
    cum[last:] = 2.0
    return cum


def build_tables(spec: FreeProductSpec, sol: XiSolution | None = None,
                 kernel: ExitChainKernel | None = None) -> SimTables:
    """Tables for ``run_walkers``; without ``sol``/``kernel`` the length-based fields are zero."""
    r = spec.r
    S = max(f.size for f in spec.factors)
    alpha_cum = _cumulative(np.asarray(spec.alphas, dtype=float))
    p_cum = np.full((r, S, S), 2.0)
    dist = np.zeros((r, S), dtype=np.int64)
    len_l = np.zeros((r, S))
    len_f = np.zeros((r, S))
    q = np.zeros((r, r, S))
    for i, f in enumerate(spec.factors):
        for x in range(f.size):
            p_cum[i, x, : f.size] = _cumulative(f.transitions[x])
        dist[i, : f.size] = f.root_distances()
    analytic = sol is not None and kernel is not None
    if analytic:
        for j, f in enumerate(spec.factors):
            len_l[j, 1 : f.size] = kernel.length[j]
            for g in range(1, f.size):
                len_f[j, g] = -log(first_visit(sol.caches[j], 0, g))
            for i in range(r):
                if i != j:
                    q[i, j, 1 : f.size] = kernel.targets[i][j]
    with np.errstate(divide="ignore"):
        logq = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), 0.0)
    sizes = tuple(f.size for f in spec.factors)
    code_off = np.concatenate(([0], np.cumsum([s - 1 for s in sizes])[:-1])).astype(np.int64)
    return SimTables(alpha_cum, p_cum, len_l, len_f, dist, logq, q, code_off, sizes, analytic)


@dataclass(eq=False)
class WalkerAggregates:
    """Per-walker end-of-path statistics and pooled exit-letter transition counts."""

    horizon: int
    seed: int
    depth: np.ndarray
    length_l: np.ndarray
    length_f: np.ndarray
    distance: np.ndarray
    hq_sum: np.ndarray
    hq_count: np.ndarray
    exit_counts: np.ndarray
    words: np.ndarray | None = field(default=None, repr=False)

    @property
    def walkers(self) -> int:
        return int(self.depth.shape[0])


def run_walkers(spec: FreeProductSpec, horizon: int, walkers: int, seed: int, tables: SimTables | None = None,
                parallel: bool = False, keep_words: bool = False, burn_in: int = BURN_IN,
                top_buffer: int = TOP_BUFFER) -> WalkerAggregates:
    """Simulate ``walkers`` independent paths of length ``horizon`` from the empty word."""
    if horizon < 1 or walkers < 1:
        raise ValueError("horizon and walkers must be positive")
    t = tables if tables is not None else build_tables(spec)
    kern = _kernel_parallel if parallel else _kernel_serial
    S = t.p_cum.shape[1]
    depth = np.zeros(walkers, dtype=np.int64)
    ll = np.zeros(walkers)
    lf = np.zeros(walkers)
    dd = np.zeros(walkers, dtype=np.int64)
    hs = np.zeros(walkers)
    hc = np.zeros(walkers, dtype=np.int64)
    total_counts = np.zeros((t.r, t.r, S), dtype=np.int64)
    words = np.full((walkers, horizon), -1, dtype=np.int32) if keep_words else None
    seed_u = np.uint64(seed & MASK)
    burn = max(int(burn_in), 1)
    for w0 in range(0, walkers, CHUNK):
        nw = min(CHUNK, walkers - w0)
        counts = np.zeros((nw, t.r, t.r, S), dtype=np.int32)
        wbuf = words[w0 : w0 + nw] if keep_words else np.zeros((1, 1), dtype=np.int32)
        sl = slice(w0, w0 + nw)
        kern(seed_u, w0, nw, horizon, t.alpha_cum, t.p_cum, t.len_l, t.len_f, t.dist, t.logq, burn,
             int(top_buffer), keep_words, t.code_off, depth[sl], ll[sl], lf[sl], dd[sl], hs[sl], hc[sl],
             counts, wbuf)
        total_counts += counts.sum(axis=0, dtype=np.int64)
    return WalkerAggregates(horizon, seed, depth, ll, lf, dd, hs, hc, total_counts, words)


@dataclass(frozen=True)
class Estimate:
    name: str
    value: float
    stderr: float
    walkers: int
    horizon: int


@dataclass
class SimEstimates:
    seed: int
    estimates: dict[str, Estimate]
    exit_counts: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, name: str) -> Estimate:
        return self.estimates[name]

    def csv_rows(self) -> list[list]:
        return [[e.name, e.value, e.stderr, e.walkers, e.horizon, self.seed] for e in self.estimates.values()]


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.shape[0]
    if n == 0:
        return float("nan"), float("nan")
    se = float(np.std(x, ddof=1) / sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(x)), se


def estimate_drifts(agg: WalkerAggregates, tables: SimTables) -> SimEstimates:
    """Drift estimates from per-walker end-of-path statistics.

    ``ell0`` block length, ``ell1`` graph distance, ``ell`` the exit-chain
    length, ``ell_F`` the per-letter first-visit length, ``h_q`` the entropy
    rate of the observed exit-letter sequence.
    """
    n = agg.horizon
    cols = {"ell0": agg.depth / n, "ell1": agg.distance / n}
    if tables.analytic:
        cols["ell"] = agg.length_l / n
        cols["ell_F"] = agg.length_f / n
        ok = agg.hq_count > 0
        cols["h_q"] = -agg.hq_sum[ok] / agg.hq_count[ok]
    est = {}
    for name, x in cols.items():
        m, se = _mean_se(np.asarray(x, dtype=float))
        est[name] = Estimate(name, m, se, int(np.asarray(x).shape[0]), n)
    return SimEstimates(agg.seed, est, agg.exit_counts if tables.analytic else None)


def exit_kernel_tv(counts: np.ndarray, tables: SimTables) -> list[tuple[int, int, float]]:
    """Per source type: ``(type, observed transitions, total variation against q)``."""
    out = []
    for i in range(tables.r):
        n = int(counts[i].sum())
        if n == 0:
            out.append((i, 0, float("nan")))
            continue
        emp = counts[i] / n
        out.append((i, n, 0.5 * float(np.abs(emp - tables.q[i]).sum())))
    return out


@dataclass
class ConcentrationRow:
    eps: float
    frac_small: float
    frac_large: float
    stderr: float

    @property
    def consistent(self) -> bool:
        return self.frac_large <= self.frac_small + 2.0 * self.stderr


def concentration_check(small: WalkerAggregates, large: WalkerAggregates, h: float,
                        eps_grid=(0.05, 0.02, 0.01)) -> list[ConcentrationRow]:
    """Fraction of paths whose length drift is ``eps``-far from ``h``, at two horizons."""
    xs = small.length_l / small.horizon
    xl = large.length_l / large.horizon
    rows = []
    for eps in eps_grid:
        fs = float(np.mean(np.abs(xs - h) > eps))
        fl = float(np.mean(np.abs(xl - h) > eps))
        se = sqrt(fs * (1 - fs) / xs.shape[0] + fl * (1 - fl) / xl.shape[0])
        rows.append(ConcentrationRow(eps, fs, fl, se))
    return rows


@dataclass
class PathRecord:
    """One simulated path with its per-depth last-write log."""

    horizon: int
    word: tuple[tuple[int, int], ...]
    last_write: tuple[int, ...]
    distance: int
    history: list[tuple[tuple[int, int], ...]] | None = field(default=None, repr=False)

    def exit_times(self) -> list[int]:
        """``e_k`` for ``k = 1..k(n)``: the last time the length-``k`` prefix changed."""
        out, m = [], 0
        for t in self.last_write:
            m = max(m, t)
            out.append(m)
        return out

    @property
    def k_n(self) -> int:
        return len(self.word)


def simulate_path(spec: FreeProductSpec, horizon: int, seed: int, walker: int = 0,
                  keep_history: bool = False) -> PathRecord:
    """Reference implementation of one walker, driven by the same random stream as ``run_walkers``."""
    rng = CounterRNG(seed, walker)
    acum = np.cumsum(spec.alphas)
    rows = [[np.cumsum(f.transitions[x]) for x in range(f.size)] for f in spec.factors]
    word: list[tuple[int, int]] = []
    last: list[int] = []
    hist = [()] if keep_history else None
    for t in range(1, horizon + 1):
        i = _pick_py(acum, rng.uniform())
        u = rng.uniform()
        if word and word[-1][0] == i:
            y = _pick_py(rows[i][word[-1][1]], u)
            if y == 0:
                word.pop()
                last.pop()
            else:
                word[-1] = (i, y)
                last[-1] = t
        else:
            word.append((i, _pick_py(rows[i][0], u)))
            last.append(t)
        if keep_history:
            hist.append(tuple(word))
    dist = sum(int(spec.factors[i].root_distances()[s]) for i, s in word)
    return PathRecord(horizon, tuple(word), tuple(last), dist, hist)


def _pick_py(cum, u: float) -> int:
    positive = np.flatnonzero(np.diff(np.concatenate(([0.0], cum))) > 0)
    for k in positive:
        if u < cum[k]:
            return int(k)
    return int(positive[-1])


def step(spec: FreeProductSpec, word: tuple, u_factor: float, u_move: float) -> tuple:
    """One transition of the walk, driven by two uniforms."""
    i = _pick_py(np.cumsum(spec.alphas), u_factor)
    f = spec.factors[i]
    if word and word[-1][0] == i:
        y = _pick_py(np.cumsum(f.transitions[word[-1][1]]), u_move)
        return word[:-1] if y == 0 else word[:-1] + ((i, y),)
    return word + ((i, _pick_py(np.cumsum(f.transitions[0]), u_move)),)


def _successors(spec: FreeProductSpec):
    return [
        [[(int(y), float(f.transitions[x, y])) for y in np.flatnonzero(f.transitions[x] > 0)] for x in range(f.size)]
        for f in spec.factors
    ]


def _advance(spec, succ, dist, prune=None):
    out: dict = {}
    a = spec.alphas
    for w, p in dist.items():
        top = w[-1][0] if w else -1
        for i in range(spec.r):
            pa = p * a[i]
            if i == top:
                base = w[:-1]
                for y, py in succ[i][w[-1][1]]:
                    nxt = base if y == 0 else base + ((i, y),)
                    if prune is None or prune(nxt):
                        out[nxt] = out.get(nxt, 0.0) + pa * py
            else:
                for y, py in succ[i][0]:
                    nxt = w + ((i, y),)
                    if prune is None or prune(nxt):
                        out[nxt] = out.get(nxt, 0.0) + pa * py
        if len(out) > ENUM_GUARD:
            raise StateSpaceExplosion(len(out))
    return out


def enumerate_distribution(spec: FreeProductSpec, n: int) -> dict[tuple, float]:
    """Exact law of the word after ``n`` steps, keyed by ``((factor, state), ...)``."""
    succ = _successors(spec)
    dist = {(): 1.0}
    for _ in range(n):
        dist = _advance(spec, succ, dist)
    return dist


def exact_entropy(dist: dict[tuple, float]) -> float:
    """``-sum p log p`` of an enumerated distribution."""
    return -sum(p * log(p) for p in dist.values() if p > 0)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_distribution(agg: WalkerAggregates, tables: SimTables) -> dict[tuple, float]:
    if agg.words is None:
        raise ValueError("run_walkers was called without keep_words")
    cnt = Counter(tuple(int(c) for c in row[: d]) for row, d in zip(agg.words, agg.depth))
    n = agg.walkers
    return {tuple(tables.decode(c) for c in k): v / n for k, v in cnt.items()}


def return_probabilities(spec: FreeProductSpec, N: int) -> list[float]:
    """``p^{(n)}(o, o)`` for ``n = 0..N`` by enumeration, pruning words that cannot return in time."""
    succ = _successors(spec)
    back = [f.distances_to_root() for f in spec.factors]
    out = [1.0]
    dist = {(): 1.0}
    for n in range(1, N + 1):
        left = N - n
        dist = _advance(spec, succ, dist, prune=lambda w: sum(int(back[i][s]) for i, s in w) <= left)
        out.append(dist.get((), 0.0))
    return out


@dataclass
class GreenPartialSums:
    z: float
    N: int
    partial: list[float]
    green: float
    tail_bound: float

    @property
    def gap(self) -> float:
        return self.green - self.partial[-1]


def certified_horizon(z: float, tol: float) -> int:
    """Smallest ``N`` with ``sum_{n > N} z^n < tol``."""
    N = 0
    while z ** (N + 1) / (1.0 - z) >= tol:
        N += 1
    return N


def green_root(spec: FreeProductSpec, z: float) -> float:
    """``G(o, o | z)`` of the free product from the factor functions at ``xi(z)``."""
    sol = solve_xi(spec, z)
    U = 0.0
    for i, f in enumerate(spec.factors):
        row = f.transitions[0]
        A = sum(row[s] * first_visit(sol.caches[i], int(s), 0) for s in np.flatnonzero(row > 0))
        U += spec.alphas[i] * z * A
    return 1.0 / (1.0 - U)


def green_partial_sums(spec: FreeProductSpec, z: float = 0.5, tol: float = 1e-8) -> GreenPartialSums:
    """Partial sums of the return series at ``z`` up to the certified horizon, against the factor formula."""
    N = certified_horizon(z, tol)
    probs = return_probabilities(spec, N)
    partial, acc = [], 0.0
    for n, p in enumerate(probs):
        acc += p * z**n
        partial.append(acc)
    return GreenPartialSums(z, N, partial, green_root(spec, z), z ** (N + 1) / (1.0 - z))
