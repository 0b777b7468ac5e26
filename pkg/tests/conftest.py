import numpy as np
import pytest
from hypothesis import strategies as st

from freeprod.errors import FreeProductError
from freeprod.exit_chain import build_exit_chain, build_type_chain, rate_of_escape_block
from freeprod.factor import FactorChain, validate_factor
from freeprod.presets import example_spec
from freeprod.xi import FreeProductSpec, certify_transience, solve_with_derivative

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def spec71():
    return example_spec()


@pytest.fixture(scope="session")
def pipeline71(spec71):
    sol = solve_with_derivative(spec71)
    tc = build_type_chain(spec71, sol)
    kernel = build_exit_chain(spec71, sol, tc)
    return sol, tc, kernel, rate_of_escape_block(spec71, sol, tc)


def cycle(factor_id, n, prefix):
    P = np.zeros((n, n))
    for k in range(n):
        P[k, (k + 1) % n] = 1.0
    return FactorChain(factor_id, tuple(f"{prefix}{k}" for k in range(n)), P)


def random_chain(rng, factor_id, n, prefix="s", density=0.6):
    """Zero-diagonal stochastic matrix with every state reachable from the root."""
    while True:
        mask = rng.random((n, n)) < density
        np.fill_diagonal(mask, False)
        for x in range(n):
            if not mask[x].any():
                mask[x, rng.choice([y for y in range(n) if y != x])] = True
        W = np.where(mask, rng.random((n, n)) + 0.05, 0.0)
        P = W / W.sum(axis=1, keepdims=True)
        chain = FactorChain(factor_id, tuple(f"{prefix}{factor_id}_{k}" for k in range(n)), P)
        if validate_factor(chain).ok:
            return chain


def random_spec(rng, r=None, sizes=(2, 5)):
    """A random spec that passes validation and the transience gate."""
    while True:
        rr = r or int(rng.integers(2, 4))
        chains = [random_chain(rng, i, int(rng.integers(sizes[0], sizes[1] + 1))) for i in range(rr)]
        a = rng.random(rr) + 0.2
        spec = FreeProductSpec(tuple(chains), a / a.sum())
        if spec.violations():
            continue
        try:
            certify_transience(spec)
        except FreeProductError:
            continue
        return spec


@st.composite
def specs(draw, r=None):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_spec(np.random.default_rng(seed), r)
