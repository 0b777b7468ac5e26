import numpy as np
import pytest
from hypothesis import given, settings

from freeprod.errors import MalformedWord, StationarityResidual
from freeprod.exit_chain import (
    build_exit_chain,
    build_type_chain,
    c_h,
    length_of_word,
    rate_of_escape_block,
)
from freeprod.factor import first_visit, green_factor, last_visit, last_visit_row
from freeprod.xi import FreeProductSpec, XiSolution, as_spec, solve_with_derivative

from .conftest import random_chain, specs


def pipeline(spec):
    sol = solve_with_derivative(spec)
    tc = build_type_chain(spec, sol)
    return sol, tc, build_exit_chain(spec, sol, tc)


def relabel(chain, factor_id, suffix):
    return type(chain)(factor_id, tuple(s + suffix for s in chain.states), chain.transitions)


def test_two_factors_force_alternation(spec71, pipeline71):
    _, tc, _, _ = pipeline71
    assert np.allclose(tc.q_hat, [[0, 1], [1, 0]], atol=1e-10)
    assert np.allclose(tc.nu, [0.5, 0.5], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(spec=specs(r=2))
def test_two_factor_alternation_on_random_specs(spec):
    _, tc, kernel = pipeline(spec)
    assert np.allclose(tc.q_hat, [[0, 1], [1, 0]], atol=1e-10)
    assert np.allclose(tc.nu, 0.5, atol=1e-10)
    # each row of the exit kernel is exactly the normalized L-row of the other factor
    for i, j in ((0, 1), (1, 0)):
        assert kernel.targets[i][j].sum() == pytest.approx(1.0, abs=1e-10)


def test_three_identical_factors_give_uniform_nu():
    rng = np.random.default_rng(11)
    c = random_chain(rng, 0, 4)
    spec = as_spec([relabel(c, k, "'" * k) for k in range(3)], [1 / 3] * 3)
    _, tc, kernel = pipeline(spec)
    assert np.allclose(tc.nu, 1 / 3, atol=1e-12)
    assert np.allclose(tc.q_hat, (np.ones((3, 3)) - np.eye(3)) / 2, atol=1e-10)
    assert np.allclose(kernel.pi[0], kernel.pi[2], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(spec=specs())
def test_kernel_invariants(spec):
    sol, tc, kernel = pipeline(spec)
    assert max(tc.residuals().values()) <= 1e-10
    assert max(kernel.residuals().values()) <= 1e-10
    assert np.all(np.diag(tc.q_hat) == 0) and np.all(tc.nu > 0)
    for i in range(spec.r):
        for j in range(spec.r):
            assert tc.q_hat[i, j] == pytest.approx(kernel.targets[i][j].sum(), abs=1e-10)
    # pi from nu-mixing agrees with a power-iterated stationary vector of the full kernel
    states = list(kernel.states())
    Q = np.array([[kernel.q(i, h, j) for h, j in states] for _, i in states])
    pi = np.concatenate(kernel.pi)
    assert np.max(np.abs(pi @ Q - pi)) <= 1e-10
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)


def test_kernel_ignores_source_letter(spec71, pipeline71):
    kernel = pipeline71[2]
    states = list(kernel.states())
    rows = {}
    for g, i in states:
        rows.setdefault(i, []).append([kernel.q(i, h, j) for h, j in states])
    for block in rows.values():
        assert all(r == block[0] for r in block)


def test_example_drift(spec71, pipeline71):
    assert pipeline71[3] == pytest.approx(0.41563, abs=1e-4)


def test_drift_invariant_under_permuting_identical_factors():
    rng = np.random.default_rng(5)
    a, b = random_chain(rng, 0, 3), random_chain(rng, 0, 4)
    s1 = as_spec([a, relabel(b, 1, "b"), relabel(a, 2, "c")], [0.3, 0.4, 0.3])
    s2 = as_spec([relabel(a, 0, "c"), relabel(b, 1, "b"), relabel(a, 2, "")], [0.3, 0.4, 0.3])
    s3 = as_spec([relabel(b, 0, "b"), a, relabel(a, 2, "c")], [0.4, 0.3, 0.3])
    vals = []
    for s in (s1, s2, s3):
        sol, tc, _ = pipeline(s)
        vals.append(rate_of_escape_block(s, sol, tc))
    assert vals[0] == pytest.approx(vals[1], rel=1e-12)
    assert vals[0] == pytest.approx(vals[2], rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(spec=specs())
def test_c_h_two_routes(spec):
    sol, tc, kernel = pipeline(spec)
    direct, via_pi = c_h(spec, sol, tc, kernel)
    assert direct == pytest.approx(via_pi, abs=1e-12)
    assert np.isfinite(direct) and direct > 0
    assert rate_of_escape_block(spec, sol, tc) > 0


def test_length_of_word(spec71, pipeline71):
    sol, _, kernel, _ = pipeline71
    assert length_of_word(kernel, []) == 0.0
    g2 = spec71.factors[0].index("g2")
    h3 = spec71.factors[1].index("h3")
    L1 = last_visit(green_factor(spec71.factors[0], sol.xi[0]), 0, g2)
    L2 = last_visit(green_factor(spec71.factors[1], sol.xi[1]), 0, h3)
    assert length_of_word(kernel, [(0, g2)]) == pytest.approx(-np.log(L1), rel=1e-14)
    two = length_of_word(kernel, [(0, g2), (1, h3)])
    assert two == pytest.approx(-np.log(L1 * L2), rel=1e-14)
    assert two == pytest.approx(length_of_word(kernel, [(0, g2)]) + length_of_word(kernel, [(1, h3)]), rel=1e-15)


@pytest.mark.parametrize("word", [[(0, 1), (0, 2)], [(1, 0)], [(0, 1), (1, 2), (1, 1)]])
def test_malformed_words(pipeline71, word):
    with pytest.raises(MalformedWord):
        length_of_word(pipeline71[2], word)


@settings(max_examples=15, deadline=None)
@given(spec=specs())
def test_first_and_last_visit_lengths_differ_by_diagonal_ratio(spec):
    sol = solve_with_derivative(spec)
    for j, cache in enumerate(sol.caches):
        G = cache.green
        for g in range(1, spec.factors[j].size):
            lf = -np.log(first_visit(cache, 0, g))
            ll = -np.log(last_visit(cache, 0, g))
            assert lf - ll == pytest.approx(np.log(G[g, g] / G[0, 0]), abs=1e-12)


def test_tampered_xi_is_rejected(spec71, pipeline71):
    sol = pipeline71[0]
    xi = sol.xi * np.array([1.03, 0.98])
    caches = tuple(green_factor(f, x) for f, x in zip(spec71.factors, xi))
    bad = XiSolution(sol.z, xi, sol.residuals, sol.iterations, sol.monotone, caches, sol.xi_prime)
    with pytest.raises(StationarityResidual) as err:
        build_type_chain(spec71, bad)
    assert err.value.residual > 1e-10


def test_sum_of_last_visits_identity(spec71, pipeline71):
    sol = pipeline71[0]
    for j in range(spec71.r):
        lsum = last_visit_row(sol.caches[j])[1:].sum()
        assert lsum == pytest.approx(1 / ((1 - sol.xi[j]) * sol.green_root(j)) - 1, abs=1e-10)


def test_spec_type_is_immutable(spec71):
    assert isinstance(spec71, FreeProductSpec)
    with pytest.raises(ValueError):
        spec71.alphas[0] = 0.1
