from collections import defaultdict
from math import log

import numpy as np
import pytest

from freeprod.entropy import entropy_v1, entropy_v2, entropy_v3
from freeprod.errors import NoRoot, TailBoundTooLoose
from freeprod.exit_chain import build_exit_chain, build_type_chain, c_h, rate_of_escape_block
from freeprod.groups import (
    FiniteGroupFactor,
    ZZ2Factor,
    entropy_groups,
    fhat_level,
    solve_group_xi,
    solve_zz2_xi,
    zz2_f_closed_form,
)
from freeprod.xi import FreeProductSpec, solve_with_derivative


@pytest.fixture(scope="module")
def zz2():
    xi = solve_zz2_xi()
    return ZZ2Factor(), xi


def zm_times_z2(m):
    """``Z/m x Z/2`` with the same steps as the infinite factor; element ``(x, y)`` has index ``2x + y``."""
    n = 2 * m
    table = [[2 * ((a // 2 + b // 2) % m) + (a + b) % 2 for b in range(n)] for a in range(n)]
    return FiniteGroupFactor(table, {2: 1 / 3, 2 * (m - 1): 1 / 3, 1: 1 / 3})


def test_xi_and_level_weight(zz2):
    _, xi = zz2
    assert xi == pytest.approx(0.55973, abs=1e-4)
    assert fhat_level(xi) == pytest.approx(0.24291, abs=1e-4)
    assert ZZ2Factor.half_space(xi).total == pytest.approx(fhat_level(xi), abs=1e-13)


def test_xi_equation_and_systems_plug_back(zz2):
    f, xi = zz2
    assert xi / (2 - 2 * xi) == pytest.approx(xi * f.green_root(xi), abs=1e-10)
    assert ZZ2Factor.half_space_residual(xi, ZZ2Factor.half_space(xi)) <= 1e-12
    assert ZZ2Factor.linear_residual(xi) <= 1e-10
    F = fhat_level(xi)
    assert F == pytest.approx(xi / 3 * (1 + F + F * F), abs=1e-14)
    assert 0 < F < 1


def test_xi_agrees_with_generic_iteration(zz2):
    f, xi = zz2
    assert np.allclose(solve_group_xi([f, f], [0.5, 0.5]), xi, atol=1e-10)


def test_closed_form_base_case(zz2):
    _, xi = zz2
    Fa, Fb, Fc = ZZ2Factor.base_first_visits(xi)
    assert zz2_f_closed_form(1, 0, xi) == pytest.approx(Fa, abs=1e-14)
    assert zz2_f_closed_form(1, 1, xi) == pytest.approx(Fb, abs=1e-14)
    assert zz2_f_closed_form(0, 1, xi) == Fc
    assert zz2_f_closed_form(0, 0, xi) == 1.0


def test_closed_form_symmetric_in_sign(zz2):
    _, xi = zz2
    for n in range(1, 12):
        for j in (0, 1):
            assert zz2_f_closed_form(n, j, xi) == zz2_f_closed_form(-n, j, xi)


def test_bound_sandwich(zz2):
    _, xi = zz2
    Fhat = fhat_level(xi)
    Fa, Fb, _ = ZZ2Factor.base_first_visits(xi)
    for n in range(1, 31):
        for j in (0, 1):
            F = zz2_f_closed_form(n, j, xi)
            assert F <= Fhat**n * (1 + 1e-12)
            assert F >= Fhat ** (n - 1) * min(Fa, Fb) * (1 - 1e-12)


def test_tail_arithmetic(zz2):
    f, xi = zz2
    Fhat = 0.24291
    N = next(N for N in range(1, 100) if 4 * Fhat ** (N + 1) / (1 - Fhat) < 1e-8)
    assert f.tail_bound(N, xi) < 1e-6
    assert f.tail_bound(16, xi) < 1e-8
    assert f.tail_bound(0, xi) == float("inf")


def test_first_visits_match_a_large_cyclic_approximant(zz2):
    f, xi = zz2
    approx = zm_times_z2(60)
    for n in range(0, 8):
        for j in (0, 1):
            if (n, j) == (0, 0):
                continue
            assert f.first_visit((n, j), xi) == pytest.approx(approx.first_visit(2 * n + j, xi), abs=1e-12)
    assert f.green_root(xi) == pytest.approx(approx.green_root(xi), abs=1e-12)


def test_entropy_result_fields(zz2):
    f, xi = zz2
    res = entropy_groups([f, f], [0.5, 0.5], [xi, xi])
    assert res.h > 0
    assert res.tail_bound <= 1e-6 * res.h
    for rho, mass in zip(res.rho, res.first_letter_mass):
        assert 0 < rho < 1
        assert mass == pytest.approx(rho, abs=1e-8)


def exact_entropy_increments(n_max):
    """``H(X_{n+1}) - H(X_n)`` for the two-factor Z x Z/2 walk, by exact enumeration of word distributions."""
    steps = [(1, 0), (-1, 0), (0, 1)]
    dist = {(): 1.0}
    H = [0.0]
    for _ in range(n_max):
        nxt = defaultdict(float)
        for word, p in dist.items():
            for i in (0, 1):
                for s in steps:
                    if word and word[-1][0] == i:
                        x, y = word[-1][1]
                        g = (x + s[0], (y + s[1]) % 2)
                        w = word[:-1] if g == (0, 0) else word[:-1] + ((i, g),)
                    else:
                        w = word + ((i, s),)
                    nxt[w] += p / 6
        dist = nxt
        H.append(-sum(p * log(p) for p in dist.values()))
    return np.diff(H)


def test_entropy_below_exact_increments(zz2):
    # increments of H(X_n) decrease to the entropy, so each one is an upper bound
    f, xi = zz2
    h = entropy_groups([f, f], [0.5, 0.5], [xi, xi]).h
    inc = exact_entropy_increments(8)
    assert np.all(np.diff(inc) <= 1e-12)
    assert h <= inc[-1]


@pytest.mark.parametrize("m", [3, 4, 5, 6])
def test_finite_cyclic_groups_match_generic_pipeline(m):
    rng = np.random.default_rng(m)
    mus = []
    for _ in range(2):
        w = rng.random(m - 1) + 0.1
        mus.append({k + 1: float(v) for k, v in enumerate(w / w.sum())})
    factors = [FiniteGroupFactor.cyclic(m, mu, factor_id=i, name=f"Z{i}_") for i, mu in enumerate(mus)]
    alphas = [0.4, 0.6]
    spec = FreeProductSpec(tuple(f.chain for f in factors), alphas)
    sol = solve_with_derivative(spec)
    assert np.allclose(solve_group_xi(factors, alphas), sol.xi, atol=1e-12)
    tc = build_type_chain(spec, sol)
    kernel = build_exit_chain(spec, sol, tc)
    ell0 = rate_of_escape_block(spec, sol, tc)
    h1 = entropy_v1(ell0, c_h(spec, sol, tc, kernel)[0])
    res = entropy_groups(factors, alphas, sol.xi)
    assert res.truncation == 4 and res.tail_bound == 0.0
    assert res.h == pytest.approx(h1, abs=1e-8)
    assert res.h == pytest.approx(entropy_v2(ell0, kernel)[0], abs=1e-8)
    assert res.h == pytest.approx(entropy_v3(spec, sol)[0], abs=1e-8)


def test_unchanged_ratio_contributes_only_first_term():
    # Z/2 with a single generator: the inner sum is F(g) log(1/F(g)) and nothing else
    f = FiniteGroupFactor.cyclic(2, {1: 1.0})
    w = 0.6
    F = f.first_visit(1, w)
    assert F == pytest.approx(w, abs=1e-15)
    h = entropy_groups([f, f], [0.5, 0.5], [w, w]).h
    G = f.green_root(w)
    escape = (1 - w) * G
    expected = -(escape * log(F) + escape * F * log(1 / F))
    assert h == pytest.approx(expected, abs=1e-15)


def test_tail_too_loose_raises(zz2):
    f, xi = zz2
    with pytest.raises(TailBoundTooLoose) as err:
        entropy_groups([f, f], [0.5, 0.5], [xi, xi], rel_tol=1e-300, n_cap=8)
    assert err.value.achieved > 0


def test_no_root_when_equation_has_no_sign_change(monkeypatch):
    import freeprod.groups as groups

    monkeypatch.setattr(groups, "_zz2_equation", lambda w: 1.0)
    with pytest.raises(NoRoot):
        solve_zz2_xi()


def test_unequal_weights_rejected():
    with pytest.raises(ValueError):
        solve_zz2_xi((0.3, 0.7))


def test_step_distribution_must_avoid_identity():
    with pytest.raises(ValueError):
        FiniteGroupFactor.cyclic(3, {0: 0.5, 1: 0.5})
    assert ZZ2Factor().single_step_entropy() == pytest.approx(log(3), abs=1e-15)
