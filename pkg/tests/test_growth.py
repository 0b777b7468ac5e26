from math import log, sqrt

import numpy as np
import pytest

from freeprod.growth import (
    block_matrix,
    build_cone_graph,
    check_inequalities,
    growth_report,
    lambda_block,
    lambda_metric,
    perron_root,
    power_residual,
    sphere_counts_block,
    sphere_counts_bfs,
    sphere_counts_metric,
)
from freeprod.xi import FreeProductSpec, as_spec

from .conftest import cycle, random_chain, random_spec


def identical(r, m):
    return as_spec([cycle(i, m, f"f{i}_") for i in range(r)], [1 / r] * r)


def test_block_growth_of_example(spec71):
    assert np.array_equal(block_matrix(spec71), [[0, 3], [2, 0]])
    lam = lambda_block(spec71)
    assert lam == pytest.approx(sqrt(6), abs=1e-10)
    # characteristic polynomial of the 2x2 block matrix is x^2 - 6
    assert lam**2 - 6 == pytest.approx(0, abs=1e-9)


@pytest.mark.parametrize("r, m", [(2, 3), (3, 2), (3, 4), (4, 3)])
def test_identical_factors(r, m):
    spec = identical(r, m)
    assert lambda_block(spec) == pytest.approx((r - 1) * (m - 1), abs=1e-10)
    counts = sphere_counts_block(spec, 12)
    assert counts[0] == 1
    for n in range(1, 13):
        assert counts[n] == r * (m - 1) * ((r - 1) * (m - 1)) ** (n - 1)


def test_block_counts_against_brute_force():
    spec = random_spec(np.random.default_rng(2), r=3)
    sizes = [f.size - 1 for f in spec.factors]
    words = [()]
    counts = [1]
    for _ in range(6):
        words = [w + (i,) for w in words for i in range(spec.r) if not w or w[-1] != i]
        counts.append(sum(np.prod([sizes[i] for i in w]) for w in words))
    assert sphere_counts_block(spec, 6) == counts


def test_cone_graph_shapes(spec71):
    g = build_cone_graph(spec71)
    assert g.n_vertices == 6
    two = FreeProductSpec((cycle(0, 2, "a"), cycle(1, 2, "b")), [0.5, 0.5])
    g2 = build_cone_graph(two)
    assert g2.n_vertices == 3
    assert g2.out_degrees() == [2, 1, 1]


def test_cone_graph_is_deterministic(spec71):
    a, b = build_cone_graph(spec71), build_cone_graph(spec71)
    assert a.labels == b.labels
    assert np.array_equal(a.adjacency, b.adjacency)
    assert lambda_metric(a) == lambda_metric(b)


def test_metric_growth_matches_bfs(spec71):
    g = build_cone_graph(spec71)
    lam1 = lambda_metric(g)
    bfs = sphere_counts_bfs(spec71, 12)
    assert abs(lam1 - bfs[12] / bfs[11]) <= 0.02 * lam1
    assert sphere_counts_metric(g, 12) == bfs
    assert 1 <= lam1 <= lambda_block(spec71)


@pytest.mark.parametrize("seed", range(5))
def test_cone_counts_equal_bfs_on_random_specs(seed):
    spec = random_spec(np.random.default_rng(300 + seed))
    n = 7
    assert sphere_counts_metric(build_cone_graph(spec), n) == sphere_counts_bfs(spec, n)


def test_perron_root_of_periodic_matrix():
    A = np.array([[0, 2.0], [8.0, 0]])
    lam, v = perron_root(A)
    assert lam == pytest.approx(4.0, abs=1e-10)
    assert power_residual(A, lam, v) <= 1e-10
    C = np.roll(np.eye(4), 1, axis=1)
    assert perron_root(C)[0] == pytest.approx(1.0, abs=1e-10)


def test_perron_root_against_dense_eigensolver():
    rng = np.random.default_rng(4)
    for _ in range(10):
        A = rng.random((5, 5)) * (rng.random((5, 5)) < 0.6) + np.roll(np.eye(5), 1, axis=1)
        lam, v = perron_root(A)
        assert lam == pytest.approx(max(abs(np.linalg.eigvals(A))), rel=1e-9)
        assert power_residual(A, lam, v) <= 1e-10


def test_growth_report_fields(spec71):
    rep = growth_report(spec71)
    assert rep.lambda0 >= 1 and rep.lambda1 >= 1
    assert rep.residual0 <= 1e-10 and rep.residual1 <= 1e-10
    assert rep.g0 == pytest.approx(log(rep.lambda0))
    # the block matrix here is bipartite, so one-step ratios alternate (2.4, 2.5); use two steps
    S = rep.sphere_counts_block
    assert {S[12] / S[11], S[11] / S[10]} == {2.4, 2.5}
    assert sqrt(S[12] / S[10]) == pytest.approx(rep.lambda0, rel=1e-12)
    assert rep.cone_vertices == 6


def test_inequalities(spec71, pipeline71):
    ell0 = pipeline71[3]
    lam0 = lambda_block(spec71)
    lam1 = lambda_metric(build_cone_graph(spec71))
    chk = check_inequalities(0.32005, ell0, None, lam0, lam1)
    assert chk.block_ok and chk.metric_ok is None
    assert chk.bound_block == pytest.approx(0.3724, abs=1e-4)
    assert chk.slack_block > 0
    chk = check_inequalities(0.32005, ell0, 0.7, lam0, lam1, ell1_stderr=0.01)
    assert chk.metric_ok and chk.slack_metric == pytest.approx(log(lam1) * 0.7 - 0.32005)
    # three standard errors of slack are granted to the Monte Carlo drift
    edge = 0.32005 / log(lam1)
    assert check_inequalities(0.32005, ell0, edge - 0.02, lam0, lam1, ell1_stderr=0.01).metric_ok
    assert not check_inequalities(0.32005, ell0, edge - 0.04, lam0, lam1, ell1_stderr=0.01).metric_ok
    bad = check_inequalities(1.0, ell0, 0.1, lam0, lam1, ell1_stderr=0.0)
    assert not bad.block_ok and not bad.metric_ok


def test_tree_factors_order():
    rng = np.random.default_rng(9)
    spec = as_spec([random_chain(rng, 0, 4), random_chain(rng, 1, 3, prefix="t")], [0.5, 0.5])
    assert lambda_metric(build_cone_graph(spec)) <= lambda_block(spec) + 1e-10
