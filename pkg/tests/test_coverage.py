"""Exact and Monte Carlo coverage machinery."""

import math

import numpy as np
import pytest

from propcal.coverage import (
    CoverageCurve,
    IntervalTable,
    binomial_pmf,
    binomial_pmf_matrix,
    build_interval_table,
    coverage_grid,
    coverage_sweep,
    exact_coverage,
    mc_coverage,
    mismatch_objective,
)
from propcal.proportions import PosteriorSpec, PriorSpec

UN = PriorSpec("uniform")
NORM95 = PosteriorSpec("normal", 0.95)
BETA95 = PosteriorSpec("beta", 0.95)


def table_full(N):
    return IntervalTable(N=N, xi=0.95, los=np.zeros(N + 1), his=np.ones(N + 1))


def test_full_intervals_cover_everything():
    t = table_full(9)
    for p in (0.0, 0.2, 0.5, 0.99, 1.0):
        assert exact_coverage(p, t) == 1.0


def test_pointlike_intervals_miss():
    # zero-width intervals at points away from p cover nothing
    pts = np.linspace(0.0, 0.9, 10)
    t = IntervalTable(N=9, xi=0.95, los=pts, his=pts)
    assert exact_coverage(0.55, t) == 0.0


def test_single_sample_uniform_normal_table():
    t = build_interval_table(1, UN, NORM95)
    # outcomes n=0 and n=1 give mirrored intervals around 1/2
    assert t.los[0] == 0.0
    assert t.his[0] == pytest.approx(0.7953014, abs=1e-6)
    assert t.los[1] == pytest.approx(1.0 - t.his[0], abs=1e-12)
    assert t.his[1] == 1.0
    # p = 0.5 lies in both intervals
    assert exact_coverage(0.5, t) == 1.0


def test_pmf_terms_sum_to_one():
    for N in (1, 13, 500, 1000):
        pmf = binomial_pmf(0.31, N)
        assert math.fsum(pmf.tolist()) == pytest.approx(1.0, abs=1e-12)
    # beyond N ~ 5000 the log-gamma evaluations themselves carry ~3e-12
    for N in (5000, 20000):
        assert math.fsum(binomial_pmf(0.31, N).tolist()) == pytest.approx(1.0, abs=5e-12)
    assert binomial_pmf(0.0, 7)[0] == 1.0
    assert binomial_pmf(1.0, 7)[7] == 1.0


def test_pmf_matrix_matches_rows():
    grid = np.linspace(0.01, 0.99, 23)
    M = binomial_pmf_matrix(grid, 40)
    for i, p in enumerate(grid):
        np.testing.assert_allclose(M[i], binomial_pmf(p, 40), atol=1e-15)


def test_coverage_grid_matches_pointwise():
    t = build_interval_table(25, UN, NORM95)
    grid = np.linspace(0.001, 0.999, 211)
    C = coverage_grid(grid, t)
    # independent naive loop over grid points
    for i in (0, 17, 100, 210):
        assert C[i] == pytest.approx(exact_coverage(grid[i], t), abs=1e-13)
    assert np.all((C >= 0.0) & (C <= 1.0))


def test_membership_constant_between_endpoints():
    # the set of covering outcomes changes only at interval endpoints, so
    # exact_coverage is smooth inside each segment and jumps only at cuts
    t = build_interval_table(5, UN, NORM95)
    cuts = np.unique(np.concatenate([t.los, t.his]))
    cuts = cuts[(cuts > 0.0) & (cuts < 1.0)]

    def members(p):
        return tuple(((t.los <= p) & (p <= t.his)).tolist())

    jumps = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        inner = np.linspace(a + 1e-9, b - 1e-9, 5)
        sets = {members(p) for p in inner}
        assert len(sets) == 1
    for c in cuts:
        if members(c - 1e-12) != members(c + 1e-12):
            jumps += 1
    assert jumps == len(cuts)


def test_membership_is_closed_at_endpoints():
    t = build_interval_table(10, UN, NORM95)
    edge = float(t.los[5])
    inside = exact_coverage(edge, t)
    outside = exact_coverage(edge - 1e-12, t)
    assert inside >= outside


def test_mismatch_objective_known_values():
    builder = lambda a0: table_full(12)
    grid = np.linspace(0.01, 0.99, 99)
    # C = 1 everywhere at xi = 0.95 -> (0.05)^2
    assert mismatch_objective(0.95, builder, 1.0, grid) == pytest.approx(0.0025, abs=1e-15)
    # and a perfectly matched table would give 0 by construction
    M = binomial_pmf_matrix(grid, 12)
    v1 = mismatch_objective(0.95, builder, 1.0, grid, pmf_matrix=M)
    assert v1 == pytest.approx(0.0025, abs=1e-15)


def test_mismatch_objective_against_naive_loop():
    grid = np.linspace(0.001, 0.999, 1000)
    builder = lambda a0: build_interval_table(25, UN, PosteriorSpec("normal", 0.95))
    fast = mismatch_objective(0.95, builder, 1.0, grid)
    t = builder(1.0)
    slow = np.mean([(0.95 - exact_coverage(p, t)) ** 2 for p in grid])
    assert fast == pytest.approx(slow, abs=1e-13)


def test_mc_coverage_trivial_and_degenerate():
    # N=0 with the uniform prior reports (0,1) at xi=0.95: always covers
    c, se = mc_coverage(0.37, 0, UN, NORM95, trials=200, seed=1)
    assert c == 1.0 and se == 0.0
    c1, _ = mc_coverage(0.2, 10, UN, NORM95, trials=1, seed=5)
    assert c1 in (0.0, 1.0)
    with pytest.raises(ValueError):
        mc_coverage(0.2, 10, UN, NORM95, trials=0, seed=5)


def test_mc_coverage_agrees_with_exact():
    cases_ok = 0
    rng = np.random.default_rng(20260816)
    for k in range(20):
        p = float(rng.uniform(0.02, 0.98))
        N = int(rng.integers(5, 300))
        prior = PriorSpec(["uniform", "jeffreys"][k % 2])
        post = PosteriorSpec(["normal", "beta"][(k // 2) % 2], 0.95)
        table = build_interval_table(N, prior, post)
        c_exact = exact_coverage(p, table)
        c_hat, se = mc_coverage(p, N, prior, post, trials=100000, seed=1000 + k)
        tol = 4.0 * max(se, 1e-4)
        if abs(c_hat - c_exact) < tol:
            cases_ok += 1
    assert cases_ok >= 19


def test_mc_coverage_seed_reproducible():
    a = mc_coverage(0.3, 50, UN, NORM95, trials=5000, seed=42)
    b = mc_coverage(0.3, 50, UN, NORM95, trials=5000, seed=42)
    assert a == b


def test_sweep_over_N():
    curve = coverage_sweep(UN, NORM95, p=0.3, grid=[5, 10, 20])
    assert curve.axis == "over_N"
    assert len(curve.points) == 3
    t10 = build_interval_table(10, UN, NORM95)
    assert curve.points[1] == (10, exact_coverage(0.3, t10))


def test_sweep_over_p():
    grid = np.linspace(0.05, 0.95, 19)
    curve = coverage_sweep(UN, NORM95, N=25, grid=grid)
    assert curve.axis == "over_p"
    assert all(0.0 <= c <= 1.0 for _, c in curve.points)
    with pytest.raises(ValueError):
        coverage_sweep(UN, NORM95, p=0.3, N=25, grid=grid)
    with pytest.raises(ValueError):
        CoverageCurve(axis="sideways", points=[])


def test_beta_posterior_table_and_classical_rejection():
    t = build_interval_table(10, PriorSpec("jeffreys"), BETA95)
    assert t.los.shape == (11,)
    assert np.all(t.los <= t.his)
    with pytest.raises(ValueError):
        build_interval_table(10, PriorSpec("wald"), BETA95)


def test_multinomial_marginal_tables():
    # b = 100 enters through the estimator's prior mass, shrinking p_hat
    t2 = build_interval_table(50, PriorSpec("uniform", b=2), NORM95)
    t100 = build_interval_table(50, PriorSpec("uniform", b=100), NORM95)
    assert t100.his[50] < t2.his[50]
    assert exact_coverage(0.5, t100) <= 1.0
