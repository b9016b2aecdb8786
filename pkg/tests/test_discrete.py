"""Tests for the discrete-domain estimator over admissible value sets."""

import math
import os
import time

import numpy as np
import pytest

from propcal.coverage import coverage_grid
from propcal.discrete import (
    DiscretePosterior,
    assemble_set,
    build_posterior,
    cached_admissible_set,
    discrete_interval,
    discrete_interval_table,
    discrete_point_estimate,
    expected_bins_table,
    load_admissible_set,
    p_stat,
    p_stat_all,
    save_admissible_set,
    self_consistent_thetas,
)
from propcal.errors import NumericError, ParseError

# N=5, b=2, xi=0.95 self-consistent values, quoted to five decimals
THETA_5 = [0.21196, 0.32965, 0.48010, 0.51990, 0.67035, 0.78804]


def test_p_stat_examples():
    assert p_stat(0, 5, 3) == pytest.approx(2.0 / 7.0, rel=1e-14)
    # b=2 collapses the recursion factor to 1, so every value is 1/(N+1)
    for N in (1, 4, 17):
        for j in range(N + 1):
            assert p_stat(j, N, 2) == pytest.approx(1.0 / (N + 1), rel=1e-14)
    assert p_stat_all(10, 4).sum() == pytest.approx(1.0, abs=1e-14)


def test_p_stat_matches_closed_form():
    for N in (1, 3, 7, 25, 80, 200):
        for b in (2, 3, 10, 100):
            ps = p_stat_all(N, b)
            for j in range(N + 1):
                exact = math.comb(N - j + b - 2, b - 2) / math.comb(N + b - 1, b - 1)
                assert ps[j] == pytest.approx(exact, rel=1e-12)


def test_p_stat_argument_errors():
    with pytest.raises(ValueError):
        p_stat(3, 2, 2)
    with pytest.raises(ValueError):
        p_stat(0, 5, 1)


def test_self_consistent_reference_values():
    start = time.perf_counter()
    aset = self_consistent_thetas(5, 2, 0.95, "uniform_width")
    elapsed = time.perf_counter() - start
    assert np.max(np.abs(aset.theta - THETA_5)) < 5e-5
    assert elapsed < 1.0


def test_self_consistent_symmetry():
    for N in (5, 12):
        aset = self_consistent_thetas(N, 2, 0.95)
        assert np.max(np.abs(aset.theta + aset.theta[::-1] - 1.0)) < 1e-9


def test_fixed_point_is_stable():
    # one further application of the midpoint map moves nothing visibly
    aset = self_consistent_thetas(5, 2, 0.95)
    mids = []
    for n in range(6):
        iv = discrete_interval(build_posterior(n, aset), 0.95)
        mids.append(0.5 * (iv.lo + iv.hi))
    assert np.max(np.abs(np.array(mids) - aset.theta)) < 1e-8


def test_priors_coincide_for_two_bins():
    u = self_consistent_thetas(8, 2, 0.95, "uniform_width")
    c = self_consistent_thetas(8, 2, 0.95, "combinatorial")
    assert np.max(np.abs(u.theta - c.theta)) < 1e-12


def test_geometry_invariants():
    aset = self_consistent_thetas(9, 2, 0.9)
    assert aset.phi[0] == 0.0 and aset.phi[-1] == 1.0
    assert np.allclose(aset.phi[1:-1], 0.5 * (aset.theta[:-1] + aset.theta[1:]))
    assert aset.W.sum() == pytest.approx(1.0, abs=1e-15)
    assert aset.pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(aset.theta) > 0)


def test_posterior_area_and_mirror():
    aset = self_consistent_thetas(5, 2, 0.95)
    for n in range(6):
        post = build_posterior(n, aset)
        assert np.sum(post.heights * post.W) == pytest.approx(1.0, abs=1e-12)
    # swapping n and N-n mirrors the posterior on a symmetric set
    a = build_posterior(1, aset)
    b = build_posterior(4, aset)
    assert np.allclose(a.heights, b.heights[::-1], rtol=1e-10)
    assert np.allclose(a.W, b.W[::-1], rtol=1e-10)


def test_posterior_single_value():
    aset = assemble_set(np.array([0.5]), 2, 0.95, "uniform_width")
    post = build_posterior(0, aset)
    assert post.heights.shape == (1,)
    assert post.heights[0] * post.W[0] == pytest.approx(1.0, abs=1e-15)


def test_interval_single_rectangle():
    post = DiscretePosterior(n=0, phi=np.array([0.0, 1.0]), W=np.array([1.0]),
                             heights=np.array([1.0]))
    iv = discrete_interval(post, 0.95)
    assert iv.lo == pytest.approx(0.025, abs=1e-12)
    assert iv.hi == pytest.approx(0.975, abs=1e-12)


def test_interval_two_rectangles():
    post = DiscretePosterior(n=0, phi=np.array([0.0, 0.5, 1.0]),
                             W=np.array([0.5, 0.5]),
                             heights=np.array([1.0, 1.0]))
    iv = discrete_interval(post, 0.5)
    assert iv.lo == pytest.approx(0.25, abs=1e-12)
    assert iv.hi == pytest.approx(0.75, abs=1e-12)


def test_interval_against_accumulation_oracle():
    # the cumulative area is piecewise linear with knots at the phi values,
    # so inverting it with interp gives an independent answer
    aset = self_consistent_thetas(5, 2, 0.95)
    for n in range(6):
        post = build_posterior(n, aset)
        areas = post.heights * post.W
        knots_y = np.concatenate([[0.0], np.cumsum(areas)])
        lo = np.interp(0.025, knots_y, post.phi)
        hi = np.interp(knots_y[-1] - 0.025, knots_y, post.phi)
        iv = discrete_interval(post, 0.95)
        assert iv.lo == pytest.approx(lo, abs=1e-9)
        assert iv.hi == pytest.approx(hi, abs=1e-9)


def test_interval_mirror_symmetry():
    aset = self_consistent_thetas(7, 2, 0.95)
    for n in range(8):
        a = discrete_interval(build_posterior(n, aset), 0.95)
        b = discrete_interval(build_posterior(7 - n, aset), 0.95)
        assert a.lo == pytest.approx(1.0 - b.hi, abs=1e-9)
        assert a.hi == pytest.approx(1.0 - b.lo, abs=1e-9)


def test_interval_xi_domain():
    post = DiscretePosterior(n=0, phi=np.array([0.0, 1.0]), W=np.array([1.0]),
                             heights=np.array([1.0]))
    with pytest.raises(ValueError):
        discrete_interval(post, 1.0)
    with pytest.raises(ValueError):
        discrete_interval(post, 0.0)


def test_point_estimate_matches_reference():
    aset = self_consistent_thetas(5, 2, 0.95)
    assert discrete_point_estimate(0, aset).p_hat == pytest.approx(0.21196, abs=5e-5)
    assert discrete_point_estimate(5, aset).p_hat == pytest.approx(0.78804, abs=5e-5)
    p_hats = [discrete_point_estimate(n, aset).p_hat for n in range(6)]
    assert np.all(np.diff(p_hats) > 0)
    sigmas = [discrete_point_estimate(n, aset).sigma_hat for n in range(6)]
    assert all(s > 0 for s in sigmas)
    assert sigmas[1] == pytest.approx(sigmas[4], abs=1e-12)
    with pytest.raises(ValueError):
        discrete_point_estimate(6, aset)


def test_expected_bins_reference_column():
    start = time.perf_counter()
    table = expected_bins_table(40, 100)
    assert table[:5] == [71, 21, 6, 2, 0]
    assert all(v == 0 for v in table[5:])
    assert time.perf_counter() - start < 1.0


def test_expected_bins_total_conserved():
    ps = p_stat_all(40, 100)
    assert 100.0 * ps.sum() == pytest.approx(100.0, abs=1e-9)


def test_coverage_quality():
    grid = np.linspace(0.005, 0.995, 199)
    for N in (10, 25, 50):
        aset = self_consistent_thetas(N, 2, 0.95)
        table = discrete_interval_table(aset)
        C = coverage_grid(grid, table)
        assert np.mean(np.abs(C - 0.95)) <= 0.05


def test_degenerate_combinatorial_prior_raises():
    # at many bins the occupancy prior overwhelms every likelihood and the
    # iteration collapses toward zero; that must surface as a numeric error
    with pytest.raises(NumericError) as info:
        self_consistent_thetas(40, 100, 0.95, "combinatorial")
    assert "last_theta" in info.value.diagnostics
    assert "residual" in info.value.diagnostics


def test_constructor_argument_errors():
    with pytest.raises(ValueError):
        self_consistent_thetas(0, 2, 0.95)
    with pytest.raises(ValueError):
        self_consistent_thetas(5, 2, 0.95, "flat")
    aset = self_consistent_thetas(3, 2, 0.95)
    with pytest.raises(ValueError):
        build_posterior(4, aset)


def test_cache_roundtrip_exact(tmp_path):
    aset = self_consistent_thetas(6, 2, 0.95)
    path = os.path.join(tmp_path, "set.csv")
    save_admissible_set(aset, "uniform_width", path)
    back, prior = load_admissible_set(path)
    assert prior == "uniform_width"
    assert np.array_equal(back.theta, aset.theta)
    assert np.array_equal(back.W, aset.W)


def test_cache_rejects_stale_values(tmp_path):
    aset = self_consistent_thetas(6, 2, 0.95)
    path = os.path.join(tmp_path, "set.csv")
    save_admissible_set(aset, "uniform_width", path)
    lines = open(path).read().splitlines()
    parts = lines[3].split(",")
    parts[5] = "%.17g" % (float(parts[5]) + 0.02)
    lines[3] = ",".join(parts)
    open(path, "w").write("\n".join(lines) + "\n")
    with pytest.raises(NumericError):
        load_admissible_set(path)


def test_cache_rejects_malformed_rows(tmp_path):
    path = os.path.join(tmp_path, "set.csv")
    with open(path, "w") as fh:
        fh.write("N,b,xi,prior,j,theta_j,pi_j\n")
        fh.write("6,2,0.95,uniform_width,zero,0.1,0.1\n")
    with pytest.raises(ParseError) as info:
        load_admissible_set(path)
    assert info.value.line == 2


def test_cached_set_rebuilds_on_corruption(tmp_path):
    first = cached_admissible_set(5, 2, 0.95, cache_dir=str(tmp_path))
    files = os.listdir(tmp_path)
    assert len(files) == 1
    path = os.path.join(tmp_path, files[0])
    open(path, "w").write("garbage\n")
    again = cached_admissible_set(5, 2, 0.95, cache_dir=str(tmp_path))
    assert np.max(np.abs(again.theta - first.theta)) < 1e-12
