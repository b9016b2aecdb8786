"""Trial densities, histogram sampling, and ensemble aggregation."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import beta as scipy_beta

from propcal.coverage import build_interval_table, exact_coverage
from propcal.mclab import (
    PDFS,
    TABLE_N_GRID,
    TABLE_PDFS,
    TrialPdf,
    _invert_snr_curve,
    histogram_edges,
    run_ensemble,
    sample_histogram,
    table_s1,
    true_bin_probs,
)
from propcal.pipeline import denoise_scale, initial_curve, snr
from propcal.proportions import PosteriorSpec, PriorSpec


# ------------------------------------------------------------------ densities

def test_registry_holds_the_benchmark_suite():
    assert set(TABLE_PDFS) <= set(PDFS)
    assert len(TABLE_PDFS) == 6
    assert "beta_2_21" in PDFS and "beta_63_6" in PDFS
    assert TABLE_N_GRID[0] == 40 and TABLE_N_GRID[-1] == 12800


def test_trial_pdf_validation():
    with pytest.raises(ValueError):
        TrialPdf(kind="cauchy")
    with pytest.raises(ValueError):
        TrialPdf(kind="beta", alpha=2.0)
    with pytest.raises(ValueError):
        TrialPdf(kind="beta", alpha=-1.0, beta=2.0)
    with pytest.raises(ValueError):
        TrialPdf(kind="normal", alpha=3.0)


def test_moments_match_numeric_integration():
    for name in ("sawtooth", "beta_3_15", "beta_63_6"):
        pdf = PDFS[name]
        lo, hi = 0.0, 1.0
        mu = quad(lambda x: x * _density(pdf, x), lo, hi)[0]
        ex2 = quad(lambda x: x * x * _density(pdf, x), lo, hi)[0]
        assert abs(pdf.mean() - mu) < 1e-10
        assert abs(pdf.std() - math.sqrt(ex2 - mu * mu)) < 1e-10


def _density(pdf, x):
    if pdf.kind == "sawtooth":
        return 2.0 * x if 0.0 <= x < 1.0 else 0.0
    return scipy_beta.pdf(x, pdf.alpha, pdf.beta)


def test_sawtooth_cdf_spot_values():
    saw = PDFS["sawtooth"]
    assert saw.cdf(-0.5) == 0.0
    assert saw.cdf(1.5) == 1.0
    # mass below x is x^2 on the ramp
    assert abs(saw.cdf(0.125) - 0.015625) < 1e-15
    assert abs(saw.cdf(0.25) - 0.0625) < 1e-15
    assert abs(saw.cdf(0.625) - 0.390625) < 1e-15
    assert abs(saw.inverse_cdf(0.0625) - 0.25) < 1e-15


def test_inverse_cdf_round_trip():
    u = np.linspace(0.001, 0.999, 499)
    for name, pdf in PDFS.items():
        back = pdf.cdf(pdf.inverse_cdf(u))
        assert np.abs(back - u).max() < 1e-8
    with pytest.raises(ValueError):
        PDFS["gauss"].inverse_cdf(np.array([0.5, 1.2]))


def test_sawtooth_sampler_kolmogorov_smirnov():
    saw = PDFS["sawtooth"]
    rng = np.random.default_rng(2718)
    x = np.sort(saw.inverse_cdf(rng.random(1_000_000)))
    F = saw.cdf(x)
    n = x.size
    up = np.abs(np.arange(1, n + 1) / n - F).max()
    dn = np.abs(F - np.arange(0, n) / n).max()
    assert max(up, dn) < 0.002


# ------------------------------------------------------------------- geometry

def test_edges_span_three_and_a_half_sigmas():
    e = histogram_edges(PDFS["gauss"], b=100)
    assert e.shape == (101,)
    assert e[0] == -3.5 and e[-1] == 3.5
    with pytest.raises(ValueError):
        histogram_edges(PDFS["gauss"], b=0)


def test_true_bin_probs_sum_to_one_with_tails():
    for name in ("gauss", "sawtooth", "beta_9_11", "beta_2_21"):
        pdf = PDFS[name]
        p = true_bin_probs(pdf, histogram_edges(pdf, 100))
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p >= 0.0)


def test_gaussian_probs_symmetric():
    p = true_bin_probs(PDFS["gauss"], histogram_edges(PDFS["gauss"], 100))
    np.testing.assert_allclose(p, p[::-1], atol=1e-12)


def test_beta_3_15_probs_against_numeric_integration():
    pdf = PDFS["beta_3_15"]
    edges = histogram_edges(pdf, 100)
    p = true_bin_probs(pdf, edges)
    # the lower edge sits below the support; those bins hold nothing
    below = edges[1:] <= 0.0
    assert below.any()
    assert np.all(p[below] == 0.0)
    for i in (25, 40, 60, 99):
        lo = max(edges[i], 0.0)
        hi = min(edges[i + 1], 1.0)
        want = quad(lambda x: scipy_beta.pdf(x, 3, 15), lo, hi,
                    epsabs=1e-13, epsrel=1e-13)[0]
        if i == 99:
            want += 1.0 - scipy_beta.cdf(min(edges[-1], 1.0), 3, 15)
        assert abs(p[i] - want) < 1e-10


# ------------------------------------------------------------------- sampling

def test_sample_histogram_deterministic_and_binned():
    h1 = sample_histogram(PDFS["gauss"], 500, seed=11)
    h2 = sample_histogram(PDFS["gauss"], 500, seed=11)
    np.testing.assert_array_equal(h1.counts, h2.counts)
    assert h1.N == 500 and h1.b == 100 and h1.overflow
    h0 = sample_histogram(PDFS["gauss"], 0, seed=11)
    assert h0.N == 0 and np.all(h0.counts == 0)
    with pytest.raises(ValueError):
        sample_histogram(PDFS["gauss"], -1, seed=11)


def test_sample_frequencies_match_true_probs():
    # one large pooled sample: each bin count is Binomial(N, p_i)
    for name in ("gauss", "beta_3_15"):
        pdf = PDFS[name]
        N = 200_000
        h = sample_histogram(pdf, N, seed=31)
        p = true_bin_probs(pdf, h.edges)
        err = np.abs(h.counts / N - p)
        bound = 4.0 * np.sqrt(np.maximum(p * (1.0 - p), 1e-12) / N)
        assert np.all(err <= bound + 1e-9)


# ------------------------------------------------------------------ ensembles

def test_single_trial_equals_pipeline_run():
    res = run_ensemble("gauss", 40, R=1, seed=7, threads=1)
    h = sample_histogram(PDFS["gauss"], 40,
                         np.random.SeedSequence(7, spawn_key=(0,)))
    raw = initial_curve(h)
    sc = denoise_scale(raw)
    np.testing.assert_array_equal(res.stats["raw"].p_mean, raw.p_hat)
    np.testing.assert_allclose(res.stats["scaled"].p_mean, sc.p_hat,
                               atol=1e-12)
    assert res.stats["raw"].snr_mean == snr(raw.p_hat, res.p_true)
    assert res.stats["raw"].snr_var == 0.0
    # with one trial the truth-anchored spread is just the absolute error
    np.testing.assert_allclose(res.stats["raw"].sigma_mc,
                               np.abs(raw.p_hat - res.p_true), atol=1e-15)


def test_ensemble_thread_count_does_not_change_results():
    a = run_ensemble("gauss", 40, R=300, seed=5, threads=1)
    b = run_ensemble("gauss", 40, R=300, seed=5, threads=4)
    for stage in ("raw", "scaled"):
        assert a.stats[stage].snr_mean == b.stats[stage].snr_mean
        np.testing.assert_array_equal(a.stats[stage].p_mean,
                                      b.stats[stage].p_mean)
        np.testing.assert_array_equal(a.stats[stage].coverage,
                                      b.stats[stage].coverage)


def test_ensemble_raw_snr_matches_published_anchor():
    res = run_ensemble("gauss", 40, stages=("raw",), R=400, seed=12,
                       threads=1)
    assert abs(res.stats["raw"].snr_mean - 1.192) < 0.03
    cov = res.stats["raw"].coverage
    assert np.all((cov >= 0.0) & (cov <= 1.0))


def test_sawtooth_large_N_raw_anchor():
    # the sawtooth shape is a declared assumption, so the band is wide
    res = run_ensemble("sawtooth", 12800, stages=("raw",), R=30, seed=9,
                       threads=1)
    s = res.stats["raw"].snr_mean
    assert 12.65 * 0.7 < s < 12.65 * 1.3


def test_two_bin_coverage_closes_loop_with_exact_calculation():
    # b=2 histogram of a symmetric density: each bin is a Binomial(N, 1/2)
    # proportion, so MC interval coverage must match the exact curve
    N, R = 12, 3000
    res = run_ensemble("gauss", N, stages=("raw",), R=R, b=2, seed=23,
                       threads=1)
    table = build_interval_table(
        N, PriorSpec(family="uniform", b=2), PosteriorSpec(kind="normal"))
    want = exact_coverage(0.5, table)
    for frac in res.stats["raw"].coverage:
        stderr = math.sqrt(max(want * (1.0 - want), 1e-12) / R)
        assert abs(frac - want) <= 4.0 * stderr


def test_ensemble_validation():
    with pytest.raises(ValueError):
        run_ensemble("gauss", 40, R=0)
    with pytest.raises(ValueError):
        run_ensemble("gauss", 40, stages=())
    with pytest.raises(ValueError):
        run_ensemble("gauss", 40, stages=("raw", "polished"))
    with pytest.raises(ValueError):
        run_ensemble("gauss", 40, estimator="nonsense")


def test_estimator_routes_run():
    for est in ("optimized_b2", "discrete"):
        res = run_ensemble("gauss", 25, estimator=est, stages=("raw",),
                           R=8, seed=3, threads=1)
        assert res.estimator == est
        assert res.stats["raw"].p_mean.shape == (100,)


# ---------------------------------------------------------------- benchmarks

def test_invert_snr_curve_handles_dips():
    Ns = (40, 80, 120, 200)
    snrs = (1.0, 0.9, 1.5, 2.0)  # dip at 80
    eq = _invert_snr_curve(1.5, Ns, snrs)
    assert abs(eq.n_eq - 120.0) < 1e-9
    assert not eq.extrapolated


def test_table_s1_structure_and_self_match():
    rows = table_s1(pdf_names=("gauss",), N_grid=(40, 100, 200),
                    estimators=("multinomial_ros",), R=40, seed=3,
                    threads=1)
    assert len(rows) == 3
    for row in rows:
        cells = row["cells"]
        assert set(cells) == {("multinomial_ros", "raw"),
                              ("multinomial_ros", "scaled")}
        best_col = max(cells, key=lambda c: cells[c].snr)
        # the benchmark column reads its own curve at its own N
        assert cells[best_col].ratio == 1.0
        assert not cells[best_col].extrapolated
        for cell in cells.values():
            assert cell.n_eq >= 0.0
            assert cell.ratio == cell.n_eq / row["N"]
        # smoothing wins at every N here, and raw needs far more data
        assert best_col == ("multinomial_ros", "scaled")
        assert cells[("multinomial_ros", "raw")].ratio > 2.0
