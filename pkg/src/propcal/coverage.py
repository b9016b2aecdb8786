"""Coverage measurement for interval estimators.

Exact coverage is a discrete sum over all N+1 binomial outcomes: build the
interval for every possible count once, then weight interval membership by
the binomial pmf. Multinomial bins reduce to this marginal binomial picture
(success = "the draw landed in bin i") using the multinomial estimator's
per-bin point and spread, so the same machinery serves b > 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import beta_quantile, binom_logpmf, normal_quantile
from .proportions import Interval, estimate_arrays


@dataclass(frozen=True, eq=False)
class IntervalTable:
    """Intervals for every possible outcome n in {0..N} of one estimator."""

    N: int
    xi: float
    los: np.ndarray = field(repr=False)
    his: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.los.shape != (self.N + 1,) or self.his.shape != (self.N + 1,):
            raise ValueError("interval table must have one interval per outcome")
        if np.any(self.los < 0.0) or np.any(self.his > 1.0) or np.any(self.los > self.his):
            raise ValueError("every interval must satisfy 0 <= lo <= hi <= 1")

    @property
    def intervals(self):
        return [Interval(float(l), float(h)) for l, h in zip(self.los, self.his)]


@dataclass(frozen=True)
class CoverageCurve:
    """Coverage as a function of either N (fixed p) or p (fixed N)."""

    axis: str  # "over_N" or "over_p"
    points: list  # list of (abscissa, C) pairs

    def __post_init__(self):
        if self.axis not in ("over_N", "over_p"):
            raise ValueError("axis must be 'over_N' or 'over_p'")


def build_interval_table(N, prior, posterior):
    """Intervals for all outcomes n = 0..N under one prior/posterior pair.

    Parameters
    ----------
    N : int
        Sample size.
    prior : PriorSpec
    posterior : PosteriorSpec
        kind "normal" works for every family; kind "beta" needs a conjugate
        family (uniform, jeffreys, generalized_dirichlet).

    Returns
    -------
    IntervalTable
    """
    n = np.arange(N + 1)
    xi = posterior.xi
    if posterior.kind == "normal":
        p, s = estimate_arrays(n, N, prior, xi)
        z = normal_quantile(0.5 * (1.0 + xi))
        los = np.maximum(0.0, p - z * s)
        his = np.minimum(1.0, p + z * s)
    elif posterior.kind == "beta":
        a0 = prior.effective_alpha0
        if a0 is None:
            raise ValueError(
                "beta posterior needs a conjugate family, not %r" % prior.family
            )
        b0 = prior.beta0
        a = n + a0
        bb = (N - n) + b0
        los = beta_quantile(0.5 * (1.0 - xi), a, bb)
        his = beta_quantile(0.5 * (1.0 + xi), a, bb)
    else:
        raise ValueError("interval tables support 'normal' and 'beta' posteriors")
    return IntervalTable(N=N, xi=xi, los=los, his=his)


def binomial_pmf(p, N):
    """Binomial(N, p) pmf over n = 0..N; log-gamma based, stable to N >= 20000."""
    n = np.arange(N + 1)
    if p <= 0.0:
        out = np.zeros(N + 1)
        out[0] = 1.0
        return out
    if p >= 1.0:
        out = np.zeros(N + 1)
        out[N] = 1.0
        return out
    return np.exp(binom_logpmf(n, N, p))


def binomial_pmf_matrix(p_grid, N):
    """Rows of binomial pmfs, one row per grid point.

    The matrix depends only on (N, p_grid), not on the estimator, so a
    caller optimizing over prior parameters at fixed N can compute it once
    and pass it to `coverage_grid` / `mismatch_objective` repeatedly.
    """
    p = np.asarray(p_grid, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("pmf matrix grid points must lie strictly in (0,1)")
    n = np.arange(N + 1, dtype=float)
    from .numerics import log_binom_coeff

    lc = log_binom_coeff(float(N), n)
    out = np.empty((p.size, N + 1))
    # chunk rows so N ~ 20000 grids do not allocate a giant temporary
    step = max(1, int(4.0e6 // (N + 1)))
    for start in range(0, p.size, step):
        pc = p[start:start + step, None]
        out[start:start + step] = np.exp(
            lc[None, :] + n[None, :] * np.log(pc) + (N - n)[None, :] * np.log1p(-pc)
        )
    return out


def exact_coverage(p, table):
    """Probability that the reported interval contains p, by exact summation.

    Membership is closed on both ends: outcome n covers p when
    lo_n <= p <= hi_n.
    """
    member = (table.los <= p) & (p <= table.his)
    if not member.any():
        return 0.0
    if member.all():
        # total probability; avoids returning 1 - (rounding) in this case
        return 1.0
    pmf = binomial_pmf(p, table.N)
    return float(np.minimum(1.0, pmf[member].sum()))


def coverage_grid(p_grid, table, pmf_matrix=None):
    """exact_coverage evaluated across a grid of p values, vectorized.

    Parameters
    ----------
    p_grid : array of p values strictly inside (0,1).
    table : IntervalTable
    pmf_matrix : optional precomputed `binomial_pmf_matrix(p_grid, table.N)`.

    Returns
    -------
    array of coverage values, one per grid point.
    """
    p = np.asarray(p_grid, dtype=float)
    if pmf_matrix is None:
        pmf_matrix = binomial_pmf_matrix(p, table.N)
    member = (table.los[None, :] <= p[:, None]) & (p[:, None] <= table.his[None, :])
    C = np.einsum("gn,gn->g", pmf_matrix, member.astype(float))
    return np.minimum(1.0, C)


def mismatch_objective(xi, table_builder, alpha0, p_grid, pmf_matrix=None):
    """Mean squared gap between nominal and delivered coverage over a p grid.

    table_builder maps a concentration parameter alpha0 to an IntervalTable;
    the result is mean over the grid of (xi - C(p))^2.
    """
    table = table_builder(alpha0)
    C = coverage_grid(p_grid, table, pmf_matrix)
    return float(np.mean((xi - C) ** 2))


def mc_coverage(p, N, prior, posterior, trials, seed):
    """Monte Carlo coverage: fraction of simulated samples whose interval covers p.

    Returns
    -------
    (C_hat, stderr) with stderr = sqrt(C_hat (1 - C_hat) / trials).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    table = build_interval_table(N, prior, posterior)
    rng = np.random.default_rng(seed)
    draws = rng.binomial(N, p, size=trials)
    hits = (table.los[draws] <= p) & (p <= table.his[draws])
    c_hat = float(hits.mean())
    stderr = float(np.sqrt(c_hat * (1.0 - c_hat) / trials))
    return c_hat, stderr


def coverage_sweep(prior, posterior, p=None, N=None, grid=None):
    """Coverage curve along one axis with the other held fixed.

    Exactly one of p (fixed true proportion, sweep over sample sizes in
    `grid`) or N (fixed sample size, sweep over proportions in `grid`)
    must be given.
    """
    if grid is None or (p is None) == (N is None):
        raise ValueError("give exactly one of p or N, plus the sweep grid")
    points = []
    if p is not None:
        for N_i in grid:
            table = build_interval_table(int(N_i), prior, posterior)
            points.append((int(N_i), exact_coverage(p, table)))
        return CoverageCurve(axis="over_N", points=points)
    table = build_interval_table(int(N), prior, posterior)
    C = coverage_grid(np.asarray(grid, dtype=float), table)
    points = [(float(pg), float(c)) for pg, c in zip(grid, C)]
    return CoverageCurve(axis="over_p", points=points)
