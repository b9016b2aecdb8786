"""Monte Carlo lab: trial densities, histogram samplers, ensemble runs.

A TrialPdf supplies the analytic truth (per-bin probabilities for a fixed
histogram geometry) and an inverse CDF for sampling. run_ensemble repeats
the estimation pipeline over R independently seeded histograms and
aggregates signal-to-error ratios, per-bin statistics, and per-bin interval
coverage. table_s1 arranges ensemble results into rows of
(S/N, N_eq, N_eq/N) triplets per estimator and stage, where N_eq is the
sample size at which a column's own S/N curve reaches the row's best S/N.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from .denoise import SmoothConfig, smooth_cycles_for_N, smooth_many
from .discrete import self_consistent_thetas
from .errors import DegenerateInputError
from .numerics import beta_quantile, betainc_reg, normal_quantile, normal_quantile_vec
from .pipeline import (
    DEFAULT_SIGMA_MODEL,
    ESTIMATORS,
    Histogram,
    _subtract_baseline,
    initial_curve,
    n_equivalent,
    sigma_corrected,
)
from .prior_opt import ExpFit

KINDS = ("normal", "sawtooth", "beta")

# prior-weight curve from the shipped optimization rounds, used when an
# ensemble run does not bring its own
DEFAULT_ALPHA_FIT = ExpFit(k=1.0, B0=6.5, residual_rms=0.0)

# sawtooth analytic moments: mean 2/3, variance 1/18
_SAW_MEAN = 2.0 / 3.0
_SAW_VAR = 1.0 / 18.0

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class TrialPdf:
    """Analytic density a histogram ensemble is drawn from.

    Parameters
    ----------
    kind : str
        "normal" (standard normal), "sawtooth" (one rising linear tooth
        on [0, 1), density 2x, the single period of a sawtooth wave), or
        "beta".
    alpha, beta : float, optional
        Shape parameters, beta kind only.
    """

    kind: str
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("kind must be one of %s" % (KINDS,))
        if self.kind == "beta":
            if self.alpha is None or self.beta is None:
                raise ValueError("beta kind requires alpha and beta")
            if self.alpha <= 0.0 or self.beta <= 0.0:
                raise ValueError("beta shape parameters must be positive")
        elif self.alpha is not None or self.beta is not None:
            raise ValueError("shape parameters only apply to the beta kind")

    def mean(self):
        if self.kind == "normal":
            return 0.0
        if self.kind == "sawtooth":
            return _SAW_MEAN
        return self.alpha / (self.alpha + self.beta)

    def std(self):
        if self.kind == "normal":
            return 1.0
        if self.kind == "sawtooth":
            return float(np.sqrt(_SAW_VAR))
        s = self.alpha + self.beta
        return float(np.sqrt(self.alpha * self.beta / (s * s * (s + 1.0))))

    def cdf(self, x):
        """Cumulative distribution, vectorized."""
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            out = 0.5 * (1.0 + erf(x / _SQRT2))
        elif self.kind == "sawtooth":
            xc = np.clip(x, 0.0, 1.0)
            out = xc * xc
        else:
            out = betainc_reg(self.alpha, self.beta, np.clip(x, 0.0, 1.0))
        return float(out) if out.ndim == 0 else out

    def inverse_cdf(self, u):
        """Quantile function, vectorized; u must lie in [0, 1]."""
        u = np.asarray(u, dtype=float)
        if np.any((u < 0.0) | (u > 1.0)):
            raise ValueError("u must lie in [0, 1]")
        if self.kind == "normal":
            out = normal_quantile_vec(u) if u.ndim else normal_quantile(float(u))
        elif self.kind == "sawtooth":
            # F = x^2 on the ramp, so the inverse is a square root
            out = np.sqrt(u)
        else:
            out = beta_quantile(u, self.alpha, self.beta)
        out = np.asarray(out)
        return float(out) if out.ndim == 0 else out


def _beta(a, b):
    return TrialPdf(kind="beta", alpha=float(a), beta=float(b))


PDFS = {
    "gauss": TrialPdf(kind="normal"),
    "sawtooth": TrialPdf(kind="sawtooth"),
    "beta_3_15": _beta(3, 15),
    "beta_9_11": _beta(9, 11),
    "beta_6_2": _beta(6, 2),
    "beta_5_3": _beta(5, 3),
    "beta_2_21": _beta(2, 21),
    "beta_63_6": _beta(63, 6),
}

# the six-density benchmark suite and its sample-size grid
TABLE_PDFS = ("gauss", "beta_3_15", "beta_5_3", "beta_6_2", "beta_9_11",
              "sawtooth")
TABLE_N_GRID = (40, 60, 80, 100, 120, 140, 160, 180, 200,
                400, 800, 1600, 3600, 6400, 9600, 12800)


def histogram_edges(pdf, b=100, half_width=3.5):
    """Bin edges spanning mean +- half_width standard deviations.

    Analytic moments of the density fix the edges, so every trial in an
    ensemble shares the same geometry and per-bin statistics line up.
    """
    if b < 1:
        raise ValueError("need at least one bin")
    mu = pdf.mean()
    sd = pdf.std()
    return np.linspace(mu - half_width * sd, mu + half_width * sd, b + 1)


def true_bin_probs(pdf, edges):
    """Per-bin probabilities with tail mass folded into the terminal bins."""
    edges = np.asarray(edges, dtype=float)
    F = pdf.cdf(edges)
    p = np.diff(F)
    p[0] += F[0]
    p[-1] += 1.0 - F[-1]
    return p


def sample_histogram(pdf, N, seed, b=100, edges=None):
    """One histogram of N draws, binned with overflow into terminal bins.

    Draws go through the density's inverse CDF so every family shares one
    inversion path. `seed` is anything numpy's default_rng accepts.
    """
    if N < 0:
        raise ValueError("N must be non-negative")
    if edges is None:
        edges = histogram_edges(pdf, b=b)
    else:
        edges = np.asarray(edges, dtype=float)
        b = edges.size - 1
    rng = np.random.default_rng(seed)
    if N == 0:
        counts = np.zeros(b, dtype=np.int64)
    else:
        x = pdf.inverse_cdf(rng.random(N))
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, b - 1)
        counts = np.bincount(idx, minlength=b)
    return Histogram(counts=counts, edges=edges, overflow=True)


@dataclass(frozen=True, eq=False)
class StageStats:
    """Per-stage aggregates of one ensemble.

    sigma_mc is the truth-anchored long-run spread per bin (see the field
    note below). sqrt_pq_mean is the MC mean of sqrt(p_hat (1 - p_hat))
    per bin, the sample-size-free core of the parametric spread model;
    calibration divides it by sqrt(A0 N + B0).
    """

    snr_mean: float
    snr_var: float
    p_mean: np.ndarray = field(repr=False)
    sigma_mc: np.ndarray = field(repr=False)
    coverage: np.ndarray = field(repr=False)
    sqrt_pq_mean: np.ndarray = field(repr=False)

    # sigma_mc is the long-run RMS deviation of the estimates from the
    # true bin probabilities, sqrt(<(p_hat - p_true)^2>), so it includes
    # any systematic bias of the stage alongside trial-to-trial spread.

    def __post_init__(self):
        cov = np.asarray(self.coverage, dtype=float)
        if np.any(cov < 0.0) or np.any(cov > 1.0):
            raise ValueError("coverage fractions must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Aggregates of R pipeline runs for one (pdf, N, estimator)."""

    pdf_name: str
    N: int
    b: int
    estimator: str
    R: int
    xi: float
    seed: int
    p_true: np.ndarray = field(repr=False)
    stats: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")


_THETA_MEMO = {}


def _theta_set_for(N, xi):
    key = (N, round(xi, 12))
    if key not in _THETA_MEMO:
        _THETA_MEMO[key] = self_consistent_thetas(N, 2, xi)
    return _THETA_MEMO[key]


def _snr_rows(P, p_true):
    # S/N is undefined for a constant truth; aggregate as NaN so coverage
    # and per-bin statistics stay usable
    signal = p_true.std()
    if signal == 0.0:
        return np.full(P.shape[0], np.nan)
    noise = np.sqrt(np.mean((P - p_true[None, :]) ** 2, axis=1))
    return np.divide(signal, noise, out=np.full_like(noise, np.inf),
                     where=noise > 0.0)


def _stage_stats(P, lo, hi, p_true, R):
    snrs = _snr_rows(P, p_true)
    inside = (lo <= p_true[None, :]) & (p_true[None, :] <= hi)
    return StageStats(
        snr_mean=float(snrs.mean()),
        snr_var=float(snrs.var(ddof=1)) if R > 1 else 0.0,
        p_mean=P.mean(axis=0),
        sigma_mc=np.sqrt(np.mean((P - p_true[None, :]) ** 2, axis=0)),
        coverage=inside.mean(axis=0),
        sqrt_pq_mean=np.sqrt(np.clip(P * (1.0 - P), 0.0, None)).mean(axis=0),
    )


def run_ensemble(pdf, N, estimator="multinomial_ros", stages=("raw", "scaled"),
                 R=2000, seed=0, b=100, xi=0.95, alpha_fn=None,
                 theta_set=None, cfg=None, model=DEFAULT_SIGMA_MODEL,
                 threads=None, pdf_name=None):
    """R independent pipeline runs on freshly sampled histograms.

    Each trial i draws its own generator from
    SeedSequence(seed, spawn_key=(i,)), so results do not depend on the
    worker count or schedule. Aggregation happens after all trials finish,
    in trial order.

    Parameters
    ----------
    pdf : TrialPdf or str
        Density to sample (a PDFS key is accepted).
    N, R, seed, b, xi : ensemble shape.
    estimator : one of ESTIMATORS.
    stages : subset of ("raw", "scaled").
    alpha_fn : optional N -> alpha0 curve for optimized_b2
        (DEFAULT_ALPHA_FIT when omitted).
    theta_set : optional AdmissibleSet for the discrete estimator
        (built and memoized when omitted).
    cfg : optional SmoothConfig window settings for the scaled stage.
    model : SigmaModel for scaled-stage spreads.
    threads : worker cap (logical cores when None).
    """
    if isinstance(pdf, str):
        pdf_name = pdf_name or pdf
        pdf = PDFS[pdf]
    if pdf_name is None:
        pdf_name = pdf.kind
    stages = tuple(stages)
    bad = [s for s in stages if s not in ("raw", "scaled")]
    if bad or not stages:
        raise ValueError("stages must be a non-empty subset of "
                         "('raw', 'scaled')")
    if estimator not in ESTIMATORS:
        raise ValueError("estimator must be one of %s" % (ESTIMATORS,))
    if R < 1:
        raise ValueError("R must be at least 1")
    if estimator == "optimized_b2" and alpha_fn is None:
        alpha_fn = DEFAULT_ALPHA_FIT
    if estimator == "discrete" and theta_set is None:
        theta_set = _theta_set_for(N, xi)

    edges = histogram_edges(pdf, b=b)
    p_true = true_bin_probs(pdf, edges)

    raw_p = np.empty((R, b))
    raw_s = np.empty((R, b))
    raw_lo = np.empty((R, b))
    raw_hi = np.empty((R, b))

    # Interval endpoints are only aggregated for the raw stage, so skip
    # extracting them when the caller asked for the scaled stage alone.
    want_raw = "raw" in stages

    def fill(i0, i1):
        for i in range(i0, i1):
            sub = np.random.SeedSequence(seed, spawn_key=(i,))
            h = sample_histogram(pdf, N, sub, edges=edges)
            c = initial_curve(h, estimator=estimator, xi=xi,
                              alpha_fn=alpha_fn, theta_set=theta_set)
            raw_p[i] = c.p_hat
            raw_s[i] = c.sigma_hat
            if want_raw:
                raw_lo[i] = [iv.lo for iv in c.intervals]
                raw_hi[i] = [iv.hi for iv in c.intervals]

    workers = threads if threads else (os.cpu_count() or 1)
    workers = max(1, min(int(workers), R))
    if workers == 1:
        fill(0, R)
    else:
        block = 256
        spans = [(i, min(i + block, R)) for i in range(0, R, block)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda s: fill(*s), spans))

    stats = {}
    if "raw" in stages:
        stats["raw"] = _stage_stats(raw_p, raw_lo, raw_hi, p_true, R)
    if "scaled" in stages:
        use = cfg if cfg is not None else SmoothConfig()
        use = replace(use, cycles=smooth_cycles_for_N(max(N, 1)))
        sm = smooth_many(raw_p, use)
        sm = _subtract_baseline(sm)
        totals = sm.sum(axis=1)
        if np.any(totals <= 0.0):
            raise DegenerateInputError(
                "smoothed curve is identically zero after baseline "
                "adjustment (first trial %d)"
                % int(np.argmax(totals <= 0.0)))
        P = sm / totals[:, None]
        S = sigma_corrected(P, N, model)
        z = normal_quantile(0.5 * (1.0 + xi))
        lo = np.clip(P - z * S, 0.0, 1.0)
        hi = np.clip(P + z * S, 0.0, 1.0)
        stats["scaled"] = _stage_stats(P, lo, hi, p_true, R)

    return EnsembleResult(pdf_name=pdf_name, N=N, b=b, estimator=estimator,
                          R=R, xi=xi, seed=seed, p_true=p_true, stats=stats)


@dataclass(frozen=True)
class TableCell:
    """One (S/N, N_eq, ratio) triplet of the benchmark table."""

    snr: float
    n_eq: float
    ratio: float
    extrapolated: bool


def _invert_snr_curve(target, Ns, snrs):
    """First sample size at which a measured S/N curve reaches a target.

    Columns are usually monotone; when one dips, the running maximum keeps
    the first-crossing reading, matching how the table treats a column
    that already passed the benchmark earlier.
    """
    pairs = list(zip(Ns, snrs))
    try:
        return n_equivalent(target, pairs)
    except ValueError:
        env = np.maximum.accumulate(np.asarray(snrs, dtype=float))
        keep = [0]
        for i in range(1, env.size):
            if env[i] > env[keep[-1]]:
                keep.append(i)
        if len(keep) < 2:
            return n_equivalent(target, pairs[:2])
        sub = [(Ns[i], env[i]) for i in keep]
        return n_equivalent(target, sub)


def table_s1(pdf_names=TABLE_PDFS, N_grid=TABLE_N_GRID,
             estimators=ESTIMATORS, stages=("raw", "scaled"), R=2000,
             seed=0, b=100, xi=0.95, alpha_fn=None,
             model=DEFAULT_SIGMA_MODEL, cfg=None, threads=None,
             progress=None):
    """Benchmark rows: S/N with equivalent-N columns per estimator/stage.

    Every (pdf, N) row runs one ensemble per estimator (stages share the
    trials). The row benchmark is the best S/N across columns; each
    column's N_eq inverts that column's own S/N-vs-N curve at the
    benchmark, so the winning column lands exactly at N (ratio 1).

    Returns a list of row dicts: {"pdf", "N", "cells"} with cells keyed by
    (estimator, stage) holding TableCell triplets.
    """
    N_grid = tuple(int(N) for N in N_grid)
    columns = [(est, stage) for est in estimators for stage in stages]
    snr_of = {col: [] for col in columns}

    for name in pdf_names:
        for N in N_grid:
            for est in estimators:
                if progress is not None:
                    progress("pdf=%s N=%d estimator=%s" % (name, N, est))
                res = run_ensemble(name, N, estimator=est, stages=stages,
                                   R=R, seed=seed, b=b, xi=xi,
                                   alpha_fn=alpha_fn, model=model, cfg=cfg,
                                   threads=threads)
                for stage in stages:
                    snr_of[(est, stage)].append(
                        (name, N, res.stats[stage].snr_mean))

    rows = []
    for name in pdf_names:
        curves = {
            col: [(N, s) for (p, N, s) in snr_of[col] if p == name]
            for col in columns
        }
        for N in N_grid:
            here = {col: dict(curves[col])[N] for col in columns}
            benchmark = max(here.values())
            cells = {}
            for col in columns:
                eq = _invert_snr_curve(benchmark, *zip(*curves[col]))
                cells[col] = TableCell(snr=here[col], n_eq=eq.n_eq,
                                       ratio=eq.n_eq / N,
                                       extrapolated=eq.extrapolated)
            rows.append({"pdf": name, "N": N, "cells": cells})
    return rows
