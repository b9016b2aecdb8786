"""Per-histogram estimation pipeline.

Takes raw bin counts through an initial proportion estimator, the
local-linear de-noiser, baseline and scale adjustment, and a parametric
spread model whose calibrated denominator replaces the per-bin posterior
spread on smoothed curves. Also provides the signal-to-error ratio and the
equivalent-observations metric used to compare estimators.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .denoise import SmoothConfig, smooth, smooth_cycles_for_N
from .discrete import discrete_interval_table, point_estimate_table
from .errors import ConfigError, DegenerateInputError
from .numerics import normal_quantile
from .proportions import Interval, PriorSpec, estimate_arrays

ESTIMATORS = ("multinomial_ros", "optimized_b2", "discrete")
STAGES = ("raw", "smoothed", "scaled")

# correction-factor curve constants: floor, amplitude, and the two decay
# rates of the fitted dip
DEFAULT_PSI_PARAMS = (0.45371, 0.43287, 1.6000e-4, 1.2296e-2)


@dataclass(frozen=True, eq=False)
class Histogram:
    """Binned counts with their edges.

    N is derived from the counts. `overflow` records whether observations
    outside the edge range were folded into the terminal bins.
    """

    counts: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    overflow: bool = False
    N: int = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        edges = np.asarray(self.edges, dtype=float)
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("counts must be a 1-D sequence")
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be non-negative integers")
        if edges.shape != (counts.size + 1,):
            raise ValueError("edges must have one more entry than counts")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "N", int(counts.sum()))

    @property
    def b(self):
        return self.counts.size


@dataclass(frozen=True, eq=False)
class EstimateCurve:
    """Per-bin estimates at one stage of the pipeline."""

    p_hat: np.ndarray = field(repr=False)
    sigma_hat: np.ndarray = field(repr=False)
    intervals: tuple = field(repr=False)
    stage: str = "raw"
    estimator: str = "multinomial_ros"
    N: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError("stage must be one of %s" % (STAGES,))
        p = np.asarray(self.p_hat, dtype=float)
        s = np.asarray(self.sigma_hat, dtype=float)
        if p.shape != s.shape or len(self.intervals) != p.size:
            raise ValueError("p_hat, sigma_hat, intervals must share length")
        if self.stage == "scaled":
            if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("scaled curves must be a normalized, "
                                 "non-negative proportion vector")
        object.__setattr__(self, "p_hat", p)
        object.__setattr__(self, "sigma_hat", s)

    @property
    def b(self):
        return self.p_hat.size


@dataclass(frozen=True)
class SigmaModel:
    """Parametric spread model: sqrt(p(1-p)/(A0 N + B0)) with a
    sample-size-dependent correction factor dividing the result."""

    A0: float = 10.51
    B0: float = 633.5
    psi_params: tuple = DEFAULT_PSI_PARAMS

    def __post_init__(self):
        if self.A0 <= 0.0 or self.B0 <= 0.0:
            raise ValueError("A0 and B0 must be positive")
        if len(self.psi_params) != 4:
            raise ValueError("psi_params must hold 4 constants")


DEFAULT_SIGMA_MODEL = SigmaModel()


def _intervals_from_normal(p, sigma, xi):
    z = normal_quantile(0.5 * (1.0 + xi))
    lo = np.clip(p - z * sigma, 0.0, 1.0)
    hi = np.clip(p + z * sigma, 0.0, 1.0)
    return tuple(Interval(float(a), float(b)) for a, b in zip(lo, hi))


def initial_curve(h, estimator="multinomial_ros", xi=0.95,
                  alpha_fn=None, theta_set=None):
    """Raw per-bin estimates from one of the starting estimators.

    Parameters
    ----------
    h : Histogram
    estimator : one of ESTIMATORS.
        multinomial_ros uses the uniform-prior multi-bin estimator;
        optimized_b2 treats each bin as its own two-outcome problem with
        the prior weight alpha_fn(N); discrete looks bin counts up in a
        precomputed admissible set.
    xi : confidence level for the per-bin intervals.
    alpha_fn : callable N -> alpha0, required for optimized_b2.
    theta_set : AdmissibleSet for N = h.N, required for discrete.
    """
    if estimator not in ESTIMATORS:
        raise ValueError("estimator must be one of %s" % (ESTIMATORS,))
    n = h.counts

    if estimator == "multinomial_ros":
        prior = PriorSpec(family="uniform", b=h.b)
        p, s = estimate_arrays(n, h.N, prior, xi)
        intervals = _intervals_from_normal(p, s, xi)
    elif estimator == "optimized_b2":
        if alpha_fn is None:
            raise ConfigError("optimized_b2 requires alpha_fn "
                              "(an optimized prior-weight curve)")
        a0 = float(alpha_fn(h.N))
        prior = PriorSpec(family="generalized_dirichlet", b=2, alpha0=a0)
        p, s = estimate_arrays(n, h.N, prior, xi)
        intervals = _intervals_from_normal(p, s, xi)
    else:
        if theta_set is None:
            raise ConfigError("discrete requires theta_set "
                              "(a self-consistent admissible set)")
        if theta_set.N != h.N:
            raise ConfigError("theta_set was built for N=%d, histogram has "
                              "N=%d" % (theta_set.N, h.N))
        thetas, sigmas = point_estimate_table(theta_set)
        table = discrete_interval_table(theta_set, xi)
        p = thetas[n]
        s = sigmas[n]
        intervals = tuple(Interval(float(a), float(b))
                          for a, b in zip(table.los[n], table.his[n]))

    return EstimateCurve(p_hat=p, sigma_hat=s, intervals=intervals,
                         stage="raw", estimator=estimator, N=h.N)


# relative floor for the baseline adjustment: after the smoothed minimum is
# subtracted, bins this far below the curve peak are indistinguishable from
# baseline residue and are set to exactly zero, so bins a density never
# reaches stay empty instead of carrying subtraction dust.  Residue from the
# min shift lands below 1e-4 of the peak while the faintest real structure a
# histogram of this size can carry sits above 1e-2 of the peak, so 1e-3
# splits the two regimes with a decade of margin on each side.
BASELINE_REL_FLOOR = 1e-3


def _subtract_baseline(sm):
    sm = sm - sm.min(axis=-1, keepdims=True)
    peak = sm.max(axis=-1, keepdims=True)
    sm = np.where(sm <= BASELINE_REL_FLOOR * peak, 0.0, sm)
    return np.clip(sm, 0.0, None)


def denoise_scale(curve, cfg=None, model=DEFAULT_SIGMA_MODEL, xi=0.95):
    """Smooth a raw curve, adjust its baseline, and rescale to total 1.

    The de-noiser runs for the sample-size-dependent cycle count (cfg only
    carries the window shape settings). The smoothed minimum is treated as
    baseline and subtracted, values within a tiny relative floor of that
    baseline are zeroed, and the result is rescaled to sum to 1. Spreads
    come from the parametric model with the correction factor applied.
    """
    if curve.stage != "raw":
        raise ValueError("denoise_scale expects a raw curve")
    if cfg is None:
        cfg = SmoothConfig()
    cycles = smooth_cycles_for_N(max(curve.N, 1))
    cfg = dataclasses.replace(cfg, cycles=cycles)

    sm = smooth(curve.p_hat, cfg)
    sm = _subtract_baseline(sm)
    total = sm.sum()
    if total <= 0.0:
        raise DegenerateInputError("curve is identically zero after "
                                   "baseline adjustment")
    p = sm / total
    s = sigma_corrected(p, curve.N, model)
    intervals = _intervals_from_normal(p, s, xi)
    return EstimateCurve(p_hat=p, sigma_hat=s, intervals=intervals,
                         stage="scaled", estimator=curve.estimator,
                         N=curve.N)


def sigma_est(p_smooth, N, model=DEFAULT_SIGMA_MODEL):
    """Parametric spread sqrt(p(1-p)/(A0 N + B0))."""
    p = np.asarray(p_smooth, dtype=float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("p_smooth must lie in [0,1]")
    out = np.sqrt(p * (1.0 - p) / (model.A0 * np.asarray(N) + model.B0))
    return float(out) if out.ndim == 0 else out


def psi(N, model=DEFAULT_SIGMA_MODEL):
    """Correction-factor curve at sample size N (dips below 1, floor ~0.45)."""
    n = np.asarray(N, dtype=float)
    if np.any(n < 1):
        raise ValueError("N must be >= 1")
    c0, c1, r1, r2 = model.psi_params
    out = c0 + c1 * np.exp(-r1 * n) * (1.0 - np.exp(-r2 * n))
    return float(out) if np.isscalar(N) else out


def sigma_corrected(p_smooth, N, model=DEFAULT_SIGMA_MODEL):
    """Parametric spread divided by the correction factor (always larger)."""
    return sigma_est(p_smooth, N, model) / psi(N, model)


def snr(p_hat, p_true):
    """Signal-to-error ratio: spread of the truth over the RMS error."""
    a = np.asarray(p_hat, dtype=float)
    t = np.asarray(p_true, dtype=float)
    if a.shape != t.shape or a.ndim != 1:
        raise ValueError("p_hat and p_true must be 1-D and equally long")
    signal = t.std()
    if signal == 0.0:
        raise DegenerateInputError("p_true is constant; S/N is undefined")
    noise = np.sqrt(np.mean((t - a) ** 2))
    if noise == 0.0:
        return float("inf")
    return float(signal / noise)


@dataclass(frozen=True)
class NEquivalent:
    """Equivalent sample size, flagged when read outside the curve range."""

    n_eq: float
    extrapolated: bool


def n_equivalent(target_snr, curve_of):
    """Sample size at which a measured S/N curve reaches a target.

    The curve is a sequence of (N, snr) pairs with strictly increasing
    snr; interpolation is linear in sqrt(N). Targets outside the measured
    range extrapolate the nearest segment and set the extrapolated flag.
    """
    pts = [(float(N), float(s)) for N, s in curve_of]
    if len(pts) < 2:
        raise ValueError("need at least two (N, snr) points")
    pts.sort(key=lambda q: q[0])
    x = np.sqrt([q[0] for q in pts])
    y = np.array([q[1] for q in pts])
    if np.any(np.diff(y) <= 0.0):
        raise ValueError("snr curve must be strictly increasing")

    t = float(target_snr)
    exact = np.nonzero(y == t)[0]
    if exact.size:
        return NEquivalent(n_eq=pts[exact[0]][0], extrapolated=False)
    if y[0] <= t <= y[-1]:
        root = float(np.interp(t, y, x))
        return NEquivalent(n_eq=root * root, extrapolated=False)
    if t < y[0]:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        root = x[0] + (t - y[0]) / slope
    else:
        slope = (y[-1] - y[-2]) / (x[-1] - x[-2])
        root = x[-1] + (t - y[-1]) / slope
    root = max(root, 0.0)
    return NEquivalent(n_eq=root * root, extrapolated=True)
