"""Point and variance estimators for a histogram-bin proportion.

Closed-form Bayes estimators (uniform, Jeffreys, and the generalized
Dirichlet family that interpolates between them), the classical Wald,
Wilson, and Agresti-Coull comparators, and equal-tailed intervals built
from either the Normal approximation or the exact Beta posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .numerics import beta_quantile, normal_quantile


@dataclass(frozen=True)
class PriorSpec:
    """Estimator family plus the histogram bin count it conditions on.

    Parameters
    ----------
    family : str
        One of the keys of `FAMILIES`.
    b : int
        Number of histogram bins (>= 2). For plain binomial work b = 2.
    alpha0 : float or None
        Concentration parameter, required when family is
        "generalized_dirichlet" and ignored otherwise.
    """

    family: str
    b: int = 2
    alpha0: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                "unknown estimator family %r (choose from %s)"
                % (self.family, ", ".join(sorted(FAMILIES)))
            )
        if self.b < 2:
            raise ValueError("PriorSpec: b must be >= 2, got %d" % self.b)
        if self.family == "generalized_dirichlet":
            if self.alpha0 is None or not self.alpha0 > 0.0:
                raise ValueError(
                    "generalized_dirichlet requires alpha0 > 0, got %r" % (self.alpha0,)
                )

    @property
    def beta0(self):
        """Matching second shape parameter, (b - 1) * alpha0."""
        a0 = self.effective_alpha0
        if a0 is None:
            raise ValueError("family %r has no conjugate Beta shape" % self.family)
        return (self.b - 1) * a0

    @property
    def effective_alpha0(self):
        """alpha0 for the conjugate families, None for the classical ones."""
        if self.family == "uniform":
            return 1.0
        if self.family == "jeffreys":
            return 0.5
        if self.family == "generalized_dirichlet":
            return float(self.alpha0)
        return None


@dataclass(frozen=True)
class PosteriorSpec:
    """Posterior summarizer: interval kind plus confidence level xi."""

    kind: str  # "normal", "beta", or "discrete"
    xi: float = 0.95

    def __post_init__(self):
        if self.kind not in ("normal", "beta", "discrete"):
            raise ValueError("unknown posterior kind %r" % (self.kind,))
        if not (0.0 < self.xi < 1.0):
            raise ValueError("xi must lie strictly in (0,1), got %r" % (self.xi,))


@dataclass(frozen=True)
class PointEstimate:
    p_hat: float
    sigma_hat: float
    n: int
    N: int


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float


def _gdir_arrays(n, N, b, alpha0):
    # p_hat = (n + a0) / (N + b a0), sigma^2 = p(1-p) / (N + 1 + b a0)
    n = np.asarray(n, dtype=float)
    p = (n + alpha0) / (N + b * alpha0)
    var = p * (1.0 - p) / (N + 1.0 + b * alpha0)
    return p, np.sqrt(var)


def _uniform_arrays(n, N, b, alpha0, xi):
    return _gdir_arrays(n, N, b, 1.0)


def _jeffreys_arrays(n, N, b, alpha0, xi):
    return _gdir_arrays(n, N, b, 0.5)


def _generalized_dirichlet_arrays(n, N, b, alpha0, xi):
    return _gdir_arrays(n, N, b, alpha0)


def _wald_arrays(n, N, b, alpha0, xi):
    if N == 0:
        raise DegenerateInputError("Wald estimator is 0/0 at N = 0")
    n = np.asarray(n, dtype=float)
    p = n / N
    return p, np.sqrt(p * (1.0 - p) / N)


def _wilson_arrays(n, N, b, alpha0, xi):
    # sigma_hat is half-width / z so the Normal interval reconstruction
    # reproduces the textbook Wilson interval exactly
    z = normal_quantile(0.5 * (1.0 + xi))
    n = np.asarray(n, dtype=float)
    denom = N + z * z
    center = (n + 0.5 * z * z) / denom
    spread = np.zeros_like(n) if N == 0 else n * (N - n) / N
    sigma = np.sqrt(spread + 0.25 * z * z) / denom
    return center, sigma


def _agresti_coull_arrays(n, N, b, alpha0, xi):
    # add z^2/2 pseudo-successes and z^2 pseudo-trials
    z = normal_quantile(0.5 * (1.0 + xi))
    n = np.asarray(n, dtype=float)
    N_t = N + z * z
    p = (n + 0.5 * z * z) / N_t
    return p, np.sqrt(p * (1.0 - p) / N_t)


FAMILIES = {
    "uniform": _uniform_arrays,
    "jeffreys": _jeffreys_arrays,
    "generalized_dirichlet": _generalized_dirichlet_arrays,
    "wald": _wald_arrays,
    "wilson": _wilson_arrays,
    "agresti_coull": _agresti_coull_arrays,
}


def estimate_arrays(n, N, prior, xi=0.95):
    """Vectorized (p_hat, sigma_hat) for an array of counts n.

    Parameters
    ----------
    n : array_like of int
        Observed counts, each in [0, N].
    N : int
        Sample size.
    prior : PriorSpec
    xi : float
        Confidence level; only the Wilson and Agresti-Coull comparators
        depend on it (their pseudo-counts involve the z quantile).

    Returns
    -------
    (p_hat, sigma_hat) : pair of float arrays shaped like n.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or np.any(n_arr > N) or N < 0:
        raise ValueError("counts must satisfy 0 <= n <= N")
    fn = FAMILIES[prior.family]
    return fn(n_arr, N, prior.b, prior.alpha0, xi)


def point_estimate(n, N, prior, xi=0.95):
    """Point and spread estimate for one observed count.

    Parameters
    ----------
    n, N : int
        Observed successes and sample size, 0 <= n <= N.
    prior : PriorSpec
    xi : float
        Confidence level used by the Wilson and Agresti-Coull families.

    Returns
    -------
    PointEstimate
    """
    p, s = estimate_arrays(np.asarray([n]), N, prior, xi)
    return PointEstimate(p_hat=float(p[0]), sigma_hat=float(s[0]), n=int(n), N=int(N))


def interval_normal(est, xi):
    """Equal-tailed interval from the Normal approximation, clipped to [0,1]."""
    if not (0.0 < xi < 1.0):
        raise ValueError("xi must lie strictly in (0,1)")
    z = normal_quantile(0.5 * (1.0 + xi))
    lo = max(0.0, est.p_hat - z * est.sigma_hat)
    hi = min(1.0, est.p_hat + z * est.sigma_hat)
    return Interval(lo, hi)


def interval_beta(n, N, alpha0, beta0, xi):
    """Equal-tailed interval from the exact Beta posterior.

    The posterior is Beta(n + alpha0, N - n + beta0); lo and hi are its
    (1-xi)/2 and (1+xi)/2 quantiles, each to 1e-10 absolute tolerance.
    """
    if not (0.0 < xi < 1.0):
        raise ValueError("xi must lie strictly in (0,1)")
    a = n + alpha0
    bb = N - n + beta0
    if not (a > 0.0 and bb > 0.0):
        raise ValueError("posterior shapes must be positive, got (%g, %g)" % (a, bb))
    lo = beta_quantile(0.5 * (1.0 - xi), a, bb)
    hi = beta_quantile(0.5 * (1.0 + xi), a, bb)
    return Interval(float(lo), float(hi))
