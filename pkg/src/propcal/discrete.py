"""Discrete-domain estimators over admissible value sets.

After N observations a bin proportion can only be reported as one of N+1
values. This module builds that admissible set self-consistently: each
theta_j is the midpoint of the equal-tailed interval that the rectangular
posterior assigns to outcome n = j, iterated to a fixed point. Rectangle
j spans [phi_j, phi_{j+1}) around theta_j, and prior weight comes either
from uniform heights or from the combinatorial occupancy prior p_stat.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParseError
from .proportions import Interval, PointEstimate

PRIORS = ("uniform_width", "combinatorial")


def p_stat(j, N, b):
    """Combinatorial prior probability that a bin holds exactly j of N.

    Computed by the recursion p_stat(0) = (b-1)/(N+b-1),
    p_stat(j+1) = p_stat(j) * (N-j)/(N-j+b-2); constant in j at b = 2.
    """
    if not (0 <= j <= N):
        raise ValueError("need 0 <= j <= N")
    if b < 2:
        raise ValueError("b must be >= 2")
    v = (b - 1.0) / (N + b - 1.0)
    for i in range(j):
        v *= (N - i) / (N - i + b - 2.0)
    return v


def p_stat_all(N, b):
    """Vector of p_stat(j) for j = 0..N (single pass of the recursion)."""
    out = np.empty(N + 1)
    v = (b - 1.0) / (N + b - 1.0)
    out[0] = v
    for i in range(N):
        v *= (N - i) / (N - i + b - 2.0)
        out[i + 1] = v
    return out


@dataclass(frozen=True, eq=False)
class AdmissibleSet:
    """Admissible values theta_0..theta_N with rectangle geometry and prior.

    phi has length N+2 with phi_0 = 0, phi_{N+1} = 1 and interior midpoints
    phi_j = (theta_{j-1} + theta_j)/2; W_j = phi_{j+1} - phi_j sums to 1 by
    telescoping; pi holds the normalized prior mass of each admissible value
    (zone width, optionally tilted by the occupancy weights).
    """

    N: int
    b: int
    xi: float
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    pi: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = self.theta
        if t.shape != (self.N + 1,):
            raise ValueError("theta must have N+1 entries")
        if np.any(t <= 0.0) or np.any(t >= 1.0) or np.any(np.diff(t) <= 0.0):
            raise ValueError("theta must be strictly increasing inside (0,1)")
        if self.phi[0] != 0.0 or self.phi[-1] != 1.0:
            raise ValueError("phi must start at 0 and end at 1")
        if abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError("prior weights must be normalized")


def _prior_masses(W, N, b, prior):
    # a value's prior mass is its zone width, tilted by the occupancy
    # weight when the multinomial fill statistics are taken into account
    if prior == "uniform_width":
        raw = W
    elif prior == "combinatorial":
        raw = W * p_stat_all(N, b)
    else:
        raise ValueError("prior must be one of %s" % (PRIORS,))
    return raw / raw.sum()


def assemble_set(theta, b, xi, prior):
    """AdmissibleSet from raw theta values (geometry and prior derived)."""
    theta = np.asarray(theta, dtype=float)
    N = theta.size - 1
    phi = np.empty(N + 2)
    phi[0] = 0.0
    phi[-1] = 1.0
    phi[1:-1] = 0.5 * (theta[:-1] + theta[1:])
    W = np.diff(phi)
    pi = _prior_masses(W, N, b, prior)
    return AdmissibleSet(N=N, b=b, xi=xi, theta=theta, phi=phi, W=W, pi=pi)


@dataclass(frozen=True, eq=False)
class DiscretePosterior:
    """Rectangular posterior for one observed count."""

    n: int
    phi: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    heights: np.ndarray = field(repr=False)

    def __post_init__(self):
        area = float(np.sum(self.heights * self.W))
        if abs(area - 1.0) > 1e-12:
            raise ValueError("posterior area must be 1, got %.17g" % area)


def _heights_core(theta, W, pi):
    """Normalized posterior heights for every outcome n (rows) at once.

    Row n carries heights proportional to the posterior mass of each value,
    pi_j * theta_j^n (1-theta_j)^(N-n), rescaled so the rectangle areas sum
    to 1. Worked in log space so extreme counts cannot underflow.
    """
    N = theta.size - 1
    n = np.arange(N + 1, dtype=float)[:, None]
    logh = np.log(pi)[None, :] + n * np.log(theta)[None, :] \
        + (N - n) * np.log1p(-theta)[None, :]
    logh -= logh.max(axis=1, keepdims=True)
    H = np.exp(logh)
    area = (H * W[None, :]).sum(axis=1)
    return H / area[:, None]


def _height_matrix(aset):
    return _heights_core(aset.theta, aset.W, aset.pi)


def build_posterior(n, aset):
    """Rectangular posterior over the admissible set for observed count n.

    Heights are proportional to pi_j * theta_j^n (1-theta_j)^(N-n) with the
    total rectangle area normalized to 1.
    """
    if not (0 <= n <= aset.N):
        raise ValueError("need 0 <= n <= N")
    H = _height_matrix(aset)
    return DiscretePosterior(n=int(n), phi=aset.phi.copy(), W=aset.W.copy(),
                             heights=H[n])


def discrete_interval(post, xi):
    """Equal-tailed interval of a rectangular posterior.

    Accumulates area from each end to (1-xi)/2, splitting the straddling
    rectangle by linear interpolation.
    """
    if not (0.0 < xi < 1.0):
        raise ValueError("xi must lie strictly in (0,1)")
    t = 0.5 * (1.0 - xi)
    areas = post.heights * post.W

    cum = 0.0
    lo = 0.0
    for j in range(areas.size):
        if post.heights[j] > 0.0 and cum + areas[j] >= t:
            lo = post.phi[j] + (t - cum) / post.heights[j]
            break
        cum += areas[j]

    cum = 0.0
    hi = 1.0
    for j in range(areas.size - 1, -1, -1):
        if post.heights[j] > 0.0 and cum + areas[j] >= t:
            hi = post.phi[j + 1] - (t - cum) / post.heights[j]
            break
        cum += areas[j]

    return Interval(float(lo), float(hi))


def _intervals_core(theta, phi, W, pi, xi):
    """Equal-tailed interval endpoints for every outcome, vectorized."""
    t = 0.5 * (1.0 - xi)
    H = _heights_core(theta, W, pi)
    A = H * W[None, :]
    N1 = theta.size

    C = np.cumsum(A, axis=1)
    kL = (C < t).sum(axis=1)
    kL = np.minimum(kL, N1 - 1)
    rows = np.arange(N1)
    prev = np.where(kL > 0, C[rows, np.maximum(kL - 1, 0)], 0.0)
    lo = phi[kL] + (t - prev) / H[rows, kL]

    Cr = np.cumsum(A[:, ::-1], axis=1)
    kr = (Cr < t).sum(axis=1)
    kr = np.minimum(kr, N1 - 1)
    kR = N1 - 1 - kr
    prev_r = np.where(kr > 0, Cr[rows, np.maximum(kr - 1, 0)], 0.0)
    hi = phi[kR + 1] - (t - prev_r) / H[rows, kR]

    return lo, hi


def _intervals_all_n(aset, xi):
    return _intervals_core(aset.theta, aset.phi, aset.W, aset.pi, xi)


def self_consistent_thetas(N, b, xi, prior="uniform_width",
                           tol=1e-9, max_iter=500):
    """Admissible set whose values are their own interval midpoints.

    theta_j starts at j/N (with the end values nudged inside (0,1)) and is
    replaced by the midpoint of outcome j's equal-tailed interval until the
    largest move falls below `tol`. If the residual refuses to shrink for
    50 straight iterations the update switches to half steps.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if prior not in PRIORS:
        raise ValueError("prior must be one of %s" % (PRIORS,))

    theta = np.arange(N + 1, dtype=float) / N
    pad = 1.0 / (2.0 * (N + 1.0))
    theta[0] = pad
    theta[-1] = 1.0 - pad

    def broken(t):
        return t[0] <= 0.0 or t[-1] >= 1.0 or np.any(np.diff(t) <= 0.0)

    damp = 1.0
    worse_streak = 0
    prev_resid = np.inf
    for _ in range(max_iter):
        phi = np.empty(N + 2)
        phi[0] = 0.0
        phi[-1] = 1.0
        phi[1:-1] = 0.5 * (theta[:-1] + theta[1:])
        W = np.diff(phi)
        pi = _prior_masses(W, N, b, prior)
        lo, hi = _intervals_core(theta, phi, W, pi, xi)
        target = 0.5 * (lo + hi)
        new = theta + damp * (target - theta)
        if broken(new):
            # an overshoot can cross neighboring values; retry at half step
            # before declaring the set degenerate
            new = theta + 0.5 * damp * (target - theta)
            if broken(new):
                raise NumericError(
                    "admissible set degenerated for N=%d b=%d xi=%g prior=%s"
                    % (N, b, xi, prior),
                    diagnostics={"last_theta": theta.tolist(),
                                 "residual": prev_resid},
                )
        resid = float(np.max(np.abs(new - theta)))
        theta = new
        if resid < tol:
            return assemble_set(theta, b, xi, prior)
        if resid >= prev_resid:
            worse_streak += 1
            if worse_streak > 50:
                damp = 0.5
        else:
            worse_streak = 0
        prev_resid = resid

    raise NumericError(
        "admissible set did not converge for N=%d b=%d xi=%g" % (N, b, xi),
        diagnostics={"last_theta": theta.tolist(), "residual": prev_resid},
    )


def discrete_point_estimate(n, aset):
    """Point estimate theta_n with spread from the posterior about it.

    The variance is the posterior's second central moment about theta_n,
    integrated rectangle by rectangle.
    """
    if not (0 <= n <= aset.N):
        raise ValueError("need 0 <= n <= N")
    H = _height_matrix(aset)
    h = H[n]
    c = aset.theta[n]
    up = (aset.phi[1:] - c) ** 3
    dn = (aset.phi[:-1] - c) ** 3
    var = float(np.sum(h * (up - dn)) / 3.0)
    return PointEstimate(p_hat=float(c), sigma_hat=float(np.sqrt(max(var, 0.0))),
                         n=int(n), N=int(aset.N))


def point_estimate_table(aset):
    """Point estimates and spreads for every outcome at once.

    Returns (p_hat, sigma_hat) arrays of length N+1; row n matches
    discrete_point_estimate(n, aset).
    """
    H = _height_matrix(aset)
    c = aset.theta[:, None]
    up = (aset.phi[None, 1:] - c) ** 3
    dn = (aset.phi[None, :-1] - c) ** 3
    var = np.maximum(np.sum(H * (up - dn), axis=1) / 3.0, 0.0)
    return aset.theta.copy(), np.sqrt(var)


def discrete_interval_table(aset, xi=None):
    """IntervalTable over all outcomes, for use with the coverage module."""
    from .coverage import IntervalTable

    use_xi = aset.xi if xi is None else xi
    lo, hi = _intervals_all_n(aset, use_xi)
    lo = np.maximum(0.0, lo)
    hi = np.minimum(1.0, hi)
    return IntervalTable(N=aset.N, xi=use_xi, los=lo, his=hi)


def expected_bins_table(N, b, counts=range(12)):
    """Expected number of bins holding exactly c observations, rounded.

    Under the combinatorial occupancy prior the expected bin count for
    occupancy c is b * p_stat(c); the unrounded values sum to b over all
    c = 0..N.
    """
    ps = p_stat_all(N, b)
    return [int(round(b * ps[c])) if c <= N else 0 for c in counts]


# -----------------------------------------------------------------------
# persistent cache of self-consistent sets
# -----------------------------------------------------------------------

_CACHE_HEADER = ["N", "b", "xi", "prior", "j", "theta_j", "pi_j"]


def save_admissible_set(aset, prior, path):
    """Write one admissible set as CSV rows keyed by (N, b, xi, prior)."""
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh)
        w.writerow(_CACHE_HEADER)
        for j in range(aset.N + 1):
            w.writerow([aset.N, aset.b, "%.17g" % aset.xi, prior, j,
                        "%.17g" % aset.theta[j], "%.17g" % aset.pi[j]])


def load_admissible_set(path):
    """Reload a cached set and validate it with one fixed-point iteration.

    Returns (aset, prior). A set whose thetas move by more than 1e-8 in one
    iteration is stale (or corrupt) and raises NumericError; malformed rows
    raise ParseError with the offending line number.
    """
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != _CACHE_HEADER:
            raise ParseError("bad cache header %r" % (header,), line=1)
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), row[3],
                             int(row[4]), float(row[5]), float(row[6])))
            except (ValueError, IndexError):
                raise ParseError("malformed cache row", line=lineno)
    if not rows:
        raise ParseError("empty cache file", line=1)
    N, b, xi, prior = rows[0][0], rows[0][1], rows[0][2], rows[0][3]
    if len(rows) != N + 1:
        raise ParseError("expected %d rows, found %d" % (N + 1, len(rows)), line=2)
    theta = np.empty(N + 1)
    for (_, _, _, _, j, th, _) in rows:
        theta[j] = th
    aset = assemble_set(theta, b, xi, prior)

    lo, hi = _intervals_all_n(aset, xi)
    move = float(np.max(np.abs(0.5 * (lo + hi) - theta)))
    if move > 1e-8:
        raise NumericError("cached set fails fixed-point validation",
                           diagnostics={"move": move, "path": str(path)})
    return aset, prior


def cache_filename(N, b, xi, prior):
    return "theta_N%d_b%d_xi%s_%s.csv" % (N, b, ("%g" % xi).replace(".", "p"), prior)


def cached_admissible_set(N, b, xi, prior="uniform_width", cache_dir=None):
    """Self-consistent set, loaded from cache_dir when possible.

    Stale or unreadable cache entries are rebuilt and rewritten.
    """
    if cache_dir is None:
        return self_consistent_thetas(N, b, xi, prior)
    path = os.path.join(cache_dir, cache_filename(N, b, xi, prior))
    if os.path.exists(path):
        try:
            aset, _ = load_admissible_set(path)
            return aset
        except (ParseError, NumericError, ValueError):
            pass
    aset = self_consistent_thetas(N, b, xi, prior)
    os.makedirs(cache_dir, exist_ok=True)
    save_admissible_set(aset, prior, path)
    return aset
