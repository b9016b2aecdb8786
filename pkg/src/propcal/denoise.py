"""Goodness-of-fit-weighted local-linear de-noiser.

Every full-length segment of length L in [L_min, L_max] that passes through
a point contributes that segment's fitted line value there. Contributions
are weighted by how well the segment fits the point (Q_point), how the
segment's residual spread compares with the global average (Q_seg), and
where in the segment the point sits (Q_pos, emphasizing terminal positions
so edge points are adequately represented), optionally downweighting long
segments by 1/sqrt(L).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .numerics import t_logpdf, t_sf

_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class SmoothConfig:
    """Settings for the local-linear de-noiser.

    Parameters
    ----------
    L_min, L_max : int
        Segment length range; every integer length in [L_min, L_max] is
        used (capped at the series length).
    W_T : float
        Positional exponent in Q_pos = 1/(x(1-x))^W_T. Values above 3
        degenerate and are rejected.
    tail_model : str
        "gaussian" or "student". The Student variant replaces the normal
        density and tail by Student-t equivalents with nu = L - 2, which
        is fairer to the short segments.
    length_adjustment : str
        "none" or "inverse_sqrt_L".
    cycles : int
        Number of times the smoother is applied.
    """

    L_min: int = 10
    L_max: int = 30
    W_T: float = 1.0
    tail_model: str = "student"
    length_adjustment: str = "inverse_sqrt_L"
    cycles: int = 1

    def __post_init__(self):
        if self.L_min < 3:
            raise ValueError("L_min must be >= 3 (a line needs spare points)")
        if self.L_max < self.L_min:
            raise ValueError("L_max must be >= L_min")
        if not (0.0 <= self.W_T <= 3.0):
            raise ValueError("W_T must lie in [0, 3]; larger values degenerate")
        if self.tail_model not in ("gaussian", "student"):
            raise ValueError("tail_model must be 'gaussian' or 'student'")
        if self.length_adjustment not in ("none", "inverse_sqrt_L"):
            raise ValueError("length_adjustment must be 'none' or 'inverse_sqrt_L'")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")


@dataclass(frozen=True)
class SegmentFit:
    """One least-squares line through a segment (diagnostic surface)."""

    start: int
    length: int
    slope: float
    intercept: float
    sigma_d: float


def fit_segments(y, L):
    """Least-squares lines through all full-length windows of length L.

    Returns
    -------
    (fitted, sigma_d) where fitted has shape (rows, T-L+1, L) holding the
    line values and sigma_d has shape (rows, T-L+1) holding each fit's RMS
    residual.
    """
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    win = sliding_window_view(Y, L, axis=1)  # (rows, M, L)
    t = np.arange(L, dtype=float)
    tc = t - (L - 1) / 2.0
    St = L * (L * L - 1.0) / 12.0
    mean = win.mean(axis=2)
    slope = win @ tc / St
    fitted = mean[:, :, None] + slope[:, :, None] * tc[None, None, :]
    resid = win - fitted
    sigma_d = np.sqrt(np.mean(resid * resid, axis=2))
    return fitted, sigma_d


def _one_cycle(Y, cfg):
    rows, T = Y.shape
    L_hi = min(cfg.L_max, T)
    lengths = range(cfg.L_min, L_hi + 1)

    # per-row floor keeps exact fits dominant without dividing by zero
    span = Y.max(axis=1) - Y.min(axis=1)
    floor = 1e-12 * span

    # pass 1: global goodness-of-fit benchmarks over every segment length
    # (only sigma_d is kept; line values are recomputed per length in pass 2
    # so peak memory stays one segment length, not all of them)
    sigma_by_L = {}
    for L in lengths:
        _, sigma_d = fit_segments(Y, L)
        sigma_by_L[L] = sigma_d
    sig = np.concatenate([s for s in sigma_by_L.values()], axis=1)
    sigma_ave = sig.mean(axis=1)
    sigma_rms = sig.std(axis=1)
    safe_rms = np.where(sigma_rms > 0.0, sigma_rms, 1.0)
    has_spread = (sigma_rms > 0.0)[:, None]

    num = np.zeros_like(Y)
    den = np.zeros_like(Y)
    for L in lengths:
        fitted, _ = fit_segments(Y, L)
        sigma_d = sigma_by_L[L]
        M = T - L + 1
        sd_eff = np.maximum(sigma_d, floor[:, None])  # (rows, M)
        win = sliding_window_view(Y, L, axis=1)
        z = (win - fitted) / sd_eff[:, :, None]
        ratio = (sigma_d - sigma_ave[:, None]) / safe_rms[:, None]

        nu = L - 2
        if cfg.tail_model == "student":
            q_point = np.exp(t_logpdf(z, float(nu))) / sd_eff[:, :, None]
            q_seg = np.where(has_spread, t_sf(ratio, float(nu)), 0.5)
        else:
            q_point = np.exp(-0.5 * z * z) / (sd_eff[:, :, None] * _SQRT2PI)
            q_seg = np.where(has_spread, 0.5 * (1.0 - erf(ratio / _SQRT2)), 0.5)

        pos = np.arange(1, L + 1, dtype=float)
        x = pos / (L + 1.0)
        q_pos = (x * (1.0 - x)) ** (-cfg.W_T)
        adj = 1.0 / np.sqrt(L) if cfg.length_adjustment == "inverse_sqrt_L" else 1.0

        w = q_point * q_seg[:, :, None] * q_pos[None, None, :] * adj
        wf = w * fitted
        # point i = segment start + t, so for fixed t the contributions land
        # on the contiguous slice [t, t+M)
        for t in range(L):
            num[:, t:t + M] += wf[:, :, t]
            den[:, t:t + M] += w[:, :, t]

    return num / den


def smooth_many(Y, config):
    """Apply the de-noiser to each row of a 2-D array.

    Rows are independent series; all segment arithmetic is batched across
    rows, which is what makes ensemble smoothing affordable.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("smooth_many expects a 2-D array (rows = series)")
    rows, T = Y.shape
    if T < config.L_min:
        raise ValueError(
            "series length %d is shorter than L_min = %d" % (T, config.L_min)
        )
    out = Y.copy()
    # constant rows are fixed points; skip them so the floor stays meaningful
    flat = (Y.max(axis=1) - Y.min(axis=1)) == 0.0
    live = ~flat
    if live.any():
        work = out[live]
        for _ in range(config.cycles):
            work = _one_cycle(work, config)
        out[live] = work
    return out


def smooth(series, config):
    """De-noise one series; see `smooth_many` for the batched form."""
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("smooth expects a 1-D series")
    return smooth_many(y[None, :], config)[0]


def smooth_cycles_for_N(N):
    """Smoothing-cycle schedule as a function of sample size.

    Small samples are noisiest and get 3 cycles; the count steps down to 2
    then 1 as N grows and the raw histogram is already informative.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if N < 400:
        return 3
    if N < 4000:
        return 2
    return 1
