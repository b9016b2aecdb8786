"""Shared numerical kernels.

Normal and Beta quantiles are implemented here (rational approximation plus
Newton polish; continued fraction plus safeguarded Newton) rather than taken
from a platform library, so fixed-seed artifacts are byte-stable across
library versions.  scipy supplies only the erf/gammaln primitives.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, gammaln

from .errors import NumericError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# -----------------------------------------------------------------------
# standard normal
# -----------------------------------------------------------------------


def normal_cdf(x):
    """Standard normal CDF; accepts scalars or arrays."""
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=float) / _SQRT2))


# Rational approximation coefficients (relative error ~1e-9 before polish).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _normal_quantile_raw(q):
    """Vectorized rational approximation, no polish. q strictly inside (0,1)."""
    q = np.asarray(q, dtype=float)
    x = np.empty_like(q)

    lo = q < _P_LOW
    hi = q > 1.0 - _P_LOW
    mid = ~(lo | hi)

    if np.any(mid):
        r = q[mid] - 0.5
        s = r * r
        num = ((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]
        den = ((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0
        x[mid] = num * r / den

    for mask, tail_q, sign in ((lo, q[lo], 1.0), (hi, 1.0 - q[hi], -1.0)):
        if not np.any(mask):
            continue
        t = np.sqrt(-2.0 * np.log(tail_q))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        # num/den is negative here, which is the correct sign for the lower tail
        x[mask] = sign * num / den

    return x


def normal_quantile(q):
    """Inverse standard normal CDF with |Phi(result) - q| < 1e-12.

    One Newton step on top of the rational approximation; exact 0 at q=0.5.
    """
    if not (0.0 < q < 1.0):
        raise ValueError("normal_quantile: q must lie strictly in (0,1), got %r" % (q,))
    if q == 0.5:
        return 0.0
    x = float(_normal_quantile_raw(q))
    err = 0.5 * (1.0 + math.erf(x / _SQRT2)) - q
    pdf = math.exp(-0.5 * x * x) / _SQRT2PI
    if pdf > 0.0:
        x -= err / pdf
    return x


def normal_quantile_vec(q):
    """Vectorized inverse normal CDF (rational approximation + one Newton step)."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise ValueError("normal_quantile_vec: all q must lie strictly in (0,1)")
    x = _normal_quantile_raw(q)
    err = 0.5 * (1.0 + erf(x / _SQRT2)) - q
    pdf = np.exp(-0.5 * x * x) / _SQRT2PI
    np.divide(err, pdf, out=err, where=pdf > 0.0)
    x -= np.where(pdf > 0.0, err, 0.0)
    x[q == 0.5] = 0.0
    return x


# -----------------------------------------------------------------------
# regularized incomplete beta and its inverse
# -----------------------------------------------------------------------

_FPMIN = 1e-300
_CF_EPS = 1e-15
_CF_MAXITER = 2000


def log_beta(a, b):
    """log of the complete Beta function, vectorized."""
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz), vectorized.

    All inputs must already satisfy x < (a+1)/(a+b+2) for good convergence;
    callers arrange that via the symmetry transform.
    """
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0

    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
    d = 1.0 / d
    h = d.copy()

    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, _CF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
        c = 1.0 + aa / c
        np.copyto(c, _FPMIN, where=np.abs(c) < _FPMIN)
        d = 1.0 / d
        h *= d * c

        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
        c = 1.0 + aa / c
        np.copyto(c, _FPMIN, where=np.abs(c) < _FPMIN)
        d = 1.0 / d
        delta = d * c
        h *= delta

        # late iterations accept a looser tolerance so a lane that stalls at
        # a few ulp above the target cannot fail the whole batch
        eps = _CF_EPS if m <= 500 else 1e-12
        done |= np.abs(delta - 1.0) < eps
        if done.all():
            break
    else:
        n_bad = int((~done).sum())
        raise NumericError(
            "incomplete beta continued fraction: %d of %d lanes unconverged "
            "after %d iterations" % (n_bad, done.size, _CF_MAXITER),
            diagnostics={"unconverged": n_bad, "size": done.size},
        )
    return h


def betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b), vectorized with broadcasting.

    Parameters
    ----------
    a, b : positive shape parameters.
    x : evaluation points in [0, 1].
    """
    a, b, x = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    )
    scalar = a.ndim == 0
    shape = a.shape
    a = np.atleast_1d(a).ravel()
    b = np.atleast_1d(b).ravel()
    x = np.atleast_1d(x).ravel()
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise ValueError("betainc_reg: shape parameters must be positive")
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("betainc_reg: x must lie in [0, 1]")

    out = np.empty_like(x)
    at_lo = x <= 0.0
    at_hi = x >= 1.0
    out[at_lo] = 0.0
    out[at_hi] = 1.0

    interior = ~(at_lo | at_hi)
    if np.any(interior):
        ai = a[interior]
        bi = b[interior]
        xi = x[interior]
        # symmetry transform keeps the continued fraction in its fast region
        swap = xi >= (ai + 1.0) / (ai + bi + 2.0)
        aa = np.where(swap, bi, ai)
        bb = np.where(swap, ai, bi)
        xx = np.where(swap, 1.0 - xi, xi)

        front = np.exp(
            aa * np.log(xx) + bb * np.log1p(-xx) - log_beta(aa, bb)
        ) / aa
        val = front * _betacf(aa, bb, xx)
        out[interior] = np.where(swap, 1.0 - val, val)

    np.clip(out, 0.0, 1.0, out=out)
    if scalar:
        return float(out[0])
    return out.reshape(shape)


def _beta_pdf(a, b, x, logbeta):
    """Beta density, zero off (0,1); inputs are aligned arrays."""
    pdf = np.zeros_like(x)
    ok = (x > 0.0) & (x < 1.0)
    if np.any(ok):
        pdf[ok] = np.exp(
            (a[ok] - 1.0) * np.log(x[ok])
            + (b[ok] - 1.0) * np.log1p(-x[ok])
            - logbeta[ok]
        )
    return pdf


def beta_quantile(q, a, b, tol=1e-10, maxiter=120):
    """Inverse regularized incomplete beta, vectorized with broadcasting.

    Safeguarded Newton iteration on I_x(a,b) - q with a bisection fallback;
    converges to `tol` absolute in x (and the CDF round-trip is good to
    ~1e-9 for moderate shapes).  Exact 0/1 are returned at q = 0/1.
    """
    q, a, b = np.broadcast_arrays(
        np.asarray(q, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    scalar = q.ndim == 0
    shape = q.shape
    q = np.atleast_1d(q).ravel().copy()
    a = np.atleast_1d(a).ravel()
    b = np.atleast_1d(b).ravel()
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise ValueError("beta_quantile: shape parameters must be positive")
    if np.any((q < 0.0) | (q > 1.0)):
        raise ValueError("beta_quantile: q must lie in [0, 1]")

    out = np.empty_like(q)
    out[q == 0.0] = 0.0
    out[q == 1.0] = 1.0
    active = (q > 0.0) & (q < 1.0)
    if not np.any(active):
        return float(out[0]) if scalar else out.reshape(shape)

    qa = q[active]
    aa = a[active]
    ba = b[active]
    logbeta = log_beta(aa, ba)

    # starting guess: normal approximation through the Wilson-Hilferty
    # transform, falling back to the mean when it misbehaves
    y = normal_quantile_vec(qa)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        al = 1.0 / (2.0 * aa - 1.0)
        be = 1.0 / (2.0 * ba - 1.0)
        h = 2.0 / (al + be)
        w = y * np.sqrt(h + (y * y - 3.0) / 6.0) / h - (be - al) * (
            (y * y - 3.0) / 6.0 + 5.0 / 6.0 - 2.0 / (3.0 * h)
        )
        x = aa / (aa + ba * np.exp(2.0 * w))
    bad = ~np.isfinite(x) | (x <= 0.0) | (x >= 1.0)
    x[bad] = (aa[bad] / (aa[bad] + ba[bad]))

    lo = np.zeros_like(x)
    hi = np.ones_like(x)

    idx = np.arange(x.size)
    for _ in range(maxiter):
        f = betainc_reg(aa[idx], ba[idx], x[idx]) - qa[idx]
        pdf = _beta_pdf(aa[idx], ba[idx], x[idx], logbeta[idx])

        # maintain the bracket
        neg = f < 0.0
        lo[idx[neg]] = x[idx[neg]]
        hi[idx[~neg]] = x[idx[~neg]]

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = f / pdf
        cand = x[idx] - step
        inside = np.isfinite(cand) & (cand > lo[idx]) & (cand < hi[idx])
        cand = np.where(inside, cand, 0.5 * (lo[idx] + hi[idx]))

        moved = np.abs(cand - x[idx])
        x[idx] = cand
        still = (moved > tol) & ((hi[idx] - lo[idx]) > tol)
        idx = idx[still]
        if idx.size == 0:
            break
    else:
        raise NumericError(
            "beta_quantile: %d lanes unconverged after %d iterations"
            % (idx.size, maxiter),
            diagnostics={"unconverged": int(idx.size), "a": aa[idx][:5].tolist(),
                         "b": ba[idx][:5].tolist(), "q": qa[idx][:5].tolist()},
        )

    out[active] = x
    if scalar:
        return float(out[0])
    return out.reshape(shape)


# -----------------------------------------------------------------------
# binomial log-pmf
# -----------------------------------------------------------------------


def log_binom_coeff(N, n):
    """log C(N, n) via gammaln; N, n broadcastable arrays or scalars."""
    N = np.asarray(N, dtype=float)
    n = np.asarray(n, dtype=float)
    return gammaln(N + 1.0) - gammaln(n + 1.0) - gammaln(N - n + 1.0)


def binom_logpmf(n, N, p):
    """log Binomial(N, p) pmf at n; p strictly inside (0,1)."""
    n = np.asarray(n, dtype=float)
    return log_binom_coeff(N, n) + n * math.log(p) + (N - n) * math.log1p(-p)


# -----------------------------------------------------------------------
# Student-t helpers (used by the de-noiser's finite-sample weights)
# -----------------------------------------------------------------------


def t_logpdf(z, nu):
    """log density of Student's t with nu degrees of freedom.

    The nu-dependent normalization is kept because callers compare weights
    across different nu.
    """
    z = np.asarray(z, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return (
        gammaln((nu + 1.0) / 2.0)
        - gammaln(nu / 2.0)
        - 0.5 * np.log(nu * math.pi)
        - ((nu + 1.0) / 2.0) * np.log1p(z * z / nu)
    )


def t_sf(z, nu):
    """Upper tail probability of Student's t, via the incomplete beta."""
    z = np.asarray(z, dtype=float)
    nu = np.asarray(nu, dtype=float)
    z, nu = np.broadcast_arrays(z, nu)
    scalar = z.ndim == 0
    z = np.atleast_1d(z).astype(float)
    nu = np.atleast_1d(nu).astype(float)
    xbeta = nu / (nu + z * z)
    half = 0.5 * betainc_reg(nu / 2.0, 0.5, xbeta)
    out = np.where(z >= 0.0, half, 1.0 - half)
    out[z == 0.0] = 0.5
    if scalar:
        return float(out[0])
    return out
