"""Calibration of the parametric spread model for smoothed curves.

Smoothed histograms fluctuate far less than the raw binomial estimate, so
their spread is modelled parametrically as

    sigma_est,i = sqrt(p_i (1 - p_i) / (A0 N + B0)).

The constants are fitted so that sigma_est tracks the Monte Carlo spread
sigma_MC,i of smoothed ensembles across several trial densities and sample
sizes. A residual sample-size-dependent bias remains; it is measured by
the per-bin ratio

    rho_i = <sigma_est,i>_MC / sigma_MC,i,

pooled over densities and bins at each N into a mean mu_rho(N) and spread
sigma_rho(N). The 99% lower band rho_0.99(N) = mu_rho - 2.576 sigma_rho is
then summarised by the smooth four-constant curve psi(N); dividing
sigma_est by psi(N) gives a conservative corrected spread.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateInputError, NumericError
from .mclab import run_ensemble
from .pipeline import DEFAULT_PSI_PARAMS, SigmaModel, psi

# Lower 99% band multiplier for the pooled rho distribution.
Z99 = 2.576

# Desk-scale calibration sample sizes. The grid spans the regime where the
# correction factor varies the most and brackets its dip (the 135, 180 and
# 270 points straddle the location of the rho_0.99 extremum).
CALIBRATION_GRID = (40, 80, 135, 180, 270, 500, 1000, 2000)

DEFAULT_START = (10.0, 600.0)


@dataclass(frozen=True, eq=False)
class RhoStats:
    """Per-(density, N) and pooled summaries of the spread ratio rho.

    median and spread hold the per-density statistics over included bins,
    shaped (len(pdf_names), len(N_grid)), with NaN where no ensemble was
    supplied. excluded counts the bins dropped because their Monte Carlo
    spread was zero. mu, sigma and rho99 pool all included bins of all
    densities at each N, weighting bins equally.
    """

    N_grid: tuple
    pdf_names: tuple
    median: np.ndarray = field(repr=False)
    spread: np.ndarray = field(repr=False)
    excluded: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    rho99: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SigmaFit:
    """Converged spread-model constants with the closing residuals."""

    A0: float
    B0: float
    residual: tuple
    iterations: int


@dataclass(frozen=True)
class CalibrationArtifact:
    """Portable result of a calibration run.

    Holds everything the smoothing pipeline needs to rebuild the spread
    model: the constants, the correction-curve parameters, and the grid,
    seeds and ensemble size that produced them.
    """

    estimator_id: str
    A0: float
    B0: float
    psi_params: tuple
    grid: tuple
    seeds: tuple
    ensemble_size: int

    def model(self):
        """SigmaModel carrying this artifact's constants."""
        return SigmaModel(A0=self.A0, B0=self.B0, psi_params=self.psi_params)


@dataclass(frozen=True, eq=False)
class CalibrationRun:
    """Artifact plus the intermediate fits and ensembles behind it."""

    artifact: CalibrationArtifact
    fit: SigmaFit
    rho: RhoStats
    ensembles: tuple = field(repr=False)


def _included_ratios(ens, stage):
    """Per-bin sqrt_pq_mean / sigma_MC over bins with positive spread.

    Returns the ratio array and the number of excluded bins. The ratio is
    rho_i times sqrt(A0 N + B0): the model constants factor out, which is
    what makes the median fit below exact.
    """
    try:
        st = ens.stats[stage]
    except KeyError:
        raise ValueError("ensemble for %r at N=%d has no %r stage"
                         % (ens.pdf_name, ens.N, stage))
    s = np.asarray(st.sqrt_pq_mean, dtype=float)
    m = np.asarray(st.sigma_mc, dtype=float)
    keep = m > 0.0
    if not np.any(keep):
        raise DegenerateInputError(
            "every bin of the %r ensemble at N=%d has zero Monte Carlo "
            "spread; the ratio rho is undefined" % (ens.pdf_name, ens.N))
    return s[keep] / m[keep], int(m.size - np.count_nonzero(keep))


def _split_low_high(N_values):
    """Membership of each N in the lower half of the sorted unique grid."""
    uniq = sorted(set(float(n) for n in N_values))
    if len(uniq) < 2:
        raise ValueError("need ensembles at two or more distinct N to fit "
                         "A0 and B0")
    low = set(uniq[:(len(uniq) + 1) // 2])
    return np.array([float(n) in low for n in N_values])


def fit_a0_b0(ensembles, start=DEFAULT_START, stage="scaled", tol=1e-4,
              max_iter=50):
    """Fit the spread-model constants to Monte Carlo ensembles.

    Each ensemble contributes one robust summary: the median over bins of
    sqrt_pq_mean / sigma_MC. Because every bin in an ensemble shares the
    same factor 1/sqrt(A0 N + B0), that median equals a fixed constant
    K times the factor, so the two moment conditions

        mean over low-N ensembles  of (K / sqrt(A0 N + B0) - 1) = 0
        mean over high-N ensembles of (K / sqrt(A0 N + B0) - 1) = 0

    are smooth in (A0, B0) with an exact analytic Jacobian. They are
    solved by Newton iteration.

    Parameters
    ----------
    ensembles : sequence of EnsembleResult
        Must span at least two distinct N.
    start : (A0, B0) starting point, positive.
    stage : which stage's statistics to calibrate against.
    tol : relative step size below which the iteration stops.
    max_iter : iteration cap.

    Returns
    -------
    SigmaFit

    Raises
    ------
    NumericError
        If the 2x2 Jacobian becomes singular or the iteration does not
        converge within max_iter steps.
    """
    if not ensembles:
        raise ValueError("no ensembles given")
    Ns, Ks = [], []
    for ens in ensembles:
        ratios, _ = _included_ratios(ens, stage)
        Ns.append(float(ens.N))
        Ks.append(float(np.median(ratios)))
    Ns = np.asarray(Ns)
    Ks = np.asarray(Ks)
    is_low = _split_low_high(Ns)

    x = np.asarray(start, dtype=float)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise ValueError("start must be two finite numbers")
    if np.min(x[0] * Ns + x[1]) <= 0.0:
        raise ValueError("start must keep A0 N + B0 positive on the grid")

    def moments(vec):
        a0, b0 = vec
        t = a0 * Ns + b0
        u = Ks / np.sqrt(t)
        resid = u - 1.0
        da = -0.5 * u * Ns / t
        db = -0.5 * u / t
        f = np.array([resid[is_low].mean(), resid[~is_low].mean()])
        jac = np.array([[da[is_low].mean(), db[is_low].mean()],
                        [da[~is_low].mean(), db[~is_low].mean()]])
        return f, jac

    trace = []
    for it in range(1, max_iter + 1):
        f, jac = moments(x)
        trace.append((float(x[0]), float(x[1]), float(f[0]), float(f[1])))
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        scale = max(abs(jac).max(), 1e-300)
        if not np.isfinite(det) or abs(det) < 1e-14 * scale * scale:
            raise NumericError(
                "singular Jacobian while fitting the spread constants",
                diagnostics={"A0": float(x[0]), "B0": float(x[1]),
                             "residual": [float(v) for v in f]})
        dx = np.linalg.solve(jac, -f)
        # Halve the step until the model stays positive over the grid.
        step = 1.0
        while step > 1e-6 and np.min((x[0] + step * dx[0]) * Ns
                                     + (x[1] + step * dx[1])) <= 0.0:
            step *= 0.5
        x = x + step * dx
        rel = np.max(np.abs(step * dx) / np.maximum(np.abs(x), 1.0))
        if rel < tol:
            f, _ = moments(x)
            return SigmaFit(A0=float(x[0]), B0=float(x[1]),
                            residual=(float(f[0]), float(f[1])),
                            iterations=it)
    raise NumericError(
        "spread-constant fit did not converge in %d iterations" % max_iter,
        diagnostics={"trace": trace})


def rho_stats(ensembles, A0, B0, stage="scaled"):
    """Summarise the spread ratio rho over densities and sample sizes.

    rho_i = <sigma_est,i>_MC / sigma_MC,i per bin, with sigma_est built
    from the constants (without the psi correction). The constants are
    taken raw rather than through a SigmaModel so that the band can be
    measured against whatever a fit produced, even when the fit landed
    outside the model's validity range; A0 N + B0 must still be positive
    at every supplied N. Bins whose Monte Carlo spread is zero are
    excluded and counted. Pooled statistics at each N weight every
    included bin of every density equally.

    Parameters
    ----------
    ensembles : sequence of EnsembleResult
        Each must carry a pdf_name; one ensemble per (density, N).
    A0, B0 : spread-model constants to evaluate against.
    stage : which stage's statistics to evaluate.

    Returns
    -------
    RhoStats
    """
    if not ensembles:
        raise ValueError("no ensembles given")
    A0 = float(A0)
    B0 = float(B0)
    if not (math.isfinite(A0) and math.isfinite(B0)):
        raise ValueError("A0 and B0 must be finite")
    names, sizes = [], []
    rho_map, excl_map = {}, {}
    for ens in ensembles:
        if ens.pdf_name is None:
            raise ValueError("ensembles must carry pdf_name")
        t = A0 * ens.N + B0
        if t <= 0.0:
            raise ValueError(
                "A0 N + B0 is not positive at N=%d; rho is undefined there"
                % ens.N)
        ratios, excl = _included_ratios(ens, stage)
        rho = ratios / math.sqrt(t)
        key = (ens.pdf_name, int(ens.N))
        if key in rho_map:
            raise ValueError("duplicate ensemble for %r at N=%d" % key)
        rho_map[key] = rho
        excl_map[key] = excl
        if ens.pdf_name not in names:
            names.append(ens.pdf_name)
        if int(ens.N) not in sizes:
            sizes.append(int(ens.N))
    sizes = sorted(sizes)

    median = np.full((len(names), len(sizes)), np.nan)
    spread = np.full((len(names), len(sizes)), np.nan)
    excluded = np.zeros((len(names), len(sizes)), dtype=int)
    mu = np.empty(len(sizes))
    sigma = np.empty(len(sizes))
    for j, n in enumerate(sizes):
        pool = []
        for i, name in enumerate(names):
            rho = rho_map.get((name, n))
            if rho is None:
                continue
            median[i, j] = float(np.median(rho))
            spread[i, j] = float(rho.std(ddof=1)) if rho.size > 1 else 0.0
            excluded[i, j] = excl_map[(name, n)]
            pool.append(rho)
        merged = np.concatenate(pool)
        mu[j] = merged.mean()
        sigma[j] = merged.std(ddof=1) if merged.size > 1 else 0.0
    return RhoStats(N_grid=tuple(sizes), pdf_names=tuple(names),
                    median=median, spread=spread, excluded=excluded,
                    mu=mu, sigma=sigma, rho99=mu - Z99 * sigma)


def fit_psi(rho_curve, start=DEFAULT_PSI_PARAMS):
    """Fit the four-constant correction curve to (N, rho_0.99) points.

    Least squares with all four constants bounded to [0, 1], which keeps
    the fitted curve inside (0, 1) for every realistic band.

    Parameters
    ----------
    rho_curve : sequence of (N, rho99) pairs, at least four, finite,
        with N >= 1.
    start : initial constants, inside the bounds.

    Returns
    -------
    tuple of 4 floats

    Raises
    ------
    NumericError
        If the optimizer reports failure; the diagnostics carry the
        closing residuals.
    """
    pts = np.asarray(list(rho_curve), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("rho_curve must be a sequence of (N, rho99) pairs")
    if pts.shape[0] < 4:
        raise ValueError("need at least four points to fit four constants")
    if not np.all(np.isfinite(pts)):
        raise ValueError("rho_curve must be finite")
    if np.any(pts[:, 0] < 1.0):
        raise ValueError("sample sizes must be >= 1")
    x0 = np.asarray(start, dtype=float)
    if x0.shape != (4,) or np.any(x0 < 0.0) or np.any(x0 > 1.0):
        raise ValueError("start must be four constants in [0, 1]")

    sizes = pts[:, 0]
    target = pts[:, 1]

    def resid(vec):
        return psi(sizes, SigmaModel(psi_params=tuple(vec))) - target

    sol = least_squares(resid, x0=x0, bounds=(0.0, 1.0), xtol=1e-14,
                        ftol=1e-14, gtol=1e-14, max_nfev=20000)
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise NumericError(
            "correction-curve fit did not converge",
            diagnostics={"status": int(sol.status),
                         "residuals": [float(v)
                                       for v in np.atleast_1d(sol.fun)]})
    return tuple(float(v) for v in sol.x)


def calibrate_sigma(estimator="multinomial_ros", pdf_names=None,
                    N_grid=CALIBRATION_GRID, R=2000, seed=0, b=100,
                    xi=0.95, alpha_fn=None, cfg=None, start=DEFAULT_START,
                    threads=None, progress=None):
    """Run the full spread calibration for one estimator.

    Sweeps the trial densities over the sample-size grid, fits (A0, B0)
    to the smoothed ensembles, measures the rho band against the fitted
    model and fits the correction curve to it.

    Each (density, N) ensemble gets its own seed derived from the master
    seed, so runs are reproducible and ensembles are independent.

    Parameters
    ----------
    estimator : starting estimator for the smoothing pipeline.
    pdf_names : density names (the benchmark suite when omitted).
    N_grid : sample sizes to sweep.
    R : trials per ensemble.
    seed : master seed.
    b, xi, alpha_fn, cfg, threads : forwarded to run_ensemble.
    start : starting (A0, B0).
    progress : optional callable (pdf_name, N) invoked before each
        ensemble, for logging.

    Returns
    -------
    CalibrationRun
    """
    if pdf_names is None:
        from .mclab import TABLE_PDFS
        pdf_names = TABLE_PDFS
    ensembles = []
    seeds = []
    for pi, name in enumerate(pdf_names):
        for n in N_grid:
            child = int(np.random.SeedSequence(
                seed, spawn_key=(pi, int(n))).generate_state(
                    1, dtype=np.uint64)[0])
            if progress is not None:
                progress(name, int(n))
            ens = run_ensemble(name, int(n), estimator=estimator,
                               stages=("scaled",), R=R, seed=child, b=b,
                               xi=xi, alpha_fn=alpha_fn, cfg=cfg,
                               threads=threads)
            ensembles.append(ens)
            seeds.append(child)
    fit = fit_a0_b0(ensembles, start=start)
    rho = rho_stats(ensembles, fit.A0, fit.B0)
    psi_params = fit_psi(list(zip(rho.N_grid, rho.rho99)))
    artifact = CalibrationArtifact(
        estimator_id=estimator, A0=fit.A0, B0=fit.B0,
        psi_params=psi_params, grid=tuple(int(n) for n in N_grid),
        seeds=tuple(seeds), ensemble_size=int(R))
    return CalibrationRun(artifact=artifact, fit=fit, rho=rho,
                          ensembles=tuple(ensembles))
