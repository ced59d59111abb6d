"""Parametric bootstrap over coefficients and interval summaries."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError

MAX_EXCLUDED = 0.01


@dataclass(frozen=True)
class BootstrapDraws:
    draws: np.ndarray
    theta_hat: np.ndarray
    seed: int

    @property
    def B(self):
        return self.draws.shape[0]


def sample_coefficients(fit, B=1000, seed=0, z=None) -> BootstrapDraws:
    """Draw ``theta_hat + L^-T z`` where ``L L' = X'WX + P``.

    The draws are multivariate normal with covariance ``(X'WX + P)^-1``.
    ``z`` replaces the standard-normal matrix (shape ``(B, p)``) when given.
    """
    if getattr(fit, "factor", None) is None:
        raise NumericalError("fit carries no factorization of the penalized system")
    c, lower = fit.factor
    theta = np.asarray(fit.theta, dtype=float)
    if z is None:
        z = np.random.default_rng(seed).standard_normal((int(B), theta.size))
    z = np.asarray(z, dtype=float).reshape(-1, theta.size)
    offsets = linalg.solve_triangular(c, z.T, lower=lower, trans="T" if lower else "N")
    return BootstrapDraws(theta[None, :] + offsets.T, theta, int(seed))


def quantile_interval(values, level=0.95):
    """Equal-tailed quantiles over the first axis, linear interpolation.

    Non-finite draws are dropped per element; more than 1% dropped for any
    element is an error.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie strictly between 0 and 1")
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        frac = bad.mean(axis=0)
        if np.max(frac) > MAX_EXCLUDED:
            raise NumericalError(
                f"{int(bad.sum())} non-finite summaries ({100 * np.max(frac):.1f}% of draws for one element)"
            )
        warnings.warn(f"excluded {int(bad.sum())} non-finite bootstrap summaries", RuntimeWarning)
        values = np.where(bad, np.nan, values)
    tails = [(1 - level) / 2, (1 + level) / 2]
    lo, hi = np.nanquantile(values, tails, axis=0, method="linear")
    return lo, hi


def interval(summary_fn, draws: BootstrapDraws, level=0.95):
    """``(lo, hi, point)`` for ``summary_fn`` evaluated over the draws.

    ``summary_fn`` may return a scalar or an array; the result has the same
    shape.  ``point`` is the summary at ``theta_hat``.
    """
    values = np.array([summary_fn(theta) for theta in draws.draws], dtype=float)
    lo, hi = quantile_interval(values, level)
    point = np.asarray(summary_fn(draws.theta_hat), dtype=float)
    if point.ndim == 0:
        return float(lo), float(hi), float(point)
    return lo, hi, point


def classify_significance(area_intervals, reference_interval):
    """Label each area interval ``below``, ``overlap`` or ``above`` the reference."""
    iv = np.atleast_2d(np.asarray(area_intervals, dtype=float))
    ref_lo, ref_hi = (float(v) for v in reference_interval)
    labels = np.full(iv.shape[0], "overlap", dtype=object)
    labels[iv[:, 1] < ref_lo] = "below"
    labels[iv[:, 0] > ref_hi] = "above"
    return labels


def classify_difference(diff_lo, diff_hi):
    """Difference-interval rule: ``below`` when the interval lies under zero,
    ``above`` when it lies over zero, else ``overlap``."""
    lo = np.atleast_1d(np.asarray(diff_lo, dtype=float))
    hi = np.atleast_1d(np.asarray(diff_hi, dtype=float))
    labels = np.full(lo.shape, "overlap", dtype=object)
    labels[hi < 0] = "below"
    labels[lo > 0] = "above"
    return labels
