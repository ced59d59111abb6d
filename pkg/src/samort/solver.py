"""Penalized IRWLS for the Poisson model and smoothing-parameter search."""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import linalg

from . import glam
from .basis import BasisSet
from .data import AugmentedArray, MortalityArray, aggregate
from .errors import ConvergenceError, DataError, SamortError
from .penalty import PenaltyConfig, add_penalty, assemble_penalty

log = logging.getLogger(__name__)

_MAX_ETA = 50.0
# floor on working weights of observed cells; the IRWLS fixed point is unchanged
# because the working response uses the same weight
_MIN_WEIGHT = 1e-8


@dataclass(frozen=True)
class IterationControls:
    tol: float = 1e-6
    dev_tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 10
    # count the totals slot in deviance, ED and N
    include_totals: bool = True


@dataclass
class FitResult:
    theta: np.ndarray
    design: glam.BlockDesign = field(repr=False)
    penalty: PenaltyConfig
    eta: np.ndarray = field(repr=False)
    deviance: float
    effective_dimension: float
    hqic: float
    n_obs: int
    factor: tuple = field(repr=False)
    converged: bool
    iterations: int
    trace: list = field(default_factory=list, repr=False)

    @property
    def eta_hat(self):
        """Fitted log-mortality for the areas, shape ``(m, n, l)``."""
        return self.eta[:, :-1, :]

    @property
    def eta_totals(self):
        return self.eta[:, -1, :]

    @property
    def blocks(self):
        return self.design.layout.split(self.theta)

    @property
    def covariance(self):
        return linalg.cho_solve(self.factor, np.eye(self.theta.size))


@dataclass
class GridSearchResult:
    stage1: pd.DataFrame
    stage2: pd.DataFrame
    best: PenaltyConfig


def poisson_deviance(y, yhat, mask=None):
    """``2 sum[y log(y / yhat) - (y - yhat)]`` with ``0 log 0 = 0``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    y, yhat = y[mask], yhat[mask]
    pos = y > 0
    term = -(y - yhat)
    term[pos] += y[pos] * np.log(y[pos] / yhat[pos])
    return float(2.0 * term.sum())


def hqic(deviance, ed, n_obs):
    """Hannan-Quinn criterion ``DEV + 2 ln(ln N) ED``."""
    if n_obs < 3:
        raise ValueError(f"HQIC needs at least 3 observations, got {n_obs}")
    return float(deviance + 2.0 * np.log(np.log(n_obs)) * ed)


def _mu(eta):
    return np.exp(np.minimum(eta, _MAX_ETA))


def _weights(eta, e, observed):
    return np.where(observed, np.maximum(_mu(eta) * e, _MIN_WEIGHT), 0.0)


def _initial_theta(design, y, e, P):
    # block1 smooth of the log rate of the totals slot; other blocks at zero
    p1 = design.layout.sizes[0]
    z = np.log((y[:, -1, :] + 0.5) / (e[:, -1, :] + 1.0))
    d1 = glam.BlockDesign(design.Ba, design.Bt)
    w = (e[:, -1:, :] > 0).astype(float)
    A = glam.weighted_normal_matrix(d1, w)
    A = add_penalty(A, P[:p1, :p1])
    A[np.diag_indices_from(A)] += 1e-8
    theta1 = glam.cholesky(A)
    theta1 = linalg.cho_solve(theta1, glam.weighted_rhs(d1, w, z[:, None, :]))
    theta = np.zeros(design.layout.total)
    theta[:p1] = theta1
    return theta


def fit_arrays(design, y, e, P, controls=IterationControls(), theta0=None, penalty=None):
    """Penalized IRWLS on observation arrays of shape ``(m, n + 1, l)``."""
    y = np.asarray(y, dtype=float)
    e = np.asarray(e, dtype=float)
    theta = _initial_theta(design, y, e, P) if theta0 is None else np.array(theta0, dtype=float)
    observed = e > 0

    def penalized(th):
        eta = glam.predictor_array(design, th)
        dev = poisson_deviance(y, _mu(eta) * e, observed)
        return dev + float(th @ (P @ th)), dev, eta

    pen, dev, eta = penalized(theta)
    trace = [{"iteration": 0, "deviance": dev, "penalized": pen, "step": 0.0, "halvings": 0}]
    converged = False
    it = 0
    for it in range(1, controls.max_iter + 1):
        w = _weights(eta, e, observed)
        z = np.where(observed, eta + (y - _mu(eta) * e) / np.where(observed, w, 1.0), eta)
        A = add_penalty(glam.weighted_normal_matrix(design, w), P)
        proposal = linalg.cho_solve(glam.cholesky(A), glam.weighted_rhs(design, w, z))

        new_pen, new_dev, new_eta = penalized(proposal)
        halvings = 0
        while new_pen > pen + 1e-10 * abs(pen) and halvings < controls.max_halvings:
            proposal = 0.5 * (theta + proposal)
            new_pen, new_dev, new_eta = penalized(proposal)
            halvings += 1

        step = float(np.max(np.abs(proposal - theta))) if theta.size else 0.0
        dev_change = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        theta, pen, dev, eta = proposal, new_pen, new_dev, new_eta
        trace.append({"iteration": it, "deviance": dev, "penalized": pen, "step": step, "halvings": halvings})
        if step < controls.tol or dev_change < controls.dev_tol:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"IRWLS did not converge within {controls.max_iter} iterations", trace
        )

    w = _weights(eta, e, observed)
    XtWX = glam.weighted_normal_matrix(design, w)
    factor = glam.cholesky(add_penalty(XtWX.copy(), P))
    count = observed.copy()
    if not controls.include_totals:
        count[:, -1, :] = False
        w_ed = w.copy()
        w_ed[:, -1, :] = 0.0
        ed = glam.trace_hat(factor, glam.weighted_normal_matrix(design, w_ed))
        deviance = poisson_deviance(y, _mu(eta) * e, count)
    else:
        ed = glam.trace_hat(factor, XtWX)
        deviance = dev
    n_obs = int(count.sum())
    return FitResult(
        theta=theta, design=design, penalty=penalty, eta=eta,
        deviance=deviance, effective_dimension=ed,
        hqic=hqic(deviance, ed, n_obs) if n_obs >= 3 else float("nan"),
        n_obs=n_obs, factor=factor, converged=True, iterations=it, trace=trace,
    )


def fit(data: AugmentedArray, basis: BasisSet, config: PenaltyConfig,
        controls: IterationControls = IterationControls(), theta0=None) -> FitResult:
    """Fit the full three-block model to area data augmented with totals."""
    design = glam.BlockDesign.from_basis(basis)
    y, e = data.stacked()
    P = assemble_penalty(config, basis)
    return fit_arrays(design, y, e, P, controls, theta0=theta0, penalty=config)


def fit_totals(data: AugmentedArray, basis: BasisSet, config: PenaltyConfig,
               controls: IterationControls = IterationControls()) -> FitResult:
    """Age-time model (common block only) fitted to the totals."""
    design = glam.BlockDesign.from_basis(basis, spatial=False)
    y = data.totals_deaths[:, None, :]
    e = data.totals_exposures[:, None, :]
    P = assemble_penalty(config, basis, spatial=False)
    return fit_arrays(design, y, e, P, controls, penalty=config)


def default_grid():
    return list(10.0 ** np.arange(-2.0, 6.0 + 1e-9, 0.5))


STAGE1_KEYS = ("lambda_a", "lambda_t")
STAGE2_KEYS = ("lambda_lon", "lambda_lat", "lambda_a_reduced", "kappa")


def _grid_row(params, runner):
    row = dict(params)
    try:
        res = runner(params)
    except SamortError as exc:
        log.warning("grid point %s failed: %s", params, exc)
        row.update(deviance=np.nan, ed=np.nan, hqic=np.nan, iterations=0, error=str(exc))
        return row, None
    row.update(
        deviance=res.deviance, ed=res.effective_dimension, hqic=res.hqic,
        iterations=res.iterations, error="",
    )
    return row, res


def _best_index(table):
    h = table["hqic"].to_numpy(dtype=float)
    if not np.isfinite(h).any():
        raise SamortError("every grid point failed; no HQIC to minimize")
    return int(np.nanargmin(h))


def grid_search(data: AugmentedArray, basis: BasisSet, grids: dict | None = None,
                controls: IterationControls = IterationControls(), workers: int = 1,
                base: PenaltyConfig | None = None) -> GridSearchResult:
    """Two-stage HQIC grid search.

    Stage 1 picks ``(lambda_a, lambda_t)`` on the age-time model fitted to
    the totals.  Stage 2 fixes them, sets ``lambda_t_reduced`` to zero and
    scans ``(lambda_lon, lambda_lat, lambda_a_reduced, kappa)`` on the full
    model.  Points run concurrently on up to ``workers`` threads; tables
    keep grid order.
    """
    grids = dict(grids or {})
    for key in STAGE1_KEYS + STAGE2_KEYS:
        values = [float(v) for v in grids.get(key, default_grid())]
        if not values:
            raise ValueError(f"grid for {key} is empty")
        if any(v < 0 for v in values) or (key == "kappa" and any(v <= 0 for v in values)):
            raise ValueError(f"grid for {key} has invalid values")
        grids[key] = values
    base = base or PenaltyConfig()

    def run_all(points, runner):
        with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
            return list(pool.map(lambda p: _grid_row(p, runner), points))

    stage1_points = [dict(zip(STAGE1_KEYS, v)) for v in itertools.product(*(grids[k] for k in STAGE1_KEYS))]
    stage1 = run_all(stage1_points, lambda p: fit_totals(data, basis, replace(base, **p), controls))
    table1 = pd.DataFrame([r for r, _ in stage1])
    i1 = _best_index(table1)
    chosen = stage1_points[i1]
    res1 = stage1[i1][1]

    design = glam.BlockDesign.from_basis(basis)
    theta0 = np.zeros(design.layout.total)
    theta0[: res1.theta.size] = res1.theta

    stage2_points = [dict(zip(STAGE2_KEYS, v)) for v in itertools.product(*(grids[k] for k in STAGE2_KEYS))]
    fixed = replace(base, lambda_t_reduced=0.0, **chosen)
    stage2 = run_all(stage2_points, lambda p: fit(data, basis, replace(fixed, **p), controls, theta0=theta0))
    table2 = pd.DataFrame([r for r, _ in stage2])
    i2 = _best_index(table2)
    best = replace(fixed, **stage2_points[i2])
    return GridSearchResult(table1, table2, best)


def fitted_deaths(fit_result: FitResult, data: MortalityArray):
    return np.exp(fit_result.eta_hat) * data.exposures


def validate_aggregation(fit_result: FitResult, data: MortalityArray, grouping,
                         **lifetable_options) -> pd.DataFrame:
    """Direct versus model-based life expectancy for groups of areas.

    The direct series uses aggregated observed deaths; the model series
    uses aggregated fitted deaths.  Both divide by aggregated exposures.
    Group-years whose life table is undefined get NaN.
    """
    from .lifetable import LifeTableError, e0_from_rates

    known = set(data.area_ids)
    extra = [a for a in grouping if a not in known]
    if extra:
        raise DataError(f"unknown area {extra[0]!r} in grouping: not present in the fitted data")
    raw = aggregate(data, grouping)
    exact_model = np.einsum(
        "ijk,jg->igk", fitted_deaths(fit_result, data),
        _membership(data.area_ids, raw.area_ids, grouping),
    )
    rows = []
    for g, group in enumerate(raw.area_ids):
        for k, year in enumerate(raw.years):
            e = raw.exposures[:, g, k]
            out = {"group_id": group, "year": int(year), "exposure": float(e.sum())}
            for name, d in (("e0_direct", raw.deaths[:, g, k]), ("e0_model", exact_model[:, g, k])):
                with np.errstate(divide="ignore", invalid="ignore"):
                    rates = np.where(e > 0, d / e, np.nan)
                try:
                    out[name] = float(e0_from_rates(rates, data.ages, **lifetable_options))
                except LifeTableError as exc:
                    log.warning("group %s year %s: %s", group, year, exc)
                    out[name] = float("nan")
            rows.append(out)
    return pd.DataFrame(rows, columns=["group_id", "year", "exposure", "e0_direct", "e0_model"])


def _membership(area_ids, groups, grouping):
    index = {g: i for i, g in enumerate(groups)}
    member = np.zeros((len(area_ids), len(groups)))
    for j, a in enumerate(area_ids):
        member[j, index[str(grouping[a])]] = 1.0
    return member
