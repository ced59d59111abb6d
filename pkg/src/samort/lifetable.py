"""Period life tables, life-expectancy surfaces and the index of dissimilarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import glam
from .errors import DataError

A0_DEFAULT = 0.1
AX_DEFAULT = 0.5


class LifeTableError(DataError):
    pass


@dataclass(frozen=True)
class LifeTableResult:
    e0: float
    columns: pd.DataFrame
    open_age: int


def _table(rates, ages, a0=A0_DEFAULT, ax=AX_DEFAULT):
    """Life-table columns for rates of shape ``(m, ...)``; last age is open."""
    mx = np.asarray(rates, dtype=float)
    ages = np.asarray(ages, dtype=float)
    if mx.shape[0] != ages.size:
        raise ValueError(f"{mx.shape[0]} rates for {ages.size} ages")
    if not np.all(np.isfinite(mx)) or np.any(mx < 0):
        raise LifeTableError("rates must be finite and non-negative")
    if np.any(mx[-1] <= 0):
        raise LifeTableError("undefined open-interval survival: open-interval rate is zero")

    extra = (1,) * (mx.ndim - 1)
    width = np.diff(ages).reshape((-1,) + extra)
    a = ax * width * np.ones_like(mx[:-1])
    if ages[0] == 0:
        a[0] = a0
    closed = mx[:-1]
    qx = np.minimum(width * closed / (1.0 + (width - a) * closed), 1.0)
    qx = np.concatenate([qx, np.ones_like(mx[-1:])])

    surv = np.cumprod(1.0 - qx[:-1], axis=0)
    lx = np.concatenate([np.ones_like(mx[:1]), surv])
    dx = lx * qx
    Lx = np.empty_like(mx)
    Lx[:-1] = width * lx[1:] + a * dx[:-1]
    Lx[-1] = lx[-1] / mx[-1]
    Tx = np.cumsum(Lx[::-1], axis=0)[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ex = np.where(lx > 0, Tx / np.where(lx > 0, lx, 1.0), 0.0)
    return {"mx": mx, "qx": qx, "lx": lx, "dx": dx, "Lx": Lx, "Tx": Tx, "ex": ex}


def e0_from_rates(rates, ages, a0=A0_DEFAULT, ax=AX_DEFAULT):
    """Life expectancy at birth for every trailing index of ``rates``."""
    cols = _table(rates, ages, a0, ax)
    return cols["Tx"][0] / cols["lx"][0]


def life_table(rates, ages, a0=A0_DEFAULT, ax=AX_DEFAULT) -> LifeTableResult:
    """Single-decrement period life table with the last age open-ended.

    ``a0`` is the mean years lived in the first year by those dying in it;
    ``ax`` is the same quantity as a fraction of the interval width for the
    remaining closed intervals.  The open interval has ``L = l / m``.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1:
        raise ValueError("life_table expects a single schedule of rates")
    cols = _table(rates, ages, a0, ax)
    frame = pd.DataFrame({"age": np.asarray(ages), **cols})
    return LifeTableResult(
        e0=float(cols["Tx"][0] / cols["lx"][0]), columns=frame, open_age=int(ages[-1])
    )


def _e0_areas(eta, ages, year_idx, lt):
    rates = np.exp(eta[:, :, year_idx])
    return e0_from_rates(rates, ages, **lt)


def e0_point_and_draws(fit, data, draws=None, years=None, **lt):
    """Point e0 surface ``(n, ly)`` and, with draws, a ``(B, n, ly)`` stack."""
    idx = np.arange(len(data.years)) if years is None else np.array([data.year_index(y) for y in years])
    try:
        point = _e0_areas(fit.eta_hat, data.ages, idx, lt)
    except LifeTableError as exc:
        raise _with_context(exc, fit.eta_hat, data, idx) from exc
    if draws is None:
        return idx, point, None
    stack = np.empty((draws.B,) + point.shape)
    for b, theta in enumerate(draws.draws):
        eta = glam.predictor_array(fit.design, theta)[:, :-1, :]
        stack[b] = _e0_areas(eta, data.ages, idx, lt)
    return idx, point, stack


def region_e0_point_and_draws(fit, data, draws=None, years=None, **lt):
    """e0 of the whole region from the totals slot, ``(ly,)`` and ``(B, ly)``."""
    idx = np.arange(len(data.years)) if years is None else np.array([data.year_index(y) for y in years])
    point = e0_from_rates(np.exp(fit.eta_totals[:, idx]), data.ages, **lt)
    if draws is None:
        return idx, point, None
    stack = np.empty((draws.B,) + point.shape)
    for b, theta in enumerate(draws.draws):
        eta = glam.predictor_array(fit.design, theta)[:, -1, :]
        stack[b] = e0_from_rates(np.exp(eta[:, idx]), data.ages, **lt)
    return idx, point, stack


def _with_context(exc, eta, data, idx):
    open_rates = np.exp(eta[-1][:, idx])
    bad = np.argwhere(~(open_rates > 0))
    if bad.size:
        j, k = bad[0]
        return LifeTableError(f"{exc} (area_id={data.area_ids[j]}, year={data.years[idx[k]]})")
    return exc


def e0_surface(fit, data, draws=None, level=0.95, years=None, **lt) -> pd.DataFrame:
    """Per-area, per-year life expectancy; bounds are filled when draws are given."""
    from .inference import quantile_interval

    idx, point, stack = e0_point_and_draws(fit, data, draws, years, **lt)
    n, ly = point.shape
    lo = hi = np.full(point.shape, np.nan)
    if stack is not None:
        lo, hi = quantile_interval(stack, level)
    return pd.DataFrame({
        "area_id": np.repeat(np.asarray(data.area_ids, dtype=object), ly),
        "year": np.tile(data.years[idx], n),
        "e0": point.ravel(),
        "lo": lo.ravel(),
        "hi": hi.ravel(),
    })


def raw_e0_surface(data, **lt) -> pd.DataFrame:
    """Life expectancy from observed rates, without any smoothing."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(data.exposures > 0, data.deaths / data.exposures, 0.0)
    e0 = e0_from_rates(rates, data.ages, **lt)
    n, l = e0.shape
    return pd.DataFrame({
        "area_id": np.repeat(np.asarray(data.area_ids, dtype=object), l),
        "year": np.tile(data.years, n),
        "e0": e0.ravel(),
    })


def dissimilarity_index(fitted_deaths, exposures, age, year) -> float:
    """Half the summed absolute gap between death shares and population shares."""
    d = np.asarray(fitted_deaths, dtype=float)[age, :, year]
    e = np.asarray(exposures, dtype=float)[age, :, year]
    return float(_id(d, e))


def _id(d, e):
    td, te = d.sum(axis=0), e.sum(axis=0)
    if np.any(td <= 0) or np.any(te <= 0):
        raise LifeTableError("index of dissimilarity needs positive death and exposure totals")
    return 0.5 * np.abs(d / td - e / te).sum(axis=0)


def id_table(fitted_deaths, exposures, ages, years) -> pd.DataFrame:
    """Index of dissimilarity for every age and year."""
    d = np.moveaxis(np.asarray(fitted_deaths, dtype=float), 1, 0)
    e = np.moveaxis(np.asarray(exposures, dtype=float), 1, 0)
    values = _id(d, e)
    m, l = values.shape
    return pd.DataFrame({
        "age": np.repeat(np.asarray(ages), l),
        "year": np.tile(np.asarray(years), m),
        "id": values.ravel(),
    })
