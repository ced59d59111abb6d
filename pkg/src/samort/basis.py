"""B-spline bases, difference operators and the box-product spatial basis.

Column conventions used everywhere downstream:

* age basis: infant indicator first (when enabled), then the smooth columns;
* time basis: smooth columns first, then one indicator per shock year;
* spatial basis: ``Bs[j, b * c_lon + a] = B_lat[j, b] * B_lon[j, a]``
  (longitude index fastest).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class MarginalBasis:
    matrix: np.ndarray
    knots: np.ndarray
    degree: int
    domain: tuple

    @property
    def n_basis(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SpatialBasis:
    matrix: np.ndarray
    lon_basis: MarginalBasis
    lat_basis: MarginalBasis


@dataclass(frozen=True)
class DifferenceOperator:
    matrix: np.ndarray
    order: int


def equally_spaced_knots(lo, hi, n_basis, degree):
    segments = n_basis - degree
    dx = (hi - lo) / segments
    return lo + dx * np.arange(-degree, segments + degree + 1)


def cox_de_boor(x, knots, degree):
    """Evaluate all B-splines of a knot vector at ``x``.

    The last non-degenerate interval is closed on the right so that the
    upper end of the domain is covered.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(knots, dtype=float)
    n_int = len(t) - 1
    B = ((t[:-1][None, :] <= x[:, None]) & (x[:, None] < t[1:][None, :])).astype(float)
    right = t[len(t) - 1 - degree]
    at_end = x == right
    if at_end.any():
        B[at_end] = 0.0
        B[at_end, len(t) - 2 - degree] = 1.0
    for p in range(1, degree + 1):
        cnt = n_int - p
        left_den = t[p : p + cnt] - t[:cnt]
        right_den = t[p + 1 : p + 1 + cnt] - t[1 : 1 + cnt]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (x[:, None] - t[None, :cnt]) / left_den, 0.0)
            rght = np.where(
                right_den > 0, (t[None, p + 1 : p + 1 + cnt] - x[:, None]) / right_den, 0.0
            )
        B = left * B[:, :-1] + rght * B[:, 1:]
    return B


def bspline_basis(positions, n_basis, degree=3, domain=None) -> MarginalBasis:
    """Equally spaced B-spline basis evaluated at ``positions``.

    Knots span ``domain`` (default: range of positions) and are extended by
    ``degree`` knots on each side, so the basis is a partition of unity on
    the domain.
    """
    x = np.asarray(positions, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("positions must be finite")
    if n_basis < degree + 1:
        raise ValueError(f"n_basis={n_basis} too small for degree {degree}")
    lo, hi = (float(x.min()), float(x.max())) if domain is None else map(float, domain)
    if not hi > lo:
        raise ValueError("basis domain has zero width")
    knots = equally_spaced_knots(lo, hi, n_basis, degree)
    return MarginalBasis(cox_de_boor(x, knots, degree), knots, degree, (lo, hi))


def nested_basis(full: MarginalBasis, positions, n_basis) -> MarginalBasis:
    """Coarser basis whose breakpoints are a subset of those of ``full``.

    Every ``r``-th breakpoint is kept, where ``r`` is the ratio of segment
    counts; the coarse space is then contained in the fine one.
    """
    d = full.degree
    fine, coarse = full.n_basis - d, n_basis - d
    if coarse < 1 or fine % coarse:
        raise ValueError(
            f"cannot nest {n_basis} B-splines in {full.n_basis}: "
            f"{fine} segments not divisible into {coarse}"
        )
    return bspline_basis(positions, n_basis, d, full.domain)


def box_product(A, B):
    """Row-wise Kronecker product, column index of ``B`` fastest."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], A.shape[1] * B.shape[1])


def difference_matrix(c, order=2) -> DifferenceOperator:
    if c <= order:
        raise ValueError(f"need more than {order} coefficients, got {c}")
    return DifferenceOperator(np.diff(np.eye(c), n=order, axis=0), order)


@dataclass(frozen=True)
class BasisConfig:
    n_age: int = 21
    n_time: int = 7
    n_lon: int = 11
    n_lat: int = 11
    n_age_reduced: int = 9
    n_time_reduced: int = 5
    degree: int = 3
    order: int = 2
    shock_years: tuple = (2020, 2021)
    infant: bool = True

    def __post_init__(self):
        object.__setattr__(self, "shock_years", tuple(int(y) for y in self.shock_years))


@dataclass(frozen=True)
class BasisSet:
    age: MarginalBasis
    age_reduced: MarginalBasis
    time: MarginalBasis
    time_reduced: MarginalBasis
    spatial: SpatialBasis
    shock_years: tuple
    infant: bool
    order: int
    Ba: np.ndarray = field(repr=False)
    Ba_reduced: np.ndarray = field(repr=False)
    Bt: np.ndarray = field(repr=False)
    Bt_reduced: np.ndarray = field(repr=False)

    @property
    def Bs(self):
        return self.spatial.matrix

    @property
    def n_infant(self):
        return int(self.infant)

    @property
    def n_shock(self):
        return len(self.shock_years)

    @property
    def dims(self) -> dict:
        m, n, l = self.Ba.shape[0], self.Bs.shape[0], self.Bt.shape[0]
        return {
            "m": m, "n": n, "l": l,
            "c_a": self.age.n_basis, "c_t": self.time.n_basis,
            "c_lon": self.spatial.lon_basis.n_basis, "c_lat": self.spatial.lat_basis.n_basis,
            "c_s": self.Bs.shape[1],
            "c_a_reduced": self.age_reduced.n_basis, "c_t_reduced": self.time_reduced.n_basis,
            "n_shock": self.n_shock, "n_infant": self.n_infant,
        }


def _age_matrix(smooth: MarginalBasis, infant: bool):
    if not infant:
        return smooth.matrix
    indicator = np.zeros((smooth.matrix.shape[0] + 1, 1))
    indicator[0, 0] = 1.0
    body = np.vstack([np.zeros((1, smooth.n_basis)), smooth.matrix])
    return np.hstack([indicator, body])


def shock_columns(years, shock_years):
    years = np.asarray(years)
    cols = np.zeros((len(years), len(shock_years)))
    for c, sy in enumerate(shock_years):
        hit = np.flatnonzero(years == sy)
        if hit.size == 0:
            raise DataError(f"shock year {sy} not in data years {years[0]}-{years[-1]}")
        cols[hit[0], c] = 1.0
    return cols


def build_basis_set(data, config: BasisConfig = BasisConfig()) -> BasisSet:
    ages = np.asarray(data.ages, dtype=float)
    years = np.asarray(data.years, dtype=float)
    xy = np.asarray(data.centroids, dtype=float)
    d = config.degree

    if config.infant:
        if ages[0] != 0:
            raise DataError("infant column requested but the first age is not 0")
        smooth_ages = ages[1:]
    else:
        smooth_ages = ages
    age = bspline_basis(smooth_ages, config.n_age, d)
    age_r = nested_basis(age, smooth_ages, config.n_age_reduced)
    time = bspline_basis(years, config.n_time, d)
    time_r = nested_basis(time, years, config.n_time_reduced)
    lon = bspline_basis(xy[:, 0], config.n_lon, d)
    lat = bspline_basis(xy[:, 1], config.n_lat, d)
    spatial = SpatialBasis(box_product(lat.matrix, lon.matrix), lon, lat)

    shocks = shock_columns(data.years, config.shock_years)
    return BasisSet(
        age=age, age_reduced=age_r, time=time, time_reduced=time_r,
        spatial=spatial, shock_years=config.shock_years, infant=config.infant,
        order=config.order,
        Ba=_age_matrix(age, config.infant),
        Ba_reduced=_age_matrix(age_r, config.infant),
        Bt=np.hstack([time.matrix, shocks]),
        Bt_reduced=np.hstack([time_r.matrix, shocks]),
    )
