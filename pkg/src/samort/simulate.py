"""Synthetic age-space-time mortality data with a known log-rate surface.

Truth surfaces are closed-form (Gompertz age curve, infant excess, a
trigonometric spatial gradient that fades with age, a linear time trend),
so they share no structure with the spline estimator.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import MortalityArray

MAX_RATE = 1.5


@dataclass(frozen=True)
class Scenario:
    n_ages: int = 30
    n_areas: int = 100
    n_years: int = 10
    first_year: int = 2015
    mean_exposure: float = 300.0
    exposure_cv: float = 0.3
    gompertz_level: float = -6.0
    gompertz_slope: float = 0.1
    infant_excess: float = 1.5
    spatial_amplitude: float = 0.2
    trend_slope: float = -0.02
    outliers: tuple = ()
    shocks: tuple = ()
    grid_spacing: float = 1000.0
    seed: int = 0
    sex: str = "female"

    def __post_init__(self):
        object.__setattr__(self, "outliers", tuple((int(j), float(v)) for j, v in self.outliers))
        object.__setattr__(self, "shocks", tuple((int(y), float(v)) for y, v in self.shocks))
        if min(self.n_ages, self.n_areas, self.n_years) < 1:
            raise ValueError("scenario dimensions must be positive")
        for j, _ in self.outliers:
            if not 0 <= j < self.n_areas:
                raise ValueError(f"outlier area index {j} out of range")
        years = set(self.years)
        for y, _ in self.shocks:
            if y not in years:
                raise ValueError(f"shock year {y} outside simulated years")

    @property
    def ages(self):
        return np.arange(self.n_ages)

    @property
    def years(self):
        return np.arange(self.first_year, self.first_year + self.n_years)

    def as_dict(self):
        out = asdict(self)
        out["outliers"] = [list(o) for o in self.outliers]
        out["shocks"] = [list(s) for s in self.shocks]
        return out


def centroid_grid(n, spacing, rng):
    side = int(np.ceil(np.sqrt(n)))
    cells = np.arange(n)
    xy = np.column_stack([cells % side, cells // side]).astype(float)
    xy += rng.uniform(-0.3, 0.3, size=xy.shape)
    return xy * spacing


def truth_surface(scenario: Scenario, centroids) -> np.ndarray:
    ages = scenario.ages.astype(float)
    age_curve = scenario.gompertz_level + scenario.gompertz_slope * ages
    age_curve[0] += scenario.infant_excess

    span = np.ptp(centroids, axis=0)
    span[span == 0] = 1.0
    u = (centroids - centroids.min(axis=0)) / span
    gradient = np.sin(np.pi * u[:, 0]) * np.cos(np.pi * u[:, 1])
    fade = 1.0 - 0.5 * ages / max(ages[-1], 1.0)
    spatial = scenario.spatial_amplitude * fade[:, None] * gradient[None, :]

    trend = scenario.trend_slope * np.arange(scenario.n_years)
    eta = age_curve[:, None, None] + spatial[:, :, None] + trend[None, None, :]
    for j, v in scenario.outliers:
        eta[:, j, :] += v
    years = scenario.years
    for y, v in scenario.shocks:
        eta[:, :, int(np.flatnonzero(years == y)[0])] += v
    return eta


def generate(scenario: Scenario, replicate: int | None = None):
    """Simulate one dataset; return ``(MortalityArray, true log-rates)``.

    ``replicate`` selects an independent stream derived from the scenario
    seed, for repeated draws from the same scenario.
    """
    entropy = [scenario.seed] if replicate is None else [scenario.seed, int(replicate)]
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    centroids = centroid_grid(scenario.n_areas, scenario.grid_spacing, rng)
    eta = truth_surface(scenario, centroids)
    mu = np.exp(eta)
    if mu.max() > MAX_RATE:
        raise ValueError(f"scenario produces a hazard of {mu.max():.3g}, above {MAX_RATE}")

    shape = eta.shape
    sigma2 = np.log1p(scenario.exposure_cv ** 2)
    exposures = rng.lognormal(np.log(scenario.mean_exposure) - sigma2 / 2, np.sqrt(sigma2), size=shape)
    deaths = rng.poisson(mu * exposures).astype(float)
    width = len(str(scenario.n_areas))
    data = MortalityArray(
        deaths=deaths, exposures=exposures, ages=scenario.ages, years=scenario.years,
        area_ids=tuple(f"A{j:0{width}d}" for j in range(scenario.n_areas)),
        centroids=centroids, sex=scenario.sex,
    )
    return data, eta
