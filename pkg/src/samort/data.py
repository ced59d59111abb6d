"""Death and exposure arrays: loading, validation, repair and aggregation.

Arrays are indexed ``[age, area, year]``.  Areas are sorted
lexicographically by identifier, ages and years ascending.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import DataError

log = logging.getLogger(__name__)

COUNT_COLUMNS = ["age", "area_id", "year", "count"]
CENTROID_COLUMNS = ["area_id", "x", "y"]
REPORT_COLUMNS = ["age", "area_id", "year", "old_exposure", "new_exposure"]


@dataclass(frozen=True)
class MortalityArray:
    deaths: np.ndarray
    exposures: np.ndarray
    ages: np.ndarray
    years: np.ndarray
    area_ids: tuple
    centroids: np.ndarray
    sex: str = ""
    open_interval: bool = True

    def __post_init__(self):
        deaths = np.asarray(self.deaths, dtype=float)
        exposures = np.asarray(self.exposures, dtype=float)
        ages = np.asarray(self.ages, dtype=np.int64)
        years = np.asarray(self.years, dtype=np.int64)
        centroids = np.asarray(self.centroids, dtype=float)
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "exposures", exposures)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "area_ids", tuple(str(a) for a in self.area_ids))
        object.__setattr__(self, "centroids", centroids)
        self._validate()

    def _validate(self):
        m, n, l = len(self.ages), len(self.area_ids), len(self.years)
        if self.deaths.shape != (m, n, l) or self.exposures.shape != (m, n, l):
            raise DataError(
                f"array shapes {self.deaths.shape}/{self.exposures.shape} "
                f"do not match axes ({m}, {n}, {l})"
            )
        if self.centroids.shape != (n, 2):
            raise DataError(f"centroids must have shape ({n}, 2), got {self.centroids.shape}")
        if not np.all(np.isfinite(self.deaths)) or np.any(self.deaths < 0):
            raise DataError("deaths must be finite and non-negative")
        if np.any(self.deaths != np.round(self.deaths)):
            raise DataError("deaths must be integer-valued")
        if not np.all(np.isfinite(self.exposures)) or np.any(self.exposures < 0):
            raise DataError("exposures must be finite and non-negative")
        if m and np.any(np.diff(self.ages) <= 0):
            raise DataError("ages must be strictly increasing")
        if l and np.any(np.diff(self.years) != 1):
            raise DataError("years must be consecutive and increasing")
        if len(set(self.area_ids)) != n:
            raise DataError("area identifiers must be unique")
        if not np.all(np.isfinite(self.centroids)):
            raise DataError("centroids must be finite")

    @property
    def shape(self):
        return self.deaths.shape

    @property
    def open_age(self):
        return int(self.ages[-1]) if self.open_interval else None

    def replace(self, **changes) -> "MortalityArray":
        fields = dict(
            deaths=self.deaths, exposures=self.exposures, ages=self.ages,
            years=self.years, area_ids=self.area_ids, centroids=self.centroids,
            sex=self.sex, open_interval=self.open_interval,
        )
        fields.update(changes)
        return MortalityArray(**fields)

    def year_index(self, year: int) -> int:
        hits = np.flatnonzero(self.years == int(year))
        if hits.size == 0:
            raise DataError(
                f"year {year} outside fitted range {self.years[0]}-{self.years[-1]}"
            )
        return int(hits[0])


@dataclass(frozen=True)
class AugmentedArray:
    """Area data plus an extra "all areas" row of totals."""

    base: MortalityArray
    totals_deaths: np.ndarray = field(init=False)
    totals_exposures: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "totals_deaths", self.base.deaths.sum(axis=1))
        object.__setattr__(self, "totals_exposures", self.base.exposures.sum(axis=1))

    def stacked(self):
        """Deaths and exposures with the totals appended as area slot ``n``."""
        y = np.concatenate([self.base.deaths, self.totals_deaths[:, None, :]], axis=1)
        e = np.concatenate([self.base.exposures, self.totals_exposures[:, None, :]], axis=1)
        return y, e


def _skip_comments(path) -> int:
    count = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            count += 1
    return count


def _read_table(path, columns, what) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    df = pd.read_csv(
        path, skiprows=_skip_comments(path), dtype={"area_id": str},
        encoding="utf-8", float_precision="round_trip",
    )
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{what} file {path} lacks columns {missing}")
    return df[columns]


def _to_grid(df, ages, areas, years, what):
    m, n, l = len(ages), len(areas), len(years)
    i = np.searchsorted(ages, df["age"].to_numpy())
    j = np.searchsorted(areas, df["area_id"].to_numpy())
    k = np.searchsorted(years, df["year"].to_numpy())
    flat = (i * n + j) * l + k
    counts = np.bincount(flat, minlength=m * n * l)
    if np.any(counts > 1):
        first = int(np.flatnonzero(counts > 1)[0])
        a, b, c = np.unravel_index(first, (m, n, l))
        raise DataError(
            f"duplicate cell in {what}: (age={ages[a]}, area_id={areas[b]}, year={years[c]})"
        )
    if np.any(counts == 0):
        first = int(np.flatnonzero(counts == 0)[0])
        a, b, c = np.unravel_index(first, (m, n, l))
        raise DataError(
            f"incomplete grid in {what}: missing (age={ages[a]}, area_id={areas[b]}, year={years[c]})"
        )
    out = np.empty(m * n * l)
    out[flat] = df["count"].to_numpy(dtype=float)
    return out.reshape(m, n, l)


def load_csv(deaths_path, exposures_path, centroids_path, sex="") -> MortalityArray:
    """Read long-format ``age,area_id,year,count`` files into a dense array.

    The grid is the product of every age, area and year seen in either
    file; each file must hold each cell exactly once.
    """
    deaths = _read_table(deaths_path, COUNT_COLUMNS, "deaths")
    exposures = _read_table(exposures_path, COUNT_COLUMNS, "exposures")
    centroids = _read_table(centroids_path, CENTROID_COLUMNS, "centroids")

    both = pd.concat([deaths, exposures])
    if both[["age", "year"]].isna().any().any() or both["area_id"].isna().any():
        raise DataError("missing key values in deaths/exposures files")
    ages = np.unique(both["age"].to_numpy(dtype=np.int64))
    years = np.unique(both["year"].to_numpy(dtype=np.int64))
    areas = np.array(sorted(set(both["area_id"])), dtype=object)

    y = _to_grid(deaths, ages, areas, years, "deaths")
    e = _to_grid(exposures, ages, areas, years, "exposures")

    if centroids["area_id"].duplicated().any():
        dup = centroids.loc[centroids["area_id"].duplicated(), "area_id"].iloc[0]
        raise DataError(f"duplicate cell in centroids: area_id={dup}")
    cmap = centroids.set_index("area_id")
    unknown = [a for a in areas if a not in cmap.index]
    if unknown:
        raise DataError(f"unknown area {unknown[0]!r}: not present in centroid file")
    xy = cmap.loc[list(areas), ["x", "y"]].to_numpy(dtype=float)

    return MortalityArray(
        deaths=y, exposures=e, ages=ages, years=years,
        area_ids=tuple(areas), centroids=xy, sex=sex,
    )


def to_long_frames(data: MortalityArray):
    """Long-format (deaths, exposures, centroids) frames in canonical order."""
    m, n, l = data.shape
    age, area, year = np.meshgrid(
        data.ages, np.arange(n), data.years, indexing="ij"
    )
    ids = np.asarray(data.area_ids, dtype=object)[area.ravel()]
    keys = {"age": age.ravel(), "area_id": ids, "year": year.ravel()}
    deaths = pd.DataFrame({**keys, "count": data.deaths.ravel().astype(np.int64)})
    exposures = pd.DataFrame({**keys, "count": data.exposures.ravel()})
    centroids = pd.DataFrame({
        "area_id": list(data.area_ids),
        "x": data.centroids[:, 0],
        "y": data.centroids[:, 1],
    })
    return deaths, exposures, centroids


def write_frame(df: pd.DataFrame, path, comment: str | None = None):
    """Write a CSV with an optional leading ``#`` comment line."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        df.to_csv(fh, index=False, lineterminator="\n", float_format=None)


def write_csv(data: MortalityArray, deaths_path, exposures_path, centroids_path, comment=None):
    deaths, exposures, centroids = to_long_frames(data)
    write_frame(deaths, deaths_path, comment)
    write_frame(exposures, exposures_path, comment)
    write_frame(centroids, centroids_path, comment)


def repair_exposures(data: MortalityArray):
    """Give zero-exposure cells with deaths an exposure equal to their deaths.

    The added person-years are taken from the other ages of the same
    (area, year) in proportion to their original exposures, so column
    totals do not change.  Several such cells in one column are repaired
    together and none of them is part of the redistribution base.

    Returns the repaired array and a report frame with one row per
    repaired cell.
    """
    y, e = data.deaths, data.exposures
    bad = (y > 0) & (e == 0)
    if not bad.any():
        return data, pd.DataFrame(columns=REPORT_COLUMNS)

    added = np.where(bad, y, 0.0).sum(axis=0)
    base = np.where(bad, 0.0, e).sum(axis=0)
    cols = added > 0
    problem = cols & (base <= added)
    if problem.any():
        j, k = np.argwhere(problem)[0]
        raise DataError(
            f"unrepairable column (area_id={data.area_ids[j]}, year={data.years[k]}): "
            f"other ages hold {base[j, k]:g} person-years, {added[j, k]:g} needed"
        )
    scale = np.ones_like(base)
    scale[cols] = 1.0 - added[cols] / base[cols]
    new = np.where(bad, y, e * scale[None, :, :])

    i, j, k = np.nonzero(bad)
    report = pd.DataFrame({
        "age": data.ages[i],
        "area_id": np.asarray(data.area_ids, dtype=object)[j],
        "year": data.years[k],
        "old_exposure": e[i, j, k],
        "new_exposure": new[i, j, k],
    })
    log.info("repaired %d zero-exposure cells (%.4f%% of cells)", len(report), 100 * len(report) / y.size)
    return data.replace(exposures=new), report


def augment_with_totals(data: MortalityArray) -> AugmentedArray:
    return AugmentedArray(data)


def aggregate(data: MortalityArray, grouping: Mapping[str, str]) -> MortalityArray:
    """Sum deaths and exposures within groups of areas.

    Group centroids are exposure-weighted means of the member centroids.
    """
    unmapped = [a for a in data.area_ids if a not in grouping]
    if unmapped:
        raise DataError(f"unknown area {unmapped[0]!r}: not covered by grouping")
    labels = np.array([str(grouping[a]) for a in data.area_ids], dtype=object)
    groups = sorted(set(labels))
    member = np.zeros((len(data.area_ids), len(groups)))
    member[np.arange(len(labels)), np.searchsorted(np.array(groups, dtype=object), labels)] = 1.0

    deaths = np.einsum("ijk,jg->igk", data.deaths, member)
    exposures = np.einsum("ijk,jg->igk", data.exposures, member)
    weight = data.exposures.sum(axis=(0, 2))[:, None] * member
    total = weight.sum(axis=0)
    plain = member / member.sum(axis=0)
    weight = np.where(total > 0, weight / np.where(total > 0, total, 1.0), plain)
    centroids = weight.T @ data.centroids
    return data.replace(
        deaths=deaths, exposures=exposures, area_ids=tuple(groups), centroids=centroids
    )


def read_grouping(path) -> dict:
    """Read an ``area_id,group_id`` CSV into a mapping."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"grouping file not found: {path}")
    df = pd.read_csv(path, skiprows=_skip_comments(path), dtype=str)
    if list(df.columns[:2]) != ["area_id", "group_id"]:
        raise DataError("grouping file must have columns area_id,group_id")
    return dict(zip(df["area_id"], df["group_id"]))
