"""Versioned binary container for a fitted model.

Layout (all integers little-endian)::

    8 bytes   magic  b"SAMORTFT"
    uint32    format version
    uint64    header length in bytes
    header    UTF-8 JSON, keys sorted
    payload   arrays back to back, little-endian, C order

The header lists every array with its dtype, shape, byte offset into the
payload and byte length, plus the configuration needed to rebuild the
basis and design.  Readers reject versions newer than their own.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, glam
from .basis import BasisConfig, BasisSet, build_basis_set
from .data import MortalityArray
from .errors import DataError, SamortError
from .penalty import PenaltyConfig
from .solver import FitResult

MAGIC = b"SAMORTFT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ArtifactError(SamortError):
    pass


@dataclass
class ModelArtifact:
    fit: FitResult
    data: MortalityArray
    basis: BasisSet
    basis_config: BasisConfig
    settings: dict
    config_hash: str
    repairs: int = 0


def _le(arr):
    arr = np.ascontiguousarray(arr)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save(path, artifact: ModelArtifact) -> None:
    fit, data = artifact.fit, artifact.data
    c, lower = fit.factor
    factor = np.tril(c) if lower else np.triu(c)
    arrays = {
        "theta": fit.theta,
        "factor": factor,
        "deaths": data.deaths,
        "exposures": data.exposures,
        "ages": np.asarray(data.ages, dtype=np.int64),
        "years": np.asarray(data.years, dtype=np.int64),
        "centroids": data.centroids,
    }
    table, chunks, offset = {}, [], 0
    for name, arr in arrays.items():
        raw = _le(arr).tobytes()
        table[name] = {"dtype": _le(arr).dtype.str, "shape": list(np.shape(arr)),
                       "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = {
        "package_version": __version__,
        "arrays": table,
        "area_ids": list(data.area_ids),
        "sex": data.sex,
        "open_interval": bool(data.open_interval),
        "basis": _basis_dict(artifact.basis_config),
        "penalty": fit.penalty.as_dict(),
        "factor_lower": bool(lower),
        "scalars": {
            "deviance": fit.deviance,
            "effective_dimension": fit.effective_dimension,
            "hqic": fit.hqic,
            "n_obs": fit.n_obs,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "repairs": int(artifact.repairs),
        },
        "settings": artifact.settings,
        "config_hash": artifact.config_hash,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def _basis_dict(config: BasisConfig):
    out = asdict(config)
    out["shock_years"] = [int(y) for y in config.shock_years]
    return out


def load(path) -> ModelArtifact:
    path = Path(path)
    if not path.exists():
        raise DataError(f"artifact not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise ArtifactError(f"{path} is too short to be a model artifact")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ArtifactError(f"{path} is not a model artifact (bad magic bytes)")
    if version > FORMAT_VERSION:
        raise ArtifactError(
            f"{path} has artifact format version {version}; this reader supports up to {FORMAT_VERSION}"
        )
    start = _PREFIX.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    payload = memoryview(raw)[start + hlen:]
    arrays = {}
    for name, meta in header["arrays"].items():
        buf = payload[meta["offset"]:meta["offset"] + meta["nbytes"]]
        if len(buf) != meta["nbytes"]:
            raise ArtifactError(f"{path} is truncated (array {name})")
        arrays[name] = np.frombuffer(buf, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).astype(
            np.dtype(meta["dtype"]).newbyteorder("="))

    data = MortalityArray(
        deaths=arrays["deaths"], exposures=arrays["exposures"], ages=arrays["ages"],
        years=arrays["years"], area_ids=tuple(header["area_ids"]), centroids=arrays["centroids"],
        sex=header["sex"], open_interval=header["open_interval"],
    )
    bconf = dict(header["basis"])
    bconf["shock_years"] = tuple(bconf["shock_years"])
    basis_config = BasisConfig(**bconf)
    basis = build_basis_set(data, basis_config)
    design = glam.BlockDesign.from_basis(basis)
    theta = arrays["theta"]
    if theta.size != design.layout.total:
        raise ArtifactError(f"{path}: coefficient count {theta.size} does not match rebuilt design")
    s = header["scalars"]
    fit = FitResult(
        theta=theta, design=design, penalty=PenaltyConfig(**header["penalty"]),
        eta=glam.predictor_array(design, theta), deviance=s["deviance"],
        effective_dimension=s["effective_dimension"], hqic=s["hqic"], n_obs=s["n_obs"],
        factor=(arrays["factor"], header["factor_lower"]), converged=s["converged"],
        iterations=s["iterations"],
    )
    return ModelArtifact(fit=fit, data=data, basis=basis, basis_config=basis_config,
                         settings=header["settings"], config_hash=header["config_hash"],
                         repairs=s["repairs"])
