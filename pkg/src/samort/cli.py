"""Command-line front end: ``samort fit|grid|derive|validate|simulate``.

One TOML file drives a run.  Relative paths inside it resolve against the
file's directory and command-line flags override its values.  Exit codes:
0 success, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import __version__, artifact
from .basis import BasisConfig, build_basis_set
from .data import (
    REPORT_COLUMNS,
    augment_with_totals,
    load_csv,
    read_grouping,
    repair_exposures,
    to_long_frames,
    write_frame,
)
from .errors import DataError, NumericalError, SamortError
from .inference import classify_difference, classify_significance, quantile_interval, sample_coefficients
from .lifetable import e0_point_and_draws, id_table, region_e0_point_and_draws
from .penalty import PenaltyConfig
from .simulate import Scenario, generate
from .solver import (
    STAGE1_KEYS,
    STAGE2_KEYS,
    IterationControls,
    fit,
    fitted_deaths,
    grid_search,
    validate_aggregation,
)

log = logging.getLogger("samort")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
ARTIFACT_NAME = "model.samort"
DEFAULT_DRAWS = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- config

def read_config(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"cannot parse config {path}: {exc}") from exc
    return cfg, path.resolve().parent


def config_hash(cfg) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _section(cfg, name, allowed):
    sec = dict(cfg.get(name, {}))
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise DataError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    return sec


def _resolve(base, value):
    p = Path(value)
    return p if p.is_absolute() else base / p


def _basis_config(cfg):
    return BasisConfig(**_section(cfg, "basis", BasisConfig.__dataclass_fields__))


def _controls(cfg):
    return IterationControls(**_section(cfg, "controls", IterationControls.__dataclass_fields__))


def _lifetable_options(cfg):
    return _section(cfg, "lifetable", ("a0", "ax"))


def _bootstrap(cfg):
    sec = _section(cfg, "bootstrap", ("draws", "seed", "level"))
    return {"draws": int(sec.get("draws", DEFAULT_DRAWS)), "seed": int(sec.get("seed", 0)),
            "level": float(sec.get("level", 0.95))}


def _comment(digest):
    return f"samort {__version__} config={digest}"


def _load_data(cfg, base):
    sec = _section(cfg, "data", ("deaths", "exposures", "centroids", "sex", "repair"))
    for key in ("deaths", "exposures", "centroids"):
        if key not in sec:
            raise DataError(f"[data] is missing '{key}'")
    data = load_csv(_resolve(base, sec["deaths"]), _resolve(base, sec["exposures"]),
                    _resolve(base, sec["centroids"]), sex=sec.get("sex", ""))
    report = pd.DataFrame(columns=REPORT_COLUMNS)
    if sec.get("repair", True):
        data, report = repair_exposures(data)
    return data, report


def _out_dir(cfg, base, flag):
    if flag:
        return Path(flag)
    sec = _section(cfg, "output", ("dir",))
    return _resolve(base, sec.get("dir", "out"))


@contextmanager
def _outputs():
    """Track written files; remove them all if the command fails."""
    written = []
    try:
        yield written
    except BaseException:
        for p in written:
            Path(p).unlink(missing_ok=True)
        raise


def _write(written, df, path, comment):
    written.append(path)
    write_frame(df, path, comment)


def _summary(lines):
    for key, value in lines:
        print(f"{key}={value}")


# ---------------------------------------------------------------- commands

def _run_grid(cfg, data, basis, workers):
    grid_sec = dict(cfg.get("grid", {}))
    configured = int(grid_sec.pop("workers", 1))
    workers = workers or configured
    unknown = sorted(set(grid_sec) - set(STAGE1_KEYS + STAGE2_KEYS))
    if unknown:
        raise DataError(f"unknown key(s) in [grid]: {', '.join(unknown)}")
    base = PenaltyConfig(**_section(cfg, "penalty", PenaltyConfig.__dataclass_fields__))
    return grid_search(augment_with_totals(data), basis, grid_sec, _controls(cfg), workers=workers, base=base)


def cmd_fit(args):
    cfg, base = read_config(args.config)
    digest = config_hash(cfg)
    comment = _comment(digest)
    out = _out_dir(cfg, base, args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _outputs() as written:
        data, report = _load_data(cfg, base)
        basis_config = _basis_config(cfg)
        basis = build_basis_set(data, basis_config)
        if "grid" in cfg:
            search = _run_grid(cfg, data, basis, args.workers)
            _write(written, search.stage1, out / "stage1.csv", comment)
            _write(written, search.stage2, out / "stage2.csv", comment)
            penalty = search.best
        else:
            penalty = PenaltyConfig(**_section(cfg, "penalty", PenaltyConfig.__dataclass_fields__))
        _write(written, report, out / "repairs.csv", comment)
        result = fit(augment_with_totals(data), basis, penalty, _controls(cfg))
        settings = {"bootstrap": _bootstrap(cfg), "lifetable": _lifetable_options(cfg)}
        path = out / ARTIFACT_NAME
        written.append(path)
        artifact.save(path, artifact.ModelArtifact(
            fit=result, data=data, basis=basis, basis_config=basis_config,
            settings=settings, config_hash=digest, repairs=len(report),
        ))
    m, n, l = data.shape
    _summary([
        ("artifact", path), ("cells", m * n * l), ("areas", n), ("repairs", len(report)),
        ("coefficients", result.theta.size), ("iterations", result.iterations),
        ("converged", str(result.converged).lower()), ("deviance", f"{result.deviance:.6f}"),
        ("effective_dimension", f"{result.effective_dimension:.6f}"), ("hqic", f"{result.hqic:.6f}"),
    ])
    return 0


def cmd_grid(args):
    cfg, base = read_config(args.config)
    if "grid" not in cfg:
        raise DataError("config has no [grid] section")
    comment = _comment(config_hash(cfg))
    out = _out_dir(cfg, base, args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _outputs() as written:
        data, _ = _load_data(cfg, base)
        basis = build_basis_set(data, _basis_config(cfg))
        search = _run_grid(cfg, data, basis, args.workers)
        _write(written, search.stage1, out / "stage1.csv", comment)
        _write(written, search.stage2, out / "stage2.csv", comment)
        best = out / "best.toml"
        written.append(best)
        best.write_text(f"# {comment}\n" + tomli_w.dumps({"penalty": search.best.as_dict()}), encoding="utf-8")
    _summary([("best", best)] + list(search.best.as_dict().items()))
    return 0


def _derive_options(art, args):
    boot = dict(art.settings.get("bootstrap", {}))
    draws = args.draws if args.draws is not None else boot.get("draws", DEFAULT_DRAWS)
    seed = args.seed if args.seed is not None else boot.get("seed", 0)
    level = args.level if args.level is not None else boot.get("level", 0.95)
    return int(draws), int(seed), float(level), dict(art.settings.get("lifetable", {}))


def _pair(args, art):
    if args.from_year is None or args.to_year is None:
        raise UsageError("--from and --to are both required")
    for y in (args.from_year, args.to_year):
        art.data.year_index(y)
    return [args.from_year, args.to_year]


def cmd_derive(args):
    art = artifact.load(args.artifact)
    draws_n, seed, level, lt = _derive_options(art, args)
    comment = _comment(art.config_hash)
    fit_, data = art.fit, art.data
    if args.what == "id":
        draws_n = 0
    draws = sample_coefficients(fit_, B=draws_n, seed=seed) if draws_n > 0 else None
    ids = np.asarray(data.area_ids, dtype=object)

    if args.what == "e0":
        years = args.years
        idx, point, stack = e0_point_and_draws(fit_, data, draws, years, **lt)
        lo, hi = _bounds(stack, point, level)
        table = _area_year_frame(ids, data.years[idx], {"e0": point, "lo": lo, "hi": hi})
    elif args.what == "id":
        years = args.years if args.years else list(data.years)
        idx = [data.year_index(y) for y in years]
        d = fitted_deaths(fit_, data)[:, :, idx]
        table = id_table(d, data.exposures[:, :, idx], data.ages, data.years[idx])
    elif args.what == "change":
        pair = _pair(args, art)
        _, point, stack = e0_point_and_draws(fit_, data, draws, pair, **lt)
        diff = point[:, 1] - point[:, 0]
        lo, hi = _bounds(None if stack is None else stack[..., 1] - stack[..., 0], diff, level)
        table = pd.DataFrame({
            "area_id": ids, "from_year": pair[0], "to_year": pair[1],
            "e0_from": point[:, 0], "e0_to": point[:, 1], "change": diff, "lo": lo, "hi": hi,
        })
    else:
        if draws is None:
            raise UsageError("significance needs --draws > 0")
        table = _significance(args, art, draws, level, lt)

    out = Path(args.out) if args.out else Path(args.artifact).parent / f"{args.what}.csv"
    with _outputs() as written:
        _write(written, table, out, comment)
    _summary([("output", out), ("rows", len(table)), ("draws", draws_n), ("seed", seed), ("level", level)])
    return 0


def _bounds(stack, point, level):
    if stack is None:
        nan = np.full(np.shape(point), np.nan)
        return nan, nan
    return quantile_interval(stack, level)


def _area_year_frame(ids, years, columns):
    n, ly = next(iter(columns.values())).shape
    frame = {"area_id": np.repeat(ids, ly), "year": np.tile(years, n)}
    frame.update({k: np.asarray(v).ravel() for k, v in columns.items()})
    return pd.DataFrame(frame)


def _significance(args, art, draws, level, lt):
    fit_, data = art.fit, art.data
    ids = np.asarray(data.area_ids, dtype=object)
    if args.from_year is not None or args.to_year is not None:
        pair = _pair(args, art)
        _, point, stack = e0_point_and_draws(fit_, data, draws, pair, **lt)
        lo, hi = quantile_interval(stack, level)
        if args.rule == "overlap":
            labels = [classify_significance([(lo[j, 1], hi[j, 1])], (lo[j, 0], hi[j, 0]))[0]
                      for j in range(len(ids))]
        else:
            dlo, dhi = quantile_interval(stack[..., 1] - stack[..., 0], level)
            labels = classify_difference(dlo, dhi)
        return pd.DataFrame({
            "area_id": ids, "from_year": pair[0], "to_year": pair[1],
            "e0_from": point[:, 0], "lo_from": lo[:, 0], "hi_from": hi[:, 0],
            "e0_to": point[:, 1], "lo_to": lo[:, 1], "hi_to": hi[:, 1],
            "rule": args.rule, "label": np.asarray(labels, dtype=object),
        })

    idx, point, stack = e0_point_and_draws(fit_, data, draws, args.years, **lt)
    _, ref_point, ref_stack = region_e0_point_and_draws(fit_, data, draws, args.years, **lt)
    lo, hi = quantile_interval(stack, level)
    ref_lo, ref_hi = quantile_interval(ref_stack, level)
    labels = np.empty(point.shape, dtype=object)
    if args.rule == "overlap":
        for k in range(point.shape[1]):
            labels[:, k] = classify_significance(np.column_stack([lo[:, k], hi[:, k]]), (ref_lo[k], ref_hi[k]))
    else:
        dlo, dhi = quantile_interval(stack - ref_stack[:, None, :], level)
        labels = classify_difference(dlo.ravel(), dhi.ravel()).reshape(point.shape)
    n = point.shape[0]
    return _area_year_frame(ids, data.years[idx], {
        "e0": point, "lo": lo, "hi": hi,
        "ref_e0": np.tile(ref_point, (n, 1)), "ref_lo": np.tile(ref_lo, (n, 1)),
        "ref_hi": np.tile(ref_hi, (n, 1)), "label": labels,
    }).assign(rule=args.rule)


def cmd_validate(args):
    art = artifact.load(args.artifact)
    grouping = read_grouping(args.grouping)
    table = validate_aggregation(art.fit, art.data, grouping, **dict(art.settings.get("lifetable", {})))
    out = Path(args.out) if args.out else Path(args.artifact).parent / "validation.csv"
    with _outputs() as written:
        _write(written, table, out, _comment(art.config_hash))
    _summary([("output", out), ("rows", len(table))])
    return 0


def cmd_simulate(args):
    cfg, base = read_config(args.config)
    comment = _comment(config_hash(cfg))
    sec = _section(cfg, "scenario", Scenario.__dataclass_fields__)
    if args.seed is not None:
        sec["seed"] = args.seed
    scenario = Scenario(**sec)
    data, truth = generate(scenario)
    out = _out_dir(cfg, base, args.out)
    out.mkdir(parents=True, exist_ok=True)
    deaths, exposures, centroids = to_long_frames(data)
    m, n, l = truth.shape
    truth_frame = pd.DataFrame({
        "age": np.repeat(data.ages, n * l),
        "area_id": np.tile(np.repeat(np.asarray(data.area_ids, dtype=object), l), m),
        "year": np.tile(data.years, m * n),
        "eta": truth.ravel(),
    })
    with _outputs() as written:
        for name, frame in (("deaths", deaths), ("exposures", exposures),
                            ("centroids", centroids), ("truth", truth_frame)):
            _write(written, frame, out / f"{name}.csv", comment)
    _summary([("output", out), ("cells", m * n * l), ("deaths", int(data.deaths.sum()))])
    return 0


# ---------------------------------------------------------------- entry

def build_parser():
    parser = _Parser(prog="samort", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"samort {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the model and write an artifact")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--workers", type=int, help="threads for the grid search")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="two-stage smoothing-parameter search")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("derive", help="life expectancy, dissimilarity and change tables")
    p.add_argument("artifact")
    p.add_argument("what", choices=["e0", "id", "change", "significance"])
    p.add_argument("--years", type=int, nargs="+")
    p.add_argument("--from", dest="from_year", type=int)
    p.add_argument("--to", dest="to_year", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--draws", type=int, help="bootstrap draws; 0 disables intervals")
    p.add_argument("--seed", type=int)
    p.add_argument("--rule", choices=["overlap", "difference"], default="overlap")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("validate", help="compare aggregated fitted and direct life expectancy")
    p.add_argument("artifact")
    p.add_argument("grouping", help="CSV with columns area_id,group_id")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="write a synthetic dataset with known truth")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"samort: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"samort: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SamortError, ValueError, TypeError, OSError) as exc:
        print(f"samort: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
