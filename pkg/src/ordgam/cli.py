"""Command-line front end: CSV ingestion, model fitting, and simulations.

Two subcommands:

* ``fit`` reads a declarative JSON model config and a CSV dataset, selects
  smoothing parameters (or uses fixed ones), and writes a text summary, a
  JSON summary, per-term interval bands, and fitted values.
* ``simulate`` runs one of the Monte Carlo studies and writes per-replicate
  records, plot-ready aggregates, and a manifest.

Exit codes: 0 success, 1 usage or input error, 2 fit-quality warning
(outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._version import __version__
from .design import ContinuousTerm, OrdinalTerm
from .fitter import pirls_fit
from .inference import canonical_json, credible_band, summarize, wald_smooth_test
from .model import ModelSpec, ParametricTerm, build_problem
from .smoothness import optimize_lambda
from . import simulate as sim

MISSING_TOKENS = {"", "na", "nan", "null"}
WORKERS_ENV = "ORDGAM_WORKERS"


class ConfigError(ValueError):
    """Malformed model configuration document."""


class DataError(ValueError):
    """CSV contents violate the declared model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    spec: ModelSpec
    ordinal_columns: dict[str, int]  # column -> declared level count

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        for key in ("response", "family", "terms"):
            if key not in doc:
                raise ConfigError(f"config is missing required key {key!r}")
        terms = []
        ordinal = {}
        for i, t in enumerate(doc["terms"]):
            col = t.get("column")
            role = t.get("role")
            if not col or not role:
                raise ConfigError(f"term {i} needs 'column' and 'role'")
            if role == "parametric":
                terms.append(ParametricTerm(col))
            elif role == "ordinal":
                if "k" not in t:
                    raise ConfigError(f"ordinal term {col!r} needs 'k'")
                term = OrdinalTerm(col, int(t["k"]), int(t.get("m", 2)))
                ordinal[col] = term.k
                terms.append(term)
            elif role == "smooth":
                terms.append(ContinuousTerm(col, q=int(t.get("q", 10))))
            else:
                raise ConfigError(f"unknown term role {role!r} for column {col!r}")
        spec = ModelSpec(
            response=doc["response"],
            family=doc["family"],
            terms=tuple(terms),
            criterion=doc.get("criterion", "reml"),
            level=float(doc.get("level", 0.95)),
        )
        return cls(spec=spec, ordinal_columns=ordinal)


@dataclass(frozen=True)
class Dataset:
    columns: dict[str, np.ndarray]
    n: int
    n_dropped: int


def load_csv(path, config: ModelConfig) -> Dataset:
    """Read, type, and validate the columns the model references.

    Rows with missing values in any referenced column are dropped (the
    count is reported on the returned dataset); any other violation raises
    :class:`DataError` naming the offending row and column.
    """
    spec = config.spec
    needed = [spec.response] + [t.column for t in spec.terms]
    raw: dict[str, list] = {c: [] for c in needed}
    kept_rows = 0
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in needed:
            if col not in header:
                raise DataError(f"column {col!r} not found in {path}")
        for lineno, row in enumerate(reader, start=2):
            cells = {c: (row[c] or "").strip() for c in needed}
            if any(c.lower() in MISSING_TOKENS for c in cells.values()):
                dropped += 1
                continue
            for col, cell in cells.items():
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"non-numeric value {cell!r} in column {col!r} "
                        f"at line {lineno}"
                    ) from None
                raw[col].append(value)
            kept_rows += 1
    if kept_rows == 0:
        raise DataError(f"no usable rows in {path}")

    columns = {c: np.array(v, dtype=float) for c, v in raw.items()}
    for col, k in config.ordinal_columns.items():
        vals = columns[col]
        as_int = vals.astype(int)
        bad = np.nonzero((as_int != vals) | (as_int < 1) | (as_int > k))[0]
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"ordinal column {col!r} has value {vals[i]:g} outside 1..{k} "
                f"at data row {i}"
            )
        columns[col] = as_int
    if spec.family == "binomial":
        y = columns[spec.response]
        bad = np.nonzero(~np.isin(y, (0.0, 1.0)))[0]
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"binomial response {spec.response!r} must be 0/1, found "
                f"{y[i]:g} at data row {i}"
            )
    return Dataset(columns=columns, n=kept_rows, n_dropped=dropped)


def _parse_lambda(text: str, n_smooth: int) -> np.ndarray:
    vals = [float(v) for v in text.split(",") if v.strip() != ""]
    if len(vals) == 1:
        vals = vals * n_smooth
    if len(vals) != n_smooth:
        raise ConfigError(
            f"--lambda needs 1 or {n_smooth} values, got {len(vals)}"
        )
    arr = np.array(vals, dtype=float)
    if np.any(arr < 0):
        raise ConfigError("--lambda values must be nonnegative")
    return arr


def cmd_fit(args) -> int:
    config = ModelConfig.from_file(args.config)
    if args.criterion:
        config = ModelConfig(
            spec=ModelSpec(config.spec.response, config.spec.family,
                           config.spec.terms, args.criterion, config.spec.level),
            ordinal_columns=config.ordinal_columns,
        )
    dataset = load_csv(args.data, config)
    problem = build_problem(dataset.columns, config.spec)

    if args.fixed_lambda is not None:
        lam = _parse_lambda(args.fixed_lambda, len(problem.smooth_terms))
        fit = pirls_fit(problem, lam)
    elif problem.smooth_terms:
        fit = optimize_lambda(problem, kind=config.spec.criterion)
    else:
        fit = pirls_fit(problem, np.zeros(0))

    tests = [wald_smooth_test(fit, t.name) for t in problem.smooth_terms]
    bands = [credible_band(fit, t.name, config.spec.level)
             for t in problem.smooth_terms]
    report = summarize(fit, tests=tests, bands=bands, level=config.spec.level)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "summary.txt").write_text(report.text(), encoding="utf-8")
    doc = report.to_dict()
    doc["n_dropped_rows"] = dataset.n_dropped
    doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    (outdir / "summary.json").write_text(canonical_json(doc), encoding="utf-8")

    with open(outdir / "intervals.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "x", "fit", "se", "lower", "upper"])
        for band in bands:
            for i in range(len(band.x)):
                writer.writerow([band.term, repr(float(band.x[i])),
                                 repr(float(band.fit[i])), repr(float(band.se[i])),
                                 repr(float(band.lower[i])), repr(float(band.upper[i]))])
    eta, mu = fit.eta, fit.mu
    with open(outdir / "fitted.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "eta", "mu"])
        for i in range(problem.n):
            writer.writerow([i, repr(float(eta[i])), repr(float(mu[i]))])

    print(report.text(), end="")
    if dataset.n_dropped:
        print(f"note: dropped {dataset.n_dropped} rows with missing values",
              file=sys.stderr)
    if not fit.converged or fit.ridged:
        print("warning: fit flagged (non-convergence or ridge rescue)",
              file=sys.stderr)
        return 2
    return 0


def _psi_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def cmd_simulate(args) -> int:
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    common = dict(replicates=args.replicates, seed=args.seed, workers=workers)
    if args.study == "null-calibration":
        report = sim.run_null_calibration(m=args.m, **common)
    elif args.study == "size-power":
        psi_grid = _psi_list(args.psi) if args.psi else None
        report = sim.run_size_power(family=args.family, shape=args.shape,
                                    psi_grid=psi_grid, n=args.n, m=args.m,
                                    z_form=args.z_form, **common)
    elif args.study == "coverage":
        psi = float(args.psi) if args.psi else None
        report = sim.run_coverage(family=args.family, shape=args.shape,
                                  psi=psi, n=args.n, level=args.level,
                                  z_form=args.z_form, **common)
    elif args.study == "mse":
        psi = float(args.psi) if args.psi else None
        report = sim.run_mse(family=args.family, shape=args.shape, psi=psi,
                             n=args.n, z_form=args.z_form, **common)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown study {args.study!r}")
    paths = report.write(args.out)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordgam",
        description="Penalized additive modeling with ordinal smoothing penalties",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model from a JSON config and CSV data")
    fit.add_argument("--config", required=True, help="model config JSON file")
    fit.add_argument("--data", required=True, help="CSV dataset with header row")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--lambda", dest="fixed_lambda", default=None,
                     help="fixed smoothing parameter(s), comma separated")
    fit.add_argument("--criterion", choices=("reml", "ml"), default=None,
                     help="override the config's selection criterion")
    fit.set_defaults(func=cmd_fit)

    simp = sub.add_parser("simulate", help="run a Monte Carlo study")
    simp.add_argument("study", choices=("null-calibration", "size-power",
                                        "coverage", "mse"))
    simp.add_argument("--family", choices=("gaussian", "logit"),
                      default="gaussian")
    simp.add_argument("--shape", choices=("near-linear", "non-monotone"),
                      default="non-monotone")
    simp.add_argument("--psi", default=None,
                      help="effect size (grid for size-power, scalar otherwise)")
    simp.add_argument("--n", type=int, default=100)
    simp.add_argument("--m", type=int, choices=(1, 2), default=2,
                      help="difference-penalty order for the ordinal smooth")
    simp.add_argument("--replicates", type=int, default=1000)
    simp.add_argument("--seed", type=int, default=1)
    simp.add_argument("--workers", type=int, default=None,
                      help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    simp.add_argument("--level", type=float, default=0.95)
    simp.add_argument("--z-form", choices=("smooth", "sqrt"), default="smooth",
                      help="how the continuous confounder enters the fitted model")
    simp.add_argument("--out", required=True, help="output directory")
    simp.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
