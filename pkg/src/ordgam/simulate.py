"""Monte Carlo harness: calibration, size/power, coverage, and accuracy.

Four studies over a common data-generating process with a uniform
continuous confounder z and a six-level ordinal predictor x:

* ``run_null_calibration`` bootstraps responses from a fitted
  confounder-only binomial model and records the ordinal smooth's test
  p-value under the true null.
* ``run_size_power`` sweeps the effect size and compares the penalized
  ordinal smooth test against a linear z-test and an unpenalized factor
  analysis-of-deviance test.
* ``run_coverage`` checks pointwise credible-band coverage of the centered
  level effects.
* ``run_mse`` compares squared estimation errors across estimators.

Replicates draw from counter-based Philox streams keyed by (seed,
replicate index), so results are bit-identical regardless of how many
worker processes are used.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from scipy.stats import chi2, kstest, norm

from ._version import __version__
from .datasets import synthetic_bpd
from .design import ContinuousTerm, OrdinalTerm
from .fitter import FittedGam, pirls_fit
from .inference import canonical_json, term_values, wald_smooth_test
from .model import FactorTerm, ModelSpec, ParametricTerm, build_problem
from .smoothness import optimize_lambda

GAUSSIAN_PSI_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
LOGIT_PSI_GRID = (0.0, 0.4, 0.8, 1.2, 1.6, 2.0)
COVERAGE_PSI = {"gaussian": 0.8, "logit": 1.6}
SSE_CAP = 1e4
SEPARATION_COEF = 10.0

_NEAR_LINEAR_RAW = np.array([0.0, 0.08, 0.41, 0.61, 0.68, 1.0])
_NON_MONOTONE_RAW = np.array([0.0, 1.0, 0.3, 0.9, 0.1, 0.6])


@dataclass(frozen=True)
class SimScenario:
    """One cell of the simulation design."""

    family: str = "gaussian"       # gaussian | logit
    shape: str = "non-monotone"    # near-linear | non-monotone
    psi: float = 0.0
    n: int = 100
    k: int = 6
    replicates: int = 1000
    seed: int = 1
    z_form: str = "smooth"         # smooth | sqrt

    def __post_init__(self):
        if self.family not in ("gaussian", "logit"):
            raise ValueError(f"family must be 'gaussian' or 'logit', got {self.family!r}")
        if self.shape not in ("near-linear", "non-monotone"):
            raise ValueError(f"unknown truth shape {self.shape!r}")
        if self.psi < 0:
            raise ValueError("effect size psi must be nonnegative")
        if self.n < 20:
            raise ValueError("sample size must be at least 20")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.z_form not in ("smooth", "sqrt"):
            raise ValueError(f"z_form must be 'smooth' or 'sqrt', got {self.z_form!r}")

    def to_dict(self) -> dict:
        return {"family": self.family, "shape": self.shape, "psi": self.psi,
                "n": self.n, "k": self.k, "replicates": self.replicates,
                "seed": self.seed, "z_form": self.z_form}


def truth_function(shape: str, k: int = 6) -> np.ndarray:
    """Centered unit-range level effects used as simulation truth."""
    if k != 6:
        raise ValueError("canonical truth vectors are defined for k = 6")
    raw = {"near-linear": _NEAR_LINEAR_RAW,
           "non-monotone": _NON_MONOTONE_RAW}.get(shape)
    if raw is None:
        raise ValueError(f"unknown truth shape {shape!r}")
    return raw - raw.mean()


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    """Counter-based stream for one replicate; independent across reps."""
    key = np.array([np.uint64(seed), np.uint64(rep)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_base(scenario: SimScenario, rep: int):
    """Covariates and the noise/uniform draws shared across effect sizes."""
    rng = replicate_rng(scenario.seed, rep)
    z = rng.random(scenario.n)
    x = rng.integers(1, scenario.k + 1, scenario.n)
    noise = rng.standard_normal(scenario.n) if scenario.family == "gaussian" \
        else rng.random(scenario.n)
    return z, x, noise


def _assemble(scenario: SimScenario, z, x, noise, psi: float) -> dict:
    f = truth_function(scenario.shape, scenario.k)
    effect = psi * f[x - 1]
    if scenario.family == "gaussian":
        y = 3.0 * np.sqrt(z) + effect + noise
    else:
        eta = -2.0 + 4.0 * np.sqrt(z) + effect
        y = (noise < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return {"y": y, "z": z, "sqrt_z": np.sqrt(z), "x": x}


def generate_replicate(scenario: SimScenario, rep: int) -> dict:
    """Dataset for one replicate, deterministic given (seed, rep)."""
    z, x, noise = _draw_base(scenario, rep)
    return _assemble(scenario, z, x, noise, scenario.psi)


# ---------------------------------------------------------------------------
# estimator fits


def _family_name(scenario: SimScenario) -> str:
    return "gaussian" if scenario.family == "gaussian" else "binomial"


def _z_terms(scenario: SimScenario) -> tuple:
    if scenario.z_form == "smooth":
        return (ContinuousTerm("z", q=10),)
    return (ParametricTerm("sqrt_z"),)


def _select_and_fit(problem, start=None) -> FittedGam:
    if problem.smooth_terms:
        return optimize_lambda(problem, start_log_lambda=start)
    return pirls_fit(problem, np.zeros(0))


def _fit_ordinal(data, scenario: SimScenario, m: int) -> FittedGam:
    spec = ModelSpec("y", _family_name(scenario),
                     _z_terms(scenario) + (OrdinalTerm("x", scenario.k, m),))
    return _select_and_fit(build_problem(data, spec))


def _centered_levels(fit: FittedGam, term: str = "s(x)"):
    _, f, V = term_values(fit, term)
    fc = f - f.mean()
    Vc = V - V.mean(axis=0, keepdims=True)
    Vc = Vc - Vc.mean(axis=1, keepdims=True)
    return fc, Vc


def _fit_linear(data, scenario: SimScenario):
    """x as a numeric linear column; normal-reference test on its slope."""
    spec = ModelSpec("y", _family_name(scenario),
                     _z_terms(scenario) + (ParametricTerm("x"),))
    d = dict(data)
    d["x"] = np.asarray(data["x"], dtype=float)
    problem = build_problem(d, spec)
    fit = _select_and_fit(problem)
    j = problem.term("x").sl.start
    est = float(fit.beta[j])
    se = float(np.sqrt(max(fit.V_beta[j, j], 0.0)))
    zval = est / se if se > 0 else 0.0
    p = 2.0 * float(norm.sf(abs(zval)))
    levels = np.arange(1, scenario.k + 1, dtype=float)
    fc = est * (levels - levels.mean())
    return fit, p, fc


def _fit_factor(data, scenario: SimScenario):
    """Unpenalized factor fit and the analysis-of-deviance test against it."""
    fam = _family_name(scenario)
    null_spec = ModelSpec("y", fam, _z_terms(scenario))
    full_spec = ModelSpec("y", fam, _z_terms(scenario) + (FactorTerm("x", scenario.k),))
    fit_null = _select_and_fit(build_problem(data, null_spec))
    fit_full = _select_and_fit(build_problem(data, full_spec))
    drop = max(fit_null.deviance - fit_full.deviance, 0.0)
    if fam == "gaussian":
        stat = drop / fit_full.scale
    else:
        stat = drop
    df = scenario.k - 1
    p = float(chi2.sf(stat, df))

    sl = fit_full.problem.term("factor(x)").sl
    coefs = fit_full.beta[sl]
    f = np.concatenate([[0.0], coefs])
    fc = f - f.mean()

    separated = False
    if fam == "binomial":
        y, x = data["y"], np.asarray(data["x"])
        for level in range(1, scenario.k + 1):
            cell = y[x == level]
            if cell.size and (np.all(cell == 0) or np.all(cell == 1)):
                separated = True
                break
        if np.max(np.abs(coefs)) > SEPARATION_COEF:
            separated = True
    return fit_full, fit_null, p, fc, separated


# ---------------------------------------------------------------------------
# replicate workers

_CTX: dict | None = None


def _init_worker(ctx: dict) -> None:
    global _CTX
    _CTX = ctx


def _pool_entry(rep: int):
    return _REP_FUNCS[_CTX["study"]](rep, _CTX)


def _run_replicates(study: str, ctx: dict, replicates: int, workers: int) -> list:
    ctx = dict(ctx, study=study)
    if workers <= 1:
        _init_worker(ctx)
        out = [_pool_entry(r) for r in range(replicates)]
        _init_worker(None)
        return out
    with get_context("fork").Pool(
        processes=workers, initializer=_init_worker, initargs=(ctx,)
    ) as pool:
        chunk = max(1, replicates // (workers * 8))
        return pool.map(_pool_entry, range(replicates), chunksize=chunk)


def _rep_null_calibration(rep: int, ctx: dict) -> list[dict]:
    rng = replicate_rng(ctx["seed"], rep)
    mu = ctx["mu"]
    ystar = (rng.random(mu.shape[0]) < mu).astype(float)
    problem = ctx["problem"].with_response(ystar)
    fit = optimize_lambda(problem, start_log_lambda=ctx["start"])
    test = wald_smooth_test(fit, ctx["x_term"])
    return [{
        "rep": rep,
        "p_value": test.p_value,
        "edf": test.edf,
        "statistic": test.statistic,
        "boundary": int(ctx["x_term"] in fit.boundary),
        "converged": int(fit.converged),
    }]


def _rep_size_power(rep: int, ctx: dict) -> list[dict]:
    scenario: SimScenario = ctx["scenario"]
    z, x, noise = _draw_base(scenario, rep)
    rows = []
    for psi in ctx["psi_grid"]:
        data = _assemble(scenario, z, x, noise, psi)
        fit = _fit_ordinal(data, scenario, ctx["m"])
        test = wald_smooth_test(fit, "s(x)")
        rows.append({"rep": rep, "psi": psi, "estimator": f"smooth-m{ctx['m']}",
                     "p_value": test.p_value, "separated": 0,
                     "converged": int(fit.converged)})
        lin_fit, p_lin, _ = _fit_linear(data, scenario)
        rows.append({"rep": rep, "psi": psi, "estimator": "linear",
                     "p_value": p_lin, "separated": 0,
                     "converged": int(lin_fit.converged)})
        ff, fn, p_fac, _, sep = _fit_factor(data, scenario)
        rows.append({"rep": rep, "psi": psi, "estimator": "factor",
                     "p_value": p_fac, "separated": int(sep),
                     "converged": int(ff.converged and fn.converged)})
    return rows


def _rep_coverage(rep: int, ctx: dict) -> list[dict]:
    scenario: SimScenario = ctx["scenario"]
    data = generate_replicate(scenario, rep)
    truth_c = scenario.psi * truth_function(scenario.shape, scenario.k)
    zq = norm.ppf(0.5 + 0.5 * ctx["level"])
    rows = []
    for m in (1, 2):
        fit = _fit_ordinal(data, scenario, m)
        fc, Vc = _centered_levels(fit)
        se = np.sqrt(np.clip(np.diag(Vc), 0.0, None))
        covered = np.abs(fc - truth_c) <= zq * se
        row = {"rep": rep, "m": m, "converged": int(fit.converged),
               "sse": float(np.sum((fc - truth_c) ** 2))}
        for lvl in range(scenario.k):
            row[f"cover_{lvl + 1}"] = int(covered[lvl])
        rows.append(row)
    return rows


def _rep_mse(rep: int, ctx: dict) -> list[dict]:
    scenario: SimScenario = ctx["scenario"]
    data = generate_replicate(scenario, rep)
    truth_c = scenario.psi * truth_function(scenario.shape, scenario.k)
    rows = []

    def sse_row(estimator, fc, converged, separated=False):
        sse = float(np.sum((fc - truth_c) ** 2))
        capped = sse > SSE_CAP
        rows.append({"rep": rep, "estimator": estimator,
                     "sse": min(sse, SSE_CAP), "separated": int(separated),
                     "capped": int(capped), "converged": int(converged)})

    for m in (1, 2):
        fit = _fit_ordinal(data, scenario, m)
        fc, _ = _centered_levels(fit)
        sse_row(f"smooth-m{m}", fc, fit.converged)
    lin_fit, _, fc_lin = _fit_linear(data, scenario)
    sse_row("linear", fc_lin, lin_fit.converged)
    ff, fn, _, fc_fac, sep = _fit_factor(data, scenario)
    sse_row("factor", fc_fac, ff.converged and fn.converged, separated=sep)
    return rows


_REP_FUNCS = {
    "null-calibration": _rep_null_calibration,
    "size-power": _rep_size_power,
    "coverage": _rep_coverage,
    "mse": _rep_mse,
}


# ---------------------------------------------------------------------------
# report container


@dataclass
class SimReport:
    study: str
    scenario: dict
    records: list[dict]
    aggregates: dict
    replicates: int
    n_nonconverged: int
    seed: int
    wall_time: float
    aggregate_rows: list[dict] = field(default_factory=list)

    def write(self, outdir) -> dict[str, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "records": out / f"{self.study}_records.csv",
            "aggregates": out / f"{self.study}_aggregates.csv",
            "manifest": out / f"{self.study}_manifest.json",
        }
        _write_csv(paths["records"], self.records)
        _write_csv(paths["aggregates"], self.aggregate_rows)
        manifest = {
            "study": self.study,
            "scenario": self.scenario,
            "seed": self.seed,
            "replicates": self.replicates,
            "n_records": len(self.records),
            "n_nonconverged": self.n_nonconverged,
            "aggregates": self.aggregates,
            "wall_time_s": round(self.wall_time, 3),
            "version": __version__,
        }
        paths["manifest"].write_text(canonical_json(manifest), encoding="utf-8")
        return paths


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            fh.write("")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt_cell(v) for k, v in row.items()})


def _fmt_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _flatten(results: list) -> list[dict]:
    return [row for chunk in results for row in chunk]


def _drop_nonconverged(rows: list[dict], keep_separated: bool = False):
    kept, dropped = [], 0
    for r in rows:
        if r.get("converged", 1) or (keep_separated and r.get("separated", 0)):
            kept.append(r)
        else:
            dropped += 1
    return kept, dropped


# ---------------------------------------------------------------------------
# study drivers


def confounder_model_spec() -> ModelSpec:
    """Binomial confounder-only model for the bundled synthetic cohort."""
    return ModelSpec("y", "binomial", (
        ContinuousTerm("weight", q=10),
        ParametricTerm("sex"),
        ParametricTerm("mult"),
        ContinuousTerm("steroid", q=10),
        ContinuousTerm("anti", q=10),
    ))


def run_null_calibration(m: int, replicates: int = 1000, seed: int = 1,
                         workers: int = 1, data=None, confounder_spec=None,
                         base_fit: FittedGam | None = None,
                         x_column: str = "x", k: int = 6) -> SimReport:
    """Parametric bootstrap of the ordinal smooth test under a true null.

    Responses are redrawn from the fitted confounder-only model, the model
    with the ordinal smooth added is refit with REML-selected smoothing,
    and the smooth's p-value is recorded.
    """
    t0 = time.perf_counter()
    if data is None:
        data = synthetic_bpd()
    if confounder_spec is None:
        confounder_spec = confounder_model_spec()
    if base_fit is None:
        base_fit = optimize_lambda(build_problem(data, confounder_spec))
    if not base_fit.converged:
        raise RuntimeError("confounder-only base fit did not converge")
    mu = base_fit.mu

    full_spec = ModelSpec(confounder_spec.response, confounder_spec.family,
                          confounder_spec.terms + (OrdinalTerm(x_column, k, m),))
    problem = build_problem(data, full_spec)
    base_lam = {t.name: lj for t, lj in
                zip(base_fit.problem.smooth_terms, base_fit.lam)}
    start = [float(np.log(base_lam.get(t.name, np.e ** 2.0)))
             for t in problem.smooth_terms]

    ctx = {"seed": seed, "mu": mu, "problem": problem,
           "x_term": f"s({x_column})", "m": m, "start": start}
    rows = _flatten(_run_replicates("null-calibration", ctx, replicates, workers))
    kept, dropped = _drop_nonconverged(rows)
    if dropped >= 0.2 * replicates:
        raise RuntimeError(
            f"{dropped}/{replicates} bootstrap refits failed to converge"
        )

    pvals = np.sort(np.array([r["p_value"] for r in kept]))
    nrec = len(pvals)
    ks = kstest(pvals, "uniform")
    ecdf = {a: float(np.mean(pvals <= a)) for a in (0.05, 0.10)}
    qq_rows = [{"uniform_quantile": (i + 0.5) / nrec, "p_value": float(p)}
               for i, p in enumerate(pvals) if p <= 0.1]
    aggregates = {
        "m": m,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "ecdf_at_0.05": ecdf[0.05],
        "ecdf_at_0.10": ecdf[0.10],
        "boundary_rate": float(np.mean([r["boundary"] for r in kept])),
        "base_criterion": base_fit.criterion_value,
    }
    scenario = {"study_m": m, "n": int(len(mu)), "x_column": x_column, "k": k,
                "replicates": replicates, "seed": seed}
    return SimReport("null-calibration", scenario, kept, aggregates,
                     replicates, dropped, seed, time.perf_counter() - t0,
                     aggregate_rows=qq_rows)


def run_size_power(family: str = "gaussian", shape: str = "near-linear",
                   psi_grid=None, n: int = 100, replicates: int = 2000,
                   seed: int = 1, workers: int = 1, m: int = 2,
                   z_form: str = "smooth") -> SimReport:
    """Rejection rates over an effect-size grid for three competing tests."""
    t0 = time.perf_counter()
    if psi_grid is None:
        psi_grid = GAUSSIAN_PSI_GRID if family == "gaussian" else LOGIT_PSI_GRID
    psi_grid = tuple(float(p) for p in psi_grid)
    if 0.0 not in psi_grid:
        raise ValueError("the effect-size grid must include 0")
    scenario = SimScenario(family=family, shape=shape, psi=0.0, n=n, k=6,
                           replicates=replicates, seed=seed, z_form=z_form)
    ctx = {"scenario": scenario, "psi_grid": psi_grid, "m": m}
    rows = _flatten(_run_replicates("size-power", ctx, replicates, workers))
    kept, dropped = _drop_nonconverged(rows, keep_separated=True)

    agg_rows = []
    rates = {}
    for psi in psi_grid:
        for est in (f"smooth-m{m}", "linear", "factor"):
            ps = np.array([r["p_value"] for r in kept
                           if r["psi"] == psi and r["estimator"] == est])
            for alpha in (0.05, 0.10):
                rate = float(np.mean(ps <= alpha)) if ps.size else float("nan")
                rates[(psi, est, alpha)] = rate
                agg_rows.append({"psi": psi, "estimator": est, "alpha": alpha,
                                 "rejection_rate": rate, "n_used": int(ps.size)})
    aggregates = {
        "rejection": [{"psi": k[0], "estimator": k[1], "alpha": k[2], "rate": v}
                      for k, v in rates.items()],
        "n_separated": int(sum(r["separated"] for r in kept)),
    }
    scen = dict(scenario.to_dict(), psi_grid=list(psi_grid), m=m)
    return SimReport("size-power", scen, kept, aggregates, replicates,
                     dropped, seed, time.perf_counter() - t0,
                     aggregate_rows=agg_rows)


def run_coverage(family: str = "gaussian", shape: str = "non-monotone",
                 psi: float | None = None, n: int = 100,
                 replicates: int = 1000, seed: int = 1, workers: int = 1,
                 level: float = 0.95, z_form: str = "smooth") -> SimReport:
    """Empirical pointwise coverage of the credible bands for both penalties."""
    t0 = time.perf_counter()
    if psi is None:
        psi = COVERAGE_PSI[family]
    if psi <= 0:
        raise ValueError("coverage study requires a positive effect size")
    scenario = SimScenario(family=family, shape=shape, psi=float(psi), n=n,
                           k=6, replicates=replicates, seed=seed, z_form=z_form)
    ctx = {"scenario": scenario, "level": level}
    rows = _flatten(_run_replicates("coverage", ctx, replicates, workers))
    kept, dropped = _drop_nonconverged(rows)

    agg_rows = []
    by_m = {}
    for m in (1, 2):
        sub = [r for r in kept if r["m"] == m]
        per_level = []
        for lvl in range(1, scenario.k + 1):
            cov = float(np.mean([r[f"cover_{lvl}"] for r in sub])) if sub else float("nan")
            per_level.append(cov)
            agg_rows.append({"m": m, "level": lvl, "coverage": cov,
                             "n_used": len(sub)})
        avg = float(np.mean(per_level))
        agg_rows.append({"m": m, "level": "avg", "coverage": avg,
                         "n_used": len(sub)})
        by_m[m] = {"per_level": per_level, "average": avg}
    aggregates = {"nominal_level": level,
                  "coverage": {str(m): v for m, v in by_m.items()}}
    return SimReport("coverage", scenario.to_dict(), kept, aggregates,
                     replicates, dropped, seed, time.perf_counter() - t0,
                     aggregate_rows=agg_rows)


def run_mse(family: str = "gaussian", shape: str = "non-monotone",
            psi: float | None = None, n: int = 100, replicates: int = 1000,
            seed: int = 1, workers: int = 1, z_form: str = "smooth") -> SimReport:
    """Squared-error comparison of the four estimators of the level effects."""
    t0 = time.perf_counter()
    if psi is None:
        psi = COVERAGE_PSI[family]
    if psi <= 0:
        raise ValueError("accuracy study requires a positive effect size")
    scenario = SimScenario(family=family, shape=shape, psi=float(psi), n=n,
                           k=6, replicates=replicates, seed=seed, z_form=z_form)
    ctx = {"scenario": scenario}
    rows = _flatten(_run_replicates("mse", ctx, replicates, workers))
    kept, dropped = _drop_nonconverged(rows, keep_separated=True)

    agg_rows = []
    summary = {}
    for est in ("smooth-m1", "smooth-m2", "linear", "factor"):
        sub = [r for r in kept if r["estimator"] == est]
        sses = np.array([r["sse"] for r in sub])
        if sses.size:
            q25, med, q75 = (float(np.quantile(sses, q)) for q in (0.25, 0.5, 0.75))
        else:
            q25 = med = q75 = float("nan")
        n_sep = int(sum(r["separated"] for r in sub))
        n_cap = int(sum(r["capped"] for r in sub))
        summary[est] = {"q25": q25, "median": med, "q75": q75,
                        "n_separated": n_sep, "n_capped": n_cap}
        agg_rows.append({"estimator": est, "q25": q25, "median": med,
                         "q75": q75, "n_used": int(sses.size),
                         "n_separated": n_sep, "n_capped": n_cap})
    aggregates = {"sse_cap": SSE_CAP, "summary": summary}
    return SimReport("mse", scenario.to_dict(), kept, aggregates, replicates,
                     dropped, seed, time.perf_counter() - t0,
                     aggregate_rows=agg_rows)
