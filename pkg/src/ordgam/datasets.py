"""Bundled synthetic clinical-style dataset.

A stand-in cohort of 100 preterm-infant-like records with a binary lung
outcome, confounders (birth weight, sex, multiples, steroid days,
antibiotic days) and an ordinal week-of-detection column with unbalanced
level counts.  The response depends on the confounders only, so the
ordinal column carries no effect by construction.  Values are generated
from a fixed seed; the same table is returned on every call.
"""

from __future__ import annotations

import csv

import numpy as np

SYNTH_SEED = 61809
SYNTH_N = 100
# strongly unbalanced week-of-detection counts: late weeks hold only a
# handful of records, which is what makes unpenalized dummy fits fragile
_WEEK_PROBS = (0.34, 0.24, 0.15, 0.10, 0.06, 0.11)

_COLUMNS = ("y", "weight", "sex", "mult", "steroid", "anti", "x")


def synthetic_bpd(n: int = SYNTH_N) -> dict[str, np.ndarray]:
    """Return the synthetic cohort as a column-name to array mapping."""
    rng = np.random.default_rng(SYNTH_SEED)
    weight = np.clip(np.round(rng.normal(760.0, 140.0, n)), 420, 995)
    sex = (rng.random(n) < 0.55).astype(float)
    mult = (rng.random(n) < 0.35).astype(float)
    steroid = rng.binomial(12, 0.35, n).astype(float)
    anti = rng.binomial(14, 0.40, n).astype(float)
    # week of first detection: lighter infants on longer antibiotic courses
    # are colonized earlier, so the ordinal column shares structure with the
    # clinical covariates (as in the application this table imitates)
    latent = (-(weight - weight.mean()) / weight.std()
              + 0.5 * (anti - anti.mean()) / anti.std()
              + 0.9 * rng.standard_normal(n))
    counts = rng.multinomial(n, _WEEK_PROBS)
    x = np.empty(n, dtype=int)
    x[np.argsort(latent)] = np.repeat(np.arange(6, 0, -1), counts[::-1])
    eta = (9.0 - 0.013 * weight + 1.2 * sex + 0.7 * mult
           - 0.28 * steroid + 0.10 * anti)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return {"y": y, "weight": weight.astype(float), "sex": sex, "mult": mult,
            "steroid": steroid, "anti": anti, "x": x}


def write_synthetic_bpd(path, n: int = SYNTH_N) -> None:
    """Write the synthetic cohort to a CSV file with a header row."""
    data = synthetic_bpd(n)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for i in range(len(data["y"])):
            writer.writerow([_fmt(data[c][i]) for c in _COLUMNS])


def _fmt(v) -> str:
    f = float(v)
    return str(int(f)) if f == int(f) else repr(f)
