"""Declarative model specification and design assembly.

A :class:`ModelSpec` lists the response, the family, and the terms; given a
column-name-to-array mapping, :func:`build_problem` assembles the full
design matrix with an intercept, parametric columns, and constrained smooth
blocks, ready for the fitter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import (
    ContinuousTerm,
    OrdinalTerm,
    DesignBlock,
    build_dummy_basis,
    build_ordinal_block,
    build_pspline_block,
)
from .family import get_family
from .fitter import PenalizedProblem, Term

INTERCEPT = "(Intercept)"


@dataclass(frozen=True)
class ParametricTerm:
    """A covariate entering the linear predictor with a single coefficient."""

    column: str


@dataclass(frozen=True)
class FactorTerm:
    """A k-level factor entering unpenalized with reference coding."""

    column: str
    k: int


@dataclass(frozen=True)
class ModelSpec:
    response: str
    family: str
    terms: tuple
    criterion: str = "reml"
    level: float = 0.95

    def __post_init__(self):
        seen = set()
        for t in self.terms:
            key = (type(t).__name__, t.column)
            if key in seen:
                raise ValueError(f"duplicate term for column {t.column!r}")
            seen.add(key)
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"interval level must be in (0, 1), got {self.level}")
        if self.criterion not in ("reml", "ml"):
            raise ValueError(f"criterion must be 'reml' or 'ml', got {self.criterion!r}")


def term_name(term) -> str:
    if isinstance(term, ParametricTerm):
        return term.column
    if isinstance(term, FactorTerm):
        return f"factor({term.column})"
    return f"s({term.column})"


def build_problem(data, spec: ModelSpec, constraint: str = "center",
                  offset=None) -> PenalizedProblem:
    """Assemble the penalized design for ``spec`` over ``data``.

    ``data`` maps column names to 1-d arrays of equal length.  Column order
    in the design is intercept, parametric terms, then smooth blocks, each
    in specification order.
    """
    family = get_family(spec.family)
    y = np.asarray(data[spec.response], dtype=float)
    family.validate_response(y)
    n = y.shape[0]

    pieces: list[np.ndarray] = [np.ones((n, 1))]
    terms: list[Term] = [
        Term(INTERCEPT, DesignBlock(kind="parametric", basis=pieces[0]), slice(0, 1))
    ]
    col = 1

    def add(name: str, block: DesignBlock):
        nonlocal col
        width = block.basis.shape[1]
        pieces.append(block.basis)
        terms.append(Term(name, block, slice(col, col + width)))
        col += width

    for t in spec.terms:
        if isinstance(t, ParametricTerm):
            x = np.asarray(data[t.column], dtype=float).reshape(n, 1)
            if not np.all(np.isfinite(x)):
                raise ValueError(f"non-finite values in column {t.column!r}")
            add(t.column, DesignBlock(kind="parametric", basis=x))
        elif isinstance(t, FactorTerm):
            dummies = build_dummy_basis(data[t.column], t.k)[:, 1:]
            add(term_name(t), DesignBlock(kind="parametric", basis=dummies, k=t.k))
    for t in spec.terms:
        if isinstance(t, OrdinalTerm):
            add(term_name(t), build_ordinal_block(data[t.column], t, constraint))
        elif isinstance(t, ContinuousTerm):
            add(term_name(t), build_pspline_block(data[t.column], t))

    X = np.hstack(pieces)
    return PenalizedProblem(X, y, family, terms, offset=offset)
