"""Design construction for smooth terms.

Builds the per-term ingredients of a penalized additive model: dummy bases
for ordinal predictors, B-spline bases for continuous predictors, difference
penalty matrices, and the identifiability transform that absorbs the
weighted sum-to-zero constraint into the basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


class InvalidLevelError(ValueError):
    """An ordinal observation lies outside the declared level set."""


class DegenerateConstraintError(ValueError):
    """Constraint vector is identically zero, so no transform exists."""


class DegenerateCovariateError(ValueError):
    """A continuous covariate is constant and spans no spline basis."""


@dataclass(frozen=True)
class OrdinalTerm:
    """Smooth term over an ordinal predictor with k ordered levels.

    ``order`` selects the difference penalty: 1 shrinks adjacent level
    effects toward a common value, 2 shrinks toward a linear trend in the
    level index.
    """

    column: str
    k: int
    order: int = 2

    def __post_init__(self):
        if self.k < 3:
            raise ValueError(f"ordinal term {self.column!r} needs k >= 3, got {self.k}")
        if self.order not in (1, 2):
            raise ValueError(f"penalty order must be 1 or 2, got {self.order}")


@dataclass(frozen=True)
class ContinuousTerm:
    """Penalized B-spline (P-spline) term for a continuous predictor."""

    column: str
    q: int = 10
    degree: int = 3
    order: int = 2

    def __post_init__(self):
        if self.q < self.degree + 2:
            raise ValueError(
                f"smooth term {self.column!r} needs q >= degree + 2, got q={self.q}"
            )


@dataclass(frozen=True)
class DesignBlock:
    """One term's constrained basis, penalty, and bookkeeping.

    ``basis`` is the n x q constrained design, ``penalty`` the q x q PSD
    penalty matrix and ``transform`` the (q+1) x q map from constrained to
    unconstrained coefficients (columns orthonormal, orthogonal to the
    constraint vector).  ``null_dim`` is the penalty null-space dimension
    that survives the constraint.
    """

    kind: str  # "ordinal" | "continuous" | "parametric"
    basis: np.ndarray
    penalty: np.ndarray | None = None
    transform: np.ndarray | None = None
    null_dim: int = 0
    # evaluation support for bands / predictions
    k: int | None = None
    knots: np.ndarray | None = None
    degree: int | None = None
    x_range: tuple[float, float] | None = field(default=None)


def build_dummy_basis(levels, k: int) -> np.ndarray:
    """Return the n x k indicator basis of an ordinal predictor.

    Row i carries a single 1 in the column of the observed level.
    Raises :class:`InvalidLevelError` naming the first offending row if an
    observation lies outside {1, ..., k}.
    """
    lv = np.asarray(levels)
    if lv.ndim != 1:
        raise ValueError("levels must be a 1-d sequence")
    if not np.issubdtype(lv.dtype, np.integer):
        as_int = lv.astype(int)
        if not np.all(as_int == lv):
            bad = int(np.nonzero(as_int != lv)[0][0])
            raise InvalidLevelError(f"non-integer level {lv[bad]!r} at row {bad}")
        lv = as_int
    out_of_range = (lv < 1) | (lv > k)
    if np.any(out_of_range):
        bad = int(np.nonzero(out_of_range)[0][0])
        raise InvalidLevelError(
            f"level {lv[bad]} at row {bad} outside declared range 1..{k}"
        )
    B = np.zeros((lv.shape[0], k))
    B[np.arange(lv.shape[0]), lv - 1] = 1.0
    return B


def build_diff_matrix(k: int, m: int) -> np.ndarray:
    """Return the (k-m) x k matrix of m-th order forward differences."""
    if m not in (1, 2):
        raise ValueError(f"difference order must be 1 or 2, got {m}")
    if k <= m:
        raise ValueError(f"need k > m for a difference matrix, got k={k}, m={m}")
    return np.diff(np.eye(k), n=m, axis=0)


def penalty_value(beta, m: int) -> float:
    """Sum of squared m-th order differences of a coefficient vector."""
    b = np.asarray(beta, dtype=float)
    if b.shape[0] <= m:
        raise ValueError(f"need more than m={m} coefficients, got {b.shape[0]}")
    d = np.diff(b, n=m)
    return float(d @ d)


def _constraint_transform(c: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of c^T via one Householder step."""
    k = c.shape[0]
    nrm = np.linalg.norm(c)
    if nrm == 0.0:
        raise DegenerateConstraintError("constraint vector is identically zero")
    v = c.astype(float).copy()
    v[0] += np.copysign(nrm, c[0] if c[0] != 0 else 1.0)
    H = np.eye(k) - 2.0 * np.outer(v, v) / (v @ v)
    # H maps c to a multiple of e1, so columns 2..k of H are orthogonal to c
    return H[:, 1:]


def reference_transform(k: int) -> np.ndarray:
    """Transform for the reference-category constraint (first level fixed at 0)."""
    return np.eye(k)[:, 1:]


def absorb_constraint(B: np.ndarray, S: np.ndarray, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Absorb the weighted sum-to-zero constraint into basis and penalty.

    ``weights`` is the constraint vector (level counts for ordinal terms,
    basis column sums for splines).  Returns ``(B Z, Z' S Z, Z, null_dim)``
    where Z spans the null space of the constraint and ``null_dim`` is the
    dimension of the transformed penalty's null space.
    """
    c = np.asarray(weights, dtype=float)
    Z = _constraint_transform(c)
    Bt = B @ Z
    St = Z.T @ S @ Z
    St = 0.5 * (St + St.T)
    return Bt, St, Z, penalty_null_dim(St)


def penalty_null_dim(S: np.ndarray, rtol: float = 1e-9) -> int:
    """Dimension of the (numerical) null space of a PSD penalty matrix."""
    vals = np.linalg.eigvalsh(S)
    top = vals[-1] if vals.size else 0.0
    if top <= 0.0:
        return S.shape[0]
    return int(np.sum(vals < rtol * top))


def build_ordinal_block(levels, term: OrdinalTerm, constraint: str = "center") -> DesignBlock:
    """Constrained dummy basis and difference penalty for an ordinal term."""
    B = build_dummy_basis(levels, term.k)
    D = build_diff_matrix(term.k, term.order)
    S = D.T @ D
    if constraint == "center":
        counts = B.sum(axis=0)
        Bt, St, Z, nd = absorb_constraint(B, S, counts)
    elif constraint == "ref":
        Z = reference_transform(term.k)
        Bt = B @ Z
        St = Z.T @ S @ Z
        nd = penalty_null_dim(St)
    else:
        raise ValueError(f"unknown constraint {constraint!r}")
    return DesignBlock(kind="ordinal", basis=Bt, penalty=St, transform=Z,
                       null_dim=nd, k=term.k)


def bspline_basis(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """Dense B-spline design matrix, clamping x to the knot-supported range."""
    lo = knots[degree]
    hi = knots[-degree - 1]
    xc = np.clip(x, lo, hi)
    return BSpline.design_matrix(xc, knots, degree, extrapolate=False).toarray()


def pspline_knots(x_min: float, x_max: float, q: int, degree: int) -> np.ndarray:
    """Equally spaced knots spanning [x_min, x_max] extended degree intervals out."""
    ndx = q - degree
    h = (x_max - x_min) / ndx
    return x_min + h * np.arange(-degree, ndx + degree + 1)


def build_pspline_block(x, term: ContinuousTerm) -> DesignBlock:
    """Centered cubic P-spline block: B-spline basis + order-2 difference penalty."""
    xv = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xv)):
        raise ValueError(f"non-finite values in covariate {term.column!r}")
    lo, hi = float(xv.min()), float(xv.max())
    if hi <= lo:
        raise DegenerateCovariateError(
            f"covariate {term.column!r} is constant; cannot build a spline basis"
        )
    knots = pspline_knots(lo, hi, term.q, term.degree)
    B = bspline_basis(xv, knots, term.degree)
    D = build_diff_matrix(term.q, term.order)
    S = D.T @ D
    Bt, St, Z, nd = absorb_constraint(B, S, B.sum(axis=0))
    return DesignBlock(kind="continuous", basis=Bt, penalty=St, transform=Z,
                       null_dim=nd, knots=knots, degree=term.degree,
                       x_range=(lo, hi))


def mixed_reparam(beta, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Split coefficients into unpenalized head and m-th difference part.

    Returns ``(beta[:m], D_m beta)``; the combined map is invertible, see
    :func:`mixed_reparam_inverse`.
    """
    b = np.asarray(beta, dtype=float)
    if b.shape[0] <= m:
        raise ValueError(f"need more than m={m} coefficients, got {b.shape[0]}")
    return b[:m].copy(), np.diff(b, n=m)


def mixed_reparam_inverse(fixed, u, m: int) -> np.ndarray:
    """Reconstruct coefficients from :func:`mixed_reparam` output."""
    fixed = np.asarray(fixed, dtype=float)
    u = np.asarray(u, dtype=float)
    k = fixed.shape[0] + u.shape[0]
    T = np.vstack([np.eye(m, k), build_diff_matrix(k, m)])
    return np.linalg.solve(T, np.concatenate([fixed, u]))
