"""Independent reference computations used by the test suite.

Every function here reaches its answer by a route disjoint from the
production fitter and criterion code: augmented least squares via SVD and
``lstsq`` instead of Cholesky normal equations, the n x n marginal
covariance form of the restricted likelihood instead of the penalized
p-space identity, and quasi-Newton likelihood maximization instead of
IRLS.  They exist to validate the production paths, not to be fast, and
are not exposed on the command line.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.stats import chi2

from .design import build_dummy_basis
from .family import Binomial, Gaussian
from .fitter import PenalizedProblem


@dataclass(frozen=True)
class OracleResult:
    name: str
    inputs_digest: str
    value: float
    tolerance: float


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


def penalized_ls_oracle(X: np.ndarray, S_list, lam, y: np.ndarray) -> np.ndarray:
    """Solve (X'X + sum lam_j S_j) beta = X'y by augmented least squares.

    Each penalty is replaced by its SVD square root and stacked under the
    design; the solution of the tall least-squares problem satisfies the
    penalized normal equations.  Raises on a rank-deficient system.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    rows = [X]
    rhs = [y]
    for lj, S in zip(np.atleast_1d(lam), S_list):
        if S.shape != (p, p):
            raise ValueError("penalties must be embedded to the full coefficient space")
        if lj == 0:
            continue
        U, s, _ = np.linalg.svd(S, hermitian=True)
        keep = s > s[0] * 1e-12 if s.size and s[0] > 0 else np.zeros_like(s, bool)
        root = np.sqrt(lj * s[keep])[:, None] * U[:, keep].T
        rows.append(root)
        rhs.append(np.zeros(root.shape[0]))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    beta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < p:
        raise np.linalg.LinAlgError(
            f"penalized system is singular (rank {rank} < {p})"
        )
    return beta


def gaussian_marginal_oracle(problem: PenalizedProblem, tau2: float,
                             phi: float = 1.0) -> float:
    """Exact negative restricted log-likelihood via the marginal covariance.

    The single smooth term's penalized directions become random effects
    with variance ``tau2``; the unpenalized directions join the fixed
    columns.  Computes

        [y'Py + log|V| + log|W'V^-1 W| + (n - M_p) log 2pi] / 2

    with V = phi I + tau2 Z Z' on the n x n scale, which equals the
    penalized-form criterion at lambda = phi / tau2.
    """
    smooths = problem.smooth_terms
    if len(smooths) != 1:
        raise ValueError("marginal oracle handles exactly one smooth term")
    term = smooths[0]
    Bt = problem.X[:, term.sl]
    S = term.block.penalty

    U, s, _ = np.linalg.svd(S, hermitian=True)
    keep = s > s[0] * 1e-9
    Z = Bt @ (U[:, keep] / np.sqrt(s[keep]))
    null_basis = U[:, ~keep]

    fixed_cols = [problem.X[:, t.sl] for t in problem.terms if not t.is_smooth]
    if null_basis.shape[1]:
        fixed_cols.append(Bt @ null_basis)
    W = np.hstack(fixed_cols)
    y = problem.y
    n = problem.n

    V = phi * np.eye(n) + tau2 * (Z @ Z.T)
    Vi_y = np.linalg.solve(V, y)
    Vi_W = np.linalg.solve(V, W)
    WtViW = W.T @ Vi_W
    alpha = np.linalg.solve(WtViW, W.T @ Vi_y)
    quad = float(y @ Vi_y - (W.T @ Vi_y) @ alpha)
    _, logdet_v = np.linalg.slogdet(V)
    _, logdet_w = np.linalg.slogdet(WtViW)
    m_p = W.shape[1]
    return 0.5 * (quad + logdet_v + logdet_w + (n - m_p) * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GlrtResult:
    statistic: float
    df: int
    p_value: float
    deviance_null: float
    deviance_full: float
    separated: bool


def _glm_deviance(X: np.ndarray, y: np.ndarray, family) -> float:
    """Unpenalized GLM deviance by a route independent of IRLS."""
    if isinstance(family, Gaussian):
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        return float(r @ r)
    if isinstance(family, Binomial):
        def negll(b):
            eta = X @ b
            # log(1 + exp(eta)) - y*eta, computed stably
            return float(np.logaddexp(0.0, eta).sum() - y @ eta)

        def grad(b):
            mu = 1.0 / (1.0 + np.exp(-(X @ b)))
            return X.T @ (mu - y)

        res = optimize.minimize(negll, np.zeros(X.shape[1]), jac=grad,
                                method="BFGS",
                                options={"gtol": 1e-9, "maxiter": 500})
        return 2.0 * float(res.fun - _binomial_saturated(y))
    raise TypeError(f"unsupported family {family!r}")


def _binomial_saturated(y: np.ndarray) -> float:
    # saturated negative log-likelihood is 0 for 0/1 responses
    return 0.0


def glrt_factor_oracle(y, X_base: np.ndarray, levels, k: int,
                       family) -> GlrtResult:
    """Analysis-of-deviance test of a k-level factor added to a base model.

    The factor enters as k-1 reference-coded dummies; the deviance drop is
    referred to chi-square with k-1 degrees of freedom.  Binomial fits with
    a response-pure level are flagged as separated.
    """
    y = np.asarray(y, dtype=float)
    dummies = build_dummy_basis(levels, k)[:, 1:]
    X_full = np.hstack([X_base, dummies])

    separated = False
    if isinstance(family, Binomial):
        lv = np.asarray(levels)
        for level in range(1, k + 1):
            cell = y[lv == level]
            if cell.size and (np.all(cell == 0) or np.all(cell == 1)):
                separated = True
                break

    dev_null = _glm_deviance(X_base, y, family)
    dev_full = _glm_deviance(X_full, y, family)
    if isinstance(family, Gaussian):
        # analysis of deviance with unknown scale: F-type statistic is the
        # classical route, but the chi-square form uses the full-model scale
        scale = dev_full / max(len(y) - X_full.shape[1], 1)
        stat = (dev_null - dev_full) / scale
    else:
        stat = dev_null - dev_full
    stat = max(float(stat), 0.0)
    df = k - 1
    return GlrtResult(statistic=stat, df=df, p_value=float(chi2.sf(stat, df)),
                      deviance_null=float(dev_null), deviance_full=float(dev_full),
                      separated=separated)


def record(name: str, value: float, tolerance: float, *inputs) -> OracleResult:
    """Wrap an oracle value with an input digest for frozen-fixture logs."""
    return OracleResult(name=name, inputs_digest=_digest(*inputs),
                        value=float(value), tolerance=tolerance)
