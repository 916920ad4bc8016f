"""Penalized likelihood fitting for fixed smoothing parameters.

The estimator maximizes the penalized log-likelihood via penalized
iteratively reweighted least squares (PIRLS): each step solves

    (X' W X + sum_j lam_j S_j) beta = X' W z

with family-specific working response z and weights W.  Gaussian/identity
models reduce to a single penalized least-squares solve.  The returned fit
carries the Bayesian posterior covariance of the coefficients and
trace-based effective degrees of freedom per term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .design import DesignBlock
from .family import Family, Gaussian

MAX_ITER = 100
DEV_TOL = 1e-8
RIDGE = 1e-8


class FitError(RuntimeError):
    """Penalized Hessian could not be factorized even after ridge rescue."""


@dataclass(frozen=True)
class Term:
    """A named design block occupying a column range of the full design."""

    name: str
    block: DesignBlock
    sl: slice

    @property
    def width(self) -> int:
        return self.sl.stop - self.sl.start

    @property
    def is_smooth(self) -> bool:
        return self.block.penalty is not None


class PenalizedProblem:
    """Assembled design, response, family, and per-term penalties.

    Column ranges of the terms are disjoint and cover the design exactly.
    Instances are treated as immutable; ``with_response`` produces a cheap
    copy sharing the design for refits on new responses.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, family: Family,
                 terms: list[Term], offset: np.ndarray | None = None):
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.family = family
        self.terms = list(terms)
        self.offset = None if offset is None else np.asarray(offset, dtype=float)
        self.n, self.p = X.shape
        stops = sorted((t.sl.start, t.sl.stop) for t in terms)
        covered = 0
        for a, b in stops:
            if a != covered:
                raise ValueError("term column ranges must be disjoint and exhaustive")
            covered = b
        if covered != self.p:
            raise ValueError("term column ranges must cover the design")
        self._xtx = None
        self._null_dev = None
        self._penalty_info = None

    @property
    def smooth_terms(self) -> list[Term]:
        return [t for t in self.terms if t.is_smooth]

    def term(self, name: str) -> Term:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(f"no term named {name!r}")

    def with_response(self, y: np.ndarray) -> "PenalizedProblem":
        other = PenalizedProblem.__new__(PenalizedProblem)
        other.__dict__.update(self.__dict__)
        other.y = np.asarray(y, dtype=float)
        other._null_dev = None
        return other

    def penalty_matrix(self, lam) -> np.ndarray:
        """Embed sum_j lam_j S_j into the full p x p coefficient space."""
        lam = self.lambda_vector(lam)
        S = np.zeros((self.p, self.p))
        for lj, t in zip(lam, self.smooth_terms):
            S[t.sl, t.sl] += lj * t.block.penalty
        return S

    def lambda_vector(self, lam) -> np.ndarray:
        """Normalize scalar/dict/sequence smoothing parameters to an array."""
        smooths = self.smooth_terms
        if isinstance(lam, dict):
            vec = np.array([lam[t.name] for t in smooths], dtype=float)
        elif np.isscalar(lam):
            vec = np.full(len(smooths), float(lam))
        else:
            vec = np.asarray(lam, dtype=float)
        if vec.shape != (len(smooths),):
            raise ValueError(f"expected {len(smooths)} smoothing parameters, got {vec.shape}")
        if np.any(vec < 0):
            raise ValueError("smoothing parameters must be nonnegative")
        return vec

    @property
    def xtx(self) -> np.ndarray:
        if self._xtx is None:
            self._xtx = self.X.T @ self.X
        return self._xtx

    @property
    def null_deviance(self) -> float:
        """Deviance of the intercept-only model (offset respected)."""
        if self._null_dev is None:
            if self.offset is None:
                mu0 = np.full(self.n, self.y.mean())
            else:
                mu0 = self._offset_null_mu()
            self._null_dev = self.family.deviance(self.y, mu0)
        return self._null_dev

    def _offset_null_mu(self) -> np.ndarray:
        fam, y, off = self.family, self.y, self.offset
        alpha = 0.0
        mu = fam.inverse_link(np.full(self.n, alpha) + off)
        for _ in range(50):
            eta = alpha + off
            z, w = fam.working(y, mu, eta)
            alpha_new = float(w @ (z - off)) / float(w.sum())
            if abs(alpha_new - alpha) < 1e-12:
                alpha = alpha_new
                break
            alpha = alpha_new
            mu = fam.inverse_link(alpha + off)
        return fam.inverse_link(alpha + off)

    @property
    def unpenalized_dim(self) -> int:
        """Columns the penalties cannot shrink: parametric + penalty null spaces."""
        d = sum(t.width for t in self.terms if not t.is_smooth)
        d += sum(t.block.null_dim for t in self.smooth_terms)
        return d


@dataclass
class FittedGam:
    """Converged penalized fit: coefficients, covariance, and diagnostics."""

    problem: PenalizedProblem
    lam: np.ndarray
    beta: np.ndarray
    V_beta: np.ndarray
    edf: dict[str, float]
    edf_alt: dict[str, float]
    edf_total: float
    deviance: float
    loglik: float
    penalized_loglik: float
    scale: float
    converged: bool
    iterations: int
    ridged: bool = False
    criterion_name: str | None = None
    criterion_value: float | None = None
    boundary: dict[str, str] = field(default_factory=dict)
    weights: np.ndarray | None = None

    @property
    def eta(self) -> np.ndarray:
        eta = self.problem.X @ self.beta
        if self.problem.offset is not None:
            eta = eta + self.problem.offset
        return eta

    @property
    def mu(self) -> np.ndarray:
        return self.problem.family.inverse_link(self.eta)

    @property
    def null_deviance(self) -> float:
        return self.problem.null_deviance

    @property
    def deviance_explained(self) -> float:
        nd = self.null_deviance
        return 1.0 - self.deviance / nd if nd > 0 else 0.0

    def lambda_for(self, name: str) -> float:
        for lj, t in zip(self.lam, self.problem.smooth_terms):
            if t.name == name:
                return float(lj)
        raise KeyError(f"no smooth term named {name!r}")


def penalized_loglik(beta, problem: PenalizedProblem, lam, scale: float = 1.0) -> float:
    """Log-likelihood minus the quadratic penalty on the working scale.

    With all smoothing parameters zero this is exactly the unpenalized
    log-likelihood; for the Gaussian family its maximizer solves
    (X'X + sum lam_j S_j) beta = X'y at any fixed scale.
    """
    beta = np.asarray(beta, dtype=float)
    eta = problem.X @ beta
    if problem.offset is not None:
        eta = eta + problem.offset
    mu = problem.family.inverse_link(eta)
    ll = problem.family.loglik(problem.y, mu, scale)
    pen = 0.0
    for lj, t in zip(problem.lambda_vector(lam), problem.smooth_terms):
        b = beta[t.sl]
        pen += lj * float(b @ t.block.penalty @ b)
    return ll - 0.5 * pen / scale


def _factor_with_rescue(A: np.ndarray):
    """Cholesky of the penalized Hessian, adding a small ridge if needed."""
    try:
        return sla.cho_factor(A, lower=True), False
    except sla.LinAlgError:
        pass
    bumped = A + RIDGE * np.mean(np.diag(A)) * np.eye(A.shape[0])
    try:
        return sla.cho_factor(bumped, lower=True), True
    except sla.LinAlgError as exc:
        raise FitError("penalized Hessian is singular even after ridge rescue") from exc


def _penalized_deviance(problem, beta, mu, S_emb) -> float:
    return problem.family.deviance(problem.y, mu) + float(beta @ S_emb @ beta)


def pirls_fit(problem: PenalizedProblem, lam, max_iter: int = MAX_ITER,
              tol: float = DEV_TOL, beta0: np.ndarray | None = None) -> FittedGam:
    """Fit the model at fixed smoothing parameters.

    Convergence is declared when the relative change of the penalized
    deviance falls below ``tol``; a step that would increase the penalized
    deviance is halved up to 10 times.  Non-convergence is flagged on the
    result, not raised.  ``beta0`` optionally warm-starts the iteration
    (the smoothing-parameter optimizer uses this between evaluations).
    """
    lam_vec = problem.lambda_vector(lam)
    S_emb = problem.penalty_matrix(lam_vec)
    X, y, fam = problem.X, problem.y, problem.family
    offset = problem.offset

    ridged = False
    if isinstance(fam, Gaussian):
        z = y if offset is None else y - offset
        A = problem.xtx + S_emb
        factor, ridged = _factor_with_rescue(A)
        beta = sla.cho_solve(factor, X.T @ z)
        w = np.ones(problem.n)
        converged, iterations = True, 1
    else:
        if beta0 is None:
            mu = fam.init_mu(y)
            eta = fam.link(mu)  # full linear predictor including any offset
            beta = np.zeros(problem.p)
            # no coefficient vector realizes the mu-initialization, so the
            # first solved step is accepted unconditionally
            pdev = np.inf
        else:
            beta = np.asarray(beta0, dtype=float)
            eta = X @ beta if offset is None else X @ beta + offset
            mu = fam.inverse_link(eta)
            pdev = _penalized_deviance(problem, beta, mu, S_emb)
        converged = False
        iterations = 0
        factor = None
        w = None
        for it in range(1, max_iter + 1):
            iterations = it
            z, w = fam.working(y, mu, eta)
            zz = z if offset is None else z - offset
            Xw = X * w[:, None]
            A = X.T @ Xw + S_emb
            factor, r = _factor_with_rescue(A)
            ridged = ridged or r
            beta_new = sla.cho_solve(factor, Xw.T @ zz)
            step = beta_new - beta
            # step-halving keeps the penalized objective from deteriorating
            for _ in range(11):
                eta_new = X @ beta_new
                if offset is not None:
                    eta_new = eta_new + offset
                mu_new = fam.inverse_link(eta_new)
                pdev_new = _penalized_deviance(problem, beta_new, mu_new, S_emb)
                if pdev_new <= pdev + 1e-10 * (abs(pdev) + 1.0):
                    break
                step *= 0.5
                beta_new = beta + step
            else:
                # no acceptable step; keep the previous iterate and stop
                converged = True
                break
            delta = abs(pdev - pdev_new)
            beta, eta, mu, pdev = beta_new, eta_new, mu_new, pdev_new
            if delta < tol * (abs(pdev_new) + 0.1):
                converged = True
                break
        # refresh the Hessian at the accepted coefficients
        z, w = fam.working(y, mu, eta)
        Xw = X * w[:, None]
        A = X.T @ Xw + S_emb
        factor, r = _factor_with_rescue(A)
        ridged = ridged or r

    eta = X @ beta if offset is None else X @ beta + offset
    mu = fam.inverse_link(eta)
    dev = fam.deviance(y, mu)

    p = problem.p
    A_inv = sla.cho_solve(factor, np.eye(p))
    XtWX = problem.xtx if isinstance(fam, Gaussian) else X.T @ (X * w[:, None])
    F = A_inv @ XtWX
    fdiag = np.diag(F)
    ffdiag = np.einsum("ij,ji->i", F, F)
    edf = {}
    edf_alt = {}
    for t in problem.terms:
        e = float(fdiag[t.sl].sum())
        edf[t.name] = e
        edf_alt[t.name] = 2.0 * e - float(ffdiag[t.sl].sum())
    edf_total = float(fdiag.sum())

    if fam.fixed_scale is not None:
        scale = fam.fixed_scale
    else:
        scale = dev / max(problem.n - edf_total, 1.0)
    V_beta = scale * A_inv
    ll = fam.loglik(y, mu, scale)
    pen = float(beta @ S_emb @ beta)
    pll = ll - 0.5 * pen / scale

    return FittedGam(problem=problem, lam=lam_vec, beta=beta, V_beta=V_beta,
                     edf=edf, edf_alt=edf_alt, edf_total=edf_total,
                     deviance=dev, loglik=ll, penalized_loglik=pll,
                     scale=scale, converged=converged, iterations=iterations,
                     ridged=ridged, weights=w)


def edf_per_term(fit: FittedGam) -> dict[str, float]:
    """Effective degrees of freedom of each smooth term (block trace)."""
    return {t.name: fit.edf[t.name] for t in fit.problem.smooth_terms}
