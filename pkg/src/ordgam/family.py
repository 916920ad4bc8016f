"""Exponential-family response machinery for Gaussian and binomial models.

Each family supplies the link, the working response and weights used by
penalized IRLS, the deviance, and the log-likelihood.  The logistic mean is
clamped away from 0 and 1 so that working weights never underflow to NaN.
"""

from __future__ import annotations

import numpy as np

MU_EPS = 1e-10


class Family:
    """Base class; use :class:`Gaussian`, :class:`Binomial` or :func:`get_family`."""

    name = ""
    link_name = ""
    fixed_scale: float | None = None

    def inverse_link(self, eta):
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError

    def working(self, y, mu, eta):
        """Working response z and weights w for one IRLS step."""
        raise NotImplementedError

    def deviance(self, y, mu) -> float:
        raise NotImplementedError

    def loglik(self, y, mu, scale: float = 1.0) -> float:
        raise NotImplementedError

    def init_mu(self, y):
        raise NotImplementedError

    def validate_response(self, y):
        raise NotImplementedError


class Gaussian(Family):
    name = "gaussian"
    link_name = "identity"
    fixed_scale = None  # dispersion estimated from the fit

    def inverse_link(self, eta):
        return np.asarray(eta, dtype=float)

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def working(self, y, mu, eta):
        return np.asarray(y, dtype=float), np.ones_like(mu)

    def deviance(self, y, mu):
        r = y - mu
        return float(r @ r)

    def loglik(self, y, mu, scale=1.0):
        n = y.shape[0]
        return float(-0.5 * self.deviance(y, mu) / scale - 0.5 * n * np.log(2.0 * np.pi * scale))

    def init_mu(self, y):
        return np.asarray(y, dtype=float)

    def validate_response(self, y):
        if not np.all(np.isfinite(y)):
            raise ValueError("gaussian response contains non-finite values")


class Binomial(Family):
    name = "binomial"
    link_name = "logit"
    fixed_scale = 1.0

    def inverse_link(self, eta):
        mu = 1.0 / (1.0 + np.exp(-np.asarray(eta, dtype=float)))
        return np.clip(mu, MU_EPS, 1.0 - MU_EPS)

    def link(self, mu):
        mu = np.clip(mu, MU_EPS, 1.0 - MU_EPS)
        return np.log(mu / (1.0 - mu))

    def working(self, y, mu, eta):
        w = mu * (1.0 - mu)
        z = eta + (y - mu) / w
        return z, w

    def deviance(self, y, mu):
        # 0*log(0) = 0 by convention; xlogy handles both branches
        from scipy.special import xlogy

        d = xlogy(y, y) - xlogy(y, mu) + xlogy(1.0 - y, 1.0 - y) - xlogy(1.0 - y, 1.0 - mu)
        return float(2.0 * d.sum())

    def loglik(self, y, mu, scale=1.0):
        from scipy.special import xlogy

        return float((xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu)).sum())

    def init_mu(self, y):
        return (np.asarray(y, dtype=float) + 0.5) / 2.0

    def validate_response(self, y):
        vals = np.unique(np.asarray(y))
        if not np.all(np.isin(vals, (0, 1))):
            bad = vals[~np.isin(vals, (0, 1))][0]
            raise ValueError(f"binomial response must be 0/1, found value {bad!r}")


_FAMILIES = {"gaussian": Gaussian, "binomial": Binomial}


def get_family(name: str) -> Family:
    try:
        return _FAMILIES[name]()
    except KeyError:
        raise ValueError(
            f"unknown family {name!r}; available: {sorted(_FAMILIES)}"
        ) from None
