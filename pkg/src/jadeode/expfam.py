"""Exponential-family observation models in natural parametrization.

Only the terms that depend on the natural parameter are kept, i.e. the
dispersion ``a(phi)`` is taken as one and ``c(y, phi)`` is dropped.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

KINDS = ("gaussian", "poisson", "binomial")


@dataclass(frozen=True)
class Family:
    """An observation family.

    ``variance`` is only used when sampling Gaussian data; ``trials`` is the
    number of Bernoulli trials behind one binomial observation.
    """

    kind: str
    variance: float = 1.0
    trials: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gaussian" and not self.variance > 0:
            raise ValueError("gaussian variance must be positive")
        if self.kind == "binomial" and (int(self.trials) != self.trials or self.trials < 1):
            raise ValueError("binomial trials must be a positive integer")

    @classmethod
    def gaussian(cls, variance=1.0):
        return cls("gaussian", variance=float(variance))

    @classmethod
    def poisson(cls):
        return cls("poisson")

    @classmethod
    def binomial(cls, trials=1):
        return cls("binomial", trials=int(trials))

    def cumulant(self, theta):
        """Return ``(b, b', b'')`` evaluated at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "gaussian":
            return 0.5 * theta**2, theta.copy(), np.ones_like(theta)
        if self.kind == "poisson":
            e = np.exp(theta)
            return e, e, e.copy()
        m = self.trials
        mu = expit(theta)
        return m * np.logaddexp(0.0, theta), m * mu, m * mu * expit(-theta)

    def mean(self, theta):
        return self.cumulant(theta)[1]

    def sample(self, theta, rng, size=None):
        """Draw observations with natural parameter ``theta``.

        ``size`` follows numpy broadcasting; by default one draw per entry
        of ``theta``.
        """
        theta = np.asarray(theta, dtype=float)
        if size is None:
            size = theta.shape
        if self.kind == "gaussian":
            return rng.normal(theta, np.sqrt(self.variance), size=size)
        if self.kind == "poisson":
            return rng.poisson(np.exp(theta), size=size).astype(float)
        return rng.binomial(self.trials, expit(theta), size=size).astype(float)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "gaussian":
            out["variance"] = self.variance
        if self.kind == "binomial":
            out["trials"] = self.trials
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], variance=float(d.get("variance", 1.0)), trials=int(d.get("trials", 1)))


def cumulant(family, theta):
    return family.cumulant(theta)


def sample(family, theta, rng, size=None):
    return family.sample(theta, rng, size)


def sufficient_stats(y):
    """Collapse replicates of one process.

    Parameters
    ----------
    y : array-like, shape (n, R)
        Observations, ``nan`` marking missing entries.

    Returns
    -------
    sums, counts : numpy.ndarray, shape (n,)
        Per-time sum of the available replicates and their number.
    total : int
        Number of available observations.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    ok = ~np.isnan(y)
    sums = np.where(ok, y, 0.0).sum(axis=1)
    counts = ok.sum(axis=1).astype(float)
    return sums, counts, int(counts.sum())


def negloglik(family, y, theta):
    """Average negative log-likelihood of one process.

    ``-(1/N) sum_i sum_r {y_ir theta_i - b(theta_i)}`` over the ``N``
    available observations.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (y.shape[0],):
        raise ValueError(f"theta has shape {theta.shape}, expected ({y.shape[0]},)")
    sums, counts, total = sufficient_stats(y)
    if total == 0:
        return 0.0
    b = family.cumulant(theta)[0]
    return float(-(sums @ theta - counts @ b) / total)
