"""B-spline, monomial and sigmoid-composed bases.

All evaluators are vectorized over ``x`` and return arrays of shape
``(len(x), n_basis)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# Points closer than this to a support endpoint are clamped onto it.
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis on a closed interval.

    Parameters
    ----------
    degree : int
        Polynomial degree (3 for cubic).
    knots : numpy.ndarray
        Full knot vector, boundary knots repeated ``degree + 1`` times.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        k = self.degree
        if k < 0 or k > 3:
            raise ValueError(f"degree must be in 0..3, got {k}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if knots.size < 2 * (k + 1):
            raise ValueError("too few knots for the requested degree")
        lo, hi = knots[0], knots[-1]
        if not hi > lo:
            raise ValueError("empty support")
        if np.any(knots[: k + 1] != lo) or np.any(knots[-(k + 1):] != hi):
            raise ValueError("boundary knots must be repeated degree + 1 times")

    @property
    def n_basis(self):
        return self.knots.size - self.degree - 1

    @property
    def support(self):
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def interior_knots(self):
        return self.knots[self.degree + 1: -(self.degree + 1)]

    def _clamp(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.support
        tol = BOUNDARY_TOL * max(1.0, hi - lo)
        if np.any(x < lo - tol) or np.any(x > hi + tol) or np.any(~np.isfinite(x)):
            raise ValueError(f"evaluation points outside support [{lo}, {hi}]")
        return np.clip(x, lo, hi)

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        """Basis values at ``x``; rows sum to one."""
        return _cox_de_boor(self.knots, self.degree, self._clamp(x), 0)

    def derivative(self, x, order=1):
        """Exact ``order``-th derivative of every basis function at ``x``."""
        if order not in (1, 2):
            raise ValueError(f"unsupported derivative order {order}")
        return _cox_de_boor(self.knots, self.degree, self._clamp(x), order)


def _cox_de_boor(knots, degree, x, order):
    """Values (order 0) or derivatives of all degree-``degree`` B-splines."""
    if order > degree:
        return np.zeros((x.size, knots.size - degree - 1))
    if order > 0:
        lower = _cox_de_boor(knots, degree - 1, x, order - 1)
        n = knots.size - degree - 1
        left = knots[degree: degree + n] - knots[:n]
        right = knots[degree + 1: degree + 1 + n] - knots[1: 1 + n]
        a = np.divide(degree, left, out=np.zeros(n), where=left > 0)
        b = np.divide(degree, right, out=np.zeros(n), where=right > 0)
        return lower[:, :n] * a - lower[:, 1: n + 1] * b

    # degree-0 indicators; the last nonempty span is closed on the right
    nspan = knots.size - 1
    B = ((knots[:-1] <= x[:, None]) & (x[:, None] < knots[1:])).astype(float)
    last = np.nonzero(knots[1:] > knots[:-1])[0][-1]
    B[x == knots[-1], last] = 1.0
    for d in range(1, degree + 1):
        n = nspan - d
        t_i = knots[:n]
        t_id = knots[d: d + n]
        t_i1 = knots[1: 1 + n]
        t_id1 = knots[d + 1: d + 1 + n]
        den_l = t_id - t_i
        den_r = t_id1 - t_i1
        wl = np.divide(x[:, None] - t_i, den_l, out=np.zeros((x.size, n)), where=den_l > 0)
        wr = np.divide(t_id1 - x[:, None], den_r, out=np.zeros((x.size, n)), where=den_r > 0)
        B = wl * B[:, :n] + wr * B[:, 1: n + 1]
    return B


def make_bspline(degree, interior_knots, support):
    """Clamped B-spline basis from interior knots and a support interval."""
    lo, hi = (float(v) for v in support)
    if not hi > lo:
        raise ValueError(f"empty support [{lo}, {hi}]")
    inner = np.asarray(interior_knots, dtype=float).ravel()
    if inner.size and (inner.min() <= lo or inner.max() >= hi):
        raise ValueError("interior knots must lie strictly inside the support")
    if np.any(np.diff(inner) < 0):
        raise ValueError("interior knots must be nondecreasing")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    knots = np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])
    return BSplineBasis(degree, knots)


def uniform_bspline(n_interior=4, degree=3, support=(0.0, 1.0)):
    lo, hi = support
    inner = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return make_bspline(degree, inner, support)


def default_latent_size(n):
    """Number of latent-process basis functions for ``n`` time points."""
    return int(min(np.ceil(n / 4) + 4, 35))


def latent_basis(times, n_basis=None, degree=3, support=None):
    """Cubic B-spline basis with interior knots at quantiles of ``times``."""
    times = np.unique(np.asarray(times, dtype=float))
    if support is None:
        support = (times[0], times[-1])
    if n_basis is None:
        n_basis = default_latent_size(times.size)
    n_inner = n_basis - degree - 1
    if n_inner < 0:
        raise ValueError(f"n_basis must be at least {degree + 1}")
    probs = np.arange(1, n_inner + 1) / (n_inner + 1)
    inner = np.quantile(times, probs)
    return make_bspline(degree, inner, support)


def eval_monomial(x, degree=3):
    """Rows ``(x, x**2, ..., x**degree)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return x[:, None] ** np.arange(1, degree + 1)


@dataclass(frozen=True)
class TransformedBasis:
    """B-spline basis on [0, 1] composed with the logistic map."""

    inner: BSplineBasis

    def __post_init__(self):
        if self.inner.support != (0.0, 1.0):
            raise ValueError("inner basis must live on [0, 1]")

    @property
    def n_basis(self):
        return self.inner.n_basis

    def evaluate(self, theta):
        return self.inner.evaluate(expit(theta))

    def __call__(self, theta):
        return self.evaluate(theta)

    def evaluate_with_derivative(self, theta):
        """Return ``phi(sigma(theta))`` and its derivative in ``theta``."""
        u = expit(np.atleast_1d(np.asarray(theta, dtype=float)))
        values = self.inner.evaluate(u)
        chain = self.inner.derivative(u, 1) * (u * (1.0 - u))[:, None]
        return values, chain


def default_component_basis():
    """Cubic B-splines with 4 uniform interior knots on [0, 1], composed with the logistic."""
    return TransformedBasis(uniform_bspline(4, 3, (0.0, 1.0)))


def gram_matrix(basis, n_nodes=2001):
    """Trapezoid approximation of the integral of ``phi phi^T`` over the support."""
    lo, hi = basis.support
    x = np.linspace(lo, hi, n_nodes)
    w = trapezoid_weights(x)
    B = basis.evaluate(x)
    return (B * w[:, None]).T @ B


def trapezoid_weights(x):
    """Composite trapezoid weights for the (sorted) nodes ``x``."""
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    h = np.diff(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def roughness_matrix(basis):
    """Exact integral of ``psi'' psi''^T`` via Gauss-Legendre on each knot span."""
    nodes, weights = np.polynomial.legendre.leggauss(max(basis.degree, 2))
    breaks = np.unique(basis.knots)
    a, b = breaks[:-1], breaks[1:]
    x = ((b - a)[:, None] * (nodes + 1) / 2 + a[:, None]).ravel()
    w = ((b - a)[:, None] * weights / 2).ravel()
    D2 = basis.derivative(x, 2)
    return (D2 * w[:, None]).T @ D2
