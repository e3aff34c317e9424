"""Penalized-likelihood B-spline smoothing of a single process.

Minimizes ``negloglik + lam * c' Omega c`` with ``Omega`` the integrated
squared second derivative of the basis, by damped Newton (penalized IRLS),
and picks ``lam`` by generalized cross-validation on the working response.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .basis import roughness_matrix
from .expfam import sufficient_stats

DEFAULT_GRID = np.logspace(-6, 2, 25)


class SmoothingError(RuntimeError):
    pass


@dataclass
class SmoothFit:
    coefficients: np.ndarray
    smoothing_parameter: float
    basis: object
    gcv_score: float
    iterations: int = 0
    edf: float = float("nan")

    def __call__(self, t):
        return self.basis.evaluate(t) @ self.coefficients


def _objective(family, sums, counts, total, Psi, Omega, lam, c):
    theta = Psi @ c
    b = family.cumulant(theta)[0]
    return -(sums @ theta - counts @ b) / total + lam * c @ Omega @ c


def fit_penalized(y, times, family, basis, lam, init=None, max_iter=100, rtol=1e-10, Omega=None):
    """Penalized maximum likelihood fit of one process.

    Parameters
    ----------
    y : array-like, shape (n,) or (n, R)
        Observations at ``times`` (``nan`` for missing replicates).
    times : array-like, shape (n,)
    family : Family
    basis : BSplineBasis
    lam : float
        Roughness penalty weight, positive.
    init : array-like, optional
        Starting coefficients (warm start).

    Returns
    -------
    SmoothFit
    """
    if not lam > 0:
        raise ValueError("smoothing parameter must be positive")
    sums, counts, total = sufficient_stats(y)
    times = np.asarray(times, dtype=float)
    keep = counts > 0
    if keep.sum() < basis.n_basis / 2:
        raise SmoothingError("too few distinct time points for the basis size")
    sums, counts, times = sums[keep], counts[keep], times[keep]
    Psi = basis.evaluate(times)
    if Omega is None:
        Omega = roughness_matrix(basis)
    M = basis.n_basis
    c = np.zeros(M) if init is None else np.array(init, dtype=float)
    if init is None:
        # start from the constant that maximizes the likelihood
        c[:] = _link(family, sums.sum() / counts.sum())
    obj = _objective(family, sums, counts, total, Psi, Omega, lam, c)
    for it in range(1, max_iter + 1):
        theta = Psi @ c
        _, b1, b2 = family.cumulant(theta)
        grad = -Psi.T @ (sums - counts * b1) / total + 2 * lam * Omega @ c
        hess = (Psi * (counts * b2 / total)[:, None]).T @ Psi + 2 * lam * Omega
        try:
            step = linalg.solve(hess, -grad, assume_a="sym")
        except linalg.LinAlgError as exc:
            raise SmoothingError(f"rank-deficient Newton system: {exc}") from None
        alpha = 1.0
        for _ in range(60):
            c_new = c + alpha * step
            obj_new = _objective(family, sums, counts, total, Psi, Omega, lam, c_new)
            if np.isfinite(obj_new) and obj_new <= obj + 1e-12 * abs(obj):
                break
            alpha *= 0.5
        else:
            raise SmoothingError("step halving failed")
        change = abs(obj - obj_new) / max(abs(obj), 1e-300)
        c, obj = c_new, obj_new
        if change < rtol:
            break
    else:
        raise SmoothingError(f"no convergence after {max_iter} Newton iterations")
    score, edf = _gcv(family, sums, counts, Psi, Omega, lam, c)
    return SmoothFit(c, float(lam), basis, score, it, edf)


def _link(family, mean):
    if family.kind == "gaussian":
        return mean
    if family.kind == "poisson":
        return np.log(max(mean, 1e-8))
    p = np.clip(mean / family.trials, 1e-8, 1 - 1e-8)
    return np.log(p / (1 - p))


def _gcv(family, sums, counts, Psi, Omega, lam, c):
    """``n RSS_w / (n - tr H)^2`` with working weights ``R b''`` at convergence."""
    n = sums.size
    total = counts.sum()
    theta = Psi @ c
    _, b1, b2 = family.cumulant(theta)
    w = counts * b2
    z = theta + (sums - counts * b1) / np.maximum(w, 1e-300)
    A = (Psi * (w / total)[:, None]).T @ Psi + 2 * lam * Omega
    # tr H = tr(Psi A^-1 Psi' W / total)
    K = linalg.solve(A, (Psi * (w / total)[:, None]).T, assume_a="sym")
    edf = float(np.einsum("ij,ji->", Psi, K))
    rss = float(w @ (z - theta) ** 2)
    denom = max(n - edf, 1e-12)
    return n * rss / denom**2, edf


def select_smoothing(y, times, family, basis, grid=None):
    """Fit along ``grid`` (warm-started) and keep the GCV minimizer."""
    grid = DEFAULT_GRID if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("smoothing grid must be nonempty and positive")
    Omega = roughness_matrix(basis)
    best = None
    init = None
    for lam in np.sort(grid)[::-1]:
        try:
            fit = fit_penalized(y, times, family, basis, lam, init=init, Omega=Omega)
        except SmoothingError:
            continue
        init = fit.coefficients
        if best is None or fit.gcv_score < best.gcv_score:
            best = fit
    if best is None:
        raise SmoothingError("no smoothing parameter in the grid converged")
    return best


def smooth_dataset(dataset, basis, grid=None):
    """Coefficient matrix (p, M) of GCV-selected smooths, one per process."""
    fits = [select_smoothing(dataset.values[j], dataset.times, dataset.family, basis, grid)
            for j in range(dataset.p)]
    return np.array([f.coefficients for f in fits]), fits
