"""Group lasso and adaptive group lasso for equal-size groups with an intercept.

The problem solved is

    1/2 ||y - X beta||^2 + lam * sum_k w_k ||beta_k||_2

where column 0 of ``X`` is an unpenalized intercept and the remaining
columns form ``n_groups`` contiguous blocks of ``group_size`` columns.
Groups with ``w_k = inf`` are held at zero.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


@dataclass
class GroupProblem:
    design: np.ndarray
    response: np.ndarray
    group_size: int
    weights: np.ndarray = None
    lam: float = 0.0
    gram: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        self.response = np.asarray(self.response, dtype=float)
        ncol = self.design.shape[1]
        if (ncol - 1) % self.group_size:
            raise ValueError("design must have 1 + n_groups * group_size columns")
        if self.weights is None:
            self.weights = np.ones(self.n_groups)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.n_groups,) or np.any(self.weights <= 0):
            raise ValueError("weights must be positive, one per group")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.gram is None:
            self.gram = self.design.T @ self.design

    @property
    def n_groups(self):
        return (self.design.shape[1] - 1) // self.group_size

    def blocks(self, beta):
        return np.asarray(beta)[1:].reshape(self.n_groups, self.group_size)


@dataclass
class GroupSolution:
    intercept: float
    blocks: np.ndarray
    active: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool = True

    @property
    def beta(self):
        return np.concatenate([[self.intercept], self.blocks.ravel()])


def group_soft_threshold(v, t):
    """Proximal map of ``t * ||.||_2``: zero if ``||v|| <= t``, else shrink by ``t``."""
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm <= t:
        return np.zeros_like(v)
    return (1.0 - t / nrm) * v


def objective(problem, beta):
    beta = np.asarray(beta, dtype=float)
    r = problem.response - problem.design @ beta
    norms = np.linalg.norm(problem.blocks(beta), axis=1)
    finite = np.isfinite(problem.weights)
    if np.any(norms[~finite] > 0):
        return np.inf
    return 0.5 * r @ r + problem.lam * (problem.weights[finite] @ norms[finite])


def _kkt(G, Xty, beta, lam, weights, L):
    """Columnwise KKT residuals; ``beta`` is (1 + nG*L, q), ``weights`` (nG, q)."""
    grad = G @ beta - Xty
    q = beta.shape[1]
    gb = grad[1:].reshape(-1, L, q)
    bb = beta[1:].reshape(-1, L, q)
    norms = np.linalg.norm(bb, axis=1)  # (nG, q)
    thr = lam[None, :] * weights  # (nG, q)
    active = norms > 0
    safe = np.where(active, norms, 1.0)
    with np.errstate(invalid="ignore"):
        scale = np.where(active, thr / safe, 0.0)
    act_res = np.linalg.norm(gb + scale[:, None, :] * bb, axis=1)
    inact_res = np.maximum(0.0, np.linalg.norm(gb, axis=1) - thr)
    inact_res = np.where(np.isinf(thr), 0.0, inact_res)
    res = np.where(active, act_res, inact_res)
    return np.maximum(res.max(axis=0, initial=0.0), np.abs(grad[0]))


def kkt_residual(problem, solution):
    """Largest violation of the optimality conditions.

    Active group: ``||grad_k + lam w_k beta_k / ||beta_k|| ||``; inactive group:
    ``max(0, ||grad_k|| - lam w_k)``; intercept: ``|grad_0|``.
    """
    beta = solution.beta if isinstance(solution, GroupSolution) else np.asarray(solution, dtype=float)
    Xty = problem.design.T @ problem.response
    return float(
        _kkt(problem.gram, Xty[:, None], beta[:, None], np.array([problem.lam]),
             problem.weights[:, None], problem.group_size)[0]
    )


def power_iteration(G, tol=1e-10, max_iter=1000, seed=0):
    """Largest eigenvalue of the symmetric PSD matrix ``G``."""
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    ev = 0.0
    for _ in range(max_iter):
        w = G @ v
        ev_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(ev_new - ev) <= tol * max(ev_new, 1e-300):
            ev = ev_new
            break
        ev = ev_new
    return max(ev, float(np.linalg.norm(G @ v)))


def lambda_max(problem):
    """Smallest ``lam`` for which every finite-weight group is zero."""
    finite = np.isfinite(problem.weights)
    if not finite.any():
        raise ValueError("all group weights are infinite")
    X, y = problem.design, problem.response
    x0 = X[:, 0]
    r = y - x0 * (x0 @ y) / (x0 @ x0)
    g = (X[:, 1:].T @ r).reshape(problem.n_groups, problem.group_size)
    return float(np.max(np.linalg.norm(g[finite], axis=1) / problem.weights[finite]))


def adaptive_weights(pilot, nu=1.0):
    """``||pilot_k||^-nu`` for nonzero pilot blocks, ``inf`` otherwise."""
    blocks = pilot.blocks if isinstance(pilot, GroupSolution) else np.asarray(pilot)
    norms = np.linalg.norm(blocks, axis=-1)
    with np.errstate(divide="ignore"):
        return np.where(norms > 0, norms ** (-float(nu)), np.inf)


def solve(problem, tol=1e-6, max_iter=10000, init=None, polish=True):
    """Accelerated proximal gradient with adaptive restart, then an active-set Newton polish."""
    beta, kkt, iters, conv = solve_batch(
        problem.gram, (problem.design.T @ problem.response)[:, None], problem.group_size,
        problem.weights[None, :], np.array([problem.lam]), tol=tol, max_iter=max_iter,
        init=None if init is None else np.asarray(init, dtype=float)[:, None], polish=polish,
    )
    b = beta[:, 0]
    blocks = problem.blocks(b).copy()
    return GroupSolution(
        float(b[0]), blocks, np.linalg.norm(blocks, axis=1) > 0, float(kkt[0]), int(iters), bool(conv[0])
    )


def solve_batch(G, Xty, L, weights, lam, tol=1e-6, max_iter=10000, init=None, polish=True, lip=None):
    """Solve ``q`` problems sharing the Gram matrix ``G``.

    Parameters
    ----------
    G : (d, d) Gram matrix ``X'X`` with d = 1 + nG * L.
    Xty : (d, q) or (d,) right-hand sides ``X'y``.
    weights : (q, nG) group weights (``inf`` holds a group at zero).
    lam : (q,) penalty levels.

    Returns
    -------
    beta : (d, q), kkt : (q,), iterations : int, converged : (q,) bool
    """
    Xty = np.asarray(Xty, dtype=float)
    squeeze = Xty.ndim == 1
    if squeeze:
        Xty = Xty[:, None]
    d, q = Xty.shape
    nG = (d - 1) // L
    weights = np.broadcast_to(np.asarray(weights, dtype=float), (q, nG))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (q,))
    W = weights.T  # (nG, q)
    thr_full = lam[None, :] * W
    if lip is None:
        lip = power_iteration(G) * (1 + 1e-8)
    x = np.zeros((d, q)) if init is None else np.array(init, dtype=float).reshape(d, q)
    x[1:].reshape(nG, L, q)[np.broadcast_to(np.isinf(W)[:, None, :], (nG, L, q))] = 0.0
    if lip <= 0:
        return x, _kkt(G, Xty, x, lam, W, L), 0, np.ones(q, bool)
    step = 1.0 / lip
    thr = thr_full * step

    def prox(v):
        out = v.copy()
        blk = out[1:].reshape(nG, L, q)
        nrm = np.linalg.norm(blk, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(nrm > thr, 1.0 - thr / np.where(nrm > 0, nrm, 1.0), 0.0)
        blk *= scale[:, None, :]
        return out

    y = x.copy()
    t = np.ones(q)
    kkt = _kkt(G, Xty, x, lam, W, L)
    it = 0
    check_every = 10
    while it < max_iter and np.any(kkt >= tol):
        it += 1
        x_new = prox(y - step * (G @ y - Xty))
        restart = np.einsum("ij,ij->j", y - x_new, x_new - x) > 0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = np.where(restart, 0.0, (t - 1.0) / t_new)
        y = x_new + mom * (x_new - x)
        t = np.where(restart, 1.0, t_new)
        x = x_new
        if it % check_every == 0:
            kkt = _kkt(G, Xty, x, lam, W, L)
            if polish and (it == 3 * check_every or it % (10 * check_every) == 0):
                x, kkt = _polish_all(G, Xty, x, lam, W, L, kkt, tol)
    kkt = _kkt(G, Xty, x, lam, W, L)
    if polish:
        x, kkt = _polish_all(G, Xty, x, lam, W, L, kkt, tol)
    beta = x[:, 0] if squeeze else x
    return beta, kkt, it, kkt < tol


def _polish_all(G, Xty, x, lam, W, L, kkt, tol):
    for j in np.nonzero(kkt >= tol)[0]:
        xj, kj = _active_set_newton(G, Xty[:, j], x[:, j], lam[j], W[:, j], L)
        if kj < kkt[j]:
            x[:, j] = xj
            kkt[j] = kj
    return x, kkt


def _support(act, L):
    return np.concatenate([[0], (1 + act[:, None] * L + np.arange(L)).ravel()]).astype(int)


def _active_set_newton(G, b, beta, lam, w, L, tol=1e-12):
    """Newton on the active groups, dropping groups whose block optimum is zero
    and adding the worst KKT violator until no inactive group violates."""
    nG = w.size
    v = beta.copy()
    v[1:].reshape(nG, L)[np.isinf(w)] = 0.0
    for _ in range(2 * nG + 5):
        v = _newton_restricted(G, b, v, lam, w, L)
        grad = G @ v - b
        gb = grad[1:].reshape(nG, L)
        blocks = v[1:].reshape(nG, L)
        inactive = (np.linalg.norm(blocks, axis=1) == 0) & np.isfinite(w)
        viol = np.where(inactive, np.linalg.norm(gb, axis=1) - lam * w, -np.inf)
        k = int(np.argmax(viol))
        if not viol[k] > tol:
            break
        s = slice(1 + k * L, 1 + (k + 1) * L)
        lk = np.linalg.eigvalsh(G[s, s])[-1]
        gn = np.linalg.norm(gb[k])
        v[s] = -(viol[k] / gn / lk) * gb[k]
    kk = _kkt(G, b[:, None], v[:, None], np.array([lam]), w[:, None], L)[0]
    return v, kk


def _newton_restricted(G, b, beta, lam, w, L, max_iter=50):
    nG = w.size
    v_full = beta.copy()
    scale = max(1.0, float(np.abs(b).max()))
    for _ in range(max_iter):
        # a group whose blockwise minimizer is zero is set to zero (never increases the objective)
        grad = G @ v_full - b
        for k in np.nonzero(np.linalg.norm(v_full[1:].reshape(nG, L), axis=1) > 0)[0]:
            s = slice(1 + k * L, 1 + (k + 1) * L)
            if np.linalg.norm(grad[s] - G[s, s] @ v_full[s]) <= lam * w[k]:
                grad -= G[:, s] @ v_full[s]
                v_full[s] = 0.0
        act = np.nonzero(np.linalg.norm(v_full[1:].reshape(nG, L), axis=1) > 0)[0]
        idx = _support(act, L)
        Gs, bs, ws = G[np.ix_(idx, idx)], b[idx], w[act]

        def f(v):
            return 0.5 * v @ Gs @ v - bs @ v + lam * (ws @ np.linalg.norm(v[1:].reshape(-1, L), axis=1))

        v = v_full[idx]
        blk = v[1:].reshape(-1, L)
        nrm = np.linalg.norm(blk, axis=1)
        u = blk / nrm[:, None]
        g = grad[idx]
        g[1:] += (lam * ws[:, None] * u).ravel()
        if np.linalg.norm(g) <= 1e-13 * scale:
            break
        H = Gs.copy()
        for a in range(act.size):
            s = slice(1 + a * L, 1 + (a + 1) * L)
            H[s, s] += lam * ws[a] / nrm[a] * (np.eye(L) - np.outer(u[a], u[a]))
        try:
            with warnings.catch_warnings():
                # near-singular designs are expected; the line search guards the step
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                dv = -linalg.solve(H, g, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            dv = -linalg.lstsq(H, g)[0]
        if not np.all(np.isfinite(dv)):
            break
        f0 = f(v)
        alpha = 1.0
        while alpha > 1e-12:
            v_new = v + alpha * dv
            f_new = f(v_new)
            if f_new <= f0:
                break
            alpha *= 0.5
        else:
            break
        v_full[idx] = v_new
        if np.linalg.norm(v_new - v) <= 1e-15 * max(1.0, np.linalg.norm(v)):
            break
    return v_full
