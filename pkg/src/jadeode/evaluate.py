"""Accuracy of latent processes, additive components and the recovered network."""

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .basis import trapezoid_weights

N_NODES = 401
RESULT_COLUMNS = ("method", "family", "n", "snr", "seed", "mse_latent", "mse_deriv",
                  "mse_active", "mse_inactive", "tp", "fp")


@dataclass
class EvalReport:
    mse_latent: float
    mse_deriv: float
    mse_active: float
    mse_inactive: float
    tp_rate: float
    fp_rate: float

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if self.tp_rate > 100 or self.fp_rate > 100:
            raise ValueError("rates are percentages")

    def to_dict(self):
        return asdict(self)


def _curves(estimate, t, order):
    if callable(getattr(estimate, "latent", None)):
        return estimate.latent(t) if order == 0 else estimate.derivative(t)
    if order == 0:
        return estimate.at(t)
    return estimate.deriv_at(t)


def latent_errors(estimate, truth, order=0, n_nodes=N_NODES, t_span=None):
    """Per-process ``int (est - truth)^2 dt`` by the trapezoid rule.

    ``estimate`` is a fit (``latent``/``derivative`` methods) or another
    trajectory; ``truth`` is a Trajectory.
    """
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    span = (truth.grid[0], truth.grid[-1])
    if t_span is None:
        t_span = getattr(estimate, "t_span", span)
    if not np.allclose(t_span, span, rtol=0, atol=1e-9):
        raise ValueError(f"time span {tuple(t_span)} does not match the truth's {span}")
    t = np.linspace(span[0], span[1], n_nodes)
    diff = _curves(estimate, t, order) - _curves(truth, t, order)
    return (diff**2) @ trapezoid_weights(t)


def mse_latent(estimate, truth, order=0, n_nodes=N_NODES):
    """``(1/p) sum_j int (est_j - theta_j)^2 dt`` over the time span (unnormalized in t)."""
    return float(latent_errors(estimate, truth, order, n_nodes).mean())


def _centered(values, w):
    return values - (values @ w) / w.sum()


def component_errors(blocks, component_basis, truth_spec, truth, n_nodes=N_NODES):
    """``int_{R_k} (f_hat_jk - f_jk)^2 du`` for every pair, both centered over ``R_k``.

    ``blocks`` is (p, p, L) and ``component_basis`` maps values to (n, L)
    features; ``R_k`` is the range of the truth's process ``k``.
    """
    p = truth.values.shape[0]
    out = np.zeros((p, p))
    for k in range(p):
        lo, hi = truth.values[k].min(), truth.values[k].max()
        if hi <= lo:
            continue
        u = np.linspace(lo, hi, n_nodes)
        w = trapezoid_weights(u)
        feats = component_basis.evaluate(u)
        for j in range(p):
            f_hat = _centered(feats @ blocks[j, k], w)
            f = _centered(truth_spec.component(j, k, u), w)
            out[j, k] = float(((f_hat - f) ** 2) @ w)
    return out


def mse_components(fit, truth_spec, truth, n_nodes=N_NODES):
    """Mean component error over the true active set and over its complement."""
    active = np.asarray(truth_spec.adjacency, bool)
    if not active.any():
        raise ValueError("the truth has no active components")
    err = component_errors(fit.blocks, fit.component_basis, truth_spec, truth, n_nodes)
    inactive = err[~active].mean() if (~active).any() else 0.0
    return float(err[active].mean()), float(inactive)


def network_rates(adjacency, truth_adjacency):
    """True- and false-positive rates in percent over all ``p^2`` components."""
    est = np.asarray(adjacency, bool)
    true = np.asarray(truth_adjacency, bool)
    if est.shape != true.shape:
        raise ValueError(f"adjacency shape {est.shape} differs from truth {true.shape}")
    n_true, n_false = true.sum(), (~true).sum()
    tp = 100.0 * (est & true).sum() / n_true if n_true else 0.0
    fp = 100.0 * (est & ~true).sum() / n_false if n_false else 0.0
    return float(tp), float(fp)


def evaluate(fit, truth_spec, truth):
    active, inactive = mse_components(fit, truth_spec, truth)
    tp, fp = network_rates(fit.adjacency, truth_spec.adjacency)
    return EvalReport(
        mse_latent(fit, truth, 0), mse_latent(fit, truth, 1), active, inactive, tp, fp
    )


def result_row(method, family, n, snr, seed, report):
    return {
        "method": method, "family": family, "n": n, "snr": "" if snr is None else snr, "seed": seed,
        "mse_latent": report.mse_latent, "mse_deriv": report.mse_deriv,
        "mse_active": report.mse_active, "mse_inactive": report.mse_inactive,
        "tp": report.tp_rate, "fp": report.fp_rate,
    }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(rows, path, append=False):
    """Write result rows (dicts keyed by ``RESULT_COLUMNS``) as CSV."""
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def summarize(rows, metrics=RESULT_COLUMNS[5:]):
    """Mean and standard error of every metric per method."""
    out = []
    for method in sorted({r["method"] for r in rows}):
        sub = [r for r in rows if r["method"] == method]
        for m in metrics:
            x = np.array([float(r[m]) for r in sub])
            se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
            out.append({"method": method, "metric": m, "mean": float(x.mean()), "se": se, "count": int(x.size)})
    return out
