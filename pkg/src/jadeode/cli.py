"""Command-line front end: simulate, fit, tune, replicate, evaluate.

Every command reads an optional JSON config (``--config``) whose values are
overridden by explicit flags; the effective config is echoed into outputs.
"""

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import engine, evaluate, simulate
from .dataset import DataError, read_dataset, write_dataset
from .expfam import Family
from .smooth import SmoothingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FAMILY_PRESET = {
    "gaussian": "appendixB-gaussian",
    "poisson": "appendixB-poisson",
    "binomial": "appendixB-bernoulli",
}
COMPONENT_POINTS = 201


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    preset: str = "appendixB-gaussian"
    n: int = 100
    replicates: int = None
    snr: float = 25.0
    seed: int = 1
    count: int = 1
    methods: list = field(default_factory=lambda: ["twostage", "jade"])
    method: str = "jade"
    jade: dict = field(default_factory=dict)
    lambda_grid: dict = field(default_factory=lambda: {"size": 30, "ratio": 1e-3})
    out: str = "out"
    step: float = 0.01
    jobs: int = 1

    def __post_init__(self):
        if self.preset not in simulate.PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {simulate.PRESETS}")
        if not (isinstance(self.n, int) and self.n >= 2):
            raise ConfigError("n must be an integer >= 2")
        if self.replicates is not None and not (isinstance(self.replicates, int) and self.replicates >= 1):
            raise ConfigError("replicates must be a positive integer")
        if self.family == "gaussian" and not (self.snr is not None and self.snr > 0):
            raise ConfigError("snr must be positive for gaussian data")
        if not (isinstance(self.count, int) and self.count >= 1):
            raise ConfigError("count must be a positive integer")
        for m in list(self.methods) + [self.method]:
            if m not in engine.METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {engine.METHODS}")
        unknown = set(self.lambda_grid) - {"size", "ratio", "values"}
        if unknown:
            raise ConfigError(f"unknown lambda_grid keys: {sorted(unknown)}")
        if "values" in self.lambda_grid and not self.lambda_grid["values"]:
            raise ConfigError("lambda_grid.values must be nonempty")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        self.jade_config()

    @property
    def family(self):
        return simulate.PRESET_FAMILY[self.preset][0]

    def jade_config(self):
        try:
            return engine.JadeConfig.from_dict(self.jade)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"jade: {exc}") from None

    def grid(self, model, c0):
        if "values" in self.lambda_grid:
            return np.asarray(self.lambda_grid["values"], dtype=float)
        return engine.default_lambda_grid(
            model, c0, int(self.lambda_grid.get("size", 30)), float(self.lambda_grid.get("ratio", 1e-3))
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(args):
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    jade = dict(doc.get("jade", {}))
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "family", None) is not None:
        doc["preset"] = FAMILY_PRESET[args.family]
    if getattr(args, "out", None) is not None:
        doc["out"] = args.out
    if getattr(args, "method", None) is not None:
        doc["method"] = args.method
    if getattr(args, "lambda_theta", None) is not None:
        jade["lambda_theta"] = args.lambda_theta
    if getattr(args, "lambda_gamma", None) is not None:
        lg = args.lambda_gamma
        if lg != "auto":
            try:
                lg = float(lg)
            except ValueError:
                raise ConfigError("--lambda-gamma takes a number or 'auto'") from None
        jade["lambda_gamma"] = lg
    doc["jade"] = jade
    return ExperimentConfig.from_dict(doc)


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _clean(obj):
    """Replace non-finite floats so the JSON is strict."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_curves(fit, path, n_nodes=401):
    lo, hi = fit.t_span
    t = np.linspace(lo, hi, n_nodes)
    th, dth = fit.latent(t), fit.derivative(t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "process", "theta", "dtheta"])
        for j in range(th.shape[0]):
            for i in range(t.size):
                w.writerow([repr(float(t[i])), j + 1, repr(float(th[j, i])), repr(float(dth[j, i]))])


def write_components(fit, path, n_points=COMPONENT_POINTS, n_nodes=401):
    """Each ``f_jk`` on ``n_points`` over the fitted range of process ``k``."""
    lo, hi = fit.t_span
    th = fit.latent(np.linspace(lo, hi, n_nodes))
    p = th.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["equation", "process", "theta", "value"])
        for k in range(p):
            u = np.linspace(th[k].min(), th[k].max(), n_points)
            feats = fit.component_basis.evaluate(u)
            for j in range(p):
                vals = feats @ fit.blocks[j, k]
                for a, v in zip(u, vals):
                    w.writerow([j + 1, k + 1, repr(float(a)), repr(float(v))])


def write_tuning(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda_gamma", "score", "nnz", "fidelity"])
        for row in table:
            w.writerow([repr(row["lambda_gamma"]), repr(row["score"]), row["nnz"], repr(row["fidelity"])])


def _save_fit(fit, cfg, out):
    doc = fit.to_dict()
    doc["experiment"] = dict(cfg.to_dict(), n=fit.model.dataset.n)
    _dump_json(_clean(doc), out / "fit.json")
    write_curves(fit, out / "curves.csv")
    write_components(fit, out / "components.csv")


# ----- commands ------------------------------------------------------------

def cmd_simulate(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    snr = cfg.snr if cfg.family == "gaussian" else None
    spec, _, data = simulate.simulate(cfg.preset, cfg.n, snr, cfg.seed, cfg.replicates, cfg.step)
    write_dataset(data, out / "data.csv")
    truth = spec.to_dict()
    truth["step"] = cfg.step
    _dump_json(truth, out / "truth.json")
    print(f"simulated p={data.p} n={data.n} replicates={data.replicates} "
          f"family={data.family.kind} seed={cfg.seed} -> {out / 'data.csv'}")
    return EXIT_OK


def _prepare(cfg, data_path):
    data = read_dataset(data_path)
    jcfg = cfg.jade_config()
    model = engine.JadeModel(data, jcfg)
    c0, _ = engine.initial_latent(model, jcfg.smoothing_grid)
    return data, jcfg, model, c0


def cmd_fit(cfg, data_path):
    data, jcfg, model, c0 = _prepare(cfg, data_path)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if jcfg.lambda_gamma == "auto":
        _, fit, table = engine.select_and_fit(data, jcfg, cfg.grid(model, c0), model, c0, cfg.method)
        write_tuning(table, out / "tuning.csv")
    else:
        fit = engine.fit(data, jcfg, init=c0, model=model, c_updates=cfg.method == "jade")
    _save_fit(fit, cfg, out)
    _report_flags(fit)
    b = fit.objective()
    print(f"{fit.method}: lambda_gamma={fit.lambda_gamma:.6g} edges={int(fit.adjacency.sum())} "
          f"objective={b.total:.10g} -> {out}")
    return EXIT_OK


def cmd_tune(cfg, data_path):
    data, jcfg, model, c0 = _prepare(cfg, data_path)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lam, fit, table = engine.tune(data, jcfg, cfg.grid(model, c0), model, c0, method=cfg.method)
    write_tuning(table, out / "tuning.csv")
    _save_fit(fit, cfg, out)
    print(f"{cfg.method}: best lambda_gamma={lam:.6g} over {len(table)} grid points -> {out}")
    return EXIT_OK


def _report_flags(fit):
    d = fit.diagnostics
    for outer, j in d.get("armijo_failures", []):
        print(f"warning: latent block {j + 1} made no Armijo step in outer iteration {outer}", file=sys.stderr)
    if d.get("gamma_unconverged"):
        print(f"warning: {d['gamma_unconverged']} equation solves missed the KKT tolerance", file=sys.stderr)


def run_seed(cfg, seed):
    """Simulate, select lambda_gamma, fit every method and evaluate; one seed."""
    snr = cfg.snr if cfg.family == "gaussian" else None
    spec, traj, data = simulate.simulate(cfg.preset, cfg.n, snr, seed, cfg.replicates, cfg.step)
    jcfg = cfg.jade_config()
    model = engine.JadeModel(data, jcfg)
    c0, _ = engine.initial_latent(model, jcfg.smoothing_grid)
    grid = cfg.grid(model, c0)
    fits = {}
    lam = jcfg.lambda_gamma
    if lam == "auto":
        lam, fits[jcfg.tune_path], _ = engine.tune(data, jcfg, grid, model, c0, method=jcfg.tune_path)
    for method in cfg.methods:
        if method not in fits:
            fits[method] = engine.fit(data, jcfg, init=c0, lambda_gamma=lam, model=model,
                                      c_updates=method == "jade")
    rows = []
    for method in cfg.methods:
        rep = evaluate.evaluate(fits[method], spec, traj)
        rows.append(evaluate.result_row(method, cfg.family, cfg.n, snr, seed, rep))
    return rows, fits


def _run_seed_rows(cfg, seed):
    try:
        return seed, run_seed(cfg, seed)[0], None
    except (SmoothingError, simulate.BlowUpError, FloatingPointError, np.linalg.LinAlgError,
            RuntimeError, ValueError) as exc:
        return seed, None, f"{type(exc).__name__}: {exc}"


def cmd_replicate(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(cfg.seed, cfg.seed + cfg.count))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            results = list(ex.map(_run_seed_rows, [cfg] * len(seeds), seeds))
    else:
        results = [_run_seed_rows(cfg, s) for s in seeds]
    rows, failed = [], []
    for seed, r, err in sorted(results, key=lambda x: x[0]):
        if err is not None:
            failed.append(seed)
            print(f"seed {seed} failed: {err}", file=sys.stderr)
        else:
            rows.extend(r)
    summary = evaluate.summarize(rows) if rows else []
    table = list(rows)
    for method in cfg.methods:
        means = {s["metric"]: s["mean"] for s in summary if s["method"] == method}
        ses = {s["metric"]: s["se"] for s in summary if s["method"] == method}
        if means:
            base = {"method": method, "family": cfg.family, "n": cfg.n,
                    "snr": cfg.snr if cfg.family == "gaussian" else ""}
            table.append(dict(base, seed="mean", **means))
            table.append(dict(base, seed="se", **ses))
    evaluate.write_results(table, out / "results.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "metric", "mean", "se", "count"])
        for s in summary:
            w.writerow([s["method"], s["metric"], repr(s["mean"]), repr(s["se"]), s["count"]])
    _dump_json(cfg.to_dict(), out / "config.json")
    print(f"replicated {len(seeds) - len(failed)}/{len(seeds)} seeds -> {out / 'results.csv'}")
    if len(failed) > 0.2 * len(seeds):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_evaluate(cfg, fit_path, truth_path):
    try:
        fit = engine.SavedFit(json.loads(Path(fit_path).read_text()))
        tdoc = json.loads(Path(truth_path).read_text())
        spec = simulate.TruthSpec.from_dict(tdoc)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read fit or truth: {exc}") from None
    traj = simulate.solve_truth(spec, tdoc.get("step", cfg.step))
    rep = evaluate.evaluate(fit, spec, traj)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    family = (spec.family or {}).get("kind", "")
    exp = fit.doc.get("experiment", {})
    snr = exp.get("snr", "") if family == "gaussian" else ""
    row = evaluate.result_row(fit.method, family, exp.get("n", ""), snr, spec.seed, rep)
    evaluate.write_results([row], out / "results.csv", append=True)
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


# ----- argument parsing ------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--family", choices=sorted(FAMILY_PRESET))
    common.add_argument("--method", choices=engine.METHODS)
    common.add_argument("--lambda-theta", type=float, dest="lambda_theta")
    common.add_argument("--lambda-gamma", dest="lambda_gamma", help="number or 'auto'")

    p = argparse.ArgumentParser(prog="jadeode", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a benchmark dataset")
    f = sub.add_parser("fit", parents=[common], help="fit one dataset")
    f.add_argument("data")
    t = sub.add_parser("tune", parents=[common], help="score a lambda_gamma grid")
    t.add_argument("data")
    sub.add_parser("replicate", parents=[common], help="Monte Carlo study over seeds")
    e = sub.add_parser("evaluate", parents=[common], help="score a saved fit against a truth")
    e.add_argument("fit")
    e.add_argument("truth")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.data)
        if args.command == "tune":
            return cmd_tune(cfg, args.data)
        if args.command == "replicate":
            return cmd_replicate(cfg)
        return cmd_evaluate(cfg, args.fit, args.truth)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SmoothingError, simulate.BlowUpError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
