"""Observation container and its on-disk form (long CSV plus a JSON sidecar)."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expfam import Family


class DataError(ValueError):
    """Malformed or inconsistent dataset file."""


@dataclass
class Dataset:
    """Observations ``y[j, i, r]`` of process ``j`` at ``times[i]``, replicate ``r``.

    Missing entries are ``nan``; processes may therefore have different time
    sets on the shared grid ``times``.
    """

    times: np.ndarray
    values: np.ndarray
    family: Family
    t_span: tuple = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3 or self.values.shape[1] != self.times.size:
            raise DataError(
                f"values shape {self.values.shape} incompatible with {self.times.size} time points"
            )
        if np.any(np.diff(self.times) <= 0):
            raise DataError("times must be strictly increasing")
        if self.t_span is None:
            self.t_span = (float(self.times[0]), float(self.times[-1]))
        self.t_span = (float(self.t_span[0]), float(self.t_span[1]))

    @property
    def p(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.times.size

    @property
    def replicates(self):
        return self.values.shape[2]


def write_dataset(dataset, path):
    """Write ``path`` (CSV) and ``path`` with suffix ``.meta.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "process", "replicate", "value"])
        for j in range(dataset.p):
            for i, t in enumerate(dataset.times):
                for r in range(dataset.replicates):
                    v = dataset.values[j, i, r]
                    if not np.isnan(v):
                        w.writerow([repr(float(t)), j + 1, r + 1, repr(float(v))])
    meta = dict(dataset.meta)
    meta.update(
        family=dataset.family.to_dict(),
        t_span=list(dataset.t_span),
        n=dataset.n,
        p=dataset.p,
        replicates=dataset.replicates,
    )
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def meta_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def read_dataset(path, family=None):
    """Parse a dataset CSV; row numbers in errors count the header as row 1."""
    path = Path(path)
    mpath = meta_path(path)
    meta = json.loads(mpath.read_text()) if mpath.exists() else {}
    if family is None:
        if "family" not in meta:
            raise DataError(f"{path}: no family given and no sidecar {mpath.name}")
        family = Family.from_dict(meta["family"])
    rows = []
    seen = {}
    last_time = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["time", "process", "replicate", "value"]:
            raise DataError(f"{path}: row 1: header must be time,process,replicate,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
            try:
                t, j, r, v = float(row[0]), int(row[1]), int(row[2]), float(row[3])
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            if j < 1 or r < 1:
                raise DataError(f"{path}: row {lineno}: process and replicate are 1-based")
            if not (np.isfinite(t) and np.isfinite(v)):
                raise DataError(f"{path}: row {lineno}: non-finite entry")
            key = (t, j, r)
            if key in seen:
                raise DataError(
                    f"{path}: row {lineno}: duplicate (time, process, replicate) {key}, first at row {seen[key]}"
                )
            seen[key] = lineno
            if t < last_time.get(j, -np.inf):
                raise DataError(f"{path}: row {lineno}: times must be sorted within process {j}")
            last_time[j] = t
            rows.append((t, j, r, v))
    if not rows:
        raise DataError(f"{path}: no observations")
    arr = np.array(rows)
    procs = np.unique(arr[:, 1]).astype(int)
    if not np.array_equal(procs, np.arange(1, procs.size + 1)):
        raise DataError(f"{path}: process indices must be contiguous from 1, got {procs.tolist()}")
    times = np.unique(arr[:, 0])
    p, n, R = procs.size, times.size, int(arr[:, 2].max())
    values = np.full((p, n, R), np.nan)
    ti = np.searchsorted(times, arr[:, 0])
    values[arr[:, 1].astype(int) - 1, ti, arr[:, 2].astype(int) - 1] = arr[:, 3]
    t_span = tuple(meta.get("t_span", (times[0], times[-1])))
    extra = {k: v for k, v in meta.items() if k not in ("family", "t_span", "n", "p", "replicates")}
    return Dataset(times, values, family, t_span, extra)
