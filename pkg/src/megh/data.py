"""Clustered survival datasets: loading, validation, standardisation and
per-cluster Kaplan-Meier curves.

A :class:`ClusteredDataset` keeps one covariate matrix and two column-index
lists selecting the hazard-scale and time-scale designs from it. Rows stay
in input order; the cluster-sorted view the likelihood kernels need is
computed once and cached.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "ClusteredDataset",
    "ColumnRoles",
    "KMCurve",
    "load_dataset",
    "write_dataset",
    "km_by_cluster",
    "kaplan_meier",
    "summarize",
    "write_km_csv",
]


def _as_labels(values) -> np.ndarray:
    """Cluster labels as ints when they all look like ints, else strings."""
    arr = np.asarray(values)
    if arr.dtype.kind in "iu":
        return arr.astype(np.int64)
    if arr.dtype.kind == "f":
        if np.all(np.isfinite(arr)) and np.all(arr == np.round(arr)):
            return arr.astype(np.int64)
        return arr.astype(str)
    strs = arr.astype(str)
    try:
        return np.array([int(s) for s in strs], dtype=np.int64)
    except ValueError:
        return strs


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """Right-censored survival records grouped into clusters.

    Parameters
    ----------
    times : (n,) array, all > 0
    status : (n,) array of 0/1 event indicators
    cluster : (n,) cluster labels
    X : (n, q) covariate matrix
    covariate_names : q names
    hazard_columns, time_columns : column indices into ``X``
    transforms : name -> (mean, sd) for standardised columns
    """

    times: np.ndarray
    status: np.ndarray
    cluster: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...]
    hazard_columns: tuple[int, ...]
    time_columns: tuple[int, ...] = ()
    transforms: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        status = np.asarray(self.status, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(times), -1) if X.size else np.zeros((len(times), 0))
        for name, value in (("times", times), ("status", status), ("X", X)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        labels = _as_labels(self.cluster).ravel()
        labels.setflags(write=False)
        object.__setattr__(self, "cluster", labels)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "hazard_columns", tuple(int(j) for j in self.hazard_columns))
        object.__setattr__(self, "time_columns", tuple(int(j) for j in self.time_columns))
        self.validate()

    # -- validation ----------------------------------------------------------
    def validate(self) -> None:
        problems = []
        n = self.times.size
        if n == 0:
            raise ValidationError("dataset has no rows", ["empty"])
        for name, arr in (("status", self.status), ("cluster", self.cluster)):
            if arr.shape[0] != n:
                problems.append(f"{name} has {arr.shape[0]} rows, times has {n}")
        if self.X.shape[0] != n:
            problems.append(f"covariate matrix has {self.X.shape[0]} rows, times has {n}")
        if len(self.covariate_names) != self.X.shape[1]:
            problems.append(
                f"{len(self.covariate_names)} covariate names for {self.X.shape[1]} columns"
            )
        if problems:
            raise ValidationError("; ".join(problems), problems)
        bad = np.flatnonzero(~(self.times > 0) | ~np.isfinite(self.times))
        if bad.size:
            problems.append(f"nonpositive or non-finite times at rows {_rows(bad)}")
        bad = np.flatnonzero((self.status != 0) & (self.status != 1))
        if bad.size:
            problems.append(f"status not in {{0, 1}} at rows {_rows(bad)}")
        bad_cells = np.argwhere(~np.isfinite(self.X))
        if bad_cells.size:
            cols = sorted({self.covariate_names[j] for j in bad_cells[:, 1]})
            problems.append(f"non-finite covariates in columns {cols} at rows {_rows(bad_cells[:, 0])}")
        q = self.X.shape[1]
        for label, cols in (("hazard", self.hazard_columns), ("time-scale", self.time_columns)):
            out = [j for j in cols if not 0 <= j < q]
            if out:
                problems.append(f"{label} column indices {out} out of range for {q} covariates")
            if len(set(cols)) != len(cols):
                problems.append(f"{label} columns repeat: {cols}")
        if problems:
            raise ValidationError("; ".join(problems), problems)
        events = self.status == 1
        for label, cols in (("hazard", self.hazard_columns), ("time-scale", self.time_columns)):
            if not cols:
                continue
            sub = self.X[np.ix_(events, cols)]
            rank = np.linalg.matrix_rank(sub) if sub.size else 0
            if rank < len(cols):
                names = [self.covariate_names[j] for j in cols]
                problems.append(
                    f"{label} design {names} restricted to uncensored rows has rank "
                    f"{rank} < {len(cols)} columns"
                )
        if problems:
            raise ValidationError("; ".join(problems), problems)

    # -- shape ---------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.times.size

    @cached_property
    def _groups(self):
        labels, codes, counts = np.unique(self.cluster, return_inverse=True, return_counts=True)
        order = np.argsort(codes, kind="stable")
        offsets = np.zeros(labels.size + 1, dtype=np.intp)
        np.cumsum(counts, out=offsets[1:])
        return labels, codes.astype(np.intp), counts, order, offsets

    @property
    def cluster_labels(self) -> np.ndarray:
        return self._groups[0]

    @property
    def cluster_codes(self) -> np.ndarray:
        """Cluster index 0..r-1 of every row."""
        return self._groups[1]

    @property
    def r(self) -> int:
        return self._groups[0].size

    @property
    def cluster_sizes(self) -> np.ndarray:
        return self._groups[2]

    @property
    def order(self) -> np.ndarray:
        """Row permutation that sorts the data by cluster (stable)."""
        return self._groups[3]

    @property
    def offsets(self) -> np.ndarray:
        """Cluster boundaries in the sorted order; length r + 1."""
        return self._groups[4]

    @property
    def hazard_names(self) -> tuple[str, ...]:
        return tuple(self.covariate_names[j] for j in self.hazard_columns)

    @property
    def time_names(self) -> tuple[str, ...]:
        return tuple(self.covariate_names[j] for j in self.time_columns)

    @property
    def X_hazard(self) -> np.ndarray:
        return self.X[:, list(self.hazard_columns)]

    @property
    def X_time(self) -> np.ndarray:
        return self.X[:, list(self.time_columns)]

    @property
    def censoring_rate(self) -> float:
        return 1.0 - float(self.status.mean())

    @cached_property
    def sorted_arrays(self):
        """(times, status, X_hazard, X_time) in cluster-sorted order, contiguous."""
        o = self.order
        return (
            np.ascontiguousarray(self.times[o]),
            np.ascontiguousarray(self.status[o]),
            np.ascontiguousarray(self.X_hazard[o]),
            np.ascontiguousarray(self.X_time[o]),
        )

    def cluster_rows(self, i: int) -> np.ndarray:
        """Original row indices of cluster ``i`` (0-based cluster index)."""
        if not 0 <= i < self.r:
            raise IndexError(f"cluster index {i} out of range for {self.r} clusters")
        return self.order[self.offsets[i] : self.offsets[i + 1]]

    # -- derived datasets ----------------------------------------------------
    def with_outcomes(self, times, status) -> "ClusteredDataset":
        """Same design and clusters, new (times, status)."""
        return ClusteredDataset(
            times, status, self.cluster, self.X, self.covariate_names,
            self.hazard_columns, self.time_columns, dict(self.transforms), dict(self.metadata),
        )

    def with_columns(self, hazard_columns, time_columns) -> "ClusteredDataset":
        return ClusteredDataset(
            self.times, self.status, self.cluster, self.X, self.covariate_names,
            hazard_columns, time_columns, dict(self.transforms), dict(self.metadata),
        )

    def subset(self, rows) -> "ClusteredDataset":
        rows = np.asarray(rows)
        return ClusteredDataset(
            self.times[rows], self.status[rows], self.cluster[rows], self.X[rows],
            self.covariate_names, self.hazard_columns, self.time_columns,
            dict(self.transforms), dict(self.metadata),
        )

    def original_scale(self, name: str, coefficient: float) -> float:
        """Coefficient of covariate ``name`` on its unstandardised scale."""
        if name in self.transforms:
            return coefficient / self.transforms[name][1]
        return coefficient


def _rows(idx, limit=10) -> str:
    idx = [int(i) for i in np.asarray(idx)[:limit]]
    more = "" if len(idx) < limit else ", ..."
    return ", ".join(map(str, idx)) + more


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which part.

    ``hazard`` and ``time_scale`` name covariate columns; a column may
    appear in both. ``time_divisor`` rescales raw times (365.25 turns days
    into years).
    """

    time: str = "time"
    status: str = "status"
    cluster: str = "cluster"
    hazard: tuple[str, ...] = ()
    time_scale: tuple[str, ...] = ()
    truncate: dict = field(default_factory=dict)
    time_divisor: float = 1.0

    @property
    def covariates(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.hazard)
        seen.update(dict.fromkeys(self.time_scale))
        return tuple(seen)


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, a header row is required", ["empty"]) from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(
                f"{path}: data row {k} has {len(row)} fields, header has {len(header)}",
                [f"row {k}: ragged"],
            )
    return header, rows


def _numeric_column(path, name, raw):
    out = np.empty(len(raw))
    bad = []
    for k, s in enumerate(raw):
        s = s.strip()
        try:
            out[k] = float(s)
        except ValueError:
            bad.append(k)
    if bad:
        raise ValidationError(
            f"{path}: column {name!r} has missing or non-numeric values at rows {_rows(bad)}",
            [f"{name}: row {k}" for k in bad],
        )
    return out


def load_dataset(path, roles: ColumnRoles | None = None, standardize=()) -> ClusteredDataset:
    """Read a CSV file into a validated :class:`ClusteredDataset`.

    Truncation (``roles.truncate``, column -> upper cap) is applied before
    standardisation. Standardisation uses the pooled sample mean and sd
    (ddof=1) of every row; the (mean, sd) pairs are stored on the dataset
    so coefficients can be mapped back.
    """
    roles = roles or ColumnRoles()
    header, rows = _read_csv(path)
    columns = {name: [row[j] for row in rows] for j, name in enumerate(header)}
    needed = [roles.time, roles.status, roles.cluster, *roles.covariates]
    missing = [c for c in needed if c not in columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}; found {header}", missing)
    standardize = tuple(standardize)
    unknown = [c for c in standardize if c not in roles.covariates]
    if unknown:
        raise ValidationError(f"cannot standardise {unknown}: not a model covariate", unknown)

    times = _numeric_column(path, roles.time, columns[roles.time]) / roles.time_divisor
    status = _numeric_column(path, roles.status, columns[roles.status])
    labels = [s.strip() for s in columns[roles.cluster]]
    blank = [k for k, s in enumerate(labels) if not s]
    if blank:
        raise ValidationError(f"{path}: missing cluster labels at rows {_rows(blank)}", ["cluster"])
    names = roles.covariates
    X = np.column_stack([_numeric_column(path, c, columns[c]) for c in names]) if names else np.zeros((len(rows), 0))
    transforms = {}
    for j, name in enumerate(names):
        cap = roles.truncate.get(name)
        if cap is not None:
            X[:, j] = np.minimum(X[:, j], cap)
        if name in standardize:
            mean = float(X[:, j].mean())
            sd = float(X[:, j].std(ddof=1))
            if not sd > 0:
                raise ValidationError(f"cannot standardise constant column {name!r}", [name])
            X[:, j] = (X[:, j] - mean) / sd
            transforms[name] = (mean, sd)
    return ClusteredDataset(
        times,
        status,
        labels,
        X,
        names,
        [names.index(c) for c in roles.hazard],
        [names.index(c) for c in roles.time_scale],
        transforms,
        {"source": str(path), "standardization": "pooled sample, ddof=1", "time_divisor": roles.time_divisor},
    )


def write_dataset(data: ClusteredDataset, path) -> Path:
    """Write canonical CSV: cluster, time, status, then every covariate.

    Floats use ``repr`` so a reload reproduces them exactly.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "time", "status", *data.covariate_names])
        for k in range(data.n):
            w.writerow(
                [data.cluster[k], repr(float(data.times[k])), int(data.status[k])]
                + [repr(float(v)) for v in data.X[k]]
            )
    return path


@dataclass(frozen=True)
class KMCurve:
    """Product-limit survival curve of one cluster.

    Row 0 is ``(0, 1, n)``; later rows are the distinct event times.
    """

    cluster: object
    time: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        """Right-continuous step function evaluated at ``t``."""
        idx = np.searchsorted(self.time, np.asarray(t, dtype=float), side="right") - 1
        return self.survival[np.maximum(idx, 0)]


def kaplan_meier(times, status, label=None) -> KMCurve:
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=float)
    order = np.argsort(times, kind="stable")
    times, status = times[order], status[order]
    uniq, first = np.unique(times, return_index=True)
    deaths = np.add.reduceat(status, first) if times.size else np.zeros(0)
    # at risk just before each distinct time: censorings at t still count
    at_risk = times.size - first
    keep = deaths > 0
    t_ev, d_ev, n_ev = uniq[keep], deaths[keep], at_risk[keep]
    surv = np.cumprod(1.0 - d_ev / n_ev)
    return KMCurve(
        label,
        np.concatenate([[0.0], t_ev]),
        np.concatenate([[1.0], surv]),
        np.concatenate([[times.size], n_ev]).astype(np.int64),
        np.concatenate([[0], d_ev]).astype(np.int64),
    )


def km_by_cluster(data: ClusteredDataset) -> list[KMCurve]:
    """One Kaplan-Meier curve per cluster, in sorted label order."""
    curves = []
    for i in range(data.r):
        rows = data.cluster_rows(i)
        curves.append(kaplan_meier(data.times[rows], data.status[rows], data.cluster_labels[i].item()))
    return curves


def write_km_csv(curves, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "time", "survival", "at_risk"])
        for c in curves:
            for t, s, n in zip(c.time, c.survival, c.at_risk):
                w.writerow([c.cluster, repr(float(t)), repr(float(s)), int(n)])
    return path


def summarize(data: ClusteredDataset) -> dict:
    return {
        "n": data.n,
        "clusters": data.r,
        "events": int(data.status.sum()),
        "censoring_rate": round(data.censoring_rate, 6),
        "min_cluster_size": int(data.cluster_sizes.min()),
        "max_cluster_size": int(data.cluster_sizes.max()),
        "median_time": float(np.median(data.times)),
        "covariates": list(data.covariate_names),
        "standardized": {k: [v[0], v[1]] for k, v in data.transforms.items()},
    }

