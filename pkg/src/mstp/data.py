"""Trajectory data: validation, long-format CSV I/O and subject-level folds.

A dataset is stored as dense arrays indexed ``[subject, stage]``:

    X  : (n, T, d) features
    A  : (n, T) actions in {-1, +1}
    R  : (n, T) rewards
    mu : (n, T) behavior probability of the observed action

The CSV layout has one row per subject-stage with header
``subject,stage,a,r,mu,x1,...,xd``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from mstp.errors import DomainError, MalformedTrajectoryError, PositivityError, SchemaError

FIXED_COLUMNS = ("subject", "stage", "a", "r", "mu")


def format_float(x: float) -> str:
    """17 significant digits, enough for an exact binary64 round trip."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class StageRecord:
    x: np.ndarray
    a: int
    r: float
    mu: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise DomainError("stage features must be a finite 1-d vector")
        if self.a not in (-1, 1):
            raise DomainError(f"action must be -1 or +1, got {self.a!r}")
        if not (0.0 < self.mu <= 1.0):
            raise PositivityError(f"behavior probability {self.mu!r} outside (0, 1]")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class Trajectory:
    stages: Tuple[StageRecord, ...]

    def __post_init__(self):
        stages = tuple(self.stages)
        if len(stages) < 1:
            raise MalformedTrajectoryError("a trajectory needs at least one stage")
        d = stages[0].x.shape[0]
        if any(s.x.shape[0] != d for s in stages):
            raise MalformedTrajectoryError("stages disagree on feature dimension")
        object.__setattr__(self, "stages", stages)

    @property
    def T(self) -> int:
        return len(self.stages)

    @property
    def d(self) -> int:
        return self.stages[0].x.shape[0]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable batch of ``n`` i.i.d. trajectories of common horizon ``T``."""

    X: np.ndarray
    A: np.ndarray
    R: np.ndarray
    mu: np.ndarray
    subject_ids: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = _frozen(self.X)
        A = _frozen(self.A)
        R = _frozen(self.R)
        mu = _frozen(self.mu)
        if X.ndim != 3:
            raise SchemaError(f"X must have shape (n, T, d), got {X.shape}")
        n, T, d = X.shape
        for name, arr in (("A", A), ("R", R), ("mu", mu)):
            if arr.shape != (n, T):
                raise SchemaError(f"{name} must have shape {(n, T)}, got {arr.shape}")
        if n < 2:
            raise DomainError("a dataset needs at least two subjects")
        if T < 1 or d < 1:
            raise DomainError("horizon and feature dimension must be positive")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(R))):
            raise DomainError("features and rewards must be finite")
        if not np.all((A == 1) | (A == -1)):
            raise DomainError("actions must be -1 or +1")
        if not np.all((mu > 0) & (mu <= 1)):
            raise PositivityError("behavior probabilities must lie in (0, 1]")
        ids = tuple(str(s) for s in self.subject_ids) or tuple(str(i + 1) for i in range(n))
        if len(ids) != n:
            raise SchemaError("subject_ids length does not match n")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    def subset(self, idx: Sequence[int]) -> "Dataset":
        """Dataset of the given subjects; repeats are allowed (bootstrap)."""
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.X[idx], self.A[idx], self.R[idx], self.mu[idx],
            subject_ids=tuple(self.subject_ids[i] for i in idx),
        )

    @property
    def trajectories(self) -> List[Trajectory]:
        return [
            Trajectory(tuple(
                StageRecord(self.X[i, t], int(self.A[i, t]), float(self.R[i, t]), float(self.mu[i, t]))
                for t in range(self.T)
            ))
            for i in range(self.n)
        ]

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory], subject_ids=()) -> "Dataset":
        trajectories = list(trajectories)
        if not trajectories:
            raise DomainError("no trajectories")
        T, d = trajectories[0].T, trajectories[0].d
        if any(tr.T != T or tr.d != d for tr in trajectories):
            raise MalformedTrajectoryError("trajectories disagree on horizon or dimension")
        X = np.array([[s.x for s in tr.stages] for tr in trajectories], dtype=float)
        A = np.array([[s.a for s in tr.stages] for tr in trajectories], dtype=float)
        R = np.array([[s.r for s in tr.stages] for tr in trajectories], dtype=float)
        mu = np.array([[s.mu for s in tr.stages] for tr in trajectories], dtype=float)
        return cls(X, A, R, mu, subject_ids=tuple(subject_ids))

    def equals(self, other: "Dataset") -> bool:
        return (
            self.subject_ids == other.subject_ids
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("X", "A", "R", "mu"))
        )


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    header = list(FIXED_COLUMNS) + [f"x{j + 1}" for j in range(ds.d)]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            for t in range(ds.T):
                writer.writerow(
                    [ds.subject_ids[i], t + 1, int(ds.A[i, t]), format_float(ds.R[i, t]), format_float(ds.mu[i, t])]
                    + [format_float(v) for v in ds.X[i, t]]
                )


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DomainError(f"line {line}: column {column!r} is not a number: {text!r}") from None


def load_dataset(path, format: str = "long-csv") -> Dataset:
    """Read a long-format CSV into a validated :class:`Dataset`.

    Rows are grouped by subject (in order of first appearance) and sorted by
    stage. Stages must run 1..T without gaps and every subject must share T.
    """
    if format != "long-csv":
        raise SchemaError(f"unsupported dataset format {format!r}")
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file") from None
        missing = [c for c in FIXED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        x_cols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
        x_cols.sort(key=lambda h: int(h[1:]))
        if not x_cols or [int(h[1:]) for h in x_cols] != list(range(1, len(x_cols) + 1)):
            raise SchemaError("feature columns must be x1..xd")
        pos = {h: k for k, h in enumerate(header)}
        rows = {}
        order = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            sid = row[pos["subject"]].strip()
            try:
                stage = int(row[pos["stage"]])
            except ValueError:
                raise SchemaError(f"line {line}: stage must be an integer") from None
            a = _parse_float(row[pos["a"]], "a", line)
            if a not in (-1.0, 1.0):
                raise DomainError(f"line {line}: action must be -1 or 1, got {row[pos['a']]!r}")
            mu = _parse_float(row[pos["mu"]], "mu", line)
            if not (0.0 < mu <= 1.0):
                raise PositivityError(f"line {line}: mu={mu!r} violates positivity (must lie in (0, 1])")
            r = _parse_float(row[pos["r"]], "r", line)
            x = [_parse_float(row[pos[c]], c, line) for c in x_cols]
            if sid not in rows:
                rows[sid] = {}
                order.append(sid)
            if stage in rows[sid]:
                raise MalformedTrajectoryError(f"subject {sid!r} has duplicate stage {stage}")
            rows[sid][stage] = (a, r, mu, x)

    if not order:
        raise SchemaError("no data rows")
    T = None
    for sid in order:
        stages = sorted(rows[sid])
        if stages != list(range(1, len(stages) + 1)):
            raise MalformedTrajectoryError(f"subject {sid!r} has non-contiguous stages {stages}")
        if T is None:
            T = len(stages)
        elif len(stages) != T:
            raise MalformedTrajectoryError(f"subject {sid!r} has {len(stages)} stages, expected {T}")
    n, d = len(order), len(x_cols)
    X = np.empty((n, T, d))
    A = np.empty((n, T))
    R = np.empty((n, T))
    mu = np.empty((n, T))
    for i, sid in enumerate(order):
        for t in range(T):
            a, r, m, x = rows[sid][t + 1]
            A[i, t], R[i, t], mu[i, t] = a, r, m
            X[i, t] = x
    return Dataset(X, A, R, mu, subject_ids=tuple(order))


def split_folds(ds, k: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Partition subject indices into ``k`` folds of near-equal size.

    ``ds`` may be a :class:`Dataset` or a subject count. Returns
    ``(train_idx, val_idx)`` pairs; validation sets partition ``0..n-1``
    and their sizes differ by at most one.
    """
    n = ds if isinstance(ds, (int, np.integer)) else ds.n
    if k < 2:
        raise ValueError("need at least two folds")
    if k > n:
        raise ValueError(f"cannot split {n} subjects into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = []
    for val in np.array_split(perm, k):
        val = np.sort(val)
        train = np.setdiff1d(np.arange(n), val)
        folds.append((train, val))
    return folds
