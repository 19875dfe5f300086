"""Dataset schema, delimited-text ingestion and serialization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadFraction,
    MissingColumn,
    OutOfRange,
    ParseError,
    RowCountMismatch,
)

PROVENANCES = ("cluster", "net", "boost", "external")


def fmt(x: float) -> str:
    """Serialize a float with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ColumnSchema:
    """Maps file columns onto dataset roles."""

    features: tuple[str, ...]
    outcome: str
    expert: Optional[str] = None
    feedback: tuple[str, ...] = ()
    row_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "feedback", tuple(self.feedback))


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    outcome: np.ndarray
    row_ids: Optional[np.ndarray] = None
    expert: Optional[np.ndarray] = None
    feedback: Optional[np.ndarray] = None
    feature_names: tuple[str, ...] = ()
    feedback_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[0]
        y = np.asarray(self.outcome, dtype=np.float64).reshape(-1)
        cols = {"outcome": y}
        if self.expert is not None:
            cols["expert"] = np.asarray(self.expert, dtype=np.float64).reshape(-1)
        for name, col in cols.items():
            if col.shape[0] != n:
                raise RowCountMismatch(n, col.shape[0])
            bad = np.flatnonzero(~np.isfinite(col) | (col < 0) | (col > 1))
            if bad.size:
                raise OutOfRange(int(bad[0]) + 1, name, float(col[bad[0]]))
        if not np.isfinite(X).all():
            raise ParseError(int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0]) + 1, "non-finite feature")
        H = None
        if self.feedback is not None:
            H = np.asarray(self.feedback, dtype=np.float64)
            if H.ndim == 1:
                H = H[:, None]
            if H.shape[0] != n:
                raise RowCountMismatch(n, H.shape[0])
            if not np.isfinite(H).all():
                raise ParseError(int(np.flatnonzero(~np.isfinite(H).all(axis=1))[0]) + 1, "non-finite feedback")
        ids = np.arange(n).astype(str) if self.row_ids is None else np.asarray(self.row_ids).astype(str)
        if ids.shape[0] != n:
            raise RowCountMismatch(n, ids.shape[0])
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        fb_names = tuple(self.feedback_names)
        if H is not None and not fb_names:
            fb_names = tuple(f"h{j}" for j in range(H.shape[1]))
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "outcome", _frozen(y))
        object.__setattr__(self, "expert", None if self.expert is None else _frozen(cols["expert"]))
        object.__setattr__(self, "feedback", None if H is None else _frozen(H))
        object.__setattr__(self, "row_ids", _frozen(ids))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "feedback_names", fb_names)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_expert(self) -> bool:
        return self.expert is not None

    def take(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows],
            outcome=self.outcome[rows],
            row_ids=self.row_ids[rows],
            expert=None if self.expert is None else self.expert[rows],
            feedback=None if self.feedback is None else self.feedback[rows],
            feature_names=self.feature_names,
            feedback_names=self.feedback_names,
        )

    def without_expert(self) -> "Dataset":
        return Dataset(self.features, self.outcome, self.row_ids, None, self.feedback,
                       self.feature_names, self.feedback_names)

    def schema(self) -> ColumnSchema:
        return ColumnSchema(
            features=self.feature_names,
            outcome="y",
            expert="yhat" if self.has_expert else None,
            feedback=self.feedback_names,
            row_id="row_id",
        )


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Outputs of a finite predictor class, one column per model."""

    preds: np.ndarray
    model_names: tuple[str, ...] = ()

    def __post_init__(self):
        P = np.asarray(self.preds, dtype=np.float64)
        if P.ndim == 1:
            P = P[:, None]
        bad = np.argwhere(~np.isfinite(P) | (P < 0) | (P > 1))
        if bad.size:
            r, c = bad[0]
            raise OutOfRange(int(r) + 1, f"model {c}", float(P[r, c]))
        names = tuple(self.model_names) or tuple(f"f{j}" for j in range(P.shape[1]))
        if len(names) != P.shape[1]:
            raise ValueError("model_names length does not match column count")
        object.__setattr__(self, "preds", _frozen(P))
        object.__setattr__(self, "model_names", names)

    @property
    def n(self) -> int:
        return self.preds.shape[0]

    @property
    def m(self) -> int:
        return self.preds.shape[1]

    def take(self, rows) -> "PredictionMatrix":
        return PredictionMatrix(self.preds[np.asarray(rows)], self.model_names)


@dataclass(frozen=True, eq=False)
class Partition:
    """Cell assignment of every row. Cell indices are dense in ``[0, K)``.

    ``labels`` optionally names each cell (bin index for level-set partitions,
    representative row for clusters); ``centers`` holds net centers.
    """

    assignment: np.ndarray
    K: int
    provenance: str = "external"
    labels: tuple = ()
    centers: Optional[np.ndarray] = None
    cell_sizes: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64).reshape(-1)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if a.size and (a.min() < 0 or a.max() >= self.K):
            raise ValueError("assignment outside [0, K)")
        sizes = np.bincount(a, minlength=self.K)
        object.__setattr__(self, "assignment", _frozen(a))
        object.__setattr__(self, "cell_sizes", _frozen(sizes))
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.centers is not None:
            object.__setattr__(self, "centers", _frozen(np.asarray(self.centers, dtype=np.float64)))

    @classmethod
    def from_labels(cls, raw, provenance: str = "external", **kw) -> "Partition":
        """Densify arbitrary cell labels, numbering cells by first appearance."""
        raw = np.asarray(raw).reshape(-1)
        uniq, first, inv = np.unique(raw, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        labels = kw.pop("labels", tuple(uniq[order].tolist()))
        return cls(rank[inv], int(uniq.size), provenance, labels=labels, **kw)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def mask(self, k: int) -> np.ndarray:
        return self.assignment == k

    def nonempty(self) -> list[int]:
        return [k for k in range(self.K) if self.cell_sizes[k] > 0]


def check_aligned(dataset: Dataset, *others) -> None:
    """Fail fast when row counts disagree."""
    for o in others:
        if o is None:
            continue
        n = o.n if hasattr(o, "n") else len(o)
        if n != dataset.n:
            raise RowCountMismatch(dataset.n, n)


# ---------------------------------------------------------------- ingestion

def _parse_float(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(row, f"{column}={text!r}") from None
    if not math.isfinite(v):
        raise ParseError(row, f"{column}={text!r} is not finite")
    return v


def read_header(path, delimiter: str = ",") -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh, delimiter=delimiter), [])


def load_dataset(path, schema: ColumnSchema, delimiter: str = ",") -> Dataset:
    """Read a header-first delimited file into a validated Dataset.

    Row numbers in errors are 1-based data rows (the header is not counted).
    Missing expert values are rejected; drop the expert mapping instead.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise MissingColumn(schema.outcome)
        pos = {name: i for i, name in enumerate(header)}
        wanted = list(schema.features) + [schema.outcome] + list(schema.feedback)
        if schema.expert is not None:
            wanted.append(schema.expert)
        if schema.row_id is not None:
            wanted.append(schema.row_id)
        for col in wanted:
            if col not in pos:
                raise MissingColumn(col)
        X, y, yh, H, ids = [], [], [], [], []
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(r, f"expected {len(header)} fields, got {len(rec)}")
            X.append([_parse_float(rec[pos[c]], r, c) for c in schema.features])
            v = _parse_float(rec[pos[schema.outcome]], r, schema.outcome)
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(r, schema.outcome, v)
            y.append(v)
            if schema.expert is not None:
                e = _parse_float(rec[pos[schema.expert]], r, schema.expert)
                if not 0.0 <= e <= 1.0:
                    raise OutOfRange(r, schema.expert, e)
                yh.append(e)
            if schema.feedback:
                H.append([_parse_float(rec[pos[c]], r, c) for c in schema.feedback])
            ids.append(rec[pos[schema.row_id]] if schema.row_id is not None else str(r - 1))
    n = len(y)
    return Dataset(
        features=np.array(X, dtype=np.float64).reshape(n, len(schema.features)),
        outcome=np.array(y, dtype=np.float64),
        row_ids=np.array(ids, dtype=str),
        expert=np.array(yh, dtype=np.float64) if schema.expert is not None else None,
        feedback=np.array(H, dtype=np.float64).reshape(n, len(schema.feedback)) if schema.feedback else None,
        feature_names=schema.features,
        feedback_names=schema.feedback,
    )


def save_dataset(dataset: Dataset, path, delimiter: str = ",") -> ColumnSchema:
    """Write ``dataset`` with 17 significant digits; returns the schema to reload it."""
    schema = dataset.schema()
    header = ["row_id", *schema.features, "y"]
    if dataset.has_expert:
        header.append("yhat")
    header.extend(schema.feedback)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [dataset.row_ids[i], *map(fmt, dataset.features[i]), fmt(dataset.outcome[i])]
            if dataset.has_expert:
                row.append(fmt(dataset.expert[i]))
            if dataset.feedback is not None:
                row.extend(map(fmt, dataset.feedback[i]))
            w.writerow(row)
    return schema


def load_predictions(path, dataset: Dataset, columns: Optional[Sequence[str]] = None,
                     id_column: Optional[str] = "row_id", delimiter: str = ",") -> PredictionMatrix:
    """Read model scores aligned with ``dataset``.

    Every column except ``id_column`` is a model unless ``columns`` narrows it.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None) or []
        rows = [rec for rec in reader if rec]
    names = list(columns) if columns is not None else [h for h in header if h != id_column]
    pos = {h: i for i, h in enumerate(header)}
    for c in names:
        if c not in pos:
            raise MissingColumn(c)
    if len(rows) != dataset.n:
        raise RowCountMismatch(dataset.n, len(rows))
    P = np.empty((len(rows), len(names)))
    for r, rec in enumerate(rows, start=1):
        for j, c in enumerate(names):
            v = _parse_float(rec[pos[c]], r, c)
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(r, c, v)
            P[r - 1, j] = v
    return PredictionMatrix(P, tuple(names))


def save_predictions(preds: PredictionMatrix, path, row_ids=None, delimiter: str = ",") -> None:
    ids = row_ids if row_ids is not None else [str(i) for i in range(preds.n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["row_id", *preds.model_names])
        for i in range(preds.n):
            w.writerow([ids[i], *map(fmt, preds.preds[i])])


def save_partition(partition: Partition, path, row_ids=None) -> None:
    ids = row_ids if row_ids is not None else [str(i) for i in range(partition.n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "cell"])
        for rid, c in zip(ids, partition.assignment):
            w.writerow([rid, int(c)])


def load_partition(path, dataset: Optional[Dataset] = None, provenance: str = "external") -> Partition:
    """Read a ``row_id,cell`` file. With ``dataset`` given, rows are aligned by id."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        recs = [rec for rec in reader if rec]
    cells = {}
    order = []
    for r, rec in enumerate(recs, start=1):
        if len(rec) != 2:
            raise ParseError(r, "expected row_id,cell")
        try:
            cells[rec[0]] = int(rec[1])
        except ValueError:
            raise ParseError(r, f"cell={rec[1]!r}") from None
        order.append(rec[0])
    if dataset is not None:
        if len(recs) != dataset.n:
            raise RowCountMismatch(dataset.n, len(recs))
        try:
            raw = [cells[rid] for rid in dataset.row_ids]
        except KeyError as e:
            raise ParseError(0, f"row_id {e.args[0]!r} missing from partition file") from None
    else:
        raw = [cells[rid] for rid in order]
    raw = np.asarray(raw, dtype=np.int64)
    if raw.size and raw.min() < 0:
        raise ParseError(0, "negative cell index")
    K = int(raw.max()) + 1 if raw.size else 0
    return Partition(raw, K, provenance)


def split_indices(n: int, fractions: Sequence[float] = (0.8, 0.2), seed: int = 0):
    """Sorted row indices of a deterministic random split; the first part gets ``round(f0 * n)`` rows."""
    fr = [float(f) for f in fractions]
    if len(fr) != 2 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise BadFraction(f"fractions must be two positive numbers summing to 1, got {fractions!r}")
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(fr[0] * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split(dataset: Dataset, fractions: Sequence[float] = (0.8, 0.2), seed: int = 0):
    a, b = split_indices(dataset.n, fractions, seed)
    return dataset.take(a), dataset.take(b)
