"""Conditional covariances and indistinguishability audits.

All covariances use the population normalizer ``1/n_S``: the quantities
audited here are covariances under the empirical distribution of a cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .data import Dataset, Partition, PredictionMatrix, check_aligned
from .errors import DegenerateCell, DegenerateIndicator, TooFewRows


def _as_mask(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask has shape {mask.shape}, expected ({n},)")
    return mask


def conditional_cov(a, b, mask=None) -> float:
    """Cov(a, b | mask) with the 1/n_S normalizer."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("a and b must have the same length")
    mask = _as_mask(mask, a.shape[0])
    if mask.sum() < 2:
        raise TooFewRows(f"covariance needs at least 2 rows, mask selects {int(mask.sum())}")
    return float(kernels.masked_cov(a, b, mask))


def discretized_counterexample() -> tuple[np.ndarray, np.ndarray]:
    """Three equally likely points (ỹ, f) = (0, 0), (½, ½), (½, 1).

    Cov(ỹ, f) = 1/12 while Cov(1{ỹ = 0}, f) = -1/6: a bounded covariance
    with a discretized target does not imply bounded covariance with each of
    its indicator events.
    """
    return np.array([0.0, 0.5, 0.5]), np.array([0.0, 0.5, 1.0])


@dataclass(frozen=True)
class CellAudit:
    cell: int
    n: int
    per_model: tuple[float, ...]
    max_abs_cov: float
    degenerate: bool = False


@dataclass(frozen=True)
class AuditReport:
    per_cell: tuple[CellAudit, ...]
    alpha_hat: float
    model_names: tuple[str, ...] = ()

    @property
    def n_per_cell(self) -> tuple[int, ...]:
        return tuple(c.n for c in self.per_cell)

    @property
    def degenerate_cells(self) -> tuple[int, ...]:
        return tuple(c.cell for c in self.per_cell if c.degenerate)

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "models": list(self.model_names),
            "cells": [
                {"k": c.cell, "n": c.n, "per_model": list(c.per_model),
                 "max_abs_cov": c.max_abs_cov, "degenerate": c.degenerate}
                for c in self.per_cell
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        cells = tuple(
            CellAudit(c["k"], c["n"], tuple(c["per_model"]), c["max_abs_cov"], c.get("degenerate", False))
            for c in d["cells"]
        )
        return cls(cells, d["alpha_hat"], tuple(d.get("models", ())))


def audit_columns(cols: np.ndarray, y: np.ndarray, partition: Partition,
                  names: tuple[str, ...] = (), strict: bool = False) -> AuditReport:
    """Audit arbitrary [0, 1]-valued columns against ``y`` cell by cell."""
    cols = np.asarray(cols, dtype=np.float64)
    if cols.ndim == 1:
        cols = cols[:, None]
    covs = kernels.cell_covariances(cols, np.asarray(y, dtype=np.float64), partition.assignment, partition.K)
    cells = []
    alpha = 0.0
    for k in range(partition.K):
        nk = int(partition.cell_sizes[k])
        if nk < 2:
            if strict:
                raise DegenerateCell(k, nk)
            cells.append(CellAudit(k, nk, (), math.nan, True))
            continue
        per = tuple(float(abs(v)) for v in covs[k])
        mx = max(per) if per else 0.0
        alpha = max(alpha, mx)
        cells.append(CellAudit(k, nk, per, mx))
    return AuditReport(tuple(cells), alpha, tuple(names))


def audit_partition(dataset: Dataset, preds: PredictionMatrix, partition: Partition,
                    strict: bool = False) -> AuditReport:
    """Empirical multicalibration level of ``partition`` for a finite class.

    ``alpha_hat`` is the smallest α for which every cell is α-indistinguishable
    under its empirical distribution. Cells with fewer than two rows are
    flagged ``degenerate`` and excluded from ``alpha_hat`` unless ``strict``.
    """
    check_aligned(dataset, preds, partition)
    return audit_columns(preds.preds, dataset.outcome, partition, preds.model_names, strict)


class CovDecomposition(NamedTuple):
    p1: float
    lift1: float
    product: float


def binary_cov_decomposition(indicator, target) -> CovDecomposition:
    """Cov(1{B}, T) = P(B) · (E[T | B] − E[T])."""
    ind = np.asarray(indicator, dtype=bool)
    t = np.asarray(target, dtype=np.float64)
    if ind.all() or not ind.any():
        raise DegenerateIndicator("indicator is constant")
    n = t.shape[0]
    p1 = ind.sum() / n
    lift = math.fsum(t[ind]) / ind.sum() - math.fsum(t) / n
    return CovDecomposition(float(p1), float(lift), float(p1 * lift))


class VarianceCertificate(NamedTuple):
    variance: float
    range: float
    popoviciu_bound: float


def variance_certificate(values, mask=None) -> VarianceCertificate:
    """Variance of ``values`` over ``mask`` with its range²/4 upper bound."""
    v = np.asarray(values, dtype=np.float64)
    mask = _as_mask(mask, v.shape[0])
    sel = v[mask]
    if sel.size == 0:
        raise TooFewRows("empty mask")
    mean = math.fsum(sel) / sel.size
    var = math.fsum((sel - mean) ** 2) / sel.size
    rng = float(sel.max() - sel.min())
    return VarianceCertificate(var, rng, rng * rng / 4.0)
