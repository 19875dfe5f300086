"""Selective incorporation of expert predictions within indistinguishable cells.

Within each cell a univariate regressor maps the expert prediction ŷ to a
prediction of y. The linear regressor is the least-squares fit per cell;
its error plus 4·Cov_k(Y, Ŷ)² is at most the error of any class member
plus 2α on an α-multicalibrated partition.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, Partition, PredictionMatrix, check_aligned
from .errors import BadParam, DegenerateCell, MissingExpert, UnknownCell
from .indist import conditional_cov

KINDS = ("constant", "identity", "linear", "logistic")
BETA_CAP = 25.0


def _mean(x: np.ndarray) -> float:
    return math.fsum(x) / x.size


def _cov(a: np.ndarray, b: np.ndarray) -> float:
    ma, mb = _mean(a), _mean(b)
    return math.fsum((a - ma) * (b - mb)) / a.size


def _mse(pred, y) -> float:
    d = np.asarray(pred, dtype=np.float64) - y
    return math.fsum(d * d) / d.size


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass(frozen=True)
class SubsetRegressor:
    kind: str
    gamma: float
    beta: float
    cell: int
    n_cell: int
    degenerate: bool = False
    capped: bool = False
    fallback: bool = False
    eta_gap: Optional[float] = None

    def predict(self, yhat):
        yhat = np.asarray(yhat, dtype=np.float64)
        if self.kind == "constant":
            return np.full_like(yhat, self.gamma) if yhat.ndim else self.gamma
        if self.kind == "identity":
            return yhat.copy() if yhat.ndim else float(yhat)
        if self.kind == "linear":
            out = self.gamma + self.beta * yhat
        else:
            out = _sigmoid(self.gamma + self.beta * yhat)
        return out if np.ndim(out) else float(out)

    def to_dict(self) -> dict:
        return {"cell": self.cell, "kind": self.kind, "gamma": self.gamma, "beta": self.beta,
                "n": self.n_cell, "degenerate": self.degenerate, "capped": self.capped,
                "fallback": self.fallback, "eta_gap": self.eta_gap}


def fit_linear(yhat: np.ndarray, y: np.ndarray, cell: int = 0) -> SubsetRegressor:
    """Least squares of y on ŷ; zero-variance ŷ degrades to the constant E[y]."""
    if np.ptp(yhat) == 0.0:
        return SubsetRegressor("constant", _mean(y), 0.0, cell, y.size, degenerate=True)
    beta = _cov(y, yhat) / _cov(yhat, yhat)
    gamma = _mean(y) - beta * _mean(yhat)
    return SubsetRegressor("linear", gamma, beta, cell, y.size)


def fit_logistic(yhat: np.ndarray, y: np.ndarray, cell: int = 0, beta_cap: float = BETA_CAP,
                 max_iter: int = 100, tol: float = 1e-10) -> SubsetRegressor:
    """Newton/IRLS fit of E[y | ŷ] = σ(γ + βŷ) for y in [0, 1].

    Separation drives |β| to infinity; once |β| passes ``beta_cap`` it is
    pinned there, γ is refit alone and the result is flagged ``capped``.
    Failure to converge in ``max_iter`` steps falls back to the linear fit,
    flagged ``fallback``.
    """
    if np.ptp(yhat) == 0.0:
        return SubsetRegressor("constant", _mean(y), 0.0, cell, y.size, degenerate=True)
    lin = fit_linear(yhat, y, cell)
    Z = np.column_stack([np.ones_like(yhat), yhat])
    m = min(max(_mean(y), 1e-6), 1 - 1e-6)
    theta = np.array([math.log(m / (1 - m)), 0.0])
    capped = False
    converged = False
    for _ in range(max_iter):
        p = _sigmoid(Z @ theta)
        W = p * (1 - p)
        grad = Z.T @ (y - p)
        H = (Z * W[:, None]).T @ Z
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        theta = theta + step
        if abs(theta[1]) > beta_cap:
            theta[1] = math.copysign(beta_cap, theta[1])
            theta[0] = _refit_intercept(yhat, y, theta[1], theta[0])
            capped = converged = True
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged or not np.isfinite(theta).all():
        return replace(lin, fallback=True, eta_gap=0.0)
    reg = SubsetRegressor("logistic", float(theta[0]), float(theta[1]), cell, y.size, capped=capped)
    gap = _mse(reg.predict(yhat), y) - _mse(lin.predict(yhat), y)
    return replace(reg, eta_gap=gap)


def _refit_intercept(yhat, y, beta, gamma0) -> float:
    g = gamma0
    for _ in range(100):
        p = _sigmoid(g + beta * yhat)
        w = math.fsum(p * (1 - p))
        if w <= 0:
            break
        step = math.fsum(y - p) / w
        g += step
        if abs(step) < 1e-12:
            break
    return float(g)


def _cell_data(dataset: Dataset, partition: Partition, k: int):
    mask = partition.mask(k)
    return dataset.expert[mask], dataset.outcome[mask]


def _pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def fit_subset_regressors(dataset: Dataset, partition: Partition, kind: str = "linear",
                          workers: int = 1, strict: bool = True) -> list[SubsetRegressor]:
    """One regressor per cell, fitted only on that cell's (ŷ, y) pairs.

    A single-row cell raises ``DegenerateCell`` for fitted kinds unless
    ``strict`` is off, in which case it gets its constant mean, flagged.
    """
    if kind not in KINDS:
        raise BadParam(f"kind must be one of {KINDS}")
    if not dataset.has_expert:
        raise MissingExpert()
    check_aligned(dataset, partition)

    def fit(k: int) -> SubsetRegressor:
        yh, y = _cell_data(dataset, partition, k)
        if y.size == 0:
            return SubsetRegressor("constant", math.nan, 0.0, k, 0, degenerate=True)
        if kind == "constant":
            return SubsetRegressor("constant", _mean(y), 0.0, k, y.size)
        if kind == "identity":
            return SubsetRegressor("identity", 0.0, 1.0, k, y.size)
        if y.size < 2:
            if strict:
                raise DegenerateCell(k, y.size)
            return SubsetRegressor("constant", _mean(y), 0.0, k, y.size, degenerate=True)
        return fit_linear(yh, y, k) if kind == "linear" else fit_logistic(yh, y, k)

    return _pmap(fit, range(partition.K), workers)


def nonlinear_subset_fit(dataset: Dataset, partition: Partition, kind: str = "logistic",
                         workers: int = 1) -> list[SubsetRegressor]:
    """Per-cell logistic fits; ``eta_gap`` is the in-cell MSE minus the linear fit's."""
    if kind != "logistic":
        raise BadParam("only logistic is supported")
    return fit_subset_regressors(dataset, partition, "logistic", workers)


def predict_with_expertise(regressors: Sequence[SubsetRegressor], cell, yhat):
    """Apply the regressor of ``cell`` to ``yhat``; both may be arrays."""
    cell = np.asarray(cell)
    K = len(regressors)
    if cell.ndim == 0:
        if not 0 <= int(cell) < K:
            raise UnknownCell(f"cell {int(cell)} not in [0, {K})")
        return regressors[int(cell)].predict(yhat)
    if cell.size and (cell.min() < 0 or cell.max() >= K):
        raise UnknownCell(f"cell index outside [0, {K})")
    yhat = np.asarray(yhat, dtype=np.float64)
    out = np.empty(cell.shape[0])
    for k in np.unique(cell):
        sel = cell == k
        out[sel] = regressors[int(k)].predict(yhat[sel])
    return out


def assign_cells(partition: Partition, *, train_preds: Optional[PredictionMatrix] = None,
                 test_preds: Optional[PredictionMatrix] = None, test_features=None,
                 predictor=None, metric: str = "euclidean") -> tuple[np.ndarray, np.ndarray]:
    """Cell indices for new rows, plus a flag for rows placed by fallback.

    Cluster partitions match identical prediction rows first and otherwise
    use the nearest cell centroid in the Chebyshev metric (flagged).
    Level-set partitions bin h on the new rows; bins without a training cell
    go to the nearest populated bin (flagged). Net partitions use the
    nearest center.
    """
    if partition.provenance == "cluster":
        P = train_preds.preds
        Q = test_preds.preds
        lookup = {}
        for i, row in enumerate(map(tuple, P)):
            lookup.setdefault(row, int(partition.assignment[i]))
        cents = np.vstack([P[partition.mask(k)].mean(axis=0) for k in range(partition.K)])
        out = np.empty(Q.shape[0], dtype=np.int64)
        flag = np.zeros(Q.shape[0], dtype=bool)
        for i, row in enumerate(Q):
            hit = lookup.get(tuple(row))
            if hit is None:
                out[i] = int(np.argmin(np.abs(cents - row).max(axis=1)))
                flag[i] = True
            else:
                out[i] = hit
        return out, flag
    if partition.provenance == "boost":
        from .boost import bin_of

        bins = bin_of(predictor.predict(test_features))
        labels = np.asarray(partition.labels)
        idx = np.abs(bins[:, None] - labels[None, :]).argmin(axis=1)
        return idx.astype(np.int64), labels[idx] != bins
    if partition.provenance == "net":
        from .partition import assign_to_net

        a = assign_to_net(test_features, partition, metric)
        return a, np.zeros(a.shape[0], dtype=bool)
    raise BadParam(f"cannot place new rows in a partition of provenance {partition.provenance!r}")


@dataclass(frozen=True)
class GapCell:
    cell: int
    n: int
    mse_reg: float
    cov: float
    lhs: float
    rhs: tuple[float, ...]
    rhs_min: float
    holds: bool

    def to_dict(self) -> dict:
        return {"cell": self.cell, "n": self.n, "mse_reg": self.mse_reg, "cov": self.cov,
                "lhs": self.lhs, "rhs": list(self.rhs), "rhs_min": self.rhs_min, "holds": self.holds}


def incorporation_gap(dataset: Dataset, preds: PredictionMatrix, partition: Partition,
                      regressors: Sequence[SubsetRegressor], alpha: float, tol: float = 1e-12) -> list[GapCell]:
    """Per cell: MSE of the expert regressor + 4·Cov(Y, Ŷ)² against MSE of each model + 2α.

    ``holds`` is lhs ≤ min over models of rhs (up to ``tol``). Cells with
    fewer than two rows are skipped.
    """
    if not dataset.has_expert:
        raise MissingExpert()
    check_aligned(dataset, preds, partition)
    out = []
    for k in range(partition.K):
        mask = partition.mask(k)
        nk = int(mask.sum())
        if nk < 2:
            continue
        y, yh = dataset.outcome[mask], dataset.expert[mask]
        mse_reg = _mse(regressors[k].predict(yh), y)
        c = _cov(y, yh)
        lhs = mse_reg + 4.0 * c * c
        rhs = tuple(_mse(preds.preds[mask, j], y) + 2.0 * alpha for j in range(preds.m))
        rmin = min(rhs)
        out.append(GapCell(k, nk, mse_reg, c, lhs, rhs, rmin, lhs <= rmin + tol))
    return out


theorem31_gap = incorporation_gap  # name kept for API compatibility


@dataclass(frozen=True)
class ExpertCell:
    cell: int
    n: int
    cov: float
    threshold: float
    informative: bool

    def to_dict(self) -> dict:
        return {"cell": self.cell, "n": self.n, "cov": self.cov, "threshold": self.threshold,
                "informative": self.informative}


@dataclass(frozen=True)
class ExpertTestReport:
    """Per-cell Cov(Y, Ŷ) against √(α/2).

    A cell whose covariance exceeds the threshold certifies that no member of
    a binary-valued class explains the expert's signal there. For
    real-valued classes the numbers are reported but certify nothing.
    """

    per_cell: tuple[ExpertCell, ...]
    alpha_used: float
    scope: str = "binary-class only"

    @property
    def threshold(self) -> float:
        return math.sqrt(self.alpha_used / 2.0)

    @property
    def informative_cells(self) -> tuple[int, ...]:
        return tuple(c.cell for c in self.per_cell if c.informative)

    def to_dict(self) -> dict:
        return {
            "alpha_used": self.alpha_used,
            "threshold": self.threshold,
            "scope": self.scope,
            "reading": "informative cells carry expert signal no class member expresses",
            "informative_cells": list(self.informative_cells),
            "cells": [c.to_dict() for c in self.per_cell],
        }


def expert_test(dataset: Dataset, partition: Partition, alpha: float) -> ExpertTestReport:
    if not dataset.has_expert:
        raise MissingExpert()
    if not alpha >= 0:
        raise BadParam("alpha must be >= 0")
    check_aligned(dataset, partition)
    thr = math.sqrt(alpha / 2.0)
    cells = []
    for k in range(partition.K):
        mask = partition.mask(k)
        nk = int(mask.sum())
        if nk < 2:
            cells.append(ExpertCell(k, nk, math.nan, thr, False))
            continue
        c = conditional_cov(dataset.outcome, dataset.expert, mask)
        cells.append(ExpertCell(k, nk, c, thr, abs(c) > thr))
    return ExpertTestReport(tuple(cells), float(alpha))


@dataclass(frozen=True, eq=False)
class CalibratedScore:
    base_scores: np.ndarray
    gamma: float
    beta: float
    scores: np.ndarray
    eta_hat: float
    degenerate: bool = False


def calibrate_feedback(scores, outcome, mask=None) -> CalibratedScore:
    """Linear post-processing g̃ = γ + β·g of a feedback score.

    After the fit no further affine map of g̃ lowers the in-sample squared
    error; ``eta_hat`` measures what such a map would still gain (0 up to
    rounding). Constant scores fall back to γ = mean(y), β = 0.
    """
    g = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcome, dtype=np.float64)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        g, y = g[m], y[m]
    if y.size < 2:
        raise BadParam("calibration needs at least 2 rows")
    reg = fit_linear(g, y)
    out = reg.predict(g)
    again = fit_linear(out, y)
    eta = max(0.0, _mse(out, y) - _mse(again.predict(out), y))
    return CalibratedScore(g, reg.gamma, reg.beta, np.asarray(out, dtype=np.float64), eta, reg.degenerate)


@dataclass(frozen=True)
class RademacherEstimate:
    estimate: float
    stderr: float
    mc_reps: int
    n: int
    class_size: int
    class_sample: str = ""


def empirical_rademacher(losses, mc_reps: int = 2000, seed: int = 0, class_sample: str = "") -> RademacherEstimate:
    """Monte-Carlo E_ε[sup_t |(1/n) Σ ε_i t(z_i)|] over a finite sample of functions.

    ``losses`` has one row per sampled function. Sign vectors depend only on
    ``(seed, n)``, so enlarging the class never lowers the estimate.
    """
    T = np.atleast_2d(np.asarray(losses, dtype=np.float64))
    m, n = T.shape
    if m < 1 or n < 1 or mc_reps < 1:
        raise BadParam("need at least one function, one sample and one replicate")
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(mc_reps, n)).astype(np.float64) * 2.0 - 1.0
    sup = np.abs(signs @ T.T / n).max(axis=1)
    se = float(sup.std(ddof=1) / math.sqrt(mc_reps)) if mc_reps > 1 else math.nan
    return RademacherEstimate(float(sup.mean()), se, mc_reps, n, m, class_sample)


def squared_losses(predictions, y) -> np.ndarray:
    """Loss matrix ℓ_g(z_i) = (y_i − g_i)² for a stack of predictions (one row per g)."""
    G = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    return (np.asarray(y, dtype=np.float64)[None, :] - G) ** 2


@dataclass(frozen=True)
class GeneralizationReport:
    n: int
    K: int
    epsilon: float
    delta: float
    rademacher: float
    bound_terms: dict = field(default_factory=dict)
    bound_gap: float = 0.0
    probability_floor: float = 0.0
    raw_probability: float = 0.0


def generalization_bound(n: int, K: int, epsilon: float, delta: float, rademacher: float) -> GeneralizationReport:
    """Excess-risk slack 4·R + 2δ and its confidence level
    (1 − ε)(1 − exp(−nεδ²/(4K)))(1 − 2·exp(−nε/K)), floored at 0.
    """
    if not 0 < epsilon < 1:
        raise BadParam("epsilon must lie in (0, 1)")
    if not delta >= 0:
        raise BadParam("delta must be >= 0")
    if n < 1 or K < 1:
        raise BadParam("n and K must be >= 1")
    if not rademacher >= 0:
        raise BadParam("rademacher must be >= 0")
    terms = {"4R": 4.0 * rademacher, "2delta": 2.0 * delta}
    raw = (1 - epsilon) * (1 - math.exp(-n * epsilon * delta * delta / (4 * K))) * (1 - 2 * math.exp(-n * epsilon / K))
    return GeneralizationReport(n, K, epsilon, delta, rademacher, terms, terms["4R"] + terms["2delta"],
                                min(1.0, max(0.0, raw)), raw)
