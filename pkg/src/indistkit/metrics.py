"""Binary classification metrics, bootstrap intervals and permutation baselines.

Randomness is counter based: replicate ``i`` of a resampling run draws from
``default_rng([seed, stream, i])`` (stream 0 for the bootstrap, 1 for
permutations), so results do not depend on thread count or scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import BadParam, LengthMismatch

BOOT_STREAM = 0
PERM_STREAM = 1
METRICS = ("mcc", "tpr", "tnr", "mse", "covariance", "mean")


def _binary(v, name: str) -> np.ndarray:
    a = np.asarray(v)
    if a.dtype == bool:
        return a
    a = a.astype(np.float64)
    if not np.isin(a, (0.0, 1.0)).all():
        raise BadParam(f"{name} must be binary (0/1)")
    return a == 1.0


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = _binary(pred, "pred"), _binary(truth, "truth")
    if p.shape != t.shape:
        raise LengthMismatch(p.size, t.size)
    return p, t


class Counts(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int


def _counts(p: np.ndarray, t: np.ndarray) -> Counts:
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return Counts(tp, fp, p.size - tp - fp - fn, fn)


def _mcc_counts(c: Counts) -> tuple[float, bool]:
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0, True
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den), False


class MccResult(NamedTuple):
    value: float
    degenerate: bool


def mcc(pred, truth) -> MccResult:
    """Matthews correlation; 0 with ``degenerate=True`` when a marginal is constant."""
    return MccResult(*_mcc_counts(_counts(*_pair(pred, truth))))


@dataclass(frozen=True)
class ConfusionRates:
    counts: Counts
    tpr: Optional[float]
    tnr: Optional[float]

    def to_dict(self) -> dict:
        return {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn,
                "fn": self.counts.fn, "tpr": self.tpr, "tnr": self.tnr}


def confusion_rates(pred, truth) -> ConfusionRates:
    """TPR and TNR with raw counts; a rate with an empty denominator is ``None``."""
    c = _counts(*_pair(pred, truth))
    pos, neg = c.tp + c.fn, c.tn + c.fp
    return ConfusionRates(c, c.tp / pos if pos else None, c.tn / neg if neg else None)


def _mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return math.fsum(d * d) / d.size


def _cov(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return math.fsum((a - a.mean()) * (b - b.mean())) / a.size


def _stat(metric: Union[str, Callable]) -> Callable[..., float]:
    if callable(metric):
        return metric
    if metric == "mcc":
        return lambda p, t: mcc(p, t).value
    if metric in ("tpr", "tnr"):
        def rate(p, t):
            v = getattr(confusion_rates(p, t), metric)
            return math.nan if v is None else v
        return rate
    if metric == "mse":
        return _mse
    if metric == "covariance":
        return _cov
    if metric == "mean":
        return lambda v: math.fsum(np.asarray(v, dtype=np.float64)) / len(v)
    raise BadParam(f"unknown metric {metric!r}; choose from {METRICS}")


@dataclass(frozen=True)
class MetricReport:
    """A point value with a 95% band.

    For ``method="percentile"`` the band is a bootstrap interval around
    ``point``; for ``method="permutation"`` it is the null band and
    ``point`` is the null mean, with the observed value in ``observed``.
    """

    metric: str
    point: float
    ci_low: float
    ci_high: float
    n_boot: int
    seed: int
    method: str = "percentile"
    observed: Optional[float] = None
    sd: Optional[float] = None
    n_valid: Optional[int] = None
    flagged: bool = False

    def to_dict(self) -> dict:
        return {"metric": self.metric, "method": self.method, "point": self.point,
                "ci_low": self.ci_low, "ci_high": self.ci_high, "observed": self.observed,
                "sd": self.sd, "replicates": self.n_boot, "n_valid": self.n_valid,
                "seed": self.seed, "flagged": self.flagged}


def _replicates(fn: Callable[[int], float], reps: int, workers: int) -> np.ndarray:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return np.fromiter(ex.map(fn, range(reps)), dtype=np.float64, count=reps)
    return np.fromiter((fn(i) for i in range(reps)), dtype=np.float64, count=reps)


def _band(vals: np.ndarray) -> tuple[float, float, int]:
    ok = vals[np.isfinite(vals)]
    if ok.size == 0:
        return math.nan, math.nan, 0
    lo, hi = np.quantile(ok, [0.025, 0.975])
    return float(lo), float(hi), int(ok.size)


def bootstrap_ci(metric: Union[str, Callable], *data, n_boot: int = 2000, seed: int = 0,
                 workers: int = 1, name: Optional[str] = None) -> MetricReport:
    """Percentile bootstrap over rows of the aligned arrays in ``data``.

    Replicates on which the statistic is undefined (e.g. TPR with no
    positives drawn) are dropped; ``n_valid`` counts the rest. ``flagged``
    marks intervals that exclude the point estimate.
    """
    arrays = [np.asarray(a) for a in data]
    if not arrays:
        raise BadParam("no data")
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise LengthMismatch(n, next(a.shape[0] for a in arrays if a.shape[0] != n))
    if n < 2:
        raise BadParam("bootstrap needs n >= 2")
    if n_boot < 100:
        raise BadParam("n_boot must be >= 100")
    fn = _stat(metric)
    point = float(fn(*arrays))

    def rep(i: int) -> float:
        idx = np.random.default_rng([seed, BOOT_STREAM, i]).integers(0, n, n)
        return fn(*(a[idx] for a in arrays))

    vals = _replicates(rep, n_boot, workers)
    lo, hi, nv = _band(vals)
    flagged = not (lo <= point <= hi) if np.isfinite(point) else True
    label = name or (metric if isinstance(metric, str) else getattr(metric, "__name__", "custom"))
    sd = float(np.nanstd(vals, ddof=1)) if nv > 1 else None
    return MetricReport(label, point, lo, hi, n_boot, seed, "percentile", None, sd, nv, flagged)


def permutation_baseline(pred, truth, n_perm: int = 2000, seed: int = 0, metric: str = "mcc",
                         workers: int = 1) -> MetricReport:
    """Distribution of ``metric`` when ``truth`` is randomly permuted."""
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise LengthMismatch(p.size, t.size)
    if p.shape[0] < 2:
        raise BadParam("permutation baseline needs n >= 2")
    if n_perm < 1:
        raise BadParam("n_perm must be >= 1")
    fn = _stat(metric)

    def rep(i: int) -> float:
        return fn(p, np.random.default_rng([seed, PERM_STREAM, i]).permutation(t))

    vals = _replicates(rep, n_perm, workers)
    lo, hi, nv = _band(vals)
    ok = vals[np.isfinite(vals)]
    mean = float(ok.mean()) if ok.size else math.nan
    sd = float(ok.std(ddof=1)) if ok.size > 1 else None
    return MetricReport(metric, mean, lo, hi, n_perm, seed, "permutation", float(fn(p, t)), sd, nv)
