"""Ranking metrics for binary classifiers and percentile bootstrap intervals."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from . import kernels


class UndefinedMetric(ValueError):
    """The metric has no value on this input (e.g. a single class)."""


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    if len(s) == 0:
        raise UndefinedMetric("empty input")
    return s, y


def auprc(scores, labels) -> float:
    """Average precision with tied scores grouped into one threshold step."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise UndefinedMetric("auprc needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    precision = tp / seen
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(precision * recall_gain))


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via mid-ranks."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("auroc needs both classes")
    r = rankdata(s)
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of samples where ``score >= threshold`` matches the label."""
    s, y = _check(scores, labels)
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def c_index(scores, event_times, labels) -> float:
    """Harrell's concordance: pairs (i, j) with an event at i and t_i < t_j.

    A pair is concordant when ``score_i > score_j``; equal scores count 0.5.
    """
    s, y = _check(scores, labels)
    t = np.asarray(event_times, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError("event_times must match scores")
    order = np.argsort(t, kind="mergesort")
    ranks = (rankdata(s, method="dense").astype(np.int64) - 1)[order]
    conc, tied, comp = kernels.concordance_counts(
        np.ascontiguousarray(t[order]), np.ascontiguousarray(y[order]),
        np.ascontiguousarray(ranks), int(ranks.max()) + 1)
    if comp == 0:
        raise UndefinedMetric("no comparable pairs")
    return float((conc + 0.5 * tied) / comp)


METRICS: dict[str, Callable] = {"auprc": auprc, "auroc": auroc, "accuracy": accuracy,
                                "c_index": c_index}


def _evaluate(metric: str, s, y, t, threshold):
    if metric == "c_index":
        return c_index(s, t, y)
    if metric == "accuracy":
        return accuracy(s, y, threshold)
    return METRICS[metric](s, y)


@dataclass
class BootstrapCI:
    low: float
    high: float
    n_boot: int
    level: float
    seed: int
    skipped: int = 0
    redrawn: int = 0
    reliable: bool = True


def bootstrap_ci(metric: str, scores, labels, event_times=None, n_boot: int = 1000,
                 level: float = 0.95, seed: int = 0, max_retries: int = 10,
                 threshold: float = 0.5) -> BootstrapCI:
    """Percentile interval from ``n_boot`` resamples with replacement.

    Resamples on which the metric is undefined are redrawn up to
    ``max_retries`` times, then skipped. The interval is unreliable when more
    than half of all draws were undefined.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    t = None if event_times is None else np.asarray(event_times, dtype=np.float64)
    _evaluate(metric, s, y, t, threshold)
    rng = np.random.default_rng(seed)
    n = len(s)
    def evaluate(idx):
        return _evaluate(metric, s[idx], y[idx], None if t is None else t[idx], threshold)

    if metric == "c_index":
        # resample positions of the time-sorted arrays: sorting ints replaces argsort
        order = np.argsort(t, kind="mergesort")
        ts, ys = t[order], y[order]
        rs = rankdata(s, method="dense").astype(np.int64)[order] - 1
        n_ranks = int(rs.max()) + 1

        def evaluate(idx):
            idx = np.sort(idx)
            conc, tied, comp = kernels.concordance_counts(ts[idx], ys[idx], rs[idx], n_ranks)
            if comp == 0:
                raise UndefinedMetric("no comparable pairs")
            return (conc + 0.5 * tied) / comp

    values = []
    skipped = redrawn = 0
    for _ in range(n_boot):
        for attempt in range(max_retries + 1):
            idx = rng.integers(0, n, size=n)
            try:
                values.append(float(evaluate(idx)))
                break
            except UndefinedMetric:
                redrawn += 1
        else:
            skipped += 1
    # every failed draw counts once, whether it was later replaced or skipped
    reliable = bool(values) and redrawn <= 0.5 * (redrawn + len(values))
    if not values:
        return BootstrapCI(float("nan"), float("nan"), n_boot, level, seed, skipped, redrawn, False)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(values), [a, 1.0 - a])
    return BootstrapCI(float(lo), float(hi), n_boot, level, seed, skipped, redrawn, bool(reliable))


@dataclass
class MetricValue:
    point: float
    ci: BootstrapCI | None = None


@dataclass
class MetricsReport:
    metrics: dict[str, MetricValue] = field(default_factory=dict)
    n_pos: int = 0
    n_neg: int = 0
    n_boot: int = 0
    seed: int = 0
    threshold: float = 0.5

    def point(self, name: str) -> float:
        return self.metrics[name].point

    def to_json(self) -> dict:
        return {"metrics": {k: asdict(v) for k, v in self.metrics.items()},
                "n_pos": self.n_pos, "n_neg": self.n_neg, "n_boot": self.n_boot,
                "seed": self.seed, "threshold": self.threshold}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def metrics_report(scores, labels, event_times=None, threshold: float = 0.5,
                   n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> MetricsReport:
    """All metrics (c-index only with event times) with bootstrap intervals."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    rep = MetricsReport(n_pos=int(y.sum()), n_neg=int(len(y) - y.sum()), n_boot=n_boot,
                        seed=seed, threshold=threshold)
    names = ["auprc", "auroc", "accuracy"] + (["c_index"] if event_times is not None else [])
    for name in names:
        try:
            point = _evaluate(name, s, y, event_times, threshold)
        except UndefinedMetric:
            continue
        ci = None
        if n_boot > 0:
            ci = bootstrap_ci(name, s, y, event_times, n_boot=n_boot, level=level, seed=seed,
                              threshold=threshold)
        rep.metrics[name] = MetricValue(point, ci)
    return rep
