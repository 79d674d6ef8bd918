"""Fixed-length window summarization, missing masks and training-set normalization."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .data import CATEGORICAL, DataError, Dataset, FeatureSchema, RawSeries

MODE = "mode"
LAST = "last"
COUNT_COLUMN = "segment_entry_count"


@dataclass(frozen=True)
class SummarizationConfig:
    window: float
    categorical: str = MODE

    def validate(self, T: float) -> None:
        if not 0 < self.window <= T:
            raise DataError(f"summarization window {self.window} must lie in (0, {T}]")
        if self.categorical not in (MODE, LAST):
            raise DataError(f"categorical aggregator must be {MODE!r} or {LAST!r}")

    def n_windows(self, T: float) -> int:
        return int(math.floor(T / self.window))


@dataclass
class SummaryMatrix:
    """``values`` is k x (n+1) with NaN for missing cells; ``mask`` is 1 where observed."""
    values: np.ndarray
    mask: np.ndarray

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def column_names(schema: FeatureSchema) -> list[str]:
    return schema.names + [COUNT_COLUMN]


def _kinds(schema: FeatureSchema, cfg: SummarizationConfig) -> np.ndarray:
    cat = kernels.KIND_MODE if cfg.categorical == MODE else kernels.KIND_LAST
    return np.array([cat if f.kind == CATEGORICAL else kernels.KIND_NUMERICAL
                     for f in schema.features], dtype=np.int8)


def summarize(raw: RawSeries, cfg: SummarizationConfig, T: float,
              schema: FeatureSchema) -> SummaryMatrix:
    """Aggregate a raw series into ``floor(T / p)`` windows anchored at its first timestamp.

    Row ``t - t1 == T`` (allowed by the window invariant) is counted in the
    final window, which already absorbs the remainder ``[t1 + (k-1)p, t1 + T)``.
    """
    cfg.validate(T)
    k = cfg.n_windows(T)
    n = len(schema)
    if raw.m == 0:
        vals = np.full((k, n + 1), np.nan)
        vals[:, n] = 0.0
        mask = np.zeros((k, n + 1), dtype=np.uint8)
        mask[:, n] = 1
        return SummaryMatrix(vals, mask)
    rel = raw.timestamps - raw.timestamps[0]
    win = np.minimum(np.floor(rel / cfg.window).astype(np.int64), k - 1)
    max_vocab = max([len(f.categories) for f in schema.features if f.kind == CATEGORICAL],
                    default=0)
    values = np.ascontiguousarray(raw.values, dtype=np.float64)
    out, mask = kernels.summarize_rows(np.ascontiguousarray(win), values,
                                       _kinds(schema, cfg), k, max_vocab)
    return SummaryMatrix(out, mask)


def summarize_dataset(ds: Dataset, cfg: SummarizationConfig) -> list[SummaryMatrix]:
    return [summarize(s, cfg, ds.observation_window, ds.schema) for s in ds.samples]


@dataclass
class Normalizer:
    """Per-column statistics fitted on training summaries (count column included)."""
    mean: np.ndarray
    std: np.ndarray
    mode: np.ndarray
    categorical: np.ndarray

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "mode": [None if np.isnan(v) else float(v) for v in self.mode],
                "categorical": self.categorical.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   np.array([np.nan if v is None else v for v in d["mode"]], dtype=np.float64),
                   np.array(d["categorical"], dtype=bool))


def categorical_columns(schema: FeatureSchema) -> np.ndarray:
    return np.array([f.kind == CATEGORICAL for f in schema.features] + [False])


def fit_normalizer(train: list[SummaryMatrix], schema: FeatureSchema) -> Normalizer:
    cat = categorical_columns(schema)
    C = len(cat)
    if train:
        vals = np.stack([sm.values for sm in train]).reshape(-1, C)
        mask = np.stack([sm.mask for sm in train]).reshape(-1, C).astype(bool)
    else:
        vals = np.zeros((0, C))
        mask = np.zeros((0, C), dtype=bool)
    mean = np.zeros(C)
    std = np.ones(C)
    mode = np.full(C, np.nan)
    for j in range(C):
        obs = vals[mask[:, j], j]
        if cat[j]:
            if len(obs):
                mode[j] = float(np.argmax(np.bincount(obs.astype(np.int64))))
            else:
                mode[j] = 0.0
            continue
        if len(obs):
            mean[j] = obs.mean()
            s = obs.std()
            std[j] = s if s >= 1e-12 else 1.0
    return Normalizer(mean, std, mode, cat)


def apply_normalizer(sm: SummaryMatrix, norm: Normalizer, impute: bool = False) -> SummaryMatrix:
    """Z-score observed numerical cells; with ``impute`` also fill every missing
    cell (0 for numerical, the training mode for categorical) and unmask it."""
    if sm.n_columns != len(norm.mean):
        raise DataError(f"summary has {sm.n_columns} columns, normalizer expects {len(norm.mean)}")
    num = ~norm.categorical
    vals = sm.values.copy()
    vals[:, num] = (vals[:, num] - norm.mean[num]) / norm.std[num]
    mask = sm.mask.copy()
    if impute:
        miss = mask == 0
        fill = np.where(num, 0.0, norm.mode)
        vals = np.where(miss, fill[None, :], vals)
        mask = np.ones_like(mask)
    return SummaryMatrix(vals, mask)


def missing_rate(matrices: list[SummaryMatrix]) -> float:
    """Fraction of unobserved cells over the feature columns (count column excluded)."""
    if not matrices:
        raise ValueError("missing_rate needs at least one summary matrix")
    total = missed = 0
    for sm in matrices:
        m = sm.mask[:, :-1]
        total += m.size
        missed += int((m == 0).sum())
    return missed / total if total else 0.0


def export_summaries_csv(ds: Dataset, matrices: list[SummaryMatrix], path) -> None:
    cols = column_names(ds.schema)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "window"] + cols + [c + ".mask" for c in cols])
        for s, sm in zip(ds.samples, matrices):
            for i in range(sm.k):
                vals = ["" if np.isnan(v) else repr(float(v)) for v in sm.values[i]]
                w.writerow([s.id, i] + vals + [int(x) for x in sm.mask[i]])
