"""Dataset schema, JSON-lines storage, stratified splits and a synthetic generator."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


def derive_seed(root: int, label: str) -> int:
    """Stable 63-bit sub-seed for ``(root, label)``."""
    h = hashlib.sha256(f"{int(root)}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = NUMERICAL
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and not self.categories:
            raise DataError(f"feature {self.name!r}: categorical feature needs a vocabulary")

    def to_json(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["categories"] = list(self.categories)
        return d


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")

    def __len__(self):
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown feature name {name!r}") from None

    def to_json(self) -> list[dict]:
        return [f.to_json() for f in self.features]

    @classmethod
    def from_json(cls, items: list[dict]) -> "FeatureSchema":
        feats = []
        for it in items:
            feats.append(Feature(it["name"], it.get("kind", NUMERICAL),
                                 tuple(it.get("categories", ()))))
        return cls(tuple(feats))


@dataclass
class RawSeries:
    """One sample: ``values[i, j]`` is feature ``j`` at ``timestamps[i]``; NaN = missing.

    Categorical cells hold the category index as a float.
    """
    id: str
    timestamps: np.ndarray
    values: np.ndarray
    label: int
    event_time: float | None = None

    @property
    def m(self) -> int:
        return len(self.timestamps)

    def validate(self, schema: FeatureSchema, window: float) -> None:
        t = self.timestamps
        if self.values.shape != (len(t), len(schema)):
            raise DataError(f"sample {self.id}: values shape {self.values.shape} "
                            f"does not match ({len(t)}, {len(schema)})")
        if len(t) and np.any(np.diff(t) < 0):
            raise DataError(f"sample {self.id}: timestamps are not non-decreasing")
        if len(t) and t[-1] - t[0] > window:
            raise DataError(f"sample {self.id}: timestamps span more than the observation window")
        if self.label not in (0, 1):
            raise DataError(f"sample {self.id}: label must be 0 or 1")
        if self.event_time is not None and not self.event_time > 0:
            raise DataError(f"sample {self.id}: event_time must be positive")
        for j, f in enumerate(schema.features):
            col = self.values[:, j]
            obs = col[~np.isnan(col)]
            if not np.all(np.isfinite(obs)):
                raise DataError(f"sample {self.id}: non-finite value for {f.name}")
            if f.kind == CATEGORICAL and len(obs):
                if np.any(obs != np.round(obs)) or obs.min() < 0 or obs.max() >= len(f.categories):
                    raise DataError(f"sample {self.id}: category out of vocabulary for {f.name}")

    def equals(self, other: "RawSeries") -> bool:
        return (self.id == other.id and self.label == other.label
                and self.event_time == other.event_time
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values, equal_nan=True))


@dataclass
class Dataset:
    schema: FeatureSchema
    samples: list[RawSeries]
    observation_window: float
    provenance: str = ""

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def by_id(self, sample_id: str) -> RawSeries:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def subset(self, idx: Sequence[int], note: str = "") -> "Dataset":
        return Dataset(self.schema, [self.samples[i] for i in idx], self.observation_window,
                       note or self.provenance)

    def validate(self) -> None:
        for s in self.samples:
            s.validate(self.schema, self.observation_window)

    def equals(self, other: "Dataset") -> bool:
        return (self.schema == other.schema
                and self.observation_window == other.observation_window
                and self.provenance == other.provenance
                and len(self.samples) == len(other.samples)
                and all(a.equals(b) for a, b in zip(self.samples, other.samples)))


# ---------------------------------------------------------------------------
# JSON-lines storage
# ---------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _num(v: float, categorical: bool):
    if categorical:
        return int(v)
    return int(v) if float(v).is_integer() and abs(v) < 2**53 else float(v)


def dataset_lines(ds: Dataset) -> list[str]:
    header = {"schema": ds.schema.to_json(), "observation_window": ds.observation_window}
    if ds.provenance:
        header["provenance"] = ds.provenance
    lines = [_dumps(header)]
    cat = [f.kind == CATEGORICAL for f in ds.schema.features]
    names = ds.schema.names
    for s in ds.samples:
        events = []
        for t, row in zip(s.timestamps.tolist(), s.values.tolist()):
            observed = [(j, v) for j, v in enumerate(row) if not math.isnan(v)]
            if not observed:
                # an explicit null keeps a row with no observed cell (it still counts as an entry)
                events.append({"t": _num(t, False), "feature": names[0], "value": None})
            for j, v in observed:
                events.append({"t": _num(t, False), "feature": names[j], "value": _num(v, cat[j])})
        rec = {"id": s.id, "label": int(s.label)}
        if s.event_time is not None:
            rec["event_time"] = _num(s.event_time, False)
        rec["events"] = events
        lines.append(_dumps(rec))
    return lines


def save_dataset(ds: Dataset, path) -> None:
    """Write the canonical JSON-lines form (header line, then one sample per line).

    Missing cells are left out; a row with no observed cell is written as a
    single event whose value is null.
    """
    text = "\n".join(dataset_lines(ds)) + "\n"
    Path(path).write_bytes(text.encode("utf-8"))


def _parse_sample(rec: dict, schema: FeatureSchema, lineno: int) -> RawSeries:
    for key in ("id", "label", "events"):
        if key not in rec:
            raise DataError(f"line {lineno}: missing key {key!r}")
    sid = str(rec["id"])
    n = len(schema)
    times: list[float] = []
    rows: list[list[float]] = []
    last_t = -math.inf
    for ev in rec["events"]:
        try:
            t = float(ev["t"])
            j = schema.index(ev["feature"])
            v = ev["value"]
        except DataError as exc:
            raise DataError(f"line {lineno} (sample {sid}): {exc}") from None
        except (KeyError, TypeError, ValueError):
            raise DataError(f"line {lineno} (sample {sid}): malformed event {ev!r}") from None
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))
                              or not math.isfinite(v)):
            raise DataError(f"line {lineno} (sample {sid}): value must be a finite number or null")
        if t < last_t:
            raise DataError(f"line {lineno} (sample {sid}): timestamps are not non-decreasing")
        last_t = t
        if v is None:
            # explicit MISSING: opens a row at t but observes nothing
            if not times or t != times[-1]:
                times.append(t)
                rows.append([math.nan] * n)
            continue
        if not times or t != times[-1] or not math.isnan(rows[-1][j]):
            times.append(t)
            rows.append([math.nan] * n)
        rows[-1][j] = float(v)
    label = rec["label"]
    if label not in (0, 1) or isinstance(label, bool):
        raise DataError(f"line {lineno} (sample {sid}): label must be 0 or 1")
    et = rec.get("event_time")
    s = RawSeries(sid, np.array(times, dtype=np.float64),
                  np.array(rows, dtype=np.float64).reshape(len(times), n), int(label),
                  None if et is None else float(et))
    return s


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError("line 1: empty file, header expected")
    try:
        header = json.loads(lines[0])
        schema = FeatureSchema.from_json(header["schema"])
        window = float(header["observation_window"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"line 1: malformed header ({exc})") from None
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DataError(f"line {lineno}: expected an object")
        s = _parse_sample(rec, schema, lineno)
        try:
            s.validate(schema, window)
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        samples.append(s)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids")
    return Dataset(schema, samples, window, header.get("provenance", ""))


# ---------------------------------------------------------------------------
# stratified split
# ---------------------------------------------------------------------------

def split_indices(labels: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        n_test = int(round(test_fraction * len(idx)))
        if n_test < 1 or len(idx) - n_test < 1:
            raise DataError(f"class {cls} has {len(idx)} samples; too few for a "
                            f"{test_fraction:g} stratified split")
        idx = rng.permutation(idx)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_stratified(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class shuffled split; returns ``(train, test)`` in original order."""
    tr, te = split_indices(ds.labels, test_fraction, seed)
    return ds.subset(tr), ds.subset(te)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Synthetic dataset parameters.

    ``missing_rate`` is the fraction of (window, feature) cells left empty
    when the series is summarized with windows of ``summary_window``.
    The label is positive for the samples with the largest
    ``min(mean(num_0), mean(num_1))`` over the whole observation window;
    ``label_noise`` of the positives are flipped to negative and the same
    number of negatives flipped to positive.
    """
    n_samples: int = 1000
    n_numerical: int = 4
    n_categorical: int = 1
    missing_rate: float = 0.75
    observation_window: float = 48.0
    mean_events: float = 40.0
    prevalence: float = 0.1
    seed: int = 0
    summary_window: float = 6.0
    n_categories: int = 3
    label_noise: float = 0.05
    event_horizon: float | None = None
    value_noise: float = 0.5

    def validate(self) -> None:
        if self.n_samples < 2:
            raise DataError("n_samples must be at least 2")
        if self.n_numerical < 2:
            raise DataError("need at least two numerical features (the label depends on two)")
        if self.n_categorical < 0:
            raise DataError("n_categorical must be non-negative")
        if not 0 <= self.missing_rate < 1:
            raise DataError("missing_rate must lie in [0, 1)")
        if not 0 < self.prevalence < 1 or self.prevalence * self.n_samples < 1:
            raise DataError("prevalence must lie in (0, 1) with at least one positive sample")
        if (1 - self.prevalence) * self.n_samples < 1:
            raise DataError("prevalence leaves no negative samples")
        if not 0 < self.summary_window <= self.observation_window:
            raise DataError("summary_window must lie in (0, observation_window]")
        if self.mean_events < 1:
            raise DataError("mean_events must be at least 1")
        if not 0 <= self.label_noise < 0.5:
            raise DataError("label_noise must lie in [0, 0.5)")
        if self.n_categorical and self.n_categories < 1:
            raise DataError("n_categories must be positive")

    def schema(self) -> FeatureSchema:
        feats = [Feature(f"num_{j}") for j in range(self.n_numerical)]
        cats = tuple(f"c{c}" for c in range(self.n_categories))
        feats += [Feature(f"cat_{j}", CATEGORICAL, cats) for j in range(self.n_categorical)]
        return FeatureSchema(tuple(feats))


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    lo = math.floor(x)
    return lo + int(rng.random() < x - lo)


def _generate_one(cfg: SynthConfig, idx: int, rng: np.random.Generator):
    T = cfg.observation_window
    p = cfg.summary_window
    k = int(math.floor(T / p))
    n_num, n_cat = cfg.n_numerical, cfg.n_categorical
    n = n_num + n_cat

    # homogeneous Poisson arrivals on (0, T) after an admission event at t=0
    n_extra = rng.poisson(max(cfg.mean_events - 1.0, 0.0))
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.0, T, size=n_extra))])
    times = np.round(times, 6)
    m = len(times)
    win = np.minimum((times // p).astype(np.int64), k - 1)
    nonempty = np.unique(win)

    # per feature: which reference windows carry observations
    target_obs = (1.0 - cfg.missing_rate) * k
    chosen = []
    for _ in range(n):
        c = min(_stochastic_round(target_obs, rng), len(nonempty))
        chosen.append(set(rng.choice(nonempty, size=c, replace=False).tolist()))
    if not any(0 in c for c in chosen):
        # the t=0 row must stay observed so windows keep their anchor
        donors = [j for j in range(n) if chosen[j]]
        if donors:
            j = donors[int(rng.integers(len(donors)))]
            chosen[j].discard(sorted(chosen[j])[int(rng.integers(len(chosen[j])))])
            chosen[j].add(0)
        else:
            chosen[int(rng.integers(n))].add(0)

    observed = np.zeros((m, n), dtype=bool)
    for j in range(n):
        for w in chosen[j]:
            rows = np.flatnonzero(win == w)
            pick = rng.random(len(rows)) < 0.5
            pick[int(rng.integers(len(rows)))] = True
            observed[rows[pick], j] = True
    if not observed[0].any():
        j0 = [j for j in range(n) if 0 in chosen[j]][0]
        observed[0, j0] = True

    levels = rng.normal(0.0, 1.0, size=n_num)
    values = np.full((m, n), np.nan)
    noise = rng.normal(0.0, cfg.value_noise, size=(m, n_num))
    values[:, :n_num] = np.round(levels + noise, 6)
    if n_cat:
        pref = rng.integers(cfg.n_categories, size=n_cat)
        draw = rng.integers(cfg.n_categories, size=(m, n_cat))
        keep = rng.random((m, n_cat)) < 0.7
        values[:, n_num:] = np.where(keep, pref, draw)
    values[~observed] = np.nan

    keep_rows = observed.any(axis=1)
    times, values = times[keep_rows], values[keep_rows]
    return times, values


def rule_score(times_values: tuple[np.ndarray, np.ndarray]) -> float:
    """``min`` of the observation-window means of ``num_0`` and ``num_1`` (0 if unobserved)."""
    _, values = times_values
    means = []
    for j in (0, 1):
        col = values[:, j]
        obs = col[~np.isnan(col)]
        means.append(float(obs.mean()) if len(obs) else 0.0)
    return min(means)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    schema = cfg.schema()
    series = []
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        series.append(_generate_one(cfg, i, rng))

    scores = np.array([rule_score(s) for s in series])
    n_pos = int(round(cfg.prevalence * cfg.n_samples))
    order = np.lexsort((np.arange(len(scores)), -scores))
    labels = np.zeros(cfg.n_samples, dtype=np.int64)
    labels[order[:n_pos]] = 1

    lrng = np.random.default_rng(derive_seed(cfg.seed, "label-noise"))
    n_flip = int(round(cfg.label_noise * n_pos))
    if n_flip:
        pos = np.flatnonzero(labels == 1)
        neg = np.flatnonzero(labels == 0)
        flip_pos = lrng.choice(pos, size=n_flip, replace=False)
        flip_neg = lrng.choice(neg, size=min(n_flip, len(neg)), replace=False)
        labels[flip_pos] = 0
        labels[flip_neg] = 1

    horizon = cfg.event_horizon if cfg.event_horizon is not None else cfg.observation_window
    trng = np.random.default_rng(derive_seed(cfg.seed, "event-time"))
    samples = []
    for i, (times, values) in enumerate(series):
        if labels[i]:
            et = float(horizon - trng.uniform(0.0, horizon))  # (0, horizon]
        else:
            et = float(horizon)
        samples.append(RawSeries(f"s{i:06d}", times, values, int(labels[i]), max(round(et, 6), 1e-6)))
    note = (f"synthetic seed={cfg.seed} n={cfg.n_samples} missing={cfg.missing_rate} "
            f"prevalence={cfg.prevalence}")
    return Dataset(schema, samples, float(cfg.observation_window), note)


def realized_rates(ds: Dataset) -> dict[str, float]:
    """Prevalence and raw-grid missing fraction."""
    cells = sum(s.values.size for s in ds.samples)
    missing = sum(int(np.isnan(s.values).sum()) for s in ds.samples)
    return {"prevalence": float(ds.labels.mean()) if len(ds) else 0.0,
            "raw_missing_rate": missing / cells if cells else 0.0}
