from __future__ import annotations

import numpy as np
import pytest

from summit.data import Dataset, Feature, FeatureSchema, RawSeries, SynthConfig, generate_synthetic
from summit.embedding import EvatVariant, TokenLayout, build_batch
from summit.model import ModelConfig, init_params
from summit.summarize import (SummarizationConfig, apply_normalizer, fit_normalizer,
                              summarize_dataset)

NAN = np.nan


def tiny_synth(n_samples=40, seed=1, **kw) -> SynthConfig:
    base = dict(n_samples=n_samples, n_numerical=2, n_categorical=1, seed=seed,
                observation_window=6.0, summary_window=2.0, mean_events=8.0, missing_rate=0.5,
                prevalence=0.5)
    base.update(kw)
    return SynthConfig(**base)


def normalized_batch(ds: Dataset, window: float, impute: bool = False):
    sms = summarize_dataset(ds, SummarizationConfig(window))
    norm = fit_normalizer(sms, ds.schema)
    layout = TokenLayout.from_schema(ds.schema)
    return build_batch([apply_normalizer(s, norm, impute) for s in sms], layout), layout


def make_model(layout, seed=0, d=8, heads=2, ff=16, layers=2, variant=EvatVariant.SCANE,
               dtype=np.float64):
    cfg = ModelConfig(d_model=d, num_head=heads, ff_dim=ff, num_layer=layers)
    return cfg, init_params(cfg, layout, variant, np.random.default_rng(seed), dtype=dtype)


@pytest.fixture(scope="session")
def tiny_ds() -> Dataset:
    """40 samples, 2 numerical + 1 categorical feature, T=6 and p=2 (k=3, L=12)."""
    return generate_synthetic(tiny_synth())


@pytest.fixture
def one_num_schema() -> FeatureSchema:
    return FeatureSchema((Feature("x"),))


@pytest.fixture
def mixed_schema() -> FeatureSchema:
    return FeatureSchema((Feature("hr"), Feature("unit", "categorical", ("A", "B", "C"))))


def series(sid, times, rows, label=0, event_time=None) -> RawSeries:
    vals = np.asarray(rows, dtype=float)
    if vals.ndim < 2:
        vals = vals.reshape(len(times), -1)
    return RawSeries(sid, np.asarray(times, dtype=float), vals, label, event_time)


def perfect_model_and_data(n=40):
    """A hand-wired checkpoint that separates a one-feature toy set exactly.

    The token direction u = [100, -100] makes the first layer norm emit
    sign(x) * [1, -1]; attention and feed-forward are zeroed, so the pooled
    vector is [1, -1] for positive values and ~0 otherwise.
    """
    from summit.data import Dataset
    from summit.model import LossConfig
    from summit.numerics import ParamSet
    from summit.pipeline import SummitModel
    from summit.summarize import Normalizer

    schema = FeatureSchema((Feature("x"),))
    rng = np.random.default_rng(0)
    samples = []
    for i in range(n):
        label = i % 2
        v = (1 if label else -1) * rng.uniform(0.5, 2.0)
        samples.append(series(f"s{i}", [0.0], [v], label, 0.5 if label else 1.0))
    ds = Dataset(schema, samples, 1.0)
    cfg = ModelConfig(d_model=2, num_head=1, ff_dim=2, num_layer=1)
    z = np.zeros
    ps = {"embed.table": np.array([[100.0, -100.0], [0.0, 0.0]]),
          "head.w1": np.array([[5.0], [0.0]]), "head.b1": z(1),
          "head.w2": np.array([[4.0]]), "head.b2": np.array([-10.0])}
    p = "encoder.0."
    for name in "qkvo":
        ps[p + f"w_{name}"], ps[p + f"b_{name}"] = z((2, 2)), z(2)
    ps.update({p + "ln1.g": np.ones(2), p + "ln1.b": z(2), p + "ff.w1": z((2, 2)), p + "ff.b1": z(2),
               p + "ff.w2": z((2, 2)), p + "ff.b2": z(2), p + "ln2.g": np.ones(2), p + "ln2.b": z(2)})
    norm = Normalizer(np.array([0.0, 1.0]), np.ones(2), np.full(2, np.nan), np.array([False, False]))
    model = SummitModel(cfg, LossConfig(), EvatVariant.SCANE, schema, SummarizationConfig(1.0), 1.0,
                        norm, False, ParamSet(ps))
    return model, ds
