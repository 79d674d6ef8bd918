"""End-to-end runs shared by the CLI, the scenario bench and the acceptance tests."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import Dataset, SynthConfig, derive_seed, generate_synthetic, split_stratified
from .embedding import EvatVariant
from .metrics import auprc
from .model import LossConfig, ModelConfig
from .summarize import SummarizationConfig
from .training import TrainConfig, train

log = logging.getLogger(__name__)

CANNED_SYNTH = SynthConfig(n_samples=10_000, n_numerical=4, n_categorical=1, missing_rate=0.75,
                           observation_window=48.0, mean_events=40.0, prevalence=0.1, seed=7,
                           summary_window=6.0)
CANNED_SUMMARIZATION = SummarizationConfig(window=6.0)
CANNED_MODEL = ModelConfig(d_model=16, num_head=2, ff_dim=32, num_layer=2,
                           classifier_down_factor=2)
CANNED_TRAIN = TrainConfig(learning_rate=2e-3, batch_size=256, max_epochs=50, eval_every=5,
                           patience=30, seed=7)
TEST_FRACTION = 0.2


def split_digest(ds: Dataset) -> str:
    return hashlib.sha256(",".join(s.id for s in ds.samples).encode()).hexdigest()[:16]


@dataclass
class RunOutcome:
    seed: int
    variant: str
    impute: bool
    val_auprc: float | None
    test_auprc: float
    best_epoch: int | None
    train_split: str
    test_split: str
    wall_time: float


def train_and_test(ds: Dataset, seed: int, sum_cfg: SummarizationConfig, model_cfg: ModelConfig,
                   train_cfg: TrainConfig, variant: EvatVariant = EvatVariant.SCANE,
                   impute: bool = False, loss_cfg: LossConfig = LossConfig(),
                   test_fraction: float = TEST_FRACTION):
    """Stratified test split (derived from ``seed``), training, and test AUPRC."""
    tr, te = split_stratified(ds, test_fraction, derive_seed(seed, "test-split"))
    res = train(model_cfg, replace(train_cfg, seed=seed), tr, sum_cfg, loss_cfg, variant, impute)
    probs = res.model.predict_proba(te)
    out = RunOutcome(seed, variant.value, impute, res.history.best_auprc,
                     auprc(probs, te.labels), res.history.best_epoch, split_digest(tr),
                     split_digest(te), res.history.wall_time)
    return out, res, te


def run_ablation(ds: Dataset, seeds, sum_cfg: SummarizationConfig, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, loss_cfg: LossConfig = LossConfig(),
                 test_fraction: float = TEST_FRACTION) -> list[RunOutcome]:
    """All five token variants plus the imputed (unmasked) SCANE run, per seed."""
    rows = []
    for seed in seeds:
        plan = [(v, False) for v in EvatVariant] + [(EvatVariant.SCANE, True)]
        for variant, impute in plan:
            out, _, _ = train_and_test(ds, seed, sum_cfg, model_cfg, train_cfg, variant, impute,
                                       loss_cfg, test_fraction)
            log.info("seed %d %s impute=%s test auprc %.4f", seed, variant.value, impute,
                     out.test_auprc)
            rows.append(out)
    return rows


def summarize_ablation(rows: list[RunOutcome]) -> dict:
    """Median test AUPRC per arm and the per-seed direction of each paired claim."""
    def arm(r):
        return "scane_imputed" if r.impute else r.variant

    arms: dict[str, dict[int, float]] = {}
    for r in rows:
        arms.setdefault(arm(r), {})[r.seed] = r.test_auprc
    medians = {a: float(np.median(list(v.values()))) for a, v in arms.items()}
    scane = arms.get("scane", {})
    claims = {}
    for other in [v.value for v in EvatVariant if v is not EvatVariant.SCANE] + ["scane_imputed"]:
        if other not in arms:
            continue
        violations = [s for s in scane if s in arms[other] and scane[s] < arms[other][s]]
        claims[f"scane>={other}"] = {"median_holds": medians["scane"] >= medians[other],
                                     "violating_seeds": violations}
    return {"median_test_auprc": medians, "claims": claims,
            "rows": [asdict(r) for r in rows]}


def canned_dataset(cfg: SynthConfig = CANNED_SYNTH) -> Dataset:
    return generate_synthetic(cfg)
