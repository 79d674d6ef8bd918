"""Seeded training loop (Adam, focal loss, validation-monitored early stopping) and grid sweep."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, derive_seed, split_indices
from .embedding import EvatVariant, TokenBatch, TokenLayout, build_batch
from .metrics import MetricsReport, UndefinedMetric, auprc, auroc, metrics_report
from .model import LossConfig, ModelConfig, batch_loss, init_params, predict
from .numerics import NonFiniteError, ParamSet
from .pipeline import SummitModel
from .summarize import (SummarizationConfig, apply_normalizer, fit_normalizer,
                        summarize_dataset)

log = logging.getLogger(__name__)

STOP_AUPRC = "auprc"
STOP_EITHER = "either"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    eval_every: int = 5
    patience: int = 30
    stop_rule: str = STOP_AUPRC
    val_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size, eval_every must be positive; max_epochs non-negative")
        if self.patience < self.eval_every or self.patience % self.eval_every:
            raise ValueError("patience must be a positive multiple of eval_every")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.stop_rule not in (STOP_AUPRC, STOP_EITHER):
            raise ValueError(f"stop_rule must be {STOP_AUPRC!r} or {STOP_EITHER!r}")


@dataclass
class EvalRecord:
    epoch: int
    train_loss: float
    val_auprc: float
    val_auroc: float


@dataclass
class TrainHistory:
    records: list[EvalRecord] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_auprc: float | None = None
    stop_reason: str = "max_epochs"
    wall_time: float = 0.0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_auprc", "val_auroc"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_auprc), repr(r.val_auroc)])


@dataclass
class TrainResult:
    model: SummitModel
    history: TrainHistory
    train_idx: np.ndarray
    val_idx: np.ndarray
    val_batch: TokenBatch
    val_labels: np.ndarray

    @property
    def params(self) -> ParamSet:
        return self.model.params

    @property
    def table(self):
        return self.model.embedding_table()


class Adam:
    def __init__(self, params: ParamSet, lr: float, b1: float, b2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:
            g = grads[k].astype(params[k].dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def prepare_split(ds: Dataset, sum_cfg: SummarizationConfig, val_fraction: float, seed: int,
                  impute: bool = False):
    """Stratified train/validation split with the normalizer fitted on the train part."""
    labels = ds.labels
    tr, va = split_indices(labels, val_fraction, derive_seed(seed, "validation-split"))
    sms = summarize_dataset(ds, sum_cfg)
    norm = fit_normalizer([sms[i] for i in tr], ds.schema)
    normed = [apply_normalizer(sm, norm, impute=impute) for sm in sms]
    return tr, va, normed, norm


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_ds: Dataset,
          sum_cfg: SummarizationConfig, loss_cfg: LossConfig = LossConfig(),
          variant: EvatVariant = EvatVariant.SCANE, impute: bool = False,
          dtype=np.float32) -> TrainResult:
    """Train on ``train_ds`` (split internally into train/validation).

    Returns the parameters of the best validation-AUPRC evaluation; with no
    evaluation performed the initial parameters are returned.
    """
    model_cfg.validate()
    train_cfg.validate()
    loss_cfg.validate()
    sum_cfg.validate(train_ds.observation_window)
    if len(np.unique(train_ds.labels)) < 2:
        raise DataError("training data contains a single class")
    t0 = time.perf_counter()
    tr, va, normed, norm = prepare_split(train_ds, sum_cfg, train_cfg.val_fraction,
                                         train_cfg.seed, impute)
    layout = TokenLayout.from_schema(train_ds.schema)
    labels = train_ds.labels
    tr_batch = build_batch([normed[i] for i in tr], layout)
    va_batch = build_batch([normed[i] for i in va], layout)
    y_tr, y_va = labels[tr], labels[va]

    params = init_params(model_cfg, layout, variant,
                         np.random.default_rng(derive_seed(train_cfg.seed, "init")), dtype=dtype)
    best = params.copy()
    opt = Adam(params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2,
               train_cfg.adam_eps)
    shuffle = np.random.default_rng(derive_seed(train_cfg.seed, "shuffle"))
    hist = TrainHistory()
    best_auroc = -np.inf
    stale = 0
    limit = train_cfg.patience // train_cfg.eval_every
    n = len(tr)

    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = shuffle.permutation(n)
        total = 0.0
        norms = []
        for s in range(0, n, train_cfg.batch_size):
            idx = perm[s:s + train_cfg.batch_size]
            loss, grads = batch_loss(params, tr_batch.take(idx), y_tr[idx], model_cfg, variant,
                                     layout, loss_cfg)
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}")
            norms.append(float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))))
            opt.step(params, grads)
            total += loss * len(idx)
        hist.epoch_losses.append(total / n)
        hist.grad_norms.append(float(np.mean(norms)))

        if epoch % train_cfg.eval_every and epoch != train_cfg.max_epochs:
            continue
        probs = predict(params, va_batch, model_cfg, variant, layout)
        try:
            ap, roc = auprc(probs, y_va), auroc(probs, y_va)
        except UndefinedMetric as exc:
            raise DataError(f"validation split is single-class: {exc}") from None
        hist.records.append(EvalRecord(epoch, total / n, ap, roc))
        log.info("epoch %d loss %.5f val auprc %.4f auroc %.4f", epoch, total / n, ap, roc)
        improved = hist.best_auprc is None or ap > hist.best_auprc
        if train_cfg.stop_rule == STOP_EITHER:
            improved = improved or roc > best_auroc
        best_auroc = max(best_auroc, roc)
        if hist.best_auprc is None or ap > hist.best_auprc:
            hist.best_auprc, hist.best_epoch = ap, epoch
            best = params.copy()
        if improved:
            stale = 0
        else:
            stale += 1
            if stale >= limit:
                hist.stop_reason = "patience"
                break

    hist.wall_time = time.perf_counter() - t0
    model = SummitModel(model_cfg, loss_cfg, variant, train_ds.schema, sum_cfg,
                        train_ds.observation_window, norm, impute, best)
    return TrainResult(model, hist, tr, va, va_batch, y_va)


def evaluate(model: SummitModel, ds: Dataset, threshold: float = 0.5, n_boot: int = 1000,
             seed: int = 0) -> MetricsReport:
    """Score every sample and report AUPRC, AUROC, accuracy (and c-index with event times)."""
    probs = model.predict_proba(ds)
    times = None
    if ds.samples and all(s.event_time is not None for s in ds.samples):
        times = np.array([s.event_time for s in ds.samples])
    return metrics_report(probs, ds.labels, times, threshold=threshold, n_boot=n_boot, seed=seed)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepGrid:
    d_model: list[int]
    num_head: list[int]
    ff_dim: list[int]
    num_layer: list[int]
    classifier_down_factor: list[int]
    learning_rate: list[float]

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v:
                raise ValueError(f"sweep grid entry {k!r} is empty")

    def size(self) -> int:
        return int(np.prod([len(v) for v in asdict(self).values()]))

    def configs(self):
        keys = list(asdict(self))
        for combo in itertools.product(*(getattr(self, k) for k in keys)):
            yield dict(zip(keys, combo))


@dataclass
class SweepEntry:
    config: dict
    val_auprc: float | None
    n_params: int | None
    skipped: str | None = None


def sweep(grid: SweepGrid, train_cfg: TrainConfig, ds: Dataset, sum_cfg: SummarizationConfig,
          loss_cfg: LossConfig = LossConfig(), variant: EvatVariant = EvatVariant.SCANE,
          max_len: int = 512) -> list[SweepEntry]:
    """Train every grid point with the shared seed and validation split.

    Returns finished entries ranked by validation AUPRC (descending, ties by
    fewer parameters), followed by skipped entries with their reasons.
    """
    log.info("sweep over %d configurations", grid.size())
    done, skipped = [], []
    for conf in grid.configs():
        lr = conf["learning_rate"]
        mc_kw = {k: v for k, v in conf.items() if k != "learning_rate"}
        try:
            mc = ModelConfig(max_len=max_len, **mc_kw)
            mc.validate()
            tc = TrainConfig(**{**asdict(train_cfg), "learning_rate": lr})
            res = train(mc, tc, ds, sum_cfg, loss_cfg, variant)
        except (ValueError, FloatingPointError) as exc:
            skipped.append(SweepEntry(conf, None, None, str(exc)))
            continue
        done.append(SweepEntry(conf, res.history.best_auprc, res.params.n_scalars()))
    done.sort(key=lambda e: (-(e.val_auprc if e.val_auprc is not None else -1.0), e.n_params))
    return done + skipped


def sweep_report(entries: list[SweepEntry]) -> str:
    return json.dumps([asdict(e) for e in entries], indent=2, sort_keys=True)
