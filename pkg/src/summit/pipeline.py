"""A trained classifier bundled with everything needed to score raw series."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, FeatureSchema, RawSeries
from .embedding import EmbeddingTable, EvatVariant, TokenBatch, TokenLayout, build_batch
from .model import (AttentionTrace, LossConfig, ModelConfig, forward, predict, read_container,
                    write_container)
from .numerics import ParamSet, Tape
from .summarize import (Normalizer, SummarizationConfig, SummaryMatrix, apply_normalizer,
                        column_names, summarize)


class CheckpointError(ValueError):
    pass


@dataclass
class SummitModel:
    model_cfg: ModelConfig
    loss_cfg: LossConfig
    variant: EvatVariant
    schema: FeatureSchema
    summarization: SummarizationConfig
    observation_window: float
    normalizer: Normalizer
    impute: bool
    params: ParamSet

    @property
    def layout(self) -> TokenLayout:
        return TokenLayout.from_schema(self.schema)

    @property
    def column_names(self) -> list[str]:
        return column_names(self.schema)

    @property
    def k(self) -> int:
        return self.summarization.n_windows(self.observation_window)

    def embedding_table(self) -> EmbeddingTable | None:
        if "embed.table" not in self.params:
            return None
        return EmbeddingTable.from_params(self.params, self.layout, self.schema)

    def summarize(self, s: RawSeries) -> SummaryMatrix:
        sm = summarize(s, self.summarization, self.observation_window, self.schema)
        return apply_normalizer(sm, self.normalizer, impute=self.impute)

    def prepare(self, ds: Dataset) -> TokenBatch:
        self.check_compatible(ds)
        return build_batch([self.summarize(s) for s in ds.samples], self.layout)

    def check_compatible(self, ds: Dataset) -> None:
        if ds.schema != self.schema:
            raise CheckpointError("dataset schema does not match the checkpoint")
        if ds.observation_window != self.observation_window:
            raise CheckpointError("dataset observation window does not match the checkpoint")

    def predict_batch(self, batch: TokenBatch) -> np.ndarray:
        return predict(self.params, batch, self.model_cfg, self.variant, self.layout)

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        return self.predict_batch(self.prepare(ds))

    def trace(self, s: RawSeries) -> tuple[AttentionTrace, SummaryMatrix, float]:
        """Recorded attention for one sample, its normalized summary and probability."""
        sm = self.summarize(s)
        batch = build_batch([sm], self.layout)
        tape = Tape(self.params, grad=False)
        probs, trace = forward(tape, batch, self.model_cfg, self.variant, self.layout, record=True)
        single = AttentionTrace(trace.sample(0), trace.guarded_rows)
        return single, sm, float(probs.value[0])

    # -- persistence ----------------------------------------------------------
    def header(self) -> dict:
        return {"kind": "summit-checkpoint",
                "model": asdict(self.model_cfg), "loss": asdict(self.loss_cfg),
                "variant": self.variant.value, "schema": self.schema.to_json(),
                "summarization": asdict(self.summarization),
                "observation_window": self.observation_window,
                "normalizer": self.normalizer.to_json(), "impute": self.impute}

    def save(self, path) -> None:
        write_container(path, self.header(), {k: v for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "SummitModel":
        if not Path(path).exists():
            raise CheckpointError(f"checkpoint {path} does not exist")
        try:
            h, arrays = read_container(path)
        except (ValueError, OSError) as exc:
            raise CheckpointError(str(exc)) from None
        if h.get("kind") != "summit-checkpoint":
            raise CheckpointError(f"{path} is not a model checkpoint")
        return cls(ModelConfig(**h["model"]), LossConfig(**h["loss"]), EvatVariant(h["variant"]),
                   FeatureSchema.from_json(h["schema"]),
                   SummarizationConfig(**h["summarization"]), float(h["observation_window"]),
                   Normalizer.from_json(h["normalizer"]), bool(h["impute"]), ParamSet(arrays))


def save_trace(path, trace: AttentionTrace, mask: np.ndarray, meta: dict | None = None) -> None:
    arrays = {f"W{i + 1:03d}": w for i, w in enumerate(trace.weights)}
    arrays["mask"] = np.asarray(mask)
    header = {"kind": "attention-trace", "stacks": len(trace.weights),
              "guarded_rows": trace.guarded_rows, **(meta or {})}
    write_container(path, header, arrays)


def load_trace(path) -> tuple[AttentionTrace, np.ndarray, dict]:
    h, arrays = read_container(path)
    if h.get("kind") != "attention-trace":
        raise CheckpointError(f"{path} is not an attention trace")
    ws = [arrays[f"W{i + 1:03d}"] for i in range(h["stacks"])]
    return AttentionTrace(ws, h.get("guarded_rows", 0)), arrays["mask"], h
