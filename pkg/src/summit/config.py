"""Run configuration: one JSON document validated against the shipped schema."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .data import SynthConfig, derive_seed
from .embedding import EvatVariant
from .model import LossConfig, ModelConfig
from .summarize import SummarizationConfig
from .training import SweepGrid, TrainConfig


class ConfigError(ValueError):
    pass


@lru_cache(maxsize=1)
def config_schema() -> dict:
    text = resources.files("summit").joinpath("config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class RunConfig:
    seed: int = 0
    run_dir: str = "run"
    dataset: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    summarization: SummarizationConfig = field(default_factory=lambda: SummarizationConfig(6.0))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    variant: EvatVariant = EvatVariant.SCANE
    impute: bool = False
    test_fraction: float = 0.2
    n_boot: int = 1000
    level: float = 0.95
    threshold: float = 0.5
    ablation_seeds: tuple[int, ...] = ()
    sweep: SweepGrid | None = None
    source: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        """Validate ``doc`` and build the config; unknown keys are rejected."""
        try:
            jsonschema.validate(doc, config_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        seed = doc.get("seed", 0)
        synth = {"seed": derive_seed(seed, "synth"), **doc.get("synth", {})}
        ev = doc.get("evaluation", {})
        grid = None
        if "sweep" in doc:
            base = ModelConfig(**doc.get("model", {}))
            sw = doc["sweep"]
            grid = SweepGrid(**{f.name: list(sw.get(f.name, [getattr(base, f.name)]))
                                for f in fields(SweepGrid) if f.name != "learning_rate"},
                             learning_rate=list(sw.get("learning_rate",
                                                       [doc.get("train", {}).get("learning_rate",
                                                                                 1e-3)])))
        cfg = cls(seed=seed, run_dir=doc.get("run_dir", "run"), dataset=doc.get("dataset"),
                  synth=SynthConfig(**synth),
                  summarization=SummarizationConfig(**{"window": 6.0,
                                                       **doc.get("summarization", {})}),
                  model=ModelConfig(**doc.get("model", {})),
                  train=TrainConfig(**{**doc.get("train", {}), "seed": seed}),
                  loss=LossConfig(**doc.get("loss", {})),
                  variant=EvatVariant(doc.get("variant", "scane")),
                  impute=doc.get("impute", False),
                  test_fraction=doc.get("test_fraction", 0.2),
                  n_boot=ev.get("n_boot", 1000), level=ev.get("level", 0.95),
                  threshold=ev.get("threshold", 0.5),
                  ablation_seeds=tuple(doc.get("ablation", {}).get("seeds", [seed])),
                  sweep=grid, source=doc)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {p} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p} must hold a JSON object")
        return cls.from_dict(doc)

    def check(self) -> None:
        """Cross-field checks the schema cannot express."""
        try:
            self.synth.validate()
            self.model.validate()
            self.train.validate()
            self.loss.validate()
        except ValueError as exc:
            raise ConfigError(f"config error: {exc}") from None

    def with_overrides(self, **kw) -> "RunConfig":
        """Flag overrides; ``max_epochs`` targets the training section."""
        out = self
        if kw.get("max_epochs") is not None:
            out = replace(out, train=replace(out.train, max_epochs=kw["max_epochs"]))
        if kw.get("variant") is not None:
            out = replace(out, variant=EvatVariant(kw["variant"]))
        if kw.get("impute"):
            out = replace(out, impute=True)
        if kw.get("run_dir") is not None:
            out = replace(out, run_dir=kw["run_dir"])
        if kw.get("dataset") is not None:
            out = replace(out, dataset=kw["dataset"])
        out.check()
        return out

    def resolved(self) -> dict:
        """Every effective setting, for the run manifest."""
        return {"seed": self.seed, "dataset": self.dataset, "synth": asdict(self.synth),
                "summarization": asdict(self.summarization), "model": asdict(self.model),
                "train": asdict(self.train), "loss": asdict(self.loss),
                "variant": self.variant.value, "impute": self.impute,
                "test_fraction": self.test_fraction, "n_boot": self.n_boot, "level": self.level,
                "threshold": self.threshold, "ablation_seeds": list(self.ablation_seeds)}
