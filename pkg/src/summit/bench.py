"""Canned synthetic scenarios with machine-checkable verdicts.

Each scenario runs a piece of the pipeline, produces a flat dict of measured
values and checks predicates over it. Soft predicates encode qualitative
paired claims: they are evaluated and reported, but never fail a scenario.
"""
from __future__ import annotations

import json
import logging
import operator
import time
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import experiments as ex
from .data import SynthConfig, generate_synthetic
from .embedding import EvatVariant, TokenLayout, build_batch
from .explain import importance_map, revised_rollout, rollout
from .model import ModelConfig, forward, init_params, predict
from .numerics import Tape
from .summarize import SummarizationConfig, apply_normalizer, fit_normalizer, summarize_dataset
from .training import TrainConfig

log = logging.getLogger(__name__)

_OPS: dict[str, Callable[[float, float], bool]] = {
    ">": operator.gt, ">=": operator.ge, "==": operator.eq, "<=": operator.le, "<": operator.lt}


class UnknownScenario(KeyError):
    pass


@dataclass(frozen=True)
class Predicate:
    metric: str
    op: str
    value: float
    soft: bool = False

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparison {self.op!r}")

    def check(self, measured: dict) -> bool:
        v = measured.get(self.metric)
        return v is not None and bool(_OPS[self.op](v, self.value))

    def describe(self) -> str:
        return f"{self.metric} {self.op} {self.value!r}" + (" (soft)" if self.soft else "")


@dataclass(frozen=True)
class Scenario:
    name: str
    synth: SynthConfig
    summarization: SummarizationConfig
    model: ModelConfig
    train: TrainConfig
    metrics: tuple[str, ...]
    predicates: tuple[Predicate, ...]
    runner: Callable[["Scenario"], dict]
    description: str = ""
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        unknown = [p.metric for p in self.predicates if p.metric not in self.metrics]
        if unknown:
            raise ValueError(f"scenario {self.name!r}: predicates reference metrics it does not "
                             f"compute: {unknown}")


@dataclass
class PredicateResult:
    predicate: str
    measured: float | None
    passed: bool
    soft: bool


@dataclass
class Verdict:
    scenario: str
    passed: bool
    predicates: list[PredicateResult]
    measured: dict
    wall_time: float
    error: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def _learnable(sc: Scenario) -> dict:
    ds = generate_synthetic(sc.synth)
    out, res, _ = ex.train_and_test(ds, sc.train.seed, sc.summarization, sc.model, sc.train)
    return {"test_auprc": out.test_auprc, "prevalence": sc.synth.prevalence,
            "auprc_over_prevalence": out.test_auprc / sc.synth.prevalence,
            "best_epoch": float(out.best_epoch or 0), "epochs_run": float(len(res.history.epoch_losses))}


def _random_model_inputs(sc: Scenario):
    """Normalized batch and randomly initialized parameters (no training needed)."""
    ds = generate_synthetic(sc.synth)
    sms = summarize_dataset(ds, sc.summarization)
    norm = fit_normalizer(sms, ds.schema)
    layout = TokenLayout.from_schema(ds.schema)
    batch = build_batch([apply_normalizer(sm, norm) for sm in sms], layout)
    params = init_params(sc.model, layout, EvatVariant.SCANE,
                         np.random.default_rng(sc.train.seed), dtype=np.float64)
    return batch, params, layout


def _masking_exactness(sc: Scenario) -> dict:
    batch, params, layout = _random_model_inputs(sc)
    tape = Tape(params, grad=False)
    base, trace = forward(tape, batch, sc.model, EvatVariant.SCANE, layout, record=True)
    w1 = trace.weights[0]
    masked_cols = np.broadcast_to((batch.mask == 0)[:, None, :], w1.shape)
    max_masked = float(np.max(np.abs(w1[masked_cols]), initial=0.0))
    rng = np.random.default_rng(sc.train.seed + 1)
    worst = 0.0
    for scale in (1e-3, 1.0, 1e6):
        noisy = replace(batch, values=np.where(batch.mask == 0,
                                               rng.normal(0, scale, batch.values.shape),
                                               batch.values))
        p = predict(params, noisy, sc.model, EvatVariant.SCANE, layout)
        worst = max(worst, float(np.max(np.abs(p - base.value))))
    return {"max_masked_first_stack_attention": max_masked, "max_probability_change": worst,
            "masked_fraction": float(np.mean(batch.mask == 0))}


def _rollout_divergence(sc: Scenario) -> dict:
    batch, params, layout = _random_model_inputs(sc)
    tape = Tape(params, grad=False)
    _, trace = forward(tape, batch, sc.model, EvatVariant.SCANE, layout, record=True)
    differ, masked_imp = 0, 0.0
    for b in range(len(batch)):
        ws = trace.sample(b)
        orig = importance_map(rollout(ws), batch.k, batch.n_columns)
        rev_r = revised_rollout(ws, batch.mask[b])
        rev = importance_map(rev_r, batch.k, batch.n_columns)
        differ += not np.array_equal(orig.ranks, rev.ranks)
        masked = batch.mask[b].reshape(batch.k, batch.n_columns) == 0
        masked_imp = max(masked_imp, float(np.max(np.abs(rev.importance[masked]), initial=0.0)))
    return {"rank_divergence_fraction": differ / len(batch),
            "revised_masked_importance_max": masked_imp}


def _paired_claims(sc: Scenario) -> dict:
    ds = generate_synthetic(sc.synth)
    rows = ex.run_ablation(ds, sc.seeds, sc.summarization, sc.model, sc.train)
    summary = ex.summarize_ablation(rows)
    out = {f"median_{k}": v for k, v in summary["median_test_auprc"].items()}
    for claim, info in summary["claims"].items():
        key = claim.replace(">=", "_ge_")
        out[f"{key}_median"] = float(info["median_holds"])
        out[f"{key}_violating_seeds"] = float(len(info["violating_seeds"]))
    splits = {(r.seed, r.train_split, r.test_split) for r in rows}
    out["distinct_splits_per_seed"] = len(splits) / len(sc.seeds)
    return out


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_SMALL_MODEL = ModelConfig(d_model=16, num_head=2, ff_dim=32, num_layer=2)
_PROBE_MODEL = ModelConfig(d_model=8, num_head=2, ff_dim=16, num_layer=2)
_OTHERS = [v.value for v in EvatVariant if v is not EvatVariant.SCANE] + ["scane_imputed"]


def default_scenarios() -> dict[str, Scenario]:
    small = replace(ex.CANNED_SYNTH, n_samples=2000, seed=11)
    probe = replace(ex.CANNED_SYNTH, n_samples=64, seed=3)
    paired = replace(ex.CANNED_SYNTH, n_samples=3000)
    short = replace(ex.CANNED_TRAIN, max_epochs=20)
    scenarios = [
        Scenario("sanity-learnable", small, ex.CANNED_SUMMARIZATION, _SMALL_MODEL,
                 replace(short, seed=11),
                 ("test_auprc", "prevalence", "auprc_over_prevalence", "best_epoch", "epochs_run"),
                 (Predicate("auprc_over_prevalence", ">", 2.0),), _learnable,
                 "2,000 samples, 20 epochs: test AUPRC above twice the prevalence"),
        Scenario("canned-learnable", ex.CANNED_SYNTH, ex.CANNED_SUMMARIZATION, ex.CANNED_MODEL,
                 ex.CANNED_TRAIN,
                 ("test_auprc", "prevalence", "auprc_over_prevalence", "best_epoch", "epochs_run"),
                 (Predicate("test_auprc", ">=", 0.40),), _learnable,
                 "10,000 samples, prevalence 0.1, missing rate 0.75, seed 7, at most 50 epochs"),
        Scenario("masking-exactness", probe, ex.CANNED_SUMMARIZATION, _PROBE_MODEL,
                 TrainConfig(seed=3),
                 ("max_masked_first_stack_attention", "max_probability_change", "masked_fraction"),
                 (Predicate("max_masked_first_stack_attention", "<=", 1e-12),
                  Predicate("max_probability_change", "==", 0.0),
                  Predicate("masked_fraction", ">", 0.0)), _masking_exactness,
                 "masked cells get no first-stack attention and cannot move the output"),
        Scenario("rollout-divergence", probe, ex.CANNED_SUMMARIZATION, _PROBE_MODEL,
                 TrainConfig(seed=3),
                 ("rank_divergence_fraction", "revised_masked_importance_max"),
                 (Predicate("revised_masked_importance_max", "==", 0.0),
                  Predicate("rank_divergence_fraction", ">", 0.0, soft=True)), _rollout_divergence,
                 "revised rollout zeroes masked cells; rankings differ from the original"),
        Scenario("paired-claims", paired, ex.CANNED_SUMMARIZATION, _SMALL_MODEL,
                 replace(ex.CANNED_TRAIN, max_epochs=10),
                 tuple([f"median_{a}" for a in ["scane"] + _OTHERS]
                       + [f"scane_ge_{o}_{s}" for o in _OTHERS for s in ("median", "violating_seeds")]
                       + ["distinct_splits_per_seed"]),
                 tuple([Predicate("distinct_splits_per_seed", "==", 1.0)]
                       + [Predicate(f"scane_ge_{o}_median", "==", 1.0, soft=True) for o in _OTHERS]),
                 _paired_claims,
                 "SCANE against the naive token variants and against imputed inputs, 3 seeds",
                 seeds=(1, 2, 3)),
    ]
    return {s.name: s for s in scenarios}


def _lookup(name: str, registry: dict[str, Scenario] | None) -> Scenario:
    reg = default_scenarios() if registry is None else registry
    if name not in reg:
        raise UnknownScenario(f"unknown scenario {name!r}; available: {', '.join(sorted(reg))}")
    return reg[name]


def run_scenario(name: str, registry: dict[str, Scenario] | None = None) -> Verdict:
    sc = _lookup(name, registry)
    t0 = time.perf_counter()
    try:
        measured = {k: float(v) for k, v in sc.runner(sc).items()}
    except Exception as exc:  # a crashing scenario is a failed scenario, with the reason kept
        log.exception("scenario %s crashed", name)
        return Verdict(name, False, [], {}, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    results = [PredicateResult(p.describe(), measured.get(p.metric), p.check(measured), p.soft)
               for p in sc.predicates]
    missing = [m for m in sc.metrics if m not in measured]
    passed = all(r.passed for r in results if not r.soft) and not missing
    err = f"runner did not report {missing}" if missing else None
    return Verdict(name, passed, results, measured, time.perf_counter() - t0, err)


@dataclass
class AggregateReport:
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def failed(self) -> list[str]:
        return [v.scenario for v in self.verdicts if not v.passed]

    def to_json(self) -> dict:
        return {"passed": self.passed, "failed": self.failed,
                "total_wall_time": sum(v.wall_time for v in self.verdicts),
                "scenarios": [v.to_json() for v in self.verdicts]}

    def junit_xml(self) -> str:
        suite = ET.Element("testsuite", name="summit-bench", tests=str(len(self.verdicts)),
                           failures=str(len(self.failed)),
                           time=f"{sum(v.wall_time for v in self.verdicts):.3f}")
        for v in self.verdicts:
            case = ET.SubElement(suite, "testcase", classname="summit.bench", name=v.scenario,
                                 time=f"{v.wall_time:.3f}")
            if not v.passed:
                bad = [r.predicate for r in v.predicates if not r.passed and not r.soft]
                msg = v.error or "; ".join(bad)
                ET.SubElement(case, "failure", message=msg).text = msg
            soft = [f"{r.predicate}: {'holds' if r.passed else 'violated'} (measured {r.measured})"
                    for r in v.predicates if r.soft]
            if soft:
                ET.SubElement(case, "system-out").text = "\n".join(soft)
        return ET.tostring(suite, encoding="unicode") + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        js, xml = d / "bench.json", d / "bench.junit.xml"
        js.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        xml.write_text(self.junit_xml(), encoding="utf-8")
        return js, xml


def run_all(names=None, out_dir=None, registry: dict[str, Scenario] | None = None) -> AggregateReport:
    """Run the named scenarios (all registered ones by default) in name order."""
    reg = default_scenarios() if registry is None else registry
    chosen = sorted(reg) if not names else list(names)
    for n in chosen:
        _lookup(n, reg)
    report = AggregateReport([run_scenario(n, reg) for n in chosen])
    if out_dir is not None:
        report.write(out_dir)
    return report
