"""Command-line entry point: ``summit <command> ...``.

Exit codes: 0 success, 1 a bench scenario failed, 2 configuration error,
3 data or checkpoint error, 4 numeric error during a run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__, bench, kernels
from .config import ConfigError, RunConfig
from .data import (DataError, derive_seed, generate_synthetic, load_dataset, save_dataset,
                   split_stratified)
from .embedding import EvatVariant, export_embeddings
from .experiments import run_ablation, split_digest, summarize_ablation
from .explain import RolloutKind, export_importance, importance_map, revised_rollout, rollout
from .numerics import NonFiniteError
from .pipeline import CheckpointError, SummitModel, save_trace
from .summarize import (SummarizationConfig, export_summaries_csv, missing_rate,
                        summarize_dataset)
from .training import evaluate, sweep, sweep_report, train

log = logging.getLogger("summit")

EXIT_OK, EXIT_BENCH_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


# ---------------------------------------------------------------------------
# run directory bookkeeping
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _record(run_dir: Path, command: str, cfg: RunConfig | None, outputs: dict[str, Path],
            extra: dict | None = None) -> Path:
    """Merge this command's outputs into ``run_dir/manifest.json`` (no timestamps)."""
    run_dir.mkdir(parents=True, exist_ok=True)
    mpath = run_dir / "manifest.json"
    doc = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {}
    doc["summit_version"] = __version__
    doc["kernels_backend"] = kernels.BACKEND
    entry = {"outputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in outputs.items()}}
    if cfg is not None:
        entry["config"] = cfg.resolved()
    entry.update(extra or {})
    doc.setdefault("commands", {})[command] = entry
    mpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return mpath


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    return cfg.with_overrides(max_epochs=getattr(args, "max_epochs", None),
                              variant=getattr(args, "variant", None),
                              impute=getattr(args, "impute", False),
                              run_dir=getattr(args, "run_dir", None),
                              dataset=getattr(args, "dataset", None))


def _dataset_path(cfg: RunConfig) -> Path:
    if cfg.dataset is None:
        raise ConfigError("no dataset path: set \"dataset\" in the config or pass --dataset")
    return Path(cfg.dataset)


def _load(path: Path):
    if not path.exists():
        raise DataError(f"dataset {path} does not exist")
    return load_dataset(path)


def _dump(obj: dict, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    run_dir = Path(cfg.run_dir)
    out = Path(args.out) if args.out else Path(cfg.dataset or run_dir / "dataset.jsonl")
    ds = generate_synthetic(cfg.synth)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    sms = summarize_dataset(ds, SummarizationConfig(cfg.synth.summary_window))
    rate, prev = missing_rate(sms), float(ds.labels.mean())
    print(f"wrote {len(ds)} samples to {out}")
    print(f"realized missing rate {rate:.4f} (window {cfg.synth.summary_window:g}), "
          f"prevalence {prev:.4f}")
    _record(run_dir, "synth", cfg, {"dataset": out},
            {"realized_missing_rate": rate, "realized_prevalence": prev})
    return EXIT_OK


def cmd_summarize(args) -> int:
    cfg = _config(args)
    ds = _load(_dataset_path(cfg))
    cfg.summarization.validate(ds.observation_window)
    sms = summarize_dataset(ds, cfg.summarization)
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / "summaries.csv"
    export_summaries_csv(ds, sms, out)
    rate = missing_rate(sms)
    print(f"{len(ds)} samples, {sms[0].k} windows each, missing rate {rate:.4f}; wrote {out}")
    _record(run_dir, "summarize", cfg, {"summaries": out}, {"missing_rate": rate})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _load(_dataset_path(cfg))
    tr, te = split_stratified(ds, cfg.test_fraction, derive_seed(cfg.seed, "test-split"))
    res = train(cfg.model, cfg.train, tr, cfg.summarization, cfg.loss, cfg.variant, cfg.impute)
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"checkpoint": run_dir / "checkpoint.summit", "history": run_dir / "history.csv",
               "test_set": run_dir / "test.jsonl"}
    res.model.save(outputs["checkpoint"])
    res.history.to_csv(outputs["history"])
    save_dataset(te, outputs["test_set"])
    table = res.model.embedding_table()
    if table is not None:
        outputs["embeddings"] = run_dir / "embeddings.csv"
        export_embeddings(table, outputs["embeddings"])
    h = res.history
    best = "n/a (no evaluation)" if h.best_auprc is None else f"{h.best_auprc:.4f} at epoch {h.best_epoch}"
    print(f"best validation AUPRC {best}; stopped by {h.stop_reason}")
    _record(run_dir, "train", cfg, outputs,
            {"best_val_auprc": h.best_auprc, "best_epoch": h.best_epoch,
             "stop_reason": h.stop_reason, "evaluations": len(h.records),
             "train_split": split_digest(tr), "test_split": split_digest(te)})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = SummitModel.load(args.checkpoint)
    ds = _load(Path(args.dataset))
    rep = evaluate(model, ds, threshold=args.threshold, n_boot=args.n_boot, seed=args.seed)
    text = rep.dumps() + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        for name, mv in rep.metrics.items():
            ci = "" if mv.ci is None else f" [{mv.ci.low:.4f}, {mv.ci.high:.4f}]"
            print(f"{name} {mv.point:.4f}{ci}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_explain(args) -> int:
    model = SummitModel.load(args.checkpoint)
    ds = _load(Path(args.dataset))
    model.check_compatible(ds)
    try:
        sample = ds.by_id(args.sample_id)
    except (KeyError, DataError):
        raise DataError(f"sample id {args.sample_id!r} not found in {args.dataset}") from None
    trace, sm, prob = model.trace(sample)
    mask = sm.mask.reshape(-1)
    kind = RolloutKind(args.variant)
    r = rollout(trace.weights) if kind is RolloutKind.ORIGINAL else revised_rollout(trace.weights, mask)
    imap = importance_map(r, sm.k, sm.n_columns)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = export_importance(imap, model.column_names,
                                           out_dir / f"importance_{args.sample_id}_{kind.value}")
    trace_path = out_dir / f"trace_{args.sample_id}.summit"
    save_trace(trace_path, trace, sm.mask, {"sample_id": args.sample_id, "probability": prob})
    print(f"sample {args.sample_id}: probability {prob:.4f}; wrote {csv_path}, {svg_path}, {trace_path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = _load(_dataset_path(cfg))
    rows = run_ablation(ds, cfg.ablation_seeds, cfg.summarization, cfg.model, cfg.train, cfg.loss,
                        cfg.test_fraction)
    summary = summarize_ablation(rows)
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = _dump(summary, run_dir / "ablation.json")
    for arm, med in sorted(summary["median_test_auprc"].items()):
        print(f"{arm:16s} median test AUPRC {med:.4f}")
    _record(run_dir, "ablate", cfg, {"ablation": out})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if cfg.sweep is None:
        raise ConfigError("the config has no \"sweep\" section")
    ds = _load(_dataset_path(cfg))
    tr, _ = split_stratified(ds, cfg.test_fraction, derive_seed(cfg.seed, "test-split"))
    entries = sweep(cfg.sweep, cfg.train, tr, cfg.summarization, cfg.loss, cfg.variant,
                    cfg.model.max_len)
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / "sweep.json"
    out.write_text(sweep_report(entries) + "\n", encoding="utf-8")
    done = [e for e in entries if e.skipped is None]
    if done:
        print(f"best of {len(done)}: {json.dumps(done[0].config, sort_keys=True)} "
              f"val AUPRC {done[0].val_auprc:.4f}")
    print(f"{len(entries) - len(done)} configurations skipped")
    _record(run_dir, "sweep", cfg, {"sweep": out})
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        report = bench.run_all(args.scenarios or None, args.out_dir)
    except bench.UnknownScenario as exc:
        raise ConfigError(exc.args[0]) from None
    for v in report.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.scenario} ({v.wall_time:.1f}s)")
        for r in v.predicates:
            tag = "ok" if r.passed else ("soft-miss" if r.soft else "MISS")
            print(f"    {tag:9s} {r.predicate}  measured={r.measured}")
        if v.error:
            print(f"    error: {v.error}")
    return EXIT_OK if report.passed else EXIT_BENCH_FAILED


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="summit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"summit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_, fn):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="run configuration (JSON)")
        sp.add_argument("--run-dir", help="override the configured run directory")
        sp.set_defaults(func=fn)
        return sp

    sp = with_config("synth", "generate a synthetic dataset", cmd_synth)
    sp.add_argument("--out", help="dataset path (default: config 'dataset' or RUN_DIR/dataset.jsonl)")

    sp = with_config("summarize", "export window summaries as CSV", cmd_summarize)
    sp.add_argument("--dataset")

    sp = with_config("train", "train a classifier and write a checkpoint", cmd_train)
    sp.add_argument("--dataset")
    sp.add_argument("--variant", choices=[v.value for v in EvatVariant])
    sp.add_argument("--impute", action="store_true",
                    help="fill missing cells with the training mean/mode and disable masking")
    sp.add_argument("--max-epochs", type=int)

    sp = sub.add_parser("evaluate", help="score a dataset with a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset")
    sp.add_argument("--n-boot", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out", help="write the JSON report here instead of stdout")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("explain", help="rollout importance map for one sample")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset")
    sp.add_argument("sample_id")
    sp.add_argument("--variant", choices=[k.value for k in RolloutKind], default="revised")
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(func=cmd_explain)

    sp = with_config("ablate", "all token variants plus masked vs imputed", cmd_ablate)
    sp.add_argument("--dataset")
    sp.add_argument("--max-epochs", type=int)

    sp = with_config("sweep", "grid search on the validation split", cmd_sweep)
    sp.add_argument("--dataset")
    sp.add_argument("--max-epochs", type=int)

    sp = sub.add_parser("bench", help="run canned scenarios and write verdicts")
    sp.add_argument("scenarios", nargs="*", help="scenario names (default: all)")
    sp.add_argument("--out-dir", default="bench-out")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
