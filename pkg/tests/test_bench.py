import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest

from summit import bench
from summit.cli import main


def _registry(extra_runner=None):
    reg = {k: v for k, v in bench.default_scenarios().items()
           if k in ("masking-exactness", "rollout-divergence")}
    if extra_runner is not None:
        base = reg["masking-exactness"]
        reg["always-fails"] = replace(base, name="always-fails", metrics=("x",),
                                      predicates=(bench.Predicate("x", ">", 1.0),),
                                      runner=extra_runner)
    return reg


def test_unknown_scenario_lists_available():
    with pytest.raises(bench.UnknownScenario) as exc:
        bench.run_scenario("no-such-thing")
    msg = str(exc.value)
    for name in bench.default_scenarios():
        assert name in msg


def test_registered_scenarios_are_consistent():
    reg = bench.default_scenarios()
    assert {"sanity-learnable", "canned-learnable", "masking-exactness", "rollout-divergence",
            "paired-claims"} <= set(reg)
    for sc in reg.values():
        assert all(p.metric in sc.metrics for p in sc.predicates)


def test_predicate_must_reference_computed_metric():
    base = bench.default_scenarios()["masking-exactness"]
    with pytest.raises(ValueError, match="does not compute"):
        replace(base, predicates=(bench.Predicate("auroc", ">", 0.5),))
    with pytest.raises(ValueError):
        bench.Predicate("x", "~", 1.0)


@pytest.mark.parametrize("name", ["masking-exactness", "rollout-divergence"])
def test_exactness_scenarios_pass(name):
    v = bench.run_scenario(name)
    assert v.passed, v
    assert v.wall_time > 0
    if name == "masking-exactness":
        assert v.measured["max_probability_change"] == 0.0


def test_scenario_verdicts_are_seed_deterministic():
    a = bench.run_scenario("rollout-divergence").measured
    b = bench.run_scenario("rollout-divergence").measured
    assert a == b


def test_sanity_learnable():
    v = bench.run_scenario("sanity-learnable")
    assert [r.predicate for r in v.predicates] == ["auprc_over_prevalence > 2.0"]
    assert v.passed, v.measured


def test_injected_failure_and_reports(tmp_path):
    reg = _registry(lambda sc: {"x": 0.5})
    report = bench.run_all(out_dir=tmp_path, registry=reg)
    assert not report.passed and report.failed == ["always-fails"]
    doc = json.loads((tmp_path / "bench.json").read_text())
    assert doc["failed"] == ["always-fails"]
    assert all(s["wall_time"] >= 0 for s in doc["scenarios"])
    suite = ET.parse(tmp_path / "bench.junit.xml").getroot()
    assert suite.get("tests") == "3" and suite.get("failures") == "1"
    failing = [c for c in suite.iter("testcase") if c.find("failure") is not None]
    assert [c.get("name") for c in failing] == ["always-fails"]


def test_crashing_runner_is_a_failed_verdict():
    def boom(sc):
        raise RuntimeError("kaput")
    v = bench.run_scenario("always-fails", _registry(boom))
    assert not v.passed and "kaput" in v.error


def test_cli_exit_code_on_failure(monkeypatch, tmp_path, capsys):
    reg = _registry(lambda sc: {"x": 0.0})
    monkeypatch.setattr(bench, "default_scenarios", lambda: reg)
    assert main(["bench", "--out-dir", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "FAIL always-fails" in out and "PASS masking-exactness" in out
    assert main(["bench", "masking-exactness", "--out-dir", str(tmp_path)]) == 0
