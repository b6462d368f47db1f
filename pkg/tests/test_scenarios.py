import json

import numpy as np
import pytest

from gllab import scenarios as S


def test_registry_lists_four_scenarios():
    assert S.list_scenarios() == ["exact-product", "disk-vortex", "ellipsoid-minmax", "half-ball-reflection"]
    with pytest.raises(S.UnknownScenario):
        S.get("no-such")


def test_resolve_config_rejects_unknown_keys():
    cfg = S.resolve_config("half-ball-reflection", {"eps": 0.3})
    assert cfg["eps"] == 0.3 and cfg["res"] == 24
    with pytest.raises(ValueError):
        S.resolve_config("half-ball-reflection", {"epsilon": 0.3})


def test_config_hash_is_order_independent():
    a = S.config_hash({"a": 1, "b": [0.1, 2]})
    assert a == S.config_hash({"b": [0.1, 2], "a": 1})
    assert a != S.config_hash({"a": 1, "b": [0.1, 3]})
    assert len(a) == 64


def test_to_jsonable_is_strict():
    out = S.dump_json({"x": np.float64("nan"), "y": np.arange(2), "z": (np.bool_(True),), "w": np.inf})
    d = json.loads(out)
    assert d == {"w": "inf", "x": "nan", "y": [0, 1], "z": [True]}


def test_output_root_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("GLLAB_OUT", str(tmp_path / "env"))
    assert S.output_root() == tmp_path / "env"
    assert S.output_root(tmp_path / "cli") == tmp_path / "cli"
    monkeypatch.delenv("GLLAB_OUT")
    assert str(S.output_root()) == "gllab-runs"


def test_check_line_format():
    c = S.Check("residual", "solve", 1e-9, 1e-6, "<=", True)
    assert c.line() == "[PASS] solve/residual: 1e-09 <= 1e-06"
    assert S.Check("x", "s", 1, 2, ">=", False, asserted=False).line().startswith("[INFO]")


@pytest.fixture
def failing_scenario():
    def body(ctx):
        with ctx.stage("ok"):
            ctx.check("one", 1, "==", 1)
        with ctx.stage("boom"):
            raise FloatingPointError("diverged")

    S.register(S.Scenario("test-boom", "", {"a": 1}, ("ok", "boom"), body))
    yield "test-boom"
    del S.REGISTRY["test-boom"]


def test_stage_failure_is_reported_and_raised(tmp_path, failing_scenario):
    with pytest.raises(S.ScenarioError) as ei:
        S.run(failing_scenario, out=tmp_path)
    assert ei.value.stage == "boom" and isinstance(ei.value.cause, FloatingPointError)
    (rdir,) = tmp_path.iterdir()
    rep = json.loads((rdir / "report.json").read_text())
    assert rep["passed"] is False
    assert rep["error"] == {"stage": "boom", "type": "FloatingPointError", "message": "diverged"}
    assert rep["n_asserted"] == 1 and rep["n_failed"] == 0


def test_half_ball_run_layout_and_determinism(tmp_path):
    a = S.run("half-ball-reflection", out=tmp_path / "a", threads=1)
    b = S.run("half-ball-reflection", out=tmp_path / "b", threads=4)
    assert a.passed and b.passed
    assert a.run_dir.name == b.run_dir.name
    assert a.run_dir.name.startswith("half-ball-reflection-")
    for name in ("config.json", "report.json", "metadata.json"):
        assert (a.run_dir / name).is_file()
    assert (a.run_dir / "report.json").read_bytes() == (b.run_dir / "report.json").read_bytes()
    meta = json.loads((b.run_dir / "metadata.json").read_text())
    assert meta["threads"] == 4
    assert [(c.stage, c.name) for c in a.checks] == [
        ("reflect", "residual_ratio"), ("reflect", "neumann_flagged"), ("negative-control", "control_flagged")]
