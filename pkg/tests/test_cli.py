import json
import subprocess
import sys

import pytest

from gllab.cli import main


@pytest.fixture(scope="module")
def disk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert main(["solve", "--chart", "disk", "--eps", "0.1", "--res", "128", "--out", str(out)]) == 0
    (run,) = out.iterdir()
    return run


def test_solve_writes_run_directory(disk_run):
    assert (disk_run / "fields" / "u_eps0.1.bin").is_file()
    assert (disk_run / "fields" / "u_eps0.1.json").is_file()
    rep = json.loads((disk_run / "report.json").read_text())
    assert rep["passed"] and rep["stages"]["solve-eps0.1"]["converged"]


def test_verify_passes_on_converged_vortex(disk_run, capsys):
    assert main(["verify", str(disk_run)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(not line.startswith("[FAIL]") for line in lines)
    rep = json.loads((disk_run / "report.json").read_text())
    assert rep["verify"]["passed"]


def test_verify_rejects_inadmissible_vector_field(disk_run, tmp_path, capsys):
    cfg = tmp_path / "v.json"
    cfg.write_text(json.dumps({"vector_fields": ["rotation", "outward"]}))
    assert main(["verify", str(disk_run), "stationarity", "--config", str(cfg)]) == 2
    assert "rejected" in capsys.readouterr().err


def test_verify_unknown_check_is_usage_error(disk_run):
    assert main(["verify", str(disk_run), "no-such-check"]) == 2


def test_nonconverged_solve_and_failing_verify(tmp_path):
    out = tmp_path / "o"
    rc = main(["solve", "--init", "noise", "--eps", "0.1", "--res", "128", "--max-steps", "0", "--out", str(out)])
    assert rc == 3
    (run,) = out.iterdir()
    assert main(["verify", str(run), "first-variation"]) == 1


def test_underresolved_is_refused(tmp_path):
    assert main(["solve", "--eps", "0.01", "--res", "32", "--out", str(tmp_path)]) == 2
    # even with the override, eps < 2h is refused
    assert main(["solve", "--eps", "0.01", "--res", "32", "--allow-underresolved", "--out", str(tmp_path)]) == 2
    assert not any(tmp_path.iterdir())


def test_exact_product_solve_needs_no_steps(tmp_path):
    assert main(["solve", "--chart", "product", "--init", "exact", "--k", "2", "--res", "64",
                 "--tol", "1e-6", "--out", str(tmp_path)]) == 0
    (run,) = tmp_path.iterdir()
    rep = json.loads((run / "report.json").read_text())
    (stage,) = rep["stages"].values()
    assert stage["steps"] == 0


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eps": 0.01, "res": [128], "max-steps": 0, "init": "noise"}))
    # file alone is under-resolved; the flag wins over the file
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 2
    assert main(["solve", "--config", str(cfg), "--eps", "0.1", "--out", str(tmp_path / "b")]) == 3
    (run,) = (tmp_path / "b").iterdir()
    assert json.loads((run / "config.json").read_text())["eps"] == 0.1


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epsilon": 0.1}))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GLLAB_OUT", str(tmp_path / "env"))
    assert main(["solve", "--chart", "product", "--init", "exact", "--k", "2", "--res", "64", "--tol", "1e-6"]) == 0
    assert len(list((tmp_path / "env").iterdir())) == 1


def test_scenario_list_and_unknown(capsys):
    assert main(["scenario", "list"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["exact-product", "disk-vortex", "ellipsoid-minmax", "half-ball-reflection"]
    assert main(["scenario", "run", "no-such"]) == 2
    assert main(["scenario", "run"]) == 2
    assert main(["scenario", "run", "half-ball-reflection", "--l", "2.0"]) == 2


def test_argparse_errors_map_to_usage():
    assert main(["solve", "--init", "bogus"]) == 2
    assert main([]) == 2


def test_console_script_runs(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gllab.cli", "scenario", "run", "half-ball-reflection",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "[PASS] reflect/residual_ratio" in r.stdout
