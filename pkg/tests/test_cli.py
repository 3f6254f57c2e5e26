import csv
import json

import pytest

from janglab import cli, pipeline
from janglab.errors import ConvergenceError

HYP4 = {"model": {"n": 4}, "verify": {"mesh_doubling": False}}


def _write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    if name.endswith(".json"):
        p.write_text(json.dumps(cfg))
    else:
        import yaml

        p.write_text(yaml.safe_dump(cfg))
    return p


def _run(tmp_path, stage, cfg, *extra, name="run.json", out="out"):
    path = _write(tmp_path, cfg, name)
    code = cli.main([stage, "--config", str(path), "--out", str(tmp_path / out), *extra])
    rep = tmp_path / out / "report.json"
    return code, json.loads(rep.read_text()) if rep.exists() else None


def test_hyperbolic_pipeline_report(tmp_path, capsys):
    code, rep = _run(tmp_path, "pipeline", HYP4)
    assert code == 0
    assert rep["schema_version"] == cli.SCHEMA_VERSION and rep["status"] == "ok"
    res = rep["results"]["pipeline"]
    assert res["mass"]["E"] == 0.0
    assert abs(res["conformal"]["E_ADM_graph"]) < 1e-8
    assert abs(res["conformal"]["A"]) < 1e-8
    assert all(res["verify"]["pass"].values())
    assert "pipeline ok" in capsys.readouterr().out


def test_mass_stage_n4(tmp_path):
    code, rep = _run(tmp_path, "mass", {"model": {"n": 4, "m_bar": 1.0, "p_bar": 0.0}})
    assert code == 0
    m = rep["results"]["mass"]
    assert m["E"] == pytest.approx(1.0, abs=1e-14)
    assert m["P"] == pytest.approx([0.0] * 4, abs=1e-15)
    with open(tmp_path / "out" / "mass_flux.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["R", "E_R"] and len(rows) > 3


def test_dimension_out_of_range(tmp_path, capsys):
    code, rep = _run(tmp_path, "mass", {"model": {"n": 3}})
    assert code == 2 and rep is None
    assert "4-7" in capsys.readouterr().err


def test_unknown_stage_is_a_usage_error(tmp_path):
    path = _write(tmp_path, HYP4)
    with pytest.raises(SystemExit) as exc:
        cli.main(["ringdown", "--config", str(path)])
    assert exc.value.code == 2


@pytest.mark.parametrize("cfg", [
    {"model": {"n": 4}, "colour": 1},
    {"model": {"n": 4, "mass": 1}},
    {"model": {"n": 4}, "mesh": {"N": 4}},
    {"model": {"n": 4}, "mesh": {"R_list": [40, 20]}},
    {"model": {"n": 4}, "tau": {"start": "big"}},
    {"model": {"n": 4}, "stages": ["jang", "fly"]},
    {"model": {"n": 4.0}},
    {"model": {}},
    {"model": {"n": 4, "m_bar": {"theta": [0, 1], "values": [1, 1]}}},
])
def test_invalid_configs_exit_2(tmp_path, cfg):
    code, _ = _run(tmp_path, "mass", cfg)
    assert code == 2


def test_unreadable_config(tmp_path):
    assert cli.main(["mass", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["mass", "--config", str(bad)]) == 2


def test_solver_failure_exits_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise ConvergenceError("Newton stalled", {"iterations": 40})

    monkeypatch.setattr(pipeline, "continuation_solve", boom)
    code, rep = _run(tmp_path, "jang", HYP4)
    assert code == 3
    assert rep["status"] == "solver-error" and rep["error"].startswith("[jang]")
    assert "Newton stalled" in capsys.readouterr().err


def test_fixed_clock_is_byte_identical(tmp_path):
    _run(tmp_path, "jang", HYP4, "--fixed-clock", out="a")
    _run(tmp_path, "jang", HYP4, "--fixed-clock", out="b")
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    assert a == b
    assert json.loads(a)["generated_at"] == cli.FIXED_CLOCK
    assert (tmp_path / "a" / "jang.csv").read_bytes() == (tmp_path / "b" / "jang.csv").read_bytes()


def test_timings_without_fixed_clock(tmp_path):
    _, rep = _run(tmp_path, "alpha", HYP4)
    assert "timings" in rep and "alpha" in rep["timings"]


def test_stage_isolation(tmp_path):
    _, whole = _run(tmp_path, "pipeline", HYP4, "--fixed-clock", out="p")
    for stage in ("alpha", "mass", "jang", "conformal"):
        _, alone = _run(tmp_path, stage, HYP4, "--fixed-clock", out=stage)
        assert alone["results"][stage] == whole["results"]["pipeline"][stage]


def test_yaml_config_and_stage_list(tmp_path):
    cfg = dict(HYP4, stages=["alpha", "mass"])
    code, rep = _run(tmp_path, "pipeline", cfg, name="run.yaml")
    assert code == 0
    assert set(rep["results"]) == {"alpha", "mass"}


def test_zonal_table_config(tmp_path):
    cfg = {"model": {"n": 5, "m_bar": {"theta": [0.0, 1.5707963267948966, 3.141592653589793],
                                        "values": [1.0, 1.0, 1.0]}}}
    code, rep = _run(tmp_path, "mass", cfg)
    assert code == 0
    assert rep["results"]["mass"]["E"] == pytest.approx(1.5, abs=1e-12)


def test_csv_series_written(tmp_path):
    _, rep = _run(tmp_path, "conformal", HYP4)
    assert set(rep["series"]) == {"jang.csv", "conformal.csv"}
    with open(tmp_path / "out" / "conformal.csv") as fh:
        head = next(csv.reader(fh))
    assert head == ["r", "u", "R_hat", "R_conformal"]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("JANGLAB_THREADS", "3")
    assert cli._threads() == 3
    monkeypatch.setenv("JANGLAB_THREADS", "0")
    assert cli._threads() == 1
    monkeypatch.setenv("JANGLAB_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli._threads()


def test_bad_threads_env_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("JANGLAB_THREADS", "x")
    code, _ = _run(tmp_path, "alpha", HYP4)
    assert code == 2


def test_config_output_directory(tmp_path, monkeypatch):
    cfg = dict(HYP4, output=str(tmp_path / "fromcfg"))
    path = _write(tmp_path, cfg)
    assert cli.main(["alpha", "--config", str(path)]) == 0
    assert (tmp_path / "fromcfg" / "report.json").exists()
