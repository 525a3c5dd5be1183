import json

import numpy as np
import pytest
import yaml

from smbounds import cli
from smbounds.cli import RunConfig, export_sample, ingest, main, parse_theta
from smbounds.errors import BadFlag, ConfigError, MissingColumn, MissingOutcome, ParseError
from smbounds.simlab import draw_sample

from synth import COLUMNS, COVARIATE, write_dataset


def _cols():
    return ["--y-column", COLUMNS["y"], "--s-column", COLUMNS["s"], "--d-column", COLUMNS["d"]]


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "program.csv", n=1500, seed=3)


def test_export_ingest_roundtrip(tmp_path, ex1):
    smp = draw_sample(ex1, 300, seed=1)
    for delim, name in ((",", "a.csv"), ("\t", "a.tsv")):
        export_sample(smp, tmp_path / name, delim)
        back = ingest(tmp_path / name)
        assert np.array_equal(back.s, smp.s) and np.array_equal(back.d, smp.d)
        assert np.array_equal(back.y, smp.y, equal_nan=True)  # repr floats are exact


@pytest.mark.parametrize("body, err", [
    ("y,s,d\n1.0,1,1\n2.0,1,0\n,1,1\n", MissingOutcome),
    ("y,s,d\n1.0,1,1\n2.0,1,0\nabc,1,1\n", ParseError),
    ("y,s,d\n1.0,1,1\n2.0,2,0\n", BadFlag),
    ("y,s\n1.0,1\n", MissingColumn),
    ("y,s,d\n1.0,1,1\n2.0,1\n", ParseError),
])
def test_ingest_errors(tmp_path, body, err):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(err):
        ingest(p)


def test_missing_outcome_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y,s,d\n1.0,1,1\n2.0,1,0\n,1,1\n")
    with pytest.raises(MissingOutcome) as ei:
        ingest(p)
    assert ei.value.line == 4


def test_parse_theta():
    assert parse_theta("1, 0.9,0.8") == [1.0, 0.9, 0.8]
    with pytest.raises(ConfigError):
        parse_theta("a,b")


@pytest.mark.parametrize("kw", [{"theta_L": [1.5]}, {"level": 1.2}, {"bootstrap": 10}, {"case": "x"}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(input="x", **kw).validate()


def test_run_report(dataset, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(["run", str(dataset), *_cols(), "--theta-l", "0.95", "-o", str(out), "--draws", "10000"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == "1.0"
    res = doc["results"][0]
    assert res["lower"] <= res["upper"]
    assert res["ci"]["lo"] <= res["lower"]
    assert doc["input"]["n"] == 1500


def test_run_from_yaml_config(dataset, tmp_path, capsys):
    cfg = {"input": str(dataset), "columns": COLUMNS, "theta_L": [1.0, 0.9], "symmetry": True,
           "fold_check": True, "format": "yaml", "draws": 10000}
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(cfg))
    plots = tmp_path / "plots"
    assert main(["run", "--config", str(p), "--plot-dir", str(plots)]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert len(doc["sensitivity"]["rows"]) == 2
    assert "fold_check" in doc
    assert sorted(f.name for f in plots.iterdir()) == ["fold.csv", "sensitivity.csv"]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SMBOUNDS_THREADS", "3")
    assert cli.default_threads() == 3
    monkeypatch.setenv("SMBOUNDS_THREADS", "x")
    with pytest.raises(ConfigError):
        cli.default_threads()


@pytest.mark.parametrize("argv, code", [
    (["run", "/nonexistent/file.csv"], 3),
    (["run", "{data}", "--theta-l", "1.5"], 2),
    (["run", "{data}", "--y-column", "nope"], 2),
    (["run"], 2),
])
def test_exit_codes(argv, code, dataset, capsys):
    argv = [a.replace("{data}", str(dataset)) for a in argv]
    assert main(argv) == code
    assert "error" in capsys.readouterr().err


def test_mte_demo_command(tmp_path, capsys):
    assert main(["mte-demo", "--plot-dir", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["mte_demo"]["sets"]) == {"monotone", "stochastic(0.8)", "frechet_only"}
    assert (tmp_path / "mte.csv").exists()


def test_simulate_command(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"n": 500, "reps": 3, "seed": 1, "theta_L": 0.95}))
    assert main(["simulate", str(plan)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["coverage"]["reps"] == 3


def test_export_command(tmp_path):
    out = tmp_path / "x.tsv"
    assert main(["export-sample", str(out), "--n", "200", "--delimiter", "tab"]) == 0
    assert ingest(out).n == 200
