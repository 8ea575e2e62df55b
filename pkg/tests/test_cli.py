import json

import numpy as np
import pytest

from protosel import cli, harness
from protosel.datagen import generate_design


def test_simulate_with_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "seed": 3, "replications": 4}))
    rc = cli.main(["--config", str(cfg), "simulate", "--preset", "fig1", "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "fig1_summary.json").read_text())
    assert summary["config"]["seed"] == 3 and summary["config"]["replications"] == 4
    assert "power@0.05" in capsys.readouterr().out


def test_config_version_required(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3}))
    with pytest.raises(SystemExit, match="version"):
        cli.main(["--config", str(cfg), "bench"])


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "bogus": 1}))
    with pytest.raises(SystemExit, match="bogus"):
        cli.main(["--config", str(cfg), "simulate", "--preset", "fig1", "--out", str(tmp_path)])


def test_test_command(tmp_path, capsys):
    d = generate_design(40, 12, [6, 6], 0.0, 1)
    y = 2 * d.X[:, 0] + np.random.default_rng(1).standard_normal(40)
    harness.save_dataset(tmp_path / "x.csv", tmp_path / "g.csv", d.X, y, d.groups)
    rc = cli.main(["test", "--data", str(tmp_path / "x.csv"), "--groups", str(tmp_path / "g.csv"),
                   "--model", "univariate", "--method", "ELR-Chi", "--lambda", "0.8"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["method"] == "ELR-Chi" and 0 <= out["p_value"] <= 1
    rc = cli.main(["test", "--data", str(tmp_path / "x.csv"), "--groups", str(tmp_path / "g.csv"),
                   "--model", "multivariate", "--method", "ALR-lasso", "--lambda", "0.8,0.8",
                   "--samples", "200", "--burn-in", "0"])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["method"] == "ALR-lasso"


def test_test_command_reports_data_errors(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("a,y\n1,2\n3\n")
    (tmp_path / "g.csv").write_text("column_index,group_id\n0,0\n")
    rc = cli.main(["test", "--data", str(tmp_path / "x.csv"), "--groups", str(tmp_path / "g.csv"),
                   "--model", "univariate", "--method", "t-mean"])
    assert rc == 2
    assert "line 3" in capsys.readouterr().err


def test_bench_command(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "ns": [100], "sparsities": [0.3]}))
    assert cli.main(["--config", str(cfg), "bench", "--replications", "3",
                     "--out", str(tmp_path / "b.json")]) == 0
    rows = json.loads((tmp_path / "b.json").read_text())["rows"]
    assert len(rows) == 1 and rows[0]["n"] == 100


def test_estimate_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "replications": 2, "sparsity": ["equal"],
                               "thetas": ["large"], "mus": [0.0], "rhos": [0.0], "folds": 5}))
    assert cli.main(["--config", str(cfg), "estimate", "--preset", "appendixA",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "appendixA_mse.csv").exists()
