import csv
import json

import numpy as np
import pytest

from protosel import harness
from protosel.datagen import generate_design


def _tiny(name="null", reps=3):
    cfg = harness.preset(name)
    cfg.replications = reps
    cfg.hr_samples, cfg.hr_burn_in = 300, 0
    cfg.calibration_trials = 30
    return cfg


def test_presets_parameterized():
    single = harness.preset("table2-single").scenarios[0].beta
    assert single[0] == 4.0 and np.count_nonzero(single) == 1
    spread = np.array(harness.preset("table2-spread").scenarios[0].beta)
    assert np.count_nonzero(spread) == 10
    assert spread[0] == pytest.approx(40 / np.sqrt(382))
    # the stated normalizer is 382 while sum (11 - j)^2 = 385, so ||beta||^2 is not exactly 16
    assert np.sum(spread**2) == pytest.approx(16 * 385 / 382)
    mod = np.array(harness.preset("table2-moderate").scenarios[0].beta)
    assert np.sum(mod**2) == pytest.approx(16.0)
    f4 = harness.preset("fig4-null")
    assert (f4.n, f4.p, len(f4.group_sizes), f4.rho) == (100, 100, 4, 0.3)
    beta = np.array(f4.scenarios[0].beta)
    assert np.count_nonzero(beta[:25]) == 0
    assert [np.count_nonzero(beta[25 * k:25 * (k + 1)]) for k in (1, 2, 3)] == [10, 2, 5]
    f5 = harness.preset("fig5")
    assert (f5.n, f5.p) == (300, 200) and len(f5.scenarios) == 3
    f1 = harness.preset("fig1")
    assert f1.ridge_lambda == 10.0 and f1.scenarios[1].theta == [1.2]
    with pytest.raises(KeyError):
        harness.preset("fig9")


def test_scale_only_changes_replications():
    cfg = harness.preset("null")
    half = cfg.scaled(0.5)
    assert half.replications == 100
    assert dict(half.to_dict(), replications=200) == cfg.to_dict()


def test_deterministic_rows():
    r1, _ = harness.run_experiment(_tiny(), workers=1)
    r2, _ = harness.run_experiment(_tiny(), workers=1)
    key = lambda rows: [(r.method, r.replication, r.p_value, r.statistic, r.seed) for r in rows]
    assert key(r1) == key(r2)
    assert len(r1) == 3 * len(_tiny().methods)


def test_parallel_matches_serial():
    cfg = _tiny("fig1", 4)
    r1, _ = harness.run_experiment(cfg, workers=1)
    r2, _ = harness.run_experiment(cfg, workers=2)
    assert [(r.p_value, r.seed) for r in r1] == [(r.p_value, r.seed) for r in r2]


def test_summary_matches_rows_and_files(tmp_path):
    cfg = _tiny("fig1", 6)
    cfg.out_dir = str(tmp_path)
    rows, summary = harness.run_experiment(cfg, workers=1)
    assert summary["schema_version"] == harness.SCHEMA_VERSION
    for s in cfg.scenarios:
        for m in cfg.methods:
            entry = summary["results"][s.label][m]
            for a in harness.ALPHAS:
                assert entry["power"][str(a)] == harness.power_from_rows(rows, s.label, m, a)
            assert len(entry["qq"]["p_value"]) == 6
    with open(tmp_path / "fig1_rows.csv") as fh:
        data = list(csv.DictReader(fh))
    assert len(data) == len(rows)
    assert float(data[0]["p_value"]) == rows[0].p_value
    assert json.loads((tmp_path / "fig1_summary.json").read_text())["experiment"] == "fig1"


def test_errors_become_flagged_rows(monkeypatch):
    def boom(*args):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(harness, "_dispatch", boom)
    rows, summary = harness.run_experiment(_tiny("fig1", 2), workers=1)
    assert all(np.isnan(r.p_value) and r.flags.startswith("error:RuntimeError") for r in rows)
    assert summary["results"]["null"]["F"]["failed"] == 2


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("PROTOSEL_THREADS", "1")
    assert harness.worker_count() == 1
    monkeypatch.setenv("PROTOSEL_THREADS", "many")
    with pytest.raises(ValueError):
        harness.worker_count()


def test_replication_seeds_distinct():
    cfg = harness.preset("fig5")
    seeds = {harness.replication_seed(cfg, s, r) for s in range(3) for r in range(200)}
    assert len(seeds) == 600


def test_bench_ordering():
    rows = harness.bench_statistics(harness.BenchConfig(ns=(100,), sparsities=(0.3,),
                                                        replications=5))
    r = rows[0]
    assert r["selected_per_group"] == 7
    assert r["ALR"] < r["ELR-SM"] and r["ALR"] < r["ELR-naive"]


def test_dataset_round_trip(tmp_path):
    d = generate_design(30, 6, [2, 4], 0.2, 4)
    y = np.random.default_rng(0).standard_normal(30)
    harness.save_dataset(tmp_path / "x.csv", tmp_path / "g.csv", d.X, y, d.groups)
    d2, y2 = harness.load_dataset(tmp_path / "x.csv", tmp_path / "g.csv")
    np.testing.assert_array_equal(y2, y)
    np.testing.assert_allclose(d2.X, d.X, rtol=0, atol=1e-15)
    assert d2.sizes == [2, 4]


def test_toy_dataset_and_separate_response(tmp_path):
    (tmp_path / "x.csv").write_text("a,b,c\n1,2,3\n2,1,5\n4,4,4\n0,3,1\n")
    (tmp_path / "y.csv").write_text("y\n1\n2\n3\n4\n")
    (tmp_path / "g.csv").write_text("column_index,group_id\n0,0\n1,1\n2,1\n")
    d, y = harness.load_dataset(tmp_path / "x.csv", tmp_path / "g.csv", tmp_path / "y.csv")
    assert d.K == 2 and d.sizes == [1, 2]
    np.testing.assert_array_equal(y, [1, 2, 3, 4])


@pytest.mark.parametrize("content,groups,match", [
    ("a,y\n1,2\n3\n", "column_index,group_id\n0,0\n", "line 3"),
    ("a,y\n1,2\nNA,3\n", "column_index,group_id\n0,0\n", "line 3: missing"),
    ("a,y\n1,2\nfoo,3\n", "column_index,group_id\n0,0\n", "non-numeric"),
    ("a,b,y\n1,2,3\n2,5,4\n", "column_index,group_id\n0,0\n1,2\n", "group id 1"),
    ("a,b,y\n1,2,3\n2,5,4\n", "column_index,group_id\n0,0\n7,0\n", "column index 7"),
])
def test_dataset_errors(tmp_path, content, groups, match):
    (tmp_path / "x.csv").write_text(content)
    (tmp_path / "g.csv").write_text(groups)
    with pytest.raises(ValueError, match=match):
        harness.load_dataset(tmp_path / "x.csv", tmp_path / "g.csv")
