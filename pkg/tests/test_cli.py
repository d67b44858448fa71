"""Config parsing, experiment artifacts, determinism and exit codes."""

import json

import numpy as np
import pytest

from tessfuse.cli import (
    ConfigError,
    ExperimentConfig,
    bundled_config,
    emit_report,
    main,
    parse_config,
    run_experiment,
)
from tessfuse.sensing import check_properness
from tessfuse.cli import build_network_quiet


def small_config(tmp_path, base="t1_scenario.json", **overrides):
    raw = json.loads(bundled_config(base).read_text())
    raw["horizon"] = 8
    raw["replications"] = 400
    raw.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


# -- parsing -----------------------------------------------------------------

def test_bundled_t1_parses_and_is_proper():
    sc, warnings = parse_config(bundled_config("t1_scenario.json"))
    assert sc.label == "T1" and sc.k == 1 and sc.n_sensors == 3
    assert not warnings
    assert check_properness(build_network_quiet(sc), 1).ok


def test_bundled_t2_parses_and_is_proper():
    sc, warnings = parse_config(bundled_config("t2_scenario.json"))
    assert sc.k == 2 and not warnings
    net = build_network_quiet(sc)
    assert check_properness(net, 2).ok
    assert not check_properness(net, 1).ok


def test_negative_variance_rejected(tmp_path):
    path = small_config(tmp_path, signal={"a1": -1.0, "a2": 7.6, "a3": -2.0,
                                          "a4": 0.0})
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "signal" in str(err.value) and "semidefinite" in str(err.value)


def test_missing_sensor_block_named(tmp_path):
    raw = json.loads(bundled_config("t1_scenario.json").read_text())
    raw["sensors"] = raw["sensors"][:2]
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "sensors[2]" in str(err.value)


def test_bad_distribution_named(tmp_path):
    path = small_config(tmp_path)
    raw = json.loads(path.read_text())
    raw["sensors"][1]["fading"] = {"kind": "gauss", "mu": 0.3}
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "sensors[1]" in str(err.value) and "gauss" in str(err.value)


def test_properness_mismatch_warns(tmp_path):
    # order-1 processing requested on an order-2-only sensor set
    raw = json.loads(bundled_config("t2_scenario.json").read_text())
    raw["properness_order"] = 1
    raw["horizon"] = 6
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    sc, warnings = parse_config(path)
    assert warnings and "order-1" in warnings[0]


# -- experiments --------------------------------------------------------------

def test_curves_ordering_and_columns(tmp_path):
    sc, _ = parse_config(small_config(tmp_path))
    arts = run_experiment(ExperimentConfig(scenario=sc, experiment="curves",
                                           taus=(1, 3)))
    art = arts[0]
    idx = {name: i for i, name in enumerate(art.header)}
    for row in art.rows:
        filt = row[idx["p_filter"]]
        assert row[idx["p_smooth_tau1"]] <= filt + 1e-10
        assert filt <= row[idx["p_pred_tau1"]] + 1e-10
        assert row[idx["p_pred_tau1"]] <= row[idx["p_pred_tau3"]] + 1e-10


def test_curves_empty_taus_filter_only(tmp_path):
    sc, _ = parse_config(small_config(tmp_path))
    arts = run_experiment(ExperimentConfig(scenario=sc, experiment="curves",
                                           taus=()))
    assert arts[0].header == ("t", "p_filter")


def test_compare_local_distributed_wins(tmp_path):
    sc, _ = parse_config(small_config(tmp_path))
    arts = run_experiment(ExperimentConfig(scenario=sc,
                                           experiment="compare_local"))
    art = arts[0]
    for row in art.rows:
        locals_ = row[1:-1]
        assert row[-1] <= min(locals_) + 1e-10


def test_mean_vs_n_artifact(tmp_path):
    sc, _ = parse_config(small_config(tmp_path, horizon=30))
    arts = run_experiment(ExperimentConfig(scenario=sc, experiment="mean_vs_N"))
    rows = arts[0].rows
    assert [r[0] for r in rows] == [10, 20, 30]


def test_validate_experiment_reports(tmp_path):
    sc, _ = parse_config(small_config(tmp_path))
    arts = run_experiment(ExperimentConfig(scenario=sc, experiment="validate",
                                           taus=(1,)))
    names = {a.name for a in arts}
    assert names == {"validate_mc.csv", "validate_equivalence.csv"}
    mc = next(a for a in arts if a.name == "validate_mc.csv")
    assert len(mc.rows) > 0


# -- emission ------------------------------------------------------------------

def test_emit_report_deterministic(tmp_path):
    sc, _ = parse_config(small_config(tmp_path))
    cfg_bytes = small_config(tmp_path).read_bytes()
    arts = run_experiment(ExperimentConfig(scenario=sc, experiment="curves",
                                           taus=(1,)))
    man1 = emit_report(arts, tmp_path / "out1", cfg_bytes, sc.seed)
    man2 = emit_report(arts, tmp_path / "out2", cfg_bytes, sc.seed)
    assert man1["files"] == man2["files"]
    assert set(man1["files"]) == {"curves.csv", "columns.json"}
    listed = json.loads((tmp_path / "out1" / "manifest.json").read_text())
    assert listed["files"] == man1["files"]
    assert (tmp_path / "out1" / "curves.csv").exists()


def test_config_hash_tracks_parameters(tmp_path):
    a = small_config(tmp_path)
    arts = []
    man1 = emit_report(arts, tmp_path / "o1", a.read_bytes(), 1)
    b = small_config(tmp_path, seed=999)
    man2 = emit_report(arts, tmp_path / "o2", b.read_bytes(), 1)
    assert man1["config_sha256"] != man2["config_sha256"]


def test_csv_floats_round_trip(tmp_path):
    sc, _ = parse_config(small_config(tmp_path))
    arts = run_experiment(ExperimentConfig(scenario=sc, experiment="curves",
                                           taus=(1,)))
    emit_report(arts, tmp_path / "out", b"x", sc.seed)
    import csv as csvmod
    with open(tmp_path / "out" / "curves.csv", newline="") as fh:
        rows = list(csvmod.reader(fh))
    header, body = rows[0], rows[1:]
    assert len({len(r) for r in rows}) == 1  # constant column count
    for text_row, art_row in zip(body, arts[0].rows):
        for text, val in zip(text_row[1:], art_row[1:]):
            assert float(text) == val  # round-trip exact


# -- CLI entry -----------------------------------------------------------------

def test_main_run_and_exit_codes(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "results"
    rc = main(["run", "--config", str(cfg), "--experiment", "curves",
               "--taus", "1", "--out", str(out)])
    assert rc == 0
    assert (out / "manifest.json").exists()

    rc = main(["validate", "--config", str(cfg)])
    assert rc == 0

    bad = tmp_path / "missing.json"
    rc = main(["run", "--config", str(bad), "--experiment", "curves"])
    assert rc == 2

    rc = main(["run", "--config", str(cfg), "--experiment", "curves",
               "--taus", "0", "--out", str(out)])
    assert rc == 2


def test_main_seed_override_changes_manifest(tmp_path):
    cfg = small_config(tmp_path)
    o1, o2, o3 = (tmp_path / n for n in ("r1", "r2", "r3"))
    assert main(["run", "--config", str(cfg), "--experiment", "validate",
                 "--taus", "1", "--out", str(o1)]) == 0
    assert main(["run", "--config", str(cfg), "--experiment", "validate",
                 "--taus", "1", "--out", str(o2)]) == 0
    assert main(["run", "--config", str(cfg), "--experiment", "validate",
                 "--taus", "1", "--seed", "42", "--out", str(o3)]) == 0
    m1 = json.loads((o1 / "manifest.json").read_text())
    m2 = json.loads((o2 / "manifest.json").read_text())
    m3 = json.loads((o3 / "manifest.json").read_text())
    assert m1["files"] == m2["files"]  # byte-identical rerun
    assert m1["files"] != m3["files"]  # different seed, different numbers


def test_env_var_out_dir(tmp_path, monkeypatch):
    cfg = small_config(tmp_path)
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("TESSFUSE_OUT", str(tmp_path / "envout"))
    assert main(["run", "--config", str(cfg), "--experiment", "curves",
                 "--taus", ""]) == 0
    assert (tmp_path / "envout" / "curves.csv").exists()
