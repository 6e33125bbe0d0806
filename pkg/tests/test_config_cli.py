import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from asyncdfl.cli import main
from asyncdfl.config import (ExperimentSuite, SimConfig, TaskConfig, dump_config, load_config, set_path,
                             sim_from_dict, suite_from_dict)
from asyncdfl.errors import ConfigError, SchemaError
from asyncdfl.experiments import emit_plotdata, point_label, run_suite
from asyncdfl.protocol import StampedParameter
from asyncdfl.trace import (DumpWriter, TraceRecord, read_dump, read_trace_csv, records_to_csv,
                            records_to_csv_text, same_records)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TINY = {"node_count": 3, "iterations": 30, "eta": 0.05,
        "task": {"dim": 2, "total_samples": 30, "curvature": 0.6, "common_minimizer": True}}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# --------------------------------------------------------------------------
# config loading

def test_empty_wireless_section_gets_table_defaults(tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", {"wireless": {}}))
    w = cfg.wireless
    assert (w.cell_radius_m, w.path_loss_exponent, w.bandwidth_hz) == (500.0, 4.0, 1e7)
    assert (w.tx_power_dbm, w.noise_dbm_per_hz, w.quant_bits) == (30.0, -174.0, 16)


def test_zero_db_threshold_is_unit_linear(tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", {"wireless": {"gamma_db": 0}}))
    assert cfg.gamma_db == 0 and cfg.wireless.gamma_linear == 1.0


def test_single_node_decentralised_run_rejected(tmp_path):
    with pytest.raises(ConfigError, match="node_count"):
        load_config(write_yaml(tmp_path / "c.yaml", {"node_count": 1}))
    assert load_config(write_yaml(tmp_path / "f.yaml", {"node_count": 1, "algorithm": "FedAvg"}))


def test_unknown_keys_listed_with_path(tmp_path):
    with pytest.raises(ConfigError, match=r"task: unknown keys \['colour', 'size'\]"):
        load_config(write_yaml(tmp_path / "c.yaml", {"task": {"colour": 1, "size": 2}}))


@pytest.mark.parametrize("data,fragment", [
    ({"eta": -1.0}, "eta"),
    ({"iterations": 2.5}, "iterations"),
    ({"observe_gamma": "yes"}, "observe_gamma"),
    ({"wireless": {"path_loss_exponent": 2}}, "wireless.path_loss_exponent"),
    ({"task": {"loss_kind": "hinge"}}, "task.loss_kind"),
    ({"channel": "carrier-pigeon"}, "channel"),
    ({"eta_rule": "guess"}, "eta_rule"),
])
def test_invalid_values_name_the_field(data, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        sim_from_dict(data)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.yaml")


valid_configs = st.builds(
    SimConfig,
    name=st.text(alphabet="abcxyz_-", min_size=1, max_size=8),
    algorithm=st.sampled_from(["AsyncDFL", "FedAvg", "UniformBW"]),
    node_count=st.integers(2, 20),
    iterations=st.integers(1, 10_000),
    seed=st.integers(0, 2 ** 31),
    eta=st.one_of(st.none(), st.floats(1e-6, 10)),
    gamma_max=st.integers(0, 30),
    observe_gamma=st.booleans(),
    channel=st.sampled_from(["ideal", "fixed", "random", "wireless"]),
    task=st.builds(TaskConfig, dim=st.integers(1, 10), total_samples=st.integers(20, 1000),
                   curvature=st.floats(0.01, 5), loss_kind=st.sampled_from(["quadratic", "logistic"])),
)


@settings(max_examples=100, deadline=None)
@given(cfg=valid_configs)
def test_config_round_trip(tmp_path_factory, cfg):
    path = tmp_path_factory.mktemp("rt") / "c.yaml"
    dump_config(cfg, path)
    assert load_config(path) == cfg


def test_suite_round_trip_and_points(tmp_path):
    suite = suite_from_dict({"name": "s", "replications": 2, "base": TINY,
                             "sweeps": {"node_count": [3, 4], "wireless.gamma_db": [-15, 15]}})
    dump_config(suite, tmp_path / "s.yaml")
    assert load_config(tmp_path / "s.yaml") == suite
    points = suite.points()
    assert len(points) == 4
    for assignment, runs in points:
        assert [r.seed for r in runs] == [0, 1]
        assert runs[0].node_count == assignment["node_count"]
        assert runs[0].wireless.gamma_db == assignment["wireless.gamma_db"]
        assert dataclasses.replace(runs[1], seed=0) == runs[0]


def test_suite_validation():
    with pytest.raises(ConfigError):
        suite_from_dict({"base": TINY, "sweeps": {"node_count": []}})
    with pytest.raises(ConfigError):
        suite_from_dict({"base": TINY, "sweeps": {"node_count": [1]}})
    with pytest.raises(ConfigError):
        suite_from_dict({"base": TINY, "replications": 0})


def test_set_path():
    cfg = set_path(SimConfig(), "task.dim", 7)
    assert cfg.task.dim == 7
    with pytest.raises(ConfigError):
        set_path(cfg, "task.nope", 1)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    expected = ExperimentSuite if path.name.startswith("suite_") else SimConfig
    assert isinstance(cfg, expected)


def test_point_label():
    assert point_label({}) == "base"
    assert point_label({"wireless.gamma_db": -15, "node_count": 5}) == "gamma_db=-15_node_count=5"


# --------------------------------------------------------------------------
# trace files

def rec(t, loss=1.0, algorithm="AsyncDFL"):
    return TraceRecord(t, t + 1, algorithm, loss, 2.0, 0.5, 0.1, 0.01, math.nan, 3, 1e6, 5, 0.02)


def test_trace_csv_round_trip(tmp_path):
    recs = [rec(t, loss=1 / (t + 1)) for t in range(4)]
    records_to_csv(recs, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0].split(",")[:12] == [
        "slot", "iteration", "algorithm", "global_loss", "bound_U", "u_eta", "grad_norm_sq",
        "consensus_max", "accuracy", "gamma_realized", "bandwidth_min", "scheduled_count"]
    assert same_records(read_trace_csv(tmp_path / "t.csv"), recs)
    assert records_to_csv_text(recs) == (tmp_path / "t.csv").read_text()


def test_trace_csv_missing_column(tmp_path):
    (tmp_path / "bad.csv").write_text("slot,iteration\n0,1\n")
    with pytest.raises(SchemaError):
        read_trace_csv(tmp_path / "bad.csv")


def test_dump_round_trip_and_bad_magic(tmp_path):
    with DumpWriter(tmp_path / "d.bin", 3, 2) as w:
        w.frame(4, 1, [StampedParameter(0, 3, np.array([1.0, 2.0])), StampedParameter(2, 4, np.zeros(2))])
    nodes, dim, frames = read_dump(tmp_path / "d.bin")
    assert (nodes, dim, len(frames)) == (3, 2, 1)
    assert frames[0].slot == 4 and frames[0].receiver == 1
    assert frames[0].messages[0] == StampedParameter(0, 3, np.array([1.0, 2.0]))
    (tmp_path / "x.bin").write_bytes(b"NOTADUMP" + bytes(12))
    with pytest.raises(SchemaError):
        read_dump(tmp_path / "x.bin")


# --------------------------------------------------------------------------
# plot data

def test_single_trace_gives_one_series_per_metric(tmp_path):
    records_to_csv([rec(t, 1.0 / (t + 1)) for t in range(3)], tmp_path / "run.csv")
    rows = emit_plotdata([tmp_path / "run.csv"], {"x": "iteration", "metrics": ["global_loss", "bound_U"]},
                         tmp_path / "plot.csv")
    assert sorted({r["series"] for r in rows}) == ["run:bound_U", "run:global_loss"]
    loss = [r for r in rows if r["series"] == "run:global_loss"]
    assert [r["x"] for r in loss] == [1, 2, 3]
    assert [r["y"] for r in loss] == [1.0, 0.5, 1 / 3]
    assert all(r["y"] == r["y_min"] == r["y_max"] and r["n"] == 1 for r in loss)
    with open(tmp_path / "plot.csv") as fh:
        assert next(csv.reader(fh)) == ["series", "x", "y", "y_min", "y_max", "n"]


def test_replications_give_mean_and_envelope(tmp_path):
    for r, scale in enumerate((1.0, 2.0, 6.0)):
        records_to_csv([rec(t, scale * (t + 1)) for t in range(2)], tmp_path / f"pt_rep{r}.csv")
    rows = emit_plotdata(sorted(tmp_path.glob("pt_rep*.csv")), {"metrics": ["global_loss"]})
    assert [(r["x"], r["y"], r["y_min"], r["y_max"], r["n"]) for r in rows] == [
        (1, 3.0, 1.0, 6.0, 3), (2, 6.0, 2.0, 12.0, 3)]


def test_plotdata_errors(tmp_path):
    with pytest.raises(SchemaError):
        emit_plotdata([], {"metrics": ["global_loss"]}, tmp_path / "never.csv")
    assert not (tmp_path / "never.csv").exists()
    records_to_csv([rec(0)], tmp_path / "a.csv")
    with pytest.raises(SchemaError):
        emit_plotdata([tmp_path / "a.csv"], {"metrics": ["loss"]})
    (tmp_path / "b.csv").write_text("slot,iteration\n0,1\n")
    with pytest.raises(SchemaError):
        emit_plotdata([tmp_path / "b.csv"], {"metrics": ["global_loss"]})


# --------------------------------------------------------------------------
# suites

def test_run_suite_artifacts_and_determinism(tmp_path):
    suite = suite_from_dict({"name": "tiny", "replications": 2, "base": TINY,
                             "sweeps": {"gamma_max": [1, 5]}})
    a = run_suite(suite, tmp_path / "a")
    b = run_suite(suite, tmp_path / "b")
    assert a.exit_code == 0 and not a.failures
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["gamma_max=1_rep0.csv", "gamma_max=1_rep1.csv", "gamma_max=5_rep0.csv",
                     "gamma_max=5_rep1.csv", "suite.yaml", "summary.json"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    point = summary["points"][0]
    assert point["completed"] == 2
    assert point["mean_final_loss"] == pytest.approx(np.mean([r["final_loss"] for r in point["runs"]]))


def test_suite_records_failures_and_continues(tmp_path):
    suite = suite_from_dict({"base": {**TINY, "node_count": 5, "channel": "wireless", "gamma_max": 1,
                                      "wireless": {"payload_params": 100000}},
                             "sweeps": {"channel": ["wireless", "fixed"]}})
    res = run_suite(suite, tmp_path)
    assert res.exit_code == 1
    assert [f["run"] for f in res.failures] == ["channel=wireless_rep0"]
    assert "StalenessViolation" in res.failures[0]["error"]
    assert (tmp_path / "channel=fixed_rep0.csv").exists()


# --------------------------------------------------------------------------
# command line

def test_cli_run_and_replay(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {**TINY, "name": "demo"})
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o"), "--seed", "3"]) == 0
    out = tmp_path / "o"
    assert {p.name for p in out.iterdir()} == {"demo.csv", "demo.json", "demo.bin"}
    assert json.loads((out / "demo.json").read_text())["seed"] == 3
    first = (out / "demo.csv").read_text()
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "r"), "--seed", "3",
                 "--replay", str(out / "demo.bin")]) == 0
    assert (tmp_path / "r" / "demo.csv").read_text() == first
    assert "demo: 30 iterations" in capsys.readouterr().out


def test_cli_verify(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {**TINY, "iterations": 300, "eta": 0.02, "node_count": 5,
                                           "task": {**TINY["task"], "total_samples": 100}})
    assert main(["verify", str(cfg), "--out-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "violations=0" in text and text.strip().endswith("OK")
    assert (tmp_path / "run.verify.json").exists()


def test_cli_verify_staleness_modes(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {**TINY, "node_count": 5, "channel": "wireless", "gamma_max": 1,
                                           "wireless": {"payload_params": 100000}})
    assert main(["verify", str(cfg)]) == 2
    assert "staleness bound" in capsys.readouterr().err
    # observing records the violations without failing on them
    assert main(["verify", str(cfg), "--observe-gamma"]) == 0
    assert "staleness violations: 0" not in capsys.readouterr().out


def test_cli_verify_reports_bound_violations(tmp_path, capsys):
    # shallow curvature: u(eta) is positive yet the loss sits above the bound
    cfg = write_yaml(tmp_path / "c.yaml", {**TINY, "node_count": 5, "iterations": 100, "eta": 0.02,
                                           "task": {**TINY["task"], "total_samples": 100, "curvature": 0.1}})
    assert main(["verify", str(cfg)]) == 1
    captured = capsys.readouterr()
    assert "FAILED" in captured.out and "bound violations" in captured.err


def test_cli_strict_eta(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {**TINY, "eta": 50.0})
    assert main(["run", str(cfg), "--strict-eta", "--out-dir", str(tmp_path)]) == 2
    assert "outside the admissible window" in capsys.readouterr().err


def test_cli_suite_and_plotdata(tmp_path, capsys):
    suite = write_yaml(tmp_path / "s.yaml", {"base": TINY, "replications": 2, "sweeps": {"node_count": [3, 4]}})
    assert main(["suite", str(suite), "--out-dir", str(tmp_path / "o")]) == 0
    layout = write_yaml(tmp_path / "p.yaml", {"x": "iteration", "metrics": ["global_loss"]})
    assert main(["plotdata", str(tmp_path / "o" / "*.csv"), str(layout), "--out", str(tmp_path / "p.csv")]) == 0
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["series"] for r in rows} == {"node_count=3:global_loss", "node_count=4:global_loss"}
    assert {r["n"] for r in rows} == {"2"} and len(rows) == 60


def test_cli_wrong_kind_of_config(tmp_path, capsys):
    suite = write_yaml(tmp_path / "s.yaml", {"base": TINY, "sweeps": {"node_count": [3]}})
    assert main(["run", str(suite)]) == 2
    single = write_yaml(tmp_path / "c.yaml", TINY)
    assert main(["suite", str(single)]) == 2
    assert main(["plotdata", str(tmp_path / "none*.csv"), str(single)]) == 2
    assert "error:" in capsys.readouterr().err
