import csv
import io
import json

import numpy as np
import pytest

from separable.cli import dispatch, emit_curves, read_curves
from separable.data import ALL_ARMS, ArmPair
from separable.estimators import EstimateReport
from separable.graph import Dag


def _rows(path):
    lines = [ln for ln in open(path, encoding="utf-8") if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_truth_command_writes_reference_risks(tmp_path):
    assert dispatch(["truth", "--dgp", "two_period", "--arms", "all", "--out", str(tmp_path)]) == 0
    rows = [r for r in _rows(tmp_path / "truth.csv") if r["k"] == "2"]
    got = {(int(r["z_y"]), int(r["z_d"])): round(float(r["risk"]), 2) for r in rows}
    assert got == {(1, 1): 0.72, (1, 0): 0.74, (0, 1): 0.62, (0, 0): 0.66}
    first = (tmp_path / "truth.csv").read_text().splitlines()[0]
    assert first.startswith("# config=") and "seed=" in first


def test_graph_convert_json_and_dot(tmp_path):
    src = tmp_path / "tc.json"
    g = Dag.from_edges([("A_Y_1", "A_Y_2"), ("A_D_1", "A_D_2"), ("A_Y_2", "Y_2"), ("A_D_2", "D_2"), ("D_2", "Y_2")], K=1)
    src.write_text(json.dumps(g.to_json()))
    out = tmp_path / "sc.json"
    assert dispatch(["graph", "convert", "--in", str(src), "--out", str(out)]) == 0
    body = json.loads(out.read_text())
    assert "config_fingerprint" in body
    sc = Dag.from_json(body)
    assert ("Z_D", "D_2") in {(str(a), str(b)) for a, b in sc.edges}
    dot = tmp_path / "sc.dot"
    assert dispatch(["graph", "convert", "--in", str(src), "--out", str(dot)]) == 0
    assert "digraph" in dot.read_text()


def test_graph_dsep_and_dcc(tmp_path):
    g = Dag.from_edges([("Z_Y", "Y_1"), ("Z_D", "D_1"), ("Z_D", "Y_1")], K=0)
    src = tmp_path / "g.json"
    src.write_text(json.dumps(g.to_json()))
    assert dispatch(["graph", "dsep", "--in", str(src), "--x", "Z_Y", "--y", "Z_D", "--given", "Y_1", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "dsep.json").read_text())
    assert res["d_separated"] is False and res["open_path"][0] == "Z_Y"
    assert dispatch(["graph", "check-dcc", "--in", str(src), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "dcc.json").read_text())["passed"] is False


def test_simulate_feeds_estimate_and_is_reproducible(tmp_path):
    sim = tmp_path / "sim"
    assert dispatch(["simulate", "--dgp", "two_period", "--n", "800", "--seed", "3", "--out", str(sim)]) == 0
    args = ["estimate", "--data", str(sim / "simulated.csv"), "--schema", str(sim / "schema.json"),
            "--model-spec", "saturated", "--estimators", "all"]
    assert dispatch(args + ["--out", str(tmp_path / "a")]) == 0
    assert dispatch(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("estimates.json", "curves_one_step.csv", "curves_weighted_y.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert dispatch(["validate", "--data", str(sim / "simulated.csv"), "--schema", str(sim / "schema.json"), "--out", str(tmp_path / "v")]) == 0


def test_contrast_command(tmp_path):
    sim = tmp_path / "sim"
    dispatch(["simulate", "--dgp", "two_period", "--n", "1500", "--seed", "4", "--out", str(sim)])
    code = dispatch(["contrast", "--data", str(sim / "simulated.csv"), "--schema", str(sim / "schema.json"),
                     "--model-spec", "saturated", "--bootstrap", "30", "--kind", "Z_Y", "--at", "1", "--out", str(tmp_path / "c")])
    assert code == 0
    rep = json.loads((tmp_path / "c" / "contrast.json").read_text())
    assert rep["kind"] == "Z_Y"
    rows = _rows(tmp_path / "c" / "table4.csv")
    assert [r["row"] for r in rows][-1] == "Causal effect" and len(rows) == 5


def test_empty_data_exits_3_with_error_json(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("id,time,z,c,r,d,y\n")
    code = dispatch(["estimate", "--data", str(empty), "--schema", "{}", "--model-spec", "saturated", "--out", str(tmp_path)])
    assert code == 3
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["exit_code"] == 3 and err["error"] == "DataError"


def test_config_errors_exit_2(tmp_path):
    assert dispatch(["estimate", "--config", str(tmp_path / "missing.json")]) == 2
    assert dispatch(["truth", "--dgp", "two_period", "--arms", "2,2", "--out", str(tmp_path)]) == 2
    assert dispatch(["no-such-command"]) == 2


def test_fit_failure_exits_4(tmp_path):
    data = tmp_path / "one_arm.csv"
    data.write_text("id,time,z,c,r,d,y\n1,1,1,0,1,0,1\n2,1,1,0,1,0,0\n2,2,1,0,1,0,0\n")
    code = dispatch(["fit", "--data", str(data), "--schema", "{}", "--model-spec", "saturated", "--out", str(tmp_path)])
    assert code == 4


def _four_reports(K1=30):
    out = {}
    for i, arm in enumerate(ALL_ARMS):
        curve = np.cumsum(np.full(K1, 0.01 + 0.001 * i))
        rep = EstimateReport(arm, "weighted_y", curve)
        rep.lower, rep.upper, rep.level = curve - 0.005, curve + 0.005, 0.95
        out[arm] = rep
    return out


def test_emit_curves_shape_and_round_trip(tmp_path):
    reports = _four_reports()
    text = emit_curves(reports, tmp_path / "curves.csv", header_comment="unit")
    rows = _rows(tmp_path / "curves.csv")
    assert len(rows) == 120
    back = read_curves(io.StringIO(text))
    assert set(back) == set(reports)
    for arm, rep in reports.items():
        assert np.array_equal(back[arm]["risk"], rep.curve)
        assert np.array_equal(back[arm]["lower"], rep.lower)
        assert list(back[arm]["k"]) == list(range(1, 31))
        assert np.all(np.diff(back[arm]["risk"]) >= 0)
    assert set(read_curves(tmp_path / "curves.csv")) == set(reports)


def test_emit_curves_rejects_mixed_horizons():
    reports = _four_reports()
    reports[ArmPair(0, 0)] = EstimateReport(ArmPair(0, 0), "weighted_y", np.array([0.1]))
    with pytest.raises(ValueError):
        emit_curves(reports)
