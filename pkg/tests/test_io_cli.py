import json
import math

import numpy as np
import pytest

from wlfrailty.cli import main
from wlfrailty.em import FitConfig, fit_semiparametric, fit_weibull
from wlfrailty.errors import DataError
from wlfrailty.io import (
    SCHEMA,
    coefficient_table,
    dump_csv,
    load_csv,
    read_result,
    result_to_dict,
    write_result,
)
from wlfrailty.simulation import ScenarioConfig, gen_dataset


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_small_file(tmp_path):
    p = _write(tmp_path, "id,time,status,x\na,1.5,1,0.3\nb,2.0,0,1.0\na,3.0,1,-2\n")
    d = load_csv(p, "time", "status", "id", ["x"])
    assert d.m == 2 and list(d.sizes) == [2, 1]
    assert d.cluster_ids == ["a", "b"]
    assert d.covariate_names == ["x"]
    assert d.event.sum() == 2


def test_categorical_reference_coding(tmp_path):
    p = _write(tmp_path, "id,time,status,dukes\n1,1,1,C\n1,2,0,A-B\n2,3,1,D\n2,4,1,C\n")
    d = load_csv(p, "time", "status", "id")
    assert d.covariate_names == ["dukesC", "dukesD"]
    rows = {float(t): tuple(x) for t, x in zip(d.time, d.X)}
    assert rows[2.0] == (0.0, 0.0)
    assert rows[1.0] == (1.0, 0.0)
    assert rows[3.0] == (0.0, 1.0)


@pytest.mark.parametrize("body, line, msg", [
    ("1,1.0,1,0\n1,2.0,2,0\n", 3, "status"),
    ("1,1.0,1,0\n1,-2.0,1,0\n", 3, "positive"),
    ("1,abc,1,0\n", 2, "number"),
    ("1,1.0,1\n", 2, "fields"),
])
def test_parse_errors_carry_line(tmp_path, body, line, msg):
    p = _write(tmp_path, "id,time,status,x\n" + body)
    with pytest.raises(DataError) as info:
        load_csv(p, "time", "status", "id", ["x"])
    assert info.value.line == line
    assert msg in str(info.value)


def test_unknown_column(tmp_path):
    p = _write(tmp_path, "id,time,status\n1,1,1\n")
    with pytest.raises(DataError, match="unknown column"):
        load_csv(p, "time", "status", "id", ["age"])


def test_csv_round_trip(tmp_path):
    data, _ = gen_dataset(ScenarioConfig(cluster_layout=((30, 2), (10, 3)), censor_q=0.3), 0)
    p = tmp_path / "d.csv"
    dump_csv(data, p)
    back = load_csv(p, "time", "status", "cluster")
    assert back.cluster_ids == [str(c) for c in data.cluster_ids]
    assert np.array_equal(back.time, data.time)
    assert np.array_equal(back.event, data.event)
    assert np.array_equal(back.X, data.X)


def test_coefficient_table():
    (c,) = coefficient_table(["x"], [0.0], [1.0])
    assert c.p == 1.0 and not c.significant
    (d,) = coefficient_table(["dukesC"], [0.308], [0.121])
    assert d.significant
    assert d.p == pytest.approx(math.erfc(0.308 / 0.121 / math.sqrt(2)))
    (e,) = coefficient_table(["sex"], [-0.1], [0.1])
    assert not e.significant
    (f,) = coefficient_table(["x"], [1.0], [math.nan])
    assert math.isnan(f.p)


@pytest.mark.parametrize("fitter", [fit_semiparametric, fit_weibull])
def test_result_round_trip(tmp_path, fitter):
    data, _ = gen_dataset(ScenarioConfig(cluster_layout=((60, 2), (20, 4)), theta=0.5), 1)
    res = fitter(data, FitConfig())
    p = tmp_path / "r.json"
    write_result(res, p)
    back = read_result(p)
    assert np.array_equal(back.beta_hat, res.beta_hat)
    assert back.theta_hat == res.theta_hat
    assert np.array_equal(back.se_beta, res.se_beta)
    assert back.se_theta == res.se_theta
    assert np.array_equal(back.z_hat, res.z_hat)
    assert back.covariate_names == res.covariate_names
    assert result_to_dict(back) == result_to_dict(res)
    doc = json.loads(p.read_text())
    assert doc["schema"] == SCHEMA
    assert {"coefficients", "theta", "kendall_tau", "baseline", "frailties", "loglik", "n_iter"} <= set(doc)


def test_read_result_rejects_other_documents(tmp_path):
    p = _write(tmp_path, '{"schema": "other"}', "x.json")
    with pytest.raises(DataError):
        read_result(p)
    p = _write(tmp_path, "{not json", "y.json")
    with pytest.raises(DataError):
        read_result(p)


# ---------------------------------------------------------------------- CLI


def test_cli_tau_all(capsys):
    assert main(["tau", "--theta", "0.619", "--model", "all"]) == 0
    lines = capsys.readouterr().out.split("\n")
    vals = {ln.split()[0]: float(ln.split()[1]) for ln in lines if ln.strip()}
    assert vals["wl"] == pytest.approx(0.246, abs=0.005)
    assert vals["gamma"] == pytest.approx(0.619 / 2.619, abs=1e-6)
    assert vals["wl"] > vals["gamma"] > vals["ig"]


@pytest.mark.parametrize("argv", [
    [],
    ["tau"],
    ["tau", "--theta", "-1"],
    ["tau", "--theta", "0.5", "--model", "clayton"],
    ["fit", "--data", "x.csv"],
    ["predict", "--fit", "r.json", "--grid", "1:0:5"],
])
def test_cli_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def _case1_csv(tmp_path):
    data, _ = gen_dataset(ScenarioConfig(theta=0.5, base_seed=11), 0)
    p = tmp_path / "case1.csv"
    dump_csv(data, p)
    return p


def test_cli_fit_and_predict(tmp_path, capsys):
    csv_path = _case1_csv(tmp_path)
    out = tmp_path / "r.json"
    code = main(["fit", "--data", str(csv_path), "--time", "time", "--status", "status",
                 "--cluster", "cluster", "--covars", "x11,x12,x2,x3,x4", "--dist", "np", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == SCHEMA
    assert [c["name"] for c in doc["coefficients"]] == ["x11", "x12", "x2", "x3", "x4"]
    assert len(doc["frailties"]) == 396
    assert "theta" in capsys.readouterr().out

    curve = tmp_path / "c.csv"
    last = doc["baseline"]["times"][-1]
    code = main(["predict", "--fit", str(out), "--profile", "x11=1,x3=1", "--mode", "conditional",
                 "--z", "0", "--grid", f"0:{last}:7", "--out", str(curve)])
    assert code == 0
    rows = curve.read_text().strip().split("\n")[1:]
    assert len(rows) == 7 and all(float(r.split(",")[1]) == 1.0 for r in rows)

    code = main(["predict", "--fit", str(out), "--mode", "marginal", "--grid", f"0:{last}:5"])
    assert code == 0
    vals = [float(r.split(",")[1]) for r in capsys.readouterr().out.strip().split("\n")[1:]]
    assert vals[0] == 1.0 and all(np.diff(vals) <= 0)


def test_cli_data_errors(tmp_path, capsys):
    p = _write(tmp_path, "id,time,status,x\n1,1.0,2,0\n")
    assert main(["fit", "--data", str(p), "--time", "time", "--status", "status", "--cluster", "id"]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--time", "t",
                 "--status", "s", "--cluster", "c"]) == 2
    csv_path = _case1_csv(tmp_path)
    out = tmp_path / "r.json"
    assert main(["fit", "--data", str(csv_path), "--time", "time", "--status", "status",
                 "--cluster", "cluster", "--dist", "weibull", "--out", str(out)]) == 0
    assert main(["predict", "--fit", str(out), "--profile", "age=3", "--grid", "0:1:3"]) == 2


def test_cli_convergence_failure(tmp_path, capsys):
    csv_path = _case1_csv(tmp_path)
    code = main(["fit", "--data", str(csv_path), "--time", "time", "--status", "status",
                 "--cluster", "cluster", "--max-iter", "1"])
    assert code == 3
    assert "convergence" in capsys.readouterr().err


def test_cli_simulate_deterministic(tmp_path):
    scen = _write(tmp_path, "layout = 40x2, 10x4\ntheta = 0.5\nn_replicates = 2\n", "s.txt")
    outs = []
    for k in range(2):
        o = tmp_path / f"s{k}.json"
        assert main(["simulate", "--scenario", str(scen), "--seed", "5", "--fitter", "weibull",
                     "--out", str(o)]) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["n_replicates"] == 2 and doc["scenario"]["base_seed"] == 5
