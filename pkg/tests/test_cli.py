import json

import pytest

from structkan import topology as T
from structkan.cli import main
from structkan.topology import Input, Linear, NetworkTopology, Univariate, three_model_topology

Z = "x1^2*x2 + y1*y2^2"


@pytest.fixture
def three(tmp_path):
    path = tmp_path / "three.json"
    T.dump(three_model_topology(), path)
    return str(path)


@pytest.fixture
def five_univariate(tmp_path):
    nodes = [(i, Input(i)) for i in range(3)]
    nodes += [(3, Univariate()), (4, Univariate()), (5, Univariate()), (6, Linear()),
              (7, Univariate()), (8, Univariate())]
    edges = [(0, 3), (1, 4), (2, 5), (3, 6), (4, 6), (5, 6), (6, 7), (7, 8)]
    path = tmp_path / "five.json"
    T.dump(NetworkTopology(3, tuple(nodes), tuple(edges), 8), path)
    return str(path)


def test_validate(three, tmp_path, capsys):
    assert main(["validate", three]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    bad = tmp_path / "bad.json"
    doc = T.to_dict(three_model_topology())
    doc["edges"].append([6, 4])
    bad.write_text(json.dumps(doc))
    assert main(["validate", str(bad)]) == 2
    assert "cycle detected" in capsys.readouterr().out


def test_analyze_ratio_verdict(three, tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["analyze", three, "--k", "inf", "--k-prime", "3", "--n-prime", "1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "violates ratio condition" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["vitushkin_violates"] is True
    assert summary["p_star"] is None  # no univariate nodes


def test_analyze_counting(five_univariate, tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["analyze", five_univariate, "--k", "2", "--k-prime", "2", "--max-p", "50",
                 "--out", str(out)]) == 0
    assert "p* = 8" in capsys.readouterr().out
    rows = (out / "counting.csv").read_text().splitlines()
    assert rows[0] == "p,N_p,deriv_dim_exact,paper_bound,representable_all"
    assert len(rows) == 51
    assert rows[8] == "8,85,45,96,false"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"] == ["counting.csv", "summary.json"]
    assert manifest["subcommand"] == "analyze"


def test_analyze_requires_orders(three, tmp_path):
    assert main(["analyze", three, "--k", "2", "--out", str(tmp_path / "a")]) == 2
    assert main(["analyze", three, "--k", "two", "--k-prime", "1", "--out", str(tmp_path / "a")]) == 2


def test_train_boosted_rows(three, tmp_path):
    out = tmp_path / "t"
    assert main(["train", three, "--target", Z, "--engine", "boosted", "--seed", "0", "--rounds", "6",
                 "--n-train", "300", "--n-val", "100", "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert len(lines) == 7
    side = json.loads((out / "trace.json").read_text())
    assert {"seed", "config", "git_describe", "wall_time_s"} <= set(side)
    top, params = T.load(out / "model.json")
    assert len(params[6].trees) == 6


def test_train_smooth_on_ensemble_topology(three, tmp_path, capsys):
    assert main(["train", three, "--target", Z, "--engine", "smooth", "--out", str(tmp_path / "t")]) == 2
    assert "smooth engine cannot train black-box" in capsys.readouterr().err


def test_train_smooth_topology(five_univariate, tmp_path):
    out = tmp_path / "s"
    assert main(["train", five_univariate, "--target", "x1*x2 + x3", "--engine", "smooth", "--rounds", "3",
                 "--n-train", "200", "--n-val", "50", "--out", str(out)]) == 0
    top, params = T.load(out / "model.json")
    assert set(params) == {3, 4, 5, 6, 7, 8}


def test_config_layering(three, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rounds": 4, "seed": 3, "n_train": 200, "n_val": 50}))
    out = tmp_path / "t"
    assert main(["train", three, "--target", Z, "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["rounds"] == 4
    assert manifest["seed"] == 5
    cfg.write_text(json.dumps({"roundz": 4}))
    assert main(["train", three, "--target", Z, "--config", str(cfg), "--out", str(out)]) == 2


@pytest.mark.parametrize("argv", [
    ["train", "missing.json", "--target", "x1", "--out", "OUT"],
    ["train", "THREE", "--target", "x1 + * x2", "--out", "OUT"],
    ["train", "THREE", "--target", "q1", "--out", "OUT"],
    ["decompose", "--expr", Z, "--partition", "x1,x2|x2,y1,y2"],
    ["decompose", "--expr", "7", "--partition", "x1,x2|y1,y2"],
    ["experiment", "fig2", "--out", "OUT"],
    ["train", "THREE", "--target", Z, "--rounds", "0", "--out", "OUT"],
])
def test_user_errors_exit_2(argv, three, tmp_path):
    argv = [a.replace("THREE", three).replace("OUT", str(tmp_path / "o")) for a in argv]
    assert main(argv) == 2


def test_analyze_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"input_dim": 4,\n  "nodes": [,]}')
    assert main(["analyze", str(bad), "--k", "1", "--k-prime", "1", "--out", str(tmp_path / "a")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_decompose_overlap_message(capsys):
    assert main(["decompose", "--expr", Z, "--partition", "x1,x2|x2,y1"]) == 2
    assert "partition not disjoint" in capsys.readouterr().err


def test_decompose_prints_json(capsys):
    assert main(["decompose", "--expr", Z, "--partition", "x1,x2|y1,y2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["verdict"] == "decomposable"
    assert main(["decompose", "--expr", "x1*y1*y2 + x1*x2*y2", "--partition", "x1,x2|y1,y2"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "not decomposable"


def test_experiment_small(tmp_path, capsys):
    out = tmp_path / "f"
    assert main(["experiment", "fig1", "--seed", "1", "--rounds", "3", "--n-train", "200", "--n-val", "50",
                 "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["fig1.svg", "manifest.json", "summary.json", "trace_z.csv", "trace_zprime.csv"]
    assert "ratio" in json.loads(capsys.readouterr().out)


def test_help_documents_layering(capsys):
    assert main(["--help"]) == 0
    assert "flag > --config" in capsys.readouterr().out.replace("\n", " ")


def test_numeric_failure_exit_3(three, tmp_path, monkeypatch):
    from structkan import training

    def boom(*a, **k):
        raise training.DivergenceError("training diverged", training.TrainingTrace())

    monkeypatch.setattr(training, "train", boom)
    out = tmp_path / "t"
    assert main(["train", three, "--target", Z, "--rounds", "2", "--n-train", "50", "--n-val", "20",
                 "--out", str(out)]) == 3
    assert (out / "trace.csv").exists() and (out / "manifest.json").exists()
