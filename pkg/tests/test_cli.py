import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from fedgolab import config as cfgmod
from fedgolab import modelio
from fedgolab.cli import METRIC_HEADER, main
from fedgolab.fedloop import classifier
from fedgolab.ganforge import ByzantineDiscriminator, Head, make_discriminator, make_generator
from fedgolab.numerics import ConfigurationError, mlp_forward, stream

SVG = "{http://www.w3.org/2000/svg}"


def _write(path, raw):
    path.write_text(json.dumps(raw))
    return path


def _small(**extra):
    raw = {"scenario": "toy", "weighting": "fedgo", "seeds": [0, 1], "T": 1, "client_epochs": 1,
           "server_epochs": 1, "grid_n": 30}
    raw.update(extra)
    return raw


def test_packaged_configs_validate_and_round_trip():
    for name in ("toy", "g3d2"):
        spec = cfgmod.from_dict(cfgmod.packaged(name))
        again = cfgmod.from_dict(json.loads(cfgmod.dumps(spec)))
        assert cfgmod.to_dict(again) == cfgmod.to_dict(spec)


def test_missing_weighting_exits_2_and_names_field(tmp_path, capsys):
    raw = _small()
    del raw["weighting"]
    assert main(["run", str(_write(tmp_path / "c.json", raw)), "--out", str(tmp_path / "o")]) == 2
    assert "weighting" in capsys.readouterr().err


def test_unknown_key_and_bad_values_exit_2(tmp_path, capsys):
    assert main(["run", str(_write(tmp_path / "a.json", _small(colour="red")))]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["run", str(_write(tmp_path / "b.json", _small(seeds=[])))]) == 2
    assert main(["run", str(_write(tmp_path / "c.json", _small(weighting="median")))]) == 2


def test_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "absent.json")]) == 3
    assert main(["run"]) == 2


def test_validate_reports_every_error():
    with pytest.raises(ConfigurationError) as info:
        cfgmod.validate({"scenario": "moon", "seeds": [-1]})
    text = str(info.value)
    assert "scenario" in text and "seeds/0" in text and "weighting" in text


def test_run_writes_artifacts_and_is_reproducible(tmp_path):
    cfg = _write(tmp_path / "c.json", _small())
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b
    lines = a.decode().splitlines()
    assert lines[0] == ",".join(METRIC_HEADER) and len(lines) == 3
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    acc = [r["server_acc"] for r in summary["per_seed"]]
    assert summary["mean"]["server_acc"] == pytest.approx(np.mean(acc))
    assert summary["sd"]["server_acc"] == pytest.approx(np.std(acc, ddof=1))
    written = cfgmod.load(tmp_path / "a" / "config.json")
    assert written.seeds == [0, 1] and str(written.federation.weighting) == "fedgo"


def test_saved_server_reproduces_logits(tmp_path):
    assert main(["run", str(_write(tmp_path / "c.json", _small(seeds=[3]))), "--out", str(tmp_path / "o")]) == 0
    models = tmp_path / "o" / "models"
    server = modelio.load(models / "seed3_server.model")
    assert (models / "seed3_disc0.model").is_file() and (models / "seed3_client3.model").is_file()
    x = stream(0).normal(size=(5, 2))
    again = modelio.load(models / "seed3_server.model")
    assert np.array_equal(mlp_forward(server, x), mlp_forward(again, x))


def test_threads_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path / "c.json", _small(seeds=[2]))
    monkeypatch.setenv("FEDGOLAB_THREADS", "3")
    assert main(["run", str(cfg), "--out", str(tmp_path / "e")]) == 0
    monkeypatch.setenv("FEDGOLAB_THREADS", "many")
    assert main(["run", str(cfg), "--out", str(tmp_path / "f")]) == 2
    monkeypatch.delenv("FEDGOLAB_THREADS")
    assert main(["run", str(cfg), "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "e" / "metrics.csv").read_bytes() == (tmp_path / "g" / "metrics.csv").read_bytes()


def test_toy_command_with_override(tmp_path, capsys):
    assert main(["toy", "--weighting", "uniform", "--seed", "1", "--out", str(tmp_path / "t")]) == 0
    summary = json.loads((tmp_path / "t" / "summary.json").read_text())
    assert summary["weighting"] == "uniform" and summary["seeds"] == [1]
    assert "server_acc" in json.loads(capsys.readouterr().out)


@pytest.mark.parametrize("make", [
    lambda: classifier(2, 3, (4,), stream(0)),
    lambda: make_discriminator(2, stream(1), Head.SINGLE_SIGMOID, hidden=(3,)),
    lambda: ByzantineDiscriminator(Head.DOUBLE_SIGMOID),
    lambda: make_generator(2, stream(2), hidden=(4,)),
])
def test_model_files_round_trip(tmp_path, make):
    obj = make()
    modelio.save(obj, tmp_path / "m.model")
    back = modelio.load(tmp_path / "m.model")
    assert modelio.dumps(back) == modelio.dumps(obj)
    assert (tmp_path / "m.model").read_text().splitlines()[0] == modelio.HEADER


def test_bad_model_header_rejected():
    with pytest.raises(modelio.ModelFormatError):
        modelio.loads("NOT-A-MODEL\n{}")


def test_verify_privacy(tmp_path, capsys):
    assert main(["verify", "--suite", "privacy", "--out", str(tmp_path)]) == 0
    rows = [json.loads(line) for line in (tmp_path / "reports.jsonl").read_text().splitlines()]
    assert len(rows) == 5 and all(r["holds"] for r in rows)
    assert "privacy: 5/5 hold" in capsys.readouterr().out


def test_verify_inequality_and_generalisation_suites(tmp_path):
    assert main(["verify", "--suite", "lemma_b1", "--suite", "c1_bound", "--out", str(tmp_path)]) == 0
    rows = [json.loads(line) for line in (tmp_path / "reports.jsonl").read_text().splitlines()]
    ineq = [r for r in rows if r["suite"] == "lemma_b1"]
    assert len(ineq) == 500 and all(r["holds"] and r["slack"] >= -1e-9 for r in ineq)
    (gen,) = [r for r in rows if r["suite"] == "c1_bound"]
    assert gen["meta"]["violation_rate"] <= 0.164


def test_verify_unknown_suite(tmp_path):
    assert main(["verify", "--suite", "nope", "--out", str(tmp_path)]) == 2


def test_verify_failure_exits_4(tmp_path, monkeypatch):
    from fedgolab import suites

    def broken(name, seed=0):
        return [{"suite": name, "name": "x", "lhs": 1.0, "rhs": 0.0, "slack": -1.0, "holds": False,
                 "asserted": True, "meta": {}}]

    monkeypatch.setattr(suites, "run_suite", broken)
    assert main(["verify", "--suite", "privacy", "--out", str(tmp_path)]) == 4


def _polylines(svg_path):
    root = ET.parse(svg_path).getroot()
    out = {}
    for line in root.iter(f"{SVG}polyline"):
        pts = [tuple(map(float, p.split(","))) for p in line.get("points").split()]
        out[line.find(f"{SVG}title").text] = pts
    return root, out


def test_plot_single_row(tmp_path):
    csv = tmp_path / "m.csv"
    csv.write_text("seed,round,server_acc\n0,1,0.5\n")
    assert main(["plot", str(csv), "--out", str(tmp_path / "p.svg")]) == 0
    root, lines = _polylines(tmp_path / "p.svg")
    assert len(lines) == 1 and len(list(root.iter(f"{SVG}circle"))) == 1


def test_plot_groups_by_method_column(tmp_path):
    csv = tmp_path / "m.csv"
    csv.write_text("method,seed,round,server_acc\nfedgo,0,1,0.6\nfedgo,0,2,0.7\nuniform,0,1,0.5\nuniform,0,2,0.55\n")
    assert main(["plot", str(csv), "--out", str(tmp_path / "p.svg")]) == 0
    root, lines = _polylines(tmp_path / "p.svg")
    assert sorted(lines) == ["fedgo", "uniform"]
    legend = [t.get("data-series") for t in root.iter(f"{SVG}text") if t.get("data-series")]
    assert sorted(legend) == ["fedgo", "uniform"]


def test_plot_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("seed,round,server_acc\n")
    assert main(["plot", str(empty), "--out", str(tmp_path / "p.svg")]) == 2
    nocol = tmp_path / "n.csv"
    nocol.write_text("seed,round\n0,1\n")
    assert main(["plot", str(nocol), "--out", str(tmp_path / "p.svg")]) == 2
    assert main(["plot", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "p.svg")]) == 3


def test_plot_fedgo_ends_above_uniform_on_toy(tmp_path):
    for w in ("fedgo", "uniform"):
        assert main(["toy", "--weighting", w, "--out", str(tmp_path / w)]) == 0
    svg = tmp_path / "toy.svg"
    assert main(["plot", str(tmp_path / "fedgo" / "metrics.csv"), str(tmp_path / "uniform" / "metrics.csv"),
                 "--metric", "ensemble_acc", "--out", str(svg)]) == 0
    _, lines = _polylines(svg)
    # SVG y grows downwards
    assert lines["fedgo"][-1][1] <= lines["uniform"][-1][1]
