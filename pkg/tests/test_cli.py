import csv
import json
import xml.etree.ElementTree as ET

import pytest

from taskadmit import cli, experiment
from taskadmit.config import bundled_configs, load_config, parse_config
from taskadmit.errors import ConfigError


def _tiny_doc(**over):
    doc = {
        "name": "tiny",
        "instance": {"n_servers": 3, "horizon": 600.0, "dt": 5.0, "classes": [
            {"name": "s", "service_rate": 0.01, "arrival": {"kind": "sinusoid", "mean": 0.02, "amplitude": 0.02,
                                                            "period": 600.0, "phase": -1.5707963},
             "price": {"kind": "lomax", "shape": 3, "scale": 80}},
            {"name": "f", "service_rate": 0.04, "arrival": {"kind": "constant", "rate": 0.05},
             "price": {"kind": "lomax", "shape": 3, "scale": 30}}]},
        "methods": [{"method": "vi_no_abstr"},
                    {"method": "vi_abstr", "aggregation": "order_stats", "n_abstractions": [3, 6], "samples": 200},
                    {"method": "vi_abstr", "aggregation": "stationary", "n_abstractions": [4]},
                    {"method": "vi_abstr", "aggregation": "random", "n_abstractions": [4]},
                    {"method": "stationary"},
                    {"method": "grid_search", "candidates": 5, "episodes": 10},
                    {"method": "vi_avg_class"},
                    {"method": "reject_all"}],
        "episodes": 20, "seed": 3, "timings": False,
    }
    doc.update(over)
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_bundled_small_config():
    cfg = load_config("synthetic_small_sinusoid")
    inst = cfg.instance
    assert inst.n_servers == 10 and inst.horizon == 28800 and inst.dt == 0.5
    assert [c.price.scale for c in inst.classes] == [1600, 900, 400]
    assert [c.price.shape for c in inst.classes] == [3, 3, 3]
    assert [c.service_rate for c in inst.classes] == pytest.approx([1 / 2000, 1 / 1000, 1 / 500])
    assert "reconstructed" in cfg.description


def test_bundled_large_config():
    inst = load_config("synthetic_large").instance
    assert inst.n_servers == 40 and inst.n_classes == 4
    assert [c.price.scale for c in inst.classes] == [2500, 1600, 900, 400]
    assert [c.service_rate for c in inst.classes] == pytest.approx([1 / 4500, 1 / 3000, 1 / 1500, 1 / 750])
    assert set(bundled_configs()) >= {"synthetic_small_sinusoid", "synthetic_small_step", "synthetic_large",
                                      "synthetic_large_step"}


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d["instance"].update(dt=0.0), "dt"),
    (lambda d: d["instance"].update(dt=-1), "dt"),
    (lambda d: d.update(bogus=1), "bogus"),
    (lambda d: d["instance"]["classes"][0].update(colour="red"), "colour"),
    (lambda d: d["instance"].update(n_servers=0), "n_servers"),
    (lambda d: d.update(dt_sweep=[]), "dt_sweep"),
])
def test_validation_errors_name_the_key(mutate, needle):
    doc = _tiny_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert needle in str(err.value)


def test_missing_config():
    with pytest.raises(ConfigError):
        load_config("no_such_config")


def test_experiment_outputs_and_determinism(tmp_path):
    cfg_path = _write(tmp_path, _tiny_doc())
    outs = []
    for run in ("a", "b"):
        rc = cli.main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path / run)])
        assert rc == 0
        outs.append(tmp_path / run)
    for name in ("summary.csv", "episodes.csv", "reward_vs_abstractions.svg", "solve_times.svg",
                 "arrival_rates.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    for svg in outs[0].glob("*.svg"):
        ET.parse(svg)
    with open(outs[0] / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == experiment.SUMMARY_FIELDS
    by = {(r["method"], r["n_abstractions"]): r for r in rows}
    assert float(by[("reject_all", "")]["mean"]) == 0.0
    assert ("vi_order_stat_abstr", "6") in by
    with open(outs[0] / "episodes.csv") as fh:
        ep = list(csv.DictReader(fh))
    assert len(ep) == 20 * len(rows)
    assert all(float(r["total_reward"]) >= 0 for r in ep)


def test_budget_skip_exit_code(tmp_path):
    doc = _tiny_doc(methods=[{"method": "vi_no_abstr"}])
    doc["instance"]["dt"] = 0.01
    cfg_path = _write(tmp_path, doc)
    rc = cli.main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                   "--budget-seconds", "0.000001", "--format", "csv"])
    assert rc == 3
    rows = list(csv.DictReader(open(tmp_path / "o" / "summary.csv")))
    assert rows[0]["status"] == "skipped" and rows[0]["reason"] == "budget"


def test_invalid_config_exit_code(tmp_path, capsys):
    doc = _tiny_doc()
    doc["instance"]["dt"] = 0
    rc = cli.main(["solve", "--config", str(_write(tmp_path, doc))])
    assert rc == 2
    assert "dt" in capsys.readouterr().err


def test_solve_abstract_stationary_commands(tmp_path):
    cfg = str(_write(tmp_path, _tiny_doc()))
    out = str(tmp_path / "o")
    assert cli.main(["solve", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "o" / "tables.bin").read_bytes()[:4] == b"STAQ"
    assert cli.main(["abstract", "--config", cfg, "--out", out, "--kind", "order_stats",
                     "--n-abstractions", "4", "--samples", "100"]) == 0
    assert (tmp_path / "o" / "aggregation_order_stats_4.csv").exists()
    assert cli.main(["stationary", "--config", cfg, "--out", out]) == 0
    info = json.loads((tmp_path / "o" / "stationary.json").read_text())
    assert info["gain_per_second"] > 0
    assert cli.main(["evaluate", "--config", cfg, "--out", out, "--method", "vi_random_abstr",
                     "--n-abstractions", "5", "--episodes", "5"]) == 0
    assert cli.main(["evaluate", "--config", cfg, "--out", out, "--method", "nope"]) == 2


def test_dt_sweep(tmp_path):
    cfg = load_config(str(_write(tmp_path, _tiny_doc(episodes=10))))
    rows = experiment.dt_sweep(cfg, [20.0, 10.0], tmp_path / "d")
    assert [r["dt"] for r in rows] == [20.0, 10.0]
    assert rows[1]["q_initial"] >= rows[0]["q_initial"] - 1e-9
    assert (tmp_path / "d" / "dt_sweep.csv").exists()
    ET.parse(tmp_path / "d" / "dt_sweep.svg")
    with pytest.raises(ValueError):
        experiment.dt_sweep(cfg, [], tmp_path / "d")
    rc = cli.main(["dt-sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "e"), "--dt", "5"])
    assert rc == 2
