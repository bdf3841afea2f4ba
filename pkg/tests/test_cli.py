import csv
import filecmp

import pytest

from opinionnet import cli
from opinionnet.config import ExperimentConfig, load_config, preset, validate_config
from opinionnet.signals import ConfigError


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_validate_examples():
    assert any("c+d>1" in v for v in validate_config(ExperimentConfig(c=0.7, d=0.4)))
    v = validate_config(ExperimentConfig(c=0.5, d=0.0))
    assert any(x.startswith("d:") and "d>0" in x for x in v)
    assert validate_config(preset("fig4")) == []
    assert any(x.startswith("default:") for x in validate_config(ExperimentConfig(default_law="uniform(-2,1)")))
    assert any(x.startswith("replicas") for x in validate_config(ExperimentConfig(replicas=0)))


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("""
[run]
seed = 42
replicas = 3
group_by = q>0, q<=0
[model]
c = 0.6
d = 0.4
[attributes]
q = twopoint(-1:0.5,1:0.5)
[signals]
default = uniform(-1,1)
rule1 = q>0 -> betashift(8,1)
rule2 = q<=0 -> betashift(1,8)
[bots]
n = 5
p = 0.1
""")
    cfg = load_config(path)
    assert (cfg.seed, cfg.replicas, cfg.c, cfg.d, cfg.n_bots) == (42, 3, 0.6, 0.4, 5)
    assert cfg.rules == (("q>0", "betashift(8,1)"), ("q<=0", "betashift(1,8)"))
    assert cfg.group_by == ("q>0", "q<=0")
    path.write_text("[model]\nc = 0.6\nwhat = 1\n")
    with pytest.raises(ConfigError, match="what"):
        load_config(path)
    path.write_text("[model]\nc = abc\n")
    with pytest.raises(ConfigError, match=r"\[model\] c"):
        load_config(path)


def test_cli_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nc = 0.5\nd = 0\n")
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "d>0" in capsys.readouterr().err
    assert cli.main(["validate", "--config", str(path)]) == 1


def test_tree_analytic_preset(tmp_path):
    assert cli.main(["tree-analytic", "--out", str(tmp_path)]) == 0
    rows = {(r["quantity"], r["method"]): float(r["value"]) for r in read_csv(tmp_path / "moments.csv")
            if r["group"] == "all"}
    assert rows[("var_root", "no-memory")] == pytest.approx(0.0952380952, abs=1e-9)
    assert rows[("var_root", "general")] == pytest.approx(0.0952380952, abs=1e-9)


def test_simulate_outputs_deterministic(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nreplicas = 2\ninit = pm1\nrecord = 0,3\n[graph]\nn = 200\np = 0.05\n"
                    "[model]\nc = 0.5\nd = 0.25\n[attributes]\nq = twopoint(-1:0.5,1:0.5)\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(path), "--seed", "3", "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", str(path), "--seed", "3", "--out", str(b), "--threads", "4"]) == 0
    names = ["opinions.csv", "histogram.csv", "summary.csv", "trajectory.csv", "histogram.svg", "manifest.txt"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert match == names
    ops = read_csv(a / "opinions.csv")
    assert len(ops) == 200 and set(ops[0]) == {"vertex_id", "q", "s", "in_degree", "opinion"}
    hist = read_csv(a / "histogram.csv")
    assert len(hist) == 40 and sum(int(r["count"]) for r in hist) == 400
    manifest = (a / "manifest.txt").read_text()
    assert "k_used = 57" in manifest and "contraction_bound" in manifest and "seed = 3" in manifest


def test_fig1_consensus_preset(tmp_path):
    assert cli.main(["reproduce", "fig1", "--seed", "1", "--out", str(tmp_path)]) == 0
    hist = read_csv(tmp_path / "histogram.csv")
    inside = sum(int(r["count"]) for r in hist if float(r["bin_lo"]) >= -0.1 and float(r["bin_hi"]) <= 0.1)
    assert inside / sum(int(r["count"]) for r in hist) >= 0.99


def test_other_tree_commands(tmp_path):
    assert cli.main(["finite-horizon", "--k", "0", "--out", str(tmp_path / "f")]) == 0
    rows = {r["quantity"]: float(r["value"]) for r in read_csv(tmp_path / "f" / "moments.csv")}
    assert rows["var_root_k"] == pytest.approx(0.25 / 3, abs=1e-15)
    assert cli.main(["memory-compare", "--out", str(tmp_path / "m")]) == 0
    rows = {r["quantity"]: float(r["value"]) for r in read_csv(tmp_path / "m" / "moments.csv")}
    assert rows["var_memory"] <= rows["var_no_memory"] and rows["inequality_holds"] == 1
    path = tmp_path / "t.ini"
    path.write_text("[tree]\nsamples = 2000\nhorizon = 30\n")
    assert cli.main(["tree-sample", "--config", str(path), "--out", str(tmp_path / "t")]) == 0
    assert len(read_csv(tmp_path / "t" / "opinions.csv")) == 2000
