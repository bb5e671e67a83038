import json
import math
import os

import pytest

from brstable import cli
from brstable.errors import ConfigError

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
TWO_ATOM = '{"law": {"family": "two-atom", "alpha": 1.0}, "n_grid": [10, 100]}'


def config_text(name):
    with open(os.path.join(CONFIGS, name)) as fh:
        return fh.read()


# --- parsing -------------------------------------------------------------

def test_defaults_filled():
    s = cli.parse_config("converge", TWO_ATOM, seed=1)
    assert s.config["r"] == 1.0 and s.config["b"] == 1.0
    assert s.config["t_grid"] == [1.0] and s.config["replicas"] == 10_000 and s.seed == 1


def test_negative_alpha_names_key():
    with pytest.raises(ConfigError) as e:
        cli.parse_config("converge", TWO_ATOM.replace("1.0", "-1"), seed=1)
    assert e.value.key == "law.alpha" and "alpha" in str(e.value)
    with pytest.raises(ConfigError) as e:
        cli.parse_config("oracle", '{"alpha": -1}')
    assert e.value.key == "alpha"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as e:
        cli.parse_config("converge", TWO_ATOM[:-1] + ', "betta": 2}', seed=1)
    assert e.value.key == "betta"


def test_parse_error_location():
    with pytest.raises(ConfigError) as e:
        cli.parse_config("oracle", '{\n  "alpha": 1.0,\n  "b": }')
    assert (e.value.line, e.value.column) == (3, 8)


@pytest.mark.parametrize("command,text,key", [
    ("converge", TWO_ATOM, "seed"),                                             # seed is mandatory
    ("converge", TWO_ATOM[:-1] + ', "replicas": 99}', "replicas"),
    ("converge", TWO_ATOM[:-1] + ', "b": 0}', "b"),
    ("converge", TWO_ATOM.replace("[10, 100]", "[100, 10]"), "n_grid"),
    ("converge", TWO_ATOM[:-1] + ', "stable": {"alpha": 2.0}}', "stable.alpha"),
    ("oracle", '{"alpha": 1, "alpha": 2}', "alpha"),
    ("oracle", '{"alpha": NaN}', None),
    ("oracle", '{"alpha": 1, "rho": {"type": "point"}}', "rho.atoms"),
    ("oracle", '{"alpha": 1, "rho": {"type": "point", "atoms": [1], "k": 2}}', "rho.k"),
    ("simulate-brw", '{"law": {"family": "two-atom", "alpha": 1}}', "steps"),
    ("simulate-stable", '{"stable": {"alpha": 1}}', "seed"),
    ("metrics", '{"pairs": [{"x": [0]}]}', "pairs.0.y"),
])
def test_validation_errors(command, text, key):
    with pytest.raises(ConfigError) as e:
        cli.parse_config(command, text, seed=None if key == "seed" else 1)
    if key is not None:
        assert e.value.key == key


def test_oracle_needs_no_seed():
    assert cli.parse_config("oracle", '{"alpha": 1.0}').seed is None


def test_cli_seed_overrides_document():
    s = cli.parse_config("converge", TWO_ATOM[:-1] + ', "seed": 4}', seed=9)
    assert s.seed == 9
    assert cli.parse_config("converge", TWO_ATOM[:-1] + ', "seed": 4}').seed == 4


@pytest.mark.parametrize("command,name", [
    ("converge", "converge_desk.json"), ("converge", "converge_quick.json"), ("oracle", "oracle.json"),
    ("simulate-brw", "simulate_brw.json"), ("simulate-stable", "simulate_stable.json"),
    ("simulate-uchiyama", "simulate_uchiyama.json"), ("metrics", "metrics.json")])
def test_round_trip(command, name):
    s = cli.parse_config(command, config_text(name), seed=3)
    again = cli.parse_config(command, s.to_json())
    assert again.config == s.config and again.seed == s.seed


# --- oracle values -------------------------------------------------------

def test_oracle_values():
    s = cli.parse_config("oracle", config_text("oracle.json"))
    v = cli.oracle_values(s.config)
    assert v["kappa"] == pytest.approx(1 - math.exp(-1), rel=1e-12)
    assert v["kappa_quad"] == pytest.approx(v["kappa"], rel=1e-8)
    assert v["e_laplace"] == pytest.approx(math.exp(1 - math.exp(-1)), rel=1e-12)
    assert v["e_mass"] == pytest.approx(math.e, rel=1e-12)
    assert v["a_n"] == pytest.approx(0.01, rel=1e-12)
    assert v["kappa_inf"] == pytest.approx(1.0)


def test_oracle_command(tmp_path, capsys):
    cfg = tmp_path / "o.json"
    cfg.write_text(config_text("oracle.json"))
    assert cli.main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "kappa=0.632121" in capsys.readouterr().out
    doc = json.loads((tmp_path / "out" / "oracle.json").read_text())
    assert round(doc["kappa"], 6) == 0.632121 and doc["a_n"] == pytest.approx(0.01)


# --- artifacts and exit codes --------------------------------------------

def run(tmp_path, command, text, *extra, out="out"):
    cfg = tmp_path / f"{command}.json"
    cfg.write_text(text)
    code = cli.main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


@pytest.mark.parametrize("command,name,files", [
    ("simulate-brw", "simulate_brw.json", ["trajectory.csv", "marginals.csv"]),
    ("simulate-stable", "simulate_stable.json", ["marginals.csv"]),
    ("simulate-uchiyama", "simulate_uchiyama.json", ["measures.csv", "events_0.csv"]),
    ("metrics", "metrics.json", ["metrics.csv"]),
])
def test_same_seed_byte_identical(tmp_path, command, name, files):
    code1, out1 = run(tmp_path, command, config_text(name), "--seed", "11", out="a")
    code2, out2 = run(tmp_path, command, config_text(name), "--seed", "11", out="b")
    assert code1 == code2 == 0
    for f in files + ["scenario.json"]:
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes()
    if command != "metrics":
        code3, out3 = run(tmp_path, command, config_text(name), "--seed", "12", out="c")
        assert any((out1 / f).read_bytes() != (out3 / f).read_bytes() for f in files)


def test_metrics_values(tmp_path):
    code, out = run(tmp_path, "metrics", config_text("metrics.json"))
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0] == "pair,r,d_r,levy_prokhorov,laplace_x,laplace_y,nested,mass_bound"
    first = rows[1].split(",")
    assert float(first[4]) == pytest.approx(1.5) and first[6] == "True"
    assert float(first[2]) <= float(first[7])


def test_converge_quick(tmp_path, capsys):
    text = '{"law": {"family": "two-atom", "alpha": 1.0}, "n_grid": [10, 20], "replicas": 200}'
    code, out = run(tmp_path, "converge", text, "--seed", "5", "--threads", "2")
    report = json.loads((out / "report.json").read_text())
    assert code == (0 if report["passed"] else 1)
    assert (out / "ks.csv").exists() and (out / "identity.csv").exists()
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(lines) == len(report["criteria"])


def test_exit_budget(tmp_path):
    text = '{"law": {"family": "two-atom", "alpha": 1.0}, "n_grid": [10], "replicas": 100, "total_budget": 1}'
    assert run(tmp_path, "converge", text, "--seed", "1")[0] == cli.EXIT_BUDGET
    stable = '{"stable": {"alpha": 1.0}, "t_grid": [3.0], "b": 2.0, "replicas": 5}'
    assert run(tmp_path, "simulate-stable", stable, "--seed", "1", "--max-atoms", "5")[0] == cli.EXIT_BUDGET


def test_exit_criterion(tmp_path):
    # a p-value can never exceed 1, so the final-n criteria must fail
    text = ('{"law": {"family": "two-atom", "alpha": 1.0}, "n_grid": [10], "replicas": 100, '
            '"p_min": 1.0}')
    assert run(tmp_path, "converge", text, "--seed", "1")[0] == cli.EXIT_CRITERION


def test_exit_numeric(tmp_path):
    assert run(tmp_path, "oracle", '{"alpha": 8.0, "b": 1e-6, "theta": 1e8}')[0] == cli.EXIT_NUMERIC
    assert run(tmp_path, "oracle", '{"alpha": 3.0, "b": 1000.0, "theta": 1000.0}')[0] == cli.EXIT_NUMERIC


def test_exit_usage(tmp_path, capsys):
    assert run(tmp_path, "oracle", '{"alpha": 1, "betta": 2}')[0] == cli.EXIT_USAGE
    assert "betta" in capsys.readouterr().err
    assert run(tmp_path, "converge", TWO_ATOM)[0] == cli.EXIT_USAGE           # no seed
    assert cli.main(["oracle", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main(["oracle"])
    assert e.value.code == cli.EXIT_USAGE
    assert run(tmp_path, "oracle", '{"alpha": 1}', "--threads", "0")[0] == cli.EXIT_USAGE


def test_console_script_version():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "brstable.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "brstable" in out.stdout
