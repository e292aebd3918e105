import csv
import subprocess
import sys

import numpy as np
import pytest

from husimi_egorov.cli import main
from husimi_egorov.estimator import ExpectationSeries
from husimi_egorov.exceptions import ConfigError, ContractViolation
from husimi_egorov.experiment import (
    PRESETS,
    ExperimentConfig,
    convergence_table,
    harmonic_exact_series,
    parse_config,
    preset_config,
    read_series_csv,
    serialize_config,
    series_path,
    time_averaged_error,
    write_series_csv,
)
from husimi_egorov.phase_space import builtin_observables
from husimi_egorov.potentials import Harmonic
from husimi_egorov.states import GaussianSuperposition, initial_expectation_oracle

TINY = """\
[experiment]
name = tiny
potential = harmonic
dim = 1
centers = 0.5 0.3
epsilon = 0.1
n1 = 256
n2 = 64
h1 = 0.05
h2 = 0.05
t_final = 0.5
record_every = 0.25
output = {out}

[reference]
kind = harmonic-exact
"""


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_roundtrip(name):
    cfg = preset_config(name)
    assert parse_config(serialize_config(cfg)) == cfg


def test_preset_with_overrides():
    cfg = parse_config("[experiment]\npreset = D-desk\nepsilon = 0.1\nn1 = 500\nn2 = 50\nh1 = 0.01\nh2 = 0.01\n"
                       "[reference]\nL = 3\n")
    assert cfg.potential == "torsional" and cfg.epsilon == [0.1] and cfg.n1 == [500]
    assert cfg.t_final == 5.0 and cfg.reference_kind == "grid" and cfg.reference_L == [3.0]


def test_defaults_and_observables():
    cfg = ExperimentConfig().validate()
    assert cfg.observable_names() == ["q1", "q2", "p1", "p2", "potential", "kinetic", "total"]
    assert preset_config("henon-heiles-desk").observable_names() == ["potential", "kinetic", "total"]


@pytest.mark.parametrize(
    "text,field,line",
    [
        ("[experiment]\npotential = harmonic\nn1 = abc\n", "n1", 3),
        ("[experiment]\n\nbogus = 1\n", "bogus", 3),
        ("[experiment]\nepsilon = 0.1, 0.05\nn1 = 1, 2, 3\n", "n1", 3),
        ("[experiment]\nmethod = exact\n", "method", 2),
        ("[experiment]\ndim = 1\ncenters = 1 0 0 0\n", "centers", 3),
        ("[experiment]\n[reference]\nkind = numerical\n", "kind", 3),
        ("[experiment]\nobservables = q7\n", "observables", 2),
    ],
)
def test_config_errors_carry_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert info.value.line == line


def test_config_structure_errors():
    with pytest.raises(ConfigError):
        parse_config("[reference]\nkind = none\n")
    with pytest.raises(ConfigError):
        parse_config("[experiment]\n[plots]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_config("no section header")
    with pytest.raises(ConfigError):
        preset_config("Z")


def test_series_csv_roundtrip(tmp_path):
    t = np.array([0.0, 0.1, 0.2])
    s = ExpectationSeries(t, {"q1": np.array([1 / 3, np.pi, -1e-17]), "total": np.array([0.5, 0.25, 1.0])},
                          {"method": "husimi-corrected"})
    ref = ExpectationSeries(t, {"q1": np.zeros(3), "total": np.full(3, 0.5)})
    path = tmp_path / "s.csv"
    write_series_csv(path, s, ref)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "observable", "method", "value", "reference", "error"]
    assert rows[1] == ["0", "q1", "husimi-corrected", "0.33333333333333331", "0", "0.33333333333333331"]
    back, back_ref = read_series_csv(path)
    np.testing.assert_array_equal(back["q1"], s["q1"])
    np.testing.assert_array_equal(back_ref["total"], ref["total"])
    assert back.method == "husimi-corrected"
    write_series_csv(path, s)
    with open(path) as fh:
        assert fh.readline().strip() == "time,observable,method,value"
    assert read_series_csv(path)[1] is None


def test_series_path():
    assert series_path("out", "D", 0.05, "wigner").endswith("D_eps0p05_wigner.csv")


def test_time_averaged_error_groups():
    t = np.array([0.0, 1.0, 2.0])
    s = ExpectationSeries(t, {"q1": np.full(3, 3.0), "q2": np.full(3, 4.0), "total": np.array([0.0, 1.0, 0.0])})
    ref = ExpectationSeries(t, {"q1": np.zeros(3), "q2": np.zeros(3), "total": np.zeros(3)})
    err, groups = time_averaged_error(s, ref)
    assert groups == {"position": 5.0, "total": 0.5}
    assert err == pytest.approx(2.75)


def test_convergence_slope():
    eps = [0.1, 0.05, 0.01]
    tab = convergence_table([(e, 3 * e**2) for e in eps])
    assert tab.slope == pytest.approx(2.0)
    assert np.exp(tab.intercept) == pytest.approx(3.0)
    with pytest.raises(ContractViolation):
        convergence_table([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(ContractViolation):
        convergence_table([(0.1, 1.0), (0.05, 0.0), (0.01, 0.1)])


def test_harmonic_exact_series_initial_values():
    cfg = preset_config("harmonic-sanity")
    eps = cfg.epsilon[0]
    names = cfg.observable_names()
    s = harmonic_exact_series(cfg, eps, np.array([0.0, 1.0]), names)
    psi0 = GaussianSuperposition.single(cfg.centers[0], eps)
    pot = Harmonic(2)
    for a in builtin_observables(pot):
        assert s[a.name][0] == pytest.approx(initial_expectation_oracle(psi0, a, pot), abs=1e-13)
    assert s["total"][1] == pytest.approx(s["total"][0])
    with pytest.raises(ConfigError):
        harmonic_exact_series(preset_config("D-desk"), 0.1, np.array([0.0]), ["q1"])


def test_cli_preset_prints_parseable_ini(capsys):
    assert main(["preset", "E-desk"]) == 0
    assert parse_config(capsys.readouterr().out) == preset_config("E-desk")


def test_cli_simulate_is_deterministic(tmp_path):
    cfg_path = tmp_path / "tiny.ini"
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cfg_path.write_text(TINY.format(out=out))
        assert main(["simulate", "--config", str(cfg_path), "--method", "husimi-corrected",
                     "--method", "wigner", "--threads", "2"]) == 0
        outputs.append(out)
    for method in ("husimi-corrected", "wigner"):
        a = (outputs[0] / f"tiny_eps0p1_{method}.csv").read_bytes()
        b = (outputs[1] / f"tiny_eps0p1_{method}.csv").read_bytes()
        assert a == b
        assert a.startswith(b"time,observable,method,value,reference,error\n")
        assert (outputs[0] / f"tiny_eps0p1_{method}.json").exists()
    assert (outputs[0] / "tiny_convergence.csv").exists()
    assert parse_config((outputs[0] / "tiny.ini").read_text()).name == "tiny"
    series, ref = read_series_csv(outputs[0] / "tiny_eps0p1_husimi-corrected.csv")
    np.testing.assert_allclose(series["q1"], ref["q1"], atol=1e-2)


def test_cli_overrides_and_converge(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.ini"
    out = tmp_path / "run"
    cfg_path.write_text(TINY.format(out=tmp_path / "unused"))
    args = ["simulate", "--config", str(cfg_path), "--output", str(out), "--n1", "512", "--seed", "3",
            "--t-final", "0.25"]
    for eps in ("0.2", "0.1", "0.05"):
        args += ["--epsilon", eps]
    assert main(args) == 0
    assert "slopes" in capsys.readouterr().out
    cfg = parse_config((out / "tiny.ini").read_text())
    assert cfg.n1 == [512] and cfg.seed == 3 and cfg.t_final == 0.25 and cfg.epsilon == [0.2, 0.1, 0.05]
    table = tmp_path / "conv.csv"
    assert main(["converge", "--inputs", str(out / "tiny_eps*_husimi-corrected.csv"), "--output", str(table)]) == 0
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["epsilon"]) for r in rows] == [0.05, 0.1, 0.2]
    assert {r["method"] for r in rows} == {"husimi-corrected"}


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nn1 = many\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["simulate", "--config", "no-such-preset"]) == 2
    assert main(["reference", "--config", "harmonic-sanity", "--output", str(tmp_path / "r")]) == 2
    assert main(["converge", "--inputs", str(tmp_path / "none*.csv"), "--output", str(tmp_path / "c.csv")]) == 2
    unstable = tmp_path / "unstable.ini"
    unstable.write_text(
        "[experiment]\npotential = free\ndim = 1\ncenters = 0 5000\nmethod = husimi-naive\n"
        f"n1 = 16\nh1 = 0.1\nt_final = 1\noutput = {tmp_path / 'u'}\n"
    )
    assert main(["simulate", "--config", str(unstable)]) == 3
    assert "instability" in capsys.readouterr().err
    assert (tmp_path / "u" / "experiment.ini").exists()


def test_cli_reference_subcommand(tmp_path):
    cfg = tmp_path / "ref.ini"
    cfg.write_text(
        "[experiment]\nname = r\npotential = torsional\ndim = 1\ncenters = 0.5 0\nepsilon = 0.1\n"
        f"t_final = 0.2\nrecord_every = 0.1\noutput = {tmp_path / 'out'}\n"
        "[reference]\nkind = grid\nL = 3\nn = 128\nh = 0.01\n"
    )
    assert main(["reference", "--config", str(cfg)]) == 0
    series, _ = read_series_csv(tmp_path / "out" / "r_eps0p1_reference.csv")
    np.testing.assert_allclose(series.times, [0.0, 0.1, 0.2])
    assert series.method == "reference"


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "husimi_egorov.cli", "preset", "D"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("[experiment]\nname = D\n")


def test_read_series_rejects_other_csvs(tmp_path):
    path = tmp_path / "conv.csv"
    path.write_text("method,epsilon,error,slope\nx,0.1,0.01,2.0\n")
    with pytest.raises(ContractViolation):
        read_series_csv(path)
