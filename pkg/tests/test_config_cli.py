import csv
import json

import numpy as np
import pytest

from advdiff import ConfigError, load_config
from advdiff.cli import main
from advdiff.config import flatten, load_schema
from advdiff.grid import build_grid, write_field_csv

PI = np.pi


def write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


# config loading

def test_defaults_resolve_every_key():
    exp = load_config()
    flat = flatten(exp.config)
    assert set(flat) == set(flatten(load_schema()))
    derived = exp.metadata()["derived"]
    assert derived["M"] == 1.0 and derived["n_steps"] == 32
    assert derived["krylov"]["rtol"] == 1e-10


def test_dotted_keys_and_sections(tmp_path):
    path = write(tmp_path, 'grid.n_interior = [8]\n[rho]\nkind = "affine"\nvalue = 1.0\nslope = 2.0\n')
    exp = load_config(path)
    assert exp.grid.size == 8 and exp.rho(0.5) == 2.0
    assert exp.name == "exp"


@pytest.mark.parametrize(
    "text, key",
    [
        ("[grid]\nn_interior = [1]\n", "grid.n_interior"),
        ("[grid]\nextents = [[1.0, 1.0]]\n", "grid.extents"),
        ("[grid]\nbogus = 3\n", "grid.bogus"),
        ("[nope]\nx = 1\n", "nope"),
        ("[time]\ntheta = 0.3\n", "time.theta"),
        ("[time]\nT = -1.0\n", "time.T"),
        ("[inverse]\ntau = 1.0\n", "inverse.tau"),
        ("[inverse]\nmethod = \"newton\"\n", "inverse.method"),
        ("[inverse]\nnoise_level = -0.1\n", "inverse.noise_level"),
        ("[spectrum]\nk = 0\n", "spectrum.k"),
        ("[transform]\nN = [1.0]\n", "transform.N"),
        ("[transform]\ns_asymptotic = [10.0, 800.0, 900.0]\n", "transform.s_asymptotic"),
        ("[rho]\nkind = \"affine\"\nvalue = 0.0\nslope = 1.0\n", "rho"),
        ("[source]\nfile = \"missing.csv\"\n", "source.file"),
        ("[coeffs.a]\nvalue = -1.0\n", "coeffs.a"),
    ],
)
def test_invalid_configs_name_key(tmp_path, text, key):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, text))
    assert info.value.key.startswith(key)
    assert key in str(info.value)


def test_spectral_on_advective_config_rejected(tmp_path):
    path = write(tmp_path, '[coeffs.b]\nvalue = [0.5]\n[inverse]\nmethod = "spectral"\n')
    load_config(path, command="forward")
    with pytest.raises(ConfigError, match="symmetry_flag"):
        load_config(path, command="invert")


def test_positivity_optional_outside_verify(tmp_path):
    path = write(tmp_path, '[rho]\nkind = "affine"\nvalue = 0.0\nslope = 1.0\nassert_positive = false\n')
    assert load_config(path, command="forward").rho.rho0(1.0) == 0.0
    with pytest.raises(ConfigError):
        load_config(path, command="verify")


def test_coefficient_and_source_files(tmp_path):
    g = build_grid(1, [(0.0, 1.0)], [6])
    write_field_csv(tmp_path / "c.csv", g, -np.linspace(0, 1, 6))
    write_field_csv(tmp_path / "f.csv", g, np.arange(6.0))
    path = write(tmp_path, '[grid]\nn_interior = [6]\n[coeffs.c]\nfile = "c.csv"\n[source]\nfile = "f.csv"\n')
    exp = load_config(path)
    np.testing.assert_array_equal(exp.f_true, np.arange(6.0))
    assert exp.coeffs.c_sup == 1.0 and exp.M == 2.0


def test_overrides():
    exp = load_config(overrides={"grid.n_interior": [5], "transform.M": 0.0})
    assert exp.grid.size == 5 and exp.M == 0.0


# commands

FORWARD = """
[grid]
n_interior = [32]
[rho]
kind = "affine"
value = 1.0
slope = {slope}
[time]
n_steps = 33
"""


def test_forward_manufactured(tmp_path):
    path = write(tmp_path, FORWARD.format(slope=PI**2))
    out = tmp_path / "out"
    assert run_cli("forward", "--config", path, "--out", out) == 0
    rows = list(csv.DictReader(open(out / "final.csv")))
    x = np.array([float(r["x"]) for r in rows])
    u = np.array([float(r["value"]) for r in rows])
    assert np.abs(u - np.sin(PI * x)).max() <= 5 * (1 / 33) ** 2
    meta = json.loads((out / "metadata_forward.json").read_text())
    assert meta["reference"]["max_abs_error"] == pytest.approx(np.abs(u - np.sin(PI * x)).max(), rel=1e-6)
    assert (out / "trajectory" / "manifest.json").exists()


def test_forward_zero_source(tmp_path):
    path = write(tmp_path, '[grid]\nn_interior = [8]\n[source]\nkind = "zero"\n')
    assert run_cli("forward", "--config", path, "--out", tmp_path / "o") == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "final.csv")))
    assert all(float(r["value"]) == 0.0 for r in rows)


def test_validation_exit_code_and_error_json(tmp_path, capsys):
    path = write(tmp_path, "[grid]\nn_interior = [1]\n")
    assert run_cli("forward", "--config", path, "--out", tmp_path / "o") == 2
    err = json.loads((tmp_path / "o" / "error.json").read_text())
    assert err["key"] == "grid.n_interior" and err["exit_code"] == 2
    assert "grid.n_interior" in capsys.readouterr().err


def test_verify_unit_and_sinusoidal(tmp_path):
    small = "[grid]\nn_interior = [16]\n[transform]\nn_radii = 4\nn_angles = 3\n"
    unit = write(tmp_path, small, "unit.toml")
    assert run_cli("verify", "--config", unit, "--out", tmp_path / "u") == 0
    rep = json.loads((tmp_path / "u" / "lemma_rho_N2.json").read_text())
    real = [r["ratio"] for r in rep["samples"] if r["s_im"] == 0.0]
    assert real and np.allclose(real, 1.0, rtol=1e-12)
    sin = write(tmp_path, small + '[rho]\nkind = "sinusoidal-offset"\n', "sin.toml")
    assert run_cli("verify", "--config", sin, "--out", tmp_path / "s") == 0
    summary = json.loads((tmp_path / "s" / "verify.json").read_text())
    assert summary["pass"] and all(summary["checks"].values())
    for name in ("asymptotic.json", "transform_residual.csv", "lemma_uhat_N32.csv"):
        assert (tmp_path / "s" / name).exists()


def test_verify_rejects_vanishing_amplitude(tmp_path):
    path = write(tmp_path, '[rho]\nkind = "affine"\nvalue = 0.0\nslope = 1.0\n')
    assert run_cli("verify", "--config", path, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o" / "lemma_rho_N2.json").exists()


def test_invert_batch(tmp_path):
    path = write(tmp_path, "[inverse]\nnoise_level = 0.01\nseeds = [0, 1, 2, 3, 4]\n")
    out = tmp_path / "o"
    assert run_cli("invert", "--config", path, "--out", out, "--jobs", 3) == 0
    rows = list(csv.DictReader(open(out / "aggregate.csv")))
    assert [r["seed"] for r in rows] == ["0", "1", "2", "3", "4", "median"]
    for s in range(5):
        assert (out / f"seed_{s}" / "summary.json").exists()
    assert float(rows[-1]["rel_l2"]) <= 0.15


def test_invert_noiseless_and_data_file(tmp_path):
    path = write(tmp_path, "[grid]\nn_interior = [32]\n")
    assert run_cli("invert", "--config", path, "--out", tmp_path / "a") == 0
    summary = json.loads((tmp_path / "a" / "seed_0" / "summary.json").read_text())
    assert summary["metrics"]["rel_l2"] <= 1e-3
    data = tmp_path / "a" / "seed_0" / "data.csv"
    path = write(tmp_path, f'[grid]\nn_interior = [32]\n[inverse]\ndata_file = "{data}"\n', "file.toml")
    assert run_cli("invert", "--config", path, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "seed_0" / "f_est.csv").read_text()
    assert (tmp_path / "b" / "observed" / "f_est.csv").read_text() == a


def test_invert_spectral_nonsymmetric_exit(tmp_path):
    path = write(tmp_path, '[coeffs.b]\nvalue = [0.5]\n[inverse]\nmethod = "spectral"\n')
    assert run_cli("invert", "--config", path, "--out", tmp_path / "o") == 2
    assert "symmetry_flag" in json.loads((tmp_path / "o" / "error.json").read_text())["message"]


def test_spectrum_table(tmp_path):
    path = write(tmp_path, '[grid]\nn_interior = [32]\n[spectrum]\npropagator = "exact"\n')
    assert run_cli("spectrum", "--config", path, "--out", tmp_path / "o") == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "spectrum.csv")))
    sigma = np.array([float(r["sigma"]) for r in rows])
    closed = np.array([float(r["closed_form"]) for r in rows])
    assert np.all(np.diff(sigma) <= 0) and np.all(sigma > 0)
    assert np.abs(sigma - closed).max() <= 1e-8


def test_numerical_failure_exit(tmp_path):
    path = write(tmp_path, "[time]\ntol = 1e-30\n")
    assert run_cli("forward", "--config", path, "--out", tmp_path / "o") == 3
    assert json.loads((tmp_path / "o" / "error.json").read_text())["error"] == "numerical"


def test_describe(tmp_path, capsys):
    path = write(tmp_path, "[grid]\nn_interior = [4]\n")
    assert run_cli("forward", "--config", path, "--describe") == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["config"]["grid"]["n_interior"] == [4]
    assert shown["derived"]["M"] == 1.0
