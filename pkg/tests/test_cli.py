import json
import subprocess
import sys
from pathlib import Path

import pytest

from riesz_she import cli

GRID = {"T": 0.05, "n_t": 20, "L": 4.0, "n_x": 64, "N": 1.0}


def write(tmp_path, **kw):
    d = {"schema_version": 1, "experiment": "alpha-to-one", "grid": GRID, "alphas": [0.5, 0.9], "M": 40, "seed": 3}
    d.update(kw)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(d))
    return p


def only_dir(root):
    (d,) = [p for p in Path(root).iterdir() if p.is_dir()]
    return d


def test_run_success(tmp_path, capsys):
    p = write(tmp_path, alphas=[0.5])
    assert cli.main(["run", str(p), "--output", str(tmp_path / "out")]) == cli.EXIT_OK
    assert (only_dir(tmp_path / "out") / "norms.csv").exists()


def test_run_tolerance_failure(tmp_path, capsys):
    tail = {"a": 0.4, "deltas": [2.0, 1.2], "epsilon": 1e-9}
    p = write(tmp_path, experiment="tightness", tail=tail, time_stride=2, space_stride=2)
    assert cli.main(["run", str(p), "--output", str(tmp_path / "out")]) == cli.EXIT_TOLERANCE
    assert "FAIL  max tail probability reaches 0" in capsys.readouterr().out


def test_unknown_key_is_config_error(tmp_path, capsys):
    p = write(tmp_path, colour="red")
    assert cli.main(["run", str(p)]) == cli.EXIT_CONFIG
    assert "unknown keys" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


def test_blowup_exit(tmp_path, capsys):
    p = write(tmp_path, sigma={"kind": "linear", "lambda": 1e300})
    assert cli.main(["run", str(p), "--output", str(tmp_path / "out")]) == cli.EXIT_BLOWUP
    assert "blow-up budget" in capsys.readouterr().err


def test_seed_env_override(tmp_path, monkeypatch, caplog):
    p = write(tmp_path, alphas=[0.5])
    monkeypatch.setenv("RIESZ_SHE_SEED", "11")
    assert cli.main(["run", str(p), "--output", str(tmp_path / "out")]) == cli.EXIT_OK
    echo = json.loads((only_dir(tmp_path / "out") / "config.json").read_text())
    assert echo["seed"] == 11
    assert "RIESZ_SHE_SEED=11 overrides" in caplog.text


def test_workers_flag_does_not_change_output(tmp_path):
    p = write(tmp_path, M=60)
    code_a = cli.main(["run", str(p), "--workers", "2", "--output", str(tmp_path / "a")])
    code_b = cli.main(["run", str(p), "--output", str(tmp_path / "b")])
    assert code_a == code_b
    a, b = only_dir(tmp_path / "a"), only_dir(tmp_path / "b")
    assert a.name == b.name
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


@pytest.mark.parametrize(
    "overrides,code",
    [
        (None, cli.EXIT_OK),
        ('{"riesz_constant": 1e-300}', cli.EXIT_TOLERANCE),
        ("riesz_constant=1e-300", cli.EXIT_TOLERANCE),
        ("riesz_constant=oops", cli.EXIT_CONFIG),
    ],
)
def test_verify_kernels(tmp_path, overrides, code):
    args = ["verify-kernels", "--output", str(tmp_path)]
    if overrides:
        args += ["--tol-overrides", overrides]
    assert cli.main(args) == code


def test_verify_kernels_overrides_file(tmp_path):
    f = tmp_path / "tol.json"
    f.write_text('{"riesz_constant": 1e-300}')
    assert cli.main(["verify-kernels", "--tol-overrides", str(f), "--output", str(tmp_path)]) == cli.EXIT_TOLERANCE


def test_emit_plots(tmp_path, capsys):
    p = write(tmp_path, alphas=[0.5])
    cli.main(["run", str(p), "--output", str(tmp_path / "out")])
    d = only_dir(tmp_path / "out")
    (d / "norms.csv").unlink()
    capsys.readouterr()
    assert cli.main(["emit-plots", str(d)]) == cli.EXIT_OK
    assert (d / "norms.csv").exists()
    assert str(d / "norms.csv") in capsys.readouterr().out


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "riesz_she.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "verify-kernels" in out.stdout
