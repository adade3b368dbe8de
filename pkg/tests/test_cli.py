import csv
import os
import subprocess
import sys

import pytest

from gradbound.cli import run

LMS = "[integrand]\nfamily = LinearMinusSqrt\na = 1.0\nt0 = 1.0\n\n[structural]\nn = {n}\n"
QUAD_SOLVE = "[integrand]\nfamily = Quadratic\n[solver]\ndatum = harmonic_quadratic\nN = 8\ntol = 1e-10\ninit_noise = 0.1\n"


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_no_arguments_is_usage_error(capsys):
    assert run([]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_bad_flag_is_usage_error(capsys):
    assert run(["check", "--nope"]) == 2


def test_missing_config_file(tmp_path, capsys):
    assert run(["check", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_check_feasible_window(tmp_path, capsys):
    out = tmp_path / "o"
    assert run(["check", "--config", write(tmp_path, LMS.format(n=3)), "--out", str(out)]) == 0
    assert "[7/12, 2/3)" in capsys.readouterr().out
    assert sorted(os.listdir(out)) == ["check.txt", "structural.csv"]
    rows = list(csv.DictReader((out / "structural.csv").open()))
    assert rows and {r["certified"] for r in rows} <= {"0", "1"}


def test_check_infeasible_window(tmp_path, capsys):
    assert run(["check", "--config", write(tmp_path, LMS.format(n=4)), "--out", str(tmp_path / "o")]) == 1
    assert "infeasible" in capsys.readouterr().err


def test_config_error_exit_code_and_line(tmp_path, capsys):
    cfg = write(tmp_path, "[structural]\nn = 3\nbeta = 0.9\n")
    assert run(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_solve_writes_fields(tmp_path):
    out = tmp_path / "o"
    assert run(["solve", "--config", write(tmp_path, QUAD_SOLVE), "--out", str(out), "--quiet"]) == 0
    assert sorted(os.listdir(out)) == ["field.csv", "gradient.csv", "solve.txt"]
    assert len((out / "field.csv").read_text().splitlines()) == 82


def test_solve_unconverged_exits_one(tmp_path):
    cfg = write(tmp_path, QUAD_SOLVE + "max_iter = 2\n")
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 1


def test_bound_modes_need_plane(tmp_path):
    cfg = write(tmp_path, QUAD_SOLVE + "[structural]\nn = 3\n")
    assert run(["verify-bound", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_verify_bound(tmp_path):
    out = tmp_path / "o"
    text = "[solver]\ndatum = affine\ndatum_A = 1, 0\nN = 16\ntol = 1e-12\n"
    assert run(["verify-bound", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == 0
    assert len((out / "bound.csv").read_text().splitlines()) == 2


def test_sweep_mesh_outputs_only_under_out_and_deterministic(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    text = "[solver]\ndatum = sine\ndatum_amplitude = 0.5\nwidths = 1/12, 1/16, 1/20\ntol = 1e-10\n"
    cfg = write(tmp_path, text)
    for name in ("a", "b"):
        assert run(["sweep-mesh", "--config", cfg, "--out", str(tmp_path / name), "--quiet"]) == 0
    assert sorted(os.listdir(tmp_path)) == ["a", "b", "exp.cfg"]
    for f in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_clamp(tmp_path):
    text = ("[solver]\ndatum = harmonic_quadratic\nwidths = 1/16\ntol = 1e-10\ninit_noise = 0.1\n"
            "clamps = 0.5:2, 0.1:10, 0.01:100\n")
    out = tmp_path / "o"
    assert run(["sweep-clamp", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == 0
    csvs = [f for f in os.listdir(out) if f.endswith(".csv")]
    assert len(csvs) == 1 and len((out / csvs[0]).read_text().splitlines()) == 4


def test_lemmas_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert run(["lemmas", "--config", write(tmp_path, ""), "--out", str(out), "--samples", "2000"]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text
    assert (out / "lemmas.csv").exists()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gradbound"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr.lower()
