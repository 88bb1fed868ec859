import csv
import json
import subprocess
import sys

import pytest

from lsfem import __version__
from lsfem.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main, read_config


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def read_csv(path):
    lines = path.read_text().splitlines()
    header = [line for line in lines if line.startswith("#")]
    rows = list(csv.DictReader(line for line in lines if not line.startswith("#")))
    return header, rows


def check_header(header_lines):
    assert header_lines[0] == f"# lsfem {__version__}"
    config = json.loads(header_lines[1].removeprefix("# config: "))
    assert "families" in config and "tol_inf" in config
    return config


# -- mesh -------------------------------------------------------------------------


def test_mesh_stats(tmp_path, capsys):
    assert run(tmp_path, "mesh", "--family", "square-right", "--n", "2") == EXIT_OK
    assert capsys.readouterr().out.startswith("V=9 E=16 T=8")
    payload = json.loads((tmp_path / "mesh_square-right_N2.json").read_text())
    assert payload["metadata"]["version"] == __version__
    assert payload["metadata"]["config"]["n"] == 2
    assert len(payload["vertices"]) == 9 and len(payload["triangles"]) == 8


def test_mesh_rejects_odd_lshape(tmp_path, capsys):
    assert run(tmp_path, "mesh", "--family", "lshape-left", "--n", "3") == EXIT_USAGE
    assert "N must be even for L-shape" in capsys.readouterr().err


def test_mesh_is_deterministic(tmp_path):
    argv = ["mesh", "--family", "square-nonuniform", "--n", "4", "--seed", "7"]
    path = tmp_path / "mesh_square-nonuniform_N4.json"
    assert run(tmp_path, *argv) == EXIT_OK
    first = path.read_bytes()
    assert run(tmp_path, *argv) == EXIT_OK
    assert path.read_bytes() == first


@pytest.mark.parametrize("argv", [
    ["mesh", "--family", "square-right"],
    ["mesh", "--family", "circle", "--n", "2"],
    ["mesh", "--family", "square-right", "--n", "two"],
    ["mesh", "--family", "square-right", "--n", "0"],
    ["eig", "--family", "square-right", "--n", "4", "--format", "xml"],
    ["eig", "--family", "square-right", "--n", "4", "--lambda", "-1"],
    ["eig", "--family", "square-right", "--n", "4", "--tol-inf", "0"],
    ["eig", "--family", "square-right", "--n", "4", "--bogus"],
    ["fly"],
    [],
])
def test_usage_errors(tmp_path, argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err


# -- eig --------------------------------------------------------------------------


def test_eig_csv_min_modulus(tmp_path):
    assert run(tmp_path, "eig", "--family", "square-right", "--n", "16", "--lambda", "1") == EXIT_OK
    header, rows = read_csv(tmp_path / "spectrum_square-right_N16_lambda1.csv")
    config = check_header(header)
    assert config["n"] == 16 and config["lambdas"] == [1.0]
    smallest = min(rows, key=lambda r: float(r["modulus"]))
    assert smallest["index"] == "0"
    assert abs(float(smallest["modulus"]) - 37.2660722) <= 0.01 * 37.2660722


def test_eig_json_has_family_counts(tmp_path):
    argv = ["eig", "--family", "square-crossed", "--n", "4", "--lambda", "100", "--format", "json"]
    assert run(tmp_path, *argv) == EXIT_OK
    payload = json.loads((tmp_path / "spectrum_square-crossed_N4_lambda100.json").read_text())
    counts = payload["family_count"]
    assert set(counts) == {"dim_sigma", "dim_ker_D", "finite_count", "rank_D", "rank_G"}
    assert counts["finite_count"] == counts["rank_G"] == len(payload["eigenvalues"])
    assert payload["metadata"]["config"]["format"] == "json"


def test_eig_high_lambda_without_deflation_never_crashes(tmp_path, capsys):
    code = run(tmp_path, "eig", "--family", "square-right", "--n", "16", "--lambda", "1e8")
    err = capsys.readouterr().err
    assert code in (EXIT_OK, EXIT_NUMERICAL)
    if code == EXIT_NUMERICAL:
        assert "--deflate-trace" in err


def test_eig_near_singular_advisory(tmp_path, capsys):
    assert run(tmp_path, "eig", "--family", "square-right", "--n", "4", "--lambda", "1e8") == EXIT_NUMERICAL
    assert "--deflate-trace" in capsys.readouterr().err
    assert run(tmp_path, "eig", "--family", "square-right", "--n", "4", "--lambda", "1e8",
               "--deflate-trace") == EXIT_OK


def test_eig_francis_backend_and_eigenfunctions(tmp_path):
    argv = ["eig", "--family", "lshape-left", "--n", "4", "--backend", "francis", "--eigenfunctions", "2"]
    assert run(tmp_path, *argv) == EXIT_OK
    vtk = sorted(tmp_path.glob("eigenfunction_*.vtk"))
    assert len(vtk) == 2
    title = vtk[0].read_text().splitlines()[1]
    assert title.startswith(f"lsfem {__version__} config:")


# -- convergence ------------------------------------------------------------------


def test_convergence_order(tmp_path, capsys):
    argv = ["convergence", "--family", "square-right", "--lambda", "1", "--levels", "4,8,16,32"]
    assert run(tmp_path, *argv) == EXIT_OK
    summary = json.loads((tmp_path / "convergence_square-right_lambda1_summary.json").read_text())
    assert 1.8 <= summary["order1"] <= 2.2
    assert json.loads(capsys.readouterr().out)["order1"] == summary["order1"]
    header, rows = read_csv(tmp_path / "convergence_square-right_lambda1.csv")
    check_header(header)
    assert [int(r["N"]) for r in rows] == [4, 8, 16, 32]


def test_convergence_missing_reference(tmp_path, capsys):
    argv = ["convergence", "--family", "square-right", "--lambda", "3", "--levels", "4"]
    assert run(tmp_path, *argv) == EXIT_USAGE
    assert "no reference" in capsys.readouterr().err


def test_convergence_single_level(tmp_path):
    assert run(tmp_path, "convergence", "--family", "square-right", "--levels", "4") == EXIT_OK
    summary = json.loads((tmp_path / "convergence_square-right_lambda1_summary.json").read_text())
    assert summary["order1"] is None and summary["order2"] is None
    _, rows = read_csv(tmp_path / "convergence_square-right_lambda1.csv")
    assert len(rows) == 1 and float(rows[0]["err1"]) > 0


# -- sweep ------------------------------------------------------------------------


def test_sweep_plan_manifest(tmp_path):
    assert run(tmp_path, "sweep", "--plan-only") == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["n_runs"] == 48 and len(manifest["runs"]) == 48
    assert {r["family"] for r in manifest["runs"]} == {"square-right", "square-crossed", "square-nonuniform"}
    assert manifest["metadata"]["config"]["lambdas"] == [1.0, 100.0, 1e4, 1e8]


SWEEP = ["sweep", "--family", "square-right,square-crossed", "--lambda", "1,1e8", "--levels", "2,4"]


def test_sweep_failure_exit_codes(tmp_path):
    # square-right at lambda = 1e8 without deflation fails on these levels
    assert run(tmp_path / "strict", *SWEEP) == EXIT_NUMERICAL
    manifest = json.loads((tmp_path / "strict" / "manifest.json").read_text())
    assert manifest["runs"][-1]["status"] == "failed"
    assert "deflate" in manifest["runs"][-1]["error"]

    assert run(tmp_path / "lenient", *SWEEP, "--keep-going") == EXIT_OK
    manifest = json.loads((tmp_path / "lenient" / "manifest.json").read_text())
    status = [r["status"] for r in manifest["runs"]]
    assert len(status) == 8 and "failed" in status and status.count("ok") >= 4
    for r in manifest["runs"]:
        if r["status"] == "ok":
            header, rows = read_csv(tmp_path / "lenient" / r["file"])
            check_header(header)
            assert len(rows) == r["count"]


def test_sweep_rerun_is_byte_identical(tmp_path, monkeypatch):
    argv = ["sweep", "--family", "square-right,lshape-left", "--lambda", "1,100", "--levels", "4,8"]
    assert run(tmp_path / "a", *argv) == EXIT_OK
    monkeypatch.setenv("LSFEM_THREADS", "3")
    assert run(tmp_path / "a2", *argv) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "a2").iterdir())
    # the out directory is part of the echoed configuration; rerun into the same place
    before = {name: (tmp_path / "a" / name).read_bytes() for name in files}
    monkeypatch.delenv("LSFEM_THREADS")
    assert run(tmp_path / "a", *argv) == EXIT_OK
    assert before == {name: (tmp_path / "a" / name).read_bytes() for name in files}
    spectra = [name for name in files if name.startswith("spectrum_")]
    for name in spectra:
        a = (tmp_path / "a" / name).read_text().splitlines()[2:]
        b = (tmp_path / "a2" / name).read_text().splitlines()[2:]
        assert a == b


# -- config file ----------------------------------------------------------------------


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run configuration\n[run]\nfamily = \"square-crossed\"\nn = 2\nlambda = 1e2\n"
                   "deflate_trace = true\nseed = 3\n")
    assert read_config(cfg)["families"] == "square-crossed"
    assert main(["eig", "--config", str(cfg), "--n", "4", "--out", str(tmp_path)]) == EXIT_OK
    header, _ = read_csv(tmp_path / "spectrum_square-crossed_N4_lambda100.csv")
    config = check_header(header)
    assert config["n"] == 4 and config["deflate_trace"] is True and config["seed"] == 3


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["mesh", "--config", str(bad), "--n", "2"]) == EXIT_USAGE
    assert "unknown key" in capsys.readouterr().err
    assert main(["mesh", "--config", str(tmp_path / "missing.cfg"), "--n", "2"]) == EXIT_USAGE


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "lsfem", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
    out = subprocess.run([sys.executable, "-m", "lsfem", "mesh", "--family", "lshape-left", "--n", "3"],
                         capture_output=True, text=True)
    assert out.returncode == EXIT_USAGE and "N must be even for L-shape" in out.stderr
