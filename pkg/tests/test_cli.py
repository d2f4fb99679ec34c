import numpy as np
import pytest

from reweighted import cli
from reweighted.io import read_config, read_csv


def test_grid_parsing():
    assert cli.parse_grid("2:10:4") == [2, 6, 10]
    assert cli.parse_grid("1,3,5") == [1, 3, 5]


def test_resolve_precedence():
    p = cli.resolve("cs-phase", {"reps": "5", "eta": "1e-6"}, {"reps": 7, "eta": None})
    assert p["reps"] == 7 and p["eta"] == 1e-6 and p["n"] == 128
    with pytest.raises(cli.UsageError):
        cli.resolve("cs-phase", {"bogus": "1"}, {})
    with pytest.raises(cli.UsageError):
        cli.resolve("cs-phase", {"reps": "many"}, {})


def test_cs_phase_and_manifest_round_trip(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = ["cs-phase", "--n", "24", "--s-grid", "2,4", "--m-grid", "8,16", "--reps", "3", "--k", "4", "--seed", "1"]
    assert cli.main(args + ["--out", str(out1)]) == 0
    manifest = out1 / cli.MANIFEST
    assert read_config(manifest)["reps"] == "3"
    assert cli.main(["cs-phase", "--config", str(manifest), "--out", str(out2)]) == 0
    assert (out1 / "cs_phase.csv").read_bytes() == (out2 / "cs_phase.csv").read_bytes()
    header, rows = read_csv(out1 / "cs_phase.csv")
    assert header[:2] == ["s", "m"] and len(rows) == 4


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["cs-phase", "--n", "10", "--s-grid", "1", "--m-grid", "5", "--reps", "1", "--k", "2"]) == 0
    assert (tmp_path / "env" / "cs_phase.csv").is_file()


def test_missing_dataset_exits_one(tmp_path, capsys):
    code = cli.main(["collab", "--data", str(tmp_path / "u.data"), "--out", str(tmp_path)])
    assert code == 1
    assert "DatasetMissing" in capsys.readouterr().err


def test_usage_errors_exit_two(tmp_path, capsys):
    assert cli.main(["cs-phase", "--bogus"]) == 2
    assert cli.main(["nonsense"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 3\n")
    assert cli.main(["cs-phase", "--config", str(bad), "--out", str(tmp_path)]) == 2
    (tmp_path / "p.csv").write_text("A,1,0\nz,1\n")
    (tmp_path / "w.csv").write_text("1,1\n")
    assert cli.main(["certify", "--problem", str(tmp_path / "p.csv"), "--weights", str(tmp_path / "w.csv"), "--out", str(tmp_path)]) == 2


def test_certify_writes_report_row(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("A,1,0,0\nA,0,1,0\nA,0,0,1\nx,2,0,-1\n")
    (tmp_path / "w.csv").write_text("2,0.5,1\n")
    args = ["certify", "--problem", str(tmp_path / "p.csv"), "--weights", str(tmp_path / "w.csv"), "--out", str(tmp_path)]
    assert cli.main(args) == 0
    header, rows = read_csv(tmp_path / "certificate.csv")
    assert header == ["valid", "strict_bound", "delta_hat", "mu_hat", "a0_constant"]
    valid, bound, delta, mu, c = rows[0]
    assert valid == "true"
    assert float(bound) == 0.0 and float(delta) == 0.0 and float(mu) == 0.0
    assert float(c) == pytest.approx(0.5 * np.sqrt(0.25 + 1.0))


def test_certify_singular_gram_exits_one(tmp_path):
    (tmp_path / "p.csv").write_text("A,1,1\nx,1,1\n")
    (tmp_path / "w.csv").write_text("1,1\n")
    args = ["certify", "--problem", str(tmp_path / "p.csv"), "--weights", str(tmp_path / "w.csv"), "--out", str(tmp_path)]
    assert cli.main(args) == 1


def test_complete_triplets(tmp_path, capsys):
    rng = np.random.default_rng(0)
    A = np.outer(rng.standard_normal(8), rng.standard_normal(6))
    cells = [(i, j) for i in range(8) for j in range(6) if (i + j) % 3]
    lines = ["row,col,value"] + [f"{i},{j},{float(A[i, j])!r}" for i, j in cells]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    args = ["complete", "--data", str(tmp_path / "t.csv"), "--out", str(tmp_path), "--tol", "1e-8", "--K", "10"]
    assert cli.main(args) == 0
    header, rows = read_csv(tmp_path / "completed.csv")
    assert header == ["row", "col", "value"] and len(rows) == 48
    completed = np.array([float(r[2]) for r in rows]).reshape(8, 6)
    assert np.linalg.norm(completed - A) < 1e-2 * np.linalg.norm(A)


def test_inpaint_writes_images(tmp_path, capsys):
    args = ["inpaint", "--size", "16", "--rank", "2", "--K", "3", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    for name in ("truth", "observed", "nnm", "wsst", "nnm_diff", "wsst_diff"):
        assert (tmp_path / f"{name}.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")
