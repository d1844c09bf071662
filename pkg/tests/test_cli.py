"""Command-line workflow: exit codes and artifact round trips."""

import json

import numpy as np
import pytest

from pgdm import cli
from pgdm.cli import main
from pgdm.errors import ConvergenceError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end corpus: dataset plus a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    ckpt = root / "model.ckpt"
    rc = main(["gen-data", "--eq", "poisson2d", "--kc", "8", "--kf", "16",
               "--n-train", "2", "--n-test", "2", "--seed", "3",
               "--out", str(data)])
    assert rc == 0
    rc = main(["train", "--data", str(data), "--steps", "20", "--T", "10",
               "--batch", "2", "--base-channels", "8",
               "--multipliers", "1,2", "--middle", "16",
               "--out", str(ckpt)])
    assert rc == 0
    return root


class TestWorkflow:
    def test_dataset_written(self, workspace):
        manifest = json.loads((workspace / "data" / "manifest.json").read_text())
        assert len(manifest["samples"]) == 4
        assert manifest["equation"]["kind"] == "nonlinear_poisson"

    def test_checkpoint_written(self, workspace):
        blob = (workspace / "model.ckpt").read_bytes()
        assert blob[:8] == b"PGDMCKPT"

    def test_sample_and_plot(self, workspace):
        out = workspace / "sample.field"
        rc = main(["sample", "--ckpt", str(workspace / "model.ckpt"),
                   "--data", str(workspace / "data"), "--id", "2",
                   "--out", str(out)])
        assert rc == 0 and out.exists()
        png = workspace / "sample.png"
        rc = main(["plot", "--inputs", str(out),
                   "--ref", str(workspace / "data" / "sample_0002" / "u_r.field"),
                   "--out", str(png)])
        assert rc == 0
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_sample_is_deterministic(self, workspace):
        paths = [workspace / "rep_a.field", workspace / "rep_b.field"]
        for path in paths:
            rc = main(["sample", "--ckpt", str(workspace / "model.ckpt"),
                       "--data", str(workspace / "data"), "--id", "3",
                       "--out", str(path)])
            assert rc == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_methods_differ(self, workspace):
        a = workspace / "m_ddim.field"
        b = workspace / "m_ddpm.field"
        main(["sample", "--ckpt", str(workspace / "model.ckpt"),
              "--data", str(workspace / "data"), "--id", "2",
              "--out", str(a)])
        rc = main(["sample", "--ckpt", str(workspace / "model.ckpt"),
                   "--data", str(workspace / "data"), "--id", "2",
                   "--method", "ddpm", "--out", str(b)])
        assert rc == 0
        assert a.read_bytes() != b.read_bytes()

    def test_bench_report(self, workspace):
        report = workspace / "report.csv"
        figures = workspace / "figs"
        rc = main(["bench", "--data", str(workspace / "data"),
                   "--ckpt", str(workspace / "model.ckpt"),
                   "--solvers", "csi,fine,pgdm", "--report", str(report),
                   "--figures", str(figures)])
        assert rc == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "solver,mean_rel_l2,mean_seconds,M,config_hash"
        assert len(lines) == 4
        assert [ln.split(",")[0] for ln in lines[1:]] == ["csi", "fine", "pgdm"]
        assert (figures / "comparison.png").exists()
        assert report.with_suffix(".txt").exists()

    def test_bench_without_model(self, workspace):
        report = workspace / "classic.csv"
        rc = main(["bench", "--data", str(workspace / "data"),
                   "--report", str(report)])
        assert rc == 0
        names = [ln.split(",")[0]
                 for ln in report.read_text().strip().splitlines()[1:]]
        assert names == ["csi", "coarse_gn", "fine"]


class TestExitCodes:
    def test_no_subcommand(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_help_is_success(self, capsys):
        assert main(["--help"]) == 0
        assert "gen-data" in capsys.readouterr().out

    def test_invalid_equation(self, tmp_path, capsys):
        rc = main(["gen-data", "--eq", "heat", "--out", str(tmp_path / "d")])
        assert rc == 2
        capsys.readouterr()

    def test_unknown_solver(self, workspace, capsys):
        rc = main(["bench", "--data", str(workspace / "data"),
                   "--solvers", "magic", "--report", "/dev/null"])
        assert rc == 2
        assert "unknown solvers" in capsys.readouterr().err

    def test_unknown_sample_id(self, workspace, capsys):
        rc = main(["sample", "--ckpt", str(workspace / "model.ckpt"),
                   "--data", str(workspace / "data"), "--id", "99",
                   "--out", "/dev/null"])
        assert rc == 2
        capsys.readouterr()

    def test_missing_dataset(self, tmp_path, capsys):
        rc = main(["bench", "--data", str(tmp_path / "absent"),
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 4
        assert "manifest" in capsys.readouterr().err

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        rc = main(["sample", "--ckpt", str(tmp_path / "absent.ckpt"),
                   "--data", str(workspace / "data"), "--id", "2",
                   "--out", str(tmp_path / "s.field")])
        assert rc == 4
        capsys.readouterr()

    def test_corrupt_manifest(self, tmp_path, capsys):
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "manifest.json").write_text("{not json")
        rc = main(["bench", "--data", str(bad),
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 4
        capsys.readouterr()

    def test_convergence_failure(self, monkeypatch, capsys):
        def blow_up(args):
            raise ConvergenceError("synthetic stall")

        monkeypatch.setitem(cli._HANDLERS, "plot", blow_up)
        rc = main(["plot", "--inputs", "x", "--out", "y"])
        assert rc == 3
        assert "converge" in capsys.readouterr().err

    def test_linear_solve_failure(self, monkeypatch, capsys):
        def blow_up(args):
            raise np.linalg.LinAlgError("singular")

        monkeypatch.setitem(cli._HANDLERS, "plot", blow_up)
        rc = main(["plot", "--inputs", "x", "--out", "y"])
        assert rc == 3
        capsys.readouterr()
