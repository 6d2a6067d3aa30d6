"""
Tests for the command-line interface.
"""
import importlib
from pathlib import Path
from unittest.mock import patch

import pytest

from cli.fdal_cli import main
from models.report import CheckResult
from services.bench_service import bench_service

PROJECT_ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture
def config_file(tmp_path, small_experiment):
    path = tmp_path / "small.json"
    path.write_text(small_experiment.model_dump_json(), encoding="utf-8")
    return path


class TestCli:
    """Test cases for fdal subcommands"""

    def test_no_command_prints_help(self, capsys):
        main([])

        assert "usage" in capsys.readouterr().out

    def test_assemble(self, config_file, tmp_path, capsys):
        # Setup
        out = tmp_path / "out"

        # Test
        main(["--config", str(config_file), "--out", str(out), "assemble", "--level", "8", "2"])

        # Assert
        assert "81+9+9" in capsys.readouterr().out
        for name in ("A", "A2", "C", "C2", "M", "f", "g"):
            assert (out / f"{name}.mtx").exists()

    def test_solve_saves_solution(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"

        main(["--config", str(config_file), "--out", str(out), "solve", "--variant", "mal",
              "--beta2", "100", "--save-solution"])

        assert "✅ mal converged" in capsys.readouterr().out
        assert (out / "small_solve.json").exists()
        for name in ("u", "u2", "lambda"):
            assert (out / f"{name}.mtx").exists()

    def test_solve_nonconvergence_is_not_fatal_by_default(self, tmp_path, small_experiment, capsys):
        path = tmp_path / "capped.json"
        path.write_text(small_experiment.model_copy(update={"maxit": 1}).model_dump_json(), encoding="utf-8")

        main(["--config", str(path), "--out", str(tmp_path), "solve"])

        assert "did not converge" in capsys.readouterr().out

    def test_solve_nonconvergence_fatal(self, tmp_path, small_experiment):
        path = tmp_path / "capped.json"
        cfg = small_experiment.model_copy(update={"maxit": 1, "fail_fatal": True})
        path.write_text(cfg.model_dump_json(), encoding="utf-8")

        with pytest.raises(SystemExit) as exc_info:
            main(["--config", str(path), "--out", str(tmp_path), "solve"])

        assert exc_info.value.code == 1

    def test_bad_config(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["--config", str(tmp_path / "missing.json"), "verify"])

        assert exc_info.value.code == 1
        assert "❌ Error" in capsys.readouterr().err

    def test_bench(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"

        main(["--config", str(config_file), "--out", str(out), "--threads", "2", "bench"])

        output = capsys.readouterr().out
        assert "289+25+25" in output
        assert "✅ Table written" in output
        assert (out / "small.csv").exists()
        assert (out / "small_timings.csv").exists()

    def test_verify_failure_exits(self, config_file, capsys):
        failing = [CheckResult(name="smw_identity[gamma1=1]", passed=False, value=1e-3, threshold=1e-10)]

        with patch.object(bench_service, "verify", return_value=failing):
            with pytest.raises(SystemExit) as exc_info:
                main(["--config", str(config_file), "verify"])

        assert exc_info.value.code == 1
        assert "❌ FAIL smw_identity" in capsys.readouterr().out

    def test_verify_success(self, config_file, capsys):
        passing = [CheckResult(name="infsup_kernel_dimension", passed=True, value=81, threshold=81)]

        with patch.object(bench_service, "verify", return_value=passing):
            main(["--config", str(config_file), "verify"])

        assert "1/1 checks passed" in capsys.readouterr().out


class TestPackaging:
    """Test cases for the installed console script"""

    @pytest.fixture
    def manifest(self):
        tomllib = pytest.importorskip("tomllib")
        return tomllib.loads((PROJECT_ROOT / "pyproject.toml").read_text(encoding="utf-8"))

    def test_script_target_is_installed(self, manifest):
        """The fdal script resolves to a module shipped from app/"""
        # Setup
        module, _, func = manifest["project"]["scripts"]["fdal"].partition(":")
        setuptools_cfg = manifest["tool"]["setuptools"]
        source_root = PROJECT_ROOT / setuptools_cfg["package-dir"][""]

        # Assert
        assert module in setuptools_cfg["py-modules"]
        assert (source_root / f"{module}.py").exists()
        assert callable(getattr(importlib.import_module(module), func))

    def test_packages_come_from_app(self, manifest):
        found = manifest["tool"]["setuptools"]["packages"]["find"]

        assert found["where"] == ["app"]
        for package in ("cli", "core", "models", "repositories", "services", "utils"):
            assert (PROJECT_ROOT / "app" / package / "__init__.py").exists()
