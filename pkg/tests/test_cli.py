"""Tests for the riqa command line."""

from __future__ import annotations

import json
from pathlib import Path
from unittest.mock import patch

import pytest

from relational_iqa.cli import _render_table, _strip_ansi, _write_report, build_parser, main
from relational_iqa.dataset import read_dataset
from relational_iqa.errors import DivergenceError, ValidationError


class TestCliParser:
    """Argument parsing."""

    def test_synth_arguments(self) -> None:
        """synth takes its overrides and the common flags."""
        args = build_parser().parse_args(
            ["synth", "--out", "data", "--count", "3", "--size", "32", "--seed", "5", "--force", "-vv"]
        )
        assert args.command == "synth"
        assert args.out == Path("data")
        assert args.count == 3
        assert args.size == 32
        assert args.seed == 5
        assert args.force is True
        assert args.verbose == 2

    def test_defaults_left_to_config(self) -> None:
        """Unset overrides stay None so the config decides."""
        args = build_parser().parse_args(["synth"])
        assert args.count is None
        assert args.seed is None
        assert args.config is None
        assert args.force is False

    def test_eval_predictor_base_images_default(self) -> None:
        """Monotonicity uses five reference images unless told otherwise."""
        args = build_parser().parse_args(
            ["eval-predictor", "--model", "m", "--data", "d", "--report", "r.json"]
        )
        assert args.base_images == 5

    def test_verify_module_choices(self) -> None:
        """Only known gradient suites are accepted."""
        args = build_parser().parse_args(["verify-gradients", "--module", "scorer"])
        assert args.module == "scorer"
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["verify-gradients", "--module", "unknown"])
        assert info.value.code == 1

    def test_missing_required_argument_exits_one(self) -> None:
        """Usage errors map to the validation exit code."""
        with pytest.raises(SystemExit) as info:
            main(["train-predictor"])
        assert info.value.code == 1


class TestCliMain:
    """Dispatch and exit codes."""

    def test_no_command_prints_help(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Running without a subcommand shows usage and fails."""
        assert main([]) == 1
        assert "usage" in capsys.readouterr().out.lower()

    @patch("relational_iqa.cli.run_synth")
    def test_dispatches_to_handler(self, mock_run: object, isolated_home: Path) -> None:
        """The subcommand's handler receives the parsed args and loaded config."""
        mock_run.return_value = 0  # type: ignore[attr-defined]
        assert main(["synth", "--count", "2"]) == 0
        args, cfg = mock_run.call_args.args  # type: ignore[attr-defined]
        assert args.count == 2
        assert cfg.synth.count == 100

    @patch("relational_iqa.cli.run_synth")
    def test_validation_error_exits_one(
        self, mock_run: object, isolated_home: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Bad inputs exit with 1 and print the message."""
        mock_run.side_effect = ValidationError("bad input")  # type: ignore[attr-defined]
        assert main(["synth"]) == 1
        assert "bad input" in capsys.readouterr().err

    @patch("relational_iqa.cli.run_train_scorer")
    def test_numerical_error_exits_two(self, mock_run: object, isolated_home: Path) -> None:
        """Numerical failures exit with 2."""
        mock_run.side_effect = DivergenceError("loss is nan")  # type: ignore[attr-defined]
        assert main(["train-scorer", "--tiers", "t", "--predictor", "p"]) == 2

    def test_bad_config_exits_one(self, tmp_path: Path, isolated_home: Path) -> None:
        """An unknown key in --config is a validation failure."""
        path = tmp_path / "bad.yaml"
        path.write_text("synth:\n  cuont: 3\n", encoding="utf-8")
        assert main(["synth", "--config", str(path)]) == 1


class TestCliCommands:
    """Small end-to-end runs."""

    def test_synth_writes_dataset(
        self, tmp_path: Path, isolated_home: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """synth creates a readable dataset and refuses to overwrite it."""
        out = tmp_path / "data"
        assert main(["synth", "--count", "2", "--size", "16", "--seed", "3", "--out", str(out)]) == 0
        contents = read_dataset(out)
        assert contents.layout == "triplets"
        assert len(contents.triplets) == 2
        assert not contents.errors
        assert "Wrote 2 triplet(s)" in capsys.readouterr().out

        assert main(["synth", "--count", "2", "--size", "16", "--out", str(out)]) == 1
        assert main(["synth", "--count", "2", "--size", "16", "--out", str(out), "--force"]) == 0

    def test_synth_default_location(self, isolated_home: Path) -> None:
        """Without --out the dataset lands under RELATIONAL_IQA_HOME."""
        assert main(["synth", "--count", "1", "--size", "16", "--seed", "4"]) == 0
        assert (isolated_home / "datasets" / "synth-4" / "manifest.jsonl").exists()

    def test_tiers_procedural(self, tmp_path: Path, isolated_home: Path) -> None:
        """tiers builds a reference tier plus one tier per intensity."""
        out = tmp_path / "tiers"
        code = main(["tiers", "--scenes", "2", "--size", "16", "--schedule", "0.3,0.6", "--out", str(out)])
        assert code == 0
        contents = read_dataset(out)
        assert contents.layout == "tiers"
        assert contents.tiers is not None
        assert [t.tier_id for t in contents.tiers.tiers] == [0, -1, -2]
        assert contents.tiers.scene_count == 2

    def test_tiers_bad_schedule(self, tmp_path: Path, isolated_home: Path) -> None:
        """A decreasing schedule is rejected before anything is written."""
        out = tmp_path / "tiers"
        assert main(["tiers", "--scenes", "1", "--size", "16", "--schedule", "0.6,0.3", "--out", str(out)]) == 1
        assert not out.exists()

    def test_train_predictor_on_missing_dataset(self, tmp_path: Path, isolated_home: Path) -> None:
        """A dataset directory without a manifest is a validation failure."""
        assert main(["train-predictor", "--data", str(tmp_path / "nothing")]) == 1

    def test_verify_gradients_objectives(self, capsys: pytest.CaptureFixture[str], isolated_home: Path) -> None:
        """The objective kernels pass their finite-difference checks."""
        assert main(["verify-gradients", "--module", "objectives"]) == 0
        assert "gradient check(s) passed" in capsys.readouterr().out


class TestCliOutput:
    """Report and table helpers."""

    def test_report_carries_schema(self, tmp_path: Path) -> None:
        """Reports are versioned JSON and are not silently overwritten."""
        path = tmp_path / "reports" / "r.json"
        _write_report(path, "antisymmetry", {"mean": 0.5}, force=False)
        report = json.loads(path.read_text(encoding="utf-8"))
        assert report == {"schema_version": 1, "report": "antisymmetry", "mean": 0.5}
        with pytest.raises(ValidationError, match="--force"):
            _write_report(path, "antisymmetry", {"mean": 0.5}, force=False)

    def test_table_borders(self) -> None:
        """Tables are framed by +---+ rules."""
        table = _render_table(["Tier", "Score"], [["0", "1.0000"], ["-1", "0.5000"]])
        lines = [_strip_ansi(line) for line in table.splitlines()]
        assert lines[0].startswith("+") and lines[0].endswith("+")
        assert any("-1" in line for line in lines)


def _tree_bytes(directory: Path) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


class TestCliPipeline:
    """Chained commands over one workspace."""

    @pytest.fixture
    def workspace(self, tmp_path: Path, isolated_home: Path) -> Path:
        data = tmp_path / "data"
        tiers = tmp_path / "tiers"
        assert main(["synth", "--count", "3", "--size", "16", "--seed", "2", "--out", str(data)]) == 0
        assert main(["tiers", "--scenes", "2", "--size", "16", "--schedule", "0.3,0.6", "--seed", "2", "--out", str(tiers)]) == 0
        return tmp_path

    def test_same_seed_same_bytes(self, workspace: Path) -> None:
        """Repeating every producing command with the same seed reproduces every output file."""
        again = workspace / "again"
        assert main(["synth", "--count", "3", "--size", "16", "--seed", "2", "--out", str(again / "data")]) == 0
        assert main(
            ["tiers", "--scenes", "2", "--size", "16", "--schedule", "0.3,0.6", "--seed", "2", "--out", str(again / "tiers")]
        ) == 0
        for root in (workspace, again):
            assert main(["train-predictor", "--data", str(root / "data"), "--epochs", "2", "--out", str(root / "pred")]) == 0
            assert main(
                ["train-scorer", "--tiers", str(root / "tiers"), "--predictor", str(root / "pred"), "--epochs", "2", "--out", str(root / "scorer")]
            ) == 0
        for name in ("data", "tiers", "pred", "scorer"):
            assert _tree_bytes(workspace / name) == _tree_bytes(again / name)

    def test_train_then_evaluate(self, workspace: Path) -> None:
        """Checkpoints written by training feed every evaluation command."""
        pred, scorer, reports = workspace / "pred", workspace / "scorer", workspace / "reports"
        assert main(["train-predictor", "--data", str(workspace / "data"), "--epochs", "2", "--out", str(pred)]) == 0
        assert main(
            ["eval-antisym", "--model", str(pred), "--data", str(workspace / "data"), "--report", str(reports / "antisym.json")]
        ) == 0
        assert main(
            ["eval-predictor", "--model", str(pred), "--data", str(workspace / "data"), "--report", str(reports / "pred.json"), "--base-images", "1"]
        ) == 0
        assert main(
            ["train-scorer", "--tiers", str(workspace / "tiers"), "--predictor", str(pred), "--epochs", "2", "--out", str(scorer)]
        ) == 0
        assert main(
            ["eval-rank", "--scorer", str(scorer), "--predictor", str(pred), "--tiers", str(workspace / "tiers"), "--report", str(reports / "rank.json")]
        ) == 0

        antisym = json.loads((reports / "antisym.json").read_text(encoding="utf-8"))
        assert antisym["report"] == "antisymmetry"
        assert antisym["pairs"] == 3
        predictor_report = json.loads((reports / "pred.json").read_text(encoding="utf-8"))
        assert set(predictor_report["monotonicity"]) == {"gaussian_blur", "perlin_noise", "checkerboard", "bad_pixels", "haze", "over_saturation"}
        rank = json.loads((reports / "rank.json").read_text(encoding="utf-8"))
        assert rank["pairs"] == 2
        assert 0.0 <= rank["pairwise_accuracy"] <= 1.0
        header = json.loads((pred / "header.json").read_text(encoding="utf-8"))
        assert "input_scaling" in header["metadata"]

    def test_dump_maps_refuses_overwrite(self, workspace: Path) -> None:
        """Existing map images are kept unless --force is given."""
        pred, maps = workspace / "pred", workspace / "maps"
        assert main(["train-predictor", "--data", str(workspace / "data"), "--epochs", "1", "--out", str(pred)]) == 0
        command = ["eval-antisym", "--model", str(pred), "--data", str(workspace / "data"), "--dump-maps", str(maps)]
        assert main([*command, "--report", str(workspace / "first.json")]) == 0
        written = _tree_bytes(maps)
        assert len(written) == 3 * 2 * 6

        first = sorted(maps.iterdir())[0]
        first.write_bytes(b"kept")
        assert main([*command, "--report", str(workspace / "second.json")]) == 1
        assert first.read_bytes() == b"kept"
        assert not (workspace / "second.json").exists()

        assert main([*command, "--report", str(workspace / "third.json"), "--force"]) == 0
        assert first.read_bytes() == written[first.name]
