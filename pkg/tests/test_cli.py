"""Tests for the command-line pipeline."""

import json
from pathlib import Path

import numpy as np
import pytest

from qpfit.artifacts import read_dataset, read_json, write_json
from qpfit.cli import (
    EXIT_ACCEPTANCE,
    EXIT_FAULT,
    EXIT_OK,
    EvaluationReport,
    ExportEntry,
    ExportSummary,
    SimulationSummary,
    build_parser,
    projection_for_problem,
    run_cli,
)
from qpfit.models import LinearMPCProblem, Polyhedron, ProjectionKind, QPNetParams
from tests.conftest import box_problem


def write_setup(tmp_path: Path, **overrides) -> Path:
    """Scalar toy problem plus a small pipeline config next to it."""
    problem = box_problem(np.array([[1.0]]), np.array([[1.0]]), horizon=1, u_max=1.0, x_max=5.0)
    write_json(tmp_path / "problem.json", problem)
    config = {
        "problem": {"path": "problem.json"},
        "sampling": {"n_samples": 30, "seed": 4, "chunk_size": 50},
        "training": {"n_z_values": [1, 2], "epochs": 3, "restarts": 2, "batch_size": 10},
        "export": {"exact": True, "timing_points": 20},
        "simulation": {"steps": 5},
        "evaluation": {"n_z_values": [], "check_points": 50},
        "gradcheck": {"instances": 3},
        "output_dir": str(tmp_path / "out"),
    }
    for section, values in overrides.items():
        config[section] = {**config.get(section, {}), **values}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def run(command: str, config: Path) -> int:
    return run_cli([command, "--config", str(config)])


def test_parser_requires_config() -> None:
    """--config is mandatory and commands are fixed."""
    parser = build_parser()

    with pytest.raises(SystemExit):
        parser.parse_args(["sample"])
    with pytest.raises(SystemExit):
        parser.parse_args(["fly", "--config", "c.json"])

    args = parser.parse_args(["train", "--config", "c.json", "--seed", "3"])
    assert args.command == "train"
    assert args.seed == 3


def test_full_pipeline(tmp_path: Path) -> None:
    """condense -> sample -> train -> export -> simulate -> evaluate on a toy problem."""
    config = write_setup(tmp_path)
    out = tmp_path / "out"

    for command in ("condense", "sample", "train", "export", "simulate", "evaluate"):
        assert run(command, config) == EXIT_OK, command

    condensed = json.loads((out / "condensed.json").read_text(encoding="utf-8"))
    assert "provenance" in condensed
    assert condensed["constraint_offset"] == [1.0, 1.0, 5.0, 5.0]

    dataset = read_dataset(out / "dataset.csv")
    assert dataset.n_samples == 30
    assert (out / "dataset.csv").read_text(encoding="utf-8").startswith("x1,u1\n")

    for tag in ("nz1", "nz2", "exact"):
        assert read_json(out / f"model_{tag}.json", QPNetParams).n == 1
        assert (out / f"pwa_{tag}.json").is_file()
        assert (out / f"pwa_{tag}.bin").is_file()
    assert (out / "loss_nz2.csv").read_text(encoding="utf-8").startswith("epoch,restart_0,restart_1\n")

    export = read_json(out / "export_summary.json", ExportSummary)
    exact = next(entry for entry in export.entries if entry.tag == "exact")
    assert exact.max_deviation <= 1e-6
    assert exact.unlocated_points == 0

    simulation = read_json(out / "simulation.json", SimulationSummary)
    assert len(simulation.runs) == 2 * (1 + 3 + 3)
    assert not any(run.halted for run in simulation.runs)
    assert (out / "trajectories" / "explicit_exact_ic0.csv").is_file()

    report = read_json(out / "report.json", EvaluationReport)
    assert [row.tag for row in report.rows] == ["nz1", "nz2", "exact"]
    assert report.failures == []
    assert (out / "report.txt").read_text(encoding="utf-8").splitlines()[2].startswith("optimal")


def test_evaluate_reports_failed_acceptance(tmp_path: Path) -> None:
    """A storage budget of one byte fails the checked model with exit code 1."""
    config = write_setup(
        tmp_path,
        training={"n_z_values": [1]},
        export={"exact": False},
        evaluation={"n_z_values": [1], "storage_limit_bytes": 1},
    )

    for command in ("sample", "train", "export"):
        assert run(command, config) == EXIT_OK, command

    assert run("evaluate", config) == EXIT_ACCEPTANCE
    report = read_json(tmp_path / "out" / "report.json", EvaluationReport)
    assert any("storage" in failure for failure in report.failures)


def test_evaluate_checks_deviation_on_every_model(tmp_path: Path) -> None:
    """Models outside evaluation.n_z_values still fail on deviation, coverage and region count."""
    config = write_setup(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    entry = ExportEntry(
        tag="nz3",
        n_z=3,
        region_count=9,
        storage_bytes=100,
        eval_time_max_s=1e-5,
        max_deviation=0.5,
        unlocated_points=2,
    )
    write_json(out / "export_summary.json", ExportSummary(entries=[entry]))

    assert run("evaluate", config) == EXIT_ACCEPTANCE

    report = read_json(out / "report.json", EvaluationReport)
    (row,) = report.rows
    assert not row.checked
    assert any("deviation" in failure for failure in row.failures)
    assert any("outside every region" in failure for failure in row.failures)
    assert any("exceed 2^3" in failure for failure in row.failures)
    assert "FAIL" in (out / "report.txt").read_text(encoding="utf-8")


def test_gradcheck_command(tmp_path: Path) -> None:
    """The gradient check writes its report."""
    config = write_setup(tmp_path)

    assert run("gradcheck", config) == EXIT_OK
    report = json.loads((tmp_path / "out" / "gradcheck.json").read_text(encoding="utf-8"))
    assert report["instances"] == 3


def test_out_and_seed_overrides(tmp_path: Path) -> None:
    """--out redirects artifacts and --seed changes the draws."""
    config = write_setup(tmp_path)

    assert run_cli(["sample", "--config", str(config), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert run_cli(["sample", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "9"]) == EXIT_OK

    first = read_dataset(tmp_path / "a" / "dataset.csv")
    second = read_dataset(tmp_path / "b" / "dataset.csv")
    assert second.seed == 9
    assert not np.array_equal(first.states, second.states)


def test_malformed_config(tmp_path: Path) -> None:
    """Invalid JSON is a fault."""
    config = tmp_path / "config.json"
    config.write_text("{not json", encoding="utf-8")

    assert run("condense", config) == EXIT_FAULT


def test_missing_config(tmp_path: Path) -> None:
    """A missing config file is a fault."""
    assert run("condense", tmp_path / "absent.json") == EXIT_FAULT


def test_missing_upstream_artifact(tmp_path: Path) -> None:
    """Training before sampling is a fault."""
    assert run("train", write_setup(tmp_path)) == EXIT_FAULT


def test_export_without_models(tmp_path: Path) -> None:
    """Nothing to export is a fault."""
    config = write_setup(tmp_path, export={"exact": False})

    assert run("export", config) == EXIT_FAULT


def test_projection_for_box_and_general_sets() -> None:
    """Axis-aligned input sets become clamps; others use the Euclidean projection."""
    boxed = box_problem(np.eye(2), np.eye(2), horizon=1, u_max=2.0)
    spec = projection_for_problem(boxed)
    assert spec.kind == ProjectionKind.BOX
    assert spec.upper == pytest.approx([2.0, 2.0])
    assert spec.lower == pytest.approx([-2.0, -2.0])

    general = LinearMPCProblem(
        A=np.eye(2),
        B=np.eye(2),
        Q=np.eye(2),
        R=np.eye(2),
        P=np.eye(2),
        horizon=1,
        input_set=Polyhedron(A=np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]), b=np.array([1.0, 0.0, 0.0])),
    )
    assert projection_for_problem(general).kind == ProjectionKind.POLYHEDRON
