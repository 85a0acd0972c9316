"""Tests for configuration."""

import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from qpfit.config import (
    PipelineConfig,
    ProblemConfig,
    QPFitSettings,
    SamplingConfig,
    TrainConfig,
    load_config,
    load_pipeline_config,
)
from qpfit.models import ProblemPreset


def test_settings_defaults() -> None:
    """Test settings default values."""
    settings = QPFitSettings()

    assert settings.threads == 1
    assert settings.log_level == "INFO"


def test_settings_from_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test settings from environment variables."""
    monkeypatch.setenv("QPFIT_THREADS", "8")
    monkeypatch.setenv("QPFIT_LOG_LEVEL", "debug")

    settings = QPFitSettings()

    assert settings.threads == 8
    assert settings.log_level == "debug"


def test_settings_validation() -> None:
    """Test settings validation."""
    with pytest.raises(ValidationError):
        QPFitSettings(threads=0)

    with pytest.raises(ValidationError):
        QPFitSettings(threads=1000)

    with pytest.raises(ValidationError):
        QPFitSettings(log_level="loud")


def test_load_config() -> None:
    """Test load_config function."""
    assert isinstance(load_config(), QPFitSettings)


def test_get_config() -> None:
    """Test get_config function (singleton pattern)."""
    from qpfit.config import get_config

    config1 = get_config()
    assert isinstance(config1, QPFitSettings)

    config2 = get_config()
    assert config1 is config2


def test_pipeline_defaults() -> None:
    """Test the documented pipeline defaults."""
    config = PipelineConfig()

    assert config.problem.preset == ProblemPreset.CONVERTER
    assert config.problem.horizon == 10
    assert config.sampling.n_samples == 5000
    assert config.training.batch_size == 50
    assert config.training.epochs == 150
    assert config.training.learning_rate == 1e-3
    assert config.training.restarts == 10
    assert config.training.n_z_values == [1, 2, 3, 4, 5, 6, 7]
    assert config.evaluation.storage_limit_bytes == 64_000
    assert config.simulation.steps == 50


def test_train_config_validation() -> None:
    """Test training parameter bounds."""
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)

    with pytest.raises(ValidationError):
        TrainConfig(beta1=1.0)

    with pytest.raises(ValidationError):
        TrainConfig(n_z=0)


def test_sampling_box_validation() -> None:
    """Test that box corners come in consistent pairs."""
    assert SamplingConfig(box_lower=[-1.0], box_upper=[1.0]).box_lower == [-1.0]

    with pytest.raises(ValidationError):
        SamplingConfig(box_lower=[-1.0])

    with pytest.raises(ValidationError):
        SamplingConfig(box_lower=[-1.0, 0.0], box_upper=[1.0])

    with pytest.raises(ValidationError):
        SamplingConfig(box_lower=[1.0], box_upper=[1.0])


def test_problem_config_needs_a_source() -> None:
    """Test that a problem comes from a preset or a file."""
    with pytest.raises(ValidationError):
        ProblemConfig(preset=None)

    with pytest.raises(ValidationError):
        ProblemConfig(path=Path("/nonexistent/problem.json"))


def test_load_pipeline_config_resolves_relative_paths(tmp_path: Path) -> None:
    """Test that problem paths are relative to the config file."""
    (tmp_path / "problem.json").write_text("{}", encoding="utf-8")
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps({"problem": {"path": "problem.json"}, "training": {"epochs": 3}}),
        encoding="utf-8",
    )

    config = load_pipeline_config(config_path)

    assert config.problem.path == tmp_path / "problem.json"
    assert config.problem.preset is None
    assert config.training.epochs == 3


def test_load_pipeline_config_rejects_unknown_values(tmp_path: Path) -> None:
    """Test that invalid files raise ValidationError."""
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"training": {"epochs": 0}}), encoding="utf-8")

    with pytest.raises(ValidationError):
        load_pipeline_config(config_path)


def test_config_hash_and_seed() -> None:
    """Test that the hash tracks content and with_seed replaces every seed."""
    config = PipelineConfig()
    reseeded = config.with_seed(7)

    assert config.config_hash() == PipelineConfig().config_hash()
    assert config.config_hash() != reseeded.config_hash()
    assert reseeded.sampling.seed == 7
    assert reseeded.training.seed == 7
    assert reseeded.gradcheck.seed == 7
    assert config.sampling.seed == 0
