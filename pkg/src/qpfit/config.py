"""Configuration for qpfit.

Runtime settings (thread count, log level) come from the environment through
``QPFitSettings``. Pipeline parameters come from a JSON file validated by
``PipelineConfig``.
"""

import hashlib
from pathlib import Path
from typing import Annotated

from pydantic import BaseModel, Field, ValidationInfo, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from qpfit.models import ProblemPreset


class QPFitSettings(BaseSettings):
    """Process-level settings for qpfit."""

    model_config = SettingsConfigDict(
        env_prefix="QPFIT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    threads: Annotated[
        int,
        Field(
            description="Worker threads for sampling, training restarts and region enumeration",
            default=1,
            ge=1,
            le=256,
        ),
    ]

    log_level: Annotated[
        str,
        Field(
            description="Logging level name",
            default="INFO",
            pattern=r"^(?i:debug|info|warning|error|critical)$",
        ),
    ]


def load_config() -> QPFitSettings:
    """Load settings from environment variables and .env file.

    Returns:
        QPFitSettings instance
    """
    return QPFitSettings()


# Global settings instance (lazily loaded)
_config: QPFitSettings | None = None


def get_config() -> QPFitSettings:
    """Get the global settings instance.

    Returns:
        QPFitSettings instance
    """
    global _config
    if _config is None:
        _config = load_config()
    return _config


class ProblemConfig(BaseModel):
    """Which MPC problem the pipeline runs on."""

    preset: Annotated[
        ProblemPreset | None,
        Field(description="Built-in problem", default=ProblemPreset.CONVERTER),
    ]
    path: Annotated[
        Path | None,
        Field(description="JSON file holding a LinearMPCProblem", default=None),
    ]
    horizon: Annotated[
        int,
        Field(description="Prediction horizon of the built-in problem", default=10, ge=1, le=100),
    ]

    @model_validator(mode="after")
    def _one_source(self, info: ValidationInfo) -> "ProblemConfig":
        if self.path is not None:
            base = (info.context or {}).get("base")
            if base is not None and not self.path.is_absolute():
                self.path = Path(base) / self.path
            if not self.path.is_file():
                raise ValueError(f"problem file {self.path} does not exist")
            self.preset = None
        elif self.preset is None:
            raise ValueError("either preset or path must be given")
        return self


class SamplingConfig(BaseModel):
    """Dataset generation."""

    n_samples: Annotated[int, Field(description="Accepted samples", default=5000, ge=1, le=1_000_000)]
    seed: Annotated[int, Field(description="Sampling seed", default=0, ge=0)]
    box_lower: Annotated[
        list[float] | None,
        Field(description="Sampling box lower corner (deviation coordinates)", default=None),
    ]
    box_upper: Annotated[
        list[float] | None,
        Field(description="Sampling box upper corner (deviation coordinates)", default=None),
    ]
    chunk_size: Annotated[int, Field(description="Points drawn per chunk", default=1000, ge=1)]
    min_acceptance: Annotated[
        float,
        Field(description="Abort when the first chunk accepts less than this", default=1e-3, gt=0.0, le=1.0),
    ]

    @model_validator(mode="after")
    def _box_pair(self) -> "SamplingConfig":
        if (self.box_lower is None) != (self.box_upper is None):
            raise ValueError("box_lower and box_upper must be given together")
        if self.box_lower is not None and self.box_upper is not None:
            if len(self.box_lower) != len(self.box_upper):
                raise ValueError("box_lower and box_upper must have the same length")
            if any(lo >= hi for lo, hi in zip(self.box_lower, self.box_upper, strict=True)):
                raise ValueError("sampling box requires lower < upper")
        return self


class TrainConfig(BaseModel):
    """Network training."""

    batch_size: Annotated[int, Field(description="Samples per gradient step", default=50, ge=1)]
    epochs: Annotated[int, Field(description="Passes over the dataset", default=150, ge=1)]
    learning_rate: Annotated[float, Field(description="Adam step size", default=1e-3, gt=0.0)]
    beta1: Annotated[float, Field(description="Adam first-moment decay", default=0.9, ge=0.0, lt=1.0)]
    beta2: Annotated[
        float, Field(description="Adam second-moment decay", default=0.999, ge=0.0, lt=1.0)
    ]
    adam_eps: Annotated[float, Field(description="Adam denominator guard", default=1e-8, gt=0.0)]
    seed: Annotated[int, Field(description="Initialization and shuffling seed", default=0, ge=0)]
    n_z: Annotated[int, Field(description="pQP size for a single run", default=7, ge=1, le=30)]
    eps: Annotated[float, Field(description="pQP regularizer ε", default=1e-4, ge=0.0)]
    restarts: Annotated[int, Field(description="Random restarts", default=10, ge=1)]
    n_z_values: Annotated[
        list[int],
        Field(description="pQP sizes trained by the CLI", default=[1, 2, 3, 4, 5, 6, 7]),
    ]
    init_noise: Annotated[
        float, Field(description="Amplitude of the noise added to L = I", default=0.1, ge=0.0)
    ]


class ExportConfig(BaseModel):
    """Explicit controller export."""

    binary: Annotated[bool, Field(description="Also write the binary layout", default=True)]
    timing_points: Annotated[
        int, Field(description="Random points used to time point location", default=10_000, ge=1)
    ]
    exact: Annotated[
        bool,
        Field(description="Also build and export the exact constructed network", default=False),
    ]
    regularization: Annotated[
        float | None,
        Field(description="Dual regularization of the exact construction", default=1e-11),
    ]


class SimulationConfig(BaseModel):
    """Closed-loop simulation."""

    steps: Annotated[int, Field(description="Control steps per run", default=50, ge=1)]
    initial_conditions: Annotated[
        list[list[float]] | None,
        Field(description="Physical initial states; None uses the problem defaults", default=None),
    ]
    ss_window: Annotated[
        int, Field(description="Trailing window for steady-state metrics", default=10, ge=1)
    ]


class EvaluationConfig(BaseModel):
    """Acceptance checks of the evaluate command."""

    n_z_values: Annotated[
        list[int], Field(description="Sizes subject to acceptance checks", default=[6, 7])
    ]
    check_points: Annotated[
        int, Field(description="Points used for the explicit/implicit comparison", default=10_000, ge=1)
    ]
    deviation_tol: Annotated[
        float, Field(description="Allowed explicit/implicit deviation", default=1e-6, gt=0.0)
    ]
    storage_limit_bytes: Annotated[
        int, Field(description="Storage budget of one explicit controller", default=64_000, ge=1)
    ]
    i_dm_limit: Annotated[
        float, Field(description="Steady-state differential-current error limit (A)", default=0.2, gt=0.0)
    ]
    relative_limit_pct: Annotated[
        float,
        Field(description="Steady-state common-mode/output error limit (%)", default=5.0, gt=0.0),
    ]


class GradcheckConfig(BaseModel):
    """Finite-difference gradient check."""

    instances: Annotated[int, Field(description="Random instances", default=200, ge=1)]
    seed: Annotated[int, Field(description="Instance seed", default=0, ge=0)]
    step: Annotated[float, Field(description="Central-difference step", default=1e-5, gt=0.0)]
    rtol: Annotated[float, Field(description="Allowed relative error", default=1e-4, gt=0.0)]


class PipelineConfig(BaseModel):
    """Everything the CLI commands need, loaded from one JSON file."""

    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    export: ExportConfig = Field(default_factory=ExportConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    gradcheck: GradcheckConfig = Field(default_factory=GradcheckConfig)
    output_dir: Path = Field(default=Path("artifacts"), description="Artifact directory")

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, recorded in every artifact."""
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with every seed replaced."""
        return self.model_copy(
            update={
                "sampling": self.sampling.model_copy(update={"seed": seed}),
                "training": self.training.model_copy(update={"seed": seed}),
                "gradcheck": self.gradcheck.model_copy(update={"seed": seed}),
            }
        )


def load_pipeline_config(path: Path) -> PipelineConfig:
    """Read and validate a pipeline configuration file.

    Relative problem paths are resolved against the config file's directory.
    """
    raw = path.read_text(encoding="utf-8")
    config = PipelineConfig.model_validate_json(raw, context={"base": path.parent})
    return config
