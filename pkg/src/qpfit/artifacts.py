"""Reading and writing pipeline artifacts.

JSON artifacts are pydantic dumps with an added ``provenance`` object that
records the hashes of the config and problem that produced them. Loaders
ignore it.
"""

import csv
import json
from pathlib import Path
from typing import TypeVar

import numpy as np
from pydantic import BaseModel

from qpfit.models import ArrayModel, Dataset, NDArray, Trajectory, TrainReport

ModelT = TypeVar("ModelT", bound=BaseModel)


def _number(value: float) -> str:
    return repr(float(value))


def write_json(path: Path, model: BaseModel, provenance: dict[str, str] | None = None) -> Path:
    """Dump ``model`` (by alias) with an optional provenance block."""
    payload = json.loads(model.model_dump_json(by_alias=True))
    if provenance:
        payload["provenance"] = provenance
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path, model_type: type[ModelT]) -> ModelT:
    """Validate a JSON artifact, dropping the provenance block."""
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload.pop("provenance", None)
    return model_type.model_validate(payload)


class DatasetSidecar(ArrayModel):
    """Metadata stored next to the dataset CSV."""

    label_scale: NDArray
    seed: int
    box_lower: NDArray
    box_upper: NDArray
    problem_hash: str
    n_drawn: int


def write_dataset(dataset: Dataset, csv_path: Path, provenance: dict[str, str] | None = None) -> Path:
    """CSV with header x1..xn,u1..um plus a JSON sidecar of the same stem."""
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{i + 1}" for i in range(dataset.state_dim)]
    header += [f"u{i + 1}" for i in range(dataset.input_dim)]
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for x, u in zip(dataset.states, dataset.labels, strict=True):
            writer.writerow([_number(v) for v in np.concatenate([x, u])])
    sidecar = DatasetSidecar(
        label_scale=dataset.label_scale,
        seed=dataset.seed,
        box_lower=dataset.box_lower,
        box_upper=dataset.box_upper,
        problem_hash=dataset.problem_hash,
        n_drawn=dataset.n_drawn,
    )
    write_json(csv_path.with_suffix(".json"), sidecar, provenance)
    return csv_path


def read_dataset(csv_path: Path) -> Dataset:
    """Load a dataset written by :func:`write_dataset`.

    Columns named x* are states and the rest are labels. Scale, seed and
    provenance come from the JSON sidecar next to the CSV.

    Raises:
        OSError: the CSV or its sidecar cannot be read.
        ValidationError: the sidecar does not match :class:`DatasetSidecar`.
    """
    with csv_path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    n = sum(1 for name in header if name.startswith("x"))
    sidecar = read_json(csv_path.with_suffix(".json"), DatasetSidecar)
    return Dataset(
        states=rows[:, :n],
        labels=rows[:, n:],
        label_scale=sidecar.label_scale,
        seed=sidecar.seed,
        box_lower=sidecar.box_lower,
        box_upper=sidecar.box_upper,
        problem_hash=sidecar.problem_hash,
        n_drawn=sidecar.n_drawn,
    )


def write_loss_csv(report: TrainReport, path: Path) -> Path:
    """One row per epoch, one column per restart (empty after divergence)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = max((len(history) for history in report.epoch_losses), default=0)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["epoch"] + [f"restart_{i}" for i in range(len(report.epoch_losses))])
        for epoch in range(epochs):
            row = [str(epoch + 1)]
            for history in report.epoch_losses:
                row.append(_number(history[epoch]) if epoch < len(history) else "")
            writer.writerow(row)
    return path


def write_trajectory_csv(
    trajectory: Trajectory, path: Path, duty_cycles: np.ndarray | None = None
) -> Path:
    """Step-indexed states and inputs; the last row has the final state only."""
    path.parent.mkdir(parents=True, exist_ok=True)
    n = trajectory.states.shape[1]
    m = trajectory.inputs.shape[1]
    header = ["step"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    if duty_cycles is not None:
        header += [f"d{i + 1}" for i in range(duty_cycles.shape[1])]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for k, state in enumerate(trajectory.states):
            row = [str(k)] + [_number(v) for v in state]
            if k < trajectory.steps:
                row += [_number(v) for v in trajectory.inputs[k]]
                if duty_cycles is not None:
                    row += [_number(v) for v in duty_cycles[k]]
            writer.writerow(row)
    return path
