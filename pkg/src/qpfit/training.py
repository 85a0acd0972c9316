"""Mini-batch Adam training of the network with random restarts."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from qpfit.config import TrainConfig
from qpfit.exceptions import DimensionError, SolverError, TrainingError
from qpfit.models import (
    Dataset,
    NDArray,
    ParamGradients,
    ProjectionSpec,
    QPNetParams,
    TrainReport,
)
from qpfit.qpnet import backward, forward, init_params

logger = logging.getLogger(__name__)


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over components and its gradient."""
    residual = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    size = max(residual.size, 1)
    return float(residual @ residual) / size, 2.0 * residual / size


class AdamState(BaseModel):
    """Moment estimates of the Adam optimizer, keyed by parameter name."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = 0
    first: dict[str, NDArray] = Field(default_factory=dict)
    second: dict[str, NDArray] = Field(default_factory=dict)

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            first={key: np.zeros_like(val) for key, val in params.items()},
            second={key: np.zeros_like(val) for key, val in params.items()},
        )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, dict[str, np.ndarray]]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    step = state.step + 1
    first: dict[str, np.ndarray] = {}
    second: dict[str, np.ndarray] = {}
    updated: dict[str, np.ndarray] = {}
    for key, value in params.items():
        grad = grads[key]
        first[key] = beta1 * state.first[key] + (1.0 - beta1) * grad
        second[key] = beta2 * state.second[key] + (1.0 - beta2) * grad * grad
        m_hat = first[key] / (1.0 - beta1**step)
        v_hat = second[key] / (1.0 - beta2**step)
        updated[key] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(step=step, first=first, second=second), updated


def batch_loss(
    params: QPNetParams, dataset: Dataset, indices: np.ndarray
) -> tuple[float, ParamGradients]:
    """Mean scaled loss over ``indices`` and its gradient, accumulated in index order."""
    total = 0.0
    grads = ParamGradients.zeros_like(params)
    for i in np.sort(indices):
        trace = forward(params, dataset.states[i])
        loss, grad_scaled = mse_loss(dataset.scale(trace.y4), dataset.scale(dataset.labels[i]))
        total += loss
        grads = grads.add(backward(trace, params, dataset.scale(grad_scaled)))
    count = max(len(indices), 1)
    return total / count, grads.scale(1.0 / count)


def dataset_loss(params: QPNetParams, dataset: Dataset) -> float:
    """Mean scaled loss over the whole dataset."""
    total = 0.0
    for x, u in zip(dataset.states, dataset.labels, strict=True):
        prediction = forward(params, x).y4
        total += mse_loss(dataset.scale(prediction), dataset.scale(u))[0]
    return total / dataset.n_samples


class RestartResult(BaseModel):
    """Outcome of one training restart."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    params: QPNetParams | None
    epoch_losses: list[float]
    final_loss: float | None


def _train_restart(
    index: int,
    dataset: Dataset,
    config: TrainConfig,
    projection: ProjectionSpec,
    initial: QPNetParams | None,
) -> RestartResult:
    rng = np.random.default_rng([config.seed, index])
    if initial is not None:
        params = initial.model_copy(update={"label_scale": dataset.label_scale})
    else:
        params = init_params(
            dataset.state_dim,
            config.n_z,
            projection,
            rng,
            eps=config.eps,
            init_noise=config.init_noise,
        ).model_copy(update={"label_scale": dataset.label_scale})
    weights = params.trainable()
    state = AdamState.fresh(weights)
    history: list[float] = []

    for epoch in range(config.epochs):
        order = rng.permutation(dataset.n_samples)
        epoch_total = 0.0
        for start in range(0, dataset.n_samples, config.batch_size):
            batch = order[start : start + config.batch_size]
            try:
                loss, grads = batch_loss(params, dataset, batch)
            except SolverError as exc:
                logger.warning("restart %d diverged in epoch %d: %s", index, epoch, exc)
                return RestartResult(index=index, params=None, epoch_losses=history, final_loss=None)
            if not (np.isfinite(loss) and grads.is_finite()):
                logger.warning("restart %d produced a non-finite loss in epoch %d", index, epoch)
                return RestartResult(index=index, params=None, epoch_losses=history, final_loss=None)
            state, weights = adam_step(
                state,
                weights,
                grads.as_dict(),
                config.learning_rate,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.adam_eps,
            )
            params = params.with_trainable(weights)
            epoch_total += loss * len(batch)
        history.append(epoch_total / dataset.n_samples)
        logger.debug("n_z=%d restart %d epoch %d loss %.6e", config.n_z, index, epoch, history[-1])

    try:
        final = dataset_loss(params, dataset)
    except SolverError as exc:
        logger.warning("restart %d failed on the final pass: %s", index, exc)
        return RestartResult(index=index, params=None, epoch_losses=history, final_loss=None)
    if not np.isfinite(final):
        return RestartResult(index=index, params=None, epoch_losses=history, final_loss=None)
    return RestartResult(index=index, params=params, epoch_losses=history, final_loss=final)


def train(
    dataset: Dataset,
    config: TrainConfig,
    projection: ProjectionSpec,
    *,
    initial: QPNetParams | None = None,
    threads: int = 1,
) -> tuple[QPNetParams, TrainReport]:
    """Train ``config.restarts`` networks and keep the best final loss.

    Each restart has its own generator seeded by (seed, restart index), so
    results do not depend on ``threads``.

    Raises:
        TrainingError: every restart diverged.
    """
    if config.batch_size > dataset.n_samples:
        raise TrainingError(
            f"batch size {config.batch_size} exceeds the dataset size {dataset.n_samples}"
        )
    if projection.dim != dataset.input_dim:
        raise DimensionError(
            f"projection acts on dimension {projection.dim}, labels have {dataset.input_dim}"
        )
    if initial is not None and (initial.n != dataset.state_dim or initial.m != dataset.input_dim):
        raise DimensionError("initial parameters do not match the dataset dimensions")

    n_z = initial.n_z if initial is not None else config.n_z
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads) as executor:
        results = list(
            executor.map(
                lambda index: _train_restart(index, dataset, config, projection, initial),
                range(config.restarts),
            )
        )
    wall_time = time.perf_counter() - started

    finished = [r for r in results if r.params is not None and r.final_loss is not None]
    if not finished:
        raise TrainingError(f"all {config.restarts} restarts diverged for n_z={n_z}")
    best = min(finished, key=lambda r: (r.final_loss, r.index))
    assert best.params is not None and best.final_loss is not None
    report = TrainReport(
        n_z=n_z,
        epoch_losses=[r.epoch_losses for r in results],
        final_losses=[r.final_loss for r in results],
        failed_restarts=[r.index for r in results if r.params is None],
        best_restart=best.index,
        best_loss=best.final_loss,
        wall_time_s=wall_time,
    )
    logger.info(
        "n_z=%d: best loss %.4e from restart %d (%d failed, %.1fs)",
        n_z,
        report.best_loss,
        report.best_restart,
        len(report.failed_restarts),
        wall_time,
    )
    return best.params, report


def train_sweep(
    dataset: Dataset,
    config: TrainConfig,
    projection: ProjectionSpec,
    sizes: list[int],
    *,
    threads: int = 1,
) -> dict[int, tuple[QPNetParams, TrainReport]]:
    """Train one network per pQP size."""
    results: dict[int, tuple[QPNetParams, TrainReport]] = {}
    for n_z in sizes:
        results[n_z] = train(
            dataset, config.model_copy(update={"n_z": n_z}), projection, threads=threads
        )
    return results
