"""Tests for the loss, the Adam update and restart training."""

import numpy as np
import pytest

from qpfit.config import TrainConfig
from qpfit.exceptions import DimensionError, SolverError, TrainingError
from qpfit.models import Dataset, LinearMPCProblem, ProjectionSpec, QPNetParams
from qpfit.mpc import condense, sample_dataset
from qpfit.qpnet import construct_exact, evaluate, init_params
from qpfit.training import (
    AdamState,
    adam_step,
    batch_loss,
    dataset_loss,
    mse_loss,
    train,
    train_sweep,
)

WIDE = ProjectionSpec.box([-1e6], [1e6])


def small_config(**overrides) -> TrainConfig:
    values = dict(batch_size=10, epochs=30, learning_rate=1e-2, restarts=2, n_z=2, seed=5)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def linear_dataset(unconstrained_scalar: LinearMPCProblem) -> Dataset:
    """40 samples of u = -x/2 on [-1, 1]."""
    condensed = condense(unconstrained_scalar)
    return sample_dataset(condensed, np.array([-1.0]), np.array([1.0]), 40, seed=2, chunk_size=40)


def test_mse_loss() -> None:
    """Mean over components with gradient 2r/m."""
    loss, grad = mse_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]))

    assert loss == pytest.approx(2.5)
    assert grad == pytest.approx([1.0, 2.0])
    assert mse_loss(np.array([1.0, 0.0]), np.zeros(2))[0] == pytest.approx(0.5)
    assert mse_loss(np.array([0.3, -0.2]), np.array([0.3, -0.2]))[0] == 0.0


def test_mse_loss_gradient_matches_finite_differences(rng: np.random.Generator) -> None:
    """Central differences of the loss agree with its gradient."""
    step = 1e-6
    for _ in range(20):
        prediction = rng.standard_normal(3)
        target = rng.standard_normal(3)
        _, grad = mse_loss(prediction, target)
        numeric = [
            (mse_loss(prediction + step * e, target)[0] - mse_loss(prediction - step * e, target)[0])
            / (2 * step)
            for e in np.eye(3)
        ]
        assert grad == pytest.approx(numeric, abs=1e-8)


def test_adam_zero_gradient_keeps_parameters() -> None:
    """Nothing moves without a gradient."""
    params = {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}
    grads = {"w": np.zeros(2), "b": np.zeros(1)}

    _, updated = adam_step(AdamState.fresh(params), params, grads, 0.1)

    assert updated["w"] == pytest.approx([1.0, -2.0])
    assert updated["b"] == pytest.approx([0.5])


def test_adam_first_step_moves_by_learning_rate() -> None:
    """Bias correction makes the first step lr * sign(grad)."""
    params = {"w": np.array([1.0, -1.0, 0.5])}
    grads = {"w": np.array([0.3, -20.0, 0.0])}

    state, updated = adam_step(AdamState.fresh(params), params, grads, 0.1)

    assert state.step == 1
    assert updated["w"] == pytest.approx([0.9, -0.9, 0.5], abs=1e-6)
    assert params["w"] == pytest.approx([1.0, -1.0, 0.5])


def test_adam_minimizes_quadratic() -> None:
    """Repeated steps approach the minimizer of |w - 3|²."""
    params = {"w": np.array([0.0])}
    state = AdamState.fresh(params)

    for _ in range(2000):
        state, params = adam_step(state, params, {"w": 2.0 * (params["w"] - 3.0)}, 0.05)

    assert params["w"] == pytest.approx([3.0], abs=1e-2)


def test_batch_loss_is_order_independent(linear_dataset: Dataset) -> None:
    """Shuffled indices give the same loss and gradient."""
    rng = np.random.default_rng(0)
    params = init_params(1, 3, WIDE, rng)
    indices = np.arange(10)

    loss_a, grads_a = batch_loss(params, linear_dataset, indices)
    loss_b, grads_b = batch_loss(params, linear_dataset, indices[::-1].copy())

    assert loss_a == loss_b
    for key, value in grads_a.as_dict().items():
        assert np.array_equal(value, grads_b.as_dict()[key])


def test_single_sample_step_reduces_its_loss(rng: np.random.Generator) -> None:
    """A tiny Adam step on one sample lowers that sample's loss."""
    dataset = Dataset(
        states=np.array([[0.4, -0.8]]),
        labels=np.array([[5.0]]),
        label_scale=np.array([1.0]),
        seed=0,
        box_lower=np.array([-1.0, -1.0]),
        box_upper=np.array([1.0, 1.0]),
    )
    params = init_params(2, 3, WIDE, rng, eps=1e-2)
    batch = np.array([0])

    before, grads = batch_loss(params, dataset, batch)
    _, weights = adam_step(AdamState.fresh(params.trainable()), params.trainable(), grads.as_dict(), 1e-6)
    after, _ = batch_loss(params.with_trainable(weights), dataset, batch)

    assert after < before


def test_train_fits_realizable_target() -> None:
    """Labels produced by a network of the same size are fitted to loss < 1e-5."""
    target_net = QPNetParams(
        F=np.array([[1.0], [-1.0]]),
        f=np.zeros(2),
        L=np.eye(2),
        eps=1e-4,
        G=np.array([[0.5, -0.3]]),
        g=np.array([0.1]),
        projection=WIDE,
    )
    states = np.linspace(-1.0, 1.0, 40).reshape(-1, 1)
    dataset = Dataset(
        states=states,
        labels=np.array([evaluate(target_net, x) for x in states]),
        label_scale=np.array([1.0]),
        seed=0,
        box_lower=np.array([-1.0]),
        box_upper=np.array([1.0]),
    )
    noise = np.random.default_rng(7)
    start = target_net.with_trainable(
        {key: value + 0.05 * noise.standard_normal(value.shape) for key, value in target_net.trainable().items()}
    )
    config = small_config(batch_size=40, epochs=400, learning_rate=1e-3, restarts=1, eps=1e-4)

    params, report = train(dataset, config, WIDE, initial=start)

    assert report.best_loss < 1e-5
    assert report.epoch_losses[0][-1] < report.epoch_losses[0][0]


def test_train_reduces_loss(linear_dataset: Dataset) -> None:
    """The best restart ends below where it started."""
    params, report = train(linear_dataset, small_config(), WIDE)

    best_history = report.epoch_losses[report.best_restart]
    assert len(best_history) == 30
    assert best_history[-1] < best_history[0]
    assert report.best_loss == pytest.approx(dataset_loss(params, linear_dataset))
    assert report.best_loss == min(loss for loss in report.final_losses if loss is not None)
    assert params.label_scale is not None
    assert params.n_z == 2


def test_train_is_deterministic_across_threads(linear_dataset: Dataset) -> None:
    """Restart seeds do not depend on scheduling."""
    config = small_config(epochs=3)

    single, report_single = train(linear_dataset, config, WIDE, threads=1)
    pooled, report_pooled = train(linear_dataset, config, WIDE, threads=2)

    assert report_single.final_losses == report_pooled.final_losses
    for key, value in single.trainable().items():
        assert np.array_equal(value, pooled.trainable()[key])


def test_train_from_exact_network_stays_accurate(
    unconstrained_scalar: LinearMPCProblem, linear_dataset: Dataset
) -> None:
    """Starting at the exact network keeps the loss near zero."""
    initial = construct_exact(condense(unconstrained_scalar), WIDE)

    params, report = train(
        linear_dataset, small_config(epochs=2, learning_rate=1e-4, restarts=1), WIDE, initial=initial
    )

    assert report.n_z == initial.n_z
    assert report.best_loss < 1e-3


def test_train_rejects_large_batch(linear_dataset: Dataset) -> None:
    """The batch cannot exceed the dataset."""
    with pytest.raises(TrainingError):
        train(linear_dataset, small_config(batch_size=41), WIDE)


def test_train_rejects_projection_mismatch(linear_dataset: Dataset) -> None:
    """The projection acts on the label dimension."""
    with pytest.raises(DimensionError):
        train(linear_dataset, small_config(), ProjectionSpec.box([-1.0, -1.0], [1.0, 1.0]))


def test_train_all_restarts_diverge(linear_dataset: Dataset, monkeypatch: pytest.MonkeyPatch) -> None:
    """A solver failure in every restart is a TrainingError."""

    def failing(*args, **kwargs):
        raise SolverError("pQP ended with status max_iter")

    monkeypatch.setattr("qpfit.training.batch_loss", failing)

    with pytest.raises(TrainingError):
        train(linear_dataset, small_config(), WIDE)


def test_train_sweep_sizes(linear_dataset: Dataset) -> None:
    """One trained network per requested size."""
    results = train_sweep(linear_dataset, small_config(epochs=2, restarts=1), WIDE, [1, 3])

    assert sorted(results) == [1, 3]
    assert results[1][0].n_z == 1
    assert results[3][1].n_z == 3
