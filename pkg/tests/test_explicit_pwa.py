"""Tests for critical-region enumeration and the explicit controller."""

from pathlib import Path

import numpy as np
import pytest

from qpfit.exceptions import RegionNotFoundError
from qpfit.explicit_pwa import (
    complexity_report,
    enumerate_regions,
    export_binary,
    load_controller,
    locate,
    locate_and_eval,
    save_controller,
    storage_bytes,
)
from qpfit.models import LinearMPCProblem, Polyhedron, PWAController, ProjectionSpec, QPNetParams
from qpfit.mpc import condense, oracle_control
from qpfit.numkit import chebyshev_ball, solve_nonneg_qp
from qpfit.qpnet import construct_exact, evaluate, init_params, pqp_matrix


def relu_network() -> QPNetParams:
    """u(x) = clamp(max(-x, 0), -10, 10)."""
    return QPNetParams(
        F=np.array([[1.0]]),
        f=np.array([0.0]),
        L=np.array([[1.0]]),
        eps=0.0,
        G=np.array([[1.0]]),
        g=np.array([0.0]),
        projection=ProjectionSpec.box([-10.0], [10.0]),
    )


def test_relu_network_has_two_regions() -> None:
    """x <= 0 with u = -x and x >= 0 with u = 0."""
    controller = enumerate_regions(relu_network())

    assert controller.region_count == 2
    free, clamped = controller.regions
    assert free.bitmask == 0 and clamped.bitmask == 1
    assert free.K == pytest.approx([[-1.0]])
    assert clamped.K == pytest.approx([[0.0]])
    assert free.contains(np.array([-1.0])) and not free.contains(np.array([1.0]))
    assert clamped.contains(np.array([1.0])) and not clamped.contains(np.array([-1.0]))
    assert locate_and_eval(controller, np.array([-3.0])) == pytest.approx([3.0])
    assert locate_and_eval(controller, np.array([2.0])) == pytest.approx([0.0])


def test_explicit_matches_implicit(rng: np.random.Generator) -> None:
    """The PWA form reproduces the network at 10⁴ random states."""
    params = init_params(2, 4, ProjectionSpec.box([-0.5, -0.5], [0.5, 0.5]), rng, eps=1e-3)
    params = params.model_copy(update={"f": rng.standard_normal(4)})
    controller = enumerate_regions(params, threads=2)

    assert 1 <= controller.region_count <= 16
    assert controller.skipped_active_sets == []
    worst = max(
        float(np.abs(locate_and_eval(controller, x) - evaluate(params, x)).max())
        for x in rng.uniform(-3.0, 3.0, size=(10_000, 2))
    )
    assert worst <= 1e-8


def test_orthant_network_has_four_regions() -> None:
    """n_z = 2, L = I, F = -I: one region per orthant with u = max(x, 0)."""
    params = QPNetParams(
        F=-np.eye(2),
        f=np.zeros(2),
        L=np.eye(2),
        eps=0.0,
        G=np.eye(2),
        g=np.zeros(2),
        projection=ProjectionSpec.box([-10.0, -10.0], [10.0, 10.0]),
    )

    controller = enumerate_regions(params)

    assert controller.region_count == 4
    assert [region.bitmask for region in controller.regions] == [0, 1, 2, 3]
    for x in ([1.0, 2.0], [-1.0, 2.0], [1.0, -2.0], [-1.0, -2.0]):
        state = np.array(x)
        assert locate_and_eval(controller, state) == pytest.approx(np.maximum(state, 0.0))


def _ball_samples(
    rng: np.random.Generator, center: np.ndarray, radius: float, count: int
) -> np.ndarray:
    directions = rng.standard_normal((count, center.shape[0]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    scales = radius * rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / center.shape[0])
    return center + scales * directions


def test_regions_agree_with_pqp_solutions(rng: np.random.Generator) -> None:
    """Inside every region the stored active set and law match a direct pQP solve."""
    params = init_params(2, 4, ProjectionSpec.box([-0.5, -0.5], [0.5, 0.5]), rng, eps=1e-3)
    params = params.model_copy(update={"f": rng.standard_normal(4)})
    controller = enumerate_regions(params)
    M = pqp_matrix(params)

    for region in controller.regions:
        center, radius = chebyshev_ball(Polyhedron(A=region.E, b=region.e, dim=2))
        assert radius > 0.0
        for x in _ball_samples(rng, center, 0.9 * radius, 100):
            assert region.contains(x)
            solution = solve_nonneg_qp(M, 2.0 * params.L.T @ (params.F @ x + params.f))
            assert solution.primal[region.active_set] == pytest.approx(0.0, abs=1e-8)
            assert region.K @ x + region.k == pytest.approx(
                params.G @ solution.primal + params.g, abs=1e-8
            )


def test_explicit_controller_is_continuous_across_boundaries(rng: np.random.Generator) -> None:
    """Points 1e-7 apart on either side of a region boundary give nearly equal outputs."""
    params = init_params(2, 4, ProjectionSpec.box([-0.5, -0.5], [0.5, 0.5]), rng, eps=1e-3)
    params = params.model_copy(update={"f": rng.standard_normal(4)})
    controller = enumerate_regions(params)
    centers = [
        chebyshev_ball(Polyhedron(A=region.E, b=region.e, dim=2))[0] for region in controller.regions
    ]
    crossings = 0

    for start, end in zip(centers, centers[1:], strict=False):
        if locate(controller, start) == locate(controller, end):
            continue
        low, high = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (low + high)
            if locate(controller, start + mid * (end - start)) == locate(controller, start):
                low = mid
            else:
                high = mid
        boundary = start + high * (end - start)
        half_step = 0.5e-7 * (end - start) / np.linalg.norm(end - start)
        before = locate_and_eval(controller, boundary - half_step)
        after = locate_and_eval(controller, boundary + half_step)
        assert np.abs(before - after).max() <= 1e-5
        crossings += 1

    assert crossings > 0


def test_explicit_exact_controller_matches_oracle(scalar_problem: LinearMPCProblem) -> None:
    """Exporting the constructed network gives the saturated MPC law."""
    condensed = condense(scalar_problem)
    params = construct_exact(condensed, ProjectionSpec.box([-1.0], [1.0]))
    controller = enumerate_regions(params)

    for x in np.linspace(-4.9, 4.9, 50):
        state = np.array([x])
        assert locate_and_eval(controller, state) == pytest.approx(
            oracle_control(condensed, state), abs=1e-6
        )


def test_regions_are_sorted_by_bitmask(rng: np.random.Generator) -> None:
    """Region order is deterministic."""
    params = init_params(2, 3, ProjectionSpec.box([-1.0], [1.0]), rng, eps=1e-3)

    controller = enumerate_regions(params)

    masks = [region.bitmask for region in controller.regions]
    assert masks == sorted(masks)
    for region in controller.regions:
        assert region.active_set == [i for i in range(3) if region.bitmask >> i & 1]


def test_singular_blocks_are_skipped() -> None:
    """A zero column in L with ε = 0 makes some free blocks singular."""
    params = QPNetParams(
        F=np.array([[1.0], [1.0]]),
        f=np.zeros(2),
        L=np.array([[1.0, 0.0], [0.0, 0.0]]),
        eps=0.0,
        G=np.array([[1.0, 1.0]]),
        g=np.zeros(1),
        projection=ProjectionSpec.box([-10.0], [10.0]),
    )

    controller = enumerate_regions(params)

    assert controller.skipped_active_sets == [0, 1]


def test_locate_outside_every_region() -> None:
    """A controller with no regions cannot locate anything."""
    controller = enumerate_regions(relu_network()).model_copy(update={"regions": []})

    with pytest.raises(RegionNotFoundError):
        locate(controller, np.array([0.5]))


def test_storage_matches_binary_length(rng: np.random.Generator) -> None:
    """The storage formula counts exactly the bytes written."""
    relu = enumerate_regions(relu_network())
    assert storage_bytes(relu) == 52
    assert len(export_binary(relu)) == 52

    transform = np.array([[1.0, 0.2], [0.0, 1.0]])
    params = init_params(2, 3, ProjectionSpec.psi_saturation(transform, 0.0, 1.0), rng, eps=1e-3)
    controller = enumerate_regions(params)
    assert len(export_binary(controller)) == storage_bytes(controller)


def test_binary_layout_header() -> None:
    """Little-endian region count then the first halfspace count."""
    blob = export_binary(enumerate_regions(relu_network()))

    assert np.frombuffer(blob[:4], dtype="<i4")[0] == 2
    assert np.frombuffer(blob[4:8], dtype="<i4")[0] == 1
    assert np.frombuffer(blob[-8:], dtype="<f4") == pytest.approx([-10.0, 10.0])


def test_save_and_load_controller(tmp_path: Path) -> None:
    """The JSON form reloads and the binary lands next to it."""
    controller = enumerate_regions(relu_network())
    path = tmp_path / "pwa.json"

    save_controller(controller, path, binary=True)
    restored = load_controller(path)

    assert isinstance(restored, PWAController)
    assert restored.region_count == 2
    assert path.with_suffix(".bin").stat().st_size == storage_bytes(controller)
    assert locate_and_eval(restored, np.array([-2.0])) == pytest.approx([2.0])


def test_complexity_report() -> None:
    """Counts and storage are reported with non-negative timings."""
    controller = enumerate_regions(relu_network())

    report = complexity_report(controller, timing_points=50)

    assert report.n_z == 1
    assert report.region_count == 2
    assert report.storage_bytes == 52
    assert 0.0 <= report.eval_time_median_s <= report.eval_time_max_s
