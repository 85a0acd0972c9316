"""Tests for the finite-difference gradient suite."""

import numpy as np
import pytest

from qpfit import gradcheck
from qpfit.gradcheck import check_instance, random_instance, run_gradcheck
from qpfit.models import ProjectionKind, ProjectionSpec, QPNetParams


def test_random_instance_shapes() -> None:
    """Sizes stay in the documented ranges and L is well conditioned."""
    rng = np.random.default_rng(1)

    for _ in range(20):
        params, x, weights = random_instance(rng)
        assert 1 <= params.n <= 4
        assert 1 <= params.n_z <= 8
        assert 1 <= params.m <= 3
        assert x.shape == (params.n,)
        assert weights.shape == (params.m,)
        singular_values = np.linalg.svd(params.L, compute_uv=False)
        assert singular_values.min() >= 0.5 - 1e-9
        assert singular_values.max() <= 2.0 + 1e-9


def test_random_instances_cover_eps_and_projections() -> None:
    """ε takes the values 1e-4, 1e-2 and 1, and saturating projections appear."""
    rng = np.random.default_rng(2)

    draws = [random_instance(rng)[0] for _ in range(60)]

    assert {params.eps for params in draws} == {1e-4, 1e-2, 1.0}
    kinds = {params.projection.kind for params in draws}
    assert kinds == {ProjectionKind.BOX, ProjectionKind.PSI_SATURATION}
    assert any(
        params.projection.kind == ProjectionKind.BOX and params.projection.upper[0] == 0.5
        for params in draws
    )


def test_run_gradcheck_passes() -> None:
    """Analytic gradients agree with central differences."""
    report = run_gradcheck(instances=15, seed=3)

    assert report.passed
    assert report.instances == 15
    assert len(report.cases) + report.skipped_instances == 15
    assert all(case.checked > 0 for case in report.cases)


def test_run_gradcheck_exercises_saturation() -> None:
    """Over enough draws some checked instances have clamped outputs."""
    report = run_gradcheck(instances=40, seed=11)

    assert report.passed
    assert any(case.saturated > 0 for case in report.cases)
    assert any(case.eps == 1.0 for case in report.cases)


def test_check_instance_relu() -> None:
    """A one-unit network in its free region has exact gradients."""
    params = QPNetParams(
        F=np.array([[1.0]]),
        f=np.array([0.0]),
        L=np.array([[1.0]]),
        eps=0.0,
        G=np.array([[2.0]]),
        g=np.array([0.5]),
        projection=ProjectionSpec.box([-1e6], [1e6]),
    )

    case = check_instance(0, params, np.array([-1.5]), np.array([1.0]), 1e-6)

    assert case.checked == 5
    assert case.skipped == 0
    assert case.saturated == 0
    assert case.max_rel_error < 1e-6


def test_check_instance_psi_saturation() -> None:
    """One clamped and one free output under Ψ·sat with ε = 1."""
    params = QPNetParams(
        F=np.array([[1.0]]),
        f=np.array([0.0]),
        L=np.array([[1.0]]),
        eps=1.0,
        G=np.array([[0.4], [1.0]]),
        g=np.array([0.1, 5.0]),
        projection=ProjectionSpec.psi_saturation(
            np.array([[1.0, 0.3], [0.2, 1.0]]), [-1.0, -1.0], [1.0, 1.0]
        ),
    )

    # z = 0.75 so y3 = (0.4, 5.75): the second output sits on its upper limit
    case = check_instance(0, params, np.array([-1.5]), np.array([1.0, -2.0]), 1e-6)

    assert case.saturated == 1
    assert case.checked == 7
    assert case.skipped == 0
    assert case.max_rel_error < 1e-6


def test_gradcheck_detects_wrong_gradient(monkeypatch: pytest.MonkeyPatch) -> None:
    """Doubling the analytic gradient fails the check."""
    original = gradcheck.backward

    def doubled(trace, params, grad_u):
        return original(trace, params, grad_u).scale(2.0)

    monkeypatch.setattr(gradcheck, "backward", doubled)

    report = run_gradcheck(instances=15, seed=3)

    assert not report.passed
