"""Shared fixtures for qpfit tests."""

import numpy as np
import pytest

from qpfit.models import LinearMPCProblem, Polyhedron, ProjectionSpec


def box_problem(
    A: np.ndarray,
    B: np.ndarray,
    *,
    horizon: int,
    u_max: float | None = None,
    x_max: float | None = None,
    Q: np.ndarray | None = None,
    R: np.ndarray | None = None,
    P: np.ndarray | None = None,
) -> LinearMPCProblem:
    """Problem with symmetric box limits on inputs and states."""
    A = np.atleast_2d(A).astype(float)
    B = np.atleast_2d(B).astype(float)
    n, m = B.shape
    return LinearMPCProblem(
        A=A,
        B=B,
        Q=np.eye(n) if Q is None else Q,
        R=np.eye(m) if R is None else R,
        P=np.eye(n) if P is None else P,
        horizon=horizon,
        state_lower=None if x_max is None else -x_max * np.ones(n),
        state_upper=None if x_max is None else x_max * np.ones(n),
        input_set=None
        if u_max is None
        else Polyhedron.from_box(-u_max * np.ones(m), u_max * np.ones(m)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator."""
    return np.random.default_rng(20240611)


@pytest.fixture
def scalar_problem() -> LinearMPCProblem:
    """A = B = Q = R = P = 1, H = 1, |u| <= 1."""
    return box_problem(np.array([[1.0]]), np.array([[1.0]]), horizon=1, u_max=1.0)


@pytest.fixture
def unconstrained_scalar() -> LinearMPCProblem:
    """A = B = Q = R = P = 1, H = 1, no constraints."""
    return box_problem(np.array([[1.0]]), np.array([[1.0]]), horizon=1)


@pytest.fixture
def double_integrator() -> LinearMPCProblem:
    """Discrete double integrator with input and state boxes, H = 3."""
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    return box_problem(A, B, horizon=3, u_max=1.0, x_max=5.0)


@pytest.fixture
def unit_box() -> ProjectionSpec:
    """Clamp to [-1, 1]."""
    return ProjectionSpec.box([-1.0], [1.0])


def random_problem(rng: np.random.Generator) -> LinearMPCProblem:
    """Small random problem with PD costs and box limits."""
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 3))
    horizon = int(rng.integers(1, 6))
    A = rng.uniform(-1.0, 1.0, size=(n, n))
    A *= 1.1 / max(1e-9, float(np.abs(np.linalg.eigvals(A)).max()))
    B = rng.uniform(-1.0, 1.0, size=(n, m))
    root = rng.uniform(-1.0, 1.0, size=(n, n))
    Q = root @ root.T + np.eye(n)
    return box_problem(A, B, horizon=horizon, u_max=1.0, x_max=10.0, Q=Q, P=Q)
