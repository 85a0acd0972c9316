"""The affine -> pQP -> affine -> projection network.

Forward:  y1 = F x + f
          z  = argmin_{z >= 0} z'(εI + L'L)z + 2 y1'L z
          y3 = G z + g
          u  = project(y3)

Gradients come from differentiating the pQP's KKT conditions on its active
set. At degenerate points (z_i = 0 with zero multiplier) the index is
treated as active, which gives one valid subgradient.
"""

import logging

import numpy as np
from scipy.linalg import block_diag

from qpfit.exceptions import ConstructionError, DimensionError, SolverError
from qpfit.models import (
    CondensedQP,
    ForwardTrace,
    ParamGradients,
    ProjectionKind,
    ProjectionSpec,
    QPNetParams,
    QPStatus,
)
from qpfit.mpc import assemble_dual
from qpfit.numkit import DEFAULT_TOLERANCE, solve_nonneg_qp, solve_qp, spd_sqrt

logger = logging.getLogger(__name__)

EXACT_REGULARIZATION = 1e-11


# Projection layer
def project(spec: ProjectionSpec, y: np.ndarray) -> np.ndarray:
    """Map a pre-projection output onto the input set."""
    y = np.asarray(y, dtype=float).reshape(spec.dim)
    if spec.kind == ProjectionKind.BOX:
        return np.clip(y, spec.lower, spec.upper)
    if spec.kind == ProjectionKind.PSI_SATURATION:
        assert spec.transform is not None and spec.offset is not None
        return spec.transform @ np.clip(y, spec.lower, spec.upper) + spec.offset
    return _project_polyhedron(spec, y)[0]


def _project_polyhedron(spec: ProjectionSpec, y: np.ndarray) -> tuple[np.ndarray, list[int]]:
    assert spec.polyhedron is not None
    poly = spec.polyhedron
    solution = solve_qp(2.0 * np.eye(spec.dim), -2.0 * y, poly.A, poly.b)
    if solution.status != QPStatus.SOLVED:
        raise SolverError(f"projection QP ended with status {solution.status}")
    return solution.primal, solution.active_set


def project_vjp(spec: ProjectionSpec, y: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the projection at ``y``.

    Clamps pass gradient only where the value is strictly inside the limits.
    The polyhedral projection uses the null-space projector of the active rows.
    """
    y = np.asarray(y, dtype=float).reshape(spec.dim)
    grad = np.asarray(grad, dtype=float).reshape(spec.dim)
    if spec.kind == ProjectionKind.BOX:
        return grad * _interior_mask(spec, y)
    if spec.kind == ProjectionKind.PSI_SATURATION:
        assert spec.transform is not None
        return _interior_mask(spec, y) * (spec.transform.T @ grad)
    assert spec.polyhedron is not None
    _, active = _project_polyhedron(spec, y)
    if not active:
        return grad
    rows = spec.polyhedron.A[active]
    projector = np.eye(spec.dim) - rows.T @ np.linalg.pinv(rows @ rows.T) @ rows
    return projector @ grad


def _interior_mask(spec: ProjectionSpec, y: np.ndarray) -> np.ndarray:
    return ((y > spec.lower) & (y < spec.upper)).astype(float)


def neutral_point(spec: ProjectionSpec) -> np.ndarray:
    """Pre-projection value whose projection is closest to zero input."""
    if spec.kind == ProjectionKind.BOX:
        return np.clip(np.zeros(spec.dim), spec.lower, spec.upper)
    if spec.kind == ProjectionKind.PSI_SATURATION:
        assert spec.transform is not None and spec.offset is not None
        return np.clip(np.linalg.solve(spec.transform, -spec.offset), spec.lower, spec.upper)
    return project(spec, np.zeros(spec.dim))


# Forward and backward
def pqp_matrix(params: QPNetParams) -> np.ndarray:
    """M = εI + L'L."""
    return params.eps * np.eye(params.n_z) + params.L.T @ params.L


def forward(params: QPNetParams, x: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> ForwardTrace:
    """Evaluate the network and keep the intermediates needed for gradients.

    Args:
        params: Network weights and projection.
        x: State of length n.
        tol: Tolerance of the nonnegative QP.

    Returns:
        ForwardTrace with y1, z, λ, the active set, y3 and the output y4.

    Raises:
        DimensionError: ``x`` does not have length n.
        SolverError: the pQP did not reach a solution.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != params.n:
        raise DimensionError(f"network expects a state of length {params.n}, got {x.shape[0]}")
    y1 = params.F @ x + params.f
    solution = solve_nonneg_qp(pqp_matrix(params), 2.0 * params.L.T @ y1, tol=tol)
    if solution.status != QPStatus.SOLVED:
        raise SolverError(f"pQP ended with status {solution.status}")
    y3 = params.G @ solution.primal + params.g
    return ForwardTrace(
        x=x,
        y1=y1,
        z=solution.primal,
        lam=solution.dual,
        active_set=solution.active_set,
        y3=y3,
        y4=project(params.projection, y3),
    )


def evaluate(params: QPNetParams, x: np.ndarray) -> np.ndarray:
    """Network output u(x)."""
    return forward(params, x).y4


def pqp_backward(
    trace: ForwardTrace, params: QPNetParams, grad_z: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of a loss through the pQP.

    Given v = dℓ/dz and the free set I, d = M_II⁻¹ v_I (zero elsewhere) and

        dℓ/dy1 = -L d
        dℓ/dL  = -(L z + y1) d' - (L d) z'
        dℓ/dε  = -d'z

    Args:
        trace: Forward pass at the sample.
        params: Network weights.
        grad_z: dℓ/dz.

    Returns:
        (dℓ/dL, dℓ/dy1, dℓ/dε).

    Raises:
        SolverError: the free block of M is singular.
    """
    n_z = params.n_z
    free = np.setdiff1d(np.arange(n_z), np.asarray(trace.active_set, dtype=int))
    d = np.zeros(n_z)
    if free.size:
        M = pqp_matrix(params)
        try:
            d[free] = np.linalg.solve(M[np.ix_(free, free)], np.asarray(grad_z)[free])
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular free block in pQP backward pass") from exc
    L, z = params.L, trace.z
    Ld = L @ d
    grad_L = -np.outer(L @ z + trace.y1, d) - np.outer(Ld, z)
    return grad_L, -Ld, float(-d @ z)


def backward(trace: ForwardTrace, params: QPNetParams, grad_u: np.ndarray) -> ParamGradients:
    """Gradients of a loss with respect to F, f, L, G and g given dℓ/du."""
    grad_y3 = project_vjp(params.projection, trace.y3, grad_u)
    grad_z = params.G.T @ grad_y3
    grad_L, grad_y1, _ = pqp_backward(trace, params, grad_z)
    return ParamGradients(
        F=np.outer(grad_y1, trace.x),
        f=grad_y1,
        L=grad_L,
        G=np.outer(grad_y3, trace.z),
        g=grad_y3,
    )


# Construction
def init_params(
    n: int,
    n_z: int,
    projection: ProjectionSpec,
    rng: np.random.Generator,
    *,
    eps: float = 1e-4,
    init_noise: float = 0.1,
) -> QPNetParams:
    """Random initialization for training.

    F and G are uniform in ±1/sqrt(n_z), f = 0, L = I plus uniform noise, and
    g starts at the projection's neutral point.
    """
    bound = 1.0 / np.sqrt(n_z)
    m = projection.dim
    return QPNetParams(
        F=rng.uniform(-bound, bound, size=(n_z, n)),
        f=np.zeros(n_z),
        L=np.eye(n_z) + rng.uniform(-init_noise, init_noise, size=(n_z, n_z)),
        eps=eps,
        G=rng.uniform(-bound, bound, size=(m, n_z)),
        g=neutral_point(projection),
        projection=projection,
    )


def construct_exact(
    condensed: CondensedQP,
    projection: ProjectionSpec,
    *,
    regularization: float | None = EXACT_REGULARIZATION,
) -> QPNetParams:
    """Network that reproduces the MPC law through the dual problem.

    With x = x⁺ - x⁻ carried by two nonnegative blocks and the dual
    multipliers by a third, z = [x⁺; x⁻; λ] solves the network's pQP and
    u = G z is the first block of -½Λ⁻¹(Φ'λ + Γ'x).

    When ΦΛ^(-1/2) is square and invertible the dual factor is exact.
    Otherwise the dual Hessian M_d is lifted to M_d + δI with δ equal to
    ``regularization`` times max(1, ||M_d||), which perturbs the output by
    O(δ).

    Raises:
        ConstructionError: ``regularization`` is None and ΦΛ^(-1/2) is not
            square invertible.
    """
    n, m, hm = condensed.state_dim, condensed.input_dim, condensed.n_vars
    Phi = condensed.constraint_matrix
    p = Phi.shape[0]
    if projection.dim != m:
        raise DimensionError(f"projection acts on dimension {projection.dim}, not {m}")

    hessian_inv = np.linalg.inv(condensed.hessian)
    hessian_inv = 0.5 * (hessian_inv + hessian_inv.T)
    dual = assemble_dual(condensed, regularization=0.0)
    W, omega = dual.linear_state, dual.linear_offset

    phi_root = Phi @ spd_sqrt(hessian_inv) if p else np.zeros((0, hm))
    if p == hm and p and np.linalg.matrix_rank(phi_root) == p:
        L_dual = 0.5 * phi_root.T
        F_dual = np.linalg.solve(phi_root, W)
        f_dual = np.linalg.solve(phi_root, omega)
    elif p == 0:
        L_dual = np.zeros((0, 0))
        F_dual = np.zeros((0, n))
        f_dual = np.zeros(0)
    elif regularization is None:
        raise ConstructionError(
            f"exact factor needs ΦΛ^(-1/2) square invertible, got {p}x{hm} "
            f"with rank {np.linalg.matrix_rank(phi_root)}"
        )
    else:
        delta = regularization * max(1.0, float(np.abs(dual.hessian).max(initial=0.0)))
        L_dual = spd_sqrt(dual.hessian + delta * np.eye(p))
        F_dual = 0.5 * np.linalg.solve(L_dual, W)
        f_dual = 0.5 * np.linalg.solve(L_dual, omega)
        logger.info("exact construction uses dual regularization δ=%.1e", delta)

    eye = np.eye(n)
    F = np.vstack([-eye, eye, F_dual])
    f = np.concatenate([np.zeros(2 * n), f_dual])
    L = block_diag(eye, eye, L_dual) if p else block_diag(eye, eye)
    state_gain = 0.5 * hessian_inv @ condensed.cross_term.T
    G_full = np.hstack([-state_gain, state_gain, -0.5 * hessian_inv @ Phi.T])
    return QPNetParams(
        F=F,
        f=f,
        L=L,
        eps=0.0,
        G=G_full[:m],
        g=np.zeros(m),
        projection=projection,
    )
