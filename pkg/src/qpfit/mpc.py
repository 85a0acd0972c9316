"""Linear MPC: condensing, dual, oracle control, invariant sets, sampling and simulation."""

import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from qpfit.exceptions import (
    ConvergenceError,
    DimensionError,
    NotPositiveDefiniteError,
    SamplingError,
    SolverError,
    UnboundedProblemError,
)
from qpfit.models import (
    CondensedQP,
    Dataset,
    DualQP,
    LinearMPCProblem,
    Polyhedron,
    QPSolution,
    QPStatus,
    Trajectory,
)
from qpfit.numkit import (
    DEFAULT_TOLERANCE,
    dare_solve,
    lp_solve,
    reduce_polyhedron,
    solve_nonneg_qp,
    solve_qp,
    spectral_radius,
)

logger = logging.getLogger(__name__)

DUAL_REGULARIZATION = 1e-10
INVARIANT_SET_MAX_ITER = 100

Controller = Callable[[np.ndarray], np.ndarray | None]
"""Maps a deviation state to a deviation input, or None when it cannot act."""


def prediction_matrices(
    A: np.ndarray, B: np.ndarray, horizon: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked predictions X = S_x x0 + S_u U for X = [x_1; ...; x_H]."""
    n, m = B.shape
    S_x = np.zeros((horizon * n, n))
    S_u = np.zeros((horizon * n, horizon * m))
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])
    for k in range(1, horizon + 1):
        rows = slice((k - 1) * n, k * n)
        S_x[rows] = powers[k]
        for j in range(k):
            S_u[rows, j * m : (j + 1) * m] = powers[k - 1 - j] @ B
    return S_x, S_u


def _state_box_rows(problem: LinearMPCProblem) -> tuple[np.ndarray, np.ndarray]:
    assert problem.state_lower is not None and problem.state_upper is not None
    box = Polyhedron.from_box(problem.state_lower, problem.state_upper)
    return box.A, box.b


def condense(problem: LinearMPCProblem) -> CondensedQP:
    """Eliminate the states and return the dense parametric QP.

    Row order: input constraints for k = 0..H-1, state box for k = 1..H-1
    (and k = H when there is no terminal set), then the terminal set.

    Args:
        problem: Linear MPC problem in deviation coordinates.

    Returns:
        CondensedQP with Hessian Λ, cross term Γ and constraints
        Φ U <= ω + Ω x0.

    Raises:
        NotPositiveDefiniteError: Λ is not positive definite.
    """
    n, m, H = problem.state_dim, problem.input_dim, problem.horizon
    S_x, S_u = prediction_matrices(problem.A, problem.B, H)
    Q_bar = block_diag(*([problem.Q] * (H - 1) + [problem.P]))
    R_bar = block_diag(*([problem.R] * H))
    hessian = S_u.T @ Q_bar @ S_u + R_bar
    hessian = 0.5 * (hessian + hessian.T)
    try:
        cho_factor(hessian)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError("condensed Hessian is not positive definite") from exc
    cross = 2.0 * S_x.T @ Q_bar @ S_u

    phi_blocks: list[np.ndarray] = []
    omega_blocks: list[np.ndarray] = []
    offset_blocks: list[np.ndarray] = []
    n_input = n_state = n_terminal = 0

    if problem.input_set is not None and problem.input_set.n_rows:
        Hu, hu = problem.input_set.A, problem.input_set.b
        for k in range(H):
            block = np.zeros((Hu.shape[0], H * m))
            block[:, k * m : (k + 1) * m] = Hu
            phi_blocks.append(block)
            omega_blocks.append(np.zeros((Hu.shape[0], n)))
            offset_blocks.append(hu)
            n_input += Hu.shape[0]

    E, e = _state_box_rows(problem)
    last_boxed = H if problem.terminal_set is None else H - 1
    if E.shape[0]:
        for k in range(1, last_boxed + 1):
            rows = slice((k - 1) * n, k * n)
            phi_blocks.append(E @ S_u[rows])
            omega_blocks.append(-E @ S_x[rows])
            offset_blocks.append(e)
            n_state += E.shape[0]

    if problem.terminal_set is not None and problem.terminal_set.n_rows:
        Ht, ht = problem.terminal_set.A, problem.terminal_set.b
        rows = slice((H - 1) * n, H * n)
        phi_blocks.append(Ht @ S_u[rows])
        omega_blocks.append(-Ht @ S_x[rows])
        offset_blocks.append(ht)
        n_terminal = Ht.shape[0]

    condensed = CondensedQP(
        hessian=hessian,
        cross_term=cross,
        constraint_matrix=np.vstack(phi_blocks) if phi_blocks else np.zeros((0, H * m)),
        constraint_state=np.vstack(omega_blocks) if omega_blocks else np.zeros((0, n)),
        constraint_offset=np.concatenate(offset_blocks) if offset_blocks else np.zeros(0),
        state_dim=n,
        input_dim=m,
        horizon=H,
        n_input_rows=n_input,
        n_state_rows=n_state,
        n_terminal_rows=n_terminal,
        problem_hash=problem.problem_hash(),
    )
    logger.debug(
        "condensed problem: %d variables, %d constraints", condensed.n_vars, condensed.n_constraints
    )
    return condensed


def _hessian_solve(condensed: CondensedQP, rhs: np.ndarray) -> np.ndarray:
    return cho_solve(cho_factor(condensed.hessian), rhs)


def assemble_dual(condensed: CondensedQP, regularization: float = DUAL_REGULARIZATION) -> DualQP:
    """Dual of the condensed QP over λ >= 0.

    The primal optimum equals minus the dual optimum (constant included).
    ``regularization`` is scaled by ``max(1, ||M||)`` and only used when the
    dual is solved.
    """
    Phi = condensed.constraint_matrix
    Gamma = condensed.cross_term
    inv_phi = _hessian_solve(condensed, Phi.T)
    inv_gamma = _hessian_solve(condensed, Gamma.T)
    hessian = 0.25 * Phi @ inv_phi
    scale = max(1.0, float(np.abs(hessian).max(initial=0.0)))
    return DualQP(
        hessian=0.5 * (hessian + hessian.T),
        linear_state=condensed.constraint_state + 0.5 * Phi @ inv_gamma,
        linear_offset=condensed.constraint_offset,
        constant_state=0.25 * Gamma @ inv_gamma,
        regularization=regularization * scale,
    )


def solve_dual(dual: DualQP, x0: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> QPSolution:
    """Minimize the dual objective over λ >= 0."""
    p = dual.hessian.shape[0]
    return solve_nonneg_qp(dual.hessian + dual.regularization * np.eye(p), dual.linear_term(x0), tol=tol)


def recover_primal(condensed: CondensedQP, lam: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """U = -½Λ⁻¹(Φ'λ + Γ'x)."""
    rhs = condensed.constraint_matrix.T @ lam + condensed.cross_term.T @ x0
    return -0.5 * _hessian_solve(condensed, rhs)


def solve_condensed(
    condensed: CondensedQP, x0: np.ndarray, tol: float = DEFAULT_TOLERANCE
) -> QPSolution:
    """Solve the condensed QP at ``x0``; the primal is the full input sequence."""
    x0 = np.asarray(x0, dtype=float).reshape(condensed.state_dim)
    return solve_qp(
        2.0 * condensed.hessian,
        condensed.cross_term.T @ x0,
        condensed.constraint_matrix,
        condensed.rhs(x0),
        tol=tol,
    )


def oracle_control(
    condensed: CondensedQP, x0: np.ndarray, tol: float = DEFAULT_TOLERANCE
) -> np.ndarray | None:
    """First optimal move u_0*(x0), or None when x0 is infeasible.

    Args:
        condensed: Output of :func:`condense`.
        x0: Deviation state.
        tol: Active-set tolerance.

    Returns:
        The first m entries of the optimal input sequence, or None.

    Raises:
        SolverError: the active-set method hit its iteration cap.
    """
    solution = solve_condensed(condensed, x0, tol)
    if solution.status == QPStatus.INFEASIBLE:
        return None
    if solution.status == QPStatus.MAX_ITER:
        raise SolverError(f"oracle QP did not converge at x0={np.asarray(x0).tolist()}")
    return solution.primal[: condensed.input_dim]


def solve_sparse(problem: LinearMPCProblem, x0: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> QPSolution:
    """Solve the MPC with states kept as variables.

    Decision vector [u_0, ..., u_{H-1}, x_1, ..., x_H]; dynamics enter as
    equalities. Used to cross-check the condensed form.
    """
    n, m, H = problem.state_dim, problem.input_dim, problem.horizon
    x0 = np.asarray(x0, dtype=float).reshape(n)
    nu, nx = H * m, H * n
    hessian = 2.0 * block_diag(*([problem.R] * H + [problem.Q] * (H - 1) + [problem.P]))

    A_eq = np.zeros((nx, nu + nx))
    b_eq = np.zeros(nx)
    for k in range(H):
        rows = slice(k * n, (k + 1) * n)
        A_eq[rows, nu + k * n : nu + (k + 1) * n] = np.eye(n)
        A_eq[rows, k * m : (k + 1) * m] = -problem.B
        if k == 0:
            b_eq[rows] = problem.A @ x0
        else:
            A_eq[rows, nu + (k - 1) * n : nu + k * n] = -problem.A

    G_rows: list[np.ndarray] = []
    h_rows: list[np.ndarray] = []
    if problem.input_set is not None:
        for k in range(H):
            block = np.zeros((problem.input_set.n_rows, nu + nx))
            block[:, k * m : (k + 1) * m] = problem.input_set.A
            G_rows.append(block)
            h_rows.append(problem.input_set.b)
    E, e = _state_box_rows(problem)
    last_boxed = H if problem.terminal_set is None else H - 1
    for k in range(1, last_boxed + 1):
        block = np.zeros((E.shape[0], nu + nx))
        block[:, nu + (k - 1) * n : nu + k * n] = E
        G_rows.append(block)
        h_rows.append(e)
    if problem.terminal_set is not None:
        block = np.zeros((problem.terminal_set.n_rows, nu + nx))
        block[:, nu + (H - 1) * n :] = problem.terminal_set.A
        G_rows.append(block)
        h_rows.append(problem.terminal_set.b)

    return solve_qp(
        hessian,
        np.zeros(nu + nx),
        np.vstack(G_rows) if G_rows else None,
        np.concatenate(h_rows) if h_rows else None,
        A_eq=A_eq,
        b_eq=b_eq,
        tol=tol,
    )


def terminal_invariant_set(
    problem: LinearMPCProblem,
    *,
    max_iter: int = INVARIANT_SET_MAX_ITER,
    tol: float = DEFAULT_TOLERANCE,
) -> Polyhedron:
    """Maximal positively invariant set of x+ = (A + BK)x under the LQR gain.

    The constraint set is the state box intersected with {x : K x in input set}.
    Rows are added for each horizon t until none of the t-step constraints can
    be violated from inside the current set.

    Raises:
        ConvergenceError: the closed loop is not stable or the set did not
            finitely determine within ``max_iter`` steps.
    """
    riccati = dare_solve(problem.A, problem.B, problem.Q, problem.R)
    closed_loop = problem.A + problem.B @ riccati.K
    rho = spectral_radius(closed_loop)
    if rho >= 1.0:
        raise ConvergenceError(f"LQR closed loop is not stable (spectral radius {rho:.4f})")

    E, e = _state_box_rows(problem)
    rows = [E]
    offsets = [e]
    if problem.input_set is not None:
        rows.append(problem.input_set.A @ riccati.K)
        offsets.append(problem.input_set.b)
    C = np.vstack(rows)
    d = np.concatenate(offsets)
    n = problem.state_dim
    if C.shape[0] == 0:
        return Polyhedron(A=np.zeros((0, n)), b=np.zeros(0), dim=n)

    set_A, set_b = C.copy(), d.copy()
    power = np.eye(n)
    for step in range(1, max_iter + 1):
        power = closed_loop @ power
        future = C @ power
        violated: list[int] = []
        for i in range(future.shape[0]):
            try:
                point = lp_solve(-future[i], set_A, set_b)
            except UnboundedProblemError:
                violated.append(i)
                continue
            if future[i] @ point > d[i] + tol * max(1.0, abs(d[i])):
                violated.append(i)
        if not violated:
            logger.info("invariant set determined after %d steps", step)
            return reduce_polyhedron(Polyhedron(A=set_A, b=set_b, dim=n))
        set_A = np.vstack([set_A, future[violated]])
        set_b = np.concatenate([set_b, d[violated]])
    raise ConvergenceError(f"invariant set not determined within {max_iter} steps")


def sample_dataset(
    condensed: CondensedQP,
    box_lower: np.ndarray,
    box_upper: np.ndarray,
    n_samples: int,
    seed: int,
    *,
    threads: int = 1,
    chunk_size: int = 1000,
    min_acceptance: float = 1e-3,
) -> Dataset:
    """Draw states uniformly in the box and label them with the oracle.

    Infeasible draws are rejected. Draws come from one generator in fixed
    chunks and are labeled in order, so the result does not depend on
    ``threads``.

    Args:
        condensed: Output of :func:`condense`.
        box_lower: Lower corner of the sampling box.
        box_upper: Upper corner of the sampling box.
        n_samples: Feasible samples to keep.
        seed: Seed of the single generator.
        threads: Worker threads for labeling.
        chunk_size: Draws per chunk.
        min_acceptance: Smallest tolerated share of feasible draws.

    Returns:
        Dataset of states and first moves with the seed recorded.

    Raises:
        SamplingError: the first chunk accepts less than ``min_acceptance``
            or the draw budget ``n_samples / min_acceptance`` runs out.
    """
    lower = np.asarray(box_lower, dtype=float).reshape(-1)
    upper = np.asarray(box_upper, dtype=float).reshape(-1)
    if lower.shape != (condensed.state_dim,) or upper.shape != lower.shape:
        raise DimensionError(f"sampling box must have dimension {condensed.state_dim}")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise SamplingError("sampling box must be finite")
    if np.any(lower >= upper):
        raise SamplingError("sampling box requires lower < upper")

    rng = np.random.default_rng(seed)
    budget = int(np.ceil(n_samples / min_acceptance)) + chunk_size
    states: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    drawn = 0

    def label(x: np.ndarray) -> np.ndarray | None:
        return oracle_control(condensed, x)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        while len(states) < n_samples:
            if drawn >= budget:
                raise SamplingError(
                    f"only {len(states)} of {n_samples} feasible samples after {drawn} draws"
                )
            batch = rng.uniform(lower, upper, size=(chunk_size, condensed.state_dim))
            results = list(executor.map(label, batch))
            accepted = 0
            for x, u in zip(batch, results, strict=True):
                if u is not None and len(states) < n_samples:
                    states.append(x)
                    labels.append(u)
                    accepted += 1
            if drawn == 0 and accepted < min_acceptance * chunk_size and accepted < n_samples:
                raise SamplingError(
                    f"acceptance rate {accepted / chunk_size:.2e} is below {min_acceptance:.0e}"
                )
            drawn += chunk_size
            logger.debug("sampled %d/%d feasible states", len(states), n_samples)

    label_array = np.array(labels)
    spread = label_array.std(axis=0)
    scale = np.where(spread > 0.0, 1.0 / np.where(spread > 0.0, spread, 1.0), 1.0)
    dataset = Dataset(
        states=np.array(states),
        labels=label_array,
        label_scale=scale,
        seed=seed,
        box_lower=lower,
        box_upper=upper,
        problem_hash=condensed.problem_hash,
        n_drawn=drawn,
    )
    logger.info(
        "sampled %d states (acceptance %.3f)", dataset.n_samples, dataset.acceptance_rate
    )
    return dataset


def simulate_closed_loop(
    problem: LinearMPCProblem,
    controller: Controller,
    x0: np.ndarray,
    steps: int,
    *,
    label: str = "controller",
) -> Trajectory:
    """Run x+ = A x + B u in physical coordinates.

    The controller sees deviation states and returns deviation inputs. A
    controller returning None halts the run; the trajectory up to that point
    is kept.
    """
    assert problem.x_ref is not None and problem.u_ref is not None
    x = np.asarray(x0, dtype=float).reshape(problem.state_dim)
    states = [x]
    inputs: list[np.ndarray] = []
    message = None
    for k in range(steps):
        try:
            u_dev = controller(x - problem.x_ref)
        except SolverError as exc:
            u_dev, message = None, str(exc)
        if u_dev is None:
            message = message or f"controller returned no input at step {k}"
            logger.warning("%s: %s", label, message)
            break
        u = problem.u_ref + np.asarray(u_dev, dtype=float).reshape(problem.input_dim)
        inputs.append(u)
        x = problem.A @ x + problem.B @ u
        states.append(x)
    return Trajectory(
        controller=label,
        states=np.array(states),
        inputs=np.array(inputs).reshape(-1, problem.input_dim),
        halted=message is not None,
        message=message,
    )


def oracle_controller(condensed: CondensedQP) -> Controller:
    """Implicit MPC as a closed-loop controller."""

    def control(x: np.ndarray) -> np.ndarray | None:
        return oracle_control(condensed, x)

    return control
