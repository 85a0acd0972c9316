"""Dense linear-algebra and convex-solver kernels.

Matrices are float64 numpy arrays. QP solvers use primal active-set methods
so that the reported active set is exact, which the network gradients and
the explicit-controller enumeration both depend on.
"""

import logging

import numpy as np
from scipy.linalg import LinAlgError, expm, solve_discrete_are
from scipy.optimize import linprog

from qpfit.exceptions import (
    ConvergenceError,
    DimensionError,
    InfeasibleProblemError,
    NotPositiveDefiniteError,
    SolverError,
    UnboundedProblemError,
)
from qpfit.models import Polyhedron, QPSolution, QPStatus, RiccatiSolution

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
ITERATION_FACTOR = 50
_ZERO = 1e-14


def _vector(value: np.ndarray | list[float], name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if sum(size > 1 for size in array.shape) > 1:
        raise DimensionError(f"{name} must be a vector, got shape {array.shape}")
    return array.reshape(-1)


def _square(value: np.ndarray, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"{name} must be square, got {matrix.shape}")
    return matrix


# Matrix functions
def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """exp(M) for a square matrix."""
    M = _square(M, "M")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix exponential of a non-finite matrix")
    return expm(M)


def spd_sqrt(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root of a symmetric positive definite matrix."""
    M = _square(M, "M")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    eigenvalues, vectors = np.linalg.eigh(0.5 * (M + M.T))
    if eigenvalues.size and eigenvalues.min() <= 0.0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (smallest eigenvalue {eigenvalues.min():.3e})"
        )
    root = (vectors * np.sqrt(eigenvalues)) @ vectors.T
    return 0.5 * (root + root.T)


def pseudo_inverse(M: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudo-inverse."""
    return np.linalg.pinv(np.atleast_2d(np.asarray(M, dtype=float)))


def spectral_radius(M: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(_square(M, "M"))).max(initial=0.0))


# Riccati
def riccati_residual(
    A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray
) -> float:
    """Infinity norm of P - (A'PA - A'PB(R + B'PB)^-1 B'PA + Q)."""
    return float(np.abs(P - _riccati_map(A, B, Q, R, P)).max(initial=0.0))


def _riccati_map(
    A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray
) -> np.ndarray:
    BtP = B.T @ P
    gain = np.linalg.solve(R + BtP @ B, BtP @ A)
    nxt = A.T @ P @ A - A.T @ P @ B @ gain + Q
    return 0.5 * (nxt + nxt.T)


def dare_solve(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    *,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> RiccatiSolution:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    scipy's Schur solver provides the starting point; fixed-point iteration
    of the Riccati map polishes it (or replaces it when scipy fails) until
    the residual is below ``tol`` relative to ``max(1, ||P||)``.

    Raises:
        ConvergenceError: the iteration did not reach the tolerance.
    """
    A = _square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _square(Q, "Q")
    R = _square(R, "R")
    try:
        P = solve_discrete_are(A, B, Q, R)
    except (LinAlgError, ValueError) as exc:
        logger.debug("solve_discrete_are failed (%s); iterating from Q", exc)
        P = Q.copy()
    P = 0.5 * (P + P.T)

    residual = riccati_residual(A, B, Q, R, P)
    iterations = 0
    while residual > tol * max(1.0, float(np.abs(P).max(initial=0.0))):
        if iterations >= max_iter or not np.all(np.isfinite(P)):
            raise ConvergenceError(
                f"Riccati iteration stalled at residual {residual:.3e} after {iterations} steps"
            )
        P = _riccati_map(A, B, Q, R, P)
        residual = riccati_residual(A, B, Q, R, P)
        iterations += 1

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return RiccatiSolution(P=P, K=K, residual=residual)


# Linear programs
def lp_solve(
    c: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    *,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    bounds: tuple[float | None, float | None] | list[tuple[float | None, float | None]] = (
        None,
        None,
    ),
) -> np.ndarray:
    """Minimize c'x subject to G x <= h (and A_eq x = b_eq).

    Args:
        c: Objective vector of length n.
        G: Inequality rows, reshaped to (-1, n).
        h: Inequality offsets.
        A_eq: Optional equality rows.
        b_eq: Equality offsets, required with ``A_eq``.
        bounds: Variable bounds in linprog form; free by default.

    Returns:
        A minimizer as a float array of length n.

    Raises:
        InfeasibleProblemError: no feasible point.
        UnboundedProblemError: objective unbounded below.
        SolverError: any other HiGHS failure.
    """
    c = _vector(c, "c")
    G = np.asarray(G, dtype=float).reshape(-1, c.shape[0])
    h = _vector(h, "h")
    result = linprog(
        c,
        A_ub=G if G.shape[0] else None,
        b_ub=h if G.shape[0] else None,
        A_eq=A_eq if A_eq is not None and np.size(A_eq) else None,
        b_eq=b_eq if A_eq is not None and np.size(A_eq) else None,
        bounds=bounds,
        method="highs",
    )
    if result.status == 2:
        raise InfeasibleProblemError(result.message)
    if result.status == 3:
        raise UnboundedProblemError(result.message)
    if result.status != 0:
        raise SolverError(f"LP solver failed: {result.message}")
    return np.asarray(result.x, dtype=float)


def lp_feasible(G: np.ndarray, h: np.ndarray) -> bool:
    """Whether {x : G x <= h} is nonempty."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[0] == 0 or G.size == 0:
        return True
    try:
        lp_solve(np.zeros(G.shape[1]), G, h)
    except InfeasibleProblemError:
        return False
    return True


def chebyshev_ball(poly: Polyhedron, radius_cap: float = 1.0) -> tuple[np.ndarray, float]:
    """Center and radius of the largest ball inside ``poly``.

    Args:
        poly: Polyhedron {x : A x <= b}.
        radius_cap: Upper bound on the radius so unbounded sets have a
            finite answer.

    Returns:
        (center, radius). The radius is negative when the set is empty.
    """
    n = poly.dim
    norms = np.linalg.norm(poly.A, axis=1)
    G = np.hstack([poly.A, norms[:, None]])
    objective = np.zeros(n + 1)
    objective[-1] = -1.0
    bounds = [(None, None)] * n + [(None, radius_cap)]
    try:
        solution = lp_solve(objective, G, poly.b, bounds=bounds)
    except InfeasibleProblemError:
        return np.zeros(n), -1.0
    return solution[:n], float(solution[-1])


def reduce_polyhedron(poly: Polyhedron, tol: float = DEFAULT_TOLERANCE) -> Polyhedron:
    """Drop redundant inequalities.

    Each row is tested by maximizing its left-hand side over the remaining
    rows; the row stays only if it can be violated.

    Raises:
        InfeasibleProblemError: a zero row has a negative offset.
    """
    norms = np.linalg.norm(poly.A, axis=1)
    zero_rows = norms <= _ZERO
    if np.any(poly.b[zero_rows] < -tol):
        raise InfeasibleProblemError("polyhedron contains an infeasible constant row")
    keep = [i for i in range(poly.n_rows) if not zero_rows[i]]
    for i in list(keep):
        others = [j for j in keep if j != i]
        G = np.vstack([poly.A[others], poly.A[i]])
        h = np.concatenate([poly.b[others], [poly.b[i] + 1.0]])
        point = lp_solve(-poly.A[i], G, h)
        if poly.A[i] @ point <= poly.b[i] + tol * max(1.0, abs(poly.b[i])):
            keep.remove(i)
    return Polyhedron(A=poly.A[keep], b=poly.b[keep], dim=poly.dim)


# Quadratic programs
def _kkt_solve(H: np.ndarray, C: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve [[H, C'], [C, 0]] [s; μ] = [rhs; 0]."""
    n = H.shape[0]
    k = C.shape[0]
    if k == 0:
        try:
            return np.linalg.solve(H, rhs), np.zeros(0)
        except LinAlgError as exc:
            raise SolverError("singular reduced Hessian") from exc
    kkt = np.block([[H, C.T], [C, np.zeros((k, k))]])
    try:
        solution = np.linalg.solve(kkt, np.concatenate([rhs, np.zeros(k)]))
    except LinAlgError as exc:
        raise SolverError("singular KKT system") from exc
    return solution[:n], solution[n:]


def _independent_rows(rows: np.ndarray, candidates: list[int], base: np.ndarray) -> list[int]:
    """Greedy subset of ``candidates`` keeping [base; rows[chosen]] full row rank."""
    chosen: list[int] = []
    current = base
    for i in candidates:
        trial = np.vstack([current, rows[i]])
        if np.linalg.matrix_rank(trial) == trial.shape[0]:
            chosen.append(i)
            current = trial
    return chosen


def _tight(G: np.ndarray, h: np.ndarray, x: np.ndarray, tol: float) -> list[int]:
    slack = h - G @ x
    return [int(i) for i in np.flatnonzero(slack <= tol * np.maximum(1.0, np.abs(h)))]


def solve_qp(
    H: np.ndarray,
    q: np.ndarray,
    G: np.ndarray | None = None,
    h: np.ndarray | None = None,
    *,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int | None = None,
) -> QPSolution:
    """Minimize ½x'Hx + q'x subject to G x <= h and A_eq x = b_eq.

    ``H`` must be symmetric positive definite on the null space of the
    equalities. Primal active-set method: start from a feasible point (the
    unconstrained minimizer when feasible, otherwise an LP phase 1), solve
    the equality-constrained subproblem on the working set, drop the most
    negative multiplier, and stop on a ratio test.

    Returns a solution with status INFEASIBLE when the constraints admit no
    point and MAX_ITER when the iteration cap ``max(50 p, 50)`` is hit.
    """
    q = _vector(q, "q")
    n = q.shape[0]
    H = _square(H, "H")
    if H.shape[0] != n:
        raise DimensionError(f"H is {H.shape} but q has length {n}")
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else _vector(h, "h")
    if G.shape[0] != h.shape[0]:
        raise DimensionError(f"G has {G.shape[0]} rows but h has {h.shape[0]}")
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else _vector(b_eq, "b_eq")
    if A_eq.shape[0] != b_eq.shape[0]:
        raise DimensionError(f"A_eq has {A_eq.shape[0]} rows but b_eq has {b_eq.shape[0]}")
    p = G.shape[0]
    r = A_eq.shape[0]
    cap = max_iter if max_iter is not None else ITERATION_FACTOR * max(p, 1)

    x = _initial_point(H, q, G, h, A_eq, b_eq, tol)
    if x is None:
        return QPSolution(
            primal=np.full(n, np.nan),
            dual=np.zeros(p),
            eq_dual=np.zeros(r),
            active_set=[],
            status=QPStatus.INFEASIBLE,
        )

    working = _independent_rows(G, _tight(G, h, x, tol), A_eq)
    multipliers = np.zeros(r + len(working))
    for iteration in range(1, cap + 1):
        gradient = H @ x + q
        constraints = np.vstack([A_eq, G[working]]) if working else A_eq
        # At s = 0 the step multipliers satisfy Hx + q + C'μ = 0, so μ are the λ.
        step, multipliers = _kkt_solve(H, constraints, -gradient)
        if np.abs(step).max(initial=0.0) <= tol * max(1.0, np.abs(x).max(initial=0.0)):
            inequality = multipliers[r:]
            threshold = -tol * max(1.0, np.abs(gradient).max(initial=0.0))
            if not working or inequality.min() >= threshold:
                return _finish(x, G, h, working, multipliers, r, iteration, tol)
            working.pop(int(np.argmin(inequality)))
            continue

        direction = G @ step
        slack = np.maximum(h - G @ x, 0.0)
        alpha, blocking = 1.0, None
        for i in range(p):
            if i in working:
                continue
            if direction[i] > _ZERO * max(1.0, np.linalg.norm(G[i]) * np.linalg.norm(step)):
                ratio = slack[i] / direction[i]
                if ratio < alpha:
                    alpha, blocking = ratio, i
        x = x + alpha * step
        if blocking is not None:
            working.append(blocking)

    logger.warning("QP active-set method hit its iteration cap (%d)", cap)
    solution = _finish(x, G, h, working, multipliers, r, cap, tol)
    return solution.model_copy(update={"status": QPStatus.MAX_ITER})


def _initial_point(
    H: np.ndarray,
    q: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    A_eq: np.ndarray,
    b_eq: np.ndarray,
    tol: float,
) -> np.ndarray | None:
    n = q.shape[0]
    try:
        if A_eq.shape[0]:
            kkt = np.block([[H, A_eq.T], [A_eq, np.zeros((A_eq.shape[0], A_eq.shape[0]))]])
            candidate = np.linalg.solve(kkt, np.concatenate([-q, b_eq]))[:n]
        else:
            candidate = np.linalg.solve(H, -q)
    except LinAlgError:
        candidate = None
    if candidate is not None and (
        G.shape[0] == 0 or np.all(G @ candidate <= h + tol * np.maximum(1.0, np.abs(h)))
    ):
        return candidate
    try:
        return lp_solve(np.zeros(n), G, h, A_eq=A_eq, b_eq=b_eq)
    except InfeasibleProblemError:
        return None


def _finish(
    x: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    working: list[int],
    multipliers: np.ndarray,
    r: int,
    iterations: int,
    tol: float,
) -> QPSolution:
    dual = np.zeros(G.shape[0])
    if working:
        dual[working] = np.maximum(multipliers[r : r + len(working)], 0.0)
    active = sorted(set(_tight(G, h, x, tol)) | set(working))
    return QPSolution(
        primal=x,
        dual=dual,
        eq_dual=multipliers[:r].copy(),
        active_set=active,
        status=QPStatus.SOLVED,
        iterations=iterations,
    )


def solve_nonneg_qp(
    M: np.ndarray,
    c: np.ndarray,
    *,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int | None = None,
) -> QPSolution:
    """Minimize z'Mz + c'z subject to z >= 0 for symmetric positive definite M.

    Lawson-Hanson style active set on the free variables. The returned dual
    is λ = 2Mz + c, zero on the free set.

    Args:
        M: Symmetric positive definite n_z x n_z matrix.
        c: Linear term.
        tol: Dual sign and feasibility tolerance.
        max_iter: Iteration cap, ITERATION_FACTOR * n_z when None.

    Returns:
        QPSolution with status SOLVED or MAX_ITER. Its active set lists the
        indices held at zero, degenerate ones included.
    """
    c = _vector(c, "c")
    n = c.shape[0]
    M = _square(M, "M")
    if M.shape[0] != n:
        raise DimensionError(f"M is {M.shape} but c has length {n}")
    H = 2.0 * M
    cap = max_iter if max_iter is not None else ITERATION_FACTOR * max(n, 1)
    threshold = tol * max(1.0, float(np.abs(c).max(initial=0.0)))

    z = np.zeros(n)
    free = np.zeros(n, dtype=bool)
    iterations = 0
    status = QPStatus.SOLVED
    while n:
        descent = np.where(free, -np.inf, -(H @ z + c))
        j = int(np.argmax(descent))
        if descent[j] <= threshold:
            break
        free[j] = True
        while True:
            iterations += 1
            if iterations > cap:
                logger.warning("nonnegative QP hit its iteration cap (%d)", cap)
                status = QPStatus.MAX_ITER
                break
            index = np.flatnonzero(free)
            trial = np.zeros(n)
            try:
                trial[index] = np.linalg.solve(H[np.ix_(index, index)], -c[index])
            except LinAlgError as exc:
                raise SolverError("singular free block in nonnegative QP") from exc
            if np.all(trial[index] > 0.0):
                z = trial
                break
            blocked = index[trial[index] <= 0.0]
            ratios = z[blocked] / (z[blocked] - trial[blocked])
            pick = int(np.argmin(ratios))
            z = z + ratios[pick] * (trial - z)
            z[blocked[pick]] = 0.0
            free[blocked[pick]] = False
            free &= z > _ZERO * max(1.0, float(np.abs(z).max(initial=0.0)))
            z[~free] = 0.0
        if status == QPStatus.MAX_ITER:
            break

    dual = H @ z + c
    dual[free] = 0.0
    dual = np.maximum(dual, 0.0)
    return QPSolution(
        primal=z,
        dual=dual,
        active_set=[int(i) for i in np.flatnonzero(~free)],
        status=status,
        iterations=iterations,
    )


def kkt_residual(
    H: np.ndarray,
    q: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    solution: QPSolution,
    *,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
) -> float:
    """Largest violation of stationarity, feasibility, dual sign and complementarity.

    Convention: ½x'Hx + q'x, G x <= h, λ >= 0.
    """
    x = solution.primal
    lam = solution.dual
    G = np.asarray(G, dtype=float).reshape(-1, x.shape[0])
    h = _vector(h, "h")
    stationarity = H @ x + q + G.T @ lam
    parts = [np.abs(stationarity).max(initial=0.0)]
    if A_eq is not None and np.size(A_eq):
        A_eq = np.asarray(A_eq, dtype=float).reshape(-1, x.shape[0])
        stationarity = stationarity + A_eq.T @ solution.eq_dual
        parts[0] = np.abs(stationarity).max(initial=0.0)
        parts.append(np.abs(A_eq @ x - _vector(b_eq, "b_eq")).max(initial=0.0))
    slack = h - G @ x
    parts.append(max(0.0, -float(slack.min(initial=0.0))))
    parts.append(max(0.0, -float(lam.min(initial=0.0))))
    parts.append(float(np.abs(lam * slack).max(initial=0.0)))
    return float(max(parts))
