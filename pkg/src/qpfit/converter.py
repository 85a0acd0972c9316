"""Three-arm multicell step-down DC-DC converter.

States x = [i_dm1, i_dm2, i_cm, v_out] and inputs u = [v_dm1, v_dm2, v_cm]
are phase quantities after the Lunze transform Ψ. The duty cycle of arm i
is (Ψ⁻¹u)_i / V_in.
"""

import logging

import numpy as np
from pydantic import BaseModel, Field, model_validator

from qpfit.exceptions import OperatingPointError
from qpfit.models import (
    ArrayModel,
    LinearMPCProblem,
    NDArray,
    Polyhedron,
    ProjectionSpec,
    Trajectory,
)
from qpfit.mpc import Controller, simulate_closed_loop, terminal_invariant_set
from qpfit.numkit import dare_solve, matrix_exponential, pseudo_inverse

logger = logging.getLogger(__name__)

LUNZE = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [1.0, 1.0, 1.0]]) / 3.0
LUNZE_INV = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [-1.0, -1.0, 1.0]])

X_EQ = np.array([0.0, 0.0, 16.0, 300.0])
STATE_LOWER = np.array([-5.0, -5.0, -10.0, -20.0])
STATE_UPPER = np.array([5.0, 5.0, 30.0, 400.0])
STATE_COST = np.diag([10.0, 10.0, 0.1, 0.1])
INPUT_COST = 0.1 * np.eye(3)
HORIZON = 10
EQUILIBRIUM_TOL = 1e-6


class ConverterParams(BaseModel):
    """Circuit parameters."""

    v_in: float = Field(default=350.0, gt=0.0, description="Input voltage (V)")
    l_s: float = Field(default=4e-3, gt=0.0, description="Self inductance (H)")
    l_m: float = Field(default=-2e-3, description="Mutual inductance (H), negative coupling")
    r: float = Field(default=10e-3, gt=0.0, description="Arm resistance (Ω)")
    l_f: float = Field(default=270e-6, gt=0.0, description="Output filter inductance (H)")
    c_o: float = Field(default=20e-6, gt=0.0, description="Output capacitance (F)")
    r_o: float = Field(default=6.25, gt=0.0, description="Load resistance (Ω)")
    f_sw: float = Field(default=15_000.0, gt=0.0, description="Switching frequency (Hz)")
    d_max: float = Field(default=0.9, gt=0.0, le=1.0, description="Maximum duty cycle")

    @model_validator(mode="after")
    def _check_inductances(self) -> "ConverterParams":
        if self.l_s + self.l_m <= 0.0:
            raise ValueError("differential inductance L_s + L_m must be positive")
        if self.common_mode_inductance <= 0.0:
            raise ValueError("common-mode inductance L_s + 2L_m + 3L_f must be positive")
        return self

    @property
    def common_mode_inductance(self) -> float:
        return self.l_s + 2.0 * self.l_m + 3.0 * self.l_f

    @property
    def period(self) -> float:
        return 1.0 / self.f_sw

    @property
    def v_max(self) -> float:
        """Largest arm voltage, d_max * V_in."""
        return self.d_max * self.v_in


class ConverterModel(ArrayModel):
    """Continuous and zero-order-hold discrete models with the operating point."""

    params: ConverterParams
    psi: NDArray = Field(description="Lunze transform")
    psi_inv: NDArray = Field(description="Inverse Lunze transform")
    A_ct: NDArray
    B_ct: NDArray
    A: NDArray
    B: NDArray
    x_eq: NDArray = Field(description="Operating point [0, 0, 16, 300]")
    u_eq: NDArray = Field(description="B†(I - A) x_eq")

    @property
    def equilibrium_residual(self) -> float:
        return float(np.abs(self.A @ self.x_eq + self.B @ self.u_eq - self.x_eq).max())


def continuous_matrices(params: ConverterParams) -> tuple[np.ndarray, np.ndarray]:
    """A_ct and B_ct of the averaged model."""
    l_dm = params.l_s + params.l_m
    l_cm = params.common_mode_inductance
    A_ct = np.array(
        [
            [-params.r / l_dm, 0.0, 0.0, 0.0],
            [0.0, -params.r / l_dm, 0.0, 0.0],
            [0.0, 0.0, -params.r / l_cm, -1.0 / l_cm],
            [0.0, 0.0, 3.0 / params.c_o, -1.0 / (params.r_o * params.c_o)],
        ]
    )
    # Differential rows use 1/L_s, unlike A_ct's 1/(L_s + L_m).
    B_ct = np.array(
        [
            [1.0 / params.l_s, 0.0, 0.0],
            [0.0, 1.0 / params.l_s, 0.0],
            [0.0, 0.0, 1.0 / l_cm],
            [0.0, 0.0, 0.0],
        ]
    )
    return A_ct, B_ct


def zero_order_hold(
    A_ct: np.ndarray, B_ct: np.ndarray, period: float
) -> tuple[np.ndarray, np.ndarray]:
    """Discretize through the exponential of [[A, B], [0, 0]] T."""
    n, m = B_ct.shape
    augmented = np.zeros((n + m, n + m))
    augmented[:n, :n] = A_ct
    augmented[:n, n:] = B_ct
    exponential = matrix_exponential(augmented * period)
    return exponential[:n, :n], exponential[:n, n:]


def build_model(params: ConverterParams | None = None) -> ConverterModel:
    """Converter model discretized at the switching frequency.

    Raises:
        OperatingPointError: no constant input holds x_eq, as happens when the
            load no longer draws i_cm = v_out / (3 R_o) at the operating point.
    """
    params = params or ConverterParams()
    A_ct, B_ct = continuous_matrices(params)
    A, B = zero_order_hold(A_ct, B_ct, params.period)
    u_eq = pseudo_inverse(B) @ (np.eye(4) - A) @ X_EQ
    model = ConverterModel(
        params=params,
        psi=LUNZE,
        psi_inv=LUNZE_INV,
        A_ct=A_ct,
        B_ct=B_ct,
        A=A,
        B=B,
        x_eq=X_EQ.copy(),
        u_eq=u_eq,
    )
    if model.equilibrium_residual > EQUILIBRIUM_TOL:
        raise OperatingPointError(
            f"x_eq is not reachable as a steady state: residual {model.equilibrium_residual:.3e}"
            f" exceeds {EQUILIBRIUM_TOL:g}"
        )
    logger.debug("equilibrium residual %.3e", model.equilibrium_residual)
    return model


def input_polyhedron(model: ConverterModel) -> Polyhedron:
    """0 <= Ψ⁻¹(u + u_eq) <= d_max V_in for deviation inputs u."""
    phase_eq = model.psi_inv @ model.u_eq
    return Polyhedron(
        A=np.vstack([model.psi_inv, -model.psi_inv]),
        b=np.concatenate([model.params.v_max - phase_eq, phase_eq]),
        dim=3,
    )


def assemble_mpc(
    model: ConverterModel, *, horizon: int = HORIZON, terminal: bool = True
) -> LinearMPCProblem:
    """Deviation-coordinate MPC around (x_eq, u_eq).

    P solves the Riccati equation; the terminal set is the invariant set of
    the LQR closed loop when ``terminal`` is set.
    """
    riccati = dare_solve(model.A, model.B, STATE_COST, INPUT_COST)
    problem = LinearMPCProblem(
        A=model.A,
        B=model.B,
        Q=STATE_COST,
        R=INPUT_COST,
        P=riccati.P,
        horizon=horizon,
        state_lower=STATE_LOWER - model.x_eq,
        state_upper=STATE_UPPER - model.x_eq,
        input_set=input_polyhedron(model),
        x_ref=model.x_eq,
        u_ref=model.u_eq,
    )
    if not terminal:
        return problem
    terminal_set = terminal_invariant_set(problem)
    logger.info("converter terminal set has %d halfspaces", terminal_set.n_rows)
    return problem.model_copy(update={"terminal_set": terminal_set})


def projection_spec(model: ConverterModel) -> ProjectionSpec:
    """Last layer Ψ·clamp(y, 0, d_max V_in) shifted to deviation inputs."""
    return ProjectionSpec.psi_saturation(
        model.psi, 0.0, model.params.v_max, offset=-model.u_eq
    )


def duty_cycles(model: ConverterModel, inputs: np.ndarray) -> np.ndarray:
    """Arm duty cycles for physical inputs, one row per input."""
    inputs = np.atleast_2d(inputs)
    return inputs @ model.psi_inv.T / model.params.v_in


def dc_steady_state(model: ConverterModel, u: np.ndarray) -> np.ndarray:
    """Discrete steady state x = (I - A)⁻¹ B u for a constant physical input."""
    return np.linalg.solve(np.eye(4) - model.A, model.B @ np.asarray(u, dtype=float))


def initial_conditions() -> list[np.ndarray]:
    """Start-up state and four corners of a sub-box of the state constraints."""
    return [
        np.zeros(4),
        np.array([2.0, -2.0, 5.0, 50.0]),
        np.array([-2.0, 2.0, 25.0, 350.0]),
        np.array([2.0, 2.0, 25.0, 50.0]),
        np.array([-2.0, -2.0, 5.0, 350.0]),
    ]


def simulate(
    model: ConverterModel,
    problem: LinearMPCProblem,
    controller: Controller,
    x0: np.ndarray,
    steps: int = 50,
    *,
    label: str = "controller",
) -> Trajectory:
    """Closed-loop run of the discrete converter from a physical state."""
    if not np.allclose(problem.A, model.A) or not np.allclose(problem.B, model.B):
        raise ValueError("problem was not assembled from this converter model")
    return simulate_closed_loop(problem, controller, x0, steps, label=label)


class SteadyStateMetrics(BaseModel):
    """Offsets over the trailing window of a trajectory."""

    i_dm1_error_a: float
    i_dm2_error_a: float
    i_cm_error_pct: float
    v_out_error_pct: float
    settled: bool = Field(description="Window variation within 10x the reported error")
    window: int

    def passes(self, i_dm_limit: float = 0.2, relative_limit_pct: float = 5.0) -> bool:
        return (
            self.i_dm1_error_a <= i_dm_limit
            and self.i_dm2_error_a <= i_dm_limit
            and self.i_cm_error_pct <= relative_limit_pct
            and self.v_out_error_pct <= relative_limit_pct
        )


def steady_state_metrics(
    trajectory: Trajectory, x_eq: np.ndarray = X_EQ, window: int = 10
) -> SteadyStateMetrics:
    """Absolute i_dm and relative i_cm/v_out errors of the window mean."""
    states = trajectory.states[-window:]
    mean = states.mean(axis=0)
    error = np.abs(mean - x_eq)
    variation = np.ptp(states, axis=0)
    settled = (
        not trajectory.halted
        and states.shape[0] >= window
        and bool(np.all(variation <= 10.0 * np.maximum(error, 1e-9)))
    )
    return SteadyStateMetrics(
        i_dm1_error_a=float(error[0]),
        i_dm2_error_a=float(error[1]),
        i_cm_error_pct=float(100.0 * error[2] / abs(x_eq[2])),
        v_out_error_pct=float(100.0 * error[3] / abs(x_eq[3])),
        settled=settled,
        window=window,
    )
