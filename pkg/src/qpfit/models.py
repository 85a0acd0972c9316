"""Pydantic models shared across qpfit."""

import hashlib
import math
from enum import StrEnum
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PlainValidator,
    SerializationInfo,
    computed_field,
    model_validator,
)

from qpfit.exceptions import DimensionError, InfeasibleProblemError, NotPositiveDefiniteError


def _to_array(value: Any) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(float, copy=False)
    return np.asarray(value, dtype=float)


def _encode_nonfinite(data: Any) -> Any:
    if isinstance(data, list):
        return [_encode_nonfinite(item) for item in data]
    if isinstance(data, float) and not math.isfinite(data):
        return str(data)  # "inf", "-inf", "nan"
    return data


def _from_array(value: np.ndarray, info: SerializationInfo) -> Any:
    data = value.tolist()
    if info.mode_is_json() and not np.all(np.isfinite(value)):
        return _encode_nonfinite(data)
    return data


NDArray = Annotated[np.ndarray, PlainValidator(_to_array), PlainSerializer(_from_array)]
"""numpy float array that round-trips through JSON as nested lists."""


def as_matrix(value: np.ndarray, cols: int) -> np.ndarray:
    """Reshape a possibly empty array into a matrix with ``cols`` columns."""
    if value.size == 0:
        return np.zeros((0, cols))
    if value.ndim == 1:
        value = value.reshape(1, -1) if cols != 1 else value.reshape(-1, 1)
    if value.ndim != 2 or value.shape[1] != cols:
        raise DimensionError(f"expected a matrix with {cols} columns, got shape {value.shape}")
    return value


def _is_symmetric(matrix: np.ndarray, tol: float = 1e-9) -> bool:
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    return bool(np.abs(matrix - matrix.T).max(initial=0.0) <= tol * scale)


# Enums
class QPStatus(StrEnum):
    """Outcome of a QP solve."""

    SOLVED = "solved"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


class ProjectionKind(StrEnum):
    """Form of the network's final projection layer."""

    BOX = "box"  # Elementwise clamp
    POLYHEDRON = "polyhedron"  # Euclidean projection by QP
    PSI_SATURATION = "psi_saturation"  # transform @ clamp(y) + offset


class ProblemPreset(StrEnum):
    """Built-in MPC problems."""

    CONVERTER = "converter"


class ControllerKind(StrEnum):
    """Controllers compared in closed loop."""

    ORACLE = "oracle"
    IMPLICIT = "implicit"
    EXPLICIT = "explicit"


class ArrayModel(BaseModel):
    """Base for models carrying numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, populate_by_name=True)


# Solver results
class QPSolution(ArrayModel):
    """Primal/dual solution of an inequality-constrained QP."""

    primal: NDArray = Field(description="Primal optimizer")
    dual: NDArray = Field(description="One multiplier per inequality, nonnegative")
    eq_dual: NDArray = Field(
        default_factory=lambda: np.zeros(0), description="Multipliers of equality constraints"
    )
    active_set: list[int] = Field(description="Inequalities tight at the optimum, ascending")
    status: QPStatus = Field(description="solved, infeasible or max_iter")
    iterations: int = Field(default=0, description="Active-set iterations used")

    @property
    def solved(self) -> bool:
        return self.status == QPStatus.SOLVED


class RiccatiSolution(ArrayModel):
    """Stabilizing DARE solution and the associated LQR gain (u = K x)."""

    P: NDArray = Field(description="Riccati solution, symmetric positive definite")
    K: NDArray = Field(description="LQR gain -(R + B'PB)^-1 B'PA")
    residual: float = Field(description="Infinity-norm Riccati residual")


class Polyhedron(ArrayModel):
    """The set {x : A x <= b}."""

    A: NDArray = Field(description="Halfspace normals, one row per inequality")
    b: NDArray = Field(description="Halfspace offsets")
    dim: int = Field(ge=1, description="Ambient dimension")

    @model_validator(mode="before")
    @classmethod
    def _infer_dim(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("dim") is None:
            A = np.asarray(data.get("A", []), dtype=object)
            if A.ndim == 2 and A.shape[1] > 0:
                data = {**data, "dim": A.shape[1]}
        return data

    @model_validator(mode="after")
    def _check_shapes(self) -> "Polyhedron":
        self.A = as_matrix(self.A, self.dim)
        self.b = self.b.reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise DimensionError(f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]}")
        return self

    @property
    def n_rows(self) -> int:
        return int(self.A.shape[0])

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        """Whether ``x`` satisfies every inequality up to a relative tolerance."""
        if self.n_rows == 0:
            return True
        slack = self.b - self.A @ np.asarray(x, dtype=float)
        return bool(np.all(slack >= -tol * np.maximum(1.0, np.abs(self.b))))

    def is_empty(self) -> bool:
        from qpfit.numkit import lp_feasible

        return not lp_feasible(self.A, self.b)

    @classmethod
    def from_box(cls, lower: np.ndarray, upper: np.ndarray) -> "Polyhedron":
        """Box as a polyhedron; infinite bounds produce no row."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        dim = lower.shape[0]
        eye = np.eye(dim)
        rows, offsets = [], []
        for i in range(dim):
            if np.isfinite(upper[i]):
                rows.append(eye[i])
                offsets.append(upper[i])
        for i in range(dim):
            if np.isfinite(lower[i]):
                rows.append(-eye[i])
                offsets.append(-lower[i])
        return cls(A=np.array(rows).reshape(-1, dim), b=np.array(offsets), dim=dim)


# MPC problem data
class LinearMPCProblem(ArrayModel):
    """Horizon-H linear-quadratic MPC in deviation coordinates.

    The cost is sum_{k<H} x_k'Q x_k + u_k'R u_k + x_H'P x_H subject to
    x_{k+1} = A x_k + B u_k, state box, input polyhedron and terminal set.
    Physical coordinates are deviation + (x_ref, u_ref).
    """

    A: NDArray = Field(description="Dynamics matrix, n x n")
    B: NDArray = Field(description="Input matrix, n x m")
    Q: NDArray = Field(description="State cost, symmetric PSD")
    R: NDArray = Field(description="Input cost, symmetric PD")
    P: NDArray = Field(description="Terminal cost, symmetric PSD")
    horizon: int = Field(ge=1, description="Prediction horizon H")
    state_lower: NDArray | None = Field(default=None, description="State box lower bounds")
    state_upper: NDArray | None = Field(default=None, description="State box upper bounds")
    input_set: Polyhedron | None = Field(default=None, description="Input polyhedron H_u u <= h_u")
    terminal_set: Polyhedron | None = Field(
        default=None, description="Terminal polyhedron H_t x <= h_t"
    )
    x_ref: NDArray | None = Field(default=None, description="State reference (physical)")
    u_ref: NDArray | None = Field(default=None, description="Input reference (physical)")

    @model_validator(mode="after")
    def _validate(self) -> "LinearMPCProblem":
        self.A = np.atleast_2d(self.A)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        self.B = as_matrix(self.B, self.B.shape[-1] if self.B.ndim == 2 else 1)
        if self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape}")
        m = self.B.shape[1]
        self.Q = np.atleast_2d(self.Q)
        self.R = np.atleast_2d(self.R)
        self.P = np.atleast_2d(self.P)
        for name, matrix, size in (("Q", self.Q, n), ("R", self.R, m), ("P", self.P, n)):
            if matrix.shape != (size, size):
                raise DimensionError(f"{name} must be {size}x{size}, got {matrix.shape}")
            if not _is_symmetric(matrix):
                raise NotPositiveDefiniteError(f"{name} is not symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-9 or np.linalg.eigvalsh(self.P).min() < -1e-9:
            raise NotPositiveDefiniteError("Q and P must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise NotPositiveDefiniteError("R must be positive definite")

        self.state_lower = np.full(n, -np.inf) if self.state_lower is None else self.state_lower
        self.state_upper = np.full(n, np.inf) if self.state_upper is None else self.state_upper
        if self.state_lower.shape != (n,) or self.state_upper.shape != (n,):
            raise DimensionError(f"state box bounds must have length {n}")
        if np.any(self.state_lower >= self.state_upper):
            raise InfeasibleProblemError("state box requires lower < upper componentwise")
        for name, poly, dim in (("input_set", self.input_set, m), ("terminal_set", self.terminal_set, n)):
            if poly is None:
                continue
            if poly.dim != dim:
                raise DimensionError(f"{name} must live in dimension {dim}, got {poly.dim}")
            if poly.is_empty():
                raise InfeasibleProblemError(f"{name} is empty")
        self.x_ref = np.zeros(n) if self.x_ref is None else self.x_ref.reshape(n)
        self.u_ref = np.zeros(m) if self.u_ref is None else self.u_ref.reshape(m)
        return self

    @property
    def state_dim(self) -> int:
        return int(self.A.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.B.shape[1])

    def problem_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class CondensedQP(ArrayModel):
    """Dense parametric QP: min U'ΛU + x'ΓU  s.t.  ΦU <= Ωx + ω."""

    hessian: NDArray = Field(description="Λ, SPD, Hm x Hm")
    cross_term: NDArray = Field(description="Γ, n x Hm")
    constraint_matrix: NDArray = Field(description="Φ, p x Hm")
    constraint_state: NDArray = Field(description="Ω, p x n")
    constraint_offset: NDArray = Field(description="ω, length p")
    state_dim: int = Field(ge=1)
    input_dim: int = Field(ge=1)
    horizon: int = Field(ge=1)
    n_input_rows: int = Field(default=0, ge=0, description="Rows from input constraints")
    n_state_rows: int = Field(default=0, ge=0, description="Rows from the state box")
    n_terminal_rows: int = Field(default=0, ge=0, description="Rows from the terminal set")
    problem_hash: str = Field(default="", description="Hash of the source problem")

    @model_validator(mode="after")
    def _check_shapes(self) -> "CondensedQP":
        hm = self.horizon * self.input_dim
        self.hessian = np.atleast_2d(self.hessian)
        if self.hessian.shape != (hm, hm):
            raise DimensionError(f"Λ must be {hm}x{hm}, got {self.hessian.shape}")
        self.cross_term = as_matrix(self.cross_term, hm)
        if self.cross_term.shape[0] != self.state_dim:
            raise DimensionError(f"Γ must be {self.state_dim}x{hm}, got {self.cross_term.shape}")
        self.constraint_matrix = as_matrix(self.constraint_matrix, hm)
        self.constraint_state = as_matrix(self.constraint_state, self.state_dim)
        self.constraint_offset = self.constraint_offset.reshape(-1)
        p = self.constraint_offset.shape[0]
        if self.constraint_matrix.shape[0] != p or self.constraint_state.shape[0] != p:
            raise DimensionError("Φ, Ω and ω must have the same number of rows")
        return self

    @property
    def n_vars(self) -> int:
        return self.horizon * self.input_dim

    @property
    def n_constraints(self) -> int:
        return int(self.constraint_offset.shape[0])

    def rhs(self, x0: np.ndarray) -> np.ndarray:
        """Constraint right-hand side Ωx + ω."""
        return self.constraint_state @ x0 + self.constraint_offset


class DualQP(ArrayModel):
    """Dual of the condensed QP over λ >= 0.

    Objective: λ'Mλ + (W x + ω)'λ + x'C x, with M = ¼ΦΛ⁻¹Φ',
    W = Ω + ½ΦΛ⁻¹Γ' and C = ¼ΓΛ⁻¹Γ'.
    """

    hessian: NDArray = Field(description="M, symmetric PSD, p x p")
    linear_state: NDArray = Field(description="W, p x n")
    linear_offset: NDArray = Field(description="ω, length p")
    constant_state: NDArray = Field(description="C, n x n")
    regularization: float = Field(ge=0.0, description="Diagonal shift used when solving")

    def linear_term(self, x0: np.ndarray) -> np.ndarray:
        return self.linear_state @ x0 + self.linear_offset

    def objective(self, lam: np.ndarray, x0: np.ndarray) -> float:
        """Dual objective including the constant term."""
        return float(
            lam @ self.hessian @ lam + self.linear_term(x0) @ lam + x0 @ self.constant_state @ x0
        )


class Dataset(ArrayModel):
    """Labeled samples (x_i, u_i) of the optimal controller."""

    states: NDArray = Field(description="N x n sampled states (deviation coordinates)")
    labels: NDArray = Field(description="N x m first control moves")
    label_scale: NDArray = Field(description="Per-component label scale, strictly positive")
    seed: int = Field(ge=0, description="Sampling seed")
    box_lower: NDArray = Field(description="Sampling box lower corner")
    box_upper: NDArray = Field(description="Sampling box upper corner")
    problem_hash: str = Field(default="", description="Hash of the sampled problem")
    n_drawn: int = Field(default=0, ge=0, description="Points drawn, including rejected ones")

    @model_validator(mode="after")
    def _check_shapes(self) -> "Dataset":
        self.states = np.atleast_2d(self.states)
        self.labels = np.atleast_2d(self.labels)
        if self.states.shape[0] != self.labels.shape[0]:
            raise DimensionError("states and labels must have the same number of rows")
        if self.label_scale.shape != (self.labels.shape[1],):
            raise DimensionError("label_scale must have one entry per input component")
        if np.any(self.label_scale <= 0.0):
            raise ValueError("label_scale must be strictly positive")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.states.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def input_dim(self) -> int:
        return int(self.labels.shape[1])

    @property
    def acceptance_rate(self) -> float:
        return self.n_samples / self.n_drawn if self.n_drawn else 1.0

    def scale(self, u: np.ndarray) -> np.ndarray:
        return u * self.label_scale

    def unscale(self, u_scaled: np.ndarray) -> np.ndarray:
        return u_scaled / self.label_scale

    def scaled_labels(self) -> np.ndarray:
        return self.scale(self.labels)


# Network
class ProjectionSpec(ArrayModel):
    """Final layer mapping y3 onto the input set."""

    kind: ProjectionKind
    dim: int = Field(ge=1, description="Control dimension m")
    lower: NDArray | None = Field(default=None, description="Clamp lower limits")
    upper: NDArray | None = Field(default=None, description="Clamp upper limits")
    transform: NDArray | None = Field(default=None, description="Ψ for psi_saturation")
    offset: NDArray | None = Field(default=None, description="Output offset for psi_saturation")
    polyhedron: Polyhedron | None = Field(default=None, description="Set for kind=polyhedron")

    @model_validator(mode="after")
    def _validate(self) -> "ProjectionSpec":
        m = self.dim
        if self.kind in (ProjectionKind.BOX, ProjectionKind.PSI_SATURATION):
            if self.lower is None or self.upper is None:
                raise ValueError(f"{self.kind} projection needs lower and upper limits")
            self.lower = np.broadcast_to(self.lower, (m,)).astype(float)
            self.upper = np.broadcast_to(self.upper, (m,)).astype(float)
            if np.any(self.lower > self.upper):
                raise InfeasibleProblemError("projection limits require lower <= upper")
        if self.kind == ProjectionKind.PSI_SATURATION:
            self.transform = np.eye(m) if self.transform is None else np.atleast_2d(self.transform)
            self.offset = np.zeros(m) if self.offset is None else self.offset.reshape(m)
            if self.transform.shape != (m, m):
                raise DimensionError(f"transform must be {m}x{m}")
        if self.kind == ProjectionKind.POLYHEDRON:
            if self.polyhedron is None or self.polyhedron.dim != m:
                raise DimensionError(f"polyhedron projection needs a set in dimension {m}")
            if self.polyhedron.is_empty():
                raise InfeasibleProblemError("projection polyhedron is empty")
        return self

    @classmethod
    def box(cls, lower: Any, upper: Any) -> "ProjectionSpec":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        return cls(kind=ProjectionKind.BOX, dim=lower.shape[0], lower=lower, upper=upper)

    @classmethod
    def psi_saturation(
        cls, transform: np.ndarray, lower: Any, upper: Any, offset: np.ndarray | None = None
    ) -> "ProjectionSpec":
        transform = np.atleast_2d(np.asarray(transform, dtype=float))
        return cls(
            kind=ProjectionKind.PSI_SATURATION,
            dim=transform.shape[0],
            transform=transform,
            lower=lower,
            upper=upper,
            offset=offset,
        )

    @classmethod
    def from_polyhedron(cls, polyhedron: Polyhedron) -> "ProjectionSpec":
        return cls(kind=ProjectionKind.POLYHEDRON, dim=polyhedron.dim, polyhedron=polyhedron)

    def parameter_count(self) -> int:
        """Number of stored scalars, for the storage metric."""
        if self.kind == ProjectionKind.BOX:
            return 2 * self.dim
        if self.kind == ProjectionKind.PSI_SATURATION:
            return self.dim * self.dim + 3 * self.dim
        assert self.polyhedron is not None
        return self.polyhedron.n_rows * (self.dim + 1)


MODEL_SCHEMA = "qpfit.model/v1"
PWA_SCHEMA = "qpfit.pwa/v1"


class QPNetParams(ArrayModel):
    """Weights of the affine -> pQP -> affine -> projection network."""

    schema_tag: Literal["qpfit.model/v1"] = Field(default=MODEL_SCHEMA, alias="schema")
    F: NDArray = Field(description="First affine layer weights, n_z x n")
    f: NDArray = Field(description="First affine layer bias, n_z")
    L: NDArray = Field(description="pQP factor, n_z x n_z")
    eps: float = Field(ge=0.0, description="pQP regularizer ε")
    G: NDArray = Field(description="Second affine layer weights, m x n_z")
    g: NDArray = Field(description="Second affine layer bias, m")
    projection: ProjectionSpec
    label_scale: NDArray | None = Field(default=None, description="Scale of the training labels")

    @model_validator(mode="after")
    def _check_shapes(self) -> "QPNetParams":
        self.L = np.atleast_2d(self.L)
        n_z = self.L.shape[0]
        if self.L.shape != (n_z, n_z):
            raise DimensionError(f"L must be square, got {self.L.shape}")
        self.F = as_matrix(self.F, self.F.shape[-1] if self.F.ndim == 2 else 1)
        if self.F.shape[0] != n_z:
            raise DimensionError(f"F must have {n_z} rows, got {self.F.shape}")
        self.f = self.f.reshape(n_z)
        self.G = as_matrix(self.G, n_z)
        m = self.G.shape[0]
        self.g = self.g.reshape(m)
        if self.projection.dim != m:
            raise DimensionError(f"projection acts on dimension {self.projection.dim}, not {m}")
        return self

    @computed_field  # type: ignore[prop-decorator]
    @property
    def n(self) -> int:
        return int(self.F.shape[1])

    @computed_field  # type: ignore[prop-decorator]
    @property
    def m(self) -> int:
        return int(self.G.shape[0])

    @computed_field  # type: ignore[prop-decorator]
    @property
    def n_z(self) -> int:
        return int(self.L.shape[0])

    def trainable(self) -> dict[str, np.ndarray]:
        return {"F": self.F, "f": self.f, "L": self.L, "G": self.G, "g": self.g}

    def with_trainable(self, values: dict[str, np.ndarray]) -> "QPNetParams":
        return self.model_copy(update={key: np.array(val) for key, val in values.items()})

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


class ForwardTrace(ArrayModel):
    """Intermediate values of one forward pass."""

    x: NDArray
    y1: NDArray = Field(description="F x + f")
    z: NDArray = Field(description="pQP optimizer (y2)")
    lam: NDArray = Field(description="pQP multipliers")
    active_set: list[int] = Field(description="Indices with z_i held at zero")
    y3: NDArray = Field(description="G z + g")
    y4: NDArray = Field(description="Projected control")


class ParamGradients(ArrayModel):
    """Loss gradients with the shapes of the trainable parameters."""

    F: NDArray
    f: NDArray
    L: NDArray
    G: NDArray
    g: NDArray

    @classmethod
    def zeros_like(cls, params: QPNetParams) -> "ParamGradients":
        return cls(**{key: np.zeros_like(val) for key, val in params.trainable().items()})

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"F": self.F, "f": self.f, "L": self.L, "G": self.G, "g": self.g}

    def add(self, other: "ParamGradients") -> "ParamGradients":
        mine, theirs = self.as_dict(), other.as_dict()
        return ParamGradients(**{key: mine[key] + theirs[key] for key in mine})

    def scale(self, factor: float) -> "ParamGradients":
        return ParamGradients(**{key: val * factor for key, val in self.as_dict().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(val)) for val in self.as_dict().values())


# Explicit controller
class PWARegion(ArrayModel):
    """Critical region {x : E x <= e} with pre-projection law u = K x + k."""

    active_set: list[int] = Field(description="pQP indices held at zero in this region")
    bitmask: int = Field(ge=0, description="Active set as a bitmask")
    E: NDArray = Field(description="Halfspace normals, one row per facet")
    e: NDArray = Field(description="Halfspace offsets")
    K: NDArray = Field(description="m x n gain of the pre-projection law")
    k: NDArray = Field(description="Affine offset of the pre-projection law")

    @model_validator(mode="after")
    def _check_shapes(self) -> "PWARegion":
        self.K = np.atleast_2d(self.K)
        self.E = as_matrix(self.E, self.K.shape[1])
        self.e = self.e.reshape(-1)
        self.k = self.k.reshape(self.K.shape[0])
        return self

    @property
    def n_halfspaces(self) -> int:
        return int(self.E.shape[0])

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        if self.n_halfspaces == 0:
            return True
        return bool(np.all(self.E @ x <= self.e + tol * np.maximum(1.0, np.abs(self.e))))


class PWAController(ArrayModel):
    """Explicit piecewise-affine form of a trained network."""

    schema_tag: Literal["qpfit.pwa/v1"] = Field(default=PWA_SCHEMA, alias="schema")
    regions: list[PWARegion]
    projection: ProjectionSpec
    state_dim: int = Field(ge=1)
    input_dim: int = Field(ge=1)
    n_z: int = Field(ge=1)
    skipped_active_sets: list[int] = Field(
        default_factory=list, description="Bitmasks skipped because of singular KKT blocks"
    )

    @property
    def region_count(self) -> int:
        return len(self.regions)

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


class ComplexityReport(BaseModel):
    """Size and speed of an explicit controller."""

    n_z: int = Field(ge=1, description="pQP width")
    region_count: int = Field(ge=0, description="Non-empty critical regions")
    storage_bytes: int = Field(description="Bytes by the 4-byte-per-number formula")
    eval_time_median_s: float = Field(description="Median point-location time (informational)")
    eval_time_max_s: float = Field(description="Worst observed point-location time")


# Training
class TrainReport(BaseModel):
    """Loss history of a training run over several restarts."""

    n_z: int = Field(ge=1, description="pQP width")
    epoch_losses: list[list[float]] = Field(description="Per restart, mean loss of each epoch")
    final_losses: list[float | None] = Field(
        description="Full-dataset loss after training, None for diverged restarts"
    )
    failed_restarts: list[int] = Field(default_factory=list, description="Restarts that diverged")
    best_restart: int = Field(description="Restart with the lowest final loss")
    best_loss: float = Field(description="Final loss of the best restart")
    wall_time_s: float = Field(description="Training wall time over all restarts")


# Simulation
class Trajectory(ArrayModel):
    """Closed-loop trajectory in physical coordinates."""

    controller: str = Field(description="Controller label")
    states: NDArray = Field(description="(steps + 1) x n states")
    inputs: NDArray = Field(description="steps x m inputs")
    halted: bool = Field(default=False, description="Controller failed before the last step")
    message: str | None = Field(default=None, description="Reason for halting")

    @property
    def steps(self) -> int:
        return int(self.inputs.shape[0])
