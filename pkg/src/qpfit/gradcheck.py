"""Finite-difference check of the network gradients on random instances."""

import logging

import numpy as np
from pydantic import BaseModel, Field

from qpfit.models import ProjectionKind, ProjectionSpec, QPNetParams
from qpfit.qpnet import backward, forward

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-7
LOOSE_LIMIT = 1e6
SATURATION_LIMIT = 0.5
EPS_VALUES = (1e-4, 1e-2, 1.0)
PROJECTION_CHOICES = ("loose", "box", "psi")


class GradcheckCase(BaseModel):
    """One random instance."""

    index: int = Field(description="Position in the random sequence")
    n: int = Field(description="State dimension")
    m: int = Field(description="Control dimension")
    n_z: int = Field(description="Size of the pQP layer")
    eps: float = Field(description="pQP regularization ε")
    projection: ProjectionKind = Field(description="Kind of output projection")
    saturated: int = Field(default=0, description="Outputs clamped at the nominal point")
    max_rel_error: float = Field(description="Worst relative gradient error")
    checked: int = Field(description="Entries compared")
    skipped: int = Field(description="Entries whose perturbation changed the active set")


class GradcheckReport(BaseModel):
    """Summary of the finite-difference suite."""

    instances: int = Field(description="Random instances drawn")
    seed: int = Field(description="Seed of the instance generator")
    step: float = Field(description="Central-difference step")
    rtol: float = Field(description="Allowed relative error")
    skipped_instances: int = Field(description="Instances at a degenerate point")
    max_rel_error: float = Field(description="Worst relative error over all cases")
    cases: list[GradcheckCase] = Field(description="Per-instance results")

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol


def _well_conditioned(rng: np.random.Generator, size: int) -> np.ndarray:
    left, _ = np.linalg.qr(rng.standard_normal((size, size)))
    right, _ = np.linalg.qr(rng.standard_normal((size, size)))
    return left @ np.diag(rng.uniform(0.5, 2.0, size)) @ right


def _random_projection(rng: np.random.Generator, m: int) -> ProjectionSpec:
    choice = PROJECTION_CHOICES[int(rng.integers(len(PROJECTION_CHOICES)))]
    if choice == "loose":
        return ProjectionSpec.box(-LOOSE_LIMIT * np.ones(m), LOOSE_LIMIT * np.ones(m))
    limits = SATURATION_LIMIT * np.ones(m)
    if choice == "box":
        return ProjectionSpec.box(-limits, limits)
    return ProjectionSpec.psi_saturation(_well_conditioned(rng, m), -limits, limits)


def random_instance(
    rng: np.random.Generator,
) -> tuple[QPNetParams, np.ndarray, np.ndarray]:
    """Random network, state and output weights.

    ε is one of 1e-4, 1e-2 or 1. The projection is a box too wide to
    saturate, a ±0.5 box, or a Ψ-saturation with a random well-conditioned Ψ,
    so clamped outputs are exercised as well.

    Returns:
        Parameters, state x and weights w of the scalar output w'u(x).
    """
    n = int(rng.integers(1, 5))
    n_z = int(rng.integers(1, 9))
    m = int(rng.integers(1, 4))
    eps = float(rng.choice(EPS_VALUES))
    params = QPNetParams(
        F=rng.standard_normal((n_z, n)),
        f=rng.standard_normal(n_z),
        L=_well_conditioned(rng, n_z),
        eps=eps,
        G=rng.standard_normal((m, n_z)),
        g=rng.standard_normal(m),
        projection=_random_projection(rng, m),
    )
    return params, rng.standard_normal(n), rng.standard_normal(m)


def _clamped(spec: ProjectionSpec, y3: np.ndarray) -> tuple[bool, ...]:
    if spec.kind == ProjectionKind.POLYHEDRON:
        return ()
    assert spec.lower is not None and spec.upper is not None
    return tuple(bool(v) for v in (y3 <= spec.lower) | (y3 >= spec.upper))


def _is_degenerate(params: QPNetParams, x: np.ndarray) -> bool:
    trace = forward(params, x)
    scale = max(1.0, float(np.abs(trace.z).max(initial=0.0)), float(np.abs(trace.lam).max(initial=0.0)))
    near_zero = (np.abs(trace.z) <= DEGENERACY_TOL * scale) & (np.abs(trace.lam) <= DEGENERACY_TOL * scale)
    spec = params.projection
    if spec.kind != ProjectionKind.POLYHEDRON:
        assert spec.lower is not None and spec.upper is not None
        gap = np.minimum(np.abs(trace.y3 - spec.lower), np.abs(trace.y3 - spec.upper))
        if np.any(gap <= DEGENERACY_TOL * max(1.0, float(np.abs(trace.y3).max()))):
            return True
    return bool(np.any(near_zero))


def check_instance(
    index: int,
    params: QPNetParams,
    x: np.ndarray,
    weights: np.ndarray,
    step: float,
) -> GradcheckCase:
    """Compare analytic and central-difference gradients of w'u(x).

    Entries whose perturbation changes the pQP active set or the set of
    clamped outputs are skipped.
    """
    trace = forward(params, x)
    pattern = (trace.active_set, _clamped(params.projection, trace.y3))
    analytic = backward(trace, params, weights).as_dict()
    nominal = params.trainable()
    worst = 0.0
    checked = skipped = 0
    for name, value in nominal.items():
        for entry in np.ndindex(value.shape):
            outputs = []
            patterns = []
            for sign in (1.0, -1.0):
                perturbed = value.copy()
                perturbed[entry] += sign * step
                shifted_params = params.with_trainable({**nominal, name: perturbed})
                shifted = forward(shifted_params, x)
                outputs.append(float(weights @ shifted.y4))
                patterns.append((shifted.active_set, _clamped(params.projection, shifted.y3)))
            if patterns[0] != pattern or patterns[1] != pattern:
                skipped += 1
                continue
            numeric = (outputs[0] - outputs[1]) / (2.0 * step)
            exact = float(analytic[name][entry])
            error = abs(exact - numeric) / max(1.0, abs(exact), abs(numeric))
            worst = max(worst, error)
            checked += 1
    return GradcheckCase(
        index=index,
        n=params.n,
        m=params.m,
        n_z=params.n_z,
        eps=params.eps,
        projection=params.projection.kind,
        saturated=sum(pattern[1]),
        max_rel_error=worst,
        checked=checked,
        skipped=skipped,
    )


def run_gradcheck(
    instances: int = 200, seed: int = 0, step: float = 1e-5, rtol: float = 1e-4
) -> GradcheckReport:
    """Check dℓ/dF, df, dL, dG, dg on random networks.

    Relative errors use a unit floor in the denominator. Instances sitting at a
    degenerate pQP point are skipped; so are entries whose perturbation moves
    across an active-set boundary.
    """
    rng = np.random.default_rng(seed)
    cases: list[GradcheckCase] = []
    skipped_instances = 0
    for index in range(instances):
        params, x, weights = random_instance(rng)
        if _is_degenerate(params, x):
            skipped_instances += 1
            continue
        case = check_instance(index, params, x, weights, step)
        cases.append(case)
        if case.max_rel_error > rtol:
            logger.warning("instance %d: relative error %.2e", index, case.max_rel_error)
    report = GradcheckReport(
        instances=instances,
        seed=seed,
        step=step,
        rtol=rtol,
        skipped_instances=skipped_instances,
        max_rel_error=max((case.max_rel_error for case in cases), default=0.0),
        cases=cases,
    )
    logger.info(
        "gradcheck: %d instances, max relative error %.2e", len(cases), report.max_rel_error
    )
    return report
