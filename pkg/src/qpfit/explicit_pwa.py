"""Explicit piecewise-affine form of a trained network.

Every subset of pQP indices held at zero is a candidate active set. On its
critical region the free variables are affine in x, so the pre-projection
output is affine too. Regions with an empty interior are discarded.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from qpfit.exceptions import RegionNotFoundError
from qpfit.models import (
    ComplexityReport,
    PWAController,
    PWARegion,
    Polyhedron,
    ProjectionKind,
    QPNetParams,
)
from qpfit.numkit import DEFAULT_TOLERANCE, chebyshev_ball, reduce_polyhedron
from qpfit.qpnet import pqp_matrix, project

logger = logging.getLogger(__name__)

BYTES_PER_NUMBER = 4
MIN_INTERIOR_RADIUS = 1e-9


def _critical_region(params: QPNetParams, bitmask: int, tol: float) -> PWARegion | None:
    n_z, n = params.n_z, params.n
    active = np.array([i for i in range(n_z) if bitmask >> i & 1], dtype=int)
    free = np.array([i for i in range(n_z) if not bitmask >> i & 1], dtype=int)
    M = pqp_matrix(params)
    linear_x = params.L.T @ params.F  # c(x)/2 = L'F x + L'f
    linear_0 = params.L.T @ params.f

    z_x = np.zeros((n_z, n))
    z_0 = np.zeros(n_z)
    if free.size:
        block = M[np.ix_(free, free)]
        if np.linalg.matrix_rank(block) < free.size:
            logger.debug("active set %d skipped: singular free block", bitmask)
            return None
        z_x[free] = -np.linalg.solve(block, linear_x[free])
        z_0[free] = -np.linalg.solve(block, linear_0[free])

    # z_I >= 0 and λ_A = 2(M z + L'F x + L'f)_A >= 0
    lam_x = 2.0 * (M[active] @ z_x + linear_x[active])
    lam_0 = 2.0 * (M[active] @ z_0 + linear_0[active])
    E = np.vstack([-z_x[free], -lam_x])
    e = np.concatenate([z_0[free], lam_0])
    poly = Polyhedron(A=E, b=e, dim=n)
    _, radius = chebyshev_ball(poly)
    if radius <= MIN_INTERIOR_RADIUS:
        return None
    poly = reduce_polyhedron(poly, tol)

    return PWARegion(
        active_set=active.tolist(),
        bitmask=bitmask,
        E=poly.A,
        e=poly.b,
        K=params.G @ z_x,
        k=params.G @ z_0 + params.g,
    )


def enumerate_regions(
    params: QPNetParams, *, tol: float = DEFAULT_TOLERANCE, threads: int = 1
) -> PWAController:
    """Critical regions of every active set with a nonempty interior, sorted by bitmask."""
    masks = range(2**params.n_z)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        found = list(executor.map(lambda mask: _critical_region(params, mask, tol), masks))
    regions = [region for region in found if region is not None]
    singular = [
        mask
        for mask, region in zip(masks, found, strict=True)
        if region is None and _has_singular_block(params, mask)
    ]
    if singular:
        logger.warning("%d active sets skipped because of singular KKT blocks", len(singular))
    logger.info("n_z=%d: %d regions out of %d active sets", params.n_z, len(regions), 2**params.n_z)
    return PWAController(
        regions=regions,
        projection=params.projection,
        state_dim=params.n,
        input_dim=params.m,
        n_z=params.n_z,
        skipped_active_sets=singular,
    )


def _has_singular_block(params: QPNetParams, bitmask: int) -> bool:
    free = [i for i in range(params.n_z) if not bitmask >> i & 1]
    if not free:
        return False
    block = pqp_matrix(params)[np.ix_(free, free)]
    return bool(np.linalg.matrix_rank(block) < len(free))


def locate(controller: PWAController, x: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> int:
    """Index of the first region containing ``x``.

    Raises:
        RegionNotFoundError: no region contains ``x``.
    """
    x = np.asarray(x, dtype=float).reshape(controller.state_dim)
    for index, region in enumerate(controller.regions):
        if region.contains(x, tol):
            return index
    raise RegionNotFoundError(f"no critical region contains x={x.tolist()}")


def locate_and_eval(
    controller: PWAController, x: np.ndarray, tol: float = DEFAULT_TOLERANCE
) -> np.ndarray:
    """Explicit controller output at ``x``."""
    x = np.asarray(x, dtype=float).reshape(controller.state_dim)
    region = controller.regions[locate(controller, x, tol)]
    return project(controller.projection, region.K @ x + region.k)


def storage_bytes(controller: PWAController) -> int:
    """Bytes of the binary layout: 4 per stored number."""
    n, m = controller.state_dim, controller.input_dim
    per_region = sum(1 + region.n_halfspaces * (n + 1) + m * (n + 1) for region in controller.regions)
    return BYTES_PER_NUMBER * (1 + per_region + controller.projection.parameter_count())


def export_binary(controller: PWAController) -> bytes:
    """Little-endian layout.

    int32 region count; per region int32 halfspace count, float32 E rows,
    float32 e, float32 K rows, float32 k; then the projection parameters.
    """
    chunks = [np.array([controller.region_count], dtype="<i4").tobytes()]
    for region in controller.regions:
        chunks.append(np.array([region.n_halfspaces], dtype="<i4").tobytes())
        for array in (region.E, region.e, region.K, region.k):
            chunks.append(np.asarray(array, dtype="<f4").tobytes())
    chunks.append(_projection_numbers(controller).astype("<f4").tobytes())
    return b"".join(chunks)


def _projection_numbers(controller: PWAController) -> np.ndarray:
    spec = controller.projection
    if spec.kind == ProjectionKind.BOX:
        assert spec.lower is not None and spec.upper is not None
        return np.concatenate([spec.lower, spec.upper])
    if spec.kind == ProjectionKind.PSI_SATURATION:
        assert spec.transform is not None and spec.offset is not None
        assert spec.lower is not None and spec.upper is not None
        return np.concatenate([spec.transform.ravel(), spec.lower, spec.upper, spec.offset])
    assert spec.polyhedron is not None
    return np.hstack([spec.polyhedron.A, spec.polyhedron.b[:, None]]).ravel()


def complexity_report(
    controller: PWAController,
    *,
    box_lower: np.ndarray | None = None,
    box_upper: np.ndarray | None = None,
    timing_points: int = 10_000,
    seed: int = 0,
) -> ComplexityReport:
    """Region count, storage and measured point-location time.

    Timing points are drawn uniformly in the box (unit box by default);
    points outside every region are skipped.
    """
    n = controller.state_dim
    lower = -np.ones(n) if box_lower is None else np.asarray(box_lower, dtype=float)
    upper = np.ones(n) if box_upper is None else np.asarray(box_upper, dtype=float)
    rng = np.random.default_rng(seed)
    durations: list[float] = []
    for x in rng.uniform(lower, upper, size=(timing_points, n)):
        started = time.perf_counter()
        try:
            locate_and_eval(controller, x)
        except RegionNotFoundError:
            continue
        durations.append(time.perf_counter() - started)
    times = np.array(durations) if durations else np.zeros(1)
    return ComplexityReport(
        n_z=controller.n_z,
        region_count=controller.region_count,
        storage_bytes=storage_bytes(controller),
        eval_time_median_s=float(np.median(times)),
        eval_time_max_s=float(times.max()),
    )


def save_controller(controller: PWAController, path: Path, *, binary: bool = False) -> None:
    """Write the JSON form, and the binary form next to it when requested."""
    path.write_text(controller.to_json(), encoding="utf-8")
    if binary:
        path.with_suffix(".bin").write_bytes(export_binary(controller))


def load_controller(path: Path) -> PWAController:
    return PWAController.model_validate_json(path.read_text(encoding="utf-8"))
