"""Command-line pipeline: condense, sample, train, export, simulate, evaluate, gradcheck.

Every command reads the same JSON config and writes artifacts into the
output directory. Exit codes: 0 success, 1 failed acceptance check, 2 I/O,
config or validation fault.
"""

import argparse
import logging
import sys
from collections.abc import Callable
from functools import cached_property
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from qpfit.artifacts import (
    read_dataset,
    read_json,
    write_dataset,
    write_json,
    write_loss_csv,
    write_trajectory_csv,
)
from qpfit.config import PipelineConfig, QPFitSettings, get_config, load_pipeline_config
from qpfit.converter import (
    ConverterModel,
    SteadyStateMetrics,
    assemble_mpc,
    build_model,
    duty_cycles,
    initial_conditions,
    projection_spec,
    simulate,
    steady_state_metrics,
)
from qpfit.exceptions import AcceptanceError, QPFitError, RegionNotFoundError, SamplingError
from qpfit.explicit_pwa import (
    complexity_report,
    enumerate_regions,
    load_controller,
    locate_and_eval,
    save_controller,
)
from qpfit.gradcheck import run_gradcheck
from qpfit.models import (
    CondensedQP,
    ControllerKind,
    LinearMPCProblem,
    ProblemPreset,
    ProjectionSpec,
    PWAController,
    QPNetParams,
    Trajectory,
)
from qpfit.mpc import Controller, condense, oracle_controller, sample_dataset, simulate_closed_loop
from qpfit.qpnet import construct_exact, evaluate
from qpfit.training import train

logger = logging.getLogger(__name__)

BASELINE_STORAGE_BYTES = 518_000
EXACT_TAG = "exact"

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_FAULT = 2


# Summary models
class TrainSummary(BaseModel):
    """Best training loss per pQP size."""

    best_losses: dict[int, float] = Field(description="Lowest final loss per n_z")


class ExportEntry(BaseModel):
    """Measurements of one exported controller."""

    tag: str = Field(description="Model tag, nz<k> or exact")
    n_z: int = Field(description="Size of the pQP layer")
    region_count: int = Field(description="Critical regions kept after enumeration")
    storage_bytes: int = Field(description="Bytes of the flat binary export")
    eval_time_max_s: float = Field(description="Worst point-location time in seconds")
    max_deviation: float = Field(description="Largest |explicit - implicit| over the check points")
    unlocated_points: int = Field(default=0, description="Check points outside every region")


class ExportSummary(BaseModel):
    entries: list[ExportEntry] = Field(description="One entry per exported model")


class SimulationEntry(BaseModel):
    """Outcome of one closed-loop run."""

    controller: ControllerKind = Field(description="Oracle, implicit network or explicit table")
    tag: str = Field(description="Model tag, or mpc for the oracle")
    initial_condition: int = Field(description="Index into the initial states")
    halted: bool = Field(description="Controller returned no input before the last step")
    message: str | None = Field(default=None, description="Reason for halting")
    final_state: list[float] = Field(description="Last state in physical units")
    metrics: SteadyStateMetrics | None = Field(default=None, description="Converter steady-state errors")


class SimulationSummary(BaseModel):
    runs: list[SimulationEntry] = Field(description="Every controller from every initial state")


class EvaluationRow(BaseModel):
    """One line of the evaluation table."""

    tag: str = Field(description="Model tag")
    n_z: int = Field(description="Size of the pQP layer")
    region_count: int = Field(description="Critical regions of the explicit controller")
    storage_kb: float = Field(description="Explicit controller storage in kB")
    storage_reduction_pct: float = Field(description="Reduction relative to the cited baseline")
    worst_eval_time_ms: float = Field(description="Worst point-location time in ms")
    max_deviation: float = Field(description="Largest |explicit - implicit| over the check points")
    i_dm_error_a: float | None = Field(default=None, description="Worst differential-mode SS error")
    relative_error_pct: float | None = Field(default=None, description="Worst i_cm/v_out SS error")
    checked: bool = Field(description="Subject to the storage and closed-loop checks")
    failures: list[str] = Field(default_factory=list, description="Failed acceptance checks")


class EvaluationReport(BaseModel):
    baseline_storage_bytes: int = Field(
        default=BASELINE_STORAGE_BYTES, description="Cited storage of the full explicit MPC"
    )
    rows: list[EvaluationRow] = Field(description="One row per exported model")

    @property
    def failures(self) -> list[str]:
        return [f"{row.tag}: {failure}" for row in self.rows for failure in row.failures]


class Pipeline:
    """Lazily built problem data shared by the commands."""

    def __init__(self, config: PipelineConfig, settings: QPFitSettings) -> None:
        self.config = config
        self.settings = settings
        self.out = config.output_dir

    @cached_property
    def converter(self) -> ConverterModel | None:
        if self.config.problem.preset == ProblemPreset.CONVERTER:
            return build_model()
        return None

    @cached_property
    def problem(self) -> LinearMPCProblem:
        if self.converter is not None:
            return assemble_mpc(self.converter, horizon=self.config.problem.horizon)
        assert self.config.problem.path is not None
        return read_json(self.config.problem.path, LinearMPCProblem)

    @cached_property
    def condensed(self) -> CondensedQP:
        return condense(self.problem)

    @cached_property
    def projection(self) -> ProjectionSpec:
        if self.converter is not None:
            return projection_spec(self.converter)
        return projection_for_problem(self.problem)

    def provenance(self) -> dict[str, str]:
        return {"config_hash": self.config.config_hash(), "problem_hash": self.problem.problem_hash()}

    def path(self, name: str) -> Path:
        return self.out / name

    def sampling_box(self) -> tuple[np.ndarray, np.ndarray]:
        sampling = self.config.sampling
        if sampling.box_lower is not None and sampling.box_upper is not None:
            return np.array(sampling.box_lower), np.array(sampling.box_upper)
        assert self.problem.state_lower is not None and self.problem.state_upper is not None
        lower, upper = self.problem.state_lower, self.problem.state_upper
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise SamplingError("problem has an unbounded state box; set sampling.box_lower/box_upper")
        return lower, upper

    def initial_states(self) -> list[np.ndarray]:
        configured = self.config.simulation.initial_conditions
        if configured is not None:
            return [np.array(state, dtype=float) for state in configured]
        if self.converter is not None:
            return initial_conditions()
        assert self.problem.x_ref is not None
        lower, upper = self.sampling_box()
        return [self.problem.x_ref + 0.5 * lower, self.problem.x_ref + 0.5 * upper]

    def model_tags(self) -> list[tuple[str, int | None]]:
        tags: list[tuple[str, int | None]] = [
            (f"nz{n_z}", n_z) for n_z in self.config.training.n_z_values
        ]
        if self.config.export.exact:
            tags.append((EXACT_TAG, None))
        return tags


def projection_for_problem(problem: LinearMPCProblem) -> ProjectionSpec:
    """Clamp when the input set is an axis-aligned box, Euclidean projection otherwise."""
    m = problem.input_dim
    if problem.input_set is None:
        return ProjectionSpec.box(np.full(m, -np.inf), np.full(m, np.inf))
    lower, upper = np.full(m, -np.inf), np.full(m, np.inf)
    for row, bound in zip(problem.input_set.A, problem.input_set.b, strict=True):
        support = np.flatnonzero(row)
        if support.size != 1:
            return ProjectionSpec.from_polyhedron(problem.input_set)
        i = int(support[0])
        if row[i] > 0:
            upper[i] = min(upper[i], bound / row[i])
        else:
            lower[i] = max(lower[i], bound / row[i])
    return ProjectionSpec.box(lower, upper)


def max_deviation(
    params: QPNetParams, controller: PWAController, lower: np.ndarray, upper: np.ndarray, points: int, seed: int
) -> tuple[float, int]:
    """Largest explicit/implicit difference on random states and the count of unlocated states."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    missed = 0
    for x in rng.uniform(lower, upper, size=(points, params.n)):
        try:
            explicit = locate_and_eval(controller, x)
        except RegionNotFoundError:
            missed += 1
            continue
        worst = max(worst, float(np.abs(explicit - evaluate(params, x)).max()))
    return worst, missed


# Commands
def cmd_condense(pipeline: Pipeline) -> Path:
    """Write the condensed QP."""
    path = write_json(pipeline.path("condensed.json"), pipeline.condensed, pipeline.provenance())
    print(f"condensed QP: {pipeline.condensed.n_vars} variables, "
          f"{pipeline.condensed.n_constraints} constraints -> {path}")
    return path


def cmd_sample(pipeline: Pipeline) -> Path:
    """Sample and label the training dataset."""
    sampling = pipeline.config.sampling
    lower, upper = pipeline.sampling_box()
    dataset = sample_dataset(
        pipeline.condensed,
        lower,
        upper,
        sampling.n_samples,
        sampling.seed,
        threads=pipeline.settings.threads,
        chunk_size=sampling.chunk_size,
        min_acceptance=sampling.min_acceptance,
    )
    path = write_dataset(dataset, pipeline.path("dataset.csv"), pipeline.provenance())
    print(f"dataset: {dataset.n_samples} samples (acceptance {dataset.acceptance_rate:.3f}) -> {path}")
    return path


def cmd_train(pipeline: Pipeline) -> Path:
    """Train one network per configured pQP size."""
    dataset = read_dataset(pipeline.path("dataset.csv"))
    training = pipeline.config.training
    best: dict[int, float] = {}
    for n_z in training.n_z_values:
        params, report = train(
            dataset,
            training.model_copy(update={"n_z": n_z}),
            pipeline.projection,
            threads=pipeline.settings.threads,
        )
        write_json(pipeline.path(f"model_nz{n_z}.json"), params, pipeline.provenance())
        write_json(pipeline.path(f"train_nz{n_z}.json"), report, pipeline.provenance())
        write_loss_csv(report, pipeline.path(f"loss_nz{n_z}.csv"))
        best[n_z] = report.best_loss
        print(f"n_z={n_z}: best loss {report.best_loss:.4e} (restart {report.best_restart})")
    return write_json(pipeline.path("train_summary.json"), TrainSummary(best_losses=best), pipeline.provenance())


def cmd_export(pipeline: Pipeline) -> Path:
    """Enumerate regions of every available network and measure them."""
    export = pipeline.config.export
    if export.exact:
        exact = construct_exact(
            pipeline.condensed, pipeline.projection, regularization=export.regularization
        )
        write_json(pipeline.path(f"model_{EXACT_TAG}.json"), exact, pipeline.provenance())

    lower, upper = pipeline.sampling_box()
    entries: list[ExportEntry] = []
    for tag, _ in pipeline.model_tags():
        model_path = pipeline.path(f"model_{tag}.json")
        if not model_path.is_file():
            logger.warning("no model for %s at %s; skipped", tag, model_path)
            continue
        params = read_json(model_path, QPNetParams)
        controller = enumerate_regions(params, threads=pipeline.settings.threads)
        save_controller(controller, pipeline.path(f"pwa_{tag}.json"), binary=export.binary)
        complexity = complexity_report(
            controller, box_lower=lower, box_upper=upper, timing_points=export.timing_points
        )
        write_json(pipeline.path(f"complexity_{tag}.json"), complexity, pipeline.provenance())
        deviation, missed = max_deviation(
            params, controller, lower, upper, pipeline.config.evaluation.check_points, seed=1
        )
        entries.append(
            ExportEntry(
                tag=tag,
                n_z=params.n_z,
                region_count=complexity.region_count,
                storage_bytes=complexity.storage_bytes,
                eval_time_max_s=complexity.eval_time_max_s,
                max_deviation=deviation,
                unlocated_points=missed,
            )
        )
        print(f"{tag}: {complexity.region_count} regions, {complexity.storage_bytes} bytes, "
              f"max deviation {deviation:.2e}")
    if not entries:
        raise FileNotFoundError(f"no trained or constructed models found in {pipeline.out}")
    return write_json(pipeline.path("export_summary.json"), ExportSummary(entries=entries), pipeline.provenance())


def _controllers(pipeline: Pipeline) -> list[tuple[ControllerKind, str, Controller]]:
    controllers: list[tuple[ControllerKind, str, Controller]] = [
        (ControllerKind.ORACLE, "mpc", oracle_controller(pipeline.condensed))
    ]
    for tag, _ in pipeline.model_tags():
        model_path = pipeline.path(f"model_{tag}.json")
        if model_path.is_file():
            params = read_json(model_path, QPNetParams)
            controllers.append((ControllerKind.IMPLICIT, tag, _implicit(params)))
        pwa_path = pipeline.path(f"pwa_{tag}.json")
        if pwa_path.is_file():
            controllers.append((ControllerKind.EXPLICIT, tag, _explicit(load_controller(pwa_path))))
    return controllers


def _implicit(params: QPNetParams) -> Controller:
    return lambda x: evaluate(params, x)


def _explicit(controller: PWAController) -> Controller:
    def control(x: np.ndarray) -> np.ndarray | None:
        try:
            return locate_and_eval(controller, x)
        except RegionNotFoundError:
            return None

    return control


def cmd_simulate(pipeline: Pipeline) -> Path:
    """Closed-loop runs of every controller from every initial state."""
    steps = pipeline.config.simulation.steps
    window = pipeline.config.simulation.ss_window
    runs: list[SimulationEntry] = []
    for kind, tag, controller in _controllers(pipeline):
        for index, x0 in enumerate(pipeline.initial_states()):
            label = f"{kind}_{tag}"
            trajectory: Trajectory
            if pipeline.converter is not None:
                trajectory = simulate(pipeline.converter, pipeline.problem, controller, x0, steps, label=label)
                duties = duty_cycles(pipeline.converter, trajectory.inputs)
                metrics = steady_state_metrics(trajectory, pipeline.converter.x_eq, window)
            else:
                trajectory = simulate_closed_loop(pipeline.problem, controller, x0, steps, label=label)
                duties, metrics = None, None
            write_trajectory_csv(
                trajectory, pipeline.path(f"trajectories/{label}_ic{index}.csv"), duties
            )
            runs.append(
                SimulationEntry(
                    controller=kind,
                    tag=tag,
                    initial_condition=index,
                    halted=trajectory.halted,
                    message=trajectory.message,
                    final_state=trajectory.states[-1].tolist(),
                    metrics=metrics,
                )
            )
    halted = sum(run.halted for run in runs)
    print(f"simulated {len(runs)} runs ({halted} halted)")
    return write_json(pipeline.path("simulation.json"), SimulationSummary(runs=runs), pipeline.provenance())


def _evaluation_row(
    entry: ExportEntry, runs: list[SimulationEntry], pipeline: Pipeline
) -> EvaluationRow:
    evaluation = pipeline.config.evaluation
    checked = entry.tag == EXACT_TAG or entry.n_z in evaluation.n_z_values
    explicit_runs = [
        run for run in runs if run.controller == ControllerKind.EXPLICIT and run.tag == entry.tag
    ]
    failures: list[str] = []
    i_dm = relative = None
    measured = [run.metrics for run in explicit_runs if run.metrics is not None]
    if measured:
        i_dm = max(max(m.i_dm1_error_a, m.i_dm2_error_a) for m in measured)
        relative = max(max(m.i_cm_error_pct, m.v_out_error_pct) for m in measured)

    # every exported model must reproduce its network
    if entry.tag != EXACT_TAG and entry.region_count > 2**entry.n_z:
        failures.append(f"{entry.region_count} regions exceed 2^{entry.n_z}")
    if entry.max_deviation > evaluation.deviation_tol:
        failures.append(f"explicit/implicit deviation {entry.max_deviation:.2e}")
    if entry.unlocated_points:
        failures.append(f"{entry.unlocated_points} check points outside every region")

    if checked:
        if entry.tag != EXACT_TAG and entry.storage_bytes > evaluation.storage_limit_bytes:
            failures.append(f"storage {entry.storage_bytes} B over {evaluation.storage_limit_bytes} B")
        if any(run.halted for run in explicit_runs):
            failures.append("closed-loop run halted")
        if i_dm is not None and i_dm > evaluation.i_dm_limit:
            failures.append(f"steady-state i_dm error {i_dm:.3f} A")
        if relative is not None and relative > evaluation.relative_limit_pct:
            failures.append(f"steady-state relative error {relative:.2f} %")

    return EvaluationRow(
        tag=entry.tag,
        n_z=entry.n_z,
        region_count=entry.region_count,
        storage_kb=entry.storage_bytes / 1000.0,
        storage_reduction_pct=100.0 * (1.0 - entry.storage_bytes / BASELINE_STORAGE_BYTES),
        worst_eval_time_ms=1000.0 * entry.eval_time_max_s,
        max_deviation=entry.max_deviation,
        i_dm_error_a=i_dm,
        relative_error_pct=relative,
        checked=checked,
        failures=failures,
    )


def format_report(report: EvaluationReport) -> str:
    """Human-readable table of the evaluation rows."""
    header = (
        f"{'model':<8}{'regions':>9}{'storage kB':>12}{'reduction %':>13}"
        f"{'time ms':>10}{'deviation':>12}{'SS i_dm A':>11}{'SS rel %':>10}  status"
    )
    lines = [header, "-" * len(header)]
    lines.append(
        f"{'optimal':<8}{'-':>9}{report.baseline_storage_bytes / 1000.0:>12.1f}{0.0:>13.1f}"
        f"{'-':>10}{'-':>12}{'-':>11}{'-':>10}  cited"
    )
    for row in report.rows:
        i_dm = f"{row.i_dm_error_a:.3f}" if row.i_dm_error_a is not None else "-"
        rel = f"{row.relative_error_pct:.2f}" if row.relative_error_pct is not None else "-"
        status = "FAIL" if row.failures else ("ok" if row.checked else "info")
        lines.append(
            f"{row.tag:<8}{row.region_count:>9}{row.storage_kb:>12.1f}{row.storage_reduction_pct:>13.1f}"
            f"{row.worst_eval_time_ms:>10.3f}{row.max_deviation:>12.2e}{i_dm:>11}{rel:>10}  {status}"
        )
    return "\n".join(lines)


def cmd_evaluate(pipeline: Pipeline) -> Path:
    """Consolidate export and simulation results and apply the acceptance checks."""
    export = read_json(pipeline.path("export_summary.json"), ExportSummary)
    simulation_path = pipeline.path("simulation.json")
    runs = read_json(simulation_path, SimulationSummary).runs if simulation_path.is_file() else []
    report = EvaluationReport(rows=[_evaluation_row(entry, runs, pipeline) for entry in export.entries])
    path = write_json(pipeline.path("report.json"), report, pipeline.provenance())
    table = format_report(report)
    pipeline.path("report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    if report.failures:
        raise AcceptanceError("; ".join(report.failures))
    return path


def cmd_gradcheck(pipeline: Pipeline) -> Path:
    """Finite-difference check of the network gradients."""
    options = pipeline.config.gradcheck
    report = run_gradcheck(options.instances, options.seed, options.step, options.rtol)
    path = write_json(pipeline.path("gradcheck.json"), report, {"config_hash": pipeline.config.config_hash()})
    print(f"gradcheck: max relative error {report.max_rel_error:.2e} "
          f"over {len(report.cases)} instances ({report.skipped_instances} skipped)")
    if not report.passed:
        raise AcceptanceError(f"gradient check failed: {report.max_rel_error:.2e} > {options.rtol:.0e}")
    return path


COMMANDS: dict[str, Callable[[Pipeline], Path]] = {
    "condense": cmd_condense,
    "sample": cmd_sample,
    "train": cmd_train,
    "export": cmd_export,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpfit", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, required=True, help="Pipeline config JSON")
    parser.add_argument("--out", type=Path, default=None, help="Override the output directory")
    parser.add_argument("--seed", type=int, default=None, help="Override every seed")
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    """Run one command and return the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        settings = get_config()
        config = load_pipeline_config(args.config)
        if args.out is not None:
            config = config.model_copy(update={"output_dir": args.out})
        if args.seed is not None:
            config = config.with_seed(args.seed)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](Pipeline(config, settings))
    except AcceptanceError as exc:
        logger.error("acceptance check failed: %s", exc)
        return EXIT_ACCEPTANCE
    except (OSError, ValueError, QPFitError) as exc:
        # pydantic.ValidationError and json.JSONDecodeError are ValueErrors
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAULT
    return EXIT_OK


def main() -> None:
    """Main entry point for the CLI."""
    settings = get_config()
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(levelname)s:%(name)s:%(message)s",
        stream=sys.stderr,
    )
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
