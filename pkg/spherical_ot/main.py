"""Command line entry point for spherical_ot.

    python -m spherical_ot.main solve experiment.json --set source.n=500
    python -m spherical_ot.main reflector experiment.json --output-dir out/
    python -m spherical_ot.main recover-map experiment.json
    python -m spherical_ot.main verify experiment.json --kernel power:2
    python -m spherical_ot.main export-mesh experiment.json

Exit codes: 0 success, 1 configuration error, 2 infeasible input,
3 no finite plan, 4 non-convergence, 5 verification failure.
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import structlog

from .artifacts import ArtifactWriter
from .config import settings
from .errors import ConvergenceError, SphericalOTError, VerificationFailed
from .experiment import ExperimentConfig, build_grid, build_source, build_targets, load_config
from .kernels import kernel_from_name
from .monotonicity import check_cyclical_monotonicity
from .potentials import c_transform
from .recovery import (
    composition_check,
    potential_from_duals,
    recover_map,
    uniqueness_probe,
    verify_pushforward,
)
from .reflector import (
    Reflector,
    duality_bridge,
    energy_masses,
    intensity_values,
    ray_trace_verify,
    reflector_mesh,
    solve_weak_reflector,
)
from .solver import centered_duals, monge_cost, solve_kantorovich
from .sphere import random_points
from .suites import SuiteOrchestrator, load_plan_file

logger = structlog.get_logger()


def configure_logging(level: Optional[str] = None, json_logs: Optional[bool] = None) -> None:
    """structlog on top of stdlib logging, writing to stderr."""
    level = (level or settings.log_level).upper()
    json_logs = settings.log_json if json_logs is None else json_logs
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level, force=True)
    renderer = structlog.processors.JSONRenderer() if json_logs else structlog.dev.ConsoleRenderer(
        colors=sys.stderr.isatty())
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def cmd_solve(config: ExperimentConfig, writer: ArtifactWriter) -> None:
    kernel = kernel_from_name(config.kernel)
    mu, nu = build_source(config), build_targets(config)
    solution = solve_kantorovich(kernel, mu, nu, backend=config.solve.backend)
    certificate = solution.duals.certificate(kernel, solution.plan)
    monotonicity = check_cyclical_monotonicity(kernel, *solution.plan.support_points(),
                                               max_n=config.solve.monotonicity_max_n)
    writer.write_plan(solution, kernel=kernel.name, certificate=certificate,
                      min_separation=solution.plan.min_separation(), monotonicity=monotonicity.model_dump())
    writer.write_duals(solution.duals)


def _solve_reflector(config: ExperimentConfig, writer: ArtifactWriter):
    grid = build_grid(config)
    intensity = intensity_values(config.source.intensity, grid)
    targets = build_targets(config)
    try:
        reflector = solve_weak_reflector(targets, grid, intensity, tol=config.reflector.tol,
                                         max_iter=config.reflector.max_iter)
    except ConvergenceError as e:
        writer.write_json("reflector_failure.json", {"message": e.message, "residuals": e.residuals})
        raise
    return reflector, grid, intensity, targets


def cmd_reflector(config: ExperimentConfig, writer: ArtifactWriter) -> None:
    reflector, grid, intensity, targets = _solve_reflector(config, writer)
    cells = energy_masses(reflector, grid, intensity)
    rel = (cells.masses - targets.weights) / targets.weights
    bridge = duality_bridge(reflector, grid.nodes)
    payload = reflector.to_dict()
    payload.update({
        "max_rel_err": float(np.max(np.abs(rel))),
        "tied_nodes": cells.tied_nodes,
        "transport_cost": cells.transport_cost(reflector, grid.nodes),
        "duality_bridge": bridge.model_dump(),
    })
    writer.write_json("reflector.json", payload)
    writer.write_cells(reflector, cells, targets)
    writer.write_obj("reflector.obj", *reflector_mesh(reflector, grid))
    if config.reflector.rays:
        rays = random_points(config.reflector.rays, config.dimension, np.random.default_rng(config.seed))
        report = ray_trace_verify(reflector, rays)
        writer.write_json("raytrace.json", report.model_dump())
        if not report.passed:
            raise VerificationFailed("Reflected rays miss their targets", max_deviation=report.max_deviation,
                                     max_surface_residual=report.max_surface_residual)


def cmd_recover_map(config: ExperimentConfig, writer: ArtifactWriter) -> None:
    kernel = kernel_from_name(config.kernel)
    mu, nu = build_source(config), build_targets(config)
    solution = solve_kantorovich(kernel, mu, nu, backend=config.solve.backend)
    duals = centered_duals(kernel, solution.plan)
    psi = potential_from_duals(kernel, nu.points, duals.v)
    forward = recover_map(kernel, psi, mu.points)
    composition = composition_check(kernel, forward, c_transform(psi, mu.points))
    pushforward = verify_pushforward(forward, mu, nu)
    uniqueness = uniqueness_probe(kernel, nu.points, solution.duals.v, duals.v, mu.points)
    assignment = np.asarray(pushforward.assignment)
    monge = monge_cost(kernel, assignment, mu, nu) if pushforward.passed and np.all(assignment >= 0) else None

    writer.write_map(forward)
    if config.recover.grid_n:
        grid = build_grid(config.model_copy(update={"source": config.source.model_copy(
            update={"n": config.recover.grid_n})}))
        writer.write_map(recover_map(kernel, psi, grid.nodes), name="grid_map.csv")
    writer.write_json("map_summary.json", {
        "kernel": kernel.name,
        "delta": forward.delta,
        "branch_error": forward.branch_error,
        "flagged_points": int((~forward.valid).sum()),
        "boundary_points": int(forward.boundary.sum()),
        "unmatched_mass": pushforward.unmatched_mass,
        "flagged_mass": pushforward.flagged_mass,
        "pushforward_deviation": pushforward.max_deviation,
        "max_composition_error": composition.max_error,
        "composition_checked": composition.checked,
        "kantorovich_cost": solution.total_cost,
        "monge_cost": monge,
        "uniqueness_mismatches": uniqueness.mismatches,
    })
    if not pushforward.passed:
        raise VerificationFailed("Recovered map does not push the source onto the target",
                                 deviation=pushforward.max_deviation, unmatched=pushforward.unmatched_mass)


def cmd_verify(config: ExperimentConfig, writer: ArtifactWriter) -> None:
    kernel = kernel_from_name(config.kernel)
    plan = None
    if config.verify.plan_file is not None:
        plan = load_plan_file(config.verify.plan_file, build_source(config), build_targets(config))
    orchestrator = SuiteOrchestrator(kernel, config.dimension, config.seed, config.verify, plan=plan)
    report = asyncio.run(orchestrator.run_all())
    writer.write_json("verify.json", report.model_dump())
    if not report.passed:
        raise VerificationFailed("Verification failed", suites=report.failed)


def cmd_export_mesh(config: ExperimentConfig, writer: ArtifactWriter) -> None:
    if config.reflector_file is not None:
        reflector = Reflector.from_dict(json.loads(config.reflector_file.read_text(encoding="utf-8")))
        grid = build_grid(config)
    else:
        reflector, grid, _, _ = _solve_reflector(config, writer)
    writer.write_obj("reflector.obj", *reflector_mesh(reflector, grid))


COMMANDS: Dict[str, Callable[[ExperimentConfig, ArtifactWriter], None]] = {
    "solve": cmd_solve,
    "reflector": cmd_reflector,
    "recover-map": cmd_recover_map,
    "verify": cmd_verify,
    "export-mesh": cmd_export_mesh,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherical_ot",
        description="Optimal transport on the sphere: exact plans, reflectors and map recovery",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("config", nargs="?", type=Path, help="Experiment config (JSON)")
        cmd.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="Override a config field, e.g. source.n=500 (repeatable)")
        cmd.add_argument("--kernel", help="Cost kernel, e.g. log or power:2")
        cmd.add_argument("--seed", type=int, help="Seed for sampled points and suites")
        cmd.add_argument("--output-dir", type=Path, help="Directory for artifacts")
        cmd.add_argument("--log-level", help="Override SPHERICAL_OT_LOG_LEVEL")
        cmd.add_argument("--json-logs", action="store_true", default=None, help="Render logs as JSON")
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.overrides)
    if args.kernel is not None:
        overrides.append(f"kernel={json.dumps(args.kernel)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={json.dumps(str(args.output_dir))}")
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.json_logs)
    log = logger.bind(command=args.command)

    try:
        config = load_config(args.config, _overrides(args))
        writer = ArtifactWriter(config.output_dir, config.config_hash())
        log.info("Starting command", kernel=config.kernel, dimension=config.dimension,
                 config_hash=writer.config_hash)
        COMMANDS[args.command](config, writer)
    except SphericalOTError as e:
        log.error("Command failed", error=str(e), exit_code=e.exit_code)
        return e.exit_code
    except KeyboardInterrupt:
        log.info("Interrupted")
        return 130
    except Exception as e:
        log.exception("Fatal error", error=str(e))
        return 1

    log.info("Command complete", artifacts=[p.name for p in writer.written])
    return 0


if __name__ == "__main__":
    sys.exit(main())
