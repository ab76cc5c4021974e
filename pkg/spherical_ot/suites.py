"""Verification suites and the orchestrator that runs them.

The kernel admissibility suite always runs first; when it fails every
other suite is reported as skipped. The remaining suites run concurrently
in worker threads.
"""

import asyncio
import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

import numpy as np
import structlog
from pydantic import BaseModel, Field

from .base import CostKernel
from .config import settings
from .errors import ConfigError
from .log_kernel import LogKernel
from .monotonicity import check_cyclical_monotonicity
from .potentials import chain_potential, double_c_transform, superdifferential
from .reflector import (
    ConstantFocal,
    EnvelopeFocal,
    Reflector,
    duality_bridge,
    energy_masses,
    intensity_values,
    quasipotential_position,
    ray_trace_verify,
    solve_weak_reflector,
)
from .solver import TransportPlan, solve_kantorovich
from .sphere import DiscreteMeasure, geodesic, make_grid, named_directions, random_points, tangential_project

logger = structlog.get_logger()

ROUNDTRIP_TOL = 1e-10
GRADIENT_TOL = 1e-6
QUASIPOTENTIAL_TOL = 1e-6
MIN_CHORD = 0.1

Metrics = Dict[str, Any]


class SuiteResult(BaseModel):
    name: str
    status: Literal["pass", "fail", "skipped"]
    metrics: Metrics = Field(default_factory=dict)
    message: Optional[str] = None


class VerificationReport(BaseModel):
    kernel: str
    dimension: int
    results: List[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(r.status != "fail" for r in self.results)

    @property
    def failed(self) -> List[str]:
        return [r.name for r in self.results if r.status == "fail"]


class VerificationSuite(ABC):
    """A self-contained numerical check with a pass/fail verdict."""

    name: str = "suite"

    def __init__(self, kernel: CostKernel, dim: int, seed: int, options: Any):
        self.kernel = kernel
        self.dim = dim
        self.seed = seed
        self.options = options
        self.log = logger.bind(suite=self.name)

    @abstractmethod
    def check(self) -> Tuple[bool, Metrics]:
        """Run the checks; return the verdict and the measured quantities."""
        pass

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    async def run(self) -> SuiteResult:
        self.log.info("Starting suite")
        try:
            passed, metrics = await asyncio.to_thread(self.check)
        except Exception as e:
            self.log.error("Suite raised", error=str(e))
            return SuiteResult(name=self.name, status="fail", message=str(e))
        self.log.info("Suite complete", passed=passed)
        return SuiteResult(name=self.name, status="pass" if passed else "fail", metrics=metrics)


def _separated_pairs(n: int, dim: int, rng: np.random.Generator, min_chord: float = MIN_CHORD
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """n random pairs with chord distance at least ``min_chord``."""
    xs, ys, have = [], [], 0
    while have < n:
        X = random_points(n, dim, rng)
        Y = random_points(n, dim, rng)
        keep = np.linalg.norm(X - Y, axis=1) >= min_chord
        xs.append(X[keep])
        ys.append(Y[keep])
        have += int(keep.sum())
    return np.concatenate(xs)[:n], np.concatenate(ys)[:n]


def _random_instance(dim: int, atoms: int, rng: np.random.Generator) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    return (DiscreteMeasure.uniform(random_points(atoms, dim, rng)),
            DiscreteMeasure.uniform(random_points(atoms, dim, rng)))


class AdmissibilitySuite(VerificationSuite):
    name = "admissibility"

    def check(self) -> Tuple[bool, Metrics]:
        report = self.kernel.admissibility()
        return report.admissible, report.model_dump()


class InverseMapSuite(VerificationSuite):
    """grad c followed by M returns the original target; grad c matches finite differences."""

    name = "inverse_map"

    def check(self) -> Tuple[bool, Metrics]:
        rng = self.rng()
        X, Y = _separated_pairs(self.options.pairs, self.dim, rng)
        grads = self.kernel.tangential_gradient(X, Y).vec
        back, valid, boundary = self.kernel.inverse_map_M_batch(X, grads)
        err = np.linalg.norm(back[valid] - Y[valid], axis=1)
        roundtrip = float(np.max(err, initial=0.0))

        k = min(self.options.gradient_points, len(X))
        Xg, Yg, Ag = X[:k], Y[:k], grads[:k]
        v = tangential_project(rng.standard_normal(Xg.shape), Xg).vec
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        h = 1e-6
        forward = self.kernel.costs(geodesic(Xg, v, h), Yg)
        backward = self.kernel.costs(geodesic(Xg, v, -h), Yg)
        fd = (forward - backward) / (2.0 * h)
        exact = np.sum(Ag * v, axis=1)
        scale = np.maximum(1.0, np.linalg.norm(Ag, axis=1))
        gradient_err = float(np.max(np.abs(fd - exact) / scale))

        metrics = {
            "pairs": len(X),
            "undefined": int((~valid).sum()),
            "boundary": int(boundary.sum()),
            "max_roundtrip_error": roundtrip,
            "gradient_points": k,
            "max_gradient_error": gradient_err,
        }
        passed = bool(valid.all()) and roundtrip <= ROUNDTRIP_TOL and gradient_err <= GRADIENT_TOL
        return passed, metrics


class DoubleTransformSuite(VerificationSuite):
    """Chain potentials of optimal supports satisfy psi^cc = psi and contain their support."""

    name = "double_transform"

    def check(self) -> Tuple[bool, Metrics]:
        rng = self.rng()
        grid = make_grid("fibonacci", self.options.grid_n, dim=self.dim)
        worst_cc, worst_base, missing = 0.0, 0.0, 0
        for _ in range(self.options.instances):
            mu, nu = _random_instance(self.dim, self.options.atoms, rng)
            plan = solve_kantorovich(self.kernel, mu, nu).plan
            Xs, Ys = plan.support_points()
            psi = chain_potential(self.kernel, Xs, Ys)
            worst_base = max(worst_base, abs(float(psi(Xs[0]))))

            probe = np.concatenate([grid.nodes, Xs])
            values = psi(probe)
            psi_cc = double_c_transform(psi, probe)(probe)
            finite = np.isfinite(values)
            scale = np.maximum(1.0, np.abs(values[finite]))
            worst_cc = max(worst_cc, float(np.max(np.abs(psi_cc[finite] - values[finite]) / scale)))

            sd = superdifferential(psi, Xs, Ys)
            found = set(zip(sd.rows.tolist(), sd.cols.tolist()))
            missing += sum((i, i) not in found for i in range(len(Xs)))
        metrics = {
            "instances": self.options.instances,
            "max_cc_deviation": worst_cc,
            "max_base_value": worst_base,
            "support_pairs_missing": missing,
        }
        passed = worst_cc <= settings.optimality_tol and worst_base == 0.0 and missing == 0
        return passed, metrics


class MonotonicitySuite(VerificationSuite):
    """Optimal supports are c-cyclically monotone; an optional stored plan is checked too."""

    name = "monotonicity"

    def __init__(self, *args, plan: Optional[TransportPlan] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.plan = plan

    def check(self) -> Tuple[bool, Metrics]:
        rng = self.rng()
        reports = []
        for _ in range(self.options.instances):
            mu, nu = _random_instance(self.dim, self.options.atoms, rng)
            plan = solve_kantorovich(self.kernel, mu, nu).plan
            reports.append(check_cyclical_monotonicity(self.kernel, *plan.support_points(), max_n=self.options.max_n))
        metrics: Metrics = {
            "instances": len(reports),
            "tuples_checked": sum(r.tuples_checked for r in reports),
            "worst_deficit": max(r.worst_deficit for r in reports),
        }
        passed = all(r.monotone for r in reports)
        if self.plan is not None:
            stored = check_cyclical_monotonicity(self.kernel, *self.plan.support_points(), max_n=self.options.max_n)
            metrics["plan_file"] = stored.model_dump()
            passed = passed and stored.monotone
        return passed, metrics


class SnellSuite(VerificationSuite):
    """Rays reflected off confocal paraboloids reach their assigned directions."""

    name = "snell"

    def check(self) -> Tuple[bool, Metrics]:
        rng = self.rng()
        rays = random_points(self.options.rays, self.dim, rng)
        single = Reflector(random_points(1, self.dim, rng), np.ones(1))
        single_report = ray_trace_verify(single, rays)

        k = 4 if self.dim == 2 else 3
        directions = named_directions("tetrahedron") if self.dim == 2 else named_directions("circle", count=k, dim=1)
        composite = Reflector(directions, rng.uniform(0.5, 1.0, size=k))
        composite_report = ray_trace_verify(composite, rays)

        rho0 = 0.75
        probes = random_points(64, self.dim, rng)
        sphere_err = max(float(np.linalg.norm(quasipotential_position(ConstantFocal(2.0 * rho0), y) + rho0 * y))
                         for y in probes)

        quasi_err, quasi_checked = self._envelope_positions(composite, rng)
        metrics = {
            "single": single_report.model_dump(),
            "composite": composite_report.model_dump(),
            "sphere_position_error": sphere_err,
            "envelope_position_error": quasi_err,
            "envelope_probes": quasi_checked,
        }
        passed = single_report.passed and composite_report.passed and sphere_err <= QUASIPOTENTIAL_TOL \
            and quasi_err <= QUASIPOTENTIAL_TOL
        return passed, metrics

    def _envelope_positions(self, reflector: Reflector, rng: np.random.Generator) -> Tuple[float, int]:
        """Compare r(y) from the focal function of a sampled reflector with the hit point rho(x*) x*."""
        nodes = random_points(200, self.dim, rng)
        focal = EnvelopeFocal(reflector, nodes)
        h = 1e-6
        margin = 40.0 * h * float(focal.rho.max())
        worst, checked = 0.0, 0
        for y in random_points(64, self.dim, rng):
            branches = focal.rho * (1.0 - nodes @ y)
            order = np.argsort(branches)
            if branches[order[-1]] - branches[order[-2]] <= margin:
                continue
            best = order[-1]
            r = quasipotential_position(focal, y, h=h)
            hit = focal.rho[best] * nodes[best]
            worst = max(worst, float(np.linalg.norm(r - hit)) / max(1.0, float(focal.rho[best])))
            checked += 1
        return worst, checked


class DualityBridgeSuite(VerificationSuite):
    """A solved reflector yields optimal log-cost duals that agree with the exact solver."""

    name = "duality_bridge"

    def check(self) -> Tuple[bool, Metrics]:
        cost = LogKernel()
        if self.dim == 2:
            targets = DiscreteMeasure.uniform(named_directions("tetrahedron"))
        else:
            targets = DiscreteMeasure.uniform(named_directions("circle", count=4, dim=1, offset=0.3))
        grid = make_grid("fibonacci", self.options.bridge_atoms, dim=self.dim)
        intensity = intensity_values("uniform", grid)
        reflector = solve_weak_reflector(targets, grid, intensity)
        bridge = duality_bridge(reflector, grid.nodes)

        # discrete problem with the masses the reflector actually delivers
        cells = energy_masses(reflector, grid, intensity)
        source = grid.to_measure(intensity)
        achieved = DiscreteMeasure(reflector.directions, cells.masses / cells.total)
        solution = solve_kantorovich(cost, source, achieved)
        offset = solution.duals.v + np.log(reflector.focal_params)
        deviation = float(np.max(np.abs(offset - offset.mean())))

        metrics = {
            "atoms": len(grid),
            "focal_params": reflector.focal_params.tolist(),
            "bridge": bridge.model_dump(),
            "tied_nodes": cells.tied_nodes,
            "dual_deviation": deviation,
            "solver_backend": solution.backend,
        }
        return bridge.passed and deviation <= self.options.bridge_tol, metrics


SUITES: Dict[str, Type[VerificationSuite]] = {
    cls.name: cls for cls in (InverseMapSuite, DoubleTransformSuite, MonotonicitySuite, SnellSuite, DualityBridgeSuite)
}


class SuiteOrchestrator:
    """Runs the admissibility gate, then the selected suites concurrently."""

    def __init__(self, kernel: CostKernel, dim: int, seed: int, options: Any,
                 plan: Optional[TransportPlan] = None):
        unknown = [name for name in options.suites if name not in SUITES]
        if unknown:
            raise ConfigError("Unknown verification suite", suites=unknown, known=sorted(SUITES))
        self.kernel = kernel
        self.dim = dim
        self.gate = AdmissibilitySuite(kernel, dim, seed, options)
        self.suites: List[VerificationSuite] = []
        for offset, name in enumerate(options.suites, start=1):
            extra = {"plan": plan} if name == MonotonicitySuite.name else {}
            self.suites.append(SUITES[name](kernel, dim, seed + offset, options, **extra))
        self.log = logger.bind(component="orchestrator", kernel=kernel.name)

    async def run_all(self) -> VerificationReport:
        self.log.info("Starting verification", suites=[s.name for s in self.suites])
        gate = await self.gate.run()
        if gate.status != "pass":
            self.log.warning("Kernel is not admissible, skipping remaining suites")
            skipped = [SuiteResult(name=s.name, status="skipped", message="kernel is not admissible")
                       for s in self.suites]
            return VerificationReport(kernel=self.kernel.name, dimension=self.dim, results=[gate] + skipped)

        results = await asyncio.gather(*(suite.run() for suite in self.suites), return_exceptions=True)
        collected = [gate]
        for suite, result in zip(self.suites, results):
            if isinstance(result, Exception):
                self.log.error("Suite failed", suite=suite.name, error=str(result))
                result = SuiteResult(name=suite.name, status="fail", message=str(result))
            collected.append(result)
        report = VerificationReport(kernel=self.kernel.name, dimension=self.dim, results=collected)
        self.log.info("Verification complete", passed=report.passed, failed=report.failed)
        return report


def load_plan_file(path: Path, source: DiscreteMeasure, target: DiscreteMeasure) -> TransportPlan:
    """Rebuild a plan from the ``pairs`` of a plan JSON artifact."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        pairs = data["pairs"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError("Plan file is unreadable", path=str(path), error=str(exc)) from exc
    return TransportPlan.from_pairs(source, target, pairs)
