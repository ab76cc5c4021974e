"""Semi-discrete far-field reflectors built from confocal paraboloids.

A paraboloid of revolution with focus at the origin, axis y and focal
parameter p has radial function p / (1 - x.y). A reflector with targets
y_1..y_k is the envelope rho(x) = min_i p_i / (1 - x.y_i); a ray leaving
the origin in direction x hits it at rho(x) x and, by the focal property,
reflects into the y_i whose paraboloid is active there.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike
from pydantic import BaseModel

from .config import settings
from .errors import ArgumentError, ConvergenceError, InfeasibleError
from .sphere import (
    DiscreteMeasure,
    QuadratureGrid,
    geodesic,
    half_sq_dist,
    normalize,
    pairwise_half_sq_dist,
    tangent_basis,
)

logger = structlog.get_logger()

IntensityName = Literal["uniform", "north_cap", "cosine"]


@dataclass(frozen=True, eq=False)
class Reflector:
    directions: np.ndarray
    focal_params: np.ndarray

    def __post_init__(self):
        directions = np.atleast_2d(normalize(self.directions))
        focal = np.asarray(self.focal_params, dtype=float).reshape(-1)
        if directions.shape[0] != focal.size:
            raise ArgumentError("One focal parameter per direction is required")
        if not np.all(np.isfinite(focal)) or np.any(focal <= 0):
            raise ArgumentError("Focal parameters must be finite and positive")
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "focal_params", focal)

    def __len__(self) -> int:
        return self.focal_params.size

    def scaled(self, factor: float) -> "Reflector":
        return Reflector(self.directions, self.focal_params * factor)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "directions": [[float(c) for c in y] for y in self.directions],
            "focal_params": [float(p) for p in self.focal_params],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Reflector":
        return cls(np.asarray(data["directions"], dtype=float), np.asarray(data["focal_params"], dtype=float))


def _radii(reflector: Reflector, X: np.ndarray) -> np.ndarray:
    """rho_i(x) = p_i / (1 - x.y_i) for every node and direction."""
    t = pairwise_half_sq_dist(X, reflector.directions)
    with np.errstate(divide="ignore"):
        return np.where(t > 0, reflector.focal_params[None, :] / np.where(t > 0, t, 1.0), np.inf)


def envelope(reflector: Reflector, X: ArrayLike, tie_tol: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Radius rho(x) and the (n, k) mask of directions attaining it within ``tie_tol``."""
    tie_tol = settings.tie_tol if tie_tol is None else tie_tol
    radii = _radii(reflector, np.atleast_2d(np.asarray(X, dtype=float)))
    rho = radii.min(axis=1)
    active = radii <= rho[:, None] * (1.0 + tie_tol)
    return rho, active


def envelope_radius(reflector: Reflector, x: ArrayLike) -> Tuple[float, List[int]]:
    rho, active = envelope(reflector, np.asarray(x, dtype=float).reshape(1, -1))
    return float(rho[0]), np.flatnonzero(active[0]).tolist()


def reflector_map(reflector: Reflector, x: ArrayLike) -> np.ndarray:
    """Directions y_i whose paraboloid supports the reflector at rho(x) x (one row each)."""
    _, indices = envelope_radius(reflector, x)
    return reflector.directions[indices]


@dataclass(frozen=True, eq=False)
class CellDecomposition:
    """Visibility cells on a quadrature grid; tied nodes belong to every tied cell."""

    membership: np.ndarray
    masses: np.ndarray
    energy: np.ndarray

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def tied_nodes(self) -> int:
        return int(np.sum(self.membership.sum(axis=1) > 1))

    def cell_nodes(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.membership[:, i])

    def transport_cost(self, reflector: Reflector, nodes: np.ndarray) -> float:
        """Energy-weighted far-field cost -log(1 - x.y) of the reflector map."""
        t = pairwise_half_sq_dist(nodes, reflector.directions)
        share = self.membership / self.membership.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            cost = np.where(self.membership, -np.log(np.where(self.membership, t, 1.0)), 0.0)
        return float(np.sum(self.energy[:, None] * share * cost))


def intensity_values(name: IntensityName, grid: QuadratureGrid) -> np.ndarray:
    """Source intensity on the grid, zero off the aperture, with unit total energy."""
    z = grid.nodes[:, -1]
    if name == "uniform":
        raw = np.ones(len(grid))
    elif name == "north_cap":
        raw = (z >= 0).astype(float)
    elif name == "cosine":
        raw = np.clip(z, 0.0, None)
    else:
        raise ArgumentError("Unknown intensity", name=name)
    total = grid.integrate(raw)
    if total <= 0:
        raise ArgumentError("Intensity carries no energy on this grid", name=name)
    return raw / total


def energy_masses(reflector: Reflector, grid: QuadratureGrid, intensity: ArrayLike) -> CellDecomposition:
    """G_i = sum of I * weight over cell i, tied nodes split equally."""
    intensity = np.asarray(intensity, dtype=float)
    if intensity.shape != (len(grid),):
        raise ArgumentError("One intensity value per node is required")
    if np.any(intensity < 0):
        raise ArgumentError("Intensity must be nonnegative")
    _, active = envelope(reflector, grid.nodes)
    energy = intensity * grid.weights
    share = active / active.sum(axis=1, keepdims=True)
    masses = share.T @ energy
    return CellDecomposition(membership=active, masses=masses, energy=energy)


class _Brackets:
    """Per-coordinate bounds on log p, used once a coordinate starts oscillating."""

    def __init__(self, k: int):
        self.lo = np.full(k, -np.inf)
        self.hi = np.full(k, np.inf)
        self.flips = np.zeros(k, dtype=np.int64)
        self.last = np.zeros(k)

    def record(self, log_p: np.ndarray, sign: np.ndarray) -> None:
        self.lo = np.where(sign > 0, np.maximum(self.lo, log_p), self.lo)
        self.hi = np.where(sign < 0, np.minimum(self.hi, log_p), self.hi)
        self.flips += (sign != 0) & (self.last != 0) & (sign != self.last)
        self.last = np.where(sign != 0, sign, self.last)
        stale = self.lo >= self.hi
        self.lo = np.where(stale, -np.inf, self.lo)
        self.hi = np.where(stale, np.inf, self.hi)

    def shift(self, amount: float) -> None:
        self.lo -= amount
        self.hi -= amount


def solve_weak_reflector(
    targets: DiscreteMeasure,
    grid: QuadratureGrid,
    intensity: ArrayLike,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
) -> Reflector:
    """Focal parameters whose cells carry the target masses within ``tol`` relative.

    Damped multiplicative updates on log p: an oversized cell raises its
    focal parameter, which shrinks it. Coordinates whose residual keeps
    changing sign fall back to bisection between stored brackets. The
    result is normalized so that max p_i = 1.
    """
    max_iter = settings.reflector_max_iter if max_iter is None else max_iter
    intensity = np.asarray(intensity, dtype=float)
    nu = targets.weights
    if np.any(nu <= 0):
        raise ArgumentError("Every target direction needs positive mass")
    energy = float(np.dot(intensity, grid.weights))
    if abs(energy - targets.total_mass) > settings.optimality_tol:
        raise InfeasibleError("Source energy and target mass differ", energy=energy, target=targets.total_mass)

    log = logger.bind(component="reflector", targets=len(targets), nodes=len(grid))
    k = len(targets)
    log_p = np.zeros(k)
    brackets = _Brackets(k)
    eta, cap = settings.reflector_eta, settings.reflector_cap
    rel = np.zeros(k)
    for iteration in range(max_iter + 1):
        reflector = Reflector(targets.points, np.exp(log_p))
        cells = energy_masses(reflector, grid, intensity)
        rel = (cells.masses - nu) / nu
        if np.max(np.abs(rel)) <= tol:
            log.info("Solved reflector", iterations=iteration, max_rel_err=float(np.max(np.abs(rel))))
            return reflector
        sign = np.sign(rel)
        brackets.record(log_p, sign)
        step = log_p + eta * sign * np.minimum(np.abs(rel), cap)
        bisect = (brackets.flips > settings.reflector_oscillation_limit) & np.isfinite(brackets.lo) \
            & np.isfinite(brackets.hi)
        step = np.where(bisect, 0.5 * (brackets.lo + brackets.hi), step)
        top = float(step.max())
        log_p = step - top
        brackets.shift(top)
        if iteration % 100 == 0:
            log.debug("Reflector iteration", iteration=iteration, max_rel_err=float(np.max(np.abs(rel))),
                      bisecting=int(bisect.sum()))
    raise ConvergenceError("Reflector iteration did not converge", residuals=rel.tolist(), iterations=max_iter)


def snell_reflect(x: ArrayLike, n: ArrayLike) -> np.ndarray:
    """Reflection law y = x - 2 (x.n) n, row-wise."""
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    return x - 2.0 * np.sum(x * n, axis=-1, keepdims=True) * n


def paraboloid_normal(x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Unit normal of the confocal paraboloid with axis y at the point in direction x.

    The surface is the level set |r| - r.y = p, whose gradient is x - y.
    """
    return normalize(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))


class RayTraceReport(BaseModel):
    rays: int
    traced: int
    ties_skipped: int
    max_deviation: float
    max_surface_residual: float
    passed: bool


def ray_trace_verify(reflector: Reflector, sample: ArrayLike, tol: float = 1e-8) -> RayTraceReport:
    """Reflect each ray off its supporting paraboloid and compare with the assigned target.

    Each hit point rho(x) x must also lie on that paraboloid,
    rho(x) (1 - x.y_i) = p_i, up to ``tol`` relative to p_i.
    """
    X = np.atleast_2d(normalize(np.asarray(sample, dtype=float)))
    rho, active = envelope(reflector, X)
    unique = active.sum(axis=1) == 1
    Xu = X[unique]
    chosen = np.argmax(active[unique], axis=1)
    targets = reflector.directions[chosen]
    hits = rho[unique, None] * Xu
    surface = np.abs(rho[unique] * half_sq_dist(Xu, targets) - reflector.focal_params[chosen])
    residual = float(np.max(surface / reflector.focal_params[chosen], initial=0.0))
    normals = paraboloid_normal(hits / np.linalg.norm(hits, axis=1, keepdims=True), targets)
    reflected = snell_reflect(Xu, normals)
    deviation = float(np.max(np.linalg.norm(reflected - targets, axis=1), initial=0.0))
    report = RayTraceReport(
        rays=X.shape[0],
        traced=int(unique.sum()),
        ties_skipped=int((~unique).sum()),
        max_deviation=deviation,
        max_surface_residual=residual,
        passed=deviation <= tol and residual <= tol,
    )
    logger.debug("Traced rays", traced=report.traced, max_deviation=deviation, max_surface_residual=residual)
    return report


class FocalFunction(ABC):
    """A positive focal function p on the sphere of directions."""

    @abstractmethod
    def __call__(self, Y: np.ndarray) -> np.ndarray:
        pass


class ConstantFocal(FocalFunction):
    """p = 2 rho0: the sphere of radius rho0 centred at the source."""

    def __init__(self, value: float):
        if value <= 0:
            raise ArgumentError("Focal value must be positive", value=value)
        self.value = float(value)

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(Y).shape[0], self.value)


class EnvelopeFocal(FocalFunction):
    """p(y) = max over sampled x of rho(x)(1 - x.y): the smallest focal parameter
    whose paraboloid with axis y contains the sampled reflector."""

    def __init__(self, reflector: Reflector, nodes: ArrayLike):
        self.nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        self.rho, _ = envelope(reflector, self.nodes)

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        t = pairwise_half_sq_dist(self.nodes, np.atleast_2d(Y))
        return np.max(self.rho[:, None] * t, axis=0)


def focal_gradient(focal: FocalFunction, y: ArrayLike, h: float = 1e-6,
                   stencil: Optional[ArrayLike] = None) -> Tuple[float, np.ndarray]:
    """p(y) and its tangential gradient by a least-squares fit over geodesic offsets.

    ``stencil`` holds offsets in tangent-basis coordinates (one row each);
    by default the symmetric axis stencil of step ``h``.
    """
    y = normalize(np.asarray(y, dtype=float).reshape(-1))
    basis = tangent_basis(y)
    d = basis.shape[0]
    offsets = np.concatenate([h * np.eye(d), -h * np.eye(d)]) if stencil is None else np.atleast_2d(stencil)
    if offsets.shape[1] != d or np.linalg.matrix_rank(offsets) < d:
        raise ArgumentError("Finite-difference stencil does not span the tangent space", dim=d)
    ambient = offsets @ basis
    lengths = np.linalg.norm(ambient, axis=1)
    points = np.stack([geodesic(y, v / s, s) for v, s in zip(ambient, lengths)])
    p0 = float(focal(y[None, :])[0])
    values = focal(points) - p0
    coeffs, *_ = np.linalg.lstsq(offsets, values, rcond=None)
    return p0, coeffs @ basis


def quasipotential_position(focal: FocalFunction, y: ArrayLike, h: float = 1e-6,
                            stencil: Optional[ArrayLike] = None) -> np.ndarray:
    """Reflector point r(y) = -grad p - (p - rho) y with rho = (p^2 + |grad p|^2) / 2p."""
    y = normalize(np.asarray(y, dtype=float).reshape(-1))
    p, grad = focal_gradient(focal, y, h=h, stencil=stencil)
    if p <= 0:
        raise ArgumentError("Focal function must be positive", value=p)
    rho = (p * p + float(np.dot(grad, grad))) / (2.0 * p)
    return -grad - (p - rho) * y


class DualityBridgeReport(BaseModel):
    max_violation: float
    max_slack: float
    passed: bool


def duality_bridge(reflector: Reflector, X: ArrayLike, tol: Optional[float] = None) -> DualityBridgeReport:
    """Check u = log rho, v = -log p against c(x, y) = -log(1 - x.y)."""
    tol = settings.optimality_tol if tol is None else tol
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = pairwise_half_sq_dist(X, reflector.directions)
    rho, active = envelope(reflector, X)
    with np.errstate(divide="ignore"):
        c = -np.log(t)
        excess = np.log(rho)[:, None] - np.log(reflector.focal_params)[None, :] - c
    finite = np.isfinite(c)
    violation = float(np.max(excess[finite], initial=-np.inf))
    slack = float(np.max(np.abs(excess[active & finite]), initial=0.0))
    return DualityBridgeReport(max_violation=violation, max_slack=slack, passed=violation <= tol and slack <= tol)


def reflector_mesh(reflector: Reflector, grid: QuadratureGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices rho(x) x over the grid and the grid's outward triangulation."""
    rho, _ = envelope(reflector, grid.nodes)
    return rho[:, None] * grid.nodes, grid.triangulation()
