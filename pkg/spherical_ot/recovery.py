"""Optimal map recovery T(x) = M(grad psi(x), x) from Kantorovich duals."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike
from pydantic import BaseModel
from scipy.spatial import cKDTree

from .base import CostKernel
from .config import settings
from .errors import ArgumentError, KernelDomainError
from .potentials import PotentialFn
from .sphere import DiscreteMeasure, TangentVector, half_sq_dist

logger = structlog.get_logger()


def potential_from_duals(kernel: CostKernel, Y: ArrayLike, v: ArrayLike) -> PotentialFn:
    """psi(x) = min_j c(x, y_j) - v_j."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ArgumentError("Dual values must be finite")
    return PotentialFn(kernel, Y, -v)


def potential_gradients(psi: PotentialFn, X: ArrayLike, tie_tol: Optional[float] = None
                        ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tangential gradient of the active branch, active index and differentiability per point."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    index, unique = psi.argmin(X, tie_tol)
    active = psi.anchors[index]
    off_anchor = half_sq_dist(X, active) > 0
    grads = np.zeros(X.shape)
    if np.any(off_anchor):
        grads[off_anchor] = psi.kernel.tangential_gradient(X[off_anchor], active[off_anchor]).vec
    return grads, index, unique & off_anchor


def potential_gradient(psi: PotentialFn, x: ArrayLike, tie_tol: Optional[float] = None
                       ) -> Tuple[TangentVector, bool]:
    x = np.asarray(x, dtype=float).reshape(-1)
    grads, _, unique = potential_gradients(psi, x[None, :], tie_tol)
    return TangentVector(base=x, vec=grads[0]), bool(unique[0])


@dataclass(frozen=True, eq=False)
class RecoveredMap:
    """Evaluation of a recovered map on a point set.

    ``valid`` marks points where the potential is differentiable and M is
    defined; elsewhere ``images`` is NaN and the point belongs to the
    empirical non-differentiability set.
    """

    points: np.ndarray
    images: np.ndarray
    index: np.ndarray
    differentiable: np.ndarray
    valid: np.ndarray
    boundary: np.ndarray
    delta: float
    branch_error: float

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def flagged(self) -> np.ndarray:
        return self.points[~self.valid]


def recover_map(kernel: CostKernel, psi: PotentialFn, X: ArrayLike, tie_tol: Optional[float] = None) -> RecoveredMap:
    """T(x) = M(grad psi(x), x) at every point where the active branch is unique."""
    if not kernel.admissibility().admissible:
        raise KernelDomainError("Kernel is not admissible; M is undefined", kernel=kernel.name)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grads, index, unique = potential_gradients(psi, X, tie_tol)
    images = np.full(X.shape, np.nan)
    valid = np.zeros(X.shape[0], dtype=bool)
    boundary = np.zeros(X.shape[0], dtype=bool)
    if np.any(unique):
        Y, ok, near = kernel.inverse_map_M_batch(X[unique], grads[unique])
        images[unique] = Y
        valid[unique] = ok
        boundary[unique] = near
    branch = psi.anchors[index[valid]]
    branch_error = float(np.max(np.linalg.norm(images[valid] - branch, axis=1), initial=0.0))
    delta = float(np.min(np.linalg.norm(images[valid] - X[valid], axis=1), initial=np.inf))
    logger.debug("Recovered map", points=X.shape[0], valid=int(valid.sum()), delta=delta, branch_error=branch_error)
    return RecoveredMap(points=X, images=images, index=index, differentiable=unique, valid=valid,
                        boundary=boundary, delta=delta, branch_error=branch_error)


def inverse_map(kernel: CostKernel, psi_c: PotentialFn, Y: ArrayLike, tie_tol: Optional[float] = None) -> RecoveredMap:
    """S(y) = M(grad psi^c(y), y); the cost is symmetric so the forward rule applies."""
    return recover_map(kernel, psi_c, Y, tie_tol)


class CompositionReport(BaseModel):
    checked: int
    skipped: int
    max_error: float


def composition_check(kernel: CostKernel, forward: RecoveredMap, psi_c: PotentialFn) -> CompositionReport:
    """max |S(T(x)) - x| over points where both maps are unambiguous."""
    images = forward.images[forward.valid]
    origins = forward.points[forward.valid]
    if images.shape[0] == 0:
        return CompositionReport(checked=0, skipped=len(forward), max_error=0.0)
    back = inverse_map(kernel, psi_c, images)
    err = np.linalg.norm(back.images[back.valid] - origins[back.valid], axis=1)
    return CompositionReport(
        checked=int(back.valid.sum()),
        skipped=len(forward) - int(back.valid.sum()),
        max_error=float(np.max(err, initial=0.0)),
    )


class PushforwardReport(BaseModel):
    max_deviation: float
    unmatched_mass: float
    flagged_mass: float
    assignment: List[int]
    passed: bool


def verify_pushforward(T: RecoveredMap, mu: DiscreteMeasure, nu: DiscreteMeasure,
                       tol: Optional[float] = None) -> PushforwardReport:
    """Bin the images of the source atoms onto target atoms and compare masses."""
    tol = settings.feasibility_tol if tol is None else tol
    if len(T) != len(mu):
        raise ArgumentError("Map must be evaluated at the source atoms", points=len(T), atoms=len(mu))
    assignment = np.full(len(mu), -1, dtype=np.int64)
    if np.any(T.valid):
        dist, hit = cKDTree(nu.points).query(T.images[T.valid], distance_upper_bound=settings.match_tol)
        matched = np.isfinite(dist)
        assignment[np.flatnonzero(T.valid)[matched]] = hit[matched]
    flagged_mass = float(mu.weights[~T.valid].sum())
    unmatched_mass = float(mu.weights[T.valid & (assignment < 0)].sum())
    pushed = np.bincount(assignment[assignment >= 0], weights=mu.weights[assignment >= 0], minlength=len(nu))
    deviation = float(np.max(np.abs(pushed - nu.weights)))
    report = PushforwardReport(
        max_deviation=deviation,
        unmatched_mass=unmatched_mass,
        flagged_mass=flagged_mass,
        assignment=assignment.tolist(),
        passed=deviation <= tol and unmatched_mass <= tol,
    )
    logger.debug("Checked pushforward", deviation=deviation, unmatched=unmatched_mass, flagged=flagged_mass)
    return report


class UniquenessReport(BaseModel):
    compared: int
    mismatches: int


def uniqueness_probe(kernel: CostKernel, Y: ArrayLike, v1: ArrayLike, v2: ArrayLike, X: ArrayLike) -> UniquenessReport:
    """Compare the maps induced by two dual vectors on points unambiguous for both."""
    first = recover_map(kernel, potential_from_duals(kernel, Y, v1), X)
    second = recover_map(kernel, potential_from_duals(kernel, Y, v2), X)
    both = first.valid & second.valid
    mismatches = int(np.sum(first.index[both] != second.index[both]))
    return UniquenessReport(compared=int(both.sum()), mismatches=mismatches)
