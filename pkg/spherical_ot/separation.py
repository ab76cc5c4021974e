"""Couplings kept uniformly away from the diagonal, built from horizontal slabs.

The height of a point is its last coordinate. A cut level c splits both
measures so that the source mass above c equals the target mass below c;
each of the two resulting (lower, upper) pairs is then coupled by the
half-and-half product construction. When a heavy atom sits on the cut
level the products can pair it with itself; the coupling is then taken
from a transport problem that forbids every chord below a bisected gap.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import structlog
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .config import settings
from .errors import ArgumentError, InfeasibleError, NoSeparatedPlanError
from .solver import _MASS_FLOOR, NetworkSimplex, TransportPlan
from .sphere import DiscreteMeasure, half_sq_dist, pairwise_half_sq_dist

logger = structlog.get_logger()

LEVEL_TOL = 1e-12


@dataclass
class _Part:
    """Fractional piece of a measure: atom indices, their masses and heights."""

    idx: np.ndarray
    mass: np.ndarray
    z: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def take(self, mask: np.ndarray, fraction=1.0) -> "_Part":
        return _Part(self.idx[mask], self.mass[mask] * fraction, self.z[mask])

    @staticmethod
    def join(*parts: "_Part") -> "_Part":
        return _Part(
            np.concatenate([p.idx for p in parts]),
            np.concatenate([p.mass for p in parts]),
            np.concatenate([p.z for p in parts]),
        )


def _split_half(part: _Part, half: float) -> Tuple[_Part, _Part]:
    """Split at cumulative mass ``half`` counted from the bottom (ties by index)."""
    order = np.lexsort((part.idx, part.z))
    idx, mass, z = part.idx[order], part.mass[order], part.z[order]
    before = np.concatenate([[0.0], np.cumsum(mass)[:-1]])
    low_mass = np.clip(half - before, 0.0, mass)
    high_mass = mass - low_mass
    return _Part(idx, low_mass, z), _Part(idx, high_mass, z)


def _product(left: _Part, right: _Part, scale: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    keep_l = left.mass > 0
    keep_r = right.mass > 0
    li, lm = left.idx[keep_l], left.mass[keep_l]
    ri, rm = right.idx[keep_r], right.mass[keep_r]
    mass = np.outer(lm, rm) / scale
    rows = np.repeat(li, ri.size)
    cols = np.tile(ri, li.size)
    return rows, cols, mass.ravel()


def _case_one(lower: _Part, upper: _Part, lower_is_source: bool):
    """(L- x U- + L+ x U+) / (m/2) for a lower/upper pair of equal mass m."""
    m = lower.total
    if m <= 0:
        return []
    l_minus, l_plus = _split_half(lower, m / 2.0)
    u_minus, u_plus = _split_half(upper, m / 2.0)
    pieces = []
    for low, up in ((l_minus, u_minus), (l_plus, u_plus)):
        if lower_is_source:
            pieces.append(_product(low, up, m / 2.0))
        else:
            rows, cols, mass = _product(up, low, m / 2.0)
            pieces.append((rows, cols, mass))
    return pieces


def _check_shared_atoms(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    """A point whose combined mass exceeds the total forces mass onto the diagonal."""
    total = mu.total_mass
    hits = cKDTree(mu.points).query_ball_point(nu.points, r=settings.geometry_tol)
    for j, near in enumerate(hits):
        for i in near:
            if mu.weights[i] + nu.weights[j] > total + settings.feasibility_tol:
                raise NoSeparatedPlanError("Shared atom carries more than the separable budget",
                                           source=int(i), target=int(j),
                                           mass=float(mu.weights[i] + nu.weights[j]))


def _feasible_flow(allowed: np.ndarray, a: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    """Dense coupling of a and b that uses allowed arcs only, or None when there is none."""
    simplex = NetworkSimplex(np.where(allowed, 0.0, np.inf), a, b)
    arcs, flow = simplex.solve()
    arc_idx = np.asarray(arcs, dtype=np.int64)
    blocked = simplex.forbidden[arc_idx[:, 0], arc_idx[:, 1]]
    if np.any(flow[blocked] > _MASS_FLOOR):
        return None
    gamma = np.zeros(allowed.shape)
    usable = ~blocked & (flow > _MASS_FLOOR)
    np.add.at(gamma, (arc_idx[usable, 0], arc_idx[usable, 1]), flow[usable])
    return gamma


def _widest_gap_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """Coupling whose shortest transported chord is as long as possible.

    Bisects over the pairwise chords; arcs shorter than the trial chord are
    forbidden and the network simplex decides whether a coupling remains.
    """
    src, tgt = mu.weights > 0, nu.weights > 0
    chord = np.sqrt(2.0 * pairwise_half_sq_dist(mu.points[src], nu.points[tgt]))
    levels = np.unique(chord[chord > settings.geometry_tol])
    best = None
    lo, hi = 0, levels.size - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        gamma = _feasible_flow(chord >= levels[mid], mu.weights[src], nu.weights[tgt])
        if gamma is None:
            hi = mid - 1
        else:
            best, lo = gamma, mid + 1
    if best is None:
        raise NoSeparatedPlanError("Every coupling charges a shared atom")
    full = np.zeros((len(mu), len(nu)))
    full[np.ix_(src, tgt)] = best
    return TransportPlan.from_dense(mu, nu, full)


def separated_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Tuple[TransportPlan, float]:
    """Coupling of mu and nu with |x - y| >= epsilon > 0 on its support."""
    if mu.dim != nu.dim:
        raise ArgumentError("Measures live on spheres of different dimension")
    imbalance = abs(mu.total_mass - nu.total_mass)
    if imbalance > settings.feasibility_tol:
        raise InfeasibleError("Source and target masses differ", imbalance=imbalance)
    _check_shared_atoms(mu, nu)

    src = _Part(np.arange(len(mu)), mu.weights.astype(float), mu.heights)
    tgt = _Part(np.arange(len(nu)), nu.weights.astype(float), nu.heights)
    levels = np.unique(np.concatenate([src.z, tgt.z]))
    levels = levels[np.concatenate([[True], np.diff(levels) > LEVEL_TOL])]
    tol = settings.geometry_tol * max(1.0, mu.total_mass)

    for c in levels:
        at_src = np.abs(src.z - c) <= LEVEL_TOL
        at_tgt = np.abs(tgt.z - c) <= LEVEL_TOL
        above_src = (src.z > c) & ~at_src
        below_tgt = (tgt.z < c) & ~at_tgt
        excess = src.mass[above_src].sum() - tgt.mass[below_tgt].sum() - tgt.mass[at_tgt].sum()
        if excess > tol:
            continue
        if excess >= -tol:
            # clean cut: the level belongs to the lower side
            src_hi, src_lo = src.take(above_src), src.take(~above_src)
            tgt_lo, tgt_hi = tgt.take(below_tgt | at_tgt), tgt.take(~(below_tgt | at_tgt))
            case = "cut"
        else:
            # jump at this level: split its atoms fractionally
            deficit = tgt.mass[below_tgt].sum() - src.mass[above_src].sum()
            level_src, level_tgt = src.mass[at_src].sum(), tgt.mass[at_tgt].sum()
            alpha = max(deficit, 0.0) / level_src if level_src > 0 else 0.0
            beta = max(-deficit, 0.0) / level_tgt if level_tgt > 0 else 0.0
            src_hi = _Part.join(src.take(above_src), src.take(at_src, alpha))
            src_lo = _Part.join(src.take(~above_src & ~at_src), src.take(at_src, 1.0 - alpha))
            tgt_lo = _Part.join(tgt.take(below_tgt), tgt.take(at_tgt, beta))
            tgt_hi = _Part.join(tgt.take(~below_tgt & ~at_tgt), tgt.take(at_tgt, 1.0 - beta))
            case = "split"
        break
    else:
        raise NoSeparatedPlanError("No cut level balances the slabs")

    pieces: List = []
    pieces += _case_one(tgt_lo, src_hi, lower_is_source=False)
    pieces += _case_one(src_lo, tgt_hi, lower_is_source=True)
    rows = np.concatenate([p[0] for p in pieces])
    cols = np.concatenate([p[1] for p in pieces])
    mass = np.concatenate([p[2] for p in pieces])
    keep = mass > 0
    merged = coo_matrix((mass[keep], (rows[keep], cols[keep])), shape=(len(mu), len(nu))).tocsr().tocoo()

    collide = half_sq_dist(mu.points[merged.row], nu.points[merged.col]) == 0
    if np.any(collide):
        logger.debug("Slab coupling charges a shared atom, solving for the widest gap instead",
                     cut=float(c), diagonal_mass=float(merged.data[collide].sum()))
        plan = _widest_gap_plan(mu, nu)
        case = "widest_gap"
    else:
        plan = TransportPlan(mu, nu, merged.row, merged.col, merged.data)
    epsilon = plan.min_separation()
    if epsilon <= settings.geometry_tol:
        raise NoSeparatedPlanError("Support reaches the diagonal", epsilon=epsilon)
    logger.info("Built separated plan", case=case, cut=float(c), epsilon=epsilon, support=len(plan))
    return plan, epsilon
