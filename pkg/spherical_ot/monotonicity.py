"""c-cyclical monotonicity checks on finite pair sets."""

import itertools
import math
from typing import List, Optional

import numpy as np
import structlog
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from .base import CostKernel
from .config import settings
from .errors import ArgumentError

logger = structlog.get_logger()

MAX_SUBSET = 5

# Upper bound on floats materialised per vectorised chunk.
_CHUNK = 1_000_000


class Violation(BaseModel):
    indices: List[int]
    permutation: List[int] = Field(description="sigma as positions within ``indices``")
    identity_sum: float
    permuted_sum: float
    deficit: float


class MonotonicityReport(BaseModel):
    monotone: bool
    max_n: int
    tuples_checked: int
    sampled: bool
    worst_deficit: float
    violation: Optional[Violation] = None


def _non_identity_permutations(k: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.int64)
    return perms[1:]


def _random_subsets(n: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` sorted k-subsets of range(n), duplicates within a row rejected."""
    out = []
    have = 0
    while have < count:
        draw = np.sort(rng.integers(0, n, size=(count - have, k)), axis=1)
        ok = np.all(np.diff(draw, axis=1) > 0, axis=1)
        out.append(draw[ok])
        have += int(ok.sum())
    return np.concatenate(out)[:count]


def check_cyclical_monotonicity(
    kernel: CostKernel,
    X: ArrayLike,
    Y: ArrayLike,
    max_n: int = 3,
    tol: Optional[float] = None,
) -> MonotonicityReport:
    """Check sum c(x_i, y_i) <= sum c(x_i, y_sigma(i)) over subsets of size <= max_n.

    Subsets are enumerated exhaustively while the tuple count fits
    ``settings.monotonicity_max_tuples``; larger sizes are sampled with a
    fixed seed. A permuted sum of +inf never counts as a violation.
    """
    tol = settings.optimality_tol if tol is None else tol
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape != Y.shape:
        raise ArgumentError("Pair set needs as many x as y", x=X.shape, y=Y.shape)
    if max_n < 1:
        raise ArgumentError("Subset size must be positive", max_n=max_n)
    if max_n > MAX_SUBSET:
        logger.warning("Capping monotonicity subset size", requested=max_n, cap=MAX_SUBSET)
        max_n = MAX_SUBSET

    n = X.shape[0]
    C = kernel.cost_matrix(X, Y)
    if not np.all(np.isfinite(np.diag(C))):
        raise ArgumentError("Pair set touches the diagonal")
    rng = np.random.default_rng(settings.monotonicity_seed)
    checked = 0
    sampled = False
    worst = -np.inf
    violation: Optional[Violation] = None

    for k in range(2, min(max_n, n) + 1):
        perms = _non_identity_permutations(k)
        n_subsets = math.comb(n, k)
        if n_subsets * len(perms) <= settings.monotonicity_max_tuples:
            subsets_iter = itertools.combinations(range(n), k)
            total = n_subsets
        else:
            sampled = True
            total = max(1, settings.monotonicity_max_tuples // len(perms))
            subsets_iter = iter(_random_subsets(n, k, total, rng).tolist())
        step = max(1, _CHUNK // (len(perms) * k))
        done = 0
        while done < total:
            chunk = np.array(list(itertools.islice(subsets_iter, step)), dtype=np.int64)
            if chunk.size == 0:
                break
            identity = C[chunk, chunk].sum(axis=1)
            permuted = C[chunk[:, None, :], chunk[:, perms]].sum(axis=2)
            with np.errstate(invalid="ignore"):
                deficit = np.where(np.isinf(permuted), -np.inf, identity[:, None] - permuted)
            worst = max(worst, float(deficit.max()))
            if violation is None and np.any(deficit > tol):
                row, col = np.unravel_index(int(np.argmax((deficit > tol).ravel())), deficit.shape)
                violation = Violation(
                    indices=chunk[row].tolist(),
                    permutation=perms[col].tolist(),
                    identity_sum=float(identity[row]),
                    permuted_sum=float(permuted[row, col]),
                    deficit=float(deficit[row, col]),
                )
            done += len(chunk)
            checked += len(chunk) * len(perms)

    report = MonotonicityReport(
        monotone=violation is None,
        max_n=max_n,
        tuples_checked=checked,
        sampled=sampled,
        worst_deficit=worst if np.isfinite(worst) else 0.0,
        violation=violation,
    )
    if violation is not None:
        logger.info("Pair set is not cyclically monotone", deficit=violation.deficit, indices=violation.indices)
    return report
