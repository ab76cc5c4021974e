"""Geometry of the unit sphere S^d in R^{d+1}, discrete measures and quadrature grids.

Points are always stored in the ambient embedding, never in spherical
coordinates, so there are no pole singularities anywhere in the package.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree
from scipy.special import gamma

from .config import settings
from .errors import ArgumentError

logger = structlog.get_logger()

GridKind = Literal["fibonacci", "random_uniform"]

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

# Upper bound on the number of floats materialised by one pairwise chunk.
_PAIRWISE_CHUNK = 2_000_000


def as_points(x: ArrayLike) -> np.ndarray:
    """Return ``x`` as a float array of shape (d+1,) or (n, d+1)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or arr.ndim > 2:
        raise ArgumentError("Expected a point or a stack of points", shape=arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("Point coordinates must be finite")
    return arr


def normalize(x: ArrayLike) -> np.ndarray:
    """Project nonzero vectors radially onto the sphere."""
    arr = as_points(x)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ArgumentError("Cannot normalize the zero vector")
    return arr / norms


def sphere_area(dim: int) -> float:
    """Surface measure |S^d| = 2 pi^{(d+1)/2} / Gamma((d+1)/2)."""
    if dim < 1:
        raise ArgumentError("Sphere dimension must be at least 1", dim=dim)
    return float(2.0 * math.pi ** ((dim + 1) / 2.0) / gamma((dim + 1) / 2.0))


def dot(x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Row-wise inner product along the last axis."""
    return np.sum(np.asarray(x, dtype=float) * np.asarray(y, dtype=float), axis=-1)


def half_sq_dist(x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """t = |x - y|^2 / 2, row-wise. On the sphere this equals 1 - x.y."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return 0.5 * np.sum(diff * diff, axis=-1)


def pairwise_half_sq_dist(X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """Matrix of |x_i - y_j|^2 / 2, computed from differences in bounded chunks.

    Differences (rather than 1 - x.y) keep full relative accuracy near the
    diagonal and make the result exactly symmetric under swapping X and Y.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, m = X.shape[0], Y.shape[0]
    out = np.empty((n, m))
    step = max(1, _PAIRWISE_CHUNK // max(1, m * X.shape[1]))
    for start in range(0, n, step):
        diff = X[start:start + step, None, :] - Y[None, :, :]
        out[start:start + step] = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
    return out


@dataclass(frozen=True, eq=False)
class UnitVector:
    """A point of S^d embedded in R^{d+1}; renormalized on construction."""

    coords: np.ndarray

    def __post_init__(self):
        coords = normalize(np.asarray(self.coords, dtype=float).reshape(-1))
        if coords.size < 2:
            raise ArgumentError("A point of S^d needs d >= 1", size=coords.size)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return self.coords.size - 1

    def dot(self, other: ArrayLike) -> float:
        return float(np.dot(self.coords, np.asarray(other, dtype=float)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)

    def __repr__(self) -> str:
        return f"UnitVector({np.array2string(self.coords, precision=6)})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """A vector ``vec`` tangent to the sphere at ``base`` (row-wise for stacks)."""

    base: np.ndarray
    vec: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        vec = np.asarray(self.vec, dtype=float)
        if base.shape != vec.shape:
            raise ArgumentError("Base and vector shapes differ", base=base.shape, vec=vec.shape)
        scale = np.maximum(1.0, np.linalg.norm(vec, axis=-1))
        if np.any(np.abs(dot(base, vec)) > 1e3 * settings.geometry_tol * scale):
            raise ArgumentError("Vector is not tangent at its base point")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "vec", vec)

    @property
    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.vec, axis=-1)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.vec, dtype=dtype)


def tangential_project(y: ArrayLike, x: ArrayLike) -> TangentVector:
    """Orthogonal projection y_par = y - (x.y) x of y onto the tangent space at x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xy = dot(x, y)[..., None]
    return TangentVector(base=x, vec=y - xy * x)


def tangent_basis(x: ArrayLike) -> np.ndarray:
    """Orthonormal basis (rows) of the tangent space at a single point x."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    _, _, vt = np.linalg.svd(x)
    return vt[1:]


def geodesic(x: ArrayLike, v: ArrayLike, t: float) -> np.ndarray:
    """Point reached after time t along the great circle through x with velocity v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = np.where(speed > 0, v / np.where(speed > 0, speed, 1.0), 0.0)
    return np.cos(t * speed) * x + np.sin(t * speed) * direction


def random_points(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. uniform points on S^dim (normalized Gaussians)."""
    if dim < 1:
        raise ArgumentError("Sphere dimension must be at least 1", dim=dim)
    raw = rng.standard_normal((n, dim + 1))
    return normalize(raw)


def _merge_duplicates(points: np.ndarray, weights: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Merge atoms closer than ``tol`` by adding their weights."""
    if points.shape[0] < 2:
        return points, weights
    pairs = cKDTree(points).query_pairs(r=tol, output_type="ndarray")
    if pairs.size == 0:
        return points, weights
    n = points.shape[0]
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    merged = np.bincount(labels, weights=weights)
    logger.debug("Merged duplicate atoms", before=n, after=len(first))
    return points[first], merged


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud on S^d.

    Points are renormalized and atoms closer than the geometry tolerance are
    merged. When ``probability`` is set the weights must sum to one.
    """

    points: np.ndarray
    weights: np.ndarray
    probability: bool = True

    def __post_init__(self):
        points = np.atleast_2d(normalize(self.points))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if points.shape[1] < 2:
            raise ArgumentError("Measures live on S^d with d >= 1", shape=points.shape)
        if points.shape[0] != weights.shape[0]:
            raise ArgumentError("One weight per point is required", points=points.shape[0], weights=weights.shape[0])
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ArgumentError("Weights must be finite and nonnegative")
        points, weights = _merge_duplicates(points, weights, settings.geometry_tol)
        if self.probability and abs(weights.sum() - 1.0) > settings.geometry_tol:
            raise ArgumentError("Probability weights must sum to one", total=float(weights.sum()))
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points: ArrayLike) -> "DiscreteMeasure":
        pts = np.atleast_2d(as_points(points))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @classmethod
    def dirac(cls, point: ArrayLike) -> "DiscreteMeasure":
        return cls(np.atleast_2d(as_points(point)), np.ones(1))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def heights(self) -> np.ndarray:
        """Last embedding coordinate, the x_{d+1} used by slabs."""
        return self.points[:, -1]

    def normalized(self) -> "DiscreteMeasure":
        total = self.total_mass
        if total <= 0:
            raise ArgumentError("Cannot normalize a measure with zero mass")
        return DiscreteMeasure(self.points, self.weights / total, probability=True)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "points": [[float(c) for c in p] for p in self.points],
            "weights": [float(w) for w in self.weights],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], probability: bool = True) -> "DiscreteMeasure":
        points = np.asarray(data["points"], dtype=float)
        if points.ndim != 2 or points.shape[1] != int(data["dim"]) + 1:
            raise ArgumentError("Point coordinates do not match the declared dimension", dim=data.get("dim"))
        return cls(points, np.asarray(data["weights"], dtype=float), probability=probability)


def slab_mass(m: DiscreteMeasure, a: float, b: float) -> float:
    """Mass of the slab S(a, b) = {a <= x_{d+1} <= b}."""
    if not (-1.0 <= a <= b <= 1.0):
        raise ArgumentError("Slab bounds must satisfy -1 <= a <= b <= 1", a=a, b=b)
    z = m.heights
    return float(m.weights[(z >= a) & (z <= b)].sum())


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Nodes on S^d with positive weights approximating the surface measure."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(normalize(self.nodes))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.shape[0] != weights.shape[0]:
            raise ArgumentError("One weight per node is required")
        if np.any(weights <= 0):
            raise ArgumentError("Quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1] - 1

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def integrate(self, values: ArrayLike) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def to_measure(self, intensity: Optional[ArrayLike] = None) -> DiscreteMeasure:
        """Atom cloud with mass proportional to intensity x weight, normalized."""
        density = np.ones(len(self)) if intensity is None else np.asarray(intensity, dtype=float)
        mass = density * self.weights
        keep = mass > 0
        return DiscreteMeasure(self.nodes[keep], mass[keep] / mass.sum())

    def triangulation(self) -> np.ndarray:
        """Faces of the grid: outward-oriented triangles on S^2, closed polyline on S^1."""
        if self.dim == 1:
            order = np.argsort(np.arctan2(self.nodes[:, 1], self.nodes[:, 0]))
            return np.stack([order, np.roll(order, -1)], axis=1)
        if self.dim != 2:
            raise ArgumentError("Triangulation is only available on S^1 and S^2", dim=self.dim)
        faces = ConvexHull(self.nodes).simplices.copy()
        a, b, c = (self.nodes[faces[:, k]] for k in range(3))
        inward = dot(np.cross(b - a, c - a), a + b + c) < 0
        faces[inward] = faces[inward][:, [0, 2, 1]]
        return faces


def _fibonacci_nodes(n: int) -> np.ndarray:
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = k * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def make_grid(kind: GridKind, n: int, seed: int = 0, dim: int = 2) -> QuadratureGrid:
    """Deterministic equal-weight grid with total weight |S^dim|.

    ``fibonacci`` is the spherical Fibonacci lattice on S^2 and equispaced
    angles on S^1; ``random_uniform`` draws i.i.d. uniform nodes from ``seed``.
    """
    if n < 4:
        raise ArgumentError("A quadrature grid needs at least 4 nodes", n=n)
    if dim < 1:
        raise ArgumentError("Sphere dimension must be at least 1", dim=dim)
    rng = np.random.default_rng(seed)
    if kind == "fibonacci":
        if dim == 1:
            theta = 2.0 * math.pi * (np.arange(n) + 0.5) / n
            nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        elif dim == 2:
            nodes = _fibonacci_nodes(n)
        else:
            raise ArgumentError("Fibonacci grids exist on S^1 and S^2 only", dim=dim)
    elif kind == "random_uniform":
        nodes = random_points(n, dim, rng)
    else:
        raise ArgumentError("Unknown grid kind", kind=kind)
    return QuadratureGrid(nodes, np.full(n, sphere_area(dim) / n))


DirectionSet = Literal["antipodal", "tetrahedron", "octahedron", "cube", "circle", "random"]


def named_directions(name: DirectionSet, count: int = 0, seed: int = 0, dim: int = 2,
                     offset: float = 0.0) -> np.ndarray:
    """Built-in target direction sets.

    ``circle`` places ``count`` equispaced directions on S^1 (or the equator
    of S^2) starting at angle ``offset`` in radians; ``random`` draws
    ``count`` uniform directions from ``seed``.
    """
    if name == "antipodal":
        north = np.zeros(dim + 1)
        north[-1] = 1.0
        return np.stack([north, -north])
    if name == "circle":
        if count < 1:
            raise ArgumentError("Circle needs a positive direction count", count=count)
        theta = offset + 2.0 * math.pi * np.arange(count) / count
        ring = np.zeros((count, dim + 1))
        ring[:, 0], ring[:, 1] = np.cos(theta), np.sin(theta)
        return ring
    if name == "random":
        if count < 1:
            raise ArgumentError("Random directions need a positive count", count=count)
        return random_points(count, dim, np.random.default_rng(seed))
    if dim != 2:
        raise ArgumentError("Polyhedral direction sets exist on S^2 only", name=name, dim=dim)
    if name == "tetrahedron":
        verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    elif name == "octahedron":
        verts = np.concatenate([np.eye(3), -np.eye(3)])
    elif name == "cube":
        verts = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=float)
    else:
        raise ArgumentError("Unknown direction set", name=name)
    return normalize(verts)
