"""Exact discrete Kantorovich solver with dual certificates."""

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, csr_matrix

from .base import CostKernel
from .config import settings
from .errors import ArgumentError, ConvergenceError, InfeasibleError, NoFinitePlanError
from .sphere import DiscreteMeasure, half_sq_dist

logger = structlog.get_logger()

Backend = Literal["auto", "network_simplex", "highs"]

# Flows at or below this are rounding residue of the tree recomputation.
_MASS_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling of ``source`` and ``target`` stored as (row, col, mass) triples."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        if not (rows.size == cols.size == mass.size):
            raise ArgumentError("Plan arrays differ in length")
        n, m = len(self.source), len(self.target)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
            raise ArgumentError("Plan index out of range", sources=n, targets=m)
        if np.any(mass <= 0) or not np.all(np.isfinite(mass)):
            raise ArgumentError("Plan masses must be finite and positive")
        if np.any(half_sq_dist(self.source.points[rows], self.target.points[cols]) == 0):
            raise ArgumentError("Plan charges the diagonal")
        row_err, col_err = _marginal_errors(rows, cols, mass, self.source.weights, self.target.weights)
        if max(row_err, col_err) > settings.feasibility_tol:
            raise InfeasibleError("Plan marginals do not match the measures", row_error=row_err, col_error=col_err)
        for name, value in (("rows", rows), ("cols", cols), ("mass", mass)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_pairs(cls, source: DiscreteMeasure, target: DiscreteMeasure,
                   pairs: Sequence[Sequence[float]]) -> "TransportPlan":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 3)
        return cls(source, target, arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])

    @classmethod
    def from_dense(cls, source: DiscreteMeasure, target: DiscreteMeasure, gamma: np.ndarray,
                   floor: float = _MASS_FLOOR) -> "TransportPlan":
        rows, cols = np.nonzero(gamma > floor)
        return cls(source, target, rows, cols, gamma[rows, cols])

    def __len__(self) -> int:
        return self.mass.size

    @property
    def pairs(self) -> List[Tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.mass)]

    def dense(self) -> np.ndarray:
        gamma = np.zeros((len(self.source), len(self.target)))
        np.add.at(gamma, (self.rows, self.cols), self.mass)
        return gamma

    def support_points(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.source.points[self.rows], self.target.points[self.cols]

    def cost(self, kernel: CostKernel) -> float:
        X, Y = self.support_points()
        return float(np.dot(self.mass, kernel.costs(X, Y)))

    def min_separation(self) -> float:
        """Smallest chord |x - y| over the support."""
        X, Y = self.support_points()
        return float(np.min(np.linalg.norm(X - Y, axis=1))) if len(self) else float("inf")

    def marginal_error(self) -> float:
        return max(_marginal_errors(self.rows, self.cols, self.mass, self.source.weights, self.target.weights))

    def as_map(self) -> Optional[np.ndarray]:
        """Target index per source when every source atom goes to a single target."""
        counts = np.bincount(self.rows, minlength=len(self.source))
        if np.any(counts != 1):
            return None
        out = np.empty(len(self.source), dtype=np.int64)
        out[self.rows] = self.cols
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {"pairs": [[i, j, w] for i, j, w in self.pairs]}


def _marginal_errors(rows, cols, mass, a, b) -> Tuple[float, float]:
    row_sums = np.bincount(rows, weights=mass, minlength=a.size)
    col_sums = np.bincount(cols, weights=mass, minlength=b.size)
    return float(np.max(np.abs(row_sums - a), initial=0.0)), float(np.max(np.abs(col_sums - b), initial=0.0))


@dataclass(frozen=True, eq=False)
class DualPotentials:
    u: np.ndarray
    v: np.ndarray

    def value(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(np.dot(self.u, mu.weights) + np.dot(self.v, nu.weights))

    def certificate(self, kernel: CostKernel, plan: TransportPlan) -> Dict[str, float]:
        """Largest dual infeasibility and largest complementary-slackness gap."""
        C = kernel.cost_matrix(plan.source.points, plan.target.points)
        with np.errstate(invalid="ignore"):
            excess = self.u[:, None] + self.v[None, :] - C
        finite = np.isfinite(C)
        slack = np.abs(excess[plan.rows, plan.cols])
        return {
            "max_violation": float(np.max(excess[finite], initial=-np.inf)),
            "max_slack": float(np.max(slack, initial=0.0)),
            "duality_gap": abs(self.value(plan.source, plan.target) - plan.cost(kernel)),
        }


@dataclass(frozen=True, eq=False)
class KantorovichSolution:
    plan: TransportPlan
    duals: DualPotentials
    total_cost: float
    backend: str
    pivots: int = 0

    def __iter__(self) -> Iterator[Any]:
        return iter((self.plan, self.duals, self.total_cost))


class _Forest:
    """Breadth-first structure of a spanning forest on the bipartite node set.

    Sources are nodes 0..n-1 and targets n..n+m-1; ``arcs`` lists (i, j).
    """

    def __init__(self, n: int, m: int, arcs: Sequence[Tuple[int, int]]):
        self.n, self.m = n, m
        self.n_arcs = len(arcs)
        size = n + m
        adj: List[List[Tuple[int, int]]] = [[] for _ in range(size)]
        for k, (i, j) in enumerate(arcs):
            adj[i].append((n + j, k))
            adj[n + j].append((i, k))
        self.parent = np.full(size, -1, dtype=np.int64)
        self.parent_arc = np.full(size, -1, dtype=np.int64)
        self.depth = np.zeros(size, dtype=np.int64)
        self.order: List[int] = []
        seen = np.zeros(size, dtype=bool)
        components = 0
        for root in range(size):
            if seen[root]:
                continue
            components += 1
            seen[root] = True
            queue = deque([root])
            while queue:
                node = queue.popleft()
                self.order.append(node)
                for nb, k in adj[node]:
                    if not seen[nb]:
                        seen[nb] = True
                        self.parent[nb] = node
                        self.parent_arc[nb] = k
                        self.depth[nb] = self.depth[node] + 1
                        queue.append(nb)
        self.components = components
        self.acyclic = len(arcs) == size - components

    def potentials(self, arc_cost: np.ndarray) -> np.ndarray:
        """Node values with pot[i] + pot[n + j] = cost on every arc, zero at roots."""
        pot = np.zeros(self.n + self.m)
        for node in self.order:
            p = self.parent[node]
            if p >= 0:
                pot[node] = arc_cost[self.parent_arc[node]] - pot[p]
        return pot

    def flows(self, supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
        """Exact arc flows meeting the node balances, by peeling leaves."""
        net = np.concatenate([supply, -demand]).astype(float)
        flow = np.zeros(self.n_arcs)
        for node in reversed(self.order):
            p = self.parent[node]
            if p < 0:
                continue
            k = self.parent_arc[node]
            flow[k] = net[node] if node < self.n else -net[node]
            net[p] += net[node]
        return flow

    def cycle(self, i: int, j: int) -> List[int]:
        """Tree arcs on the path from target j back to source i, nearest j first."""
        a, b = i, self.n + j
        up_a: List[int] = []
        up_b: List[int] = []
        while self.depth[a] > self.depth[b]:
            up_a.append(int(self.parent_arc[a]))
            a = self.parent[a]
        while self.depth[b] > self.depth[a]:
            up_b.append(int(self.parent_arc[b]))
            b = self.parent[b]
        while a != b:
            up_a.append(int(self.parent_arc[a]))
            a = self.parent[a]
            up_b.append(int(self.parent_arc[b]))
            b = self.parent[b]
        return up_b + up_a[::-1]


def _northwest_corner(a: np.ndarray, b: np.ndarray) -> List[Tuple[int, int]]:
    """Staircase basis with exactly n + m - 1 arcs."""
    n, m = a.size, b.size
    supply, demand = a.astype(float).copy(), b.astype(float).copy()
    arcs: List[Tuple[int, int]] = []
    i = j = 0
    while True:
        arcs.append((i, j))
        f = min(supply[i], demand[j])
        supply[i] -= f
        demand[j] -= f
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (supply[i] <= 0 and i < n - 1):
            i += 1
        else:
            j += 1
    return arcs


class NetworkSimplex:
    """Transportation simplex on a dense cost matrix with forbidden arcs.

    Forbidden (infinite-cost) arcs are priced lexicographically: the
    primary objective is the flow they carry, the secondary the real cost.
    A positive primary optimum means every coupling needs the diagonal.
    """

    def __init__(self, cost: np.ndarray, supply: np.ndarray, demand: np.ndarray):
        self.n, self.m = cost.shape
        self.forbidden = ~np.isfinite(cost)
        self.primary = self.forbidden.astype(float)
        self.secondary = np.where(self.forbidden, 0.0, cost)
        self.supply = supply
        self.demand = demand
        self.tol = 1e-12 * (1.0 + float(np.max(np.abs(self.secondary), initial=0.0)))
        self.pivots = 0
        self.log = logger.bind(component="network_simplex", sources=self.n, targets=self.m)

    def _entering(self, forest: _Forest, arcs, bland: bool) -> Optional[Tuple[int, int]]:
        arc_idx = np.asarray(arcs, dtype=np.int64)
        p1 = forest.potentials(self.primary[arc_idx[:, 0], arc_idx[:, 1]])
        p2 = forest.potentials(self.secondary[arc_idx[:, 0], arc_idx[:, 1]])
        r1 = self.primary - p1[:self.n, None] - p1[None, self.n:]
        r2 = self.secondary - p2[:self.n, None] - p2[None, self.n:]
        phase_one = r1 < -0.5
        if np.any(phase_one):
            candidates, score = phase_one, r1
        else:
            candidates, score = (np.abs(r1) < 0.5) & (r2 < -self.tol), r2
        if not np.any(candidates):
            return None
        if bland:
            flat = int(np.flatnonzero(candidates.ravel())[0])
        else:
            flat = int(np.argmin(np.where(candidates, score, np.inf)))
        return divmod(flat, self.m)

    def solve(self) -> Tuple[List[Tuple[int, int]], np.ndarray]:
        arcs = _northwest_corner(self.supply, self.demand)
        degenerate_run = 0
        while True:
            forest = _Forest(self.n, self.m, arcs)
            flow = np.clip(forest.flows(self.supply, self.demand), 0.0, None)
            entering = self._entering(forest, arcs, bland=degenerate_run >= settings.bland_after)
            if entering is None:
                self.log.debug("Simplex reached optimality", pivots=self.pivots)
                return arcs, flow
            if self.pivots >= settings.max_pivots:
                raise ConvergenceError("Network simplex exceeded its pivot budget", pivots=self.pivots)
            i, j = entering
            path = forest.cycle(i, j)
            minus = path[0::2]
            theta = min(flow[k] for k in minus)
            ties = [k for k in minus if flow[k] <= theta + _MASS_FLOOR]
            leaving = min(ties, key=lambda k: arcs[k][0] * self.m + arcs[k][1])
            arcs[leaving] = (i, j)
            self.pivots += 1
            degenerate_run = degenerate_run + 1 if theta <= _MASS_FLOOR else 0


def _bellman_ford_duals(cost: np.ndarray, gamma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Duals tight on the support and feasible on every finite arc.

    Shortest distances on the residual graph: forward arcs i -> j with
    weight c_ij, backward arcs j -> i with weight -c_ij where flow is
    positive. u = -d_source, v = d_target.
    """
    n, m = cost.shape
    forward = np.where(np.isfinite(cost), cost, np.inf)
    backward = np.where(gamma > 0, -cost, np.inf)
    d_src = np.zeros(n)
    d_tgt = np.zeros(m)
    scale = 1.0 + float(np.max(np.abs(cost[np.isfinite(cost)]), initial=0.0))
    eps = 1e-13 * scale
    for _ in range(n + m + 1):
        cand_tgt = np.min(d_src[:, None] + forward, axis=0)
        cand_src = np.min(d_tgt[None, :] + backward, axis=1)
        improve_tgt = cand_tgt < d_tgt - eps
        improve_src = cand_src < d_src - eps
        if not (np.any(improve_tgt) or np.any(improve_src)):
            return -d_src, d_tgt
        d_tgt = np.where(improve_tgt, cand_tgt, d_tgt)
        d_src = np.where(improve_src, cand_src, d_src)
    raise ConvergenceError("Residual graph has a negative cycle; the plan is not optimal")


def _fill_inactive_duals(cost: np.ndarray, u: np.ndarray, v: np.ndarray,
                         src_active: np.ndarray, tgt_active: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Feasible duals for zero-mass atoms by c-transform against the active side."""
    u_full = np.zeros(src_active.size)
    v_full = np.zeros(tgt_active.size)
    u_full[src_active] = u
    v_full[tgt_active] = v
    if not np.all(tgt_active):
        sub = cost[np.ix_(src_active, ~tgt_active)] - u[:, None]
        v_full[~tgt_active] = np.min(sub, axis=0)
    if not np.all(src_active):
        sub = cost[~src_active][:, :] - v_full[None, :]
        u_full[~src_active] = np.min(sub, axis=1)
    return u_full, v_full


def _solve_highs(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    rows, cols = np.nonzero(np.isfinite(cost))
    k = rows.size
    if k == 0:
        raise NoFinitePlanError("Every arc lies on the diagonal")
    data = np.ones(2 * k)
    A = coo_matrix((data, (np.concatenate([rows, n + cols]), np.concatenate([np.arange(k), np.arange(k)]))),
                   shape=(n + m, k))
    res = linprog(cost[rows, cols], A_eq=csr_matrix(A), b_eq=np.concatenate([supply, demand]),
                  bounds=(0, None), method="highs-ds")
    if res.status == 2:
        raise NoFinitePlanError("No coupling avoids the diagonal")
    if res.status != 0:
        raise ConvergenceError("HiGHS did not solve the transport LP", status=int(res.status), message=res.message)
    x = np.clip(res.x, 0.0, None)
    keep = x > _MASS_FLOOR
    arcs = list(zip(rows[keep].tolist(), cols[keep].tolist()))
    forest = _Forest(n, m, arcs)
    if forest.acyclic:
        x_kept = np.clip(forest.flows(supply, demand), 0.0, None)
    else:
        x_kept = x[keep]
    gamma = np.zeros((n, m))
    gamma[rows[keep], cols[keep]] = x_kept
    return gamma


MAX_DECIMALS = 12


def _decimal_scale(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Smallest 10^k (k <= 12) turning every mass into a balanced integer count, if any.

    Integer masses keep the basis-forest flows exact sums of integers.
    """
    for k in range(MAX_DECIMALS + 1):
        scale = 10.0 ** k
        sa, sb = a * scale, b * scale
        ia, ib = np.round(sa), np.round(sb)
        if np.max(np.abs(sa - ia)) > 1e-3 or np.max(np.abs(sb - ib)) > 1e-3:
            continue
        if ia.sum() != ib.sum() or max(ia.sum(), ib.sum()) >= 2.0 ** 53:
            return None
        return scale
    return None


def solve_kantorovich(kernel: CostKernel, mu: DiscreteMeasure, nu: DiscreteMeasure,
                      backend: Backend = "auto") -> KantorovichSolution:
    """Optimal coupling of mu and nu for c, with duals certifying optimality.

    Costs are shifted to be nonnegative internally; the reported cost and
    duals are for the unshifted c.
    """
    if mu.dim != nu.dim:
        raise ArgumentError("Measures live on spheres of different dimension", source=mu.dim, target=nu.dim)
    imbalance = abs(mu.total_mass - nu.total_mass)
    if imbalance > settings.feasibility_tol:
        raise InfeasibleError("Source and target masses differ", imbalance=imbalance)

    C = kernel.cost_matrix(mu.points, nu.points)
    shift = kernel.shift()
    src_active = mu.weights > 0
    tgt_active = nu.weights > 0
    C_act = C[np.ix_(src_active, tgt_active)] + shift
    a, b = mu.weights[src_active], nu.weights[tgt_active]

    if backend == "auto":
        backend = "highs" if C_act.size > settings.simplex_arc_limit else "network_simplex"
    pivots = 0
    if backend == "network_simplex":
        scale = _decimal_scale(a, b)
        if scale is None:
            simplex = NetworkSimplex(C_act, a, b)
            arcs, flow = simplex.solve()
        else:
            simplex = NetworkSimplex(C_act, np.round(a * scale), np.round(b * scale))
            arcs, flow = simplex.solve()
            flow = flow / scale
        pivots = simplex.pivots
        arc_idx = np.asarray(arcs, dtype=np.int64)
        blocked = simplex.forbidden[arc_idx[:, 0], arc_idx[:, 1]] & (flow > settings.feasibility_tol)
        if np.any(blocked):
            raise NoFinitePlanError("Every coupling charges the diagonal", forbidden_mass=float(flow[blocked].sum()))
        gamma = np.zeros_like(C_act)
        usable = (flow > _MASS_FLOOR) & ~simplex.forbidden[arc_idx[:, 0], arc_idx[:, 1]]
        np.add.at(gamma, (arc_idx[usable, 0], arc_idx[usable, 1]), flow[usable])
    elif backend == "highs":
        gamma = _solve_highs(C_act, a, b)
    else:
        raise ArgumentError("Unknown solver backend", backend=backend)

    u, v = _bellman_ford_duals(C_act, gamma)
    u, v = _fill_inactive_duals(C + shift, u, v, src_active, tgt_active)
    duals = DualPotentials(u=u - shift, v=v)

    full = np.zeros(C.shape)
    full[np.ix_(src_active, tgt_active)] = gamma
    plan = TransportPlan.from_dense(mu, nu, full)
    total_cost = plan.cost(kernel)
    cert = duals.certificate(kernel, plan)
    if cert["max_violation"] > settings.optimality_tol or cert["max_slack"] > settings.optimality_tol:
        logger.warning("Dual certificate outside tolerance", **cert)
    logger.info("Solved transport problem", backend=backend, kernel=kernel.name, sources=len(mu),
                targets=len(nu), pivots=pivots, cost=total_cost, support=len(plan))
    return KantorovichSolution(plan=plan, duals=duals, total_cost=total_cost, backend=backend, pivots=pivots)


def centered_duals(kernel: CostKernel, plan: TransportPlan) -> DualPotentials:
    """Optimal duals maximising the smallest slack off the plan's support.

    Equality u_i + v_j = c_ij on the support keeps the pair optimal; the
    common slack t >= 0 is pushed up on every other finite arc, which
    separates atoms that a vertex dual solution would leave tied.
    """
    mu, nu = plan.source, plan.target
    C = kernel.cost_matrix(mu.points, nu.points) + kernel.shift()
    n, m = C.shape
    on_support = np.zeros((n, m), dtype=bool)
    on_support[plan.rows, plan.cols] = True
    finite = np.isfinite(C)
    cap = 1.0 + float(np.ptp(C[finite])) if np.any(finite) else 1.0
    # variables: u (n), v (m), t
    s_rows, s_cols = np.nonzero(on_support)
    o_rows, o_cols = np.nonzero(finite & ~on_support)
    ks, ko = s_rows.size, o_rows.size
    A_eq = coo_matrix((np.ones(2 * ks), (np.repeat(np.arange(ks), 2),
                                         np.column_stack([s_rows, n + s_cols]).ravel())), shape=(ks + 1, n + m + 1))
    A_eq = A_eq.tolil()
    A_eq[ks, 0] = 1.0
    b_eq = np.concatenate([C[s_rows, s_cols], [0.0]])
    A_ub = coo_matrix((np.ones(3 * ko), (np.repeat(np.arange(ko), 3),
                                         np.column_stack([o_rows, n + o_cols, np.full(ko, n + m)]).ravel())),
                      shape=(ko, n + m + 1))
    objective = np.zeros(n + m + 1)
    objective[-1] = -1.0
    bounds = [(None, None)] * (n + m) + [(0.0, cap)]
    res = linprog(objective, A_ub=csr_matrix(A_ub) if ko else None, b_ub=C[o_rows, o_cols] if ko else None,
                  A_eq=csr_matrix(A_eq), b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError("Could not center the dual solution", status=int(res.status), message=res.message)
    u, v = res.x[:n], res.x[n:n + m]
    logger.debug("Centered dual solution", min_slack=float(res.x[-1]))
    return DualPotentials(u=u - kernel.shift(), v=v)


def monge_cost(kernel: CostKernel, T: Sequence[int], mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """I[T] = sum_i mu_i c(x_i, y_T(i)) for a map given as target index per source."""
    T = np.asarray(T, dtype=np.int64).reshape(-1)
    if T.size != len(mu) or T.min(initial=0) < 0 or T.max(initial=0) >= len(nu):
        raise ArgumentError("Map must give one valid target index per source atom")
    pushed = np.bincount(T, weights=mu.weights, minlength=len(nu))
    deviation = float(np.max(np.abs(pushed - nu.weights)))
    if deviation > settings.feasibility_tol:
        raise InfeasibleError("Map does not push the source onto the target", deviation=deviation)
    return float(np.dot(mu.weights, kernel.costs(mu.points, nu.points[T])))


def brute_force_kantorovich(kernel: CostKernel, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Oracle optimum: permutation enumeration for uniform square instances, dense LP otherwise."""
    n, m = len(mu), len(nu)
    C = kernel.cost_matrix(mu.points, nu.points)
    uniform = n == m and np.allclose(mu.weights, mu.weights[0], rtol=0, atol=1e-15) \
        and np.allclose(nu.weights, nu.weights[0], rtol=0, atol=1e-15)
    if uniform and n <= 9:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        totals = C[np.arange(n)[None, :], perms].sum(axis=1)
        best = float(np.min(totals))
        if not np.isfinite(best):
            raise NoFinitePlanError("Every permutation charges the diagonal")
        return best * float(mu.weights[0])
    gamma = _solve_highs(C + kernel.shift(), mu.weights, nu.weights)
    return float(np.sum(gamma[gamma > 0] * C[gamma > 0]))
