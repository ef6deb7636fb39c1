"""Many-server (Halfin-Whitt) scaling and diffusion-level diagnostics.

The ``r``-th system multiplies arrival rates by ``r``, staffs
``round(r N_j + sqrt(r) n_j)`` chargers and runs the policy with
``beta = r ** -exponent``.  Deviations of the virtual queues and routing
counts from their fluid centres are measured on a time grid, and the linear
map ``H`` that splits a per-type arrival deviation over the basic activities
is built by eliminating leaves of the basic activity forest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    GridOutOfRange,
    InsufficientHorizon,
    NonPositivePool,
    NotAForest,
    NotApplicable,
    NumericalFailure,
    ZeroRateEdge,
)
from .network import ValidatedSpec
from .planner import BasicActivityGraph, LpSolution, extract_basic_activities

DEFAULT_EXPONENT = 0.75


@dataclass(frozen=True)
class ScalingSchedule:
    """Scale ``r``, base pools and square-root staffing slack."""

    r: float
    pool_sizes: tuple
    slack: tuple = ()
    exponent: float = DEFAULT_EXPONENT

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("scale r must be positive")
        if not 0.5 < self.exponent < 1.0:
            raise ValueError("beta exponent must lie strictly between 1/2 and 1")
        if self.slack and len(self.slack) != len(self.pool_sizes):
            raise DimensionMismatch("one staffing slack per charger type")

    @property
    def beta(self) -> float:
        return float(self.r) ** (-self.exponent)

    def scaled_pools(self) -> np.ndarray:
        n = np.asarray(self.pool_sizes, dtype=float)
        s = np.asarray(self.slack, dtype=float) if self.slack else np.zeros_like(n)
        # round half up, so the result does not depend on banker's rounding
        pools = np.floor(self.r * n + math.sqrt(self.r) * s + 0.5).astype(np.int64)
        if np.any(pools < 1):
            raise NonPositivePool(f"scaled pool sizes {pools.tolist()} at r={self.r}")
        return pools


def make_scaled_system(spec: ValidatedSpec, schedule: ScalingSchedule) -> ValidatedSpec:
    """The ``r``-th system: arrival rates times ``r``, square-root staffed pools.

    Service rates are unchanged; run the policy with ``schedule.beta``.
    """
    if len(schedule.pool_sizes) != spec.charger_types:
        raise DimensionMismatch("schedule and spec disagree on the number of charger types")
    pools = schedule.scaled_pools()
    scaled = spec.with_arrival_rates(tuple(float(schedule.r) * spec.arrival_rates))
    return scaled.with_pool_sizes(tuple(int(n) for n in pools))


# --------------------------------------------------------------------------
# H map

@dataclass(frozen=True)
class HMap:
    """Linear map from per-type deviations ``v`` to per-activity deviations ``w``.

    ``coefficients[k]`` is the row giving ``w`` on ``edges[k]`` as a linear
    function of ``v``.
    """

    graph: BasicActivityGraph
    service_rates: np.ndarray
    edges: tuple
    coefficients: np.ndarray

    @property
    def n_ev(self) -> int:
        return self.graph.n_ev

    def as_matrix(self) -> np.ndarray:
        """Dense ``I x J x I`` tensor, zero off the basic activities."""
        out = np.zeros((self.graph.n_ev, self.graph.n_ch, self.graph.n_ev))
        for k, (i, j) in enumerate(self.edges):
            out[i, j] = self.coefficients[k]
        return out


def build_h_map(graph: BasicActivityGraph, service_rates) -> HMap:
    """Solve the row-sum and balance equations on a forest by leaf elimination.

    On a tree, the balance conditions say that each charger's work deviation
    ``D_j = sum_i w_ij / mu_ij`` equals ``mu_ij * theta_i`` for every basic
    ``(i, j)``.  Fixing one scalar per component fixes every ``theta`` and
    ``D``.  Peeling leaves then expresses each edge as an affine function of
    ``(v, scalar)``, and the last vertex's equation pins the scalar down.
    """
    if not graph.is_forest:
        raise NotAForest(f"basic activity graph {graph.edge_list()} contains a cycle")
    mu = np.asarray(service_rates, dtype=float)
    if mu.shape != (graph.n_ev, graph.n_ch):
        raise DimensionMismatch(f"service rates must be {graph.n_ev}x{graph.n_ch}")
    for i, j in graph.edges:
        if not mu[i, j] > 0:
            raise ZeroRateEdge(f"basic activity ({i + 1},{j + 1}) has zero service rate")

    edges = tuple(sorted(graph.edges))
    index = {e: k for k, e in enumerate(edges)}
    coef = np.zeros((len(edges), graph.n_ev))
    for evs, chs in graph.components:
        comp_edges = [e for e in edges if e[0] in evs]
        if comp_edges:
            _eliminate_component(evs, chs, comp_edges, mu, graph.n_ev, index, coef)
    return HMap(graph, mu, edges, coef)


def _component_potentials(evs, chs, comp_edges, mu):
    """``theta_i`` and ``D_j`` as multiples of one free scalar."""
    adj = {("ev", i): [] for i in evs}
    adj.update({("ch", j): [] for j in chs})
    for i, j in comp_edges:
        adj[("ev", i)].append(("ch", j))
        adj[("ch", j)].append(("ev", i))
    root = ("ev", min(evs))
    pot = {root: 1.0}
    stack = [root]
    while stack:
        node = stack.pop()
        for nb in adj[node]:
            if nb in pot:
                continue
            i, j = (node[1], nb[1]) if node[0] == "ev" else (nb[1], node[1])
            # D_j = mu_ij * theta_i along every basic edge
            pot[nb] = pot[node] * mu[i, j] if node[0] == "ev" else pot[node] / mu[i, j]
            stack.append(nb)
    return pot, adj


def _eliminate_component(evs, chs, comp_edges, mu, n_ev, index, coef):
    pot, adj = _component_potentials(evs, chs, comp_edges, mu)
    # affine forms over (v_1..v_I, s): last entry multiplies the free scalar
    resolved = {}
    degree = {node: len(nbs) for node, nbs in adj.items()}
    remaining = {node for node in adj if degree[node] > 0}

    def edge_of(a, b):
        return (a[1], b[1]) if a[0] == "ev" else (b[1], a[1])

    def residual_form(node):
        """Left side minus right side of the node's own equation over resolved edges."""
        form = np.zeros(n_ev + 1)
        if node[0] == "ev":
            i = node[1]
            form[i] -= 1.0
            for nb in adj[node]:
                e = edge_of(node, nb)
                if e in resolved:
                    form += resolved[e]
        else:
            j = node[1]
            form[-1] -= pot[node]
            for nb in adj[node]:
                e = edge_of(node, nb)
                if e in resolved:
                    form += resolved[e] / mu[e]
        return form

    while len(remaining) > 1:
        leaf = min(
            (n for n in remaining if sum(1 for nb in adj[n] if edge_of(n, nb) not in resolved) == 1),
            key=lambda n: (n[0], n[1]),
        )
        (nb,) = [x for x in adj[leaf] if edge_of(leaf, x) not in resolved]
        e = edge_of(leaf, nb)
        form = residual_form(leaf)
        # the leaf's equation must vanish: solve for its single open edge
        resolved[e] = -form if leaf[0] == "ev" else -form * mu[e]
        remaining.discard(leaf)

    (last,) = remaining
    final = residual_form(last)
    s_coef = final[-1]
    if abs(s_coef) < 1e-14:
        raise NumericalFailure("balance equations are singular on this component")
    s = -final[:-1] / s_coef  # free scalar as a linear function of v
    for e, form in resolved.items():
        coef[index[e]] = form[:-1] + form[-1] * s


def apply_h(hmap: HMap, v) -> np.ndarray:
    """``w = H(v)``, one entry per basic activity in ``hmap.edges`` order."""
    v = np.asarray(v, dtype=float)
    if v.shape != (hmap.n_ev,):
        raise DimensionMismatch(f"expected a vector of length {hmap.n_ev}, got shape {v.shape}")
    return hmap.coefficients @ v


def h_residuals(hmap: HMap, v, w) -> tuple[np.ndarray, np.ndarray]:
    """Row-sum residuals per EV type and balance residuals per adjacent edge pair."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    mu = hmap.service_rates
    rows = np.zeros(hmap.n_ev)
    work = np.zeros(hmap.graph.n_ch)
    for k, (i, j) in enumerate(hmap.edges):
        rows[i] += w[k]
        work[j] += w[k] / mu[i, j]
    touched = np.zeros(hmap.n_ev, dtype=bool)
    for i, _ in hmap.edges:
        touched[i] = True
    rows = np.where(touched, rows - v, 0.0)
    balance = []
    for i in range(hmap.n_ev):
        js = hmap.graph.stations_for(i)
        for a, b in zip(js, js[1:]):
            balance.append(work[a] / mu[i, a] - work[b] / mu[i, b])
    return rows, np.asarray(balance)


# --------------------------------------------------------------------------
# deviation processes

@dataclass
class DeviationSeries:
    r: float
    beta: float
    grid: np.ndarray
    q_hat: np.ndarray | None  # (len(grid), J)
    a_hat: np.ndarray  # (len(grid), I, J)


def _check_grid(grid, horizon):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1:
        raise GridOutOfRange("grid must be one-dimensional")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise GridOutOfRange("grid must be strictly increasing")
    if grid.size and (grid[0] < 0 or grid[-1] > horizon + 1e-12):
        raise GridOutOfRange(f"grid must lie in [0, {horizon}]")
    return grid


def compute_deviations(trace, sol: LpSolution, schedule: ScalingSchedule, grid) -> DeviationSeries:
    """Diffusion-scaled deviations of a scaled-system trace from the base fluid solution.

    ``sol`` is the LP solution of the base (``r = 1``) system; the routing
    centre in the ``r``-th system is ``r * lam*_ij * t``.
    """
    if not sol.optimal:
        raise NotApplicable("deviations need an optimal base solution")
    grid = _check_grid(grid, trace.arrival_horizon)
    r = float(schedule.r)
    scale = 1.0 / math.sqrt(r)
    counts = trace.routing_counts(grid)
    a_hat = scale * (counts - r * sol.primal_rates[None, :, :] * grid[:, None, None])
    q_hat = None
    if trace.virtual_levels is not None:
        q = trace.virtual_queue_at(grid)
        q_hat = scale * (q - sol.capacity_duals[None, :] / schedule.beta)
    return DeviationSeries(r, schedule.beta, grid, q_hat, a_hat)


def variance_linearity(ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Across-replication variance of every ``a_hat`` entry and the R^2 of a line through it.

    ``ensemble`` is a list of :class:`DeviationSeries` sharing one grid.
    Returns ``(variance (len(grid), I, J), r_squared (I, J))``; entries with
    no variation get ``nan``.
    """
    stack = np.stack([d.a_hat for d in ensemble])
    grid = ensemble[0].grid
    var = stack.var(axis=0, ddof=1)
    r2 = np.full(var.shape[1:], np.nan)
    for idx in np.ndindex(*var.shape[1:]):
        y = var[(slice(None),) + idx]
        if np.ptp(y) == 0:
            continue
        r2[idx] = np.corrcoef(grid, y)[0, 1] ** 2
    return var, r2


# --------------------------------------------------------------------------
# convergence diagnostics

@dataclass
class ConvergenceEntry:
    beta: float
    horizon: float
    dual_average: np.ndarray  # time-average of beta * Q_j over the final half
    rates: np.ndarray  # A_ij(T) / T
    tail_rates: np.ndarray  # routing rates over the final half
    dual_error: float  # max_j |dual_average - q*_j|
    rate_distance: float  # total variation between tail_rates and lam*
    growth: float  # mean beta*Q over the last quarter minus over the third quarter


@dataclass
class ConvergenceReport:
    entries: list
    monotone: bool
    overloaded: bool
    converged: bool
    notes: list = field(default_factory=list)


def total_variation(rates, target) -> float:
    """Half the L1 distance between two routing-rate matrices, normalised by total rate."""
    total = float(np.sum(target))
    if total <= 0:
        return 0.0
    return 0.5 * float(np.abs(np.asarray(rates) - np.asarray(target)).sum()) / total


def _entry(trace, sol) -> ConvergenceEntry:
    beta = float(trace.beta)
    T = trace.arrival_horizon
    if T < 10.0 / beta:
        raise InsufficientHorizon(f"horizon {T:g} is shorter than 10/beta = {10.0 / beta:g}")
    half = 0.5 * T
    dual_avg = beta * trace.virtual_time_average(half, T)
    q3 = beta * trace.virtual_time_average(half, 0.75 * T)
    q4 = beta * trace.virtual_time_average(0.75 * T, T)
    counts_end, counts_half = trace.routing_counts([T, half])
    rates = counts_end / T
    tail = (counts_end - counts_half) / (T - half)
    if sol.optimal:
        dual_err = float(np.max(np.abs(dual_avg - sol.capacity_duals)))
        tv = total_variation(tail, sol.primal_rates)
    else:
        dual_err = tv = float("nan")
    return ConvergenceEntry(beta, T, dual_avg, rates, tail, dual_err, tv, float(np.max(q4 - q3)))


def diagnose_convergence(runs, sol: LpSolution, growth_tol: float = 0.05) -> ConvergenceReport:
    """Compare GPD/LB runs over several ``beta`` against the LP optimum.

    Rates are judged over the final half of each run so the ``1/beta``
    transient is excluded.  The error must drop between the largest and
    the smallest ``beta``.  A run whose ``beta Q`` keeps rising between
    the third and last quarters is flagged as overloaded.
    """
    runs = sorted(runs, key=lambda tr: -float(tr.beta))
    if not runs:
        raise ValueError("no runs to diagnose")
    if any(tr.virtual_levels is None for tr in runs):
        raise NotApplicable("convergence needs runs of a virtual-queue policy")
    entries = [_entry(tr, sol) for tr in runs]
    notes = []
    scale = max(1.0, float(np.max(sol.capacity_duals))) if sol.optimal else 1.0
    rising = any(e.growth > growth_tol * scale for e in entries)
    overloaded = (not sol.optimal) or rising
    if not sol.optimal:
        notes.append(f"LP status {sol.status}: no finite optimum to converge to")
    if rising:
        notes.append("beta*Q still growing at the end of the horizon")
    if len(entries) >= 2 and sol.optimal:
        first, last = entries[0], entries[-1]
        monotone = last.rate_distance < first.rate_distance and last.dual_error < first.dual_error
    else:
        monotone = False
    return ConvergenceReport(entries, monotone, overloaded, monotone and not overloaded, notes)


# --------------------------------------------------------------------------
# fluid-limit conclusions as diagnostics

@dataclass
class TrackingMetrics:
    r: float
    sup_dual_error: float  # sup over the post burn-in window of max_j |beta Q_j - q*_j|
    nonbasic_fraction: float  # share of arrivals routed off the basic activities
    arrivals: int


@dataclass
class TrackingCheck:
    metrics: list
    dual_shrinks: bool
    nonbasic_shrinks: bool

    @property
    def ok(self) -> bool:
        return self.dual_shrinks and self.nonbasic_shrinks


def _sup_dual_error(trace, beta, q_star, t0):
    vt = trace.virtual_times
    lv = trace.virtual_levels
    if vt.size == 0:
        return 0.0
    # piecewise-linear paths peak or bottom out at decision instants
    post = lv[vt >= t0]
    pre_times = vt[(vt >= t0)]
    pre = trace.virtual_queue_at(np.nextafter(pre_times, -np.inf))
    ends = trace.virtual_queue_at(np.array([t0, trace.arrival_horizon]))
    pts = np.vstack([post, pre, ends])
    return float(np.max(np.abs(beta * pts - q_star[None, :])))


def tracking_metrics(trace, sol: LpSolution, schedule: ScalingSchedule, burn_in: float = 0.2) -> TrackingMetrics:
    if not sol.optimal:
        raise NotApplicable(f"fluid-limit diagnostics need a feasible instance (LP status {sol.status})")
    if trace.virtual_levels is None:
        raise NotApplicable("fluid-limit diagnostics need a virtual-queue policy")
    n = trace.n_requests
    if n == 0:
        return TrackingMetrics(float(schedule.r), 0.0, 0.0, 0)
    graph = extract_basic_activities(sol)
    basic = np.zeros((trace.n_ev, trace.n_ch), dtype=bool)
    for i, j in graph.edges:
        basic[i, j] = True
    off = ~basic[trace.ev_type, trace.station]
    t0 = burn_in * trace.arrival_horizon
    sup = _sup_dual_error(trace, schedule.beta, np.asarray(sol.capacity_duals), t0)
    return TrackingMetrics(float(schedule.r), sup, float(off.mean()), n)


def tracking_check(runs, sol: LpSolution, burn_in: float = 0.2) -> TrackingCheck:
    """Both fluid-limit conclusions along increasing ``r``.

    ``runs`` is a sequence of ``(schedule, trace)`` pairs.  Each quantity must
    be no larger at the largest ``r`` than at the smallest; runs without
    arrivals pass vacuously.
    """
    if not sol.optimal:
        raise NotApplicable(f"fluid-limit diagnostics need a feasible instance (LP status {sol.status})")
    metrics = sorted((tracking_metrics(tr, sol, sch, burn_in) for sch, tr in runs), key=lambda m: m.r)
    if len(metrics) < 2 or all(m.arrivals == 0 for m in metrics):
        return TrackingCheck(metrics, True, True)
    lo, hi = metrics[0], metrics[-1]
    return TrackingCheck(
        metrics,
        hi.sup_dual_error <= lo.sup_dual_error,
        hi.nonbasic_fraction <= lo.nonbasic_fraction,
    )
