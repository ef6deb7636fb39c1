"""Routing linear programs: minimum-cost stability LP and its load-balancing variant.

Both programs route ``arrival_rates[i]`` over the usable activities ``(i, j)``
subject to ``sum_i lam_ij / mu_ij <= N_j``.  The load-balancing program adds
one max-load variable per station cluster, penalised by the cluster weight.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import CyclicBasicGraph, NumericalFailure
from .network import ValidatedSpec
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp

EPS_BASIC_REL = 1e-7
SLACK_TOL = 1e-9


@dataclass
class LpSolution:
    status: str
    primal_rates: np.ndarray | None
    objective: float
    capacity_duals: np.ndarray | None = None
    routing_duals: np.ndarray | None = None
    load_duals: list | None = None
    loads: np.ndarray | None = None
    rho_star: np.ndarray | None = None
    dual_objective: float | None = None
    clusters: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def duality_gap(self) -> float:
        if not self.optimal:
            return float("nan")
        return abs(self.objective - self.dual_objective)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "status": self.status,
            "objective": "inf" if not np.isfinite(self.objective) else self.objective,
            "dual_objective": self.dual_objective,
            "primal_rates": arr(self.primal_rates),
            "capacity_duals": arr(self.capacity_duals),
            "routing_duals": arr(self.routing_duals),
            "loads": arr(self.loads),
            "clusters": [[j + 1 for j in c] for c in self.clusters],
            "weights": list(self.weights),
            "rho_star": arr(self.rho_star),
            "load_duals": None if self.load_duals is None else [arr(d) for d in self.load_duals],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LpSolution":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)

        obj = d["objective"]
        return cls(
            status=d["status"],
            primal_rates=arr(d["primal_rates"]),
            objective=float("inf") if obj == "inf" else float(obj),
            capacity_duals=arr(d["capacity_duals"]),
            routing_duals=arr(d["routing_duals"]),
            load_duals=None if d["load_duals"] is None else [arr(x) for x in d["load_duals"]],
            loads=arr(d["loads"]),
            rho_star=arr(d["rho_star"]),
            dual_objective=d["dual_objective"],
            clusters=[[j - 1 for j in c] for c in d["clusters"]],
            weights=list(d["weights"]),
        )


def _activity_index(spec: ValidatedSpec):
    return spec.usable_activities


def _base_rows(spec: ValidatedSpec, acts):
    n_ev, n_ch = spec.ev_types, spec.charger_types
    mu = spec.service_rates
    A_eq = np.zeros((n_ev, len(acts)))
    A_cap = np.zeros((n_ch, len(acts)))
    for k, (i, j) in enumerate(acts):
        A_eq[i, k] = 1.0
        A_cap[j, k] = 1.0 / mu[i, j]
    return A_eq, A_cap


def _loads(spec, rates):
    mu = spec.service_rates
    work = np.zeros(spec.charger_types)
    for i, j in spec.usable_activities:
        work[j] += rates[i, j] / mu[i, j]
    return work / spec.pool_sizes


def _unpack(spec, acts, x):
    rates = np.zeros((spec.ev_types, spec.charger_types))
    for k, (i, j) in enumerate(acts):
        rates[i, j] = x[k]
    return rates


def solve_stability_lp(spec: ValidatedSpec) -> LpSolution:
    """Minimum-cost routing rates subject to the pool capacities."""
    return _stability(spec)


def _stability(spec, cost=None, arrival_rates=None):
    acts = _activity_index(spec)
    A_eq, A_cap = _base_rows(spec, acts)
    c = np.array([spec.cost_matrix[i, j] for i, j in acts]) if cost is None else cost
    lam = spec.arrival_rates if arrival_rates is None else arrival_rates
    res = solve_lp(c, A_ub=A_cap, b_ub=spec.pool_sizes.astype(float), A_eq=A_eq, b_eq=lam)
    if res.status == INFEASIBLE:
        return LpSolution(INFEASIBLE, None, float("inf"))
    if res.status == UNBOUNDED:
        raise NumericalFailure("stability LP reported unbounded with nonnegative costs")
    rates = _unpack(spec, acts, res.x)
    return LpSolution(
        status=OPTIMAL,
        primal_rates=rates,
        objective=res.objective,
        capacity_duals=np.maximum(-res.y_ub, 0.0),
        routing_duals=res.y_eq,
        loads=_loads(spec, rates),
        dual_objective=res.dual_objective,
    )


def solve_lb_lp(spec: ValidatedSpec, clusters, weights) -> LpSolution:
    """Load-balancing LP: cost plus ``sum_l W_l * rho_l``, with ``rho_l`` bounding every load in cluster ``l``.

    ``clusters`` are iterables of 0-based station indices.
    """
    clusters = [sorted(set(int(j) for j in c)) for c in clusters]
    weights = [float(w) for w in weights]
    if len(clusters) != len(weights):
        raise ValueError("one weight per cluster is required")
    if any(w < 0 for w in weights):
        raise ValueError("cluster weights must be nonnegative")
    for c in clusters:
        if any(not 0 <= j < spec.charger_types for j in c):
            raise ValueError(f"cluster {c} names an unknown station")

    acts = _activity_index(spec)
    n_act, n_cl = len(acts), len(clusters)
    A_eq, A_cap = _base_rows(spec, acts)
    A_eq = np.hstack([A_eq, np.zeros((spec.ev_types, n_cl))])
    A_cap = np.hstack([A_cap, np.zeros((spec.charger_types, n_cl))])
    load_rows, row_keys = [], []
    for l, members in enumerate(clusters):
        for j in members:
            row = np.zeros(n_act + n_cl)
            row[:n_act] = A_cap[j, :n_act] / spec.pool_sizes[j]
            row[n_act + l] = -1.0
            load_rows.append(row)
            row_keys.append((l, j))
    A_ub = np.vstack([A_cap] + load_rows) if load_rows else A_cap
    b_ub = np.concatenate([spec.pool_sizes.astype(float), np.zeros(len(load_rows))])
    c = np.concatenate([[spec.cost_matrix[i, j] for i, j in acts], weights])

    res = solve_lp(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=spec.arrival_rates)
    if res.status == INFEASIBLE:
        return LpSolution(INFEASIBLE, None, float("inf"), clusters=clusters, weights=weights)
    if res.status == UNBOUNDED:
        raise NumericalFailure("load-balancing LP reported unbounded with nonnegative weights")
    rates = _unpack(spec, acts, res.x[:n_act])
    loads = _loads(spec, rates)
    y_load = np.maximum(-res.y_ub[spec.charger_types:], 0.0)
    load_duals = [np.array([y_load[k] for k, (l2, _) in enumerate(row_keys) if l2 == l]) for l in range(n_cl)]
    rho_star = np.array([loads[m].max() if m else 0.0 for m in clusters])
    return LpSolution(
        status=OPTIMAL,
        primal_rates=rates,
        objective=res.objective,
        capacity_duals=np.maximum(-res.y_ub[: spec.charger_types], 0.0),
        routing_duals=res.y_eq,
        load_duals=load_duals,
        loads=loads,
        rho_star=rho_star,
        dual_objective=res.dual_objective,
        clusters=clusters,
        weights=weights,
    )


# --------------------------------------------------------------------------
# basic activities

@dataclass(frozen=True)
class BasicActivityGraph:
    """Bipartite graph of the activities carrying positive optimal rate.

    ``components`` is a list of ``(ev_types, charger_types)`` frozenset pairs
    covering every vertex, isolated ones included.
    """

    n_ev: int
    n_ch: int
    edges: frozenset
    components: tuple
    is_forest: bool

    def stations_for(self, i: int) -> list[int]:
        return sorted(j for (i2, j) in self.edges if i2 == i)

    def edge_list(self) -> list[tuple[int, int]]:
        """Edges with 1-based indices, sorted."""
        return sorted((i + 1, j + 1) for i, j in self.edges)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(("ev", i) for i in range(self.n_ev))
        g.add_nodes_from(("ch", j) for j in range(self.n_ch))
        g.add_edges_from((("ev", i), ("ch", j)) for i, j in self.edges)
        return g

    @classmethod
    def from_edges(cls, n_ev: int, n_ch: int, edges) -> "BasicActivityGraph":
        edges = frozenset((int(i), int(j)) for i, j in edges)
        g = nx.Graph()
        g.add_nodes_from(("ev", i) for i in range(n_ev))
        g.add_nodes_from(("ch", j) for j in range(n_ch))
        g.add_edges_from((("ev", i), ("ch", j)) for i, j in edges)
        comps = []
        for nodes in sorted(nx.connected_components(g), key=lambda s: min(s)):
            comps.append((
                frozenset(k for kind, k in nodes if kind == "ev"),
                frozenset(k for kind, k in nodes if kind == "ch"),
            ))
        return cls(n_ev, n_ch, edges, tuple(comps), nx.is_forest(g))


def basic_threshold(sol: LpSolution) -> float:
    lam = sol.primal_rates.sum(axis=1)
    return EPS_BASIC_REL * max(float(lam.max(initial=0.0)), 0.0)


def extract_basic_activities(sol: LpSolution, eps_basic: float | None = None) -> BasicActivityGraph:
    if not sol.optimal:
        raise ValueError("basic activities are defined only for an optimal solution")
    eps = basic_threshold(sol) if eps_basic is None else eps_basic
    n_ev, n_ch = sol.primal_rates.shape
    edges = [(int(i), int(j)) for i, j in np.argwhere(sol.primal_rates > eps)]
    graph = BasicActivityGraph.from_edges(n_ev, n_ch, edges)
    if not graph.is_forest:
        warnings.warn(
            f"basic activity graph has a cycle (edges {graph.edge_list()})",
            CyclicBasicGraph,
            stacklevel=2,
        )
    return graph


# --------------------------------------------------------------------------
# feasible region and uniqueness

@dataclass
class FeasibleRegionReport:
    in_lambda: bool
    slack: np.ndarray | None
    max_min_slack: float
    solution: LpSolution


def feasible_region_membership(spec: ValidatedSpec, slack_tol: float = SLACK_TOL) -> FeasibleRegionReport:
    """Is the arrival vector in the stability region?

    Among all cost-optimal routings, find the one maximising the smallest
    capacity slack; membership requires that slack to be strictly positive.
    """
    sol = solve_stability_lp(spec)
    if not sol.optimal:
        return FeasibleRegionReport(False, None, float("-inf"), sol)

    acts = _activity_index(spec)
    n_act = len(acts)
    A_eq, A_cap = _base_rows(spec, acts)
    cost = np.array([spec.cost_matrix[i, j] for i, j in acts])
    A_eq = np.hstack([A_eq, np.zeros((spec.ev_types, 1))])
    A_ub = np.vstack([
        np.hstack([A_cap, np.ones((spec.charger_types, 1))]),
        np.concatenate([cost, [0.0]])[None, :],
    ])
    budget = sol.objective + 1e-10 * (1.0 + abs(sol.objective))
    b_ub = np.concatenate([spec.pool_sizes.astype(float), [budget]])
    c = np.zeros(n_act + 1)
    c[-1] = -1.0
    res = solve_lp(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=spec.arrival_rates)
    if res.status != OPTIMAL:
        raise NumericalFailure(f"max-slack LP over the optimal face returned {res.status}")
    rates = _unpack(spec, acts, res.x[:n_act])
    slack = spec.pool_sizes - _loads(spec, rates) * spec.pool_sizes
    s = float(res.x[-1])
    tol = slack_tol * max(1.0, float(spec.pool_sizes.max()))
    return FeasibleRegionReport(s > tol, slack, s, sol)


@dataclass
class UniquenessReport:
    """Outcome of the perturbation heuristic; not a proof either way."""

    primal_unique: bool
    dual_unique: bool
    trials: int
    heuristic: bool = True


def check_uniqueness(spec: ValidatedSpec, *, trials: int = 5, scale: float = 1e-6, seed: int = 0) -> UniquenessReport:
    """Probe uniqueness of the primal and dual optima by re-solving perturbed problems.

    Costs are jittered to test the primal optimum; arrival rates are
    jittered to test the capacity duals.  A change in either flags
    non-uniqueness.
    """
    base = solve_stability_lp(spec)
    if not base.optimal:
        raise ValueError("uniqueness is only meaningful for a feasible instance")
    atol = 1e-5 * max(1.0, float(spec.arrival_rates.max()))
    rng = np.random.default_rng(seed)
    acts = _activity_index(spec)
    cost = np.array([spec.cost_matrix[i, j] for i, j in acts])
    primal_ok = dual_ok = True
    for _ in range(trials):
        jitter = scale * (1.0 + np.abs(cost)) * rng.standard_normal(cost.size)
        pert = _stability(spec, cost=cost + jitter)
        if not pert.optimal or not np.allclose(pert.primal_rates, base.primal_rates, rtol=1e-5, atol=atol):
            primal_ok = False

        lam = spec.arrival_rates * (1.0 + scale * rng.standard_normal(spec.ev_types))
        pert = _stability(spec, arrival_rates=lam)
        if not pert.optimal or not np.allclose(pert.capacity_duals, base.capacity_duals, rtol=1e-4, atol=1e-6):
            dual_ok = False
    return UniquenessReport(primal_ok, dual_ok, trials)
