"""Online routing policies.

Every policy decides from local information only: the arriving request
supplies its own costs ``c_i(j)`` and rates ``mu_ij``; stations expose their
own virtual queues or occupancy.  Ties in every argmin/argmax go to the lowest
station index.

The state objects mutate in place (``decay``/``route``) because the simulator
calls them once per arrival; the module-level functions are the copying
equivalents for callers that want value semantics.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import NoUsableStation, TimeReversal
from .network import is_unreachable


@dataclass(frozen=True)
class RoutingDecision:
    station: int
    scores: tuple = ()  # (station, score) pairs that were compared


def request_options(spec, i: int) -> list[tuple[int, float, float]]:
    """``(j, cost, mu)`` for every station a type-``i`` request can use."""
    out = []
    for j, c in enumerate(spec.costs[i]):
        mu = float(spec.service_rates[i][j])
        if mu > 0 and not is_unreachable(c):
            out.append((j, float(c), mu))
    return out


def _argmin(scored):
    best_j, best = -1, None
    for j, s in scored:
        if best is None or s < best:
            best_j, best = j, s
    return best_j


class _OptionsCache:
    def __init__(self, spec):
        self.options = [request_options(spec, i) for i in range(len(spec.costs))]

    def __call__(self, i):
        opts = self.options[i]
        if not opts:
            raise NoUsableStation(f"EV type {i + 1} cannot use any station")
        return opts


# --------------------------------------------------------------------------
# GPD

@dataclass
class GpdState:
    beta: float
    pool_sizes: np.ndarray
    virtual_queues: np.ndarray
    last_update: np.ndarray

    @classmethod
    def initial(cls, beta, pool_sizes, queues=None, t0=0.0):
        if beta <= 0:
            raise ValueError("beta must be positive")
        n = np.asarray(pool_sizes, dtype=float)
        q = np.zeros_like(n) if queues is None else np.asarray(queues, dtype=float).copy()
        if np.any(q < 0):
            raise ValueError("virtual queues start nonnegative")
        return cls(float(beta), n, q, np.full_like(n, float(t0)))

    def copy(self):
        return copy.deepcopy(self)

    def decay(self, now):
        dt = now - self.last_update
        if np.any(dt < 0):
            raise TimeReversal(f"decay to t={now} before last update {self.last_update.max()}")
        np.maximum(self.virtual_queues - self.pool_sizes * dt, 0.0, out=self.virtual_queues)
        self.last_update[:] = now
        return self

    def scores(self, options):
        q, b = self.virtual_queues, self.beta
        return [(j, c + b * q[j] / mu) for j, c, mu in options]

    def commit(self, j, mu):
        self.virtual_queues[j] += 1.0 / mu


def gpd_decay(state: GpdState, now: float) -> GpdState:
    return state.copy().decay(now)


def gpd_route(state: GpdState, i: int, spec) -> tuple[RoutingDecision, GpdState]:
    """Send a type-``i`` request to the minimiser of ``c_i(j) + beta Q_j / mu_ij``."""
    opts = request_options(spec, i)
    if not opts:
        raise NoUsableStation(f"EV type {i + 1} cannot use any station")
    new = state.copy()
    scored = new.scores(opts)
    j = _argmin(scored)
    new.commit(j, dict((k, mu) for k, _, mu in opts)[j])
    return RoutingDecision(j, tuple(scored)), new


# --------------------------------------------------------------------------
# LB

@dataclass
class LbState:
    """GPD state plus one extra virtual queue per (station, cluster) membership.

    ``levels[l][k]`` is the cluster queue of station ``clusters[l][k]``.
    """

    gpd: GpdState
    clusters: list
    weights: list
    levels: list
    cluster_last_update: np.ndarray
    decay_mode: str = "rate"
    memberships: list = field(default_factory=list)

    @classmethod
    def initial(cls, beta, pool_sizes, clusters, weights, decay_mode="rate", t0=0.0):
        if decay_mode not in ("rate", "impulse"):
            raise ValueError(f"unknown decay mode {decay_mode!r}")
        clusters = [sorted(set(int(j) for j in c)) for c in clusters]
        weights = [float(w) for w in weights]
        if len(clusters) != len(weights):
            raise ValueError("one weight per cluster is required")
        if any(not c for c in clusters):
            raise ValueError("clusters must be nonempty")
        gpd = GpdState.initial(beta, pool_sizes, t0=t0)
        # spread W_l evenly so that beta * sum(L) == W_l at t0
        levels = [np.full(len(c), w / (gpd.beta * len(c))) for c, w in zip(clusters, weights)]
        memberships = [[] for _ in range(len(gpd.pool_sizes))]
        for l, c in enumerate(clusters):
            for k, j in enumerate(c):
                memberships[j].append((l, k))
        return cls(gpd, clusters, weights, levels, np.full(len(clusters), float(t0)), decay_mode, memberships)

    @property
    def cluster_queues(self) -> dict:
        return {(j, l): float(self.levels[l][k]) for l, c in enumerate(self.clusters) for k, j in enumerate(c)}

    def station_extra(self, j) -> float:
        return sum(self.levels[l][k] for l, k in self.memberships[j])

    def copy(self):
        return copy.deepcopy(self)

    def decay(self, now):
        self.gpd.decay(now)
        beta = self.gpd.beta
        for l, c in enumerate(self.clusters):
            dt = now - self.cluster_last_update[l]
            if dt < 0:
                raise TimeReversal(f"cluster decay to t={now} before last update")
            self.cluster_last_update[l] = now
            excess = beta * self.levels[l].sum() - self.weights[l]
            if excess <= 0:
                continue
            n = self.gpd.pool_sizes[c]
            if self.decay_mode == "impulse":
                # unvalidated alternative reading: one decrement per trigger
                self.levels[l] -= n
                continue
            # linear decay at N_j per unit time until beta * sum(L) reaches W_l
            t_cross = excess / (beta * n.sum())
            self.levels[l] -= n * min(dt, t_cross)
        return self

    def scores(self, options):
        q, b = self.gpd.virtual_queues, self.gpd.beta
        return [(j, c + b * (q[j] + self.station_extra(j)) / mu) for j, c, mu in options]

    def commit(self, j, mu):
        inc = 1.0 / mu
        self.gpd.virtual_queues[j] += inc
        for l, k in self.memberships[j]:
            self.levels[l][k] += inc


def lb_decay(state: LbState, now: float) -> LbState:
    return state.copy().decay(now)


def lb_route(state: LbState, i: int, spec) -> tuple[RoutingDecision, LbState]:
    opts = request_options(spec, i)
    if not opts:
        raise NoUsableStation(f"EV type {i + 1} cannot use any station")
    new = state.copy()
    scored = new.scores(opts)
    j = _argmin(scored)
    new.commit(j, dict((k, mu) for k, _, mu in opts)[j])
    return RoutingDecision(j, tuple(scored)), new


# --------------------------------------------------------------------------
# FCSQ and greedy

@dataclass(frozen=True)
class StationSnapshot:
    """What a station reports to an arriving request.

    ``queued_work`` is the sum of realised charging times of queued vehicles
    and ``residual_work`` the remaining charging time of those in service;
    both are only consulted by the realised-time estimator.
    """

    free_chargers: int
    pool_size: int
    queue_counts: tuple = ()
    queued_work: float = 0.0
    residual_work: float = 0.0

    def __post_init__(self):
        if not 0 <= self.free_chargers <= self.pool_size:
            raise ValueError("free chargers must lie in [0, pool_size]")
        if self.free_chargers > 0 and any(self.queue_counts):
            raise ValueError("a station with free chargers cannot have a queue")


def wait_estimate(j, snap, mu_col, estimator="expected", include_residual=False):
    """Estimated time until a newly queued vehicle would start charging at station ``j``."""
    if estimator == "expected":
        work = sum(n / mu_col[k] for k, n in enumerate(snap.queue_counts) if n)
    elif estimator == "realized":
        work = snap.queued_work
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    if include_residual:
        work += snap.residual_work
    return work / snap.pool_size


def fcsq_route(i, snapshots, basic_graph, spec, estimator="expected", include_residual=False) -> RoutingDecision:
    """Freest charger first; when every candidate is full, the earliest estimated start."""
    opts = request_options(spec, i)
    if not opts:
        raise NoUsableStation(f"EV type {i + 1} cannot use any station")
    usable = [j for j, _, _ in opts]
    candidates = usable
    if basic_graph is not None:
        basic = [j for j in basic_graph.stations_for(i) if j in usable]
        if basic:
            candidates = basic
    free = [(j, snapshots[j].free_chargers / snapshots[j].pool_size) for j in candidates if snapshots[j].free_chargers > 0]
    if free:
        return RoutingDecision(_argmin((j, -f) for j, f in free), tuple(free))
    mu = spec.service_rates
    est = [
        (j, wait_estimate(j, snapshots[j], [float(mu[k][j]) for k in range(len(mu))], estimator, include_residual))
        for j in candidates
    ]
    return RoutingDecision(_argmin(est), tuple(est))


def greedy_route(i, spec) -> RoutingDecision:
    """Cheapest usable station, ignoring congestion."""
    opts = request_options(spec, i)
    if not opts:
        raise NoUsableStation(f"EV type {i + 1} cannot use any station")
    scored = [(j, c) for j, c, _ in opts]
    return RoutingDecision(_argmin(scored), tuple(scored))


# --------------------------------------------------------------------------
# policy objects driven by the simulator

class GpdPolicy:
    name = "gpd"

    def __init__(self, spec, beta, initial_queues=None):
        self.state = GpdState.initial(beta, spec.pool_sizes, initial_queues)
        self._opts = _OptionsCache(spec)

    @property
    def beta(self):
        return self.state.beta

    def route(self, i, now, stations):
        opts = self._opts(i)
        st = self.state
        st.decay(now)
        scored = st.scores(opts)
        j = _argmin(scored)
        for k, _, mu in opts:
            if k == j:
                st.commit(j, mu)
                break
        return RoutingDecision(j, tuple(scored))

    def virtual_queues(self):
        return self.state.virtual_queues


class LbPolicy(GpdPolicy):
    name = "lb"

    def __init__(self, spec, beta, clusters, weights, decay_mode="rate"):
        self.state = LbState.initial(beta, spec.pool_sizes, clusters, weights, decay_mode)
        self._opts = _OptionsCache(spec)

    @property
    def beta(self):
        return self.state.gpd.beta

    def virtual_queues(self):
        return self.state.gpd.virtual_queues


class FcsqPolicy:
    name = "fcsq"
    beta = None

    def __init__(self, spec, basic_graph, estimator="expected", include_residual=False):
        if basic_graph is None:
            raise ValueError("FCSQ needs a basic activity graph")
        self.spec = spec
        self.graph = basic_graph
        self.estimator = estimator
        self.include_residual = include_residual

    def route(self, i, now, stations):
        snaps = [s.snapshot(now, self.include_residual) for s in stations]
        return fcsq_route(i, snaps, self.graph, self.spec, self.estimator, self.include_residual)

    def virtual_queues(self):
        return None


class GreedyPolicy:
    name = "greedy"
    beta = None

    def __init__(self, spec):
        self.spec = spec
        self._choice = [greedy_route(i, spec) for i in range(spec.ev_types)]

    def route(self, i, now, stations):
        return self._choice[i]

    def virtual_queues(self):
        return None
