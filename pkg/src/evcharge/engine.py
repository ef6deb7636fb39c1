"""Discrete-event simulation of the physical charging network.

Vehicles arrive per type, are routed once by the configured policy and join
that station's FIFO queue; each station runs ``N_j`` identical chargers.
Virtual queues live inside the policy and never see the physical queues.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GridOutOfRange
from .network import (
    RenewalProcessSpec,
    SeedPlan,
    ValidatedSpec,
    arrival_stream,
    draw_service_time,
    next_interarrival,
    service_stream,
)
from .policies import FcsqPolicy, GpdPolicy, GreedyPolicy, LbPolicy, StationSnapshot

# completions sort before arrivals at equal timestamps
_COMPLETION, _ARRIVAL = 0, 1
POLICY_KINDS = ("gpd", "lb", "fcsq", "greedy")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    beta: float = 0.01
    clusters: tuple = ()
    weights: tuple = ()
    decay_mode: str = "rate"
    estimator: str = "expected"
    include_residual: bool = False
    initial_queues: tuple | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind in ("gpd", "lb") and not self.beta > 0:
            raise ValueError("beta must be positive")

    def with_beta(self, beta):
        return replace(self, beta=float(beta))


@dataclass(frozen=True)
class RateSwitch:
    at_arrival: int
    arrival_rates: tuple


@dataclass(frozen=True)
class SimConfig:
    policy: PolicyConfig
    max_arrivals: int | None = None
    horizon_time: float | None = None
    rate_switch: RateSwitch | None = None
    record_occupancy: bool = True
    record_virtual: bool = True
    audit: bool = False

    def __post_init__(self):
        if (self.max_arrivals is None) == (self.horizon_time is None):
            raise ValueError("set exactly one of max_arrivals and horizon_time")
        if self.max_arrivals is not None and self.max_arrivals < 0:
            raise ValueError("max_arrivals must be nonnegative")
        if self.horizon_time is not None and self.horizon_time < 0:
            raise ValueError("horizon_time must be nonnegative")


def make_policy(spec: ValidatedSpec, cfg: PolicyConfig, basic_graph=None):
    if cfg.kind == "gpd":
        return GpdPolicy(spec, cfg.beta, cfg.initial_queues)
    if cfg.kind == "lb":
        return LbPolicy(spec, cfg.beta, cfg.clusters, cfg.weights, cfg.decay_mode)
    if cfg.kind == "fcsq":
        return FcsqPolicy(spec, basic_graph, cfg.estimator, cfg.include_residual)
    return GreedyPolicy(spec)


class StationPool:
    def __init__(self, j, pool_size, n_ev):
        self.j = j
        self.pool_size = int(pool_size)
        self.busy = 0
        self.queue = deque()
        self.queue_counts = [0] * n_ev
        self.queued_work = 0.0
        self.in_service = {}

    @property
    def free_chargers(self):
        return self.pool_size - self.busy

    def snapshot(self, now, include_residual=False):
        residual = sum(c - now for c in self.in_service.values()) if include_residual else 0.0
        return StationSnapshot(self.free_chargers, self.pool_size, tuple(self.queue_counts), self.queued_work, residual)


@dataclass
class SimTrace:
    """Everything recorded during one run.

    Per-request arrays are indexed by request id (arrival order).  Occupancy
    rows are written after every event touching a station.  ``virtual_times``
    and ``virtual_levels`` hold the policy's virtual queues right after each
    routing decision, which together with the decay law determines them at
    every instant.
    """

    policy: str
    beta: float | None
    pool_sizes: np.ndarray
    n_ev: int
    ev_type: np.ndarray
    station: np.ndarray
    t_arrive: np.ndarray
    t_start: np.ndarray
    service: np.ndarray
    arrival_horizon: float
    occ_time: np.ndarray = field(default_factory=lambda: np.zeros(0))
    occ_station: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    occ_busy: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    occ_queue: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    virtual_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    virtual_levels: np.ndarray | None = None
    rate_switch_time: float | None = None
    decisions: list | None = None

    @property
    def n_ch(self) -> int:
        return len(self.pool_sizes)

    @property
    def n_requests(self) -> int:
        return len(self.ev_type)

    @property
    def wait(self) -> np.ndarray:
        return self.t_start - self.t_arrive

    def routing_counts(self, grid) -> np.ndarray:
        """``A_ij(t)`` for each ``t`` in ``grid``: shape ``(len(grid), I, J)``."""
        grid = np.asarray(grid, dtype=float)
        if grid.size and (grid.min() < 0 or grid.max() > self.arrival_horizon + 1e-12):
            raise GridOutOfRange(f"grid must lie in [0, {self.arrival_horizon}]")
        out = np.zeros((grid.size, self.n_ev, self.n_ch))
        for i in range(self.n_ev):
            for j in range(self.n_ch):
                t = self.t_arrive[(self.ev_type == i) & (self.station == j)]
                out[:, i, j] = np.searchsorted(t, grid, side="right")
        return out

    def virtual_queue_at(self, times) -> np.ndarray:
        """Virtual queues ``Q_j(t)`` (shape ``(len(times), J)``) from the post-decision records."""
        if self.virtual_levels is None:
            raise ValueError(f"policy {self.policy!r} keeps no virtual queues")
        times = np.asarray(times, dtype=float)
        k = np.searchsorted(self.virtual_times, times, side="right") - 1
        out = np.zeros((times.size, self.n_ch))
        has = k >= 0
        base = self.virtual_levels[k[has]]
        dt = (times[has] - self.virtual_times[k[has]])[:, None]
        out[has] = np.maximum(base - self.pool_sizes[None, :] * dt, 0.0)
        return out

    def virtual_time_average(self, t0: float, t1: float) -> np.ndarray:
        """Exact time average of ``Q_j`` over ``[t0, t1]`` under linear decay with reflection at 0."""
        if not t1 > t0:
            raise ValueError("need t1 > t0")
        vt = self.virtual_times
        # breakpoints: t0, every decision in (t0, t1), t1
        inside = vt[(vt > t0) & (vt < t1)]
        starts = np.concatenate([[t0], inside])
        ends = np.concatenate([inside, [t1]])
        q0 = self.virtual_queue_at(starts)
        n = self.pool_sizes[None, :].astype(float)
        d = (ends - starts)[:, None]
        full = q0 * d - 0.5 * n * d**2
        hit = q0 <= n * d
        area = np.where(hit, q0**2 / (2 * n), full)
        return area.sum(axis=0) / (t1 - t0)


def run_simulation(spec: ValidatedSpec, cfg: SimConfig, seeds=0, basic_graph=None) -> SimTrace:
    """Run one replication and return its trace."""
    return _Engine(spec, cfg, seeds if isinstance(seeds, SeedPlan) else SeedPlan(int(seeds)), basic_graph).run()


class _Engine:
    def __init__(self, spec, cfg, seeds, basic_graph):
        self.spec = spec
        self.cfg = cfg
        self.seeds = seeds
        self.policy = make_policy(spec, cfg.policy, basic_graph)
        self.n_ev, self.n_ch = spec.ev_types, spec.charger_types
        self.stations = [StationPool(j, spec.pool_sizes[j], self.n_ev) for j in range(self.n_ch)]
        self.arrival_rng = [seeds.stream(arrival_stream(i)) for i in range(self.n_ev)]
        self.service_rng = {}
        self.rates = [float(x) for x in spec.arrival_rates]
        self.heap = []
        self.seq = 0
        self.pending = [None] * self.n_ev  # (time, token) of each type's scheduled arrival
        self.token = [0] * self.n_ev

        self.rec_type, self.rec_station, self.rec_arrive, self.rec_start, self.rec_service = [], [], [], [], []
        self.occ = []
        self.vtimes, self.vlevels = [], []
        self.decisions = [] if cfg.audit else None
        self.switch_time = None

    # ---- scheduling
    def _push(self, t, prio, kind, a, b):
        heapq.heappush(self.heap, (t, prio, self.seq, kind, a, b))
        self.seq += 1

    def _process(self, i):
        return RenewalProcessSpec.for_rate(self.spec.processes.arrival, self.rates[i], self.spec.processes.spread)

    def _schedule_arrival(self, i, now):
        if self.rates[i] <= 0:
            self.pending[i] = None
            return
        t = now + next_interarrival(self._process(i), self.arrival_rng[i])
        self.token[i] += 1
        self.pending[i] = (t, self.token[i])
        self._push(t, _ARRIVAL, "A", i, self.token[i])

    def apply_rate_switch(self, now, new_rates):
        old = self.rates
        self.rates = [float(x) for x in new_rates]
        self.switch_time = now
        for i in range(self.n_ev):
            lo, ln = old[i], self.rates[i]
            pend = self.pending[i]
            if ln <= 0:
                self.token[i] += 1
                self.pending[i] = None
            elif pend is None or lo <= 0:
                self._schedule_arrival(i, now)
            elif self.spec.processes.arrival == "exponential" and lo != ln:
                # memoryless residual: rescaling keeps it exponential at the new rate
                t = now + (pend[0] - now) * lo / ln
                self.token[i] += 1
                self.pending[i] = (t, self.token[i])
                self._push(t, _ARRIVAL, "A", i, self.token[i])

    # ---- service
    def _service_time(self, i, j):
        rng = self.service_rng.get((i, j))
        if rng is None:
            rng = self.service_rng[(i, j)] = self.seeds.stream(service_stream(i, j))
        return draw_service_time(i, j, self.spec, rng)

    def _start(self, st, rid, t, duration):
        st.busy += 1
        st.in_service[rid] = t + duration
        self.rec_start[rid] = t
        self._push(t + duration, _COMPLETION, "C", st.j, rid)

    def _record_occ(self, t, st):
        if self.cfg.record_occupancy:
            self.occ.append((t, st.j, st.busy, len(st.queue)))

    # ---- main loop
    def run(self):
        cfg = self.cfg
        sw = cfg.rate_switch
        if sw is not None and sw.at_arrival == 0:
            self.rates = [float(x) for x in sw.arrival_rates]
            self.switch_time = 0.0
        max_n = cfg.max_arrivals
        t_end = cfg.horizon_time
        arrivals_open = not (max_n == 0 or t_end == 0)
        if arrivals_open:
            for i in range(self.n_ev):
                self._schedule_arrival(i, 0.0)
        n_arr = 0
        last_arrival = 0.0
        record_virtual = cfg.record_virtual and self.policy.virtual_queues() is not None

        heap = self.heap
        while heap:
            t, _, _, kind, a, b = heapq.heappop(heap)
            if kind == "A":
                if not arrivals_open or b != self.token[a]:
                    continue
                if t_end is not None and t > t_end:
                    arrivals_open = False
                    continue
                i = a
                decision = self.policy.route(i, t, self.stations)
                j = decision.station
                rid = n_arr
                duration = self._service_time(i, j)
                self.rec_type.append(i)
                self.rec_station.append(j)
                self.rec_arrive.append(t)
                self.rec_start.append(np.nan)
                self.rec_service.append(duration)
                if record_virtual:
                    self.vtimes.append(t)
                    self.vlevels.append(self.policy.virtual_queues().tolist())
                if self.decisions is not None:
                    self.decisions.append((rid, t, i, decision))
                st = self.stations[j]
                if st.busy < st.pool_size:
                    self._start(st, rid, t, duration)
                else:
                    st.queue.append((rid, i, duration))
                    st.queue_counts[i] += 1
                    st.queued_work += duration
                self._record_occ(t, st)
                n_arr += 1
                last_arrival = t
                if sw is not None and sw.at_arrival == n_arr:
                    self.apply_rate_switch(t, sw.arrival_rates)
                if max_n is not None and n_arr >= max_n:
                    arrivals_open = False
                else:
                    self._schedule_arrival(i, t)
            else:
                st = self.stations[a]
                st.busy -= 1
                del st.in_service[b]
                if st.queue:
                    rid, i, duration = st.queue.popleft()
                    st.queue_counts[i] -= 1
                    st.queued_work -= duration
                    self._start(st, rid, t, duration)
                self._record_occ(t, st)

        horizon = t_end if t_end is not None else last_arrival
        occ = np.array(self.occ, dtype=float).reshape(-1, 4)
        return SimTrace(
            policy=self.policy.name,
            beta=self.policy.beta,
            pool_sizes=np.asarray(self.spec.pool_sizes, dtype=float),
            n_ev=self.n_ev,
            ev_type=np.asarray(self.rec_type, dtype=np.int64),
            station=np.asarray(self.rec_station, dtype=np.int64),
            t_arrive=np.asarray(self.rec_arrive, dtype=float),
            t_start=np.asarray(self.rec_start, dtype=float),
            service=np.asarray(self.rec_service, dtype=float),
            arrival_horizon=float(horizon),
            occ_time=occ[:, 0],
            occ_station=occ[:, 1].astype(np.int64),
            occ_busy=occ[:, 2].astype(np.int64),
            occ_queue=occ[:, 3].astype(np.int64),
            virtual_times=np.asarray(self.vtimes, dtype=float),
            virtual_levels=np.asarray(self.vlevels, dtype=float).reshape(-1, self.n_ch) if record_virtual else None,
            rate_switch_time=self.switch_time,
            decisions=self.decisions,
        )


# --------------------------------------------------------------------------
# summaries

@dataclass
class StationSummary:
    station: int
    served: int
    max_wait: float
    mean_wait: float
    zero_wait_fraction: float
    mean_queue_length: float


@dataclass
class Summary:
    requests: int
    max_wait: float
    mean_wait: float
    zero_wait_fraction: float
    horizon: float
    stations: list
    routing_rates: np.ndarray
    delay_series: dict

    @property
    def delay_inequality(self) -> float:
        """Spread of per-station mean waits over stations that served anyone."""
        means = [s.mean_wait for s in self.stations if s.served]
        return max(means) - min(means) if means else 0.0


def _stats(w):
    if w.size == 0:
        return 0.0, 0.0, 1.0
    return float(w.max()), float(w.mean()), float(np.mean(w == 0.0))


def summarize(trace: SimTrace) -> Summary:
    w = trace.wait
    mx, mean, zero = _stats(w)
    horizon = trace.arrival_horizon
    stations = []
    series = {}
    for j in range(trace.n_ch):
        sel = trace.station == j
        wj = w[sel]
        smx, smean, szero = _stats(wj)
        stations.append(StationSummary(j, int(sel.sum()), smx, smean, szero, _mean_queue(trace, j, horizon)))
        series[j] = (trace.t_arrive[sel], wj)
    counts = np.zeros((trace.n_ev, trace.n_ch))
    np.add.at(counts, (trace.ev_type, trace.station), 1)
    rates = counts / horizon if horizon > 0 else counts * 0.0
    return Summary(int(w.size), mx, mean, zero, horizon, stations, rates, series)


def _mean_queue(trace, j, horizon):
    if horizon <= 0:
        return 0.0
    sel = trace.occ_station == j
    t = trace.occ_time[sel]
    q = trace.occ_queue[sel].astype(float)
    if t.size == 0:
        return 0.0
    # queue length is piecewise constant, zero before the first record
    edges = np.clip(np.concatenate([t, [horizon]]), 0.0, horizon)
    return float(np.sum(q * np.diff(edges)) / horizon)
