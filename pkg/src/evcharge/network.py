"""Charging-network description and the stochastic primitives that drive it.

A network has ``I`` EV types and ``J`` charger (station) types.  Type ``i``
requests charging at rate ``arrival_rates[i]``; a type-``j`` charger serves it
at rate ``service_rates[i, j]`` (0 = incompatible) and the vehicle pays
``costs[i][j]`` for going there (``UNREACHABLE`` = cannot get there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    EmptyTypeSet,
    IncompatibleActivity,
    NegativeRate,
    OrphanEvType,
    SpecError,
)

FAMILIES = ("exponential", "deterministic", "uniform")


class _Unreachable:
    """Sentinel for an infinite cost.

    Deliberately supports no arithmetic or ordering so that a stray use in a
    score computation fails loudly instead of producing a huge float.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNREACHABLE"

    def __str__(self):
        return "inf"

    def __reduce__(self):
        return (_Unreachable, ())


UNREACHABLE = _Unreachable()


def is_unreachable(cost) -> bool:
    if cost is UNREACHABLE:
        return True
    return isinstance(cost, float) and math.isinf(cost) and cost > 0


@dataclass(frozen=True)
class ProcessFamilies:
    """Distribution families for interarrival and service times.

    ``spread`` is the relative half-width used by the uniform family: a mean
    ``m`` becomes ``U(m(1 - spread), m(1 + spread))``.
    """

    arrival: str = "exponential"
    service: str = "exponential"
    spread: float = 0.5

    def __post_init__(self):
        for name in (self.arrival, self.service):
            if name not in FAMILIES:
                raise SpecError(f"unknown distribution family {name!r}")
        if not 0.0 <= self.spread < 1.0:
            raise SpecError("uniform spread must lie in [0, 1)")


@dataclass(frozen=True)
class NetworkSpec:
    arrival_rates: Sequence[float]
    service_rates: Sequence[Sequence[float]]
    costs: Sequence[Sequence[object]]
    pool_sizes: Sequence[int]
    processes: ProcessFamilies = field(default_factory=ProcessFamilies)

    @property
    def ev_types(self) -> int:
        return len(self.arrival_rates)

    @property
    def charger_types(self) -> int:
        return len(self.pool_sizes)


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ValidatedSpec:
    """A network that passed :func:`validate_spec`.

    ``cost_matrix`` holds NaN on unusable activities; every consumer must go
    through ``usable`` / ``stations_for`` before touching it.
    """

    arrival_rates: np.ndarray
    service_rates: np.ndarray
    costs: tuple
    cost_matrix: np.ndarray
    pool_sizes: np.ndarray
    usable: np.ndarray
    stations_for: tuple
    processes: ProcessFamilies

    @property
    def ev_types(self) -> int:
        return self.arrival_rates.shape[0]

    @property
    def charger_types(self) -> int:
        return self.pool_sizes.shape[0]

    @property
    def usable_activities(self) -> list[tuple[int, int]]:
        return [tuple(map(int, ij)) for ij in np.argwhere(self.usable)]

    @property
    def zero_cost(self) -> bool:
        return bool(np.all(self.cost_matrix[self.usable] == 0.0))

    def to_network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            arrival_rates=tuple(float(x) for x in self.arrival_rates),
            service_rates=tuple(tuple(float(x) for x in row) for row in self.service_rates),
            costs=self.costs,
            pool_sizes=tuple(int(n) for n in self.pool_sizes),
            processes=self.processes,
        )

    def with_arrival_rates(self, rates) -> "ValidatedSpec":
        return validate_spec(replace(self.to_network_spec(), arrival_rates=tuple(rates)))

    def with_pool_sizes(self, sizes) -> "ValidatedSpec":
        return validate_spec(replace(self.to_network_spec(), pool_sizes=tuple(sizes)))


def validate_spec(spec: NetworkSpec) -> ValidatedSpec:
    """Check a :class:`NetworkSpec` and derive its usable-activity masks."""
    n_ev, n_ch = len(spec.arrival_rates), len(spec.pool_sizes)
    if n_ev < 1 or n_ch < 1:
        raise EmptyTypeSet(f"need at least one EV type and one charger type (got I={n_ev}, J={n_ch})")

    lam = np.asarray(spec.arrival_rates, dtype=float)
    mu = np.asarray(spec.service_rates, dtype=float)
    if mu.shape != (n_ev, n_ch):
        raise SpecError(f"service_rates must be {n_ev}x{n_ch}, got shape {mu.shape}")
    if len(spec.costs) != n_ev or any(len(row) != n_ch for row in spec.costs):
        raise SpecError(f"costs must be {n_ev}x{n_ch}")
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
        raise SpecError("arrival and service rates must be finite")
    if np.any(lam < 0):
        raise NegativeRate(f"negative arrival rate in {lam.tolist()}")
    if np.any(mu < 0):
        raise NegativeRate("negative service rate")

    pools = []
    for n in spec.pool_sizes:
        if isinstance(n, bool) or int(n) != n or n < 1:
            raise SpecError(f"pool sizes must be positive integers, got {n!r}")
        pools.append(int(n))

    costs = []
    cost_matrix = np.full((n_ev, n_ch), np.nan)
    reachable = np.zeros((n_ev, n_ch), dtype=bool)
    for i, row in enumerate(spec.costs):
        out = []
        for j, c in enumerate(row):
            if is_unreachable(c):
                out.append(UNREACHABLE)
                continue
            c = float(c)
            if math.isnan(c):
                raise SpecError(f"cost ({i + 1},{j + 1}) is NaN")
            if c < 0:
                raise NegativeRate(f"cost ({i + 1},{j + 1}) is negative")
            out.append(c)
            cost_matrix[i, j] = c
            reachable[i, j] = True
        costs.append(tuple(out))

    usable = reachable & (mu > 0)
    cost_matrix[~usable] = np.nan
    for i in range(n_ev):
        if not usable[i].any():
            raise OrphanEvType(f"EV type {i + 1} has no usable charger type")

    return ValidatedSpec(
        arrival_rates=_readonly(lam),
        service_rates=_readonly(mu),
        costs=tuple(costs),
        cost_matrix=_readonly(cost_matrix),
        pool_sizes=_readonly(np.asarray(pools, dtype=np.int64)),
        usable=_readonly(usable),
        stations_for=tuple(tuple(int(j) for j in np.flatnonzero(usable[i])) for i in range(n_ev)),
        processes=spec.processes,
    )


# --------------------------------------------------------------------------
# random streams

@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream_id: tuple

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def arrival_stream(i: int) -> tuple:
    return ("arrival", i)


def service_stream(i: int, j: int) -> tuple:
    return ("service", i, j)


def _spawn_key(stream_id: tuple) -> tuple:
    kind, *idx = stream_id
    return ({"arrival": 0, "service": 1}[kind], *idx)


class Stream:
    """Buffered variates from one independent generator.

    Draws are taken in fixed-size blocks, which keeps the sample path a pure
    function of ``(seed, stream_id)`` while avoiding per-draw call overhead.
    """

    def __init__(self, rng_seed: RngSeed, block: int = 512):
        ss = np.random.SeedSequence(entropy=int(rng_seed.seed), spawn_key=_spawn_key(rng_seed.stream_id))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._block = block
        self._exp: list = []
        self._uni: list = []

    def exponential(self) -> float:
        if not self._exp:
            self._exp = self._gen.standard_exponential(self._block).tolist()[::-1]
        return self._exp.pop()

    def uniform(self) -> float:
        if not self._uni:
            self._uni = self._gen.random(self._block).tolist()[::-1]
        return self._uni.pop()


@dataclass(frozen=True)
class SeedPlan:
    """Base seed plus optional per-stream overrides."""

    base: int = 0
    overrides: dict = field(default_factory=dict)

    def seed_for(self, stream_id: tuple) -> RngSeed:
        return RngSeed(int(self.overrides.get(stream_id, self.base)), stream_id)

    def stream(self, stream_id: tuple) -> Stream:
        return Stream(self.seed_for(stream_id))


@dataclass(frozen=True)
class RenewalProcessSpec:
    kind: str
    rate: float | None = None
    mean: float | None = None
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind == "exponential":
            ok = self.rate is not None and self.rate > 0
        elif self.kind == "deterministic":
            ok = self.mean is not None and self.mean > 0
        elif self.kind == "uniform":
            ok = self.lo is not None and self.hi is not None and 0 <= self.lo <= self.hi and self.hi > 0
        else:
            raise SpecError(f"unknown renewal family {self.kind!r}")
        if not ok:
            raise SpecError(f"invalid parameters for {self.kind} process: {self}")

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", rate=float(rate))

    @classmethod
    def deterministic(cls, mean):
        return cls("deterministic", mean=float(mean))

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def for_rate(cls, family: str, rate: float, spread: float = 0.5):
        m = 1.0 / rate
        if family == "exponential":
            return cls.exponential(rate)
        if family == "deterministic":
            return cls.deterministic(m)
        return cls.uniform(m * (1 - spread), m * (1 + spread))

    @property
    def mean_duration(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.rate
        if self.kind == "deterministic":
            return self.mean
        return 0.5 * (self.lo + self.hi)


def next_interarrival(proc: RenewalProcessSpec, rng: Stream) -> float:
    if proc.kind == "exponential":
        return rng.exponential() / proc.rate
    if proc.kind == "deterministic":
        return proc.mean
    return proc.lo + (proc.hi - proc.lo) * rng.uniform()


def draw_service_time(i: int, j: int, spec: ValidatedSpec, rng: Stream) -> float:
    """Charging duration of a type-``i`` vehicle on a type-``j`` charger."""
    mu = float(spec.service_rates[i, j])
    if mu <= 0:
        raise IncompatibleActivity(f"activity ({i + 1},{j + 1}) has zero service rate")
    family = spec.processes.service
    if family == "exponential":
        return rng.exponential() / mu
    if family == "deterministic":
        return 1.0 / mu
    s = spec.processes.spread
    return (1.0 - s + 2.0 * s * rng.uniform()) / mu
