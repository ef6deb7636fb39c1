"""Scenario files and built-in presets.

A scenario file is TOML::

    [network]
    lambda = [50, 44]
    mu     = [[1, 3, 0], [0, 1, 2]]
    cost   = [[0, 0, "inf"], ["inf", 0, 0]]   # inf (bare TOML float) also accepted
    N      = [20, 20, 20]

    [processes]            # optional
    arrival = "exponential"
    service = "exponential"

    [seeds]                # optional
    base = 0
    [[seeds.override]]
    stream = "service"     # or "arrival"
    index = [1, 2]         # 1-based type (and station) indices
    seed = 7

    [policy]               # optional; defaults to gpd with beta = 0.01
    kind = "lb"
    beta = 0.01
    clusters = [[1, 2, 3]] # 1-based station indices
    weights = [10]

    [run]
    arrivals = 10000       # or time = 250.0
    switch_at = 5000
    switch_lambda = [44, 50]

Matrices are row-major with one row per EV type.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import PolicyConfig, RateSwitch, SimConfig
from .errors import ParseError, UnknownPreset
from .network import UNREACHABLE, NetworkSpec, ProcessFamilies, SeedPlan, ValidatedSpec, validate_spec


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: ValidatedSpec
    config: SimConfig
    seeds: SeedPlan = SeedPlan()
    description: str = ""

    def __iter__(self):
        # allows ``spec, cfg = load_scenario(...)``
        return iter((self.spec, self.config))

    def policy(self, kind: str | None = None, beta: float | None = None) -> PolicyConfig:
        """The scenario's policy settings, optionally with a different kind or beta."""
        p = self.config.policy
        if kind is not None:
            p = replace(p, kind=kind)
        if beta is not None:
            p = p.with_beta(beta)
        return p

    def to_dict(self) -> dict:
        spec, cfg = self.spec, self.config
        pol = cfg.policy
        run = {}
        if cfg.max_arrivals is not None:
            run["arrivals"] = cfg.max_arrivals
        else:
            run["time"] = cfg.horizon_time
        if cfg.rate_switch is not None:
            run["switch_at"] = cfg.rate_switch.at_arrival
            run["switch_lambda"] = list(cfg.rate_switch.arrival_rates)
        return {
            "name": self.name,
            "network": {
                "lambda": spec.arrival_rates.tolist(),
                "mu": spec.service_rates.tolist(),
                "cost": [[str(c) if c is UNREACHABLE else c for c in row] for row in spec.costs],
                "N": spec.pool_sizes.tolist(),
            },
            "processes": {
                "arrival": spec.processes.arrival,
                "service": spec.processes.service,
                "spread": spec.processes.spread,
            },
            "seeds": {
                "base": self.seeds.base,
                "override": [
                    {"stream": k[0], "index": [x + 1 for x in k[1:]], "seed": v}
                    for k, v in sorted(self.seeds.overrides.items())
                ],
            },
            "policy": {
                "kind": pol.kind,
                "beta": pol.beta,
                "clusters": [[j + 1 for j in c] for c in pol.clusters],
                "weights": list(pol.weights),
                "decay": pol.decay_mode,
                "estimator": pol.estimator,
                "include_residual": pol.include_residual,
            },
            "run": run,
        }


# --------------------------------------------------------------------------
# presets

_INF = UNREACHABLE


def _toy_s6() -> Scenario:
    spec = validate_spec(NetworkSpec(
        arrival_rates=(50.0, 44.0),
        service_rates=((1, 3, 0), (0, 1, 2)),
        costs=((0, 0, _INF), (_INF, 0, 0)),
        pool_sizes=(20, 20, 20),
    ))
    policy = PolicyConfig("gpd", beta=0.01, clusters=((0, 1, 2),), weights=(10.0,))
    cfg = SimConfig(policy, max_arrivals=10_000, rate_switch=RateSwitch(5_000, (44.0, 50.0)))
    return Scenario("toy-s6", spec, cfg, description="three-station toy network with a mid-run rate reversal")


def _example_a() -> Scenario:
    # type 1 cannot reach station 2; type 2 prefers station 1
    spec = validate_spec(NetworkSpec(
        arrival_rates=(12.0, 16.0),
        service_rates=((1, 1), (1, 1)),
        costs=((1, _INF), (1, 2)),
        pool_sizes=(20, 20),
    ))
    cfg = SimConfig(PolicyConfig("gpd", beta=0.01), max_arrivals=10_000)
    return Scenario("example-a", spec, cfg, description="greedy choice overloads the shared station")


def _example_b() -> Scenario:
    # each type prefers its own station, but type 1 charges faster at station 2
    spec = validate_spec(NetworkSpec(
        arrival_rates=(1.6, 0.8),
        service_rates=((1, 2), (1, 1)),
        costs=((1, 2), (2, 1)),
        pool_sizes=(1, 1),
    ))
    cfg = SimConfig(PolicyConfig("gpd", beta=0.01), horizon_time=10_000.0)
    return Scenario("example-b", spec, cfg, description="costed instance with a unique optimum and positive duals")


def _toy_costed() -> Scenario:
    spec = validate_spec(NetworkSpec(
        arrival_rates=(16.0, 30.0),
        service_rates=((1, 3, 0), (0, 1, 2)),
        costs=((0, 1, _INF), (_INF, 1, 0)),
        pool_sizes=(20, 20, 20),
    ))
    cfg = SimConfig(PolicyConfig("gpd", beta=0.01), horizon_time=100.0)
    return Scenario("toy-costed", spec, cfg, description="toy network where the shared station costs extra")


def _overloaded() -> Scenario:
    spec = validate_spec(NetworkSpec((3.0,), ((1.0,),), ((0.0,),), (2,)))
    cfg = SimConfig(PolicyConfig("gpd", beta=0.01), max_arrivals=1_000)
    return Scenario("overloaded", spec, cfg, description="single station with more work than capacity")


PRESETS = {
    "toy-s6": _toy_s6,
    "example-a": _example_a,
    "example-b": _example_b,
    "toy-costed": _toy_costed,
    "overloaded": _overloaded,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


# --------------------------------------------------------------------------
# files

class _Locator:
    """Maps ``section.key`` to the line where the key is written."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, section: str, key: str) -> int | None:
        current = ""
        key_re = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for n, raw in enumerate(self.lines, 1):
            s = raw.strip()
            if s.startswith("["):
                current = s.strip("[] ")
                continue
            if current == section and key_re.match(raw):
                return n
        return None


class _Reader:
    def __init__(self, data: dict, loc: _Locator):
        self.data = data
        self.loc = loc

    def err(self, section, key, msg):
        return ParseError(msg, field=f"{section}.{key}", line=self.loc.line_of(section, key))

    def section(self, name, required=False) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise ParseError(f"missing [{name}] section", field=name)
            return {}
        if not isinstance(sec, dict):
            raise ParseError(f"[{name}] must be a table", field=name)
        return sec

    def get(self, sec, section, key, default=None, required=False):
        if key not in sec:
            if required:
                raise ParseError(f"missing key {key!r}", field=f"{section}.{key}")
            return default
        return sec[key]

    def number(self, section, key, value, allow_inf=False) -> float:
        if isinstance(value, bool):
            raise self.err(section, key, f"expected a number, got {value!r}")
        if isinstance(value, str):
            if allow_inf and value.strip().lower() in ("inf", "+inf", "infinity"):
                return math.inf
            raise self.err(section, key, f"expected a number, got {value!r}")
        if not isinstance(value, (int, float)):
            raise self.err(section, key, f"expected a number, got {value!r}")
        value = float(value)
        if math.isinf(value) and not allow_inf:
            raise self.err(section, key, "infinite value not allowed here")
        return value

    def vector(self, section, key, value, length=None) -> list[float]:
        if not isinstance(value, list):
            raise self.err(section, key, "expected a list")
        if length is not None and len(value) != length:
            raise self.err(section, key, f"expected {length} entries, got {len(value)}")
        return [self.number(section, key, x) for x in value]

    def matrix(self, section, key, value, rows, cols, allow_inf=False) -> list[list[float]]:
        if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
            raise self.err(section, key, "expected a list of rows")
        if len(value) != rows:
            raise self.err(section, key, f"expected {rows} rows, got {len(value)}")
        out = []
        for r, row in enumerate(value, 1):
            if len(row) != cols:
                raise self.err(section, key, f"row {r} has {len(row)} entries, expected {cols}")
            try:
                out.append([self.number(section, key, x, allow_inf) for x in row])
            except ParseError as exc:
                raise self.err(section, key, f"row {r}: {exc}") from None
        return out


def _parse(text: str, name: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), line=int(m.group(1)) if m else None) from None
    rd = _Reader(data, _Locator(text))

    net = rd.section("network", required=True)
    lam_raw = rd.get(net, "network", "lambda", required=True)
    lam = rd.vector("network", "lambda", lam_raw)
    pools_raw = rd.get(net, "network", "N", required=True)
    pools = rd.vector("network", "N", pools_raw)
    n_ev, n_ch = len(lam), len(pools)
    mu = rd.matrix("network", "mu", rd.get(net, "network", "mu", required=True), n_ev, n_ch)
    cost_raw = rd.get(net, "network", "cost")
    if cost_raw is None:
        cost = [[0.0] * n_ch for _ in range(n_ev)]
    else:
        cost = rd.matrix("network", "cost", cost_raw, n_ev, n_ch, allow_inf=True)
    costs = tuple(tuple(_INF if math.isinf(c) else c for c in row) for row in cost)
    for n in pools:
        if n != int(n):
            raise rd.err("network", "N", f"pool sizes must be integers, got {n:g}")

    proc = rd.section("processes")
    try:
        families = ProcessFamilies(
            arrival=proc.get("arrival", "exponential"),
            service=proc.get("service", "exponential"),
            spread=float(proc.get("spread", 0.5)),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field="processes") from None

    spec = validate_spec(NetworkSpec(tuple(lam), tuple(map(tuple, mu)), costs, tuple(int(n) for n in pools), families))

    seeds_sec = rd.section("seeds")
    overrides = {}
    for k, ov in enumerate(seeds_sec.get("override", []), 1):
        try:
            stream = ov["stream"]
            idx = tuple(int(x) - 1 for x in ov["index"])
            seed = int(ov["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"override {k} needs stream, index and seed ({exc})", field="seeds.override") from None
        if stream not in ("arrival", "service") or len(idx) != (1 if stream == "arrival" else 2):
            raise ParseError(f"override {k}: bad stream {stream!r} or index", field="seeds.override")
        overrides[(stream, *idx)] = seed
    seeds = SeedPlan(int(seeds_sec.get("base", 0)), overrides)

    pol = rd.section("policy")
    clusters_raw = pol.get("clusters")
    if clusters_raw is None:
        clusters = (tuple(range(n_ch)),)
    else:
        if not isinstance(clusters_raw, list):
            raise rd.err("policy", "clusters", "expected a list of station lists")
        clusters = []
        for c in clusters_raw:
            if not isinstance(c, list) or not all(isinstance(j, int) and 1 <= j <= n_ch for j in c):
                raise rd.err("policy", "clusters", f"cluster {c!r} must list station indices in 1..{n_ch}")
            clusters.append(tuple(j - 1 for j in c))
        clusters = tuple(clusters)
    weights = pol.get("weights")
    weights = (10.0,) * len(clusters) if weights is None else tuple(rd.vector("policy", "weights", weights, len(clusters)))
    try:
        policy = PolicyConfig(
            kind=pol.get("kind", "gpd"),
            beta=float(pol.get("beta", 0.01)),
            clusters=clusters,
            weights=weights,
            decay_mode=pol.get("decay", "rate"),
            estimator=pol.get("estimator", "expected"),
            include_residual=bool(pol.get("include_residual", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field="policy") from None

    run = rd.section("run", required=True)
    arrivals, horizon = run.get("arrivals"), run.get("time")
    if (arrivals is None) == (horizon is None):
        raise ParseError("set exactly one of run.arrivals and run.time", field="run")
    switch = None
    if "switch_at" in run:
        switch = RateSwitch(int(run["switch_at"]), tuple(rd.vector("run", "switch_lambda", run.get("switch_lambda"), n_ev)))
    try:
        cfg = SimConfig(
            policy,
            max_arrivals=None if arrivals is None else int(arrivals),
            horizon_time=None if horizon is None else float(horizon),
            rate_switch=switch,
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field="run") from None
    return Scenario(name, spec, cfg, seeds)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    return _parse(text, name)


def load_scenario(source) -> Scenario:
    """Load a preset by name or a scenario file by path."""
    if isinstance(source, Scenario):
        return source
    src = str(source)
    if src in PRESETS:
        return preset(src)
    path = Path(src)
    if not path.exists():
        if path.suffix or "/" in src:
            raise FileNotFoundError(src)
        raise UnknownPreset(f"unknown preset {src!r}; available: {', '.join(sorted(PRESETS))}")
    return _parse(path.read_text(), path.stem)
