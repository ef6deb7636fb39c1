"""Batch runs over (policy, replication) cells and planner reports.

Every output file is written to a temporary name and moved into place, so a
reader never sees a half-written table.  Cells are flushed as they finish;
if a later cell fails, the manifest records the abort and what was written.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion import ScalingSchedule, build_h_map, compute_deviations, make_scaled_system
from .engine import POLICY_KINDS, SimConfig, run_simulation, summarize
from .network import SeedPlan
from .planner import (
    extract_basic_activities,
    feasible_region_membership,
    solve_lb_lp,
    solve_stability_lp,
)
from .scenario import Scenario, load_scenario


@dataclass(frozen=True)
class DeviationSettings:
    r: float
    slack: tuple = ()
    exponent: float = 0.75
    grid_points: int = 20


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: object  # preset name, file path or Scenario
    policies: tuple = ("gpd", "lb", "fcsq")
    replications: int = 1
    seed_base: int = 0
    out_dir: str = "results"
    beta: float | None = None
    clusters: tuple | None = None  # 0-based station tuples
    weights: tuple | None = None
    deviations: DeviationSettings | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replication count must be at least 1")
        if not self.policies:
            raise ValueError("policy list is empty")
        for p in self.policies:
            if p not in POLICY_KINDS:
                raise ValueError(f"unknown policy {p!r}; expected one of {POLICY_KINDS}")
        if (self.clusters is None) != (self.weights is None):
            raise ValueError("clusters and weights must be given together")


# --------------------------------------------------------------------------
# file helpers

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --------------------------------------------------------------------------
# trace export

REQUEST_COLUMNS = ("request", "ev_type", "station", "t_arrive", "t_start", "wait", "service")
OCCUPANCY_COLUMNS = ("t", "station", "busy", "queue_len")
DELAY_COLUMNS = ("station", "t_arrive", "wait")
COMPARISON_COLUMNS = ("policy", "replication", "seed", "requests", "max_wait", "mean_wait", "zero_wait_fraction", "delay_inequality")


def requests_csv(trace) -> str:
    rows = (
        (k, int(trace.ev_type[k]) + 1, int(trace.station[k]) + 1, trace.t_arrive[k], trace.t_start[k],
         trace.t_start[k] - trace.t_arrive[k], trace.service[k])
        for k in range(trace.n_requests)
    )
    return _csv_text(REQUEST_COLUMNS, rows)


def occupancy_csv(trace) -> str:
    rows = (
        (trace.occ_time[k], int(trace.occ_station[k]) + 1, int(trace.occ_busy[k]), int(trace.occ_queue[k]))
        for k in range(trace.occ_time.size)
    )
    return _csv_text(OCCUPANCY_COLUMNS, rows)


def delays_csv(summary) -> str:
    rows = []
    for j, (t, w) in sorted(summary.delay_series.items()):
        rows.extend((j + 1, float(a), float(b)) for a, b in zip(t, w))
    return _csv_text(DELAY_COLUMNS, rows)


def summary_dict(summary) -> dict:
    return {
        "requests": summary.requests,
        "max_wait": summary.max_wait,
        "mean_wait": summary.mean_wait,
        "zero_wait_fraction": summary.zero_wait_fraction,
        "delay_inequality": summary.delay_inequality,
        "horizon": summary.horizon,
        "routing_rates": summary.routing_rates,
        "stations": [
            {
                "station": s.station + 1,
                "served": s.served,
                "max_wait": s.max_wait,
                "mean_wait": s.mean_wait,
                "zero_wait_fraction": s.zero_wait_fraction,
                "mean_queue_length": s.mean_queue_length,
            }
            for s in summary.stations
        ],
    }


def deviations_csv(dev) -> str:
    rows = []
    for k, t in enumerate(dev.grid):
        if dev.q_hat is not None:
            rows.extend((dev.r, dev.beta, "q", f"{j + 1}", t, dev.q_hat[k, j]) for j in range(dev.q_hat.shape[1]))
        n_ev, n_ch = dev.a_hat.shape[1:]
        rows.extend((dev.r, dev.beta, "a", f"{i + 1}-{j + 1}", t, dev.a_hat[k, i, j]) for i in range(n_ev) for j in range(n_ch))
    return _csv_text(("r", "beta", "series", "key", "t", "value"), rows)


# --------------------------------------------------------------------------
# planning helpers

def planning_graph(scenario: Scenario, arrival_rates=None):
    """Basic activity graph used by FCSQ.

    Taken from the load-balancing LP when the scenario defines clusters
    (zero-cost optima are otherwise highly non-unique), else from the
    stability LP.
    """
    spec = scenario.spec if arrival_rates is None else scenario.spec.with_arrival_rates(arrival_rates)
    pol = scenario.config.policy
    if pol.clusters:
        sol = solve_lb_lp(spec, pol.clusters, pol.weights)
    else:
        sol = solve_stability_lp(spec)
    if not sol.optimal:
        return sol, None
    return sol, extract_basic_activities(sol)


def _resolve(plan: ExperimentPlan) -> Scenario:
    sc = load_scenario(plan.scenario)
    pol = sc.config.policy
    if plan.beta is not None:
        pol = pol.with_beta(plan.beta)
    if plan.clusters is not None:
        pol = replace(pol, clusters=tuple(tuple(c) for c in plan.clusters), weights=tuple(plan.weights))
    return replace(sc, config=replace(sc.config, policy=pol))


@dataclass
class CellResult:
    policy: str
    replication: int
    seed: int
    summary: object
    files: list = field(default_factory=list)


def _run_cell(args):
    sc, kind, rep, seed, out_dir, schedule, graph, dev_points = args
    spec = sc.spec
    pol = sc.policy(kind)
    if schedule is not None:
        spec = make_scaled_system(spec, schedule)
        pol = pol.with_beta(schedule.beta)
    cfg = replace(sc.config, policy=pol)
    seeds = SeedPlan(seed, sc.seeds.overrides)
    trace = run_simulation(spec, cfg, seeds, basic_graph=graph)
    summ = summarize(trace)
    cell = Path(out_dir) / "cells" / f"{kind}-rep{rep}"
    files = {
        "requests.csv": requests_csv(trace),
        "occupancy.csv": occupancy_csv(trace),
        "delays.csv": delays_csv(summ),
        "summary.json": _json_text(summary_dict(summ)),
    }
    if schedule is not None:
        base_sol = solve_stability_lp(sc.spec)
        if base_sol.optimal and trace.arrival_horizon > 0:
            grid = np.linspace(0.0, trace.arrival_horizon, dev_points)
            files["deviations.csv"] = deviations_csv(compute_deviations(trace, base_sol, schedule, grid))
    written = []
    for name, text in files.items():
        _atomic_write(cell / name, text)
        written.append(str(Path("cells") / f"{kind}-rep{rep}" / name))
    return CellResult(kind, rep, seed, summ, written)


def run_experiment(plan: ExperimentPlan) -> dict:
    """Run every (policy, replication) cell and write the comparison table.

    Returns the manifest dictionary that is also written to ``manifest.json``.
    """
    sc = _resolve(plan)
    out = Path(plan.out_dir)
    schedule = None
    if plan.deviations is not None:
        d = plan.deviations
        schedule = ScalingSchedule(d.r, tuple(int(n) for n in sc.spec.pool_sizes), tuple(d.slack), d.exponent)
    graph = None
    if "fcsq" in plan.policies:
        _, graph = planning_graph(sc)
        if graph is None:
            raise ValueError("FCSQ needs a feasible scenario to build its basic activity graph")

    cells = [
        (sc, kind, rep, plan.seed_base + rep, str(out), schedule, graph if kind == "fcsq" else None,
         plan.deviations.grid_points if plan.deviations else 0)
        for rep in range(plan.replications)
        for kind in plan.policies
    ]
    manifest = {
        "version": __version__,
        "scenario": sc.to_dict(),
        "policies": list(plan.policies),
        "replications": plan.replications,
        "seed_base": plan.seed_base,
        "deviations": None if plan.deviations is None else {
            "r": plan.deviations.r,
            "slack": list(plan.deviations.slack),
            "exponent": plan.deviations.exponent,
            "grid_points": plan.deviations.grid_points,
        },
        "basic_activities": None if graph is None else graph.edge_list(),
        "status": "running",
        "files": [],
    }
    results = []
    try:
        if plan.jobs > 1:
            with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
                for res in pool.map(_run_cell, cells):
                    results.append(res)
                    manifest["files"].extend(res.files)
        else:
            for args in cells:
                res = _run_cell(args)
                results.append(res)
                manifest["files"].extend(res.files)
    except BaseException as exc:
        manifest["status"] = "aborted"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        _atomic_write(out / "manifest.json", _json_text(manifest))
        raise

    _atomic_write(out / "comparison.csv", comparison_csv(results))
    manifest["files"].append("comparison.csv")
    manifest["status"] = "complete"
    _atomic_write(out / "manifest.json", _json_text(manifest))
    manifest["results"] = results
    return manifest


def comparison_rows(results) -> list[tuple]:
    rows = [
        (r.policy, r.replication, r.seed, r.summary.requests, r.summary.max_wait, r.summary.mean_wait,
         r.summary.zero_wait_fraction, r.summary.delay_inequality)
        for r in results
    ]
    for kind in dict.fromkeys(r.policy for r in results):
        sel = [r.summary for r in results if r.policy == kind]
        rows.append((
            kind, "median", "", int(np.median([s.requests for s in sel])),
            float(np.median([s.max_wait for s in sel])),
            float(np.median([s.mean_wait for s in sel])),
            float(np.median([s.zero_wait_fraction for s in sel])),
            float(np.median([s.delay_inequality for s in sel])),
        ))
    return rows


def comparison_csv(results) -> str:
    return _csv_text(COMPARISON_COLUMNS, comparison_rows(results))


# --------------------------------------------------------------------------
# planner report

def _phase_report(spec, clusters, weights) -> dict:
    stab = solve_stability_lp(spec)
    region = feasible_region_membership(spec)
    rep = {
        "arrival_rates": spec.arrival_rates.tolist(),
        "stability_lp": stab.to_dict(),
        "objective_is_infinite": not stab.optimal,
        "feasible_region": {
            "in_lambda": region.in_lambda,
            "max_min_slack": region.max_min_slack,
            "slack": None if region.slack is None else region.slack.tolist(),
        },
    }
    if clusters:
        rep["lb_lp"] = solve_lb_lp(spec, clusters, weights).to_dict()
    return rep


def solve_and_report(scenario, out_dir=None, with_h_map: bool = False) -> dict:
    """LP solutions, feasibility and the basic activity graph for every arrival phase.

    With ``out_dir`` the report is written as ``planner.json`` plus
    ``edges.csv`` (and ``h_map.csv`` when requested and the graph is a forest).
    """
    sc = load_scenario(scenario)
    pol = sc.config.policy
    phases = [sc.spec]
    if sc.config.rate_switch is not None:
        phases.append(sc.spec.with_arrival_rates(sc.config.rate_switch.arrival_rates))
    report = {"scenario": sc.name, "phases": [_phase_report(s, pol.clusters, pol.weights) for s in phases]}

    sol, graph = planning_graph(sc)
    report["basic_activities"] = None if graph is None else {
        "edges": graph.edge_list(),
        "is_forest": graph.is_forest,
        "components": [[sorted(i + 1 for i in e), sorted(j + 1 for j in c)] for e, c in graph.components],
    }
    hmap = None
    if with_h_map and graph is not None:
        if graph.is_forest:
            hmap = build_h_map(graph, sc.spec.service_rates)
            report["h_map"] = {
                "edges": [(i + 1, j + 1) for i, j in hmap.edges],
                "coefficients": hmap.coefficients.tolist(),
            }
        else:
            report["h_map"] = None
            report["h_map_note"] = "basic activity graph has a cycle; no H map"

    if out_dir is not None:
        out = Path(out_dir)
        _atomic_write(out / "planner.json", _json_text(report))
        if graph is not None:
            _atomic_write(out / "edges.csv", _csv_text(("ev_type", "station"), graph.edge_list()))
        if hmap is not None:
            header = ("ev_type", "station") + tuple(f"v{i + 1}" for i in range(hmap.n_ev))
            rows = [(i + 1, j + 1, *hmap.coefficients[k]) for k, (i, j) in enumerate(hmap.edges)]
            _atomic_write(out / "h_map.csv", _csv_text(header, rows))
    return report
