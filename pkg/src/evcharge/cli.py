"""Command-line entry point: ``evcharge run``, ``evcharge solve``, ``evcharge presets``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import EvChargeError
from .experiment import DeviationSettings, ExperimentPlan, run_experiment, solve_and_report
from .scenario import PRESETS, preset


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _clusters(text):
    """``"1,2,3;2,3"`` -> ``((0, 1, 2), (1, 2))``."""
    out = []
    for part in text.split(";"):
        idx = [int(x) for x in part.split(",") if x.strip()]
        if not idx or min(idx) < 1:
            raise argparse.ArgumentTypeError(f"bad cluster {part!r}; use 1-based station indices")
        out.append(tuple(j - 1 for j in idx))
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evcharge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate policies over replications and write comparison tables")
    run.add_argument("scenario", help="preset name or path to a TOML scenario file")
    run.add_argument("--policies", default="gpd,lb,fcsq", help="comma-separated subset of gpd,lb,fcsq,greedy")
    run.add_argument("--replications", type=int, default=1)
    run.add_argument("--seed-base", type=int, default=0)
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--beta", type=float, default=None, help="override the scenario's beta")
    run.add_argument("--clusters", type=_clusters, default=None, help='LB clusters, e.g. "1,2,3" or "1,2;2,3"')
    run.add_argument("--weights", type=_floats, default=None, help="one weight per cluster, comma-separated")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    run.add_argument("--scale", type=float, default=None, metavar="R",
                     help="run the square-root staffed R-th system and export deviation series")
    run.add_argument("--slack", type=_floats, default=(), help="staffing slack n_j per station")
    run.add_argument("--exponent", type=float, default=0.75, help="beta = R ** -exponent")
    run.add_argument("--grid-points", type=int, default=20)

    solve = sub.add_parser("solve", help="solve the routing LPs and report duals and basic activities")
    solve.add_argument("scenario")
    solve.add_argument("--out", default=None, help="also write planner.json / edges.csv here")
    solve.add_argument("--h-map", action="store_true", help="include the deviation-splitting map")

    sub.add_parser("presets", help="list built-in scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name in sorted(PRESETS):
                print(f"{name:12s} {preset(name).description}")
            return 0
        if args.command == "solve":
            report = solve_and_report(args.scenario, args.out, args.h_map)
            print(json.dumps(report, indent=2, sort_keys=True))
            return 0
        policies = tuple(p.strip() for p in args.policies.split(",") if p.strip())
        dev = None
        if args.scale is not None:
            dev = DeviationSettings(args.scale, args.slack, args.exponent, args.grid_points)
        plan = ExperimentPlan(
            scenario=args.scenario,
            policies=policies,
            replications=args.replications,
            seed_base=args.seed_base,
            out_dir=args.out,
            beta=args.beta,
            clusters=args.clusters,
            weights=args.weights,
            deviations=dev,
            jobs=args.jobs,
        )
        manifest = run_experiment(plan)
        print(f"wrote {len(manifest['files'])} files to {args.out}")
        with open(f"{args.out}/comparison.csv") as fh:
            sys.stdout.write(fh.read())
        return 0
    except (EvChargeError, ValueError, FileNotFoundError) as exc:
        print(f"evcharge: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
