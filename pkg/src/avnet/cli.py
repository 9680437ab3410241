"""Command line entry point: run, validate, analyze and attack-suite."""

from __future__ import annotations

import argparse
import sys

from .analysis import BeaconModel, CrowdsourceConfig, ldm_discrepancy, mean_broadcasters, pki_load, tabulate
from .cohort import Cohort
from .errors import AvnetError, InvariantBreach, ScenarioError


def _open(path: str):
    return sys.stdout if path == "-" else open(path, "w")


def cmd_run(args) -> int:
    from .sim import load, run_scenario

    scenario = load(args.scenario)
    trace = run_scenario(scenario, seed=args.seed, checked=args.checked)
    if args.trace:
        fh = _open(args.trace)
        try:
            trace.write_jsonl(fh)
        finally:
            if fh is not sys.stdout:
                fh.close()
    text = trace.metrics_lines() + "\n"
    if args.metrics:
        fh = _open(args.metrics)
        try:
            fh.write(text)
        finally:
            if fh is not sys.stdout:
                fh.close()
    if not args.metrics or args.metrics != "-":
        sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    from .sim import load

    s = load(args.scenario)
    print(f"ok: {s.name} ({len(s.vehicles)} vehicles, {len(s.cohorts)} cohorts, {len(s.events)} events, {len(s.attacks)} attacks)")
    return 0


def cmd_analyze(args) -> int:
    if args.model == "ldm":
        d = ldm_discrepancy(BeaconModel(args.velocity, args.frequency, args.lost))
        print(f"discrepancy_m={d:g}")
    elif args.model == "pki":
        load = pki_load(args.vehicles, args.frequency, args.verify_time)
        print(f"utilization={load.utilization:.6g}")
        print(f"thrashing={str(load.thrashing).lower()}")
    else:
        cfg = CrowdsourceConfig(args.mode, args.p)
        mean = mean_broadcasters(Cohort(0, 1, tuple(range(1, args.n + 1))), args.rounds, cfg, args.seed)
        print(f"mean_broadcasters={mean:.6g}")
    return 0


def cmd_attack_suite(args) -> int:
    from .sim import load
    from .sim.attacks import attack_suite

    base = load(args.scenario)
    rows = attack_suite(base, args.kinds, attacker=args.attacker, seed=args.seed)
    print(tabulate(rows))
    attacked = [r for r in rows if r["attack"] != "none"]
    ok = all(r["detection_rate"] == 1.0 and r["forged_accepted"] == 0 for r in attacked) and rows[0]["false_positives"] == 0
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    from .sim.attacks import CORPUS_KINDS
    from .security import ATTACK_KINDS

    p = argparse.ArgumentParser(prog="avnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or bundled scenario name")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--checked", action="store_true", help="assert every invariant after every event")
    r.add_argument("--trace", metavar="PATH", help="write the JSON-lines trace here ('-' for stdout)")
    r.add_argument("--metrics", metavar="PATH", help="write key=value metrics here ('-' for stdout)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="validate a scenario without running it")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="closed-form side models")
    models = a.add_subparsers(dest="model", required=True)
    ldm = models.add_parser("ldm", help="LDM position discrepancy after lost beacons")
    ldm.add_argument("--velocity", type=float, required=True)
    ldm.add_argument("--frequency", type=float, required=True)
    ldm.add_argument("--lost", type=int, default=1)
    pki = models.add_parser("pki", help="signature verification load")
    pki.add_argument("--vehicles", type=float, required=True)
    pki.add_argument("--frequency", type=float, required=True)
    pki.add_argument("--verify-time", type=float, required=True)
    crowd = models.add_parser("crowd", help="crowdsourcing broadcasters per round")
    crowd.add_argument("--n", type=int, required=True, help="cohort size")
    crowd.add_argument("--mode", choices=("deterministic", "probabilistic"), default="deterministic")
    crowd.add_argument("--p", type=float, default=0.1)
    crowd.add_argument("--rounds", type=int, default=1000)
    crowd.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("attack-suite", help="attack corpus against a base scenario plus its attack-free twin")
    s.add_argument("scenario")
    s.add_argument("--kinds", nargs="+", choices=ATTACK_KINDS, default=list(CORPUS_KINDS))
    s.add_argument("--attacker", type=int, default=None, help="attacking vehicle id (default: rank 4 of the first cohort)")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_attack_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InvariantBreach as e:
        print(f"invariant breach: {e} at {e.event}", file=sys.stderr)
        return 3
    except (AvnetError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
