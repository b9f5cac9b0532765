"""Command line: ``mapc run | sweep-obsspd | baseline-suite | coexist | replay``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import mac, metrics, runner, topology
from .llm_gateway import ConfigurationError

EXIT_OK, EXIT_RUN_ERROR, EXIT_USAGE = 0, 1, 2


def _add_run(sub):
    p = sub.add_parser("run", help="run agentic TXOPs over seeds and write round logs")
    # each flag maps to exactly one RunConfig field
    p.add_argument("--config", help="YAML file mirroring RunConfig fields")
    p.add_argument("--scenario", help="co-tdma | co-sr | random")
    p.add_argument("--k", type=int, help="number of APs")
    p.add_argument("--policy", choices=runner.POLICIES)
    p.add_argument("--rounds", type=int, help="negotiation rounds T")
    p.add_argument("--slots", type=int, help="slots per round L")
    p.add_argument("--seeds", help="e.g. 0..9 or 1,3,5")
    p.add_argument("--ablate", dest="ablations", help="comma list of " + ",".join(runner.ABLATIONS))
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes for the seed fan-out")
    p.add_argument("--kb-dir", dest="kb_dir", help="directory with ap<i>.json knowledge bases to start from")
    p.add_argument("--save-kb", dest="save_kb", action="store_const", const=True, help="write final knowledge bases under OUT/kb")


def _add_sweep(sub):
    p = sub.add_parser("sweep-obsspd", help="OBSS/PD threshold x power sweep per seed")
    p.add_argument("--scenario", default="co-sr")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seeds", default="0..9")
    p.add_argument("--horizon-us", type=int, default=1_000_000)
    p.add_argument("--out", default="out")


def _add_suite(sub):
    p = sub.add_parser("baseline-suite", help="4 scenarios x {obss_pd-best, csma-legacy, genie, heuristic}")
    p.add_argument("--seeds", default="0..9")
    p.add_argument("--horizon-us", type=int, default=1_000_000)
    p.add_argument("--rounds", type=int, default=18)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="out")


def _add_coexist(sub):
    p = sub.add_parser("coexist", help="legacy throughput with and without two agentic APs")
    p.add_argument("--seeds", default="0..9")
    p.add_argument("--policy", default="heuristic", choices=("heuristic", "genie"))
    p.add_argument("--horizon-us", type=int, default=runner.COEXIST_HORIZON_US)
    p.add_argument("--skip-rounds", action="store_true", help="measure legacy airtime only; agentic grants stay empty")
    p.add_argument("--out", default="out")


def _add_replay(sub):
    p = sub.add_parser("replay", help="re-derive metrics from round logs and cross-check stored values")
    p.add_argument("--log", nargs="+", required=True, help="round log file(s)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mapc", description="Multi-AP coordination simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_sweep(sub)
    _add_suite(sub)
    _add_coexist(sub)
    _add_replay(sub)
    return ap


def cmd_run(args) -> int:
    fields = ("scenario", "k", "policy", "rounds", "slots", "seeds", "ablations", "out", "workers", "kb_dir", "save_kb")
    overrides = {f: getattr(args, f) for f in fields}
    cfg = runner.load_config(args.config, overrides)
    res = runner.run_experiment(cfg)
    for seed, rep in sorted(res.reports.items()):
        print(f"seed {seed}: total {rep.total_normalized:.3f} collisions {rep.collision_rate:.3f} idle {rep.idle_rate:.3f}")
    for seed, err in sorted(res.errors.items()):
        print(f"seed {seed}: ERROR {err}", file=sys.stderr)
    if res.summary_csv:
        print(f"summary: {res.summary_csv}")
    return EXIT_OK if res.status == 0 else EXIT_RUN_ERROR


def cmd_sweep(args) -> int:
    seeds = runner.parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in seeds:
        sc = topology.generate_scenario(args.scenario, args.k, s)
        sw = mac.sweep_obss_pd(sc, seed=s, horizon_us=args.horizon_us)
        for th, pw, thr in sw.rows:
            rows.append({"seed": s, "threshold_dbm": th, "tx_power_dbm": pw, "normalized": thr})
        print(f"seed {s}: best {sw.best_throughput:.3f} at {sw.best_threshold_dbm:g} dBm / {sw.best_tx_power_dbm:g} dBm")
    metrics.write_csv(out / f"obsspd-{args.scenario}-k{args.k}.csv", rows, ("seed", "threshold_dbm", "tx_power_dbm", "normalized"))
    return EXIT_OK


def cmd_suite(args) -> int:
    res = runner.run_baseline_suite(seeds=runner.parse_seeds(args.seeds), horizon_us=args.horizon_us, rounds=args.rounds, workers=args.workers, out=args.out)
    for r in res.rows:
        print(f"{r['scenario']:8s} k={r['k']} {r['method']:13s} {r['mean']:.3f} +/- {r['std']:.3f}")
    print(f"table: {res.csv_path}")
    return EXIT_OK


def cmd_coexist(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in runner.parse_seeds(args.seeds):
        r = runner.run_coexistence(s, policy=args.policy, horizon_us=args.horizon_us, negotiate=not args.skip_rounds)
        for ap in r.legacy_aps:
            rows.append({"seed": s, "ap": ap, "with_agents": r.legacy_with_agents[ap], "legacy_only": r.legacy_only[ap], "ratio": r.ratios[ap]})
        print(f"seed {s}: ratios " + " ".join(f"AP{ap}={v:.3f}" for ap, v in r.ratios.items()) + f"; agentic {r.agentic_normalized:.3f}")
    metrics.write_csv(out / "coexistence.csv", rows, ("seed", "ap", "with_agents", "legacy_only", "ratio"))
    return EXIT_OK


def cmd_replay(args) -> int:
    status = EXIT_OK
    for p in args.log:
        r = runner.replay(p)
        summary = json.dumps(r.report.to_dict()) if r.report else "{}"
        print(f"{p}: {'OK' if r.ok else 'MISMATCH'} {summary}")
        for prob in r.problems:
            print(f"  {prob}")
        if not r.ok:
            status = EXIT_RUN_ERROR
    return status


COMMANDS = {"run": cmd_run, "sweep-obsspd": cmd_sweep, "baseline-suite": cmd_suite, "coexist": cmd_coexist, "replay": cmd_replay}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (runner.ConfigError, ConfigurationError, topology.InfeasibleConfiguration) as exc:
        print(f"mapc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
