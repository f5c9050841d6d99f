"""Command-line interface: gen-scenario, gen-traffic, train, eval, compare."""

from __future__ import annotations

import argparse
import os
import sys

from . import ppo, runner
from .config import config_hash, load_config
from .scenario import (TrafficTrace, builtin_catalog, generate_topology,
                       generate_traffic, read_scenario, write_scenario)
from .topology import load_topology


def _common(parser):
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sfclab",
        description="O-RAN SFC provisioning lab: scenario generation, "
                    "training, evaluation and comparison")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenario", help="generate a scenario document")
    _common(p)

    p = sub.add_parser("gen-traffic", help="generate a 24-hour traffic trace")
    _common(p)
    p.add_argument("--scenario", default=None,
                   help="scenario JSON (default <out>/scenario.json)")

    p = sub.add_parser("train", help="train a policy")
    _common(p)
    p.add_argument("--mode", choices=["joint", "fixed"], required=True)
    p.add_argument("--scenario", default=None)
    p.add_argument("--traffic", default=None)

    p = sub.add_parser("eval", help="evaluate a policy over 24 hours")
    _common(p)
    p.add_argument("--policy", choices=["joint", "fixed", "csp"], required=True)
    p.add_argument("--scenario", default=None)
    p.add_argument("--traffic", default=None)
    p.add_argument("--ckpt", default=None,
                   help="checkpoint for learned policies")

    p = sub.add_parser("compare", help="compare evaluation reports")
    _common(p)
    p.add_argument("reports", nargs="+",
                   help="report directories written by eval (first is the "
                        "reference)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    digest = config_hash(cfg)

    scenario_path = getattr(args, "scenario", None) or os.path.join(
        args.out, "scenario.json")
    traffic_path = getattr(args, "traffic", None) or os.path.join(
        args.out, "traffic.csv")

    if args.command == "gen-scenario":
        doc = generate_topology(cfg.scenario, args.seed,
                                traffic_params=cfg.traffic)
        write_scenario(doc, scenario_path)
        print(f"wrote {scenario_path}")
        return 0

    if args.command == "gen-traffic":
        graph = load_topology(read_scenario(scenario_path))
        catalog = builtin_catalog(cfg.traffic.cpu_demand_factor)
        trace = generate_traffic(catalog, graph.role_nodes("RU"),
                                 cfg.traffic.profile, args.seed,
                                 cfg.traffic.uplink_fraction)
        trace.save(traffic_path)
        print(f"wrote {traffic_path} ({trace.n_flows()} flows)")
        return 0

    if args.command == "train":
        graph = load_topology(read_scenario(scenario_path))
        catalog = builtin_catalog(cfg.traffic.cpu_demand_factor)
        trace = TrafficTrace.load(traffic_path)
        cfg.train.seed = args.seed
        mode = "JOINT" if args.mode == "joint" else "FIXED"
        ckpt, curve = ppo.train(graph, catalog, trace, mode, cfg, args.out,
                                config_digest=digest)
        print(f"wrote {ckpt}")
        print(f"wrote {curve}")
        return 0

    if args.command == "eval":
        graph = load_topology(read_scenario(scenario_path))
        trace = TrafficTrace.load(traffic_path)
        report = runner.evaluate(args.policy, graph, trace, cfg,
                                 ckpt_path=args.ckpt)
        report_dir = os.path.join(args.out, args.policy)
        runner.write_report(report, report_dir)
        violations = runner.audit_report(report, graph)
        if violations:
            for v in violations:
                print(f"AUDIT VIOLATION: {v}", file=sys.stderr)
            return 1
        print(f"wrote {report_dir} (accepted {report.accepted}, "
              f"blocked {report.blocked}, "
              f"total {report.total_energy_kwh:.3f} kWh)")
        return 0

    if args.command == "compare":
        reports = [runner.load_report(d) for d in args.reports]
        out_path = os.path.join(args.out, "comparison.csv")
        runner.compare(reports, out_path)
        print(f"wrote {out_path}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
