"""Experiment orchestration: 24-hour evaluation of the three policies,
metric aggregation and report comparison."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn as nn_mod
from . import power as power_mod
from . import sfc
from .csp import csp_provision
from .env import SUCCESS, SfcEnv
from .scenario import builtin_catalog
from .sfc import ChainError

POLICY_CSP = "csp"
POLICY_JOINT = "joint"
POLICY_FIXED = "fixed"


@dataclass
class SliceStats:
    latency_sum: float = 0.0
    links_sum: int = 0
    accepted: int = 0
    blocked: int = 0

    @property
    def avg_latency(self):
        return self.latency_sum / self.accepted if self.accepted else 0.0

    @property
    def avg_links(self):
        return self.links_sum / self.accepted if self.accepted else 0.0


@dataclass
class EvalReport:
    policy: str
    traffic_hash: str
    hourly_energy: list                  # HourlyEnergyReport per hour
    hourly_latency: list                 # (hour, avg_ms, accepted, blocked)
    per_slice: dict                      # service -> SliceStats
    records: list                        # accepted FlowRecord objects
    total_energy_kwh: float
    accepted: int
    blocked: int


def evaluate(policy, graph, trace, cfg, ckpt_path=None, catalog=None):
    """Run the 24-hour online-arrival evaluation for one policy."""
    catalog = catalog or builtin_catalog(cfg.traffic.cpu_demand_factor)
    if policy == POLICY_CSP:
        provision = _csp_provisioner(graph)
        graph.reset_ledger()
    else:
        provision = _learned_provisioner(policy, graph, cfg, catalog, ckpt_path)

    hourly_energy = []
    hourly_latency = []
    per_slice = {spec.service_id: SliceStats() for spec in catalog}
    records = []

    for hour in range(24):
        graph.reset_ledger()
        if hasattr(provision, "hour_boundary"):
            provision.hour_boundary(hour)
        hour_records = []
        blocked = 0
        for flow in trace.hours[hour]:
            record = provision(flow)
            stats = per_slice[flow.service_id]
            if record is None:
                stats.blocked += 1
                blocked += 1
            else:
                stats.accepted += 1
                stats.latency_sum += record.consumed_ms
                stats.links_sum += len(record.path_links)
                hour_records.append(record)
        records.extend(hour_records)
        rates = per_router_rates(graph, hour_records)
        hourly_energy.append(
            power_mod.hourly_energy(graph, rates, cfg.power, hour))
        if hour_records:
            avg = float(np.mean([r.consumed_ms for r in hour_records]))
        else:
            avg = 0.0
        hourly_latency.append((hour, avg, len(hour_records), blocked))

    return EvalReport(
        policy=policy,
        traffic_hash=trace.content_hash(),
        hourly_energy=hourly_energy,
        hourly_latency=hourly_latency,
        per_slice=per_slice,
        records=records,
        total_energy_kwh=sum(r.total_kwh for r in hourly_energy),
        accepted=sum(s.accepted for s in per_slice.values()),
        blocked=sum(s.blocked for s in per_slice.values()),
    )


def _csp_provisioner(graph):
    def provision(flow):
        result = csp_provision(flow, graph, graph.placement)
        return result.record if result.accepted else None
    return provision


def _learned_provisioner(policy, graph, cfg, catalog, ckpt_path):
    mode = sfc.MODE_JOINT if policy == POLICY_JOINT else sfc.MODE_FIXED
    env = SfcEnv(graph, catalog, mode, cfg.reward, cfg.power)
    if ckpt_path is None:
        raise ValueError(f"policy '{policy}' requires a checkpoint")
    params, meta = nn_mod.load_checkpoint(
        ckpt_path, expect={"n_nodes": graph.n_nodes,
                           "n_actions": env.n_actions})
    net = nn_mod.GcnActorCritic(graph.n_nodes, env.n_actions,
                                hidden=meta["hidden"], emb_dim=meta["emb_dim"])
    adj = nn_mod.normalized_adjacency(graph)

    class Provisioner:
        def hour_boundary(self, hour):
            env.hour_boundary(hour)

        def __call__(self, flow):
            try:
                obs = env.reset(flow)
            except ChainError:
                return None
            while True:
                mask = env.action_mask()
                if not mask.any() or env._pending_budget_fail:
                    env.step(0)
                    return None
                batch = nn_mod.batch_from_observations([obs])
                logits, _, _ = net.forward(params, adj, batch)
                probs = nn_mod.masked_distribution(logits[0], mask)
                outcome = env.step(int(np.argmax(probs)))
                if outcome.done:
                    if outcome.info["terminal_kind"] == SUCCESS:
                        return outcome.info["record"]
                    return None
                obs = outcome.observation

    return Provisioner()


def per_router_rates(graph, records):
    """Carried bit-rate per transport node: each accepted flow contributes
    its bandwidth once to every router its path traverses."""
    routers = set(graph.role_nodes("TRANSPORT"))
    rates = {}
    for record in records:
        nodes = set()
        if record.path_links:
            nodes.add(int(graph.link_src[record.path_links[0]]))
        for link in record.path_links:
            nodes.add(int(graph.link_dst[link]))
        for v in nodes & routers:
            rates[v] = rates.get(v, 0.0) + record.flow.bandwidth_mbps * 1e6
    return rates


def audit_report(report, graph):
    """Post-hoc constraint audit of every accepted flow; returns violations."""
    violations = []
    for record in report.records:
        violations.extend(
            f"{report.policy} flow {record.flow.flow_id}: {v}"
            for v in sfc.audit_record(record, graph))
    return violations


# --------------------------------------------------------------------------
# Report I/O
# --------------------------------------------------------------------------

def write_report(report, out_dir):
    """energy_hourly.csv, latency_hourly.csv, per_slice.csv + report.json."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "energy_hourly.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "policy", "node_kwh", "net_idle_kwh",
                    "net_dyn_kwh", "total_kwh"])
        for r in report.hourly_energy:
            w.writerow([r.hour, report.policy, _fmt(r.node_kwh),
                        _fmt(r.net_idle_kwh), _fmt(r.net_dyn_kwh),
                        _fmt(r.total_kwh)])
    with open(os.path.join(out_dir, "latency_hourly.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "policy", "avg_latency_ms", "accepted", "blocked"])
        for hour, avg, acc, blk in report.hourly_latency:
            w.writerow([hour, report.policy, _fmt(avg), acc, blk])
    with open(os.path.join(out_dir, "per_slice.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "service", "avg_latency_ms", "avg_links_used",
                    "accepted", "blocked"])
        for service, stats in report.per_slice.items():
            w.writerow([report.policy, service, _fmt(stats.avg_latency),
                        _fmt(stats.avg_links), stats.accepted, stats.blocked])
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump({
            "policy": report.policy,
            "traffic_hash": report.traffic_hash,
            "total_energy_kwh": report.total_energy_kwh,
            "accepted": report.accepted,
            "blocked": report.blocked,
        }, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _fmt(x):
    return format(float(x), ".10g")


@dataclass
class LoadedReport:
    policy: str
    traffic_hash: str
    hourly_total: list        # 24 total_kwh values
    total_energy_kwh: float
    slice_latency: dict       # service -> avg latency
    slice_accept: dict        # service -> acceptance rate


def load_report(report_dir):
    with open(os.path.join(report_dir, "report.json")) as fh:
        meta = json.load(fh)
    hourly = [0.0] * 24
    with open(os.path.join(report_dir, "energy_hourly.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            hourly[int(row["hour"])] = float(row["total_kwh"])
    slice_latency, slice_accept = {}, {}
    with open(os.path.join(report_dir, "per_slice.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            acc, blk = int(row["accepted"]), int(row["blocked"])
            slice_latency[row["service"]] = float(row["avg_latency_ms"])
            slice_accept[row["service"]] = acc / (acc + blk) if acc + blk else 0.0
    return LoadedReport(
        policy=meta["policy"],
        traffic_hash=meta["traffic_hash"],
        hourly_total=hourly,
        total_energy_kwh=meta["total_energy_kwh"],
        slice_latency=slice_latency,
        slice_accept=slice_accept,
    )


def compare(reports, out_path):
    """Write comparison rows: 24 hourly + 1 total + 6 slices.

    The first report is the reference; deltas and percentages are
    100*(other - ref)/ref.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    ref = reports[0]
    for other in reports[1:]:
        if other.traffic_hash != ref.traffic_hash:
            raise ValueError(
                f"traffic hash mismatch: {other.policy} evaluated on "
                f"{other.traffic_hash}, reference on {ref.traffic_hash}")

    names = [r.policy for r in reports]
    header = ["kind", "key", "metric"] + names
    for name in names[1:]:
        header += [f"{name}_delta", f"{name}_pct"]
    for name in names:
        header += [f"{name}_accept_rate"]

    def pct(a, b):
        return 100.0 * (a - b) / b if b else 0.0

    rows = []
    for hour in range(24):
        vals = [r.hourly_total[hour] for r in reports]
        row = ["hour", hour, "energy_kwh"] + [_fmt(v) for v in vals]
        for v in vals[1:]:
            row += [_fmt(v - vals[0]), _fmt(pct(v, vals[0]))]
        row += ["" for _ in names]
        rows.append(row)
    vals = [r.total_energy_kwh for r in reports]
    row = ["total", "all", "energy_kwh"] + [_fmt(v) for v in vals]
    for v in vals[1:]:
        row += [_fmt(v - vals[0]), _fmt(pct(v, vals[0]))]
    row += ["" for _ in names]
    rows.append(row)
    for service in ref.slice_latency:
        vals = [r.slice_latency.get(service, 0.0) for r in reports]
        row = ["slice", service, "avg_latency_ms"] + [_fmt(v) for v in vals]
        for v in vals[1:]:
            row += [_fmt(v - vals[0]), _fmt(pct(v, vals[0]))]
        row += [_fmt(r.slice_accept.get(service, 0.0)) for r in reports]
        rows.append(row)

    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return rows
