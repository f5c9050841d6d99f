"""Synthetic scenarios: service catalog, topology generation, placement, traffic.

The service catalog carries the six reference services (cloud gaming, AR,
VoIP, video streaming, massive IoT, Industry 4.0) with their chains,
bandwidth, latency budgets and hourly request ranges.  Topology generation
builds a connected random geometric transport backbone with compute and RU
nodes attached, keeping every out-degree at or below 8.  Placement runs a
greedy demand-weighted p-center over candidate compute sites and derives the
fixed 1:1 mappings used by the baselines.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from .topology import UNREACHABLE, TopologyError, load_topology

MAX_OUT_DEGREE = 8
BACKBONE_DEGREE_CAP = 5  # leaves 3+ slots per transport node for attachments

UPLINK = "UPLINK"
DOWNLINK = "DOWNLINK"

UPLINK_CHAIN = ("RU", "DU", "CU", "UPF")
DOWNLINK_CHAIN = ("UPF", "CU", "DU", "RU")


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    service_class: str                 # eMBB / mMTC / uRLLC
    chain_uplink: tuple | None
    chain_downlink: tuple | None
    bandwidth_mbps: float | tuple      # fixed value or (lo, hi) range
    latency_budget_ms: float
    requests_per_hour: tuple           # (lo, hi)
    cpu_demand_factor: float = 0.1


@dataclass(frozen=True)
class FlowRequest:
    flow_id: int
    service_id: str
    hour: int
    source_ru: int
    direction: str
    bandwidth_mbps: float
    latency_budget_ms: float
    cpu_demand: float


@dataclass
class TrafficTrace:
    hours: list           # 24 lists of FlowRequest
    seed: int

    def all_flows(self):
        return [f for hour in self.hours for f in hour]

    def n_flows(self):
        return sum(len(h) for h in self.hours)

    def to_csv_bytes(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["flow_id", "hour", "service", "source_ru", "direction",
                         "bandwidth_mbps", "latency_budget_ms", "cpu_demand"])
        for flow in self.all_flows():
            writer.writerow([flow.flow_id, flow.hour, flow.service_id,
                             flow.source_ru, flow.direction,
                             format(flow.bandwidth_mbps, ".10g"),
                             format(flow.latency_budget_ms, ".10g"),
                             format(flow.cpu_demand, ".10g")])
        return buf.getvalue().encode()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())

    def content_hash(self):
        return hashlib.sha256(self.to_csv_bytes()).hexdigest()[:16]

    @classmethod
    def load(cls, path):
        hours = [[] for _ in range(24)]
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                flow = FlowRequest(
                    flow_id=int(row["flow_id"]),
                    service_id=row["service"],
                    hour=int(row["hour"]),
                    source_ru=int(row["source_ru"]),
                    direction=row["direction"],
                    bandwidth_mbps=float(row["bandwidth_mbps"]),
                    latency_budget_ms=float(row["latency_budget_ms"]),
                    cpu_demand=float(row["cpu_demand"]),
                )
                hours[flow.hour].append(flow)
        return cls(hours=hours, seed=-1)


def builtin_catalog(cpu_demand_factor=0.1):
    """The six reference services; order is the categorical service index."""
    f = cpu_demand_factor
    return [
        ServiceSpec("CG", "eMBB", None, DOWNLINK_CHAIN, 4.0, 80.0, (40, 55), f),
        ServiceSpec("AR", "eMBB", None, DOWNLINK_CHAIN, 100.0, 20.0, (1, 4), f),
        ServiceSpec("VoIP", "eMBB", UPLINK_CHAIN, DOWNLINK_CHAIN, 0.064, 100.0,
                    (100, 200), f),
        ServiceSpec("VS", "eMBB", None, DOWNLINK_CHAIN, 4.0, 100.0, (50, 100), f),
        ServiceSpec("MIoT", "mMTC", UPLINK_CHAIN, None, (1.0, 50.0), 10.0,
                    (10, 15), f),
        ServiceSpec("I40", "uRLLC", UPLINK_CHAIN, DOWNLINK_CHAIN, 70.0, 15.0,
                    (1, 4), f),
    ]


def service_index(catalog):
    return {spec.service_id: i for i, spec in enumerate(catalog)}


# --------------------------------------------------------------------------
# Topology generation
# --------------------------------------------------------------------------

def generate_topology(params, seed, catalog=None, traffic_params=None):
    """Build a scenario document: backbone, attached compute/RU nodes, placement.

    Deterministic under (params, seed).  Raises TopologyError if the node
    counts cannot be attached within the degree cap after bounded retries.
    """
    from .config import TrafficParams

    if min(params.n_ru, params.n_du, params.n_cu, params.n_upf,
           params.n_transport) <= 0:
        raise TopologyError("all node counts must be > 0")
    if params.avg_degree < 2:
        raise TopologyError("avg_degree must be >= 2")

    catalog = catalog or builtin_catalog()
    traffic_params = traffic_params or TrafficParams()
    n_roles = params.n_du + params.n_cu + params.n_upf
    n_compute = params.n_compute or max(n_roles, int(round(1.25 * n_roles)))
    if n_compute < n_roles:
        raise TopologyError("n_compute smaller than the number of role sites")

    last_err = None
    for attempt in range(8):
        rng = np.random.default_rng((seed, attempt))
        try:
            doc = _build_topology_doc(params, n_compute, rng)
            break
        except TopologyError as err:
            last_err = err
    else:
        raise TopologyError(f"infeasible parameters: {last_err}")

    graph = load_topology(doc)
    # Peak-hour demand (profile 1.0) drives the p-center placement.
    peak = generate_traffic(
        catalog, graph.role_nodes("RU"), [1.0] * 24, seed,
        uplink_fraction=traffic_params.uplink_fraction)
    counts = {"DU": params.n_du, "CU": params.n_cu, "UPF": params.n_upf}
    placement, sites = place_functions(graph, counts, peak)

    # Write roles for selected sites; demote unselected candidates to routers.
    selected = {v for vs in sites.values() for v in vs}
    for nd in doc["nodes"]:
        if nd["roles"] == [] and nd["cpu_capacity"] > 0:
            nid = nd["id"]
            role = next((r for r, vs in sites.items() if nid in vs), None)
            if role is None:
                nd["roles"] = ["TRANSPORT"]
                nd["cpu_capacity"] = 0.0
                nd["proc_delay"] = {}
            else:
                nd["roles"] = [role]
    doc["placement"] = {
        "ru_to_du": {str(k): v for k, v in sorted(placement["ru_to_du"].items())},
        "du_to_cu": {str(k): v for k, v in sorted(placement["du_to_cu"].items())},
        "upf_of_service": dict(sorted(placement["upf_of_service"].items())),
    }
    doc["meta"] = {"seed": seed, "name": params.name}
    assert selected == {v for vs in sites.values() for v in vs}
    return doc


def _build_topology_doc(params, n_compute, rng):
    n_t = params.n_transport
    pos_t = rng.uniform(0.0, params.area_km, size=(n_t, 2))

    edges = set()
    if n_t > 1:
        diff = pos_t[:, None, :] - pos_t[None, :, :]
        dmat = np.sqrt((diff ** 2).sum(axis=2))
        order = np.argsort(dmat, axis=1, kind="stable")
        k = min(params.avg_degree, n_t - 1)
        for v in range(n_t):
            for u in order[v, 1:k + 1]:
                edges.add((min(v, int(u)), max(v, int(u))))
        mst = minimum_spanning_tree(dmat)
        for v, u in zip(*mst.nonzero()):
            edges.add((min(int(v), int(u)), max(int(v), int(u))))
        edges = _cap_backbone_degree(edges, dmat, n_t)

    degree = [0] * n_t
    for v, u in edges:
        degree[v] += 1
        degree[u] += 1

    def attach(point, cap=MAX_OUT_DEGREE):
        """Nearest transport node with spare degree."""
        dists = np.sqrt(((pos_t - point) ** 2).sum(axis=1))
        for t in np.argsort(dists, kind="stable"):
            if degree[int(t)] < cap:
                degree[int(t)] += 1
                return int(t), float(dists[int(t)])
        raise TopologyError("cannot attach node: all transport nodes at degree cap")

    # Node id layout: transports, compute candidates, RUs.
    nodes = []
    links = []
    proc = {spec.service_id: params.compute_proc_delay_ms
            for spec in builtin_catalog()}
    for v in range(n_t):
        nodes.append({"id": v, "roles": ["TRANSPORT"], "cpu_capacity": 0.0,
                      "proc_delay": {}})

    def km_to_ms(km):
        return max(km, 0.05) * params.delay_per_km_ms

    next_id = n_t
    for _ in range(n_compute):
        point = rng.uniform(0.0, params.area_km, size=2)
        t, dist = attach(point)
        nodes.append({"id": next_id, "roles": [],
                      "cpu_capacity": params.compute_cpu,
                      "proc_delay": dict(proc)})
        links.append({"src": next_id, "dst": t,
                      "bandwidth_mbps": params.backbone_bw_mbps,
                      "delay_ms": round(km_to_ms(dist), 6)})
        next_id += 1

    for _ in range(params.n_ru):
        point = rng.uniform(0.0, params.area_km, size=2)
        t, dist = attach(point)
        nodes.append({"id": next_id, "roles": ["RU"], "cpu_capacity": 0.0,
                      "proc_delay": {}})
        links.append({"src": next_id, "dst": t,
                      "bandwidth_mbps": params.access_bw_mbps,
                      "delay_ms": round(km_to_ms(dist), 6)})
        next_id += 1

    backbone_links = [
        {"src": v, "dst": u, "bandwidth_mbps": params.backbone_bw_mbps,
         "delay_ms": round(km_to_ms(dmat[v, u]) if n_t > 1 else 0.05, 6)}
        for v, u in sorted(edges)
    ]
    doc = {"meta": {}, "nodes": nodes, "links": backbone_links + links,
           "placement": {}}

    graph = load_topology(doc)
    if graph.d_max > MAX_OUT_DEGREE:
        raise TopologyError(f"degree cap exceeded: {graph.d_max}")
    dist0 = graph.dist_to(0)
    if (dist0 == UNREACHABLE).any():
        raise TopologyError("generated topology is not connected")
    return doc


def _cap_backbone_degree(edges, dmat, n_t):
    """Drop farthest-first edges from over-degree nodes, keeping connectivity."""
    edges = set(edges)
    degree = {v: 0 for v in range(n_t)}
    for v, u in edges:
        degree[v] += 1
        degree[u] += 1

    def connected_without(edge):
        trial = edges - {edge}
        rows = [e[0] for e in trial] + [e[1] for e in trial]
        cols = [e[1] for e in trial] + [e[0] for e in trial]
        mat = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_t, n_t))
        n_comp, _ = connected_components(mat, directed=False)
        return n_comp == 1

    for v in sorted(degree, key=lambda x: -degree[x]):
        if degree[v] <= BACKBONE_DEGREE_CAP:
            continue
        incident = sorted((e for e in edges if v in e),
                          key=lambda e: -dmat[e[0], e[1]])
        for e in incident:
            if degree[v] <= BACKBONE_DEGREE_CAP:
                break
            other = e[0] if e[1] == v else e[1]
            if degree[other] <= 1:
                continue
            if connected_without(e):
                edges.remove(e)
                degree[v] -= 1
                degree[other] -= 1
    return edges


# --------------------------------------------------------------------------
# Placement
# --------------------------------------------------------------------------

def place_functions(graph, counts, peak_traffic):
    """Greedy demand-weighted p-center site selection plus fixed mappings.

    Returns (placement maps, {"DU": [...], "CU": [...], "UPF": [...]}).
    Candidates are the compute-capable non-RU nodes; each site hosts one role.
    """
    candidates = [v for v in range(graph.n_nodes)
                  if graph.cpu_capacity[v] > 0 and "RU" not in graph.nodes[v].roles]
    total = counts["DU"] + counts["CU"] + counts["UPF"]
    if len(candidates) < total:
        raise TopologyError(
            f"insufficient compute candidates: {len(candidates)} < {total}")

    ru_nodes = graph.role_nodes("RU")
    weight = {r: 1e-9 for r in ru_nodes}
    for flow in peak_traffic.all_flows():
        if flow.source_ru in weight:
            weight[flow.source_ru] += flow.bandwidth_mbps

    remaining = list(candidates)
    du_sites = _greedy_pcenter(graph, remaining, weight, counts["DU"])
    remaining = [c for c in remaining if c not in du_sites]

    ru_to_du = {r: _nearest(graph, r, du_sites) for r in ru_nodes}
    du_weight = {d: 1e-9 for d in du_sites}
    for r, d in ru_to_du.items():
        du_weight[d] += weight[r]

    cu_sites = _greedy_pcenter(graph, remaining, du_weight, counts["CU"])
    remaining = [c for c in remaining if c not in cu_sites]
    du_to_cu = {d: _nearest(graph, d, cu_sites) for d in du_sites}

    upf_sites = _greedy_pcenter(graph, remaining, du_weight, counts["UPF"])
    upf_of_service = {
        spec.service_id: upf_sites[i % len(upf_sites)]
        for i, spec in enumerate(builtin_catalog())
    }

    placement = {"ru_to_du": ru_to_du, "du_to_cu": du_to_cu,
                 "upf_of_service": upf_of_service}
    sites = {"DU": sorted(du_sites), "CU": sorted(cu_sites),
             "UPF": sorted(upf_sites)}
    return placement, sites


def _greedy_pcenter(graph, candidates, demand_weight, k):
    """Iteratively add the site minimizing the max weighted hop distance."""
    points = sorted(demand_weight)
    dist = {c: graph.dist_to(c) for c in candidates}

    def score(selected):
        worst = 0.0
        for p in points:
            best = min(
                (dist[s][p] if dist[s][p] != UNREACHABLE else 10 ** 6)
                for s in selected)
            worst = max(worst, demand_weight[p] * best)
        return worst

    selected = []
    for _ in range(k):
        best_c, best_s = None, None
        for c in candidates:
            if c in selected:
                continue
            s = score(selected + [c])
            if best_s is None or s < best_s - 1e-12:
                best_c, best_s = c, s
        selected.append(best_c)
    return selected


def _nearest(graph, src, sites):
    """Closest site by hop distance; ties broken by lowest node id."""
    best, best_d = None, None
    for s in sorted(sites):
        d = graph.dist_to(s)[src]
        d = 10 ** 6 if d == UNREACHABLE else int(d)
        if best_d is None or d < best_d:
            best, best_d = s, d
    return best


# --------------------------------------------------------------------------
# Traffic generation
# --------------------------------------------------------------------------

def generate_traffic(catalog, ru_nodes, hourly_profile, seed,
                     uplink_fraction=0.5):
    """Sample a 24-hour trace from the catalog's request ranges and the profile."""
    if len(hourly_profile) != 24:
        raise ValueError("hourly_profile must have 24 entries")
    ru_nodes = list(ru_nodes)
    rng = np.random.default_rng(seed)
    hours = [[] for _ in range(24)]
    flow_id = 0
    for hour in range(24):
        for spec in catalog:
            lo, hi = spec.requests_per_hour
            count = int(round(rng.uniform(lo, hi) * hourly_profile[hour]))
            count = max(count, 0)
            for _ in range(count):
                source = int(ru_nodes[rng.integers(len(ru_nodes))])
                if spec.chain_uplink and spec.chain_downlink:
                    direction = (UPLINK if rng.random() < uplink_fraction
                                 else DOWNLINK)
                elif spec.chain_uplink:
                    direction = UPLINK
                else:
                    direction = DOWNLINK
                if isinstance(spec.bandwidth_mbps, tuple):
                    bw = float(rng.uniform(*spec.bandwidth_mbps))
                else:
                    bw = float(spec.bandwidth_mbps)
                hours[hour].append(FlowRequest(
                    flow_id=flow_id,
                    service_id=spec.service_id,
                    hour=hour,
                    source_ru=source,
                    direction=direction,
                    bandwidth_mbps=bw,
                    latency_budget_ms=spec.latency_budget_ms,
                    cpu_demand=bw * spec.cpu_demand_factor,
                ))
                flow_id += 1
    return TrafficTrace(hours=hours, seed=seed)


# --------------------------------------------------------------------------
# Scenario document I/O
# --------------------------------------------------------------------------

def write_scenario(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_scenario(path):
    with open(path) as fh:
        return json.load(fh)
