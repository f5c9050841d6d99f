"""Shared fixtures: hand-built scenario documents and flow factories."""

import numpy as np
import pytest

from sfclab.config import Config
from sfclab.scenario import FlowRequest, builtin_catalog
from sfclab.topology import load_topology

ALL_SERVICES = ("CG", "AR", "VoIP", "VS", "MIoT", "I40")


def node(nid, roles=(), cpu=0.0, proc=None):
    """Node document shorthand; `proc` is ms charged for every service."""
    doc = {"id": nid, "roles": list(roles), "cpu_capacity": cpu}
    if proc is not None:
        doc["proc_delay"] = {s: proc for s in ALL_SERVICES}
    return doc


def link(src, dst, bw=1000.0, delay=1.0):
    return {"src": src, "dst": dst, "bandwidth_mbps": bw, "delay_ms": delay}


def make_doc(nodes, links, placement=None, meta=None):
    return {"nodes": nodes, "links": links,
            "placement": placement or {}, "meta": meta or {"seed": 0}}


def make_flow(flow_id=0, service="VoIP", hour=0, source_ru=0,
              direction="UPLINK", bw=0.064, budget=100.0, cpu=None):
    return FlowRequest(flow_id=flow_id, service_id=service, hour=hour,
                       source_ru=source_ru, direction=direction,
                       bandwidth_mbps=bw, latency_budget_ms=budget,
                       cpu_demand=bw * 0.1 if cpu is None else cpu)


def line6_doc(bw=1000.0, cpu=10.0):
    """RU0 - T1 - DU2 - T3 - CU4 - UPF5 line with known delays.

    Link delays 0.1 .. 0.5 ms in order; 0.5 ms processing at DU/CU/UPF.
    """
    nodes = [
        node(0, ["RU"]),
        node(1, ["TRANSPORT"]),
        node(2, ["DU"], cpu=cpu, proc=0.5),
        node(3, ["TRANSPORT"]),
        node(4, ["CU"], cpu=cpu, proc=0.5),
        node(5, ["UPF"], cpu=cpu, proc=0.5),
    ]
    links = [link(i, i + 1, bw=bw, delay=0.1 * (i + 1)) for i in range(5)]
    placement = {"ru_to_du": {0: 2}, "du_to_cu": {2: 4},
                 "upf_of_service": {s: 5 for s in ALL_SERVICES}}
    return make_doc(nodes, links, placement)


@pytest.fixture
def line6():
    return load_topology(line6_doc())


@pytest.fixture
def cfg():
    return Config()


@pytest.fixture
def catalog():
    return builtin_catalog()


def random_connected_doc(rng, n, extra_edges=3, bw=100.0, max_delay=2.0):
    """Random connected graph document for property tests; all TRANSPORT."""
    nodes = [node(v, ["TRANSPORT"]) for v in range(n)]
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(v))
        edges.add((u, v))
    for _ in range(extra_edges):
        u, v = rng.choice(n, size=2, replace=False)
        edges.add((min(int(u), int(v)), max(int(u), int(v))))
    links = [link(u, v, bw=bw, delay=float(rng.uniform(0.1, max_delay)))
             for u, v in sorted(edges)]
    return make_doc(nodes, links)
