"""Power and hourly energy accounting.

Compute nodes follow the linear utilization model P_idle + (P_max-P_idle)*u.
The transport network contributes per-router and per-link idle power plus a
per-bit dynamic term: carried bit-rate times (e_pp/(8*L) + e_sf/8), where L
is the packet length in bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .topology import COMPUTE_ROLES


@dataclass(frozen=True)
class HourlyEnergyReport:
    hour: int
    node_kwh: float
    net_idle_kwh: float
    net_dyn_kwh: float
    total_kwh: float
    utilizations: dict  # node id -> cpu utilization


def node_params(params, node=None):
    """(p_idle, p_max) for a compute node, honoring per-node overrides."""
    p_idle = params.p_idle_w
    p_max = params.p_max_w
    if node is not None:
        p_idle = params.p_idle_per_node.get(node, p_idle)
        p_max = params.p_max_per_node.get(node, p_max)
    return p_idle, p_max


def p_max_ref(params, graph=None):
    """Largest configured P_max; reward normalization reference."""
    values = [params.p_max_w] + list(params.p_max_per_node.values())
    return max(values)


def node_power(u_cpu, params, node=None):
    """Linear power model; u_cpu must lie in [0, 1]."""
    if not 0.0 <= u_cpu <= 1.0:
        raise ValueError(f"utilization {u_cpu} out of [0, 1]")
    p_idle, p_max = node_params(params, node)
    return p_idle + (p_max - p_idle) * u_cpu


def net_idle_power(graph, params):
    """Idle watts of all routers plus all physical (bidirectional) links."""
    routers = _routers(graph)
    n_phys_links = graph.n_links // 2
    return len(routers) * params.router_idle_w + n_phys_links * params.link_idle_w


def router_dynamic_power(rate_bps, params):
    """Dynamic watts for one router carrying `rate_bps`."""
    if rate_bps < 0:
        raise ValueError("rate must be >= 0")
    coeff = (params.e_pp_j / (8.0 * params.packet_len_bytes)
             + params.e_sf_j_per_byte / 8.0)
    return rate_bps * coeff


def hourly_energy(graph, per_router_rates, params, hour):
    """Energy over one hour at the current ledger state.

    `per_router_rates` maps router node id -> carried bit-rate (bps), summed
    over the accepted flows whose paths traverse that router.
    """
    utilizations = {}
    node_w = 0.0
    for v in range(graph.n_nodes):
        if graph.cpu_capacity[v] <= 0:
            continue
        u = graph.utilization(v)
        utilizations[v] = u
        node_w += node_power(u, params, node=v)

    idle_w = net_idle_power(graph, params)
    routers = set(_routers(graph))
    dyn_w = sum(router_dynamic_power(rate, params)
                for v, rate in per_router_rates.items() if v in routers)

    node_kwh = node_w / 1000.0
    net_idle_kwh = idle_w / 1000.0
    net_dyn_kwh = dyn_w / 1000.0
    return HourlyEnergyReport(
        hour=hour,
        node_kwh=node_kwh,
        net_idle_kwh=net_idle_kwh,
        net_dyn_kwh=net_dyn_kwh,
        total_kwh=node_kwh + net_idle_kwh + net_dyn_kwh,
        utilizations=utilizations,
    )


def _routers(graph):
    return graph.role_nodes("TRANSPORT")
