"""SFC segment decomposition, per-step feasibility checks and flow commitment.

Shared rule engine between the RL environment and the CSP baseline: a chain
is an ordered list of segments, each ending at a fixed VNF node or at a
dynamically chosen CU.  Validity checks mirror the admission constraints
(CPU at the chosen CU, bandwidth on every traversed link, end-to-end latency
budget); commitment is transactional against the graph ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .scenario import UPLINK
from .topology import COMPUTE_ROLES

MODE_JOINT = "JOINT"
MODE_FIXED = "FIXED"

#: Segment target sentinel for the dynamically selected CU.
DYNAMIC_CU = None


class ChainError(ValueError):
    """The placement does not cover this flow's RU or service."""


class TransitionError(RuntimeError):
    """A transition was applied whose validity check did not pass."""


@dataclass(frozen=True)
class Segment:
    target: int | None     # node id, or DYNAMIC_CU
    end_role: str          # VNF role instantiated at the segment end


@dataclass(frozen=True)
class SfcChain:
    entry: int
    entry_role: str
    segments: tuple


@dataclass
class ProvisioningState:
    flow: object
    chain: SfcChain
    segment_idx: int = 0
    current_node: int = 0
    consumed_ms: float = 0.0
    visited: set = field(default_factory=set)
    path_links: list = field(default_factory=list)
    embedded_cu: int | None = None
    hops_in_segment: int = 0
    vnf_nodes: list = field(default_factory=list)  # (node, role) actually charged

    @property
    def done(self):
        return self.segment_idx >= len(self.chain.segments)

    def current_segment(self):
        return self.chain.segments[self.segment_idx]

    def pending_bw(self, link):
        return self.path_links.count(link)


@dataclass(frozen=True)
class FlowRecord:
    """An accepted flow with everything needed for audit and release."""
    flow: object
    path_links: tuple
    cu_node: int
    consumed_ms: float
    vnf_nodes: tuple
    pre_cpu_free: float
    pre_bw_free: dict       # link -> bw_free before commit
    receipt: object
    aux_loads: tuple        # ((node, amount), ...) power-accounting loads


def build_chain(flow, placement, mode):
    """Decompose a flow into segments; JOINT mode leaves the CU dynamic."""
    try:
        du = placement["ru_to_du"][flow.source_ru]
        upf = placement["upf_of_service"][flow.service_id]
    except KeyError as err:
        raise ChainError(f"placement does not cover {err} for flow {flow.flow_id}")
    if mode == MODE_FIXED:
        try:
            cu_seg = Segment(placement["du_to_cu"][du], "CU")
        except KeyError:
            raise ChainError(f"no fixed CU mapping for DU {du}")
    elif mode == MODE_JOINT:
        cu_seg = Segment(DYNAMIC_CU, "CU")
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if flow.direction == UPLINK:
        return SfcChain(entry=flow.source_ru, entry_role="RU",
                        segments=(Segment(du, "DU"), cu_seg,
                                  Segment(upf, "UPF")))
    return SfcChain(entry=upf, entry_role="UPF",
                    segments=(cu_seg, Segment(du, "DU"),
                              Segment(flow.source_ru, "RU")))


def init_state(flow, chain, graph):
    """Fresh state at the chain entry; entry VNF processing delay is charged
    immediately and degenerate (already-at-target) fixed segments complete."""
    state = ProvisioningState(flow=flow, chain=chain,
                              current_node=chain.entry,
                              visited={chain.entry})
    state.consumed_ms += graph.proc_delay(chain.entry, flow.service_id)
    state.vnf_nodes.append((chain.entry, chain.entry_role))
    completions = _auto_complete(state, graph)
    return state, completions


def move_valid(state, link, graph, allow_revisit=False):
    """Bandwidth (net of this flow's own pending claims), budget, no-revisit,
    and no moves into degree-1 dead ends that cannot complete the segment."""
    dst = int(graph.link_dst[link])
    if not allow_revisit and dst in state.visited:
        return False
    req = state.flow.bandwidth_mbps
    if graph.bw_free[link] < req * (state.pending_bw(link) + 1):
        return False
    if state.consumed_ms + graph.link_delay[link] > state.flow.latency_budget_ms:
        return False
    if not allow_revisit and len(graph.out_neighbors(dst)) == 1:
        # A leaf's only exit leads back to a visited node, so entering one is
        # a guaranteed dead end unless arrival completes the segment (fixed
        # target) or the leaf can host the dynamic CU.
        seg = state.current_segment()
        if seg.target is DYNAMIC_CU:
            if ("CU" not in graph.nodes[dst].roles
                    or graph.cpu_free[dst] < state.flow.cpu_demand):
                return False
        elif seg.target != dst:
            return False
    return True


def embed_valid(state, node, graph):
    if state.done or state.current_segment().target is not DYNAMIC_CU:
        return False
    if "CU" not in graph.nodes[node].roles:
        return False
    if graph.cpu_free[node] < state.flow.cpu_demand:
        return False
    proc = graph.proc_delay(node, state.flow.service_id)
    return state.consumed_ms + proc <= state.flow.latency_budget_ms


def apply_move(state, link, graph):
    """Traverse a link; returns hops counts of any segments this completed."""
    if int(graph.link_src[link]) != state.current_node:
        raise TransitionError(
            f"link {link} does not originate at node {state.current_node}")
    state.consumed_ms += graph.link_delay[link]
    state.path_links.append(link)
    state.current_node = int(graph.link_dst[link])
    state.visited.add(state.current_node)
    state.hops_in_segment += 1
    return _auto_complete(state, graph)


def apply_embed(state, node, graph):
    """Select the current node as the CU; completes the dynamic segment."""
    if state.done or state.current_segment().target is not DYNAMIC_CU:
        raise TransitionError("embed outside the dynamic CU segment")
    if node != state.current_node:
        raise TransitionError("embed target must be the current node")
    state.embedded_cu = node
    completions = [complete_segment(state, graph)]
    completions.extend(_auto_complete(state, graph))
    return completions


def complete_segment(state, graph):
    """Charge the end-VNF processing delay and advance the segment cursor."""
    seg = state.current_segment()
    hops = state.hops_in_segment
    state.consumed_ms += graph.proc_delay(state.current_node, state.flow.service_id)
    state.vnf_nodes.append((state.current_node, seg.end_role))
    if seg.end_role == "CU":
        state.embedded_cu = state.current_node
    state.segment_idx += 1
    state.visited = {state.current_node}
    state.hops_in_segment = 0
    return hops


def _auto_complete(state, graph):
    """Fixed segments whose target is the current node complete immediately."""
    completions = []
    while (not state.done
           and state.current_segment().target is not DYNAMIC_CU
           and state.current_segment().target == state.current_node):
        completions.append(complete_segment(state, graph))
    return completions


def commit_flow(state, graph):
    """Atomically claim bandwidth along the path and CPU at the CU node.

    DU/UPF loads are added to the auxiliary power-accounting ledger only;
    the admission constraints cover the CU alone.
    """
    if not state.done:
        raise TransitionError("commit_flow on an incomplete chain")
    if state.consumed_ms > state.flow.latency_budget_ms:
        raise TransitionError("commit_flow over latency budget")
    if state.embedded_cu is None:
        raise TransitionError("commit_flow without a CU node")

    req = state.flow.bandwidth_mbps
    bw_claims = [(link, req) for link in state.path_links]
    cpu_claims = [(state.embedded_cu, state.flow.cpu_demand)]
    pre_cpu = float(graph.cpu_free[state.embedded_cu])
    pre_bw = {link: float(graph.bw_free[link]) for link in set(state.path_links)}
    receipt = graph.commit(cpu_claims, bw_claims)

    aux = []
    for node, role in state.vnf_nodes:
        if role in ("DU", "UPF") and graph.cpu_capacity[node] > 0:
            graph.cpu_load_aux[node] += state.flow.cpu_demand
            aux.append((node, state.flow.cpu_demand))

    return FlowRecord(
        flow=state.flow,
        path_links=tuple(state.path_links),
        cu_node=state.embedded_cu,
        consumed_ms=state.consumed_ms,
        vnf_nodes=tuple(state.vnf_nodes),
        pre_cpu_free=pre_cpu,
        pre_bw_free=pre_bw,
        receipt=receipt,
        aux_loads=tuple(aux),
    )


def release_flow(record, graph):
    graph.release(record.receipt)
    for node, amount in record.aux_loads:
        graph.cpu_load_aux[node] -= amount


def audit_record(record, graph):
    """Re-check the admission constraints against pre-commit ledger values.

    Returns a list of violation strings; empty means the flow was valid.
    """
    violations = []
    flow = record.flow
    if record.pre_cpu_free < flow.cpu_demand:
        violations.append(
            f"cpu: node {record.cu_node} had {record.pre_cpu_free:g} free, "
            f"needed {flow.cpu_demand:g}")
    counts = {}
    for link in record.path_links:
        counts[link] = counts.get(link, 0) + 1
    for link, count in counts.items():
        if record.pre_bw_free[link] < flow.bandwidth_mbps * count:
            violations.append(
                f"bw: link {link} had {record.pre_bw_free[link]:g} free, "
                f"needed {flow.bandwidth_mbps * count:g}")
    prop = sum(float(graph.link_delay[link]) for link in record.path_links)
    proc = sum(graph.proc_delay(node, flow.service_id)
               for node, _ in record.vnf_nodes)
    total = prop + proc
    if total > flow.latency_budget_ms:
        violations.append(
            f"latency: {total:g} ms exceeds budget {flow.latency_budget_ms:g}")
    if abs(total - record.consumed_ms) > 1e-9:
        violations.append(
            f"latency accounting drift: recomputed {total:g}, "
            f"recorded {record.consumed_ms:g}")
    return violations
