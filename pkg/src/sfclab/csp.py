"""Constrained-shortest-path baseline: fixed 1:1 mapping, delay-shortest
feasible routing per segment, full-chain validation and atomic commitment."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from . import sfc
from .topology import LedgerError

REJECT_NO_PATH = "NO_PATH"
REJECT_BW = "BW"
REJECT_CPU = "CPU"
REJECT_LATENCY = "LATENCY"


@dataclass(frozen=True)
class CspResult:
    accepted: bool
    reason: str | None = None
    record: object = None


def csp_route_segment(graph, src, dst, bw_req, budget_remaining, pending=None):
    """Minimum-propagation-delay path using only links with enough free
    bandwidth (net of `pending` claims from earlier segments of this flow).

    Returns (links, delay) or None when no feasible path fits the budget.
    Ties on delay break toward the lexicographically smallest node sequence.
    """
    pending = pending or {}
    if src == dst:
        return [], 0.0
    # heap entries carry the node sequence: tuple comparison gives the
    # deterministic lexicographic tie-break
    heap = [(0.0, (src,), [])]
    settled = set()
    while heap:
        delay, nodes, links = heapq.heappop(heap)
        node = nodes[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == dst:
            if delay > budget_remaining:
                return None
            return links, delay
        for link, nxt in graph.out_neighbors(node):
            if nxt in settled:
                continue
            need = bw_req * (pending.get(link, 0) + 1)
            if graph.bw_free[link] < need:
                continue
            nd = delay + float(graph.link_delay[link])
            if nd > budget_remaining:
                continue
            heapq.heappush(heap, (nd, nodes + (nxt,), links + [link]))
    return None


def csp_provision(flow, graph, placement):
    """Provision one flow through the fixed chain; commits on success."""
    try:
        chain = sfc.build_chain(flow, placement, sfc.MODE_FIXED)
    except sfc.ChainError:
        return CspResult(False, REJECT_NO_PATH)
    state, _ = sfc.init_state(flow, chain, graph)

    cu_node = next(seg.target for seg in chain.segments if seg.end_role == "CU")
    if graph.cpu_free[cu_node] < flow.cpu_demand:
        return CspResult(False, REJECT_CPU)

    pending = {}
    while not state.done:
        target = state.current_segment().target
        budget = flow.latency_budget_ms - state.consumed_ms
        if budget < 0:
            return CspResult(False, REJECT_LATENCY)
        found = csp_route_segment(graph, state.current_node, target,
                                  flow.bandwidth_mbps, budget, pending)
        if found is None:
            reason = _reject_reason(graph, state.current_node, target, budget)
            return CspResult(False, reason)
        links, _ = found
        for link in links:
            sfc.apply_move(state, link, graph)  # last move auto-completes
            pending[link] = pending.get(link, 0) + 1
        if not links:
            sfc.complete_segment(state, graph)  # degenerate segment
        if state.consumed_ms > flow.latency_budget_ms:
            return CspResult(False, REJECT_LATENCY)

    try:
        record = sfc.commit_flow(state, graph)
    except LedgerError:
        return CspResult(False, REJECT_BW)
    return CspResult(True, None, record)


def _reject_reason(graph, src, dst, budget):
    """Distinguish NO_PATH / BW / LATENCY for an infeasible segment."""
    unconstrained = csp_route_segment(graph, src, dst, 0.0, float("inf"))
    if unconstrained is None:
        return REJECT_NO_PATH
    feasible_bw = csp_route_segment(graph, src, dst, 0.0, budget)
    if feasible_bw is None:
        return REJECT_LATENCY
    return REJECT_BW
