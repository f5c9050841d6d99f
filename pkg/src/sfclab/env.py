"""The provisioning MDP: one flow per episode, MOVE/EMBED actions, masking.

The environment owns a graph ledger that persists across the episodes of one
simulated hour and resets at hour boundaries.  Actions index the sorted
out-neighbor list of the current node; the extra action (index D_max) embeds
the CU at the current node and is only available during the dynamic CU
segment in JOINT mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import power as power_mod
from . import sfc
from .scenario import service_index
from .topology import UNREACHABLE, LedgerError

SUCCESS = "SUCCESS"
DEADEND = "DEADEND"
BUDGET_EXCEEDED = "BUDGET_EXCEEDED"
MAX_STEPS = "MAX_STEPS"

ROLE_INDEX = {"RU": 0, "DU": 1, "CU": 2, "UPF": 3}


class InvalidActionError(RuntimeError):
    """An action with mask=0 was passed to step()."""


@dataclass(frozen=True)
class Observation:
    service_idx: int
    hour: int
    segment_idx: int
    current_node: int
    target_node: int
    target_role: int
    dist_to_target: float       # hop distance normalized by graph diameter
    remaining_latency: float    # remaining budget normalized by L_max
    node_features: np.ndarray   # N x 5


@dataclass(frozen=True)
class StepOutcome:
    observation: object
    reward: float
    done: bool
    info: dict


class SfcEnv:
    def __init__(self, graph, catalog, mode, reward_cfg, power_params,
                 max_steps=None):
        self.graph = graph
        self.catalog = catalog
        self.svc_index = service_index(catalog)
        self.mode = mode
        self.rw = reward_cfg
        self.power_params = power_params
        self.p_max_ref = power_mod.p_max_ref(power_params)
        self.d_max = graph.d_max
        self.n_actions = graph.d_max + 1
        self.diameter = max(graph.diameter(), 1)
        self.max_steps = max_steps or 4 * self.diameter
        self.hour = 0
        self.state = None
        self._steps = 0
        self._done = True
        self._pending_budget_fail = False

    # ---- lifecycle ----------------------------------------------------------

    def hour_boundary(self, hour):
        """New simulated hour: full capacities, fresh episode slate."""
        self.graph.reset_ledger()
        self.hour = hour
        self.state = None
        self._done = True

    def reset(self, flow):
        """Begin provisioning one flow; raises ChainError without mutation."""
        chain = sfc.build_chain(flow, self.graph.placement, self.mode)
        self.state, completions = sfc.init_state(flow, chain, self.graph)
        self._steps = 0
        self._done = False
        # Degenerate completions at reset can already exhaust the budget.
        self._pending_budget_fail = (
            self.state.consumed_ms > flow.latency_budget_ms)
        return self._observe()

    # ---- observation and masking --------------------------------------------

    def _target_node(self):
        """Current segment target; for the dynamic segment, the nearest CU
        with enough free CPU (fallback: nearest CU regardless of CPU)."""
        st = self.state
        if st.done:
            return st.current_node
        seg = st.current_segment()
        if seg.target is not sfc.DYNAMIC_CU:
            return seg.target
        best, best_d, fallback, fallback_d = None, None, None, None
        for cu in self.graph.role_nodes("CU"):
            d = self.graph.dist_to(cu)[st.current_node]
            d = 10 ** 6 if d == UNREACHABLE else int(d)
            if fallback_d is None or d < fallback_d:
                fallback, fallback_d = cu, d
            if self.graph.cpu_free[cu] >= st.flow.cpu_demand:
                if best_d is None or d < best_d:
                    best, best_d = cu, d
        return best if best is not None else fallback

    def _dist(self, node, target):
        d = self.graph.dist_to(target)[node]
        return 10 ** 6 if d == UNREACHABLE else int(d)

    def _observe(self):
        st = self.state
        g = self.graph
        target = self._target_node()
        d = self._dist(st.current_node, target)
        n = g.n_nodes
        feats = np.zeros((n, 5), dtype=np.float64)
        for v in range(n):
            roles = g.nodes[v].roles
            if "DU" in roles:
                feats[v, 0] = 1.0
            if "CU" in roles:
                feats[v, 1] = 1.0
            if "UPF" in roles:
                feats[v, 2] = 1.0
            feats[v, 3] = len(g.out_neighbors(v)) / max(g.d_max, 1)
            if g.cpu_capacity[v] > 0:
                feats[v, 4] = g.cpu_free[v] / g.cpu_capacity[v]
        seg_idx = min(st.segment_idx, len(st.chain.segments) - 1)
        end_role = st.chain.segments[seg_idx].end_role
        remaining = max(0.0, (st.flow.latency_budget_ms - st.consumed_ms)
                        / st.flow.latency_budget_ms)
        return Observation(
            service_idx=self.svc_index[st.flow.service_id],
            hour=self.hour,
            segment_idx=seg_idx,
            current_node=st.current_node,
            target_node=target,
            target_role=ROLE_INDEX[end_role],
            dist_to_target=min(1.0, d / self.diameter),
            remaining_latency=remaining,
            node_features=feats,
        )

    def action_mask(self):
        st = self.state
        mask = np.zeros(self.n_actions, dtype=np.uint8)
        if st is None or self._done or st.done:
            return mask
        out = self.graph.out_neighbors(st.current_node)
        for i, (link, _) in enumerate(out):
            if sfc.move_valid(st, link, self.graph,
                              allow_revisit=self.rw.allow_revisit):
                mask[i] = 1
        if self.mode == sfc.MODE_JOINT and sfc.embed_valid(
                st, st.current_node, self.graph):
            mask[self.d_max] = 1
        return mask

    # ---- stepping ------------------------------------------------------------

    def step(self, action):
        if self.state is None or self._done:
            raise InvalidActionError("step() without an active episode")
        st = self.state
        components = {"shaping": 0.0, "intermediate": 0.0,
                      "energy_penalty": 0.0, "terminal": 0.0}

        if self._pending_budget_fail:
            return self._terminate(BUDGET_EXCEEDED, components)
        if st.done:
            # Fully degenerate chain completed during reset.
            return self._finish(components)
        mask = self.action_mask()
        if not mask.any():
            return self._terminate(self._deadend_kind(), components)
        if not mask[action]:
            raise InvalidActionError(
                f"action {action} is masked at node {st.current_node}")

        if action == self.d_max:
            node = st.current_node
            u_after = self._cu_util_after(node)
            components["energy_penalty"] += (
                self.rw.c_embed_energy
                * power_mod.node_power(u_after, self.power_params, node=node)
                / self.p_max_ref)
            completions = sfc.apply_embed(st, node, self.graph)
        else:
            target = self._target_node()
            link, dst = self.graph.out_neighbors(st.current_node)[action]
            dist_before = self._dist(st.current_node, target)
            revisit = dst in st.visited
            completions = sfc.apply_move(st, link, self.graph)
            dist_after = self._dist(st.current_node, target)
            components["shaping"] += self.rw.c_shape * (dist_before - dist_after)
            if revisit:
                components["shaping"] -= self.rw.c_loop

        for hops in completions:
            components["intermediate"] += self.rw.c_seg - self.rw.c_hop * hops
        self._steps += 1

        if st.consumed_ms > st.flow.latency_budget_ms:
            return self._terminate(BUDGET_EXCEEDED, components)
        if st.done:
            return self._finish(components)
        if self._steps >= self.max_steps:
            return self._terminate(MAX_STEPS, components)
        next_mask = self.action_mask()
        if not next_mask.any():
            return self._terminate(self._deadend_kind(), components)
        return self._outcome(components, False, None)

    def _finish(self, components):
        """Commit the completed chain; in FIXED mode the mapped CU's CPU was
        never masked, so an admission failure here blocks the flow."""
        try:
            record = sfc.commit_flow(self.state, self.graph)
        except LedgerError:
            return self._terminate(DEADEND, components)
        components["energy_penalty"] += (
            self.rw.c_path_energy * self._path_energy_score())
        components["terminal"] += self.rw.c_success
        self._done = True
        return self._outcome(components, True, SUCCESS, record=record)

    def _terminate(self, kind, components):
        components["terminal"] -= self.rw.c_fail
        self._done = True
        return self._outcome(components, True, kind)

    def _outcome(self, components, done, kind, record=None):
        reward = (components["shaping"] + components["intermediate"]
                  - components["energy_penalty"] + components["terminal"])
        info = {"terminal_kind": kind, "reward_components": components}
        if record is not None:
            info["record"] = record
        obs = self._observe() if not done else None
        return StepOutcome(observation=obs, reward=reward, done=done, info=info)

    def _deadend_kind(self):
        """BUDGET_EXCEEDED when only the latency budget blocks every move."""
        st = self.state
        budget_blocked = False
        for link, dst in self.graph.out_neighbors(st.current_node):
            if dst in st.visited and not self.rw.allow_revisit:
                continue
            req = st.flow.bandwidth_mbps
            if self.graph.bw_free[link] < req * (st.pending_bw(link) + 1):
                continue
            # feasible except possibly for latency
            if (st.consumed_ms + self.graph.link_delay[link]
                    > st.flow.latency_budget_ms):
                budget_blocked = True
        return BUDGET_EXCEEDED if budget_blocked else DEADEND

    def _cu_util_after(self, node):
        cap = self.graph.cpu_capacity[node]
        used = (cap - self.graph.cpu_free[node]) + self.state.flow.cpu_demand
        return min(1.0, used / cap)

    def _path_energy_score(self):
        """Sum of normalized node/router power over the distinct path nodes."""
        st = self.state
        nodes = {st.chain.entry}
        for link in st.path_links:
            nodes.add(int(self.graph.link_dst[link]))
        score = 0.0
        for v in sorted(nodes):
            if self.graph.cpu_capacity[v] > 0:
                score += (power_mod.node_power(
                    self.graph.utilization(v), self.power_params, node=v)
                    / self.p_max_ref)
            elif "TRANSPORT" in self.graph.nodes[v].roles:
                score += self.power_params.router_idle_w / self.p_max_ref
        return score
