"""Physical network model: immutable graph structure plus mutable resource ledgers.

Nodes carry roles (RU/DU/CU/UPF/TRANSPORT), CPU capacity and per-service
processing delays.  Links are stored directed; every physical link appears in
both directions.  The ledger (free CPU per node, free bandwidth per link) is
the single mutable piece of state and is owned by exactly one user at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROLES = ("RU", "DU", "CU", "UPF", "TRANSPORT")
COMPUTE_ROLES = ("DU", "CU", "UPF")

#: hop_distance() value for unreachable pairs.
UNREACHABLE = -1


class TopologyError(ValueError):
    """Scenario document failed validation; message names the offending element."""


class LedgerError(RuntimeError):
    pass


class InsufficientCpu(LedgerError):
    def __init__(self, node, needed, free):
        super().__init__(
            f"insufficient CPU on node {node}: need {needed:g}, free {free:g}")
        self.node = node


class InsufficientBw(LedgerError):
    def __init__(self, link, needed, free):
        super().__init__(
            f"insufficient bandwidth on link {link}: need {needed:g}, free {free:g}")
        self.link = link


@dataclass(frozen=True)
class NodeAttrs:
    roles: frozenset
    cpu_capacity: float
    proc_delay: dict  # service id -> ms; missing service means 0 ms


@dataclass(frozen=True)
class Receipt:
    """Exact ledger deltas applied by a commit; release() undoes them bit-exactly."""
    cpu: tuple  # ((node, amount), ...)
    bw: tuple   # ((link, amount), ...)


class NetworkGraph:
    """Directed graph with resource ledger, neighbor indexing and hop-distance cache."""

    def __init__(self, nodes, link_rows, placement=None, meta=None):
        self.nodes = list(nodes)
        self.n_nodes = len(self.nodes)
        self.link_src = np.array([r[0] for r in link_rows], dtype=np.int64)
        self.link_dst = np.array([r[1] for r in link_rows], dtype=np.int64)
        self.bw_capacity = np.array([r[2] for r in link_rows], dtype=np.float64)
        self.link_delay = np.array([r[3] for r in link_rows], dtype=np.float64)
        self.n_links = len(link_rows)
        self.placement = placement or {}
        self.meta = meta or {}

        self.cpu_capacity = np.array(
            [n.cpu_capacity for n in self.nodes], dtype=np.float64)

        # Neighbor lists sorted ascending by destination id: index i in this
        # list is the meaning of routing action a=i.
        self._out = [[] for _ in range(self.n_nodes)]
        self._in = [[] for _ in range(self.n_nodes)]
        for li in range(self.n_links):
            self._out[self.link_src[li]].append((li, int(self.link_dst[li])))
            self._in[self.link_dst[li]].append((li, int(self.link_src[li])))
        for v in range(self.n_nodes):
            self._out[v].sort(key=lambda e: e[1])
            self._in[v].sort(key=lambda e: e[1])
        self.d_max = max((len(o) for o in self._out), default=0)

        self._role_nodes = {
            role: sorted(v for v in range(self.n_nodes)
                         if role in self.nodes[v].roles)
            for role in ROLES
        }

        # Ledger state (admission control) plus an auxiliary CPU load used
        # only for power accounting of DU/UPF nodes, which the constraints
        # do not admission-control.
        self.cpu_free = self.cpu_capacity.copy()
        self.bw_free = self.bw_capacity.copy()
        self.cpu_load_aux = np.zeros(self.n_nodes)

        self._dist_cache = {}
        self._diameter = None

    # ---- structure queries -------------------------------------------------

    def out_neighbors(self, v):
        """Ordered (link_id, neighbor) pairs, ascending by neighbor id."""
        return self._out[v]

    def role_nodes(self, role):
        return self._role_nodes[role]

    def proc_delay(self, v, service):
        return self.nodes[v].proc_delay.get(service, 0.0)

    def dist_to(self, target):
        """Hop distances from every node to `target` (BFS on reversed links)."""
        cached = self._dist_cache.get(target)
        if cached is not None:
            return cached
        dist = np.full(self.n_nodes, UNREACHABLE, dtype=np.int64)
        dist[target] = 0
        frontier = [target]
        while frontier:
            nxt = []
            for v in frontier:
                for _, u in self._in[v]:
                    if dist[u] == UNREACHABLE:
                        dist[u] = dist[v] + 1
                        nxt.append(u)
            frontier = nxt
        self._dist_cache[target] = dist
        return dist

    def hop_distance(self, src, dst):
        return int(self.dist_to(dst)[src])

    def diameter(self):
        """Max finite hop distance over all ordered pairs; cached."""
        if self._diameter is None:
            best = 0
            for t in range(self.n_nodes):
                d = self.dist_to(t)
                finite = d[d != UNREACHABLE]
                if finite.size:
                    best = max(best, int(finite.max()))
            self._diameter = best
        return self._diameter

    # ---- ledger ------------------------------------------------------------

    def commit(self, cpu_claims, bw_claims):
        """Atomically decrement the ledger; all claims succeed or none do."""
        cpu_tot = {}
        for node, amount in cpu_claims:
            cpu_tot[node] = cpu_tot.get(node, 0.0) + amount
        bw_tot = {}
        for link, amount in bw_claims:
            bw_tot[link] = bw_tot.get(link, 0.0) + amount
        for node, amount in cpu_tot.items():
            if amount > self.cpu_free[node]:
                raise InsufficientCpu(node, amount, self.cpu_free[node])
        for link, amount in bw_tot.items():
            if amount > self.bw_free[link]:
                raise InsufficientBw(link, amount, self.bw_free[link])
        for node, amount in cpu_tot.items():
            self.cpu_free[node] -= amount
        for link, amount in bw_tot.items():
            self.bw_free[link] -= amount
        return Receipt(cpu=tuple(sorted(cpu_tot.items())),
                       bw=tuple(sorted(bw_tot.items())))

    def release(self, receipt):
        for node, amount in receipt.cpu:
            self.cpu_free[node] += amount
        for link, amount in receipt.bw:
            self.bw_free[link] += amount

    def reset_ledger(self):
        self.cpu_free = self.cpu_capacity.copy()
        self.bw_free = self.bw_capacity.copy()
        self.cpu_load_aux[:] = 0.0

    def utilization(self, v):
        """CPU utilization in [0,1] (claimed plus auxiliary power load)."""
        cap = self.cpu_capacity[v]
        if cap <= 0:
            return 0.0
        used = (cap - self.cpu_free[v]) + self.cpu_load_aux[v]
        return min(1.0, used / cap)

    def ledger_snapshot(self):
        return self.cpu_free.copy(), self.bw_free.copy()


def load_topology(doc):
    """Validate a parsed scenario document and build a NetworkGraph.

    Each document link is expanded into both directions.  Errors name the
    offending element.
    """
    if not isinstance(doc, dict):
        raise TopologyError("scenario document must be a mapping")
    for key in ("nodes", "links"):
        if key not in doc:
            raise TopologyError(f"scenario document missing key '{key}'")

    node_docs = doc["nodes"]
    n = len(node_docs)
    seen_ids = set()
    nodes = [None] * n
    for nd in node_docs:
        nid = nd.get("id")
        if not isinstance(nid, int) or not 0 <= nid < n:
            raise TopologyError(f"node id {nid!r} not dense in 0..{n - 1}")
        if nid in seen_ids:
            raise TopologyError(f"duplicate node id {nid}")
        seen_ids.add(nid)
        roles = frozenset(nd.get("roles", []))
        bad = roles - set(ROLES)
        if bad:
            raise TopologyError(f"node {nid}: unknown roles {sorted(bad)}")
        cpu = float(nd.get("cpu_capacity", 0.0))
        if cpu < 0:
            raise TopologyError(f"node {nid}: negative cpu_capacity")
        if "RU" in roles and cpu != 0:
            raise TopologyError(f"node {nid}: RU nodes must have cpu_capacity 0")
        proc = {str(k): float(v) for k, v in (nd.get("proc_delay") or {}).items()}
        if any(v < 0 for v in proc.values()):
            raise TopologyError(f"node {nid}: negative proc_delay entry")
        nodes[nid] = NodeAttrs(roles=roles, cpu_capacity=cpu, proc_delay=proc)

    link_rows = []
    seen_pairs = set()
    for ld in doc["links"]:
        src, dst = ld.get("src"), ld.get("dst")
        for endpoint in (src, dst):
            if not isinstance(endpoint, int) or not 0 <= endpoint < n:
                raise TopologyError(f"link references unknown node id {endpoint!r}")
        if src == dst:
            raise TopologyError(f"self-loop link at node {src}")
        pair = (min(src, dst), max(src, dst))
        if pair in seen_pairs:
            raise TopologyError(f"duplicate link between nodes {pair[0]} and {pair[1]}")
        seen_pairs.add(pair)
        bw = float(ld["bandwidth_mbps"])
        delay = float(ld["delay_ms"])
        if bw <= 0:
            raise TopologyError(f"link {pair}: bandwidth must be > 0")
        if delay < 0:
            raise TopologyError(f"link {pair}: negative delay")
        link_rows.append((src, dst, bw, delay))
        link_rows.append((dst, src, bw, delay))

    placement = _parse_placement(doc.get("placement") or {})
    return NetworkGraph(nodes, link_rows, placement=placement,
                        meta=doc.get("meta") or {})


def _parse_placement(pdoc):
    placement = {}
    for key in ("ru_to_du", "du_to_cu"):
        placement[key] = {int(k): int(v) for k, v in (pdoc.get(key) or {}).items()}
    placement["upf_of_service"] = {
        str(k): int(v) for k, v in (pdoc.get("upf_of_service") or {}).items()}
    return placement
