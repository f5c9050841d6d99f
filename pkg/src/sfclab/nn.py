"""GCN actor-critic in plain numpy with hand-derived backprop.

Three graph-convolution layers over the symmetric-normalized adjacency with
self-loops produce per-node embeddings; the embeddings of the current and
target nodes are concatenated with categorical feature embeddings (service,
hour, segment, target node id) and two scalar observation fields, passed
through a shared trunk, and split into actor logits and a critic value.

forward() optionally returns a cache; backward() consumes the cache plus
upstream gradients on (logits, value) and produces exact gradients for every
parameter.  The PPO update verifies these against finite differences.
"""

from __future__ import annotations

import json

import numpy as np
from scipy import sparse

NEG_BIG = -1e30  # masked-logit stand-in for -inf; exp underflows to exactly 0


def normalized_adjacency(graph, dtype=np.float64):
    """D^{-1/2} (A + I) D^{-1/2} over the undirected skeleton of the graph."""
    n = graph.n_nodes
    pairs = {(min(int(s), int(d)), max(int(s), int(d)))
             for s, d in zip(graph.link_src, graph.link_dst)}
    rows, cols = [], []
    for u, v in sorted(pairs):
        rows += [u, v]
        cols += [v, u]
    rows += list(range(n))
    cols += list(range(n))
    deg = np.ones(n)  # self-loop
    for u, v in pairs:
        deg[u] += 1
        deg[v] += 1
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = [inv_sqrt[r] * inv_sqrt[c] for r, c in zip(rows, cols)]
    adj = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return adj.astype(dtype)


class GcnActorCritic:
    """Architecture container; parameters live in a plain dict of arrays."""

    N_SERVICES = 6
    N_HOURS = 24
    N_SEGMENTS = 4
    N_FEATURES = 5
    N_SCALARS = 2

    def __init__(self, n_nodes, n_actions, hidden=64, emb_dim=8,
                 dtype=np.float32):
        self.n_nodes = n_nodes
        self.n_actions = n_actions
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.dtype = dtype
        self.trunk_in = 2 * hidden + 4 * emb_dim + self.N_SCALARS

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        h, e, f = self.hidden, self.emb_dim, self.N_FEATURES

        def linear(fan_in, fan_out):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            return w, b

        params = {}
        params["w1"], params["b1"] = linear(f, h)
        params["w2"], params["b2"] = linear(h, h)
        params["w3"], params["b3"] = linear(h, h)
        for name, rows in (("service", self.N_SERVICES), ("hour", self.N_HOURS),
                           ("segment", self.N_SEGMENTS), ("target", self.n_nodes)):
            params[f"emb_{name}"] = rng.normal(0.0, 0.02, size=(rows, e))
        params["w_trunk"], params["b_trunk"] = linear(self.trunk_in, h)
        params["w_actor"], params["b_actor"] = linear(h, self.n_actions)
        params["w_critic"], params["b_critic"] = linear(h, 1)
        return {k: v.astype(self.dtype) for k, v in params.items()}

    # ---- forward --------------------------------------------------------------

    def _spmm(self, adj, t):
        """adj (N,N sparse) applied per batch element to t (B,N,C)."""
        b, n, c = t.shape
        flat = np.ascontiguousarray(t.transpose(1, 0, 2)).reshape(n, b * c)
        out = adj @ flat
        return np.ascontiguousarray(out.reshape(n, b, c).transpose(1, 0, 2))

    def forward(self, params, adj, batch, need_cache=False):
        """batch: x (B,N,F), cat (B,4 ints: service/hour/segment/target),
        scal (B,2), cur (B,) ints."""
        x = batch["x"].astype(self.dtype, copy=False)
        cat = batch["cat"]
        scal = batch["scal"].astype(self.dtype, copy=False)
        cur = batch["cur"]
        b = x.shape[0]

        a0 = self._spmm(adj, x)
        z1 = a0 @ params["w1"] + params["b1"]
        h1 = np.maximum(z1, 0)
        a1 = self._spmm(adj, h1)
        z2 = a1 @ params["w2"] + params["b2"]
        h2 = np.maximum(z2, 0)
        a2 = self._spmm(adj, h2)
        z3 = a2 @ params["w3"] + params["b3"]
        h3 = np.maximum(z3, 0)

        tgt = cat[:, 3]
        h_cur = h3[np.arange(b), cur]
        h_tgt = h3[np.arange(b), tgt]
        embs = [params["emb_service"][cat[:, 0]],
                params["emb_hour"][cat[:, 1]],
                params["emb_segment"][cat[:, 2]],
                params["emb_target"][tgt]]
        u = np.concatenate([h_cur, h_tgt] + embs + [scal], axis=1)
        zt = u @ params["w_trunk"] + params["b_trunk"]
        z = np.maximum(zt, 0)
        logits = z @ params["w_actor"] + params["b_actor"]
        value = z @ params["w_critic"][:, 0] + params["b_critic"][0]

        if not need_cache:
            return logits, value, None
        cache = {"a0": a0, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "z3": z3,
                 "u": u, "zt": zt, "z": z, "cur": cur, "cat": cat}
        return logits, value, cache

    # ---- backward -------------------------------------------------------------

    def backward(self, params, adj, cache, dlogits, dvalue):
        """Gradients of a scalar loss given dL/dlogits and dL/dvalue."""
        b = dlogits.shape[0]
        h = self.hidden
        z, zt, u = cache["z"], cache["zt"], cache["u"]

        grads = {}
        grads["w_actor"] = z.T @ dlogits
        grads["b_actor"] = dlogits.sum(axis=0)
        grads["w_critic"] = (z * dvalue[:, None]).sum(axis=0)[:, None]
        grads["b_critic"] = np.array([dvalue.sum()])
        dz = dlogits @ params["w_actor"].T + dvalue[:, None] * params["w_critic"][:, 0]
        dzt = dz * (zt > 0)
        grads["w_trunk"] = u.T @ dzt
        grads["b_trunk"] = dzt.sum(axis=0)
        du = dzt @ params["w_trunk"].T

        dh_cur = du[:, :h]
        dh_tgt = du[:, h:2 * h]
        e = self.emb_dim
        cat = cache["cat"]
        for i, name in enumerate(("service", "hour", "segment", "target")):
            demb = np.zeros_like(params[f"emb_{name}"], dtype=np.float64)
            np.add.at(demb, cat[:, i],
                      du[:, 2 * h + i * e: 2 * h + (i + 1) * e])
            grads[f"emb_{name}"] = demb

        dh3 = np.zeros((b, self.n_nodes, h), dtype=dh_cur.dtype)
        rows = np.arange(b)
        np.add.at(dh3, (rows, cache["cur"]), dh_cur)
        np.add.at(dh3, (rows, cache["cat"][:, 3]), dh_tgt)

        def conv_back(dh, z_pre, a_in, w_name):
            dz_pre = dh * (z_pre > 0)
            bn = dz_pre.shape[0] * dz_pre.shape[1]
            grads[w_name] = (a_in.reshape(bn, -1).T @ dz_pre.reshape(bn, -1))
            grads["b" + w_name[1:]] = dz_pre.sum(axis=(0, 1))
            da_in = dz_pre @ params[w_name].T
            return self._spmm(adj, da_in)  # adj is symmetric

        dh2 = conv_back(dh3, cache["z3"], cache["a2"], "w3")
        dh1 = conv_back(dh2, cache["z2"], cache["a1"], "w2")
        conv_back(dh1, cache["z1"], cache["a0"], "w1")
        return {k: np.asarray(v, dtype=np.float64) for k, v in grads.items()}


# --------------------------------------------------------------------------
# Masked categorical distribution
# --------------------------------------------------------------------------

def masked_log_probs(logits, mask):
    """Log-probabilities with masked entries at NEG_BIG; rows need >=1 valid."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim == 1:
        logits, mask = logits[None, :], mask[None, :]
        squeeze = True
    else:
        squeeze = False
    if not mask.any(axis=1).all():
        raise ValueError("all-zero action mask")
    ml = np.where(mask, logits, NEG_BIG)
    m = ml.max(axis=1, keepdims=True)
    ex = np.where(mask, np.exp(ml - m), 0.0)
    logp = ml - m - np.log(ex.sum(axis=1, keepdims=True))
    return logp[0] if squeeze else logp


def masked_distribution(logits, mask):
    """Probabilities: exactly zero on invalid entries, valid entries sum to 1."""
    logp = masked_log_probs(logits, mask)
    mask = np.asarray(mask, dtype=bool)
    p = np.where(mask, np.exp(logp), 0.0)
    return p / p.sum(axis=-1, keepdims=True)


def masked_entropy(logits, mask):
    logp = masked_log_probs(logits, mask)
    mask = np.asarray(mask, dtype=bool)
    p = np.where(mask, np.exp(logp), 0.0)
    plogp = np.where(mask, p * logp, 0.0)
    return -plogp.sum(axis=-1)


# --------------------------------------------------------------------------
# Observation batching and checkpoints
# --------------------------------------------------------------------------

def batch_from_observations(obs_list):
    x = np.stack([o.node_features for o in obs_list])
    cat = np.array([[o.service_idx, o.hour, o.segment_idx, o.target_node]
                    for o in obs_list], dtype=np.int64)
    scal = np.array([[o.dist_to_target, o.remaining_latency]
                     for o in obs_list], dtype=np.float64)
    cur = np.array([o.current_node for o in obs_list], dtype=np.int64)
    return {"x": x, "cat": cat, "scal": scal, "cur": cur}


def save_checkpoint(path, params, meta):
    arrays = {f"param_{k}": v for k, v in params.items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path, expect=None):
    """Load params + meta; `expect` maps meta keys to required values."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k[len("param_"):]: data[k] for k in data.files
                  if k.startswith("param_")}
    if expect:
        for key, want in expect.items():
            got = meta.get(key)
            if got != want:
                raise ValueError(
                    f"checkpoint mismatch on '{key}': checkpoint has {got!r}, "
                    f"scenario requires {want!r}")
    return params, meta
