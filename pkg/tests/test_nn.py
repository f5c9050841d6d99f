"""Network building blocks: adjacency, masking, exact gradients, checkpoints."""

import numpy as np
import pytest

from sfclab import nn
from sfclab.topology import load_topology

from conftest import ALL_SERVICES, link, make_doc, node, random_connected_doc


def transport_graph(links, n):
    doc = make_doc(
        [node(i, ["TRANSPORT"]) for i in range(n)], links,
        {"ru_to_du": {}, "du_to_cu": {},
         "upf_of_service": {s: 0 for s in ALL_SERVICES}})
    return load_topology(doc)


def random_batch(rng, net, b=4, n_nodes=None):
    n = n_nodes or net.n_nodes
    return {
        "x": rng.uniform(0, 1, size=(b, n, net.N_FEATURES)),
        "cat": np.column_stack([
            rng.integers(0, net.N_SERVICES, b),
            rng.integers(0, net.N_HOURS, b),
            rng.integers(0, net.N_SEGMENTS, b),
            rng.integers(0, n, b)]),
        "scal": rng.uniform(0, 1, size=(b, net.N_SCALARS)),
        "cur": rng.integers(0, n, b),
    }


# ---------------------------------------------------------------------------
# normalized adjacency
# ---------------------------------------------------------------------------

def test_adjacency_single_node_is_identity():
    doc = make_doc([node(0, ["TRANSPORT"])], [],
                   {"ru_to_du": {}, "du_to_cu": {},
                    "upf_of_service": {s: 0 for s in ALL_SERVICES}})
    adj = nn.normalized_adjacency(load_topology(doc))
    assert adj.toarray() == pytest.approx(np.array([[1.0]]))


def test_adjacency_two_nodes_all_half():
    g = transport_graph([link(0, 1)], 2)
    adj = nn.normalized_adjacency(g).toarray()
    # both nodes have degree 2 after the self-loop: every entry 1/2
    assert adj == pytest.approx(np.full((2, 2), 0.5))


def test_adjacency_matches_dense_oracle():
    rng = np.random.default_rng(5)
    g = load_topology(random_connected_doc(rng, 12, extra_edges=6))
    a = np.zeros((12, 12))
    for s, d in zip(g.link_src, g.link_dst):
        a[int(s), int(d)] = 1.0
        a[int(d), int(s)] = 1.0
    a += np.eye(12)
    d_inv = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    assert nn.normalized_adjacency(g).toarray() == pytest.approx(
        d_inv @ a @ d_inv, rel=1e-12)
    # symmetric, rows reach only graph neighbors plus self
    adj = nn.normalized_adjacency(g).toarray()
    assert adj == pytest.approx(adj.T)


# ---------------------------------------------------------------------------
# masked distribution
# ---------------------------------------------------------------------------

def test_masked_probabilities_exact_zero_and_normalized():
    logits = np.array([1.0, 2.0, 3.0, 4.0])
    mask = np.array([1, 0, 1, 0])
    p = nn.masked_distribution(logits, mask)
    assert p[1] == 0.0 and p[3] == 0.0
    assert p.sum() == pytest.approx(1.0, rel=1e-12)
    # restricted softmax over the valid entries
    expect = np.exp([1.0, 3.0]) / np.exp([1.0, 3.0]).sum()
    assert p[[0, 2]] == pytest.approx(expect, rel=1e-12)


def test_all_zero_mask_raises():
    with pytest.raises(ValueError):
        nn.masked_log_probs(np.zeros(3), np.zeros(3))


def test_single_valid_action_probability_one():
    p = nn.masked_distribution(np.array([-5.0, 7.0, 0.1]),
                               np.array([0, 1, 0]))
    assert p[1] == pytest.approx(1.0)
    assert nn.masked_entropy(np.array([-5.0, 7.0, 0.1]),
                             np.array([0, 1, 0])) == pytest.approx(0.0)


def test_uniform_mask_entropy_is_log_k():
    ent = nn.masked_entropy(np.zeros(5), np.array([1, 1, 1, 0, 0]))
    assert ent == pytest.approx(np.log(3), rel=1e-12)


def test_mask_invariant_to_invalid_logit_values():
    mask = np.array([1, 0, 1, 1])
    a = nn.masked_log_probs(np.array([0.3, 1e6, -0.2, 0.9]), mask)
    b = nn.masked_log_probs(np.array([0.3, -1e6, -0.2, 0.9]), mask)
    assert a[[0, 2, 3]] == pytest.approx(b[[0, 2, 3]], rel=1e-12)


def test_zero_params_give_uniform_policy():
    g = transport_graph([link(0, 1), link(1, 2)], 3)
    net = nn.GcnActorCritic(3, 3, hidden=4, emb_dim=2, dtype=np.float64)
    params = {k: np.zeros_like(v) for k, v in net.init_params(0).items()}
    adj = nn.normalized_adjacency(g)
    batch = random_batch(np.random.default_rng(0), net, b=2, n_nodes=3)
    logits, value, _ = net.forward(params, adj, batch)
    p = nn.masked_distribution(logits, np.ones((2, 3)))
    assert p == pytest.approx(np.full((2, 3), 1 / 3), rel=1e-12)
    assert value == pytest.approx(np.zeros(2))


# ---------------------------------------------------------------------------
# forward structure
# ---------------------------------------------------------------------------

def test_three_hop_receptive_field():
    # line of 8 routers; current and target at node 0.  Node features more
    # than 3 hops away cannot influence the output of a 3-layer convolution.
    g = transport_graph([link(i, i + 1) for i in range(7)], 8)
    net = nn.GcnActorCritic(8, 3, hidden=8, emb_dim=4, dtype=np.float64)
    params = net.init_params(1)
    adj = nn.normalized_adjacency(g)
    batch = random_batch(np.random.default_rng(2), net, b=1, n_nodes=8)
    batch["cur"][:] = 0
    batch["cat"][:, 3] = 0
    base_logits, base_value, _ = net.forward(params, adj, batch)

    far = dict(batch, x=batch["x"].copy())
    far["x"][0, 4:, :] += 10.0          # nodes 4..7 are >= 4 hops from node 0
    logits, value, _ = net.forward(params, adj, far)
    assert logits == pytest.approx(base_logits, rel=1e-12)
    assert value == pytest.approx(base_value, rel=1e-12)

    near = dict(batch, x=batch["x"].copy())
    near["x"][0, 3, :] += 10.0          # exactly 3 hops away: visible
    logits, _, _ = net.forward(params, adj, near)
    assert not np.allclose(logits, base_logits)


def test_target_node_changes_output_with_identical_features():
    g = transport_graph([link(0, 1), link(1, 2), link(0, 2)], 3)
    net = nn.GcnActorCritic(3, 3, hidden=8, emb_dim=4, dtype=np.float64)
    params = net.init_params(3)
    adj = nn.normalized_adjacency(g)
    batch = random_batch(np.random.default_rng(4), net, b=1, n_nodes=3)
    batch["x"][:] = 1.0  # all nodes look alike; only the task vector differs
    batch["cur"][:] = 0
    batch["cat"][:, 3] = 1
    l1, _, _ = net.forward(params, adj, batch)
    batch["cat"][:, 3] = 2
    l2, _, _ = net.forward(params, adj, batch)
    assert not np.allclose(l1, l2)


# ---------------------------------------------------------------------------
# gradients vs finite differences
# ---------------------------------------------------------------------------

def fd_check(loss_fn, params, grads, rng, n_probes=60, eps=1e-6):
    names = sorted(params)
    for _ in range(n_probes):
        name = names[rng.integers(len(names))]
        flat_idx = rng.integers(params[name].size)
        idx = np.unravel_index(flat_idx, params[name].shape)
        orig = params[name][idx]
        params[name][idx] = orig + eps
        up = loss_fn(params)
        params[name][idx] = orig - eps
        down = loss_fn(params)
        params[name][idx] = orig
        fd = (up - down) / (2 * eps)
        an = grads[name][idx]
        assert an == pytest.approx(fd, rel=1e-5, abs=1e-8), \
            f"{name}{idx}: analytic {an} vs fd {fd}"


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    g = load_topology(random_connected_doc(rng, 6, extra_edges=3))
    net = nn.GcnActorCritic(6, 4, hidden=5, emb_dim=3, dtype=np.float64)
    params = net.init_params(9)
    adj = nn.normalized_adjacency(g)
    batch = random_batch(rng, net, b=3, n_nodes=6)
    # fixed random upstream gradients define the scalar loss
    wl = rng.normal(size=(3, 4))
    wv = rng.normal(size=3)

    def loss_fn(p):
        logits, value, _ = net.forward(p, adj, batch)
        return float((wl * logits).sum() + (wv * value).sum())

    _, _, cache = net.forward(params, adj, batch, need_cache=True)
    grads = net.backward(params, adj, cache, wl, wv)
    assert set(grads) == set(params)
    fd_check(loss_fn, params, grads, rng)


def test_backward_value_head_analytic():
    rng = np.random.default_rng(13)
    g = load_topology(random_connected_doc(rng, 5, extra_edges=2))
    net = nn.GcnActorCritic(5, 3, hidden=4, emb_dim=2, dtype=np.float64)
    params = net.init_params(0)
    adj = nn.normalized_adjacency(g)
    batch = random_batch(rng, net, b=2, n_nodes=5)
    _, _, cache = net.forward(params, adj, batch, need_cache=True)
    dvalue = np.array([1.0, -2.0])
    grads = net.backward(params, adj, cache, np.zeros((2, 3)), dvalue)
    # d loss / d b_critic = sum of dvalue; d/d w_critic = z^T dvalue
    assert grads["b_critic"][0] == pytest.approx(-1.0, rel=1e-12)
    assert grads["w_critic"][:, 0] == pytest.approx(
        cache["z"].T @ dvalue, rel=1e-10)
    assert np.allclose(grads["w_actor"], 0.0)
    assert np.allclose(grads["b_actor"], 0.0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = nn.GcnActorCritic(4, 3, hidden=4, emb_dim=2)
    params = net.init_params(5)
    meta = {"n_nodes": 4, "n_actions": 3, "mode": "joint"}
    path = tmp_path / "model.ckpt.npz"
    nn.save_checkpoint(path, params, meta)
    loaded, got_meta = nn.load_checkpoint(path, expect={"n_nodes": 4})
    assert got_meta == meta
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k])


def test_checkpoint_expect_mismatch(tmp_path):
    net = nn.GcnActorCritic(4, 3, hidden=4, emb_dim=2)
    path = tmp_path / "model.ckpt.npz"
    nn.save_checkpoint(path, net.init_params(5), {"n_nodes": 4})
    with pytest.raises(ValueError, match="n_nodes"):
        nn.load_checkpoint(path, expect={"n_nodes": 9})
