"""Masked clipped-surrogate policy optimization for the provisioning MDP.

Rollouts are collected from the hourly simulation loop (episodes within an
hour share the ledger; hours cycle through the trace), advantages come from
GAE, and updates run shuffled minibatches of the clipped surrogate plus value
and entropy terms.  Gradients are exact (see nn.backward) and clipped by
global norm.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from . import nn as nn_mod
from .env import SUCCESS, SfcEnv
from .sfc import ChainError


class RolloutBuffer:
    def __init__(self, capacity, n_nodes, n_features, n_actions):
        self.capacity = capacity
        self.x = np.zeros((capacity, n_nodes, n_features), dtype=np.float32)
        self.cat = np.zeros((capacity, 4), dtype=np.int64)
        self.scal = np.zeros((capacity, 2), dtype=np.float64)
        self.cur = np.zeros(capacity, dtype=np.int64)
        self.mask = np.zeros((capacity, n_actions), dtype=np.uint8)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.logp_old = np.zeros(capacity, dtype=np.float64)
        self.value_old = np.zeros(capacity, dtype=np.float64)
        self.reward = np.zeros(capacity, dtype=np.float64)
        self.done = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.last_value = 0.0

    def add(self, obs, mask, action, logp, value, reward, done):
        i = self.pos
        self.x[i] = obs.node_features
        self.cat[i] = (obs.service_idx, obs.hour, obs.segment_idx, obs.target_node)
        self.scal[i] = (obs.dist_to_target, obs.remaining_latency)
        self.cur[i] = obs.current_node
        self.mask[i] = mask
        self.action[i] = action
        self.logp_old[i] = logp
        self.value_old[i] = value
        self.reward[i] = reward
        self.done[i] = done
        self.pos += 1

    @property
    def full(self):
        return self.pos >= self.capacity

    def batch(self, idx=None):
        sl = slice(0, self.pos) if idx is None else idx
        return {"x": self.x[sl], "cat": self.cat[sl], "scal": self.scal[sl],
                "cur": self.cur[sl]}


def gae(rewards, values, dones, gamma, lam, last_value=0.0):
    """Generalized advantage estimation; bootstrap is zero across done steps."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    t_max = len(rewards)
    adv = np.zeros(t_max)
    next_adv = 0.0
    next_value = float(last_value)
    for t in range(t_max - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        next_adv = delta + gamma * lam * nonterminal * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1c = 1 - self.beta1 ** self.t
        b2c = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = (self.lr * (self.m[k] / b1c)
                      / (np.sqrt(self.v[k] / b2c) + self.eps))
            params[k] = (params[k] - update).astype(params[k].dtype)


def clip_grads(grads, max_norm):
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


# --------------------------------------------------------------------------
# Loss and exact gradients
# --------------------------------------------------------------------------

def ppo_loss(net, params, adj, mb, cfg):
    """Scalar PPO loss on a minibatch dict; pure function of params."""
    logits, value, _ = net.forward(params, adj, mb["batch"])
    logp = nn_mod.masked_log_probs(logits, mb["mask"])
    logp_a = logp[np.arange(len(mb["action"])), mb["action"]]
    ratio = np.exp(logp_a - mb["logp_old"])
    adv = mb["adv"]
    s1 = ratio * adv
    s2 = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv
    l_clip = -np.mean(np.minimum(s1, s2))
    v_loss = np.mean((value - mb["ret"]) ** 2)
    ent = nn_mod.masked_entropy(logits, mb["mask"])
    return l_clip + cfg.value_coef * v_loss - cfg.entropy_coef * np.mean(ent)


def ppo_grads(net, params, adj, mb, cfg):
    """Loss, exact parameter gradients and diagnostics for a minibatch."""
    b = len(mb["action"])
    logits, value, cache = net.forward(params, adj, mb["batch"], need_cache=True)
    mask = np.asarray(mb["mask"], dtype=bool)
    logp = nn_mod.masked_log_probs(logits, mask)
    p = np.where(mask, np.exp(logp), 0.0)
    idx = np.arange(b)
    logp_a = logp[idx, mb["action"]]
    ratio = np.exp(logp_a - mb["logp_old"])
    adv = mb["adv"]

    s1 = ratio * adv
    s2 = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv
    l_clip = -np.mean(np.minimum(s1, s2))
    # d(-min)/dratio is -adv where the unclipped branch is active
    active = s1 <= s2
    dlogp_a = np.where(active, -adv * ratio, 0.0) / b

    dlogits = dlogp_a[:, None] * (-p)
    dlogits[idx, mb["action"]] += dlogp_a

    ent = nn_mod.masked_entropy(logits, mask)
    if cfg.entropy_coef:
        safe_logp = np.where(mask, logp, 0.0)
        dlogits += (cfg.entropy_coef / b) * p * (safe_logp + ent[:, None])

    v_err = value - mb["ret"]
    v_loss = np.mean(v_err ** 2)
    dvalue = 2.0 * cfg.value_coef * v_err / b

    grads = net.backward(params, adj, cache, dlogits, dvalue)
    loss = l_clip + cfg.value_coef * v_loss - cfg.entropy_coef * np.mean(ent)
    stats = {
        "loss": float(loss),
        "policy_loss": float(l_clip),
        "value_loss": float(v_loss),
        "entropy": float(np.mean(ent)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        "kl": float(np.mean(mb["logp_old"] - logp_a)),
    }
    return loss, grads, stats


# --------------------------------------------------------------------------
# Collection
# --------------------------------------------------------------------------

class EpisodeDriver:
    """Feeds flows to an env in trace order, handling hour boundaries and
    cycling the trace; tracks per-episode return and success."""

    def __init__(self, env, trace):
        self.env = env
        self.flows = trace.all_flows()
        if not self.flows:
            raise ValueError("traffic trace is empty")
        self.pos = -1
        self.episodes = []  # (return, success)
        self._ep_return = 0.0
        self.obs = None
        self.mask = None

    def _next_flow(self):
        self.pos += 1
        if self.pos >= len(self.flows):
            self.pos = 0
        flow = self.flows[self.pos]
        if self.pos == 0 or flow.hour != self.env.hour:
            self.env.hour_boundary(flow.hour)
        return flow

    def begin_episode(self):
        while True:
            flow = self._next_flow()
            try:
                obs = self.env.reset(flow)
            except ChainError:
                continue
            mask = self.env.action_mask()
            if mask.any() and not self.env._pending_budget_fail:
                self.obs, self.mask = obs, mask
                return
            outcome = self.env.step(0)  # immediate terminal, flow blocked
            self.episodes.append((outcome.reward, False))

    def record_step(self, outcome):
        self._ep_return += outcome.reward
        if outcome.done:
            success = outcome.info["terminal_kind"] == SUCCESS
            self.episodes.append((self._ep_return, success))
            self._ep_return = 0.0
            self.begin_episode()
        else:
            self.obs = outcome.observation
            self.mask = self.env.action_mask()

    def drain_episodes(self):
        out = self.episodes
        self.episodes = []
        return out


def collect(driver, net, params, adj, n_steps, rng, deterministic=False):
    """Sample `n_steps` transitions from the masked policy."""
    env = driver.env
    buffer = RolloutBuffer(n_steps, env.graph.n_nodes, net.N_FEATURES,
                           env.n_actions)
    if driver.obs is None:
        driver.begin_episode()
    while not buffer.full:
        obs, mask = driver.obs, driver.mask
        batch = nn_mod.batch_from_observations([obs])
        logits, value, _ = net.forward(params, adj, batch)
        probs = nn_mod.masked_distribution(logits[0], mask)
        if deterministic:
            action = int(np.argmax(probs))
        else:
            action = int(rng.choice(len(probs), p=probs))
        logp = nn_mod.masked_log_probs(logits[0], mask)[action]
        outcome = env.step(action)
        buffer.add(obs, mask, action, float(logp), float(value[0]),
                   outcome.reward, outcome.done)
        driver.record_step(outcome)
    if buffer.done[-1]:
        buffer.last_value = 0.0
    else:
        batch = nn_mod.batch_from_observations([driver.obs])
        _, value, _ = net.forward(params, adj, batch)
        buffer.last_value = float(value[0])
    return buffer


# --------------------------------------------------------------------------
# Update and training loop
# --------------------------------------------------------------------------

def update(net, params, adj, buffer, cfg, optimizer, rng):
    """One PPO update over a full buffer; mutates params in place."""
    adv, ret = gae(buffer.reward * cfg.reward_scale, buffer.value_old,
                   buffer.done, cfg.gamma, cfg.gae_lambda, buffer.last_value)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = buffer.pos
    all_stats = []
    for _ in range(cfg.epochs_per_rollout):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            mb = {
                "batch": buffer.batch(idx),
                "mask": buffer.mask[idx],
                "action": buffer.action[idx],
                "logp_old": buffer.logp_old[idx],
                "adv": adv[idx],
                "ret": ret[idx],
            }
            loss, grads, stats = ppo_grads(net, params, adj, mb, cfg)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss in minibatch starting at {start}")
            grads, stats["grad_norm"] = clip_grads(grads, cfg.grad_clip)
            optimizer.step(params, grads)
            all_stats.append(stats)
    for k, v in params.items():
        if not np.isfinite(v).all():
            raise RuntimeError(f"non-finite parameter '{k}' after update")
    keys = all_stats[0].keys()
    return {k: float(np.mean([s[k] for s in all_stats])) for k in keys}


def train(graph, catalog, trace, mode, cfg, out_dir, run_name=None,
          config_digest=""):
    """Alternate collect/update until cfg.train.total_steps; returns the
    final checkpoint path and the learning-curve path."""
    tc = cfg.train
    run_dir = os.path.join(out_dir, run_name) if run_name else out_dir
    os.makedirs(run_dir, exist_ok=True)
    mode_tag = mode.lower()

    env = SfcEnv(graph, catalog, mode, cfg.reward, cfg.power)
    adj = nn_mod.normalized_adjacency(graph)
    net = nn_mod.GcnActorCritic(graph.n_nodes, env.n_actions,
                                hidden=tc.hidden, emb_dim=tc.emb_dim)
    params = net.init_params(tc.seed)
    optimizer = Adam(params, tc.lr)
    rng = np.random.default_rng(tc.seed + 1)
    driver = EpisodeDriver(env, trace)

    meta = {
        "n_nodes": graph.n_nodes,
        "n_actions": env.n_actions,
        "hidden": tc.hidden,
        "emb_dim": tc.emb_dim,
        "mode": mode,
        "config_hash": config_digest,
        "scenario_name": graph.meta.get("name", ""),
    }

    curve_path = os.path.join(run_dir, f"{mode_tag}_learning_curve.csv")
    window = []
    steps_done = 0
    rollout_i = 0
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["steps", "mean_reward", "success_rate",
                         "clip_frac", "kl"])
        while steps_done < tc.total_steps:
            # always a full rollout so minibatching stays exact
            buffer = collect(driver, net, params, adj, tc.rollout_size, rng)
            steps_done += buffer.pos
            stats = update(net, params, adj, buffer, tc, optimizer, rng)
            window.extend(driver.drain_episodes())
            window = window[-100:]
            mean_rw = float(np.mean([r for r, _ in window])) if window else 0.0
            succ = float(np.mean([s for _, s in window])) if window else 0.0
            writer.writerow([steps_done, format(mean_rw, ".6f"),
                             format(succ, ".6f"),
                             format(stats["clip_frac"], ".6f"),
                             format(stats["kl"], ".8f")])
            fh.flush()
            rollout_i += 1
            if rollout_i % tc.checkpoint_every == 0:
                _save(run_dir, mode_tag, steps_done, params, meta)
    ckpt_path = _save(run_dir, mode_tag, steps_done, params, meta)
    return ckpt_path, curve_path


def _save(run_dir, mode_tag, steps, params, meta):
    path = os.path.join(run_dir, f"{mode_tag}_{steps}.ckpt")
    with open(path, "wb") as fh:
        nn_mod.save_checkpoint(fh, params, {**meta, "steps": steps})
    return path
