"""End-to-end acceptance checks for the provisioning laboratory.

Each test covers one release criterion and prints a single PASS/FAIL line so
the suite output doubles as a checklist.  The heavy training-based checks sit
at the bottom of the file.
"""

import time

import numpy as np
import pytest

from sfclab import csp, nn, ppo, power, runner, sfc
from sfclab.config import Config, PowerParams, ScenarioParams, TrainParams
from sfclab.env import SUCCESS, InvalidActionError, SfcEnv
from sfclab.scenario import builtin_catalog, generate_topology, generate_traffic
from sfclab.topology import load_topology

from conftest import (ALL_SERVICES, line6_doc, link, make_doc, make_flow,
                      node, random_connected_doc)


def check(name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {tag} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# shared desk-scale scenario (~20 nodes, 4 CU candidates)
# ---------------------------------------------------------------------------

SMALL_PARAMS = ScenarioParams(n_ru=8, n_du=2, n_cu=4, n_upf=2, n_transport=4,
                              n_compute=8, area_km=15)


@pytest.fixture(scope="module")
def small_scenario():
    doc = generate_topology(SMALL_PARAMS, seed=7)
    graph = load_topology(doc)
    catalog = builtin_catalog()
    trace = generate_traffic(catalog, graph.role_nodes("RU"), [0.25] * 24,
                             seed=11)
    return doc, catalog, trace


def fresh_graph(doc):
    return load_topology(doc)


# ---------------------------------------------------------------------------
# constraint audit: three policies, >=50 nodes, >=1000 flows, zero violations
# ---------------------------------------------------------------------------

def test_constraint_audit_full_day(tmp_path):
    params = ScenarioParams(n_ru=24, n_du=3, n_cu=4, n_upf=3, n_transport=16,
                            n_compute=12, area_km=30)
    doc = generate_topology(params, seed=1)
    graph = load_topology(doc)
    catalog = builtin_catalog()
    trace = generate_traffic(catalog, graph.role_nodes("RU"), [0.2] * 24,
                             seed=2)
    assert graph.n_nodes >= 50 and trace.n_flows() >= 1000

    cfg = Config()
    cfg.train = TrainParams(total_steps=24576, rollout_size=2048,
                            minibatch=128, hidden=32, emb_dim=8)
    ckpts = {}
    for mode in (sfc.MODE_JOINT, sfc.MODE_FIXED):
        ckpts[mode], _ = ppo.train(load_topology(doc), catalog, trace, mode,
                                   cfg, str(tmp_path / mode))

    t0 = time.time()
    violations = []
    counts = {}
    for policy, ckpt in ((runner.POLICY_CSP, None),
                         (runner.POLICY_JOINT, ckpts[sfc.MODE_JOINT]),
                         (runner.POLICY_FIXED, ckpts[sfc.MODE_FIXED])):
        g = load_topology(doc)
        report = runner.evaluate(policy, g, trace, cfg, ckpt_path=ckpt)
        violations += runner.audit_report(report, g)
        counts[policy] = (report.accepted, report.blocked)
    elapsed = time.time() - t0

    check("constraint-audit",
          not violations and elapsed < 300.0,
          f"nodes={graph.n_nodes} flows={trace.n_flows()} "
          f"violations={len(violations)} counts={counts} "
          f"eval_time={elapsed:.1f}s")


# ---------------------------------------------------------------------------
# CSP vs exhaustive enumeration on 200 random small instances
# ---------------------------------------------------------------------------

def enumerate_shortest(g, src, dst, bw_req, budget):
    best = None
    stack = [(src, {src}, 0.0)]
    while stack:
        v, seen, delay = stack.pop()
        if delay > budget:
            continue
        if v == dst:
            best = delay if best is None else min(best, delay)
            continue
        for li, nxt in g.out_neighbors(v):
            if nxt in seen or g.bw_free[li] < bw_req:
                continue
            stack.append((nxt, seen | {nxt}, delay + float(g.link_delay[li])))
    return best


def test_csp_oracle_equivalence():
    rng = np.random.default_rng(23)
    agree = 0
    for _ in range(200):
        n = int(rng.integers(3, 11))
        g = load_topology(random_connected_doc(
            rng, n, extra_edges=int(rng.integers(0, 6)), bw=10, max_delay=4))
        g.bw_free[:] = rng.integers(0, 3, size=g.n_links) * 5.0
        budget = float(rng.uniform(1.0, 10.0))
        src, dst = (int(v) for v in rng.choice(n, size=2, replace=False))
        found = csp.csp_route_segment(g, src, dst, 5.0, budget)
        expect = enumerate_shortest(g, src, dst, 5.0, budget)
        if expect is None:
            agree += found is None
        else:
            agree += found is not None and abs(found[1] - expect) < 1e-9
    check("csp-oracle", agree == 200, f"{agree}/200 instances agree")


# ---------------------------------------------------------------------------
# mask soundness over 10,000 reachable states
# ---------------------------------------------------------------------------

def test_mask_soundness(small_scenario):
    doc, catalog, trace = small_scenario
    rng = np.random.default_rng(31)
    cfg = Config()
    states = 0
    sound = True
    flows = trace.all_flows()
    for mode in (sfc.MODE_JOINT, sfc.MODE_FIXED):
        env = SfcEnv(fresh_graph(doc), catalog, mode, cfg.reward, cfg.power)
        env.hour_boundary(0)
        fi = 0
        while states < 5000 * (1 if mode == sfc.MODE_JOINT else 2):
            flow = flows[fi % len(flows)]
            fi += 1
            env.reset(flow)
            while True:
                mask = env.action_mask()
                st = env.state
                out = env.graph.out_neighbors(st.current_node)
                for i in range(env.n_actions):
                    if i < len(out):
                        valid = sfc.move_valid(st, out[i][0], env.graph)
                    elif i == env.d_max and mode == sfc.MODE_JOINT:
                        valid = sfc.embed_valid(st, st.current_node, env.graph)
                    else:
                        valid = False
                    sound &= bool(mask[i]) == valid
                states += 1
                choices = np.flatnonzero(mask)
                if len(choices) == 0:
                    env.step(0)
                    break
                try:
                    outcome = env.step(int(rng.choice(choices)))
                except InvalidActionError:
                    sound = False
                    break
                if outcome.done:
                    break
    check("mask-soundness", sound and states >= 10000,
          f"{states} states checked")


# ---------------------------------------------------------------------------
# gradient correctness on a 6-node scenario with hidden size 4
# ---------------------------------------------------------------------------

def test_gradient_finite_differences():
    g = load_topology(line6_doc())
    cfg = Config()
    env = SfcEnv(g, builtin_catalog(), sfc.MODE_JOINT, cfg.reward, cfg.power)
    net = nn.GcnActorCritic(6, env.n_actions, hidden=4, emb_dim=2,
                            dtype=np.float64)
    params = net.init_params(3)
    adj = nn.normalized_adjacency(g)
    trace = generate_traffic(builtin_catalog(), [0],
                             [0.02] + [0.0] * 23, seed=7)
    driver = ppo.EpisodeDriver(env, trace)
    rng = np.random.default_rng(5)
    buf = ppo.collect(driver, net, params, adj, 16, rng)
    tc = TrainParams(total_steps=0)
    adv, ret = ppo.gae(buf.reward * tc.reward_scale, buf.value_old, buf.done,
                       tc.gamma, tc.gae_lambda, buf.last_value)
    mb = {"batch": buf.batch(np.arange(16)), "mask": buf.mask[:16],
          "action": buf.action[:16],
          "logp_old": buf.logp_old[:16] + rng.normal(scale=0.2, size=16),
          "adv": adv, "ret": ret}
    _, grads, _ = ppo.ppo_grads(net, params, adj, mb, tc)

    eps = 1e-6
    worst = 0.0
    n_checked = 0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = ppo.ppo_loss(net, params, adj, mb, tc)
            flat[j] = orig - eps
            down = ppo.ppo_loss(net, params, adj, mb, tc)
            flat[j] = orig
            fd = (up - down) / (2 * eps)
            an = grads[name].reshape(-1)[j]
            err = abs(an - fd) / max(abs(fd), 1e-6 / 1e-4)
            worst = max(worst, err)
            n_checked += 1
    check("gradient-check", worst <= 1e-4,
          f"{n_checked} parameters, worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# reward identity over 1,000 random episodes
# ---------------------------------------------------------------------------

def test_reward_identity(small_scenario):
    doc, catalog, trace = small_scenario
    cfg = Config()
    env = SfcEnv(fresh_graph(doc), catalog, sfc.MODE_JOINT, cfg.reward,
                 cfg.power)
    rng = np.random.default_rng(41)
    flows = trace.all_flows()
    episodes = 0
    worst = 0.0
    fi = 0
    env.hour_boundary(0)
    while episodes < 1000:
        flow = flows[fi % len(flows)]
        fi += 1
        env.reset(flow)
        total = 0.0
        parts = {"shaping": 0.0, "intermediate": 0.0, "energy_penalty": 0.0,
                 "terminal": 0.0}
        while True:
            choices = np.flatnonzero(env.action_mask())
            action = int(rng.choice(choices)) if len(choices) else 0
            out = env.step(action)
            total += out.reward
            for k, v in out.info["reward_components"].items():
                parts[k] += v
            if out.done:
                break
        recon = (parts["shaping"] + parts["intermediate"]
                 - parts["energy_penalty"] + parts["terminal"])
        worst = max(worst, abs(total - recon) / max(abs(recon), 1e-30))
        episodes += 1
    check("reward-identity", worst <= 1e-9,
          f"{episodes} episodes, worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# power model: endpoints, component sum, monotonicity under added flows
# ---------------------------------------------------------------------------

def test_power_model(small_scenario):
    doc, catalog, trace = small_scenario
    p = PowerParams()
    endpoints = (power.node_power(0.0, p) == p.p_idle_w
                 and power.node_power(1.0, p) == p.p_max_w)

    g = fresh_graph(doc)
    flows = [f for f in trace.all_flows()][:400]
    records = []
    totals = []
    sums_ok = True
    i = 0
    while len(totals) < 100 and i < len(flows):
        result = csp.csp_provision(flows[i], g, g.placement)
        i += 1
        if not result.accepted:
            continue
        records.append(result.record)
        rates = runner.per_router_rates(g, records)
        rep = power.hourly_energy(g, rates, p, hour=0)
        sums_ok &= abs(rep.total_kwh - (rep.node_kwh + rep.net_idle_kwh
                                        + rep.net_dyn_kwh)) <= 1e-9 * rep.total_kwh
        totals.append(rep.total_kwh)
    monotone = all(b >= a - 1e-12 for a, b in zip(totals, totals[1:]))
    check("power-model", endpoints and sums_ok and monotone
          and len(totals) == 100,
          f"endpoints={endpoints} sums={sums_ok} monotone={monotone} "
          f"increments={len(totals)}")


# ---------------------------------------------------------------------------
# determinism: byte-identical scenario, traffic and evaluation outputs
# ---------------------------------------------------------------------------

def test_determinism(tmp_path):
    import json

    docs = [generate_topology(SMALL_PARAMS, seed=7) for _ in range(2)]
    scen_ok = (json.dumps(docs[0], sort_keys=True)
               == json.dumps(docs[1], sort_keys=True))

    catalog = builtin_catalog()
    traces, eval_files, curves = [], [], []
    for run in range(2):
        g = load_topology(docs[run])
        trace = generate_traffic(catalog, g.role_nodes("RU"), [0.1] * 24,
                                 seed=3)
        traces.append(trace.to_csv_bytes())
        report = runner.evaluate(runner.POLICY_CSP, g, trace, Config())
        out = tmp_path / f"rep{run}"
        runner.write_report(report, str(out))
        eval_files.append(b"".join(
            open(out / name, "rb").read()
            for name in ("energy_hourly.csv", "latency_hourly.csv",
                         "per_slice.csv")))
        cfg = Config()
        cfg.train = TrainParams(total_steps=2048, rollout_size=1024,
                                minibatch=128, epochs_per_rollout=2,
                                hidden=16, emb_dim=4)
        _, curve = ppo.train(load_topology(docs[run]), catalog, trace,
                             sfc.MODE_JOINT, cfg, str(tmp_path / f"t{run}"))
        curves.append(open(curve, "rb").read())

    check("determinism",
          scen_ok and traces[0] == traces[1]
          and eval_files[0] == eval_files[1] and curves[0] == curves[1],
          f"scenario={scen_ok} traffic={traces[0] == traces[1]} "
          f"eval={eval_files[0] == eval_files[1]} "
          f"curve={curves[0] == curves[1]}")


# ---------------------------------------------------------------------------
# learning progress on the ~20-node scenario with 4 CU candidates
# ---------------------------------------------------------------------------

def test_learning_progress(small_scenario, tmp_path):
    doc, catalog, trace = small_scenario
    cfg = Config()
    cfg.train = TrainParams(total_steps=102400, rollout_size=2048,
                            minibatch=128, hidden=64, emb_dim=8, seed=0)
    t0 = time.time()
    ckpt, curve = ppo.train(fresh_graph(doc), catalog, trace, sfc.MODE_JOINT,
                            cfg, str(tmp_path))
    rows = [line.split(",") for line in
            open(curve).read().strip().splitlines()[1:]]
    rewards = [float(r[1]) for r in rows]
    first_window = float(np.mean(rewards[:5]))
    trailing = float(np.mean(rewards[-5:]))

    report = runner.evaluate(runner.POLICY_JOINT, fresh_graph(doc), trace,
                             cfg, ckpt_path=ckpt)
    rate = report.accepted / trace.n_flows()
    elapsed = time.time() - t0
    check("learning-progress",
          trailing > first_window and rate >= 0.95 and elapsed < 1800,
          f"first-window reward {first_window:.1f}, trailing {trailing:.1f}, "
          f"success rate {rate:.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# directional energy claim on a heterogeneous-CU scenario, 2 of 3 seeds
# ---------------------------------------------------------------------------

def corridor_doc():
    """Four RUs feed one DU; two CUs sit at equal distance but with very
    different power slopes; the fixed mapping pins the expensive one."""
    nodes = [node(i, ["RU"]) for i in range(4)]
    nodes += [node(4, ["TRANSPORT"]),
              node(5, ["DU"], cpu=400.0, proc=0.1),
              node(6, ["TRANSPORT"]),
              node(7, ["CU"], cpu=60.0, proc=0.1),
              node(8, ["CU"], cpu=60.0, proc=0.1),
              node(9, ["TRANSPORT"]),
              node(10, ["UPF"], cpu=400.0, proc=0.1)]
    links = [link(i, 4, bw=100000, delay=0.1) for i in range(4)]
    links += [link(4, 5, bw=100000, delay=0.1),
              link(5, 6, bw=100000, delay=0.1),
              link(6, 7, bw=100000, delay=0.1),
              link(6, 8, bw=100000, delay=0.1),
              link(7, 9, bw=100000, delay=0.1),
              link(8, 9, bw=100000, delay=0.1),
              link(9, 10, bw=100000, delay=0.1)]
    placement = {"ru_to_du": {i: 5 for i in range(4)}, "du_to_cu": {5: 7},
                 "upf_of_service": {s: 10 for s in ALL_SERVICES}}
    return make_doc(nodes, links, placement, meta={"name": "corridor"})


def test_directional_energy(tmp_path):
    doc = corridor_doc()
    catalog = builtin_catalog()
    trace = generate_traffic(catalog, [0, 1, 2, 3], [0.25] * 24, seed=5)
    cfg = Config()
    cfg.power = PowerParams(p_max_per_node={7: 2000.0, 8: 120.0})

    rep_csp = runner.evaluate(runner.POLICY_CSP, load_topology(doc), trace,
                              cfg)
    wins = 0
    details = [f"csp={rep_csp.total_energy_kwh:.2f}kWh/"
               f"{rep_csp.accepted}acc"]
    for seed in (0, 1, 2):
        cfg.train = TrainParams(total_steps=40960, rollout_size=2048,
                                minibatch=128, hidden=64, emb_dim=8,
                                seed=seed)
        ckpt, _ = ppo.train(load_topology(doc), catalog, trace,
                            sfc.MODE_JOINT, cfg, str(tmp_path / f"s{seed}"))
        rep = runner.evaluate(runner.POLICY_JOINT, load_topology(doc), trace,
                              cfg, ckpt_path=ckpt)
        win = (rep.total_energy_kwh <= rep_csp.total_energy_kwh
               and rep.accepted >= rep_csp.accepted)
        wins += win
        details.append(f"seed{seed}={rep.total_energy_kwh:.2f}kWh/"
                       f"{rep.accepted}acc/{'win' if win else 'loss'}")
    check("directional-energy", wins >= 2, " ".join(details))
