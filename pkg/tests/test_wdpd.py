import csv

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from peglab import geometry as geo
from peglab.env import ACTION_DIM, STATE_DIM, EpisodeConfig, InsertionEnv
from peglab.etcl import tuned_gains
from peglab.plant import PlantParams
from peglab.rl import Agent, Batch, DdpgConfig, actor_loss, critic_loss, train, write_curve
from peglab.wdpd import (ConnectionGraph, Source, SubPolicyActivation, TransferConfig, attribution, connection_graph,
                         evaluate_similarity, method_weights, similarity, transfer_train, wdpd_actor_loss,
                         wdpd_critic_loss, weights)

CFG = DdpgConfig(hidden=(8,), dtype="float64", batch_size=8, buffer_size=64, warmup_episodes=1,
                 zero_init_actor=False)


def env(section=None, seed=0, steps=6):
    plant = PlantParams(section or geo.rectangle(15, 15), clearance=0.02, L=0.02)
    gains = tuned_gains(plant, np.array([2.0, 2.0, 0.002, 2.0, 2.0]), 5.55e-2)
    return InsertionEnv(plant, gains, EpisodeConfig(max_steps=steps, seed=seed))


def batch(n=16, seed=0):
    rng = np.random.default_rng(seed)
    return Batch.of((rng.normal(size=(n, STATE_DIM)), rng.uniform(-1, 1, (n, ACTION_DIM)), rng.normal(size=n),
                     rng.normal(size=(n, STATE_DIM)), rng.integers(0, 2, n).astype(float)), torch.float64)


def params(agent):
    return [p.detach().clone() for net in (agent.actor, agent.critic) for p in net.parameters()]


# -- sub-policies and attribution -------------------------------------------

def test_sub_policy_keeps_one_slot():
    act = SubPolicyActivation.of(1, 2, [0.1, -0.2, 0.3, 0.4, 0.5, 0.6])
    assert np.array_equal(act.action, [0, 0, 0.3, 0, 0, 0]) and act.source == 1
    with pytest.raises(ValueError):
        SubPolicyActivation.of(0, 6, np.zeros(6))


def test_attribution_oracle_and_errors():
    a = np.array([[1.0, 2.0], [3.0, -1.0]])
    b = np.array([[0.0, 2.0], [1.0, 1.0]])
    assert np.allclose(attribution(a, b), [1.5, 1.0])
    assert np.array_equal(attribution(a, a), [0.0, 0.0])
    with pytest.raises(ValueError):
        attribution(a, b[:1])


# -- graphs and similarity --------------------------------------------------

def test_connection_graph_examples():
    phi = np.zeros((ACTION_DIM, STATE_DIM))
    phi[2, 0] = 0.7
    phi[:, 1] = [3, 4, 0, 0, 0, 0]
    g = connection_graph(phi)
    assert g.G[2, 0] == 1.0
    assert np.allclose(g.G[:2, 1], [0.6, 0.8])
    assert g.zero_columns == tuple(range(2, STATE_DIM))
    assert np.array_equal(connection_graph(phi).G, g.G)
    with pytest.raises(ValueError):
        connection_graph(-phi)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (ACTION_DIM, STATE_DIM), elements=st.floats(0, 10)))
def test_nonzero_columns_have_unit_norm(phi):
    g = connection_graph(phi)
    norms = np.linalg.norm(g.G, axis=0)
    nz = np.linalg.norm(phi, axis=0) > 0
    assert np.allclose(norms[nz], 1.0) and np.all(norms[~nz] == 0)


def test_similarity_examples():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(ACTION_DIM, STATE_DIM))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    g = ConnectionGraph(rows, ())
    N = rng.normal(size=(1, ACTION_DIM))
    assert np.allclose(similarity(N, [g], [g], 100.0), N + 100.0)
    assert np.array_equal(similarity(N, [g], [g], 0.0), N)
    a, b = np.zeros((ACTION_DIM, STATE_DIM)), np.zeros((ACTION_DIM, STATE_DIM))
    a[:, 0], b[:, 1] = 1.0, 1.0
    assert np.array_equal(similarity(N, [ConnectionGraph(a, ())], [ConnectionGraph(b, ())], 100.0), N)
    with pytest.raises(ValueError):
        similarity(np.zeros((2, ACTION_DIM)), [g], [g], 1.0)


# -- weights ------------------------------------------------------------------

sims = arrays(float, st.tuples(st.integers(1, 4), st.just(ACTION_DIM)), elements=st.floats(-100, 100))


@settings(max_examples=100, deadline=None)
@given(sims, st.sampled_from(["source", "dimension"]))
def test_weight_properties(sim, axis):
    W = weights(sim, axis)
    ax = 0 if axis == "source" else 1
    assert np.all(W >= 0)
    assert np.allclose(W.sum(axis=ax), 1.0)
    spread = np.ptp(sim, axis=ax) > 0
    at_min = np.take_along_axis(W, np.expand_dims(np.argmin(sim, axis=ax), ax), ax).squeeze(ax)
    assert np.all(at_min[spread] == 0)


def test_weights_examples():
    sim = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 1.0]])
    assert np.allclose(weights(sim, "source"), [[0, 0.5, 1], [1, 0.5, 0]])
    assert np.allclose(weights(sim, "dimension"), [[0, 0.8, 0.2], [1 / 3, 2 / 3, 0]])
    with pytest.raises(ValueError):
        weights([[np.nan, 1.0]])


def test_method_weights():
    sim = np.array([[1.0, 2.0], [5.0, 0.0], [0.0, 0.0]])
    assert np.allclose(method_weights(sim, "equal"), 1 / 3)
    assert not np.any(method_weights(sim, "direct"))
    assert np.array_equal(method_weights(sim, "most"), [[0, 0], [1, 1], [0, 0]])
    assert np.array_equal(method_weights(sim, "least"), [[0, 0], [0, 0], [1, 1]])
    with pytest.raises(ValueError):
        method_weights(sim, "best")


# -- losses -------------------------------------------------------------------

def test_losses_reduce_bitwise_without_weights():
    agent, srcs = Agent(CFG, 0), [Agent(CFG, 1), Agent(CFG, 2)]
    b, W = batch(), np.zeros((2, ACTION_DIM))
    assert torch.equal(wdpd_actor_loss(agent, b, [s.actor for s in srcs], W, 2.0), actor_loss(agent, b))
    assert torch.equal(wdpd_critic_loss(agent, b, [s.critic for s in srcs], W, 5.0), critic_loss(agent, b))


def test_identical_source_adds_nothing():
    agent = Agent(CFG, 0)
    b = batch()
    W = np.ones((1, ACTION_DIM))
    assert wdpd_actor_loss(agent, b, [agent.actor], W, 2.0).item() == pytest.approx(actor_loss(agent, b).item(),
                                                                                       abs=1e-15)


def test_critic_loss_zero_when_matching_and_consistent():
    agent = Agent(DdpgConfig(hidden=(8,), dtype="float64", gamma=0.0), 0)
    b = batch()
    with torch.no_grad():
        b.r = agent.critic(torch.cat([b.s, b.a], dim=1))[:, 0].clone()
    assert wdpd_critic_loss(agent, b, [agent.critic], np.ones((1, ACTION_DIM)), 5.0).item() == 0.0


def test_distillation_linear_in_omega():
    agent, srcs = Agent(CFG, 0), [Agent(CFG, 1), Agent(CFG, 2)]
    b = batch()
    W = np.random.default_rng(0).uniform(size=(2, ACTION_DIM))
    for fn, nets, plain in ((wdpd_actor_loss, [s.actor for s in srcs], actor_loss),
                            (wdpd_critic_loss, [s.critic for s in srcs], critic_loss)):
        base = plain(agent, b).item()
        one = fn(agent, b, nets, W, 1.5).item() - base
        two = fn(agent, b, nets, W, 3.0).item() - base
        assert one > 0 and two == pytest.approx(2 * one, rel=1e-12)


def test_distillation_invariant_to_source_order():
    agent, srcs = Agent(CFG, 0), [Agent(CFG, k) for k in (1, 2, 3)]
    b = batch()
    W = np.random.default_rng(1).uniform(size=(3, ACTION_DIM))
    perm = [2, 0, 1]
    la = wdpd_actor_loss(agent, b, [s.actor for s in srcs], W, 2.0).item()
    lb = wdpd_actor_loss(agent, b, [srcs[k].actor for k in perm], W[perm], 2.0).item()
    assert la == pytest.approx(lb, rel=1e-12)
    ca = wdpd_critic_loss(agent, b, [s.critic for s in srcs], W, 5.0).item()
    cb = wdpd_critic_loss(agent, b, [srcs[k].critic for k in perm], W[perm], 5.0).item()
    assert ca == pytest.approx(cb, rel=1e-12)


def test_dimension_mismatch_rejected():
    agent = Agent(CFG, 0)
    other = Agent(CFG, 1, state_dim=10)
    b = batch()
    with pytest.raises(ValueError):
        wdpd_actor_loss(agent, b, [other.actor], np.ones((1, ACTION_DIM)), 2.0)
    with pytest.raises(ValueError):
        wdpd_critic_loss(agent, b, [other.critic], np.ones((1, ACTION_DIM)), 5.0)
    with pytest.raises(ValueError):
        wdpd_actor_loss(agent, b, [agent.actor], np.ones((2, ACTION_DIM)), 2.0)


# -- end to end ---------------------------------------------------------------

def test_zero_sources_and_direct_match_plain_training(tmp_path):
    _, ref = train(env(), 3, CFG, 4)
    write_curve(ref, tmp_path / "ref.csv")
    src = Source(Agent(CFG, 9), env(), "cuboid")
    for sources, method in (([], "wdpd"), ([src], "direct")):
        _, curve, report = transfer_train(env(), sources, CFG, TransferConfig(method=method), 3, 4)
        write_curve(curve, tmp_path / "c.csv")
        assert report is None
        assert (tmp_path / "c.csv").read_bytes() == (tmp_path / "ref.csv").read_bytes()


def test_similarity_is_read_only_and_reproducible(tmp_path):
    sources = [Source(Agent(CFG, 1), env(), "cuboid"), Source(Agent(CFG, 2), env(geo.circle(7.5)), "cylinder")]
    before = [params(s.agent) for s in sources]
    tcfg = TransferConfig(sampling_times=2, horizon=4)
    target = env(geo.rectangle(12, 15))
    r1 = evaluate_similarity(target, sources, tcfg, 3)
    r2 = evaluate_similarity(target, sources, tcfg, 3)
    for s, p in zip(sources, before):
        assert all(torch.equal(x, y) for x, y in zip(p, params(s.agent)))
    assert np.array_equal(r1.Sim, r2.Sim) and np.array_equal(r1.W, r2.W)
    assert r1.Sim.shape == (2, ACTION_DIM) and np.allclose(r1.W.sum(axis=0), 1.0)
    paths = r1.write(tmp_path)
    assert {p.name for p in paths} == {"similarity_N.csv", "similarity_Sim.csv", "similarity_W.csv",
                                       "similarity_long.csv"}
    with open(tmp_path / "similarity_long.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * ACTION_DIM and rows[0]["source"] == "cuboid"


def test_transfer_reproducible_with_report():
    src = [Source(Agent(CFG, 1), env(), "cuboid")]
    tcfg = TransferConfig(sampling_times=1, horizon=3)
    a1, c1, rep = transfer_train(env(), src, CFG, tcfg, 3, 0)
    a2, c2, _ = transfer_train(env(), src, CFG, tcfg, 3, 0, report=rep)
    assert [r.total_reward for r in c1] == [r.total_reward for r in c2]
    s = np.ones(STATE_DIM)
    assert np.array_equal(a1.act(s), a2.act(s))
    with pytest.raises(ValueError):
        transfer_train(env(), src * 2, CFG, tcfg, 1, 0, report=rep)
