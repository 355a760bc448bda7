import csv

import numpy as np
import pytest

from peglab import geometry as geo
from peglab.env import (ACTION_DIM, STATE_DIM, EpisodeConfig, InsertionEnv, RewardCoeffs, rollout,
                        rollout_zero_action)
from peglab.etcl import tuned_gains
from peglab.plant import MM, PlantParams, Wrench

PLANT = PlantParams(geo.rectangle(15, 15), clearance=0.02, L=0.02)
GAINS = tuned_gains(PLANT, np.array([2.0, 2.0, 0.002, 2.0, 2.0]), 5.55e-2)


def make(**kw):
    reward = kw.pop("reward", RewardCoeffs())
    return InsertionEnv(PLANT, GAINS, EpisodeConfig(**kw), reward)


def test_reset_is_deterministic_under_seed():
    env = make()
    a = env.reset(7)
    trace_a = [env.step(np.full(6, 0.3))[0] for _ in range(3)]
    b = env.reset(7)
    trace_b = [env.step(np.full(6, 0.3))[0] for _ in range(3)]
    assert a.shape == (STATE_DIM,)
    assert np.array_equal(a, b)
    assert all(np.array_equal(x, y) for x, y in zip(trace_a, trace_b))
    assert not np.array_equal(make().reset(8), a)


def test_start_errors_respect_configured_ranges():
    env = make(lateral_error=0.2, angular_error=1.5, yaw_error=0.5)
    for s in range(50):
        env.reset(s)
        p = env.p
        assert max(abs(p.d_x), abs(p.d_y)) <= 0.2 * MM
        assert max(abs(p.alpha), abs(p.beta)) <= 1.5e-3
        assert abs(p.gamma) <= 0.5e-3
        assert p.l == 0.0


def test_reward_examples():
    env = make(reward=RewardCoeffs(h_z=0.0, h_F=1.0, h_M=0.0))
    assert env.reward(0.0, Wrench([3.0, 4.0, 0.0], [0, 0, 0])) == pytest.approx(-5.0)
    env = make(reward=RewardCoeffs(h_z=100.0, h_F=0.0, h_M=2.0))
    assert env.reward(0.005, Wrench([0, 0, 0], [0.0, 0.3, 0.4])) == pytest.approx(-100 * 0.015 - 1.0)
    assert env.reward(PLANT.L, Wrench([0, 0, 0], [0, 0, 0])) == 0.0


def test_zero_action_keeps_constant_gains():
    env = make()
    env.reset(0)
    for _ in range(4):
        *_, info = env.step(np.zeros(ACTION_DIM))
        assert np.array_equal(info.gains, GAINS.as_array())
    env.reset(0)
    *_, info = env.step(np.ones(ACTION_DIM))
    assert np.allclose(info.gains, 2 * GAINS.as_array())


def test_zero_horizon_rollout_is_empty():
    s, a, r, infos = rollout_zero_action(make(), horizon=0, seed=1)
    assert s.shape == (1, STATE_DIM) and a.shape == (0, ACTION_DIM) and r.size == 0 and infos == []


def test_constant_gain_episode_reaches_depth():
    env = make()
    s, a, r, infos = rollout_zero_action(env, seed=3)
    last = infos[-1]
    assert last.success and not last.failure
    assert last.pose.l >= PLANT.L * (1 - 1e-9)
    assert not any(i.success for i in infos[:-1])
    assert len(r) < env.cfg.max_steps and np.all(r <= 0)
    with pytest.raises(RuntimeError):
        env.step(np.zeros(ACTION_DIM))


def test_truncation_at_step_budget():
    _, _, r, infos = rollout_zero_action(make(max_steps=3), seed=3)
    assert len(r) == 3 and infos[-1].truncated and not infos[-1].success


def test_clone_is_independent():
    env = make()
    env.reset(5)
    twin = env.clone()
    o1 = env.step(np.zeros(6))[0]
    o2 = twin.step(np.zeros(6))[0]
    assert np.array_equal(o1, o2)
    twin.step(np.zeros(6))
    assert env.t == 1 and twin.t == 2


def test_depth_estimate_tracks_true_depth_without_noise():
    env = make(wrench_noise=0.0, lateral_error=0.0, angular_error=0.0, yaw_error=0.0)
    _, _, _, infos = rollout_zero_action(env, horizon=5, seed=0)
    for i in infos:
        assert i.depth_estimate == pytest.approx(i.pose.l, abs=1e-9)


def test_log_written(tmp_path):
    env = make()
    rollout(env, lambda s: np.zeros(6), horizon=4, seed=0)
    env.write_log(tmp_path / "log.csv")
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and "Ft_z" in rows[0] and rows[-1]["step"] == "4"


def test_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig.from_dict({"max_step": 10})
    with pytest.raises(ValueError):
        EpisodeConfig(max_steps=0)
    with pytest.raises(ValueError):
        RewardCoeffs(0, 0, 0)
