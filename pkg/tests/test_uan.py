import math

import numpy as np
import pytest

from src.calib.uan import (
    ErrorHistory,
    UanEnv,
    UanEnvConfig,
    UanModel,
    UanPlant,
    build_observation,
    calibrated_step,
    oracle_correction,
    pd_equivalent_error,
    smooth_term,
    train_uan,
    uan_reward,
)
from src.config import build_plant_config, config_from_dict
from src.data.datagen import collect, default_sessions, split_train_test
from src.learn.nn import init_mlp, zeros_like_params
from src.sim.actuator import PdGains, PlantConfig, degenerate_transmission, pd_torque, step_ideal
from src.sim.dynamics import JointState
from src.sim.plants import IdealPlant


def test_reward_peak_and_decay():
    zero = np.zeros(1)
    assert uan_reward(zero, zero, zero, zero)[0] == pytest.approx(13.5)
    expected = -0.15 + 4 * math.exp(-1) + 4 * math.exp(-3) + 5 * math.exp(-10) + 0.5
    assert uan_reward(np.array([0.1]), zero, zero, zero)[0] == pytest.approx(expected)
    assert expected == pytest.approx(2.0209, abs=1e-4)
    assert uan_reward(zero, zero, np.array([2.0]), zero)[0] == pytest.approx(13.0 + 0.5 * math.exp(-1.0))


def test_pd_equivalent_error_recovers_the_target():
    gains = PdGains(kp=60.0, kd=2.0)
    state = JointState(np.array([0.2, -0.4]), np.array([1.5, -0.3]))
    q_des = np.array([0.5, -0.1])
    tau = pd_torque(gains, q_des, state)
    np.testing.assert_allclose(pd_equivalent_error(tau, state.qdot, gains.kp, gains.kd), q_des - state.q)


def test_history_push_order():
    hist = ErrorHistory(2, 3, length=4)
    hist.push(np.full((2, 3), 1.0), np.full((2, 3), 10.0))
    hist.push(np.full((2, 3), 2.0), np.full((2, 3), 20.0))
    assert hist.data.shape == (2, 3, 4, 2)
    np.testing.assert_array_equal(hist.data[0, 0, -1], [2.0, 20.0])
    np.testing.assert_array_equal(hist.data[0, 0, -2], [1.0, 10.0])
    np.testing.assert_array_equal(hist.data[0, 0, 0], [0.0, 0.0])
    hist.clear([1])
    assert np.all(hist.data[1] == 0.0) and np.any(hist.data[0] != 0.0)


def test_observation_scaling_and_shape():
    hist = np.zeros((3, 2, 20, 2))
    hist[:, :, 0, 0] = 0.25
    hist[:, :, 0, 1] = 3.0
    obs = build_observation(hist, 0.5, np.array([6.0, 3.0]))
    assert obs.shape == (3, 2, 40)
    np.testing.assert_allclose(obs[0, 0, :2], [0.5, 0.5])
    np.testing.assert_allclose(obs[0, 1, :2], [0.5, 1.0])


def test_oracle_correction_lands_on_recorded_velocity(tiny_cfg, rng):
    sim = build_plant_config(tiny_cfg, reference=False)
    state = JointState(rng.uniform(-1, 1, size=(4, 2)), rng.uniform(-2, 2, size=(4, 2)))
    tau = rng.normal(0, 10, size=(4, 2))
    target = state.qdot + rng.normal(0, 0.05, size=(4, 2))
    delta = oracle_correction(sim, state, tau, target, 0.005)
    nxt = step_ideal(sim, state, tau, 0.005, delta)
    np.testing.assert_allclose(nxt.qdot, target, atol=1e-9)


def test_smoothness_weight_scales_only_the_action_term():
    zero, step = np.zeros(2), np.full(2, 0.1)
    np.testing.assert_allclose(smooth_term(step, zero), 0.5 * math.exp(-0.05))
    np.testing.assert_allclose(smooth_term(step, zero, 0.0), 0.0)
    assert uan_reward(zero, zero, zero, zero, smooth_scale=2.0)[0] == pytest.approx(15.0)
    cfg = config_from_dict({"uan": {"smooth_scale": 0.1}})
    assert UanEnvConfig.from_workbench(cfg).smooth_scale == 0.1


def test_oracle_replays_the_recording_without_drift(tiny_cfg, tiny_dataset):
    sim = build_plant_config(tiny_cfg, reference=False)
    h = tiny_dataset.timestep
    for s in tiny_dataset.sessions().values():
        state = JointState(s.q[0], s.qdot[0])
        worst = 0.0
        for k in range(s.n_steps):
            delta = oracle_correction(sim, state, s.tau_cmd[k], s.qdot_next[k], h)
            state = step_ideal(sim, state, s.tau_cmd[k], h, delta)
            worst = max(worst, float(np.max(np.abs(state.q - s.q_next[k]))))
        assert worst < 1e-6, (s.tag, worst)
        np.testing.assert_allclose(state.qdot, s.qdot_next[-1], atol=1e-6)


def _zero_model(history=20):
    params = zeros_like_params(init_mlp((2 * history, 16, 1), np.random.default_rng(0)))
    return UanModel(params, np.full(1, -1.0), 0.5, np.full(2, 15.0), history)


def test_zero_model_is_the_ideal_sim(tiny_cfg, rng):
    sim = build_plant_config(tiny_cfg, reference=False)
    state = JointState(rng.uniform(-1, 1, size=(3, 2)), rng.uniform(-1, 1, size=(3, 2)))
    tau = rng.normal(0, 5, size=(3, 2))
    nxt, hist, delta = calibrated_step(sim, _zero_model(), np.zeros((3, 2, 20, 2)), state, tau, 0.005)
    ideal = step_ideal(sim, state, tau, 0.005)
    np.testing.assert_array_equal(nxt.q, ideal.q)
    np.testing.assert_array_equal(delta, np.zeros((3, 2)))
    np.testing.assert_allclose(hist[:, :, -1, 1], state.qdot)


def test_uan_plant_with_zero_model_matches_ideal(tiny_cfg, rng):
    sim = build_plant_config(tiny_cfg, reference=False)
    uan, ideal = UanPlant(sim, _zero_model(), 2), IdealPlant(sim, 2)
    q0 = np.tile([-1.0, 0.2], (2, 1))
    for p in (uan, ideal):
        p.reset([0, 1], q0, np.zeros_like(q0))
    for tau in rng.normal(0, 5, size=(25, 2, 2)):
        uan.step(tau)
        ideal.step(tau)
    np.testing.assert_array_equal(uan.observed.q, ideal.observed.q)
    assert np.any(uan.histories != 0.0)


def test_model_save_load(tmp_path, rng):
    params = init_mlp((40, 8, 1), rng, out_gain=1.0)
    model = UanModel(params, np.full(1, -0.7), 0.5, np.array([15.0, 8.0]))
    path = model.save(str(tmp_path / "uan.npz"), meta={"seed": 3})
    back = UanModel.load(path)
    hist = rng.normal(size=(2, 2, 20, 2))
    np.testing.assert_array_equal(back.correction(hist, 6.0), model.correction(hist, 6.0))
    np.testing.assert_array_equal(back.delta_tau_max, [15.0, 8.0])


@pytest.fixture(scope="module")
def ideal_recording(tiny_cfg):
    sim = build_plant_config(tiny_cfg, reference=False)
    ref = PlantConfig(sim.arm, sim.gains, sim.limits, sim.sim_armature, degenerate_transmission())
    return sim, collect(ref, default_sessions(tiny_cfg, ref, 0)[:3], 0, tiny_cfg.timestep)


def test_zero_action_on_an_ideal_recording_scores_the_maximum(ideal_recording):
    sim, ds = ideal_recording
    env = UanEnv(ds, sim, UanEnvConfig(episode_s=0.5, n_envs=3, h=0.005), seed=0)
    obs = env.reset_all()
    assert obs.shape == (3, env.obs_dim)
    for _ in range(30):
        obs, reward, done, info = env.step(np.zeros((3, 2)))
        np.testing.assert_allclose(reward, 13.5, atol=1e-6)
        assert not np.any(info["reward_terms"]["terminated"])


def test_smoothness_reward_is_on_normalized_actions(ideal_recording):
    sim, ds = ideal_recording
    env = UanEnv(ds, sim, UanEnvConfig(episode_s=0.5, n_envs=3, h=0.005), seed=0)
    env.reset_all()
    _, _, _, info = env.step(np.full((3, 2), 0.1))
    np.testing.assert_allclose(info["reward_terms"]["smooth"], 0.5 * math.exp(-0.05))
    # out-of-range actions are clipped before they reach the sim or the reward
    _, _, _, info = env.step(np.full((3, 2), 5.0))
    np.testing.assert_allclose(info["reward_terms"]["smooth"], 0.5 * math.exp(-0.45))
    np.testing.assert_array_equal(env.prev_action, 1.0)


def test_starts_leave_a_full_episode(tiny_cfg, tiny_dataset):
    sim = build_plant_config(tiny_cfg, reference=False)
    env = UanEnv(tiny_dataset, sim, UanEnvConfig(episode_s=1.0, n_envs=2, h=tiny_dataset.timestep), seed=0)
    assert env.max_steps == 200
    starts = [env._sample_start(e) for _ in range(300) for e in range(2)]
    for s, start in starts:
        assert 0 <= start and start + env.max_steps <= env._lengths[s]
    assert len({s for s, _ in starts}) == len(env._lengths)
    assert any(start > 0 for _, start in starts)


def test_short_sessions_start_at_zero(tiny_cfg, tiny_dataset):
    sim = build_plant_config(tiny_cfg, reference=False)
    env = UanEnv(tiny_dataset, sim, UanEnvConfig(episode_s=100.0, n_envs=2, h=tiny_dataset.timestep), seed=0)
    assert all(env._sample_start(0)[1] == 0 for _ in range(50))


def test_wrap_clears_history_and_resyncs(ideal_recording):
    sim, ds = ideal_recording
    env = UanEnv(ds, sim, UanEnvConfig(episode_s=3.0, n_envs=1, h=0.005), seed=0)
    env.reset_all()
    remaining = int(env._lengths[env.session[0]])
    assert env.cursor[0] == 0 and remaining < env.max_steps
    for _ in range(remaining - 1):
        _, _, done, _ = env.step(np.zeros((1, 2)))
        assert not done[0]
    assert np.any(env.history.data[0, :, :-1] != 0.0)
    _, _, done, _ = env.step(np.zeros((1, 2)))
    assert not done[0]
    assert env.steps[0] == remaining
    # only the push after the wrap survives
    assert np.all(env.history.data[0, :, :-1] == 0.0)
    row = env._rows(np.array([0]))
    np.testing.assert_array_equal(env.plant.observed.q, env._q[row])
    np.testing.assert_array_equal(env.plant.observed.qdot, env._qdot[row])


def test_env_rejects_timestep_mismatch(ideal_recording):
    sim, ds = ideal_recording
    with pytest.raises(ValueError):
        UanEnv(ds, sim, UanEnvConfig(n_envs=2, h=0.01), seed=0)


@pytest.mark.slow
def test_train_uan_smoke(tiny_cfg, tiny_dataset):
    train, _ = split_train_test(tiny_dataset)
    model, result = train_uan(tiny_cfg, train, seed=0, updates=1)
    assert len(result.metrics) == 1
    assert model.params.all_finite()
    assert model.delta_tau_max.shape == (2,)
