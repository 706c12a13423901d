import math
from dataclasses import replace

import numpy as np
import pytest

from src.calib.actnet import ActNetModel
from src.calib.uan import UanModel
from src.config import build_arm
from src.errors import ConfigError, TrainingAbortedError
from src.learn.nn import init_mlp, zeros_like_params
from src.learn.ppo import Actor
from src.tasks.envs import (
    CommandHeadEnv,
    TaskEnvConfig,
    ThrowEnv,
    frame_dim,
    joint_limit_penalty,
    power_penalty,
    release_condition,
    smoothness_penalty,
    tracking_reward,
)
from src.tasks.reference import SETTLE, SETUP, THROW
from src.tasks.training import (
    VARIANTS,
    CalibrationArtifacts,
    CollapseDetector,
    TaskPolicy,
    build_reference,
    finetune,
    make_plant,
    make_policy,
    make_throw_env,
    make_tracking_env,
    plant_factory,
    pretrain,
)


# --------- reward terms ---------

def test_tracking_reward_values():
    pose = np.array([0.3, 0.9, 0.1])
    assert tracking_reward(pose, pose) == pytest.approx(5.0)
    off = pose + np.array([0.1, 0.0, 0.0])
    assert tracking_reward(off, pose) == pytest.approx(5.0 / 3.0 * (math.exp(-0.2) + 2.0))
    assert tracking_reward(off, pose) == pytest.approx(4.6979, abs=1e-4)
    wrapped = tracking_reward(np.array([0.0, 0.0, np.pi - 0.05]), np.array([0.0, 0.0, -np.pi + 0.05]))
    assert wrapped == pytest.approx(5.0 / 3.0 * (math.exp(-0.2) + 2.0))


def test_release_condition():
    assert not release_condition(np.array([0.0, 0.0]), np.array(0.0))
    assert release_condition(np.array([0.0, -2.0 * 9.81]), np.array(0.0))
    assert release_condition(np.array([5.0, 0.0]), np.array(np.pi / 2))


def test_penalties():
    assert smoothness_penalty(np.array([1.0]), np.array([0.0]), np.array([0.0])) == pytest.approx(-0.075)
    assert power_penalty(np.array(1000.0)) == pytest.approx(-0.1)
    assert joint_limit_penalty(np.array([3.5, -3.2]), (-3.0, 3.0)) == pytest.approx(-7.0)
    assert joint_limit_penalty(np.array([1.0, -1.0]), (-3.0, 3.0)) == 0.0


# --------- reference ---------

def test_reference_is_continuous_and_fills_the_episode(tiny_cfg):
    ref = build_reference(tiny_cfg)
    assert ref.max_step_jump() < 0.05
    assert sum(ref.durations().values()) == pytest.approx(tiny_cfg.task.episode_s)
    np.testing.assert_allclose(ref.phases[SETUP][-1], tiny_cfg.task.cocked_pose)
    np.testing.assert_allclose(ref.phases[SETTLE][-1], tiny_cfg.task.rest_pose)
    # extended throw phases hold the release pose
    np.testing.assert_allclose(ref.at(np.array([THROW]), np.array([2.7]))[0], tiny_cfg.task.release_pose)


# --------- throw phase machine ---------

def _throw_env(cfg, n_envs, seed=0, **overrides):
    plant = make_plant(cfg, "default", n_envs, seed)
    env_cfg = replace(TaskEnvConfig.from_workbench(cfg, n_envs), **overrides)
    return ThrowEnv(plant, build_arm(cfg), env_cfg, build_reference(cfg), seed)


def _run_episode(env, steps):
    env.reset_all()
    records, rewards = [], []
    for k in range(steps):
        _, reward, done, info = env.step(np.zeros((env.n_envs, env.action_dim)))
        terms = sum(info["reward_terms"].values())
        np.testing.assert_allclose(terms, reward)
        rewards.append(reward)
        records.extend(info["episode_records"])
        if k < steps - 1:
            assert not np.any(done)
    return records, np.array(rewards)


def test_phase_schedule(tiny_cfg):
    env = _throw_env(tiny_cfg, 2, ball_attach_s=1e9, retain_throw_p=0.0, settle_on_reset_p=0.0)
    env.reset_all()
    phases = []
    for _ in range(250):
        env.step(np.zeros((2, 2)))
        phases.append(int(env.phase[0]))
    # phase after step k is the one in force at t = 0.02 (k + 1)
    assert phases[123] == SETUP and phases[124] == THROW
    assert phases[173] == THROW and phases[174] == SETTLE


def test_episode_record_and_return(tiny_cfg):
    env = _throw_env(tiny_cfg, 2, ball_attach_s=1e9, retain_throw_p=0.0, settle_on_reset_p=0.0)
    records, rewards = _run_episode(env, 250)
    assert len(records) == 2
    rec = records[0]
    assert rec["t_throw_start"] == pytest.approx(2.5)
    assert rec["t_settle_start"] == pytest.approx(3.5)
    assert rec["final_phase"] == "settle"
    assert rec["scored"] and not rec["released"] and not rec["dropped"]
    assert rec["return"] == pytest.approx(rewards[:, rec["env"]].sum())


def test_retained_throws_last_whole_multiples(tiny_cfg):
    env = _throw_env(tiny_cfg, 8, seed=3, ball_attach_s=1e9, retain_throw_p=0.5, settle_on_reset_p=0.0)
    records, _ = _run_episode(env, 250)
    lengths = [r["t_settle_start"] - r["t_throw_start"] for r in records if np.isfinite(r["t_settle_start"])]
    assert lengths
    for length in lengths:
        assert length / tiny_cfg.task.throw_s == pytest.approx(round(length / tiny_cfg.task.throw_s), abs=1e-6)


def test_settle_start_episodes_are_not_scored(tiny_cfg):
    env = _throw_env(tiny_cfg, 2, settle_on_reset_p=1.0)
    env.reset_all()
    assert np.all(env.phase == SETTLE)
    records, _ = _run_episode(env, 75)
    assert records and all(not r["scored"] and r["distance"] == 0.0 for r in records)
    assert records[0]["start_phase"] == "settle"


def test_eval_env_disables_retention(tiny_cfg):
    env = make_throw_env(tiny_cfg, make_plant(tiny_cfg, "default", 2, 0), 0, train=False)
    assert env.cfg.retain_throw_p == 0.0 and env.cfg.settle_on_reset_p == 0.0


def test_tracking_and_throw_frames_match(tiny_cfg):
    track = make_tracking_env(tiny_cfg, make_plant(tiny_cfg, "default", 2, 0), 0)
    throw = make_throw_env(tiny_cfg, make_plant(tiny_cfg, "default", 2, 0), 0)
    assert track.obs_dim == throw.obs_dim == frame_dim(2) * tiny_cfg.task.obs_history
    assert track.reset_all().shape == throw.reset_all().shape
    _, reward, _, info = track.step(np.zeros((2, 2)))
    assert set(info["reward_terms"]) == {"tracking", "smooth", "power", "joint_limit"}
    assert np.all(track.tracking_error() >= 0.0)


def test_command_head_with_zero_offset_is_the_frozen_policy(tiny_cfg, rng):
    a = _throw_env(tiny_cfg, 2, seed=4)
    b = _throw_env(tiny_cfg, 2, seed=4)
    frozen = Actor.create([a.obs_dim, 16, 2], rng, -1.0)
    head = CommandHeadEnv(a, frozen, 0.3)
    obs_a, obs_b = head.reset_all(), b.reset_all()
    for _ in range(10):
        obs_a, r_a, _, _ = head.step(np.zeros((2, 2)))
        obs_b, r_b, _, _ = b.step(frozen.mean(obs_b))
    np.testing.assert_allclose(obs_a, obs_b, atol=1e-12)
    np.testing.assert_allclose(r_a, r_b, atol=1e-12)


# --------- plants and policies ---------

def _artifacts():
    rng = np.random.default_rng(0)
    uan = UanModel(zeros_like_params(init_mlp((40, 8, 1), rng)), np.full(1, -1.0), 0.5, np.full(2, 15.0))
    actnet = ActNetModel(zeros_like_params(init_mlp((40, 8, 1), rng)), np.full(2, 30.0), 0.5)
    cem = {"coulomb": np.full(2, 0.5), "visc": np.full(2, 0.1), "armature": np.full(2, 0.01)}
    return CalibrationArtifacts(uan=uan, cem_params=cem, actnet=actnet)


@pytest.mark.parametrize("variant", list(VARIANTS) + ["reference"])
def test_every_variant_steps(tiny_cfg, variant):
    plant = make_plant(tiny_cfg, variant, 2, 0, artifacts=_artifacts())
    pose = np.tile(tiny_cfg.task.rest_pose, (2, 1))
    plant.reset(np.arange(2), pose, np.zeros_like(pose))
    for _ in range(20):
        plant.step(pose)
    assert np.all(np.isfinite(plant.observed.q))


def test_plant_factory_errors(tiny_cfg):
    with pytest.raises(ConfigError):
        plant_factory(tiny_cfg, "cem")
    with pytest.raises(ConfigError) as exc:
        plant_factory(tiny_cfg, "mujoco")
    assert "uan" in exc.value.payload["known"]


def test_policy_save_load(tmp_path, tiny_cfg, rng):
    base = make_policy(tiny_cfg, 150, 2, rng)
    policy = TaskPolicy(base.actor, base.critic, "command-head", base.actor.copy(), 0.3)
    back = TaskPolicy.load(policy.save(str(tmp_path / "policy"), meta={"variant": "uan"}))
    assert back.mode == "command-head" and back.head_scale == 0.3
    assert back.meta["variant"] == "uan"
    obs = rng.normal(size=(3, 150))
    np.testing.assert_array_equal(back.actor.mean(obs), policy.actor.mean(obs))
    np.testing.assert_array_equal(back.frozen.mean(obs), policy.frozen.mean(obs))


def test_collapse_detector():
    det = CollapseDetector(frac=0.5, window=3)
    det(0, {"mean_reward": 10.0}, None, None)
    assert det.threshold() == 5.0
    det(1, {"mean_reward": 4.0}, None, None)
    det(2, {"mean_reward": 6.0}, None, None)
    det(3, {"mean_reward": 4.0}, None, None)
    det(4, {"mean_reward": 4.0}, None, None)
    with pytest.raises(TrainingAbortedError) as exc:
        det(5, {"mean_reward": 4.0}, None, None)
    assert exc.value.payload["consecutive"] == 3


def test_finetune_requires_a_pretrained_policy(tiny_cfg):
    with pytest.raises(ConfigError):
        finetune(tiny_cfg, None, "default", 0, mode="finetune", updates=1)
    with pytest.raises(ConfigError):
        finetune(tiny_cfg, None, "default", 0, mode="sideways", updates=1)


@pytest.mark.slow
def test_pretrain_and_finetune_modes(tiny_cfg):
    policy, result = pretrain(tiny_cfg, 0, updates=1)
    assert len(result.metrics) == 1
    before = policy.actor.params.weights[0].copy()
    for mode in ("finetune", "no-pretrain", "no-e2e"):
        tuned, res = finetune(tiny_cfg, policy, "default", 0, mode=mode, updates=1)
        assert tuned.meta["finetune_mode"] == mode
        assert len(res.metrics) == 1
    np.testing.assert_array_equal(policy.actor.params.weights[0], before)
