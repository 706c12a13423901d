import numpy as np
import pytest

from src.calib.dr import DrPlant, DrRanges, dr_wrap
from src.config import WorkbenchConfig, build_plant_config
from src.sim.plants import IdealPlant


def _sim(mode="torque"):
    return build_plant_config(WorkbenchConfig(), reference=False, control_mode=mode)


def test_zero_width_randomization_is_the_ideal_sim(rng):
    sim = _sim("position")
    dr, ideal = dr_wrap(sim, DrRanges.zero_width(), 3), IdealPlant(sim, 3)
    q0 = np.tile([-1.3, 0.5], (3, 1))
    for p in (dr, ideal):
        p.reset(np.arange(3), q0, np.zeros_like(q0))
    for _ in range(40):
        target = q0 + rng.normal(0.0, 0.1, size=q0.shape)
        dr.step(target)
        ideal.step(target)
    np.testing.assert_array_equal(dr.observed.q, ideal.observed.q)
    np.testing.assert_array_equal(dr.observed.qdot, ideal.observed.qdot)


def test_lag_delays_an_impulse():
    ranges = DrRanges((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0), (3, 3))
    plant = DrPlant(_sim(), ranges, 1)
    plant.reset([0], np.array([[-np.pi / 2, 0.0]]), np.zeros((1, 2)))
    seen = []
    for k in range(6):
        cmd = np.ones((1, 2)) if k == 0 else np.zeros((1, 2))
        plant.step(cmd)
        seen.append(plant.command_torque[0].copy())
    nonzero = [k for k, tau in enumerate(seen) if np.any(tau != 0.0)]
    assert nonzero == [3]


def test_draws_stay_inside_ranges_and_are_reproducible():
    sim = _sim()
    ranges = DrRanges()

    def draw(seed):
        plant = DrPlant(sim, ranges, 64)
        q0 = np.tile([-1.0, 0.0], (64, 1))
        plant.reset(np.arange(64), q0, np.zeros_like(q0), rng=np.random.default_rng(seed))
        return plant.sampled()

    a, b = draw(9), draw(9)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    kp = np.broadcast_to(sim.gains.kp, (2,))
    assert np.all(a["kp"] >= 0.9 * kp - 1e-12) and np.all(a["kp"] <= 1.1 * kp + 1e-12)
    assert np.all(np.abs(a["encoder_offset"]) <= 0.05)
    assert a["lag_steps"].min() >= 0 and a["lag_steps"].max() <= 6
    assert len(np.unique(a["lag_steps"])) > 1


def test_encoder_offset_shifts_the_reading_only():
    ranges = DrRanges((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.05, 0.05), (0, 0))
    plant = DrPlant(_sim(), ranges, 1)
    plant.reset([0], np.array([[-1.0, 0.2]]), np.zeros((1, 2)))
    np.testing.assert_allclose(plant.observed.q, [[-1.0, 0.2]])
    np.testing.assert_allclose(plant.physical.q, [[-1.05, 0.15]])


def test_position_reset_fills_the_lag_queue():
    ranges = DrRanges((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0), (4, 4))
    plant = DrPlant(_sim("position"), ranges, 2)
    pose = np.array([[-1.2, 0.3], [-0.8, -0.2]])
    plant.reset([0, 1], pose, np.zeros_like(pose))
    np.testing.assert_array_equal(plant.queue[1], np.tile(pose[1], (5, 1)))


def test_invalid_ranges():
    with pytest.raises(ValueError):
        DrRanges(kp_scale=(1.2, 0.8))
    with pytest.raises(ValueError):
        DrRanges(lag_steps=(-1, 2))
