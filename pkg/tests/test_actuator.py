import numpy as np
import pytest

from src.sim.actuator import (
    ActuatorLimits,
    ActuatorState,
    PlantConfig,
    TransmissionModel,
    friction_torque,
    lag_update,
    pd_torque,
    PdGains,
    power_clip,
    step_reference,
    torque_speed_clip,
    transmit,
)
from src.sim.dynamics import ArmModel, JointState


def _flat_link():
    # one link, no gravity: only the actuator moves it
    return ArmModel([0.4], [1.0], [0.2], [0.0133], gravity=0.0)


def test_torque_speed_envelope():
    limits = ActuatorLimits(tau_max=30.0, qdot_max=6.0)
    tau = np.array([100.0, -100.0])
    np.testing.assert_allclose(torque_speed_clip(tau, np.zeros(2), limits), [30.0, -30.0])
    np.testing.assert_allclose(torque_speed_clip(tau, np.full(2, 3.0), limits), [15.0, -30.0])
    np.testing.assert_allclose(torque_speed_clip(tau, np.full(2, 6.0), limits), [0.0, -30.0])
    np.testing.assert_allclose(torque_speed_clip(tau, np.full(2, -6.0), limits), [30.0, 0.0])


def test_power_clip_scales_all_joints_together():
    out = power_clip(np.array([30.0, 30.0]), np.array([5.0, 5.0]), 100.0)
    np.testing.assert_allclose(out, [10.0, 10.0])
    assert np.sum(np.abs(out) * 5.0) == pytest.approx(100.0)
    under = power_clip(np.array([1.0, -2.0]), np.array([1.0, 1.0]), 100.0)
    np.testing.assert_array_equal(under, [1.0, -2.0])


def test_pd_torque():
    gains = PdGains(kp=60.0, kd=2.0)
    tau = pd_torque(gains, np.array([0.1]), JointState(np.zeros(1), np.array([1.0])))
    assert tau[0] == pytest.approx(4.0)


def test_friction_stuck_and_moving():
    tm = TransmissionModel()
    stuck = friction_torque(tm, np.zeros(2), np.array([1.0, -5.0]))
    np.testing.assert_allclose(stuck, [-1.0, 2.5])
    moving = friction_torque(tm, np.array([1.0]), np.zeros(1))
    expected = -(1.2 + 1.3 * np.exp(-((1.0 / 0.3) ** 2)) + 0.35)
    assert moving[0] == pytest.approx(expected)


def test_lag_update():
    lagged = lag_update(0.015, np.zeros(1), np.array([3.0]), 0.005)
    assert lagged[0] == pytest.approx(1.0)
    assert lag_update(0.0, np.array([5.0]), np.array([3.0]), 0.005)[0] == 3.0
    # lag shorter than a step saturates at the command
    assert lag_update(0.001, np.zeros(1), np.array([3.0]), 0.005)[0] == 3.0


def test_efficiency_asymmetry():
    tm = TransmissionModel(efficiency=0.8)
    out = transmit(tm, np.array([10.0, 10.0]), np.array([1.0, -1.0]))
    np.testing.assert_allclose(out, [8.0, 12.5])


def _reference_cfg():
    tm = TransmissionModel(lag_tau=0.015, tau_coulomb=1.2, tau_stiction=2.5, visc=0.35, efficiency=0.85, armature_extra=0.0)
    return PlantConfig(_flat_link(), transmission=tm)


def test_stiction_holds_below_breakaway():
    cfg = _reference_cfg()
    state = JointState(np.zeros(1), np.zeros(1))
    act = ActuatorState.zeros(1)
    for _ in range(20):
        state, act = step_reference(cfg, state, act, np.array([2.0]), 0.005)
    # 0.85 * 2.0 stays below the 2.5 breakaway torque
    assert state.qdot[0] == 0.0
    assert state.q[0] == 0.0


def test_stiction_breaks_away_above_threshold():
    cfg = _reference_cfg()
    state, act = step_reference(cfg, JointState(np.zeros(1), np.zeros(1)), ActuatorState.zeros(1), np.array([10.0]), 0.005)
    assert act.lagged_torque[0] == pytest.approx(10.0 / 3.0)
    assert state.qdot[0] > 0.0


def test_encoder_offset_only_changes_observation():
    from src.sim.actuator import observe

    tm = TransmissionModel(encoder_offset=0.05)
    cfg = PlantConfig(_flat_link(), transmission=tm)
    obs = observe(cfg, JointState(np.array([0.1]), np.array([0.2])))
    assert obs.q[0] == pytest.approx(0.15)
    assert obs.qdot[0] == 0.2


def test_invalid_transmission_rejected():
    with pytest.raises(ValueError):
        TransmissionModel(tau_coulomb=3.0, tau_stiction=1.0)
    with pytest.raises(ValueError):
        TransmissionModel(efficiency=1.5)
