import numpy as np

from src.calib.dr import DrPlant, DrRanges
from src.config import WorkbenchConfig, build_plant_config, config_from_dict
from src.sim.actuator import PlantConfig, degenerate_transmission
from src.sim.parallel import ShardPool, ShardedPlant, shard_bounds
from src.sim.plants import CemPlant, IdealPlant, ReferencePlant


def _cfg():
    return WorkbenchConfig()


def _torques(rng, steps, e, n=2):
    return rng.normal(0.0, 8.0, size=(steps, e, n))


def test_degenerate_reference_matches_ideal(rng):
    sim = build_plant_config(_cfg(), reference=False)
    ref_cfg = PlantConfig(sim.arm, sim.gains, sim.limits, sim.sim_armature, degenerate_transmission())
    ideal, ref = IdealPlant(sim, 3), ReferencePlant(ref_cfg, 3)
    q0 = np.tile([-1.2, 0.4], (3, 1))
    for p in (ideal, ref):
        p.reset(np.arange(3), q0, np.zeros_like(q0))
    for tau in _torques(rng, 50, 3):
        ideal.step(tau)
        ref.step(tau)
    np.testing.assert_allclose(ref.observed.q, ideal.observed.q, atol=1e-12)
    np.testing.assert_allclose(ref.observed.qdot, ideal.observed.qdot, atol=1e-12)


def test_diverged_rows_keep_previous_state():
    sim = build_plant_config(_cfg(), reference=False)
    plant = IdealPlant(sim, 2)
    q0 = np.array([[-1.0, 0.5], [-1.0, 0.5]])
    plant.reset([0, 1], q0, np.zeros_like(q0))
    extra = np.array([[1e300, 0.0], [0.0, 0.0]])
    flags = plant.step(np.zeros((2, 2)), extra_tau=extra)
    assert flags.tolist() == [True, False]
    np.testing.assert_array_equal(plant.physical.q[0], q0[0])
    assert np.all(np.isfinite(plant.physical.q))


def test_prime_restores_lag_state(rng):
    ref_cfg = build_plant_config(_cfg(), reference=True)
    taus = _torques(rng, 40, 1)[:, 0]
    a = ReferencePlant(ref_cfg, 1)
    a.reset([0], np.array([[-1.5, 0.0]]), np.zeros((1, 2)))
    for tau in taus:
        a.step(tau[None])
    b = ReferencePlant(ref_cfg, 1)
    b.reset([0], np.array([[-1.5, 0.0]]), np.zeros((1, 2)))
    b.prime([0], [taus])
    np.testing.assert_allclose(b.act.lagged_torque, a.act.lagged_torque, rtol=0, atol=1e-12)


def test_shard_bounds_cover_everything():
    bounds = shard_bounds(10, 3)
    assert bounds[0].start == 0 and bounds[-1].stop == 10
    assert sum(b.stop - b.start for b in bounds) == 10
    assert len(shard_bounds(2, 8)) == 2


def _dr_run(threads, rng_seed=3):
    sim = build_plant_config(_cfg(), reference=False)
    ranges = DrRanges.from_section(_cfg().dr)
    rng = np.random.default_rng(rng_seed)
    with ShardPool(threads) as pool:
        plant = ShardedPlant(lambda n: DrPlant(sim, ranges, n), 6, 3, seed=11, pool=pool)
        q0 = np.tile([-1.2, 0.4], (6, 1))
        plant.reset(np.arange(6), q0, np.zeros_like(q0))
        for tau in _torques(rng, 30, 6):
            plant.step(tau)
        return plant.observed.q.copy()


def test_sharded_results_independent_of_threads():
    np.testing.assert_array_equal(_dr_run(1), _dr_run(3))


def test_cem_plant_with_zero_parameters_is_ideal(rng):
    sim = build_plant_config(_cfg(), reference=False)
    zeros = {"coulomb": np.zeros(2), "visc": np.zeros(2), "armature": np.zeros(2)}
    cem, ideal = CemPlant(sim, zeros, 2), IdealPlant(sim, 2)
    q0 = np.tile([-1.0, 0.3], (2, 1))
    for p in (cem, ideal):
        p.reset([0, 1], q0, np.zeros_like(q0))
    for tau in _torques(rng, 30, 2):
        cem.step(tau)
        ideal.step(tau)
    np.testing.assert_allclose(cem.observed.q, ideal.observed.q, atol=1e-12)


def test_position_mode_holds_near_target():
    sim = build_plant_config(_cfg(), reference=False, control_mode="position")
    plant = IdealPlant(sim, 1)
    target = np.array([[-np.pi / 2, 0.0]])
    plant.reset([0], target, np.zeros((1, 2)))
    for _ in range(400):
        plant.step(target)
    # hanging straight down needs no holding torque
    np.testing.assert_allclose(plant.observed.q, target, atol=1e-6)


def test_divergence_limit_comes_from_the_limits_section():
    cfg = config_from_dict({"limits": {"divergence_limit": 2.0}})
    assert build_plant_config(cfg, reference=True).divergence_limit == 2.0
    q0 = np.array([[-1.0, 0.5], [0.0, 1.99]])
    qdot0 = np.array([[0.0, 0.0], [0.0, 100.0]])
    flags = {}
    for name, c in (("tight", cfg), ("default", _cfg())):
        plant = IdealPlant(build_plant_config(c, reference=False), 2)
        plant.reset([0, 1], q0, qdot0)
        flags[name] = plant.step(np.zeros((2, 2))).tolist()
    assert flags == {"tight": [False, True], "default": [False, False]}
