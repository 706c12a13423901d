import numpy as np
import pandas as pd
import pytest

from src.calib.cem import (
    CemConfig,
    CemFit,
    cem_fit,
    cem_optimize,
    param_bounds,
    read_params,
    unpack_params,
    write_params,
)
from src.config import build_plant_config
from src.errors import DivergenceError


def test_quadratic_converges():
    cfg = CemConfig(population=32, iterations=30, min_std_frac=1e-4)
    result = cem_optimize(lambda p: (p[:, 0] - 3.0) ** 2, np.array([0.0]), np.array([10.0]), cfg, np.random.default_rng(0))
    assert result.best_x[0] == pytest.approx(3.0, abs=0.01)
    best = result.trace["best"].to_numpy()
    assert np.all(np.diff(best) <= 0.0)
    assert len(result.trace) == 30


def test_samples_stay_inside_bounds():
    seen = []

    def objective(pop):
        seen.append(pop.copy())
        return np.sum(pop, axis=1)

    cem_optimize(objective, np.zeros(2), np.ones(2), CemConfig(population=16, iterations=3), np.random.default_rng(1))
    pops = np.concatenate(seen)
    assert pops.min() >= 0.0 and pops.max() <= 1.0


def test_non_finite_scores_rank_last():
    def objective(pop):
        x = pop[:, 0]
        return np.where(x > 5.0, np.nan, (x - 4.0) ** 2)

    cfg = CemConfig(population=32, iterations=10)
    result = cem_optimize(objective, np.array([0.0]), np.array([10.0]), cfg, np.random.default_rng(2))
    assert np.isfinite(result.best_score)
    assert result.best_x[0] <= 5.0
    assert result.trace["n_diverged"].iloc[0] > 0


def test_all_diverged_raises():
    with pytest.raises(DivergenceError) as exc:
        cem_optimize(lambda p: np.full(p.shape[0], np.inf), np.zeros(1), np.ones(1), CemConfig(population=8, iterations=2),
                     np.random.default_rng(0), name="fit-cem")
    assert exc.value.payload["stage"] == "fit-cem"
    assert exc.value.payload["iteration"] == 0


def test_config_validation():
    with pytest.raises(ValueError):
        CemConfig(elite_frac=1.0)
    with pytest.raises(ValueError):
        CemConfig(population=4)
    with pytest.raises(ValueError):
        CemConfig(visc_bounds=(2.0, 1.0))


def test_param_layout():
    lo, hi = param_bounds(CemConfig(), 2)
    np.testing.assert_array_equal(lo, np.zeros(6))
    np.testing.assert_array_equal(hi, [5.0, 5.0, 2.0, 2.0, 0.3, 0.3])
    parts = unpack_params(np.arange(6.0), 2)
    np.testing.assert_array_equal(parts["visc"], [2.0, 3.0])


def test_params_table_round_trip(tmp_path):
    params = {"coulomb": np.array([1.1, 0.4]), "visc": np.array([0.3, 0.2]), "armature": np.array([0.01, 0.02])}
    fit = CemFit(params, 0.5, pd.DataFrame(), [])
    back = read_params(write_params(fit, str(tmp_path / "cem_params.csv")))
    for k, v in params.items():
        np.testing.assert_array_equal(back[k], v)


@pytest.mark.slow
def test_cem_fit_on_recordings(tiny_cfg, tiny_dataset):
    cfg = CemConfig.from_section(tiny_cfg.cem)
    base = build_plant_config(tiny_cfg, reference=False)
    fit = cem_fit(cfg, tiny_dataset, base, seed=0, h=tiny_cfg.timestep)
    assert np.isfinite(fit.objective)
    assert len(fit.windows) == cfg.n_windows
    lo, hi = param_bounds(cfg, 2)
    x = np.concatenate([fit.params[k] for k in ("coulomb", "visc", "armature")])
    assert np.all(x >= lo) and np.all(x <= hi)
    assert len(fit.trace) == cfg.iterations
