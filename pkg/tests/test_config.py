import os

import numpy as np
import pytest

from src.config import (
    STAGE_SECTIONS,
    WorkbenchConfig,
    config_from_dict,
    config_hash,
    dump_config,
    load_config,
    parse_override,
    validate,
)
from src.errors import ConfigError

DEFAULT_YAML = os.path.join(os.path.dirname(__file__), "..", "configs", "default.yaml")


def test_defaults_validate():
    cfg = WorkbenchConfig()
    assert validate(cfg) == []
    assert cfg.n_joints == 2
    np.testing.assert_array_equal(cfg.delta_tau_max, [15.0, 15.0])


def test_default_file_matches_built_in_defaults():
    assert config_hash(load_config(DEFAULT_YAML)) == config_hash(WorkbenchConfig())


def test_all_problems_reported_together():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"timestep": -1, "cem": {"population": 2}, "bogus": 1})
    errors = exc.value.payload["errors"]
    assert len(errors) >= 3
    assert any("bogus" in e for e in errors)


def test_policy_dt_must_be_a_multiple_of_the_timestep():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"task": {"policy_dt": 0.013}})
    assert any("policy_dt" in e for e in exc.value.payload["errors"])


def test_parse_override_types():
    assert parse_override("cem.population=32") == (["cem", "population"], 32)
    assert parse_override("eval.calib_seeds=[1, 2]") == (["eval", "calib_seeds"], [1, 2])
    assert parse_override("uan.teacher_forcing=true")[1] is True
    with pytest.raises(ConfigError):
        parse_override("cem.population")


def test_overrides_become_typed_fields():
    cfg = load_config(None, ["eval.calib_seeds=[4, 5]", "timestep=0.01", "task.policy_dt=0.02"])
    assert cfg.eval.calib_seeds == (4, 5)
    assert cfg.timestep == 0.01


def test_int_for_float_field_is_coerced():
    cfg = config_from_dict({"limits": {"p_max": 250}})
    assert isinstance(cfg.limits.p_max, float)


def test_environment_then_cli_precedence(monkeypatch, tmp_path):
    monkeypatch.setenv("UAN_WORKBENCH_OUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("UAN_WORKBENCH_THREADS", "3")
    cfg = load_config(None)
    assert cfg.out_dir == str(tmp_path / "env")
    assert cfg.threads == 3
    cfg = load_config(None, ["threads=5"], out_dir=str(tmp_path / "cli"))
    assert cfg.out_dir == str(tmp_path / "cli")
    assert cfg.threads == 5


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("UAN_WORKBENCH_THREADS", "abc")
    with pytest.raises(ConfigError) as exc:
        load_config(None)
    assert "UAN_WORKBENCH_THREADS" in exc.value.payload["errors"][0]


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(str(tmp_path / "absent.yaml"))
    assert exc.value.payload["path"].endswith("absent.yaml")


def test_dump_then_load(tmp_path, tiny_config_file):
    cfg = load_config(tiny_config_file, seed=7)
    path = str(tmp_path / "resolved.yaml")
    dump_config(cfg, path)
    back = load_config(path)
    assert back == cfg
    assert back.seed == 7


def test_stage_hashes_only_see_their_sections():
    base = WorkbenchConfig()
    bigger = config_from_dict({"cem": {"population": 128}})
    assert config_hash(base, STAGE_SECTIONS["fit-cem"]) != config_hash(bigger, STAGE_SECTIONS["fit-cem"])
    assert config_hash(base, STAGE_SECTIONS["pretrain"]) == config_hash(bigger, STAGE_SECTIONS["pretrain"])
    # the pretrained policy never sees the hidden transmission
    stiff = config_from_dict({"transmission": {"visc": 0.5}})
    assert config_hash(base, STAGE_SECTIONS["pretrain"]) == config_hash(stiff, STAGE_SECTIONS["pretrain"])
    assert config_hash(base, STAGE_SECTIONS["collect"]) != config_hash(stiff, STAGE_SECTIONS["collect"])


def test_knobs_without_a_consumer_are_rejected():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"task": {"ball_mass": 0.1}, "eval": {"divergence_limit": 10.0}})
    errors = exc.value.payload["errors"]
    assert "task.ball_mass: unknown key" in errors
    assert "eval.divergence_limit: unknown key" in errors


def test_divergence_and_smoothness_knobs_are_checked():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"limits": {"divergence_limit": 0.0}, "uan": {"smooth_scale": -1.0}})
    errors = exc.value.payload["errors"]
    assert any("divergence_limit" in e for e in errors)
    assert any("smooth_scale" in e for e in errors)
    assert config_from_dict({"limits": {"divergence_limit": 50}}).limits.divergence_limit == 50.0
