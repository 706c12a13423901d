import json
import os

import numpy as np
import pandas as pd
import pytest

from src.data.datagen import REGIMES
from src.errors import AcceptanceError, MissingArtifactError
from src.evaluation.acceptance import enforce, median_mse, run_acceptance
from src.evaluation.metrics import mse_table, one_step_mse, rollout_mse, run_throw_episodes, throw_transfer_gap
from src.evaluation.public_view import make_public_report
from src.evaluation.replay import sample_windows, tile_windows
from src.evaluation.report import EvalReport, read_report, write_report
from src.tasks.training import make_policy


# --------- windows / replay ---------

def test_tiled_windows_cover_each_session(tiny_dataset):
    windows = tile_windows(tiny_dataset, ("gaussian",), 2.0, 0.5)
    n = tiny_dataset.sessions()[windows[0].session_id].n_steps
    assert [w.start for w in windows] == [0, 200, 400, 600, 800]
    covered = np.zeros(n, dtype=bool)
    for w in windows:
        covered[w.start:w.start + w.length] = True
    assert covered.all()


def test_short_sessions_give_one_window(tiny_dataset):
    windows = tile_windows(tiny_dataset, ("gaussian",), 100.0, 0.5)
    assert len(windows) == 1 and windows[0].start == 0


def test_sampled_windows_are_seeded(tiny_dataset):
    a = sample_windows(tiny_dataset, ("gaussian",), 5, 1.0, np.random.default_rng(3))
    b = sample_windows(tiny_dataset, ("gaussian",), 5, 1.0, np.random.default_rng(3))
    assert a == b
    assert all(w.length == 200 for w in a)
    with pytest.raises(ValueError):
        sample_windows(tiny_dataset, ("gaussian",), 1, 100.0, np.random.default_rng(0))


def test_reference_replays_its_own_recording(tiny_cfg, tiny_dataset):
    table = rollout_mse(tiny_cfg, "reference", tiny_dataset)
    assert set(table["regime"]) == {"square+sine", "gaussian", "throw"} == set(REGIMES)
    assert (table["mse_mean"] < 1e-18).all()
    assert (table["n_diverged"] == 0).all()


def test_ideal_sim_drifts_from_the_recording(tiny_cfg, tiny_dataset):
    free = rollout_mse(tiny_cfg, "default", tiny_dataset).set_index("regime")
    one = one_step_mse(tiny_cfg, "default", tiny_dataset).set_index("regime")
    assert (free["mse_mean"] > 0).all()
    assert one.loc["gaussian", "mse_mean"] < free.loc["gaussian", "mse_mean"]


def test_mse_table_order_keeps_extra_columns():
    def frame(variant, seed):
        return pd.DataFrame({
            "variant": variant, "regime": ["throw", "square+sine", "gaussian"],
            "mse_mean": 1.0, "mse_std": 0.0, "n_windows": 2, "n_diverged": 0, "calib_seed": seed,
        })

    table = mse_table([frame("uan", 1), frame("reference", 0), frame("default", 0)])
    assert list(table["variant"].unique()) == ["reference", "default", "uan"]
    assert list(table["regime"][:3]) == ["square+sine", "gaussian", "throw"]
    assert list(table.columns)[-1] == "calib_seed"
    assert mse_table([]).empty


# --------- report ---------

def _mse_rows(values):
    rows = []
    for (variant, regime), mse in values.items():
        diverged = 2 if mse is None else 0
        rows.append({"variant": variant, "regime": regime, "mse_mean": np.nan if mse is None else mse,
                     "mse_std": 0.0, "n_windows": 2, "n_diverged": diverged})
    return pd.DataFrame(rows)


def _passing_report():
    mse = _mse_rows({
        ("uan", "throw"): 0.1, ("cem", "throw"): 0.2, ("default", "throw"): 0.5,
        ("uan", "gaussian"): 0.01, ("default", "gaussian"): 0.1,
        ("uan", "gaussian-long"): 0.01, ("actnet", "gaussian-long"): None,
    })
    one_step = _mse_rows({("actnet", "gaussian"): 1e-4})
    throw = pd.DataFrame([
        {"variant": "uan", "d_sim": 2.05, "d_ref": 2.0, "gap": 0.05},
        {"variant": "default", "d_sim": 2.0, "d_ref": 1.5, "gap": 0.5},
    ])
    ablation = pd.DataFrame([
        {"mode": "finetune", "distance": 2.0, "release_speed": 5.0},
        {"mode": "no-finetune", "distance": 1.0, "release_speed": 3.0},
    ])
    return EvalReport(mse=mse, one_step=one_step, throw=throw, ablation=ablation, seeds={"run": 0})


def test_median_mse_counts_fully_diverged_as_inf():
    table = _mse_rows({("actnet", "gaussian-long"): None})
    assert median_mse(table, "actnet", "gaussian-long") == np.inf
    assert median_mse(table, "uan", "gaussian-long") is None
    assert median_mse(pd.DataFrame(), "uan", "throw") is None


def test_acceptance_passes_on_ordered_numbers():
    report = _passing_report()
    report.acceptance = run_acceptance(report)
    assert [c["passed"] for c in report.acceptance] == [True, True, True, True]
    assert report.passed
    enforce(report)


def test_acceptance_fails_and_enforce_raises():
    report = _passing_report()
    report.mse.loc[report.mse["variant"] == "uan", "mse_mean"] = 0.3
    report.acceptance = run_acceptance(report)
    by_name = {c["name"]: c["passed"] for c in report.acceptance}
    assert by_name["calibration_ordering"] is False
    assert not report.passed
    with pytest.raises(AcceptanceError) as exc:
        enforce(report)
    assert exc.value.payload["failed"] == ["calibration_ordering"]


def test_missing_rows_skip_checks():
    report = EvalReport()
    report.acceptance = run_acceptance(report)
    assert all(c["passed"] is None for c in report.acceptance)
    assert report.passed


def test_report_round_trip_writes_strict_json(tmp_path):
    report = _passing_report()
    report.acceptance = run_acceptance(report)
    report.timing = {"eval": 1.5}
    paths = write_report(report, str(tmp_path))
    with open(paths["report"], encoding="utf-8") as f:
        tree = json.load(f)
    long_row = [r for r in tree["tables"]["mse"] if r["variant"] == "actnet"][0]
    assert long_row["mse_mean"] is None
    assert "timing" not in tree
    back = read_report(str(tmp_path))
    assert back.timing == {"eval": 1.5}
    assert len(back.mse) == len(report.mse)
    assert back.passed
    assert os.path.exists(paths["mse"])


def test_read_report_missing(tmp_path):
    with pytest.raises(MissingArtifactError) as exc:
        read_report(str(tmp_path / "nowhere"))
    assert exc.value.payload["expected_path"].endswith("report.json")


def test_public_view_keeps_headlines():
    report = _passing_report()
    report.acceptance = run_acceptance(report)
    report.config_hashes = {"eval": "abc"}
    view = make_public_report(report.tree())
    assert view["throw_mse"] == {"uan": 0.1, "cem": 0.2, "default": 0.5}
    assert view["throw_gap"]["uan"]["gap"] == 0.05
    assert view["acceptance"][0] == {"name": "calibration_ordering", "passed": True}
    assert "config_hashes" not in view and "tables" not in view


# --------- throw evaluation ---------

def test_throw_episodes_return_one_record_each(tiny_cfg, rng):
    policy = make_policy(tiny_cfg, 150, 2, rng)
    outcome = run_throw_episodes(tiny_cfg, policy, "default", 2, seed=0)
    assert len(outcome.records) == 2
    assert set(outcome.records["plant"]) == {"default"}
    assert outcome.records["scored"].all()
    assert np.isfinite(outcome.distance)


def test_transfer_gap_is_the_distance_difference(tiny_cfg, rng):
    policy = make_policy(tiny_cfg, 150, 2, rng)
    gap = throw_transfer_gap(tiny_cfg, policy, "default", n_episodes=2, seed=1)
    assert gap.gap == pytest.approx(abs(gap.d_sim - gap.d_ref))
    assert set(gap.ref.records["plant"]) == {"reference"}
    assert gap.row()["variant"] == "default"
