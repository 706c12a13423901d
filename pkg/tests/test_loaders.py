import pandas as pd
import pytest

from src.data.datagen import TransitionDataset
from src.data.loaders import DataLoadError, load_dataset, save_dataset


@pytest.fixture
def saved(tmp_path, tiny_dataset):
    return save_dataset(tiny_dataset, str(tmp_path / "dataset.csv"))


def test_save_load_is_bit_exact(saved, tiny_dataset):
    ds, meta = load_dataset(saved, expected_timestep=0.005)
    pd.testing.assert_frame_equal(ds.frame, tiny_dataset.frame, check_exact=True)
    assert ds.tags == tiny_dataset.tags
    assert meta.n_rows == len(tiny_dataset)
    assert meta.tags["gaussian"] == 1


def test_timestep_mismatch_refused(saved):
    with pytest.raises(DataLoadError) as exc:
        load_dataset(saved, expected_timestep=0.01)
    assert exc.value.payload["file_timestep"] == 0.005


def test_missing_file(tmp_path):
    with pytest.raises(DataLoadError) as exc:
        load_dataset(str(tmp_path / "nope.csv"))
    assert exc.value.payload["path"].endswith("nope.csv")


def test_truncated_file_names_the_record(saved):
    with open(saved, "r", encoding="utf-8") as f:
        lines = f.readlines()
    with open(saved, "w", encoding="utf-8") as f:
        f.writelines(lines[:-1])
    with pytest.raises(DataLoadError) as exc:
        load_dataset(saved)
    assert "record" in exc.value.payload


def test_cut_mid_record(saved):
    with open(saved, "r", encoding="utf-8") as f:
        text = f.read()
    with open(saved, "w", encoding="utf-8") as f:
        f.write(text[: len(text) - 40])
    with pytest.raises(DataLoadError) as exc:
        load_dataset(saved)
    assert "record" in exc.value.payload


def test_edited_value_detected(saved):
    with open(saved, "r", encoding="utf-8") as f:
        lines = f.readlines()
    n_header = sum(1 for line in lines if line.startswith("# "))
    row = lines[n_header + 10].split(",")
    row[2] = repr(float(row[2]) + 0.5)
    lines[n_header + 10] = ",".join(row)
    with open(saved, "w", encoding="utf-8") as f:
        f.writelines(lines)
    with pytest.raises(DataLoadError):
        load_dataset(saved)


def test_chain_violation_reported(tiny_dataset):
    frame = tiny_dataset.frame.copy()
    frame.loc[5, "q_0"] = frame.loc[5, "q_0"] + 1.0
    broken = TransitionDataset(frame, tiny_dataset.timestep, tiny_dataset.n_joints, tiny_dataset.tags, {})
    bad = broken.chain_violations()
    assert bad and bad[0]["step"] == 4
