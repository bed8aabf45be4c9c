import hashlib
import json

import numpy as np
import pytest

from fusion.datagen import true_tau
from fusion.io import dataset_frame, load_dataset, save_dataset, sidecar_path


def test_round_trip_exact(small_data, tmp_path):
    path = tmp_path / "d.csv"
    save_dataset(small_data, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.X, small_data.X)
    np.testing.assert_array_equal(back.T, small_data.T)
    np.testing.assert_array_equal(back.Y, small_data.Y)
    np.testing.assert_array_equal(back.is_rct, small_data.is_rct)
    np.testing.assert_array_equal(back.tau_true, small_data.tau_true)
    np.testing.assert_array_equal(true_tau(back), small_data.tau_true)


def test_sidecar_contents(small_data, tmp_path):
    path = tmp_path / "d.csv"
    save_dataset(small_data, path)
    side = json.loads(sidecar_path(path).read_text())
    assert side["summary"]["n_obs"] == int((~small_data.is_rct).sum())
    assert side["summary"]["n_rct"] == int(small_data.is_rct.sum())
    assert len(side["probs"]) == small_data.n_treatments
    assert side["n_features"] == small_data.d
    assert side["sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()


def test_frame_columns(small_data):
    df = dataset_frame(small_data)
    assert len(df) == small_data.n
    for col in ("t", "y", "source", "tau_true"):
        assert col in df.columns


def test_save_is_byte_deterministic(small_data, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset(small_data, a)
    save_dataset(small_data, b)
    assert a.read_bytes() == b.read_bytes()
    assert sidecar_path(a).read_bytes() == sidecar_path(b).read_bytes()


def test_load_plain_csv_without_truth(small_data, tmp_path):
    path = tmp_path / "plain.csv"
    df = dataset_frame(small_data)
    keep = [c for c in df.columns if c.startswith(("x_", "p_")) or c in ("t", "y", "source")]
    df[keep].to_csv(path, index=False, float_format="%.17g")
    back = load_dataset(path)
    assert back.n == small_data.n
    assert back.tau_true is None and back.Z_latent is None
    np.testing.assert_array_equal(back.Y, small_data.Y)
    np.testing.assert_array_equal(back.probs.p, small_data.probs.p)


def test_missing_file_raises(tmp_path):
    with pytest.raises((FileNotFoundError, OSError)):
        load_dataset(tmp_path / "nope.csv")
