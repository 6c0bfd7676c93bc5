import json
import shutil
import struct

import numpy as np
import pytest

from cclab import datasetio, synth
from cclab.synth import Dataset, GenConfig, ShapeSpec


@pytest.fixture(scope="module")
def small_dataset():
    cfg = GenConfig(64, ShapeSpec("circle", (3, 6), (2, 10)), 6, seed=3)
    return synth.gen_dataset(cfg)


def test_roundtrip_bit_exact(small_dataset, tmp_path):
    p1 = tmp_path / "a.bgs"
    p2 = tmp_path / "b.bgs"
    n = datasetio.write_dataset(small_dataset, p1)
    assert n == p1.stat().st_size
    ds = datasetio.read_dataset(p1, verify=True)
    assert np.array_equal(ds.labels, small_dataset.labels)
    assert ds.manifest["generator"] == small_dataset.manifest["generator"]
    datasetio.write_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "a.bgs.json").read_text() == (tmp_path / "b.bgs.json").read_text()


def test_file_size_formula(tmp_path):
    images = [synth.gen_random_pixels(256, 10, np.random.default_rng(i)) for i in range(3)]
    labels = np.array([10, 10, 10])
    ds = Dataset({"format_version": 1, "generator": None}, images, labels)
    n = datasetio.write_dataset(ds, tmp_path / "c.bgs")
    assert n == 32 + 3 * (4 + 256 * 32)


def test_verify_names_failing_index(small_dataset, tmp_path):
    path = tmp_path / "d.bgs"
    datasetio.write_dataset(small_dataset, path)
    raw = bytearray(path.read_bytes())
    img_bytes = 64 * 8
    off = 32 + 2 * (4 + img_bytes)  # label field of image 2
    raw[off] ^= 0xFF
    bad = tmp_path / "bad.bgs"
    bad.write_bytes(bytes(raw))
    shutil.copy(str(path) + ".json", str(bad) + ".json")
    assert np.array_equal(
        datasetio.read_dataset(bad).labels[:2], small_dataset.labels[:2]
    )  # verify off: loads fine
    with pytest.raises(datasetio.DatasetFormatError, match="image 2"):
        datasetio.read_dataset(bad, verify=True)


def test_malformed_files_rejected(small_dataset, tmp_path):
    path = tmp_path / "e.bgs"
    datasetio.write_dataset(small_dataset, path)
    raw = path.read_bytes()

    bad = tmp_path / "magic.bgs"
    bad.write_bytes(b"XXSET1\x00\x00" + raw[8:])
    with pytest.raises(datasetio.DatasetFormatError, match="magic"):
        datasetio.read_dataset(bad)

    bad = tmp_path / "version.bgs"
    bad.write_bytes(raw[:8] + struct.pack("<H", 9) + raw[10:])
    with pytest.raises(datasetio.DatasetFormatError, match="version"):
        datasetio.read_dataset(bad)

    bad = tmp_path / "short.bgs"
    bad.write_bytes(raw[:-5])
    with pytest.raises(datasetio.DatasetFormatError, match="size"):
        datasetio.read_dataset(bad)


def test_missing_sidecar_still_loads(small_dataset, tmp_path):
    path = tmp_path / "nosidecar.bgs"
    datasetio.write_dataset(small_dataset, path)
    (tmp_path / "nosidecar.bgs.json").unlink()
    ds = datasetio.read_dataset(path)
    assert ds.manifest["generator"] is None


def test_canonical_json_17_digits():
    text = datasetio.canonical_json({"third": 1 / 3, "int": 4, "nested": [0.1]})
    assert "0.33333333333333331" in text
    assert "0.10000000000000001" in text
    assert json.loads(text)["third"] == 1 / 3  # round-trip exact
    with pytest.raises(ValueError):
        datasetio.canonical_json({"bad": float("nan")})


def test_canonical_json_sorted_and_stable():
    a = datasetio.canonical_json({"b": 1, "a": {"z": 2.5, "y": np.float64(1.25)}})
    b = datasetio.canonical_json({"a": {"y": 1.25, "z": 2.5}, "b": np.int64(1)})
    assert a == b


def test_samples_csv(tmp_path):
    path = tmp_path / "s.csv"
    datasetio.write_samples_csv(path, [(10, 11.0), (4, 4.0)])
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "sample_id,true,pred,abs_rel_err"
    assert lines[1].startswith("0,10,11,0.1")
    assert lines[2] == "1,4,4,0"


def test_trace_csv(tmp_path):
    from cclab import tensornet as tn

    trace = tn.TrainTrace(train_loss=[2.0, 1.0], val_loss=[3.0])
    path = tmp_path / "t.csv"
    datasetio.write_trace_csv(path, trace)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss"
    assert lines[1] == "1,2,3"
    assert lines[2] == "2,1,"


SCATTER = {
    "samples": [(i + 1, (i + 1) * 1.05) for i in range(30)],
    "train_range": [5, 20],
    "title": "demo",
}


def test_emit_plot_deterministic(tmp_path):
    a = datasetio.emit_plot(SCATTER, "scatter_true_vs_pred", tmp_path / "a.svg")
    b = datasetio.emit_plot(SCATTER, "scatter_true_vs_pred", tmp_path / "b.svg")
    assert a == b
    assert a.startswith('<?xml version="1.0"')
    assert a.rstrip().endswith("</svg>")
    assert "gold" in a  # training-range highlight box


def test_emit_plot_empty_samples(tmp_path):
    svg = datasetio.emit_plot({"samples": []}, "scatter_true_vs_pred", tmp_path / "e.svg")
    assert "<circle" not in svg


def test_emit_plot_loss_curves(tmp_path):
    report = {
        "traces": [
            {"label": "m0", "train_loss": [100.0, 10.0, 1.0, 0.5], "epochs_to_threshold": 3},
            {"label": "m1", "train_loss": [50.0, 0.9, 0.05, 0.01], "epochs_to_threshold": 2},
        ],
        "threshold": 1.0,
    }
    svg = datasetio.emit_plot(report, "loss_curves", tmp_path / "l.svg")
    assert svg.count("<polyline") == 2
    assert "threshold @ 3" in svg


def test_emit_plot_error_bins(tmp_path):
    report = {
        "bins": [
            {"lo": 0, "hi": 10, "mean_err": 0.01, "n": 4},
            {"lo": 10, "hi": 20, "mean_err": 0.5, "n": 4},
        ],
        "reference": 0.002,
        "train_range": [0, 10],
    }
    svg = datasetio.emit_plot(report, "error_vs_count", tmp_path / "b.svg")
    assert "<polyline" in svg


def test_emit_plot_validation(tmp_path):
    with pytest.raises(ValueError, match="missing"):
        datasetio.emit_plot({}, "scatter_true_vs_pred", tmp_path / "x.svg")
    with pytest.raises(ValueError, match="kind"):
        datasetio.emit_plot(SCATTER, "histogram", tmp_path / "x.svg")


def test_write_empty_dataset_rejected(tmp_path):
    ds = Dataset({"format_version": 1, "generator": None}, [], np.array([], dtype=np.int64))
    with pytest.raises(ValueError):
        datasetio.write_dataset(ds, tmp_path / "empty.bgs")
