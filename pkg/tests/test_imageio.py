import numpy as np
import pytest
from PIL import Image

from hairgbuf.gbuffer import TensorImage
from hairgbuf.imageio import read_pfm, write_pfm, write_png


def test_pfm_round_trip_three_channels(tmp_path, rng):
    img = TensorImage(rng.normal(size=(6, 9, 3)).astype(np.float32))
    path = tmp_path / "t.pfm"
    write_pfm(path, img)
    back = read_pfm(path)
    assert np.array_equal(back.data, img.data)


def test_pfm_round_trip_single_channel(tmp_path, rng):
    img = TensorImage(rng.normal(size=(5, 4, 1)).astype(np.float32))
    path = tmp_path / "t.pfm"
    write_pfm(path, img)
    back = read_pfm(path)
    assert np.array_equal(back.data, img.data)


def test_pfm_two_channels_zero_padded(tmp_path, rng):
    img = TensorImage(rng.normal(size=(4, 4, 2)).astype(np.float32))
    path = tmp_path / "motion.pfm"
    write_pfm(path, img)
    back = read_pfm(path)
    assert back.channels == 3
    assert np.array_equal(back.data[:, :, :2], img.data)
    assert np.all(back.data[:, :, 2] == 0.0)


def test_pfm_header_fields(tmp_path):
    img = TensorImage(np.ones((2, 3, 1), dtype=np.float32))
    path = tmp_path / "t.pfm"
    write_pfm(path, img)
    with open(path, "rb") as fh:
        assert fh.readline().strip() == b"Pf"
        assert fh.readline().split() == [b"3", b"2"]
        assert float(fh.readline()) == -1.0


def test_pfm_write_deterministic(tmp_path, rng):
    img = TensorImage(rng.normal(size=(8, 8, 3)).astype(np.float32))
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    write_pfm(a, img)
    write_pfm(b, img)
    assert a.read_bytes() == b.read_bytes()


def test_pfm_rejects_wide_tensors(tmp_path):
    with pytest.raises(ValueError, match="1-3 channels"):
        write_pfm(tmp_path / "x.pfm", TensorImage(np.zeros((2, 2, 5))))


def test_pfm_truncation_detected(tmp_path, rng):
    img = TensorImage(rng.normal(size=(4, 4, 3)).astype(np.float32))
    path = tmp_path / "t.pfm"
    write_pfm(path, img)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_pfm(path)


def test_png_clamps(tmp_path):
    data = np.array([[[-0.5], [0.5], [2.0]]], dtype=np.float32)
    path = tmp_path / "t.png"
    write_png(path, TensorImage(data))
    pixels = np.asarray(Image.open(path))
    assert pixels.tolist() == [[0, 128, 255]]
