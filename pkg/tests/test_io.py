import struct

import numpy as np
import pytest
from PIL import Image

from panoshift import io


def reference_pfm_reader(data: bytes) -> np.ndarray:
    # Hand-rolled reader: three text lines then little-endian floats, bottom row first.
    lines = data.split(b"\n", 3)
    assert lines[0] == b"Pf"
    w, h = map(int, lines[1].split())
    assert float(lines[2]) < 0
    vals = struct.unpack(f"<{w * h}f", lines[3][: 4 * w * h])
    rows = [vals[r * w:(r + 1) * w] for r in range(h)]
    return np.array(rows[::-1], dtype=np.float32)


def test_pfm_bytes_follow_layout():
    arr = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
    data = io.encode_pfm(arr)
    assert data.startswith(b"Pf\n3 2\n-1.0\n")
    # first stored float is the bottom-left pixel
    assert struct.unpack("<f", data[12:16])[0] == 4.0
    assert np.array_equal(reference_pfm_reader(data), arr)


def test_pfm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for arr in (rng.random((5, 10)).astype(np.float32) * 20, rng.random((4, 8, 3)).astype(np.float32)):
        io.write_pfm(tmp_path / "d.pfm", arr)
        back = io.read_pfm(tmp_path / "d.pfm")
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)


def test_pfm_big_endian_is_read(tmp_path):
    arr = np.array([[1.5, -2.0]], dtype=np.float32)
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + arr.astype(">f4").tobytes())
    assert np.array_equal(io.read_pfm(tmp_path / "b.pfm"), arr)


@pytest.mark.parametrize("payload", [b"P6\n1 1\n255\n\0\0\0", b"Pf\n4 4\n-1.0\n" + b"\0" * 8])
def test_pfm_rejects_bad_files(tmp_path, payload):
    (tmp_path / "x.pfm").write_bytes(payload)
    with pytest.raises(io.FormatError):
        io.read_pfm(tmp_path / "x.pfm")


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (6, 12, 3)).astype(np.uint8)
    io.write_color(tmp_path / "c.png", img / 255.0)
    assert np.array_equal(io.quantize_color(io.read_color(tmp_path / "c.png")), img)


def test_sixteen_bit_depth_png(tmp_path):
    raw = np.array([[1000, 2500], [65535, 1]], dtype=np.uint16)
    Image.fromarray(raw).save(tmp_path / "d.png")
    d = io.read_depth(tmp_path / "d.png", 0.001)
    assert np.allclose(d, raw * 0.001)
    assert np.allclose(io.read_depth(tmp_path / "d.png", 0.01), raw * 0.01)


def test_mask_and_labels(tmp_path):
    m = np.array([[True, False], [False, True]])
    io.write_mask(tmp_path / "m.png", m)
    assert np.array_equal(io.read_mask(tmp_path / "m.png"), m)
    lab = np.array([[0, 7], [300, 2]], dtype=np.uint16)
    Image.fromarray(lab).save(tmp_path / "l.png")
    assert np.array_equal(io.read_labels(tmp_path / "l.png"), lab)


def test_json_non_finite_round_trip(tmp_path):
    doc = {"b": float("inf"), "a": [1.0, float("-inf")], "c": np.float32(0.5)}
    text = io.dumps_json(doc)
    assert '"inf"' in text and text.index('"a"') < text.index('"b"')
    io.write_json(tmp_path / "r.json", doc)
    back = io.read_json(tmp_path / "r.json")
    assert back["b"] == float("inf") and back["a"][1] == float("-inf") and back["c"] == 0.5


def test_commit_outputs_is_all_or_nothing(tmp_path):
    good = tmp_path / "a.bin"
    bad = tmp_path / "missing_dir" / "b.bin"
    with pytest.raises(OSError):
        io.commit_outputs({good: b"1", bad: b"2"})
    assert list(tmp_path.iterdir()) == []
    io.commit_outputs({good: b"1", tmp_path / "c.bin": b"3"})
    assert good.read_bytes() == b"1" and sorted(p.name for p in tmp_path.iterdir()) == ["a.bin", "c.bin"]
