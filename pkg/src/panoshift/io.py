"""File codecs: PFM depth, 8/16-bit PNG, JSON documents, atomic writes."""

from __future__ import annotations

import contextlib
import json
import math
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


class FormatError(ValueError):
    pass


# --- PFM ---------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"^(Pf|PF)\s+(\d+)\s+(\d+)\s+(\S+)\s", re.S)


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-row-first float32 array, (h, w) or (h, w, 3)."""
    data = Path(path).read_bytes()
    m = _PFM_HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    body = data[m.end():]
    if len(body) < 4 * count:
        raise FormatError(f"{path}: truncated PFM raster")
    raster = np.frombuffer(body, dtype=dtype, count=count)
    shape = (h, w, 3) if channels == 3 else (h, w)
    # PFM stores rows bottom to top.
    return np.flipud(raster.reshape(shape)).astype(np.float32)


def encode_pfm(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 3:
        kind = b"PF"
    elif arr.ndim == 2:
        kind = b"Pf"
    else:
        raise FormatError(f"PFM needs (h, w) or (h, w, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    header = kind + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return header + np.ascontiguousarray(np.flipud(arr)).astype("<f4").tobytes()


def write_pfm(path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pfm(arr))


# --- PNG ---------------------------------------------------------------------


def read_color(path) -> np.ndarray:
    """8-bit RGB raster as float64 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def quantize_color(color: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(color) * 255.0), 0, 255).astype(np.uint8)


def encode_png(arr: np.ndarray) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def write_color(path, color: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(quantize_color(color)))


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_mask(path, mask: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(np.where(mask, 255, 0).astype(np.uint8)))


def read_labels(path) -> np.ndarray:
    """Integer label map from a single-channel PNG (8 or 16 bit)."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        # RGB-coded labels: pack channels into one integer.
        arr = arr[..., 0].astype(np.int64) * 65536 + arr[..., 1].astype(np.int64) * 256 + arr[..., 2]
    return arr.astype(np.int64)


def read_depth(path, meters_per_unit: float = 0.001) -> np.ndarray:
    """Depth in meters from a PFM, or from a 16-bit PNG scaled by meters_per_unit."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path).astype(np.float64)
    with Image.open(path) as im:
        raw = np.asarray(im)
    if raw.ndim != 2:
        raise FormatError(f"{path}: depth PNG must be single channel")
    return raw.astype(np.float64) * meters_per_unit


# --- JSON --------------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _encode_floats(obj):
    # inf/nan are written as strings so output stays strict JSON.
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _encode_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_floats(v) for v in obj]
    if isinstance(obj, np.floating):
        return _encode_floats(float(obj))
    return obj


def _decode_floats(obj):
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _decode_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_floats(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_encode_floats(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode())


def read_json(path):
    with open(path) as fh:
        return _decode_floats(json.load(fh))


# --- atomic writes -----------------------------------------------------------


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def commit_outputs(outputs: dict) -> None:
    """Write several files so that either all of them appear or none do.

    ``outputs`` maps destination path -> bytes. Everything is staged to temp
    files first; renames happen only once every payload is on disk.
    """
    staged = []
    try:
        for dest, payload in outputs.items():
            dest = Path(dest)
            fd, tmp = tempfile.mkstemp(dir=dest.parent or ".", prefix=f".{dest.name}.", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            staged.append((tmp, dest))
        for tmp, dest in staged:
            os.replace(tmp, dest)
    finally:
        for tmp, _ in staged:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
