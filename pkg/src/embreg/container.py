"""VOL1: a minimal bit-exact binary container for volumes and fields.

Layout (all little-endian):

========  =====  ==========================================
offset    size   field
========  =====  ==========================================
0         4      magic ``VOL1``
4         4      dtype code, NUL-padded (``f32``/``f64``/``u16``/``u8``)
8         16     D, H, W, C as uint32
24        24     spacing, 3 x float64
48        4      attribute block length (uint32)
52        var    attributes, UTF-8 ``key=value`` lines
...       var    payload, raw values in channel-major (C, D, H, W) order
========  =====  ==========================================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptContainer, NotVol1, ShapeMismatch

_MAGIC = b"VOL1"
_HEADER = struct.Struct("<4s4sIIIIdddI")

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u16": np.dtype("<u2"),
    "u8": np.dtype("<u1"),
}


@dataclass
class Vol1:
    """Decoded container: values as ``(D, H, W, C)`` plus metadata."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dtype: str = "f64"
    attrs: dict[str, str] = field(default_factory=dict)


def write_vol1(path, values, spacing=(1.0, 1.0, 1.0), dtype: str = "f64", attrs=None) -> None:
    """Write a scalar volume ``(D,H,W)`` or channels-last field ``(D,H,W,C)``."""
    arr = np.asarray(values)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise ShapeMismatch(f"values must be (D,H,W) or (D,H,W,C), got {arr.shape}")
    if dtype not in _DTYPES:
        raise ShapeMismatch(f"unsupported dtype code {dtype!r}")
    d, h, w, c = arr.shape
    attr_text = "".join(
        f"{k}={v}\n" for k, v in sorted((attrs or {}).items())
    ).encode("utf-8")
    header = _HEADER.pack(
        _MAGIC,
        dtype.encode("ascii").ljust(4, b"\x00"),
        d,
        h,
        w,
        c,
        float(spacing[0]),
        float(spacing[1]),
        float(spacing[2]),
        len(attr_text),
    )
    payload = np.ascontiguousarray(np.moveaxis(arr, -1, 0)).astype(_DTYPES[dtype]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(attr_text)
        fh.write(payload)


def read_vol1(path) -> Vol1:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise NotVol1(f"{path}: missing VOL1 magic")
    if len(blob) < _HEADER.size:
        raise CorruptContainer(f"{path}: truncated header")
    magic, dtype_raw, d, h, w, c, sz, sy, sx, attr_len = _HEADER.unpack_from(blob)
    dtype = dtype_raw.rstrip(b"\x00").decode("ascii", errors="replace")
    if dtype not in _DTYPES:
        raise CorruptContainer(f"{path}: unknown dtype code {dtype!r}")
    body = blob[_HEADER.size :]
    if len(body) < attr_len:
        raise CorruptContainer(f"{path}: truncated attribute block")
    attr_text = body[:attr_len].decode("utf-8")
    attrs: dict[str, str] = {}
    for line in attr_text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CorruptContainer(f"{path}: malformed attribute line {line!r}")
        key, _, value = line.partition("=")
        attrs[key] = value
    np_dtype = _DTYPES[dtype]
    expected = np_dtype.itemsize * d * h * w * c
    payload = body[attr_len:]
    if len(payload) != expected:
        raise CorruptContainer(
            f"{path}: payload length {len(payload)} != expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=np_dtype).reshape(c, d, h, w)
    return Vol1(
        values=np.moveaxis(arr, 0, -1).astype(np.float64 if dtype in ("f32", "f64") else np.int64),
        spacing=(sz, sy, sx),
        dtype=dtype,
        attrs=attrs,
    )
