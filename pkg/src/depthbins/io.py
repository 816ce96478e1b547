"""
File formats.

Depth maps (chosen by extension):

* ``.raw``  little-endian container: magic ``DGBN``, u32 version, u32 height,
  u32 width, then height*width float64 values and height*width mask bytes,
  both row-major. Round-trips bit-exactly, invalid pixels included.
* ``.pfm``  single-channel float32 PFM (bottom-to-top rows, negative scale
  means little-endian), values in cm. Invalid pixels are written as NaN and
  non-finite values read back as invalid.
* ``.pgm``  16-bit big-endian binary PGM of millimeter integers; 0 is invalid.

Color images are binary PPM (P6), 8 or 16 bit, converted to [0, 1].

Tensors (weights, precomputed features) use a ``DGBW`` container: magic,
u32 version, u32 header length, a UTF-8 JSON header
``{"tensors": [{"name", "shape", "dtype", "offset", "nbytes"}], "meta": {}}``,
then the payload of little-endian float64 arrays; offsets are relative to the
start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .types import DepthMap, FeatureMap, FormatError, check_same_shape

RAW_MAGIC = b"DGBN"
RAW_VERSION = 1
TENSOR_MAGIC = b"DGBW"
TENSOR_VERSION = 1
MAX_DIM = 1 << 16


def _check_dims(h: int, w: int) -> None:
    if h < 1 or w < 1 or h > MAX_DIM or w > MAX_DIM:
        raise FormatError(f"image dimensions {h}x{w} out of range", "dimension-overflow")


def _suffix(path) -> str:
    ext = Path(path).suffix.lower()
    if ext not in (".raw", ".pfm", ".pgm"):
        raise FormatError(f"unknown depth format {ext!r} for {path}", "unknown-format")
    return ext


def read_depth(path) -> DepthMap:
    ext = _suffix(path)
    data = Path(path).read_bytes()
    return {".raw": _parse_raw, ".pfm": _parse_pfm, ".pgm": _parse_pgm}[ext](data)


def write_depth(depth: DepthMap, path) -> None:
    ext = _suffix(path)
    payload = {".raw": _encode_raw, ".pfm": _encode_pfm, ".pgm": _encode_pgm}[ext](depth)
    Path(path).write_bytes(payload)


def _encode_raw(depth: DepthMap) -> bytes:
    h, w = depth.shape
    head = RAW_MAGIC + struct.pack("<III", RAW_VERSION, h, w)
    return head + depth.values.astype("<f8").tobytes() + depth.mask.astype(np.uint8).tobytes()


def _parse_raw(data: bytes) -> DepthMap:
    if len(data) < 16:
        raise FormatError("RAW header truncated", "truncated-file")
    if data[:4] != RAW_MAGIC:
        raise FormatError(f"bad RAW magic {data[:4]!r}", "bad-magic")
    version, h, w = struct.unpack("<III", data[4:16])
    if version != RAW_VERSION:
        raise FormatError(f"unsupported RAW version {version}", "bad-magic")
    _check_dims(h, w)
    n = h * w
    if len(data) < 16 + 9 * n:
        raise FormatError(f"RAW payload truncated: {len(data)} bytes for {h}x{w}", "truncated-file")
    values = np.frombuffer(data, "<f8", count=n, offset=16).reshape(h, w)
    mask = np.frombuffer(data, np.uint8, count=n, offset=16 + 8 * n).reshape(h, w) != 0
    return DepthMap(values, mask)


def _read_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Whitespace-separated header tokens (with # comments) of a netpbm/PFM file."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("header truncated", "truncated-file")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def _parse_pfm(data: bytes) -> DepthMap:
    tokens, pos = _read_tokens(data, 4)
    if tokens[0] != b"Pf":
        raise FormatError(f"not a single-channel PFM (magic {tokens[0]!r})", "bad-magic")
    try:
        w, h, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}", "bad-magic") from None
    _check_dims(h, w)
    if scale == 0:
        raise FormatError("PFM scale must be non-zero", "bad-magic")
    dtype = "<f4" if scale < 0 else ">f4"
    if len(data) < pos + 4 * h * w:
        raise FormatError("PFM payload truncated", "truncated-file")
    grid = np.frombuffer(data, dtype, count=h * w, offset=pos).reshape(h, w)[::-1].astype(np.float64)
    mask = np.isfinite(grid)
    return DepthMap(np.where(mask, grid, 0.0), mask)


def _encode_pfm(depth: DepthMap) -> bytes:
    h, w = depth.shape
    grid = np.where(depth.mask, depth.values, np.nan).astype("<f4")[::-1]
    return f"Pf\n{w} {h}\n-1.0\n".encode() + grid.tobytes()


def _parse_pgm(data: bytes) -> DepthMap:
    tokens, pos = _read_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})", "bad-magic")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed PGM header: {exc}", "bad-magic") from None
    _check_dims(h, w)
    if not 0 < maxval < 65536:
        raise FormatError(f"PGM maxval {maxval} out of range", "bad-magic")
    dtype = np.uint8 if maxval < 256 else ">u2"
    nbytes = h * w * np.dtype(dtype).itemsize
    if len(data) < pos + nbytes:
        raise FormatError("PGM payload truncated", "truncated-file")
    mm = np.frombuffer(data, dtype, count=h * w, offset=pos).reshape(h, w).astype(np.float64)
    return DepthMap(mm / 10.0, mm > 0)


def _encode_pgm(depth: DepthMap) -> bytes:
    h, w = depth.shape
    mm = np.where(depth.mask, np.rint(depth.values * 10.0), 0)
    mm = np.clip(mm, 0, 65535).astype(">u2")
    return f"P5\n{w} {h}\n65535\n".encode() + mm.tobytes()


def read_color(path) -> FeatureMap:
    data = Path(path).read_bytes()
    tokens, pos = _read_tokens(data, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {tokens[0]!r})", "bad-magic")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed PPM header: {exc}", "bad-magic") from None
    _check_dims(h, w)
    if not 0 < maxval < 65536:
        raise FormatError(f"PPM maxval {maxval} out of range", "bad-magic")
    dtype = np.uint8 if maxval < 256 else ">u2"
    count = 3 * h * w
    if len(data) < pos + count * np.dtype(dtype).itemsize:
        raise FormatError("PPM payload truncated", "truncated-file")
    rgb = np.frombuffer(data, dtype, count=count, offset=pos).reshape(h, w, 3)
    return FeatureMap(rgb.transpose(2, 0, 1).astype(np.float64) / maxval)


def encode_ppm(rgb: np.ndarray) -> bytes:
    """(H, W, 3) uint8 array to binary PPM bytes."""
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def write_color(color: FeatureMap, path) -> None:
    rgb = np.rint(np.clip(color.values, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(encode_ppm(rgb))


def error_colormap() -> np.ndarray:
    """Fixed 256-entry blue -> cyan -> yellow -> red ramp, (256, 3) uint8."""
    t = np.linspace(0.0, 1.0, 256)
    r = np.clip(2 * t - 0.5, 0, 1)
    g = np.clip(1.5 - np.abs(4 * t - 2), 0, 1)
    b = np.clip(1.5 - 2 * t, 0, 1)
    return np.rint(np.stack([r, g, b], axis=1) * 255).astype(np.uint8)


def error_heatmap(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    """Colorized |pred - gt| normalized by the 99th-percentile error; invalid pixels black."""
    check_same_shape(pred.shape, gt.shape, "error heatmap")
    mask = pred.mask & gt.mask
    err = np.where(mask, np.abs(pred.values - gt.values), 0.0)
    scale = 0.0
    if mask.any():
        scale = float(np.percentile(err[mask], 99))
        if scale <= 0:
            scale = float(err[mask].max())
    if scale > 0:
        idx = np.clip(np.floor(err / scale * 255), 0, 255).astype(np.int64)
    else:
        idx = np.zeros(err.shape, np.int64)
    rgb = error_colormap()[idx]
    rgb[~mask] = 0
    return rgb


def write_error_heatmap(pred: DepthMap, gt: DepthMap, path) -> None:
    Path(path).write_bytes(encode_ppm(error_heatmap(pred, gt)))


def write_tensors(tensors: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "dtype": "float64",
                        "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    head = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, len(header))
    Path(path).write_bytes(head + header + b"".join(chunks))


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError("tensor container truncated", "truncated-file")
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor container magic {data[:4]!r}", "bad-magic")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor container version {version}", "bad-magic")
    if len(data) < 12 + hlen:
        raise FormatError("tensor container header truncated", "truncated-file")
    header = json.loads(data[12:12 + hlen])
    base = 12 + hlen
    out = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != 8 * count or len(data) < base + e["offset"] + e["nbytes"]:
            raise FormatError(f"tensor {e['name']} truncated", "truncated-file")
        out[e["name"]] = np.frombuffer(data, "<f8", count=count, offset=base + e["offset"]).reshape(e["shape"]).copy()
    return out, header.get("meta", {})
