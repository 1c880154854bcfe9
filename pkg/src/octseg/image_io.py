"""Grayscale image loading/saving and result artifact writers.

PGM (P2/P5, 8 or 16 bit) is parsed here directly because normalization must
use the header's maxval; PNG goes through Pillow.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .types import Boundary, BScan, SegmentationResult

OVERLAY_COLORS = {
    "ilm": (255, 0, 0),
    "rnfl": (0, 255, 0),
    "rpe": (0, 128, 255),
}


class ImageFormatError(ValueError):
    """The file is not a supported single-channel PGM/PNG."""


class EmptyImageError(ValueError):
    """The image header declares zero rows or columns."""


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temp file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# PGM codec


def _pgm_tokens(data: bytes, count: int, pos: int = 2):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def _decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"not a grayscale PGM (magic {magic!r})")
    tokens, pos = _pgm_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError("malformed PGM header") from exc
    if width == 0 or height == 0:
        raise EmptyImageError("PGM declares a zero-sized image")
    if width < 0 or height < 0 or not 0 < maxval < 65536:
        raise ImageFormatError("invalid PGM dimensions or maxval")

    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = width * height * dtype.itemsize
        raw = data[pos : pos + need]
        if len(raw) < need:
            raise ImageFormatError("truncated PGM raster")
        pixels = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    else:
        try:
            pixels = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError("non-numeric P2 raster") from exc
        if pixels.size < width * height:
            raise ImageFormatError("truncated PGM raster")
        pixels = pixels[: width * height]
    if pixels.size and pixels.max() > maxval:
        raise ImageFormatError("PGM sample exceeds maxval")
    return pixels.reshape(height, width), maxval


def _encode_pgm(values: np.ndarray, maxval: int) -> bytes:
    rows, cols = values.shape
    header = f"P5\n{cols} {rows}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + values.astype(dtype).tobytes()


# --------------------------------------------------------------------------
# loading / saving


def load_grayscale(path) -> BScan:
    """Load an 8/16-bit single-channel PGM or PNG as a BScan in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        values, maxval = _decode_pgm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        values, maxval = _decode_png(data)
    else:
        raise ImageFormatError(f"{path}: unsupported image format")
    if values.size == 0:
        raise EmptyImageError(f"{path}: zero-sized image")
    return BScan(values.astype(np.float64) / maxval, source_id=str(path))


def _decode_png(data: bytes) -> tuple[np.ndarray, int]:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise ImageFormatError(f"unreadable PNG: {exc}") from exc
    if im.width == 0 or im.height == 0:
        raise EmptyImageError("PNG declares a zero-sized image")
    if im.mode == "L":
        maxval = 255
    elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
        maxval = 65535
    else:
        raise ImageFormatError(f"PNG mode {im.mode!r} is not single-channel 8/16-bit")
    return np.asarray(im).astype(np.int64), maxval


def save_grayscale(img: BScan, path, bit_depth: int = 8) -> None:
    """Quantize to ``bit_depth`` bits and write PGM (P5) or PNG by suffix."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    maxval = 255 if bit_depth == 8 else 65535
    values = np.rint(np.clip(img.intensity, 0.0, 1.0) * maxval).astype(np.int64)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        atomic_write(path, _encode_pgm(values, maxval))
    elif suffix == ".png":
        if bit_depth == 8:
            im = Image.fromarray(values.astype(np.uint8))
        else:
            im = Image.fromarray(values.astype(np.uint16))
        buf = io.BytesIO()
        im.save(buf, format="PNG")
        atomic_write(path, buf.getvalue())
    else:
        raise ImageFormatError(f"cannot save {path}: use .pgm or .png")


# --------------------------------------------------------------------------
# result artifacts


def _check_result(result: SegmentationResult) -> int:
    cols = {b.cols for b in result.boundaries()}
    if len(cols) != 1:
        raise ValueError(f"boundaries have unequal column counts {sorted(cols)}")
    n = cols.pop()
    if n == 0:
        raise ValueError("result has empty boundaries")
    return n


def boundaries_csv(ilm: Boundary, rnfl: Boundary, rpe: Boundary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["column", "ilm_row", "rnfl_row", "rpe_row"])
    for c, rows in enumerate(zip(ilm.row, rnfl.row, rpe.row)):
        w.writerow([c, *(int(r) for r in rows)])
    return buf.getvalue()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def result_to_dict(result: SegmentationResult) -> dict:
    return _jsonable(
        {
            "source_id": result.source_id,
            "columns": result.cols,
            "boundaries": {
                "ilm": result.ilm.row,
                "rnfl": result.rnfl.row,
                "rpe": result.rpe.row,
            },
            "path_costs": {
                "ilm": result.ilm.cost,
                "rnfl": result.rnfl.cost,
                "rpe": result.rpe.cost,
            },
            "metrics": result.metrics,
            "corrections": result.corrections,
            "flags": result.flags,
        }
    )


def write_boundaries(result: SegmentationResult, path, format: str = "csv") -> None:
    """Serialize the three boundaries as CSV or as a JSON document."""
    _check_result(result)
    if format == "csv":
        text = boundaries_csv(*result.boundaries())
    elif format == "json":
        text = json.dumps(result_to_dict(result), indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {format!r}")
    atomic_write(path, text.encode("utf-8"))


def write_metrics_csv(result: SegmentationResult, path) -> None:
    n = _check_result(result)
    rnfl = result.profiles["ILM-RNFL"]
    total = result.profiles["ILM-RPE"]
    header = ["column", "rnfl_px", "total_px"]
    with_um = rnfl.axial_scale is not None
    if with_um:
        header += ["rnfl_um", "total_um"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for c in range(n):
        line = [c, int(rnfl.px[c]), int(total.px[c])]
        if with_um:
            line += [f"{rnfl.um[c]:.6g}", f"{total.um[c]:.6g}"]
        w.writerow(line)
    atomic_write(path, buf.getvalue().encode("utf-8"))


def read_boundaries_csv(path) -> dict[str, np.ndarray]:
    """Parse a ``column,ilm_row,rnfl_row,rpe_row`` file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["column", "ilm_row", "rnfl_row", "rpe_row"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: expected header {','.join(expected)}")
        rows = list(reader)
    cols = [int(r["column"]) for r in rows]
    if cols != list(range(len(rows))):
        raise ValueError(f"{path}: columns must run 0..n-1 in order")
    return {
        name: np.array([int(r[f"{name}_row"]) for r in rows], dtype=np.int64)
        for name in ("ilm", "rnfl", "rpe")
    }


def read_boundaries_json(path) -> dict[str, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    return {k: np.array(v, dtype=np.int64) for k, v in doc["boundaries"].items()}


def render_overlay(img: BScan, result: SegmentationResult) -> np.ndarray:
    """RGB uint8 rendering: grayscale scan with ILM, RNFL, RPE drawn in order."""
    n = _check_result(result)
    if n != img.cols:
        raise ValueError("boundary column count does not match image width")
    gray = np.rint(np.clip(img.intensity, 0, 1) * 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    cols = np.arange(n)
    for name, b in zip(("ilm", "rnfl", "rpe"), result.boundaries()):
        if b.row.min() < 0 or b.row.max() >= img.rows:
            raise ValueError(f"{name} boundary leaves the image")
        rgb[b.row, cols] = OVERLAY_COLORS[name]
    return rgb


def write_overlay(img: BScan, result: SegmentationResult, path) -> None:
    rgb = render_overlay(img, result)
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())
