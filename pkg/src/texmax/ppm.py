"""Binary PPM (P6, maxval 255) codec and atomic file writes."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

_WS = b" \t\n\r\v\f"


def atomic_write(path, data: bytes | str) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in _WS and c:
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PPM header", pos)
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into an (H, W, 3) float64 array with values v / 255."""
    if data[:2] != b"P6":
        raise FormatError(f"unsupported PPM magic {data[:2]!r}; only binary P6 is read", 0)
    fields, pos = [], 2
    for what in ("width", "height", "maxval"):
        at = pos
        tok, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"bad PPM {what} {tok!r}", at)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"PPM maxval must be 255, got {maxval}", pos)
    if width < 1 or height < 1:
        raise FormatError(f"PPM has empty size {width}x{height}", pos)
    if pos >= len(data) or data[pos : pos + 1] not in _WS:
        raise FormatError("missing whitespace after PPM header", pos)
    pos += 1
    need = width * height * 3
    if len(data) - pos < need:
        raise FormatError(
            f"truncated PPM payload: need {need} bytes, have {len(data) - pos}", len(data)
        )
    pix = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return pix.reshape(height, width, 3).astype(np.float64) / 255.0


def encode_ppm(image) -> bytes:
    """Encode an (H, W, 3) or (H, W) array in [0, 1] as canonical P6 bytes."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise FormatError(f"cannot encode array of shape {a.shape} as PPM")
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    pix = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = pix.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def encode_ppm_u8(pixels: np.ndarray) -> bytes:
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, np.uint8).tobytes()


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_ppm(path.read_bytes())
    except FormatError as exc:
        err = FormatError(f"{path}: {exc}")
        err.offset = exc.offset
        raise err from exc


def write_ppm(path, image) -> None:
    atomic_write(path, encode_ppm(image))
