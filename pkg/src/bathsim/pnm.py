"""Binary PPM (P6) and PGM (P5) readers/writers with bit-exact round trips.

16-bit PGM samples are big-endian per the PNM spec. Headers are written in
the canonical "P5\\n<w> <h>\\n<maxval>\\n" form; the reader accepts any
whitespace/comment layout the format allows.
"""

from __future__ import annotations

import io

import numpy as np


class PnmError(ValueError):
    """Malformed header, wrong maxval, or truncated payload."""


def _read_token(stream) -> bytes:
    token = b""
    while True:
        ch = stream.read(1)
        if ch == b"":
            raise PnmError("unexpected end of header")
        if ch == b"#":  # comment runs to end of line
            while ch not in (b"\n", b"", b"\r"):
                ch = stream.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def _read_header(stream, expected_magic: bytes):
    magic = stream.read(2)
    if magic != expected_magic:
        raise PnmError(f"bad magic {magic!r}, expected {expected_magic!r}")
    width = int(_read_token(stream))
    height = int(_read_token(stream))
    maxval = int(_read_token(stream))
    if width <= 0 or height <= 0:
        raise PnmError(f"bad dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise PnmError(f"maxval {maxval} out of range")
    return width, height, maxval


def _read_payload(stream, count: int, maxval: int) -> np.ndarray:
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    raw = stream.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise PnmError(f"truncated payload: wanted {count * dtype.itemsize} "
                       f"bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).astype(np.uint16 if maxval > 255 else np.uint8)


def load_ppm(path) -> np.ndarray:
    """P6 file -> (H, W, 3) uint8 array; maxval must be 255."""
    with open(path, "rb") as fh:
        width, height, maxval = _read_header(fh, b"P6")
        if maxval != 255:
            raise PnmError(f"expected 8-bit PPM (maxval 255), got {maxval}")
        data = _read_payload(fh, width * height * 3, maxval)
    return data.reshape(height, width, 3)


def save_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise PnmError("PPM writer expects (H, W, 3) uint8")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_pgm(path, expected_maxval: int | None = None) -> tuple[np.ndarray, int]:
    """P5 file -> ((H, W) uint8/uint16 array, maxval)."""
    with open(path, "rb") as fh:
        width, height, maxval = _read_header(fh, b"P5")
        if expected_maxval is not None and maxval != expected_maxval:
            raise PnmError(f"expected maxval {expected_maxval}, got {maxval}")
        data = _read_payload(fh, width * height, maxval)
    return data.reshape(height, width), maxval


def save_pgm(path, image: np.ndarray, maxval: int) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise PnmError("PGM writer expects a 2-D array")
    if not 0 < maxval < 65536:
        raise PnmError(f"maxval {maxval} out of range")
    if img.max(initial=0) > maxval:
        raise PnmError("sample exceeds maxval")
    payload = img.astype(">u2" if maxval > 255 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(payload)


def load_ppm_bytes(blob: bytes) -> np.ndarray:
    """In-memory variant of load_ppm (used by tests and batch evaluation)."""
    stream = io.BytesIO(blob)
    width, height, maxval = _read_header(stream, b"P6")
    if maxval != 255:
        raise PnmError(f"expected 8-bit PPM (maxval 255), got {maxval}")
    return _read_payload(stream, width * height * 3, maxval).reshape(height, width, 3)
