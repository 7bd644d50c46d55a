"""Image container conventions, finite differences, file I/O and metrics.

Images are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(height, width)``, indexed ``(row, col)`` with the origin at the top-left.
"""

from __future__ import annotations

import os
import re
import struct
from typing import NamedTuple

import numpy as np

__all__ = [
    "DualField",
    "ImageFormatError",
    "MalformedHeaderError",
    "TruncatedPayloadError",
    "UnsupportedMaxvalError",
    "as_image",
    "forward_diff",
    "divergence",
    "load_image",
    "save_image",
    "relative_error",
    "infer_format",
]

RAWF64_MAGIC = b"SPKF"
PGM_MAX_MAXVAL = 65535


class DualField(NamedTuple):
    """Horizontal and vertical components of a vector field on the pixel grid."""

    p_h: np.ndarray
    p_v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "DualField":
        return cls(np.zeros(shape), np.zeros(shape))


class ImageFormatError(ValueError):
    """Base class for image decoding failures."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


def as_image(a, name: str = "image") -> np.ndarray:
    """Validate ``a`` as a finite, nonempty 2-D image and return it as float64."""
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


def forward_diff(z: np.ndarray) -> DualField:
    """Forward differences with a zero last column/row (Neumann boundary).

    Returns ``(dh, dv)`` where ``dh[r, c] = z[r, c+1] - z[r, c]`` and
    ``dv[r, c] = z[r+1, c] - z[r, c]``. Leading axes, if any, are treated as
    a batch of images.
    """
    z = np.asarray(z, dtype=np.float64)
    dh = np.zeros_like(z)
    dv = np.zeros_like(z)
    dh[..., :, :-1] = z[..., :, 1:] - z[..., :, :-1]
    dv[..., :-1, :] = z[..., 1:, :] - z[..., :-1, :]
    return DualField(dh, dv)


def divergence(p: DualField) -> np.ndarray:
    """Discrete divergence, the negative adjoint of :func:`forward_diff`.

    ``<forward_diff(z), p> == -<z, divergence(p)>`` for every ``z`` and ``p``.
    """
    ph = np.asarray(p[0], dtype=np.float64)
    pv = np.asarray(p[1], dtype=np.float64)
    if ph.shape != pv.shape or ph.ndim < 2:
        raise ValueError(f"dual components must share a 2-D shape, got {ph.shape} and {pv.shape}")
    out = np.zeros_like(ph)
    # backward differences; the last column of p_h and last row of p_v never enter
    out[..., :, :-1] += ph[..., :, :-1]
    out[..., :, 1:] -= ph[..., :, :-1]
    out[..., :-1, :] += pv[..., :-1, :]
    out[..., 1:, :] -= pv[..., :-1, :]
    return out


def relative_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Return ``||estimate - truth||_2 / ||truth||_2``."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth.ravel())
    if denom == 0.0:
        raise ValueError("relative error undefined for an all-zero reference image")
    return float(np.linalg.norm((estimate - truth).ravel()) / denom)


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

_FORMATS = {".pgm": "pgm", ".spkf": "rawf64"}


def infer_format(path, fmt: str | None = None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("pgm", "rawf64"):
            raise ValueError(f"unknown image format {fmt!r}")
        return fmt
    ext = os.path.splitext(os.fspath(path))[1].lower()
    try:
        return _FORMATS[ext]
    except KeyError:
        raise ValueError(f"cannot infer image format from extension {ext!r}") from None


# P5 header: magic, width, height, maxval separated by whitespace (comments
# allowed), then exactly one whitespace byte before the raster.
_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_pgm(buf: bytes) -> np.ndarray:
    if not buf.startswith(b"P5"):
        raise MalformedHeaderError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise MalformedHeaderError("PGM header ends prematurely")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise MalformedHeaderError(f"non-integer PGM header field {m.group(1)!r}") from None
        pos = m.end()
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeaderError("PGM header not terminated by whitespace")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"invalid PGM dimensions {width}x{height}")
    if maxval <= 0 or maxval > PGM_MAX_MAXVAL:
        raise UnsupportedMaxvalError(f"PGM maxval {maxval} outside 1..{PGM_MAX_MAXVAL}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    payload = buf[pos : pos + nbytes]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"PGM payload has {len(payload)} of {nbytes} bytes")
    return np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.float64)


def _write_pgm(img: np.ndarray, maxval: int) -> bytes:
    if maxval <= 0 or maxval > PGM_MAX_MAXVAL:
        raise UnsupportedMaxvalError(f"PGM maxval {maxval} outside 1..{PGM_MAX_MAXVAL}")
    q = np.clip(np.rint(img), 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = img.shape
    return b"P5 %d %d %d\n" % (w, h, maxval) + q.astype(dtype).tobytes()


def _read_rawf64(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != RAWF64_MAGIC:
        raise MalformedHeaderError("missing SPKF magic or short header")
    width, height = struct.unpack("<II", buf[4:12])
    if width == 0 or height == 0:
        raise MalformedHeaderError(f"invalid SPKF dimensions {width}x{height}")
    nbytes = 8 * width * height
    payload = buf[12 : 12 + nbytes]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"SPKF payload has {len(payload)} of {nbytes} bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(height, width).astype(np.float64)


def _write_rawf64(img: np.ndarray) -> bytes:
    h, w = img.shape
    return RAWF64_MAGIC + struct.pack("<II", w, h) + np.ascontiguousarray(img, dtype="<f8").tobytes()


def load_image(path, fmt: str | None = None) -> np.ndarray:
    """Read a PGM (P5) or SPKF raw float64 image as a float64 array."""
    fmt = infer_format(path, fmt)
    with open(path, "rb") as fh:
        buf = fh.read()
    img = _read_pgm(buf) if fmt == "pgm" else _read_rawf64(buf)
    return as_image(img, name=os.fspath(path))


def save_image(image: np.ndarray, path, fmt: str | None = None, maxval: int = 255) -> None:
    """Write ``image``; PGM output is rounded and clipped to ``0..maxval``."""
    fmt = infer_format(path, fmt)
    img = as_image(image)
    data = _write_pgm(img, maxval) if fmt == "pgm" else _write_rawf64(img)
    with open(path, "wb") as fh:
        fh.write(data)
