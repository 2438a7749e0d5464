"""Atomic file writes and the PGM (P5) mask format.

Masks travel as binary 8-bit PGM: foreground is any value >= 128.  An
optional second PGM of the same shape carries the intensity plane.  PGM
comment lines (starting with '#') are used to embed provenance.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import FileFormatError

__all__ = ["atomic_write_text", "atomic_write_bytes", "write_pgm", "read_pgm"]


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(path, image: np.ndarray, comment: str | None = None) -> None:
    """Write a (height x width) uint8 array as binary PGM (P5)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise FileFormatError(f"{path}: PGM image must be 2-D, got shape {image.shape}")
    image = image.astype(np.uint8)
    height, width = image.shape
    header = b"P5\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("ascii", "replace") + b"\n"
    header += f"{width} {height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file into a (height x width) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FileFormatError(f"{path}: not a binary PGM (missing P5 magic)")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FileFormatError(f"{path}: malformed PGM header near byte {start}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise FileFormatError(f"{path}: PGM maxval must be 255, got {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = data[pos : pos + width * height]
    if len(pixels) != width * height:
        raise FileFormatError(
            f"{path}: truncated PGM payload ({len(pixels)} of {width * height} bytes)"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()
