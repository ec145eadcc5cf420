"""Minimal PGM (P2/P5) codec.

Only single-channel portable graymaps are accepted.  Header parse errors carry
the file path and the byte offset at which parsing failed so that broken
dataset files can be located quickly.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Union

import numpy as np

PathLike = Union[str, os.PathLike]

_WHITESPACE = b" \t\n\r\v\f"
_MULTICHANNEL = {b"P3": "PPM (RGB)", b"P6": "PPM (RGB)", b"P7": "PAM"}


class ImageFormatError(ValueError):
    """Raised when an image file cannot be decoded."""

    def __init__(self, path: PathLike, offset: Optional[int], message: str):
        self.path = str(path)
        self.offset = offset
        self.message = message
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{self.path}{where}: {message}")


class _Header:
    def __init__(self, data: bytes, path: PathLike):
        self.data = data
        self.path = path
        self.pos = 0

    def _skip(self) -> None:
        data = self.data
        while self.pos < len(data):
            c = data[self.pos : self.pos + 1]
            if c in _WHITESPACE and c:
                self.pos += 1
            elif c == b"#":
                nl = data.find(b"\n", self.pos)
                self.pos = len(data) if nl < 0 else nl + 1
            else:
                break

    def token(self, what: str) -> int:
        self._skip()
        start = self.pos
        data = self.data
        while self.pos < len(data) and data[self.pos : self.pos + 1] not in _WHITESPACE + b"#":
            self.pos += 1
        tok = data[start : self.pos]
        if not tok:
            raise ImageFormatError(self.path, start, f"unexpected end of header reading {what}")
        if not tok.isdigit():
            raise ImageFormatError(self.path, start, f"invalid {what} {tok[:16]!r}")
        return int(tok)


def read_pgm(path: PathLike) -> tuple[np.ndarray, int]:
    """Read a PGM file and return ``(raw integer raster, maxval)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(path, None, f"unreadable file ({exc.strerror or exc})") from exc

    magic = data[:2]
    if magic in _MULTICHANNEL:
        raise ImageFormatError(path, 0, f"multi-channel {_MULTICHANNEL[magic]} input is not supported")
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(path, 0, f"not a PGM file (magic {magic!r})")

    hdr = _Header(data, path)
    hdr.pos = 2
    width = hdr.token("width")
    height = hdr.token("height")
    maxval_at = hdr.pos
    maxval = hdr.token("maxval")
    if width < 1 or height < 1:
        raise ImageFormatError(path, 2, f"invalid dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ImageFormatError(path, maxval_at, f"maxval {maxval} outside 1..65535")

    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if hdr.pos >= len(data) or data[hdr.pos : hdr.pos + 1] not in _WHITESPACE:
            raise ImageFormatError(path, hdr.pos, "missing whitespace after maxval")
        start = hdr.pos + 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        if len(data) - start < need:
            raise ImageFormatError(
                path, len(data), f"truncated raster: expected {need} bytes, found {len(data) - start}"
            )
        raw = np.frombuffer(data, dtype=dtype, count=n, offset=start)
    else:
        values = []
        for _ in range(n):
            values.append(hdr.token("pixel value"))
        raw = np.asarray(values, dtype=np.int64)
    raw = raw.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)
    if raw.max(initial=0) > maxval:
        raise ImageFormatError(path, None, f"pixel value exceeds maxval {maxval}")
    return raw, maxval


def write_pgm(
    path: PathLike,
    raw: np.ndarray,
    maxval: Optional[int] = None,
    comment: Optional[str] = None,
    ascii: bool = False,
) -> None:
    """Write an integer raster as PGM (binary P5 unless ``ascii``)."""
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-D raster, got shape {raw.shape}")
    if maxval is None:
        maxval = 65535 if raw.dtype == np.uint16 else 255
    if raw.size and (raw.min() < 0 or raw.max() > maxval):
        raise ValueError("raster values outside 0..maxval")
    height, width = raw.shape
    header = b"P2\n" if ascii else b"P5\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("utf-8") + b"\n"
    header += f"{width} {height}\n{maxval}\n".encode("ascii")
    if ascii:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in raw).encode("ascii") + b"\n"
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = raw.astype(dtype).tobytes()
    Path(path).write_bytes(header + body)
