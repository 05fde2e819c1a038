"""Binary PGM (P5) image reading and writing.

Only 8-bit grayscale is supported; that is what the extraction pipeline
consumes. Comments and arbitrary whitespace in the header are handled.
"""

from __future__ import annotations

from .errors import BadMagicError, FormatError, TruncatedError
from .ridgeflow import GrayImage

import numpy as np


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next whitespace-delimited header token, skipping comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise TruncatedError("PGM header ended early")
    return data[start:pos], pos


def parse_pgm(data: bytes) -> GrayImage:
    """Decode a binary PGM payload into a GrayImage."""
    if data[:2] != b"P5":
        raise BadMagicError("not a binary PGM (P5) payload")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric PGM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"unsupported PGM maxval {maxval}; expected 1..255")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise TruncatedError("missing separator before PGM raster")
    pos += 1
    need = width * height
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise TruncatedError(f"PGM raster holds {len(raster)} of {need} bytes")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels=pixels.copy())


def read_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def write_pgm(path, image: GrayImage) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.pixels.tobytes())
