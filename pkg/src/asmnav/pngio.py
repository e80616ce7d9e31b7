"""Minimal deterministic PNG reader/writer.

The encoder always emits 8-bit RGB, filter type 0 on every scanline, and
a fixed zlib level, so identical pixel arrays produce identical bytes.
Library encoders (and their filter heuristics) can change output between
versions, which would silently invalidate golden-image tests.

The decoder handles what this project and common tools produce: 8-bit
RGB/RGBA/grayscale, all five scanline filters, no interlacing.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import FormatError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6


def _chunk(kind: bytes, data: bytes) -> bytes:
    return (struct.pack(">I", len(data)) + kind + data
            + struct.pack(">I", zlib.crc32(kind + data)))


def encode_png(img: np.ndarray) -> bytes:
    """Encode an (H, W, 3) uint8 array as PNG bytes."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError(f"expected (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = np.empty((h, 1 + w * 3), dtype=np.uint8)
    raw[:, 0] = 0  # filter: None
    raw[:, 1:] = img.reshape(h, w * 3)
    idat = zlib.compress(raw.tobytes(), _ZLIB_LEVEL)
    return (_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat)
            + _chunk(b"IEND", b""))


def write_png(path, img: np.ndarray):
    with open(path, "wb") as f:
        f.write(encode_png(img))


def _unfilter(raw: np.ndarray, h: int, w: int, nch: int) -> np.ndarray:
    stride = w * nch
    rows = raw.reshape(h, 1 + stride)
    out = np.zeros((h, stride), dtype=np.uint8)
    for y in range(h):
        ftype = rows[y, 0]
        line = rows[y, 1:].astype(np.int32)
        prev = out[y - 1].astype(np.int32) if y > 0 else np.zeros(stride, np.int32)
        if ftype == 0:
            out[y] = line
        elif ftype == 2:  # Up
            out[y] = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):  # Sub / Average / Paeth need a running scan
            cur = np.zeros(stride, np.int32)
            for i in range(stride):
                a = cur[i - nch] if i >= nch else 0
                b = prev[i]
                if ftype == 1:
                    cur[i] = (line[i] + a) & 0xFF
                elif ftype == 3:
                    cur[i] = (line[i] + (a + b) // 2) & 0xFF
                else:
                    c = prev[i - nch] if i >= nch else 0
                    p = a + b - c
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                    if pa <= pb and pa <= pc:
                        pr = a
                    elif pb <= pc:
                        pr = b
                    else:
                        pr = c
                    cur[i] = (line[i] + pr) & 0xFF
            out[y] = cur
        else:
            raise FormatError(f"unsupported PNG filter type {ftype}")
    return out


def decode_png(blob: bytes) -> np.ndarray:
    """Decode PNG bytes to an (H, W, 3) uint8 array (alpha dropped)."""
    if blob[:8] != _SIGNATURE:
        raise FormatError("not a PNG file")
    pos = 8
    ihdr = None
    idat = b""
    while pos + 8 <= len(blob):
        (length,) = struct.unpack_from(">I", blob, pos)
        kind = blob[pos + 4: pos + 8]
        data = blob[pos + 8: pos + 8 + length]
        if len(data) != length:
            raise FormatError("PNG chunk truncated")
        (crc,) = struct.unpack_from(">I", blob, pos + 8 + length)
        if zlib.crc32(kind + data) != crc:
            raise FormatError(f"PNG chunk {kind!r} checksum mismatch")
        if kind == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", data)
        elif kind == b"IDAT":
            idat += data
        elif kind == b"IEND":
            break
        pos += 12 + length
    if ihdr is None:
        raise FormatError("PNG missing IHDR")
    w, h, depth, ctype, comp, filt, interlace = ihdr
    if depth != 8 or comp != 0 or filt != 0 or interlace != 0:
        raise FormatError(f"unsupported PNG variant (depth={depth}, interlace={interlace})")
    nch = {0: 1, 2: 3, 4: 2, 6: 4}.get(ctype)
    if nch is None:
        raise FormatError(f"unsupported PNG color type {ctype}")
    raw = np.frombuffer(zlib.decompress(idat), dtype=np.uint8)
    if raw.size != h * (1 + w * nch):
        raise FormatError("PNG pixel data has wrong length")
    px = _unfilter(raw, h, w, nch).reshape(h, w, nch)
    if ctype == 2:
        return px
    if ctype == 6:
        return px[:, :, :3].copy()
    gray = px[:, :, 0]
    return np.stack([gray, gray, gray], axis=2)


def read_png(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_png(f.read())
