"""Embedded 5x7 bitmap font for map labels.

Rendering text through the OS font stack makes output depend on installed
fonts and rasterizer versions; byte-exact image tests need neither.  Each
glyph is 7 rows of 5 bits, MSB = leftmost column.  Lowercase input is
drawn with the uppercase glyph; characters without a glyph fall back to a
hollow box.
"""

from __future__ import annotations

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
TRACKING = 1  # blank columns between glyphs

_GLYPHS = {
    "A": (0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
    " ": (0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00),
    "-": (0x00, 0x00, 0x00, 0x0E, 0x00, 0x00, 0x00),
    "_": (0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F),
    ".": (0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C),
    ":": (0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00),
    "/": (0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10),
}

_FALLBACK = (0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F)


def glyph(ch: str) -> tuple:
    return _GLYPHS.get(ch.upper(), _FALLBACK)


def text_extent(text: str) -> tuple[int, int]:
    """(width, height) in pixels of the rendered string."""
    n = len(text)
    if n == 0:
        return 0, GLYPH_H
    return n * GLYPH_W + (n - 1) * TRACKING, GLYPH_H


def draw_text(img: np.ndarray, left: int, top: int, text: str, color,
              halo=None):
    """Stamp text onto an (H, W, 3) uint8 image, top-left at (left, top).

    Pixels falling outside the image are dropped.  With a halo color the
    glyph pixels are first stamped at the 8 one-pixel offsets so the text
    stays readable on any background.
    """
    h, w = img.shape[:2]

    def stamp(ox: int, oy: int, rgb):
        x = left + ox
        for ch in text:
            rows = glyph(ch)
            for ry in range(GLYPH_H):
                py = top + oy + ry
                if not 0 <= py < h:
                    continue
                bits = rows[ry]
                for rx in range(GLYPH_W):
                    if bits & (0x10 >> rx):
                        px = x + rx
                        if 0 <= px < w:
                            img[py, px] = rgb
            x += GLYPH_W + TRACKING

    if halo is not None:
        for oy in (-1, 0, 1):
            for ox in (-1, 0, 1):
                if ox or oy:
                    stamp(ox, oy, halo)
    stamp(0, 0, color)
