import io
from pathlib import Path

import numpy as np
import pytest

from asmnav.annotation import (
    COLOR_AGENT,
    COLOR_BACKGROUND,
    COLOR_TRAJECTORY,
    annotate,
    render_asm,
)
from asmnav.errors import FormatError
from asmnav.font5x7 import GLYPH_H, GLYPH_W, TRACKING, draw_text, text_extent
from asmnav.geometry import AgentPose, GridHits, centered_grid
from asmnav.pngio import decode_png, encode_png, read_png, write_png
from asmnav.semantic_map import init_map

GOLDEN = Path(__file__).parent / "golden"
CATS = ("chair", "plant", "bed")


def fresh_map(w=64, h=64):
    return init_map(centered_grid(AgentPose(0.0, 0.0, 0.0), w, h, 0.05), CATS)


# -- font ----------------------------------------------------------------


def test_text_extent_math():
    assert text_extent("") == (0, GLYPH_H)
    assert text_extent("A") == (GLYPH_W, GLYPH_H)
    assert text_extent("AB") == (2 * GLYPH_W + TRACKING, GLYPH_H)
    assert text_extent("CHAIR") == (5 * GLYPH_W + 4 * TRACKING, GLYPH_H)


def test_draw_text_stays_in_bounds():
    img = np.zeros((10, 10, 3), dtype=np.uint8)
    draw_text(img, -3, -3, "WW", (255, 255, 255), halo=(128, 128, 128))
    draw_text(img, 8, 8, "WW", (255, 255, 255))
    assert img.shape == (10, 10, 3)


def test_draw_text_case_insensitive_glyphs():
    a = np.zeros((12, 40, 3), dtype=np.uint8)
    b = np.zeros((12, 40, 3), dtype=np.uint8)
    draw_text(a, 1, 1, "chair", (255, 0, 0))
    draw_text(b, 1, 1, "CHAIR", (255, 0, 0))
    assert np.array_equal(a, b)


# -- png round-trips -----------------------------------------------------


def test_png_roundtrip_random():
    rng = np.random.default_rng(2)
    for shape in ((1, 1), (7, 3), (32, 32), (15, 64)):
        img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
        assert np.array_equal(decode_png(encode_png(img)), img)


def test_png_deterministic():
    img = np.random.default_rng(4).integers(0, 256, (20, 20, 3), dtype=np.uint8)
    assert encode_png(img) == encode_png(img.copy())


def test_png_rejects_garbage():
    with pytest.raises(FormatError):
        decode_png(b"not a png at all")
    blob = bytearray(encode_png(np.zeros((4, 4, 3), dtype=np.uint8)))
    blob[20] ^= 0xFF
    with pytest.raises(FormatError):
        decode_png(bytes(blob))


def test_png_file_io(tmp_path):
    img = np.random.default_rng(6).integers(0, 256, (9, 13, 3), dtype=np.uint8)
    p = tmp_path / "x.png"
    write_png(p, img)
    assert np.array_equal(read_png(p), img)


def test_png_interoperates_with_pillow(tmp_path):
    PIL = pytest.importorskip("PIL.Image")
    rng = np.random.default_rng(8)
    img = rng.integers(0, 256, (24, 31, 3), dtype=np.uint8)
    # Our bytes readable by Pillow.
    via_pil = np.asarray(PIL.open(io.BytesIO(encode_png(img))).convert("RGB"))
    assert np.array_equal(via_pil, img)
    # Pillow bytes readable by us (exercises non-zero scanline filters).
    buf = io.BytesIO()
    PIL.fromarray(img).save(buf, format="PNG")
    assert np.array_equal(decode_png(buf.getvalue()), img)


# -- rendering -----------------------------------------------------------


def test_fresh_map_render_contents():
    m = fresh_map()
    ann = annotate(m)
    assert ann.image.shape == (128, 128, 3)
    assert ann.placements == []
    assert ann.source_step == 0
    colors = {tuple(c) for c in ann.image.reshape(-1, 3)}
    assert COLOR_BACKGROUND in colors
    assert COLOR_AGENT in colors
    # Seed trajectory cell is covered by the agent disk; no stray colors.
    assert colors <= {COLOR_BACKGROUND, COLOR_AGENT, (255, 255, 255)}


def test_render_deterministic():
    m = fresh_map()
    m.update(GridHits(obstacle_cells={(10, 12)}, explored_cells={(10, 12), (11, 12)},
                      category_cells={1: {(40, 40), (40, 41), (41, 40), (41, 41)}}),
             AgentPose(0.3, 0.1, 0.6))
    a = annotate(m).to_png()
    b = annotate(m).to_png()
    assert a == b


def test_trajectory_drawn_over_explored():
    m = fresh_map()
    cells = {(32 + i, 32) for i in range(6)}
    m.update(GridHits(explored_cells=cells), AgentPose(5 * 0.05, 0.0, 0.0))
    img = annotate(m).image
    # Cell (33, 32) lies on the trajectory; raster row = (64-1-32)*2, col = 33*2.
    assert tuple(img[31 * 2, 33 * 2]) == COLOR_TRAJECTORY


def test_image_dims_scale_with_render_scale():
    m = fresh_map(40, 30)
    assert annotate(m, render_scale=1).image.shape == (30, 40, 3)
    assert annotate(m, render_scale=3).image.shape == (90, 120, 3)


def test_golden_asm_image():
    m = fresh_map(96, 96)
    m.channels[4, 20:34, 60:74] = True       # chair block, NE of center
    m.channels[6, 70:80, 30:38] = True       # bed block, SE
    m.channels[1, 10:86, 10:86] = True       # explored floor
    m.channels[0, 10:86, 85] = True          # north wall
    m.channels[0, 10:86, 10] = True          # south wall
    poses = [AgentPose(0.05 * i, 0.02 * i, 0.2) for i in range(1, 12)]
    for p in poses:
        m.update(GridHits(), p)
    got = annotate(m).to_png()
    golden = GOLDEN / "asm_fixture.png"
    assert got == golden.read_bytes()
