"""Region extraction, label placement, and top-down map rendering.

Coordinates here are raster cells: row 0 is the top image row, which is
the map's highest y cell, and columns equal map x cells.  A map channel
indexed ``[ix, iy]`` maps to raster cell ``(H-1-iy, ix)``.

Rendering draws, in order: unexplored background, explored free space,
obstacles, object cells in palette colors, trajectory, agent disk with a
heading tick, then visible labels (black on a white halo).  Region
filtering by minimum area gates only the labels; object cells are always
painted so the image shows everything the map knows.  Output bytes are a
pure function of the map contents.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .font5x7 import draw_text, text_extent
from .pngio import encode_png
from .semantic_map import (
    CH_AGENT,
    CH_EXPLORED,
    CH_OBJECT_BASE,
    CH_OBSTACLE,
    CH_TRAJECTORY,
    SemanticMap,
    bresenham,
)

DEFAULT_TAU = 10
DEFAULT_RENDER_SCALE = 2

COLOR_BACKGROUND = (40, 40, 40)
COLOR_EXPLORED = (200, 200, 200)
COLOR_OBSTACLE = (120, 120, 120)
COLOR_TRAJECTORY = (230, 30, 30)
COLOR_AGENT = (40, 110, 255)
COLOR_HEADING = (255, 255, 255)
COLOR_TEXT = (0, 0, 0)
COLOR_HALO = (255, 255, 255)

# Mutually distinguishable region colors; cycled if there are more categories.
_BASE_PALETTE = (
    (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60),
    (250, 190, 212), (0, 128, 128), (220, 190, 255), (170, 110, 40),
    (255, 250, 200), (128, 0, 0), (170, 255, 195), (128, 128, 0),
)

_LABEL_PAD = 1       # halo margin included in the rendered bbox
_NUDGE_STEP = 3      # pixels per spiral ring
_NUDGE_RINGS = 8     # bounded search: up to 24 px displacement


def palette_for(num_categories: int) -> dict:
    return {i: _BASE_PALETTE[i % len(_BASE_PALETTE)] for i in range(num_categories)}


@dataclass(frozen=True)
class Region:
    """One connected component of an object channel, in raster cells."""

    category: int
    cells: frozenset
    area: int
    centroid: tuple  # (row, col), arithmetic mean of member cells
    bbox: tuple      # (min_row, min_col, max_row, max_col), inclusive


@dataclass(frozen=True)
class LabelPlacement:
    text: str
    anchor: tuple          # (row, col) cell coordinates of the region centroid
    rendered_bbox: tuple   # (x0, y0, x1, y1) pixels, half-open, halo included
    visible: bool
    category: int


@dataclass
class AnnotatedMap:
    image: np.ndarray     # (H', W', 3) uint8
    placements: list
    source_step: int

    def to_png(self) -> bytes:
        return encode_png(self.image)

    def placements_json(self) -> list:
        return [
            {"text": p.text, "anchor": [p.anchor[0], p.anchor[1]],
             "bbox": list(p.rendered_bbox), "visible": p.visible,
             "category": p.category}
            for p in self.placements
        ]


def _raster(channel: np.ndarray) -> np.ndarray:
    """Map channel [ix, iy] -> raster grid [row, col] with north up."""
    return channel.T[::-1, :]


def extract_regions(smap: SemanticMap, category: int, tau: int = DEFAULT_TAU) -> list:
    """Connected components (8-connectivity) of one object channel.

    Returns components with at least ``tau`` cells, ordered by their
    bounding box top row, then leftmost column.
    """
    if not 0 <= category < smap.num_categories:
        raise InputError(
            f"category {category} outside table of {smap.num_categories}")
    if tau < 1:
        raise InputError(f"tau must be >= 1, got {tau}")

    grid = _raster(smap.channels[CH_OBJECT_BASE + category])
    h, w = grid.shape
    seen = np.zeros_like(grid)
    regions = []
    for r0 in range(h):
        for c0 in range(w):
            if not grid[r0, c0] or seen[r0, c0]:
                continue
            seen[r0, c0] = True
            queue = deque([(r0, c0)])
            cells = []
            while queue:
                r, c = queue.popleft()
                cells.append((r, c))
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        nr, nc = r + dr, c + dc
                        if (0 <= nr < h and 0 <= nc < w
                                and grid[nr, nc] and not seen[nr, nc]):
                            seen[nr, nc] = True
                            queue.append((nr, nc))
            if len(cells) < tau:
                continue
            rows = [r for r, _ in cells]
            cols = [c for _, c in cells]
            regions.append(Region(
                category=category,
                cells=frozenset(cells),
                area=len(cells),
                centroid=(sum(rows) / len(cells), sum(cols) / len(cells)),
                bbox=(min(rows), min(cols), max(rows), max(cols)),
            ))
    regions.sort(key=lambda g: (g.bbox[0], g.bbox[1]))
    return regions


def extract_all_regions(smap: SemanticMap, tau: int = DEFAULT_TAU) -> list:
    out = []
    for cat in range(smap.num_categories):
        out.extend(extract_regions(smap, cat, tau))
    return out


def _boxes_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _ring_offsets(ring: int):
    if ring == 0:
        yield (0, 0)
        return
    offs = [(dx, dy)
            for dy in range(-ring, ring + 1)
            for dx in range(-ring, ring + 1)
            if max(abs(dx), abs(dy)) == ring]
    offs.sort(key=lambda o: (o[1], o[0]))
    yield from offs


def place_labels(regions: list, names, render_scale: int = DEFAULT_RENDER_SCALE,
                 font_metrics=None, image_size=None) -> list:
    """Greedy label layout: big regions claim their centroid first.

    Colliding labels are displaced along a bounded spiral; labels that
    still collide are kept in the result but marked invisible.
    ``image_size`` is (width, height) in pixels; when given, candidate
    boxes are clamped inside it.
    """
    if render_scale < 1:
        raise InputError(f"render_scale must be >= 1, got {render_scale}")
    metrics = font_metrics or text_extent
    order = sorted(regions, key=lambda g: (-g.area, g.bbox[0], g.bbox[1], g.category))

    taken = []
    placed = {}
    for region in order:
        text = names.name_of(region.category).upper()
        tw, th = metrics(text)
        bw, bh = tw + 2 * _LABEL_PAD, th + 2 * _LABEL_PAD
        ax = (region.centroid[1] + 0.5) * render_scale
        ay = (region.centroid[0] + 0.5) * render_scale
        base_x = int(round(ax - bw / 2))
        base_y = int(round(ay - bh / 2))

        chosen = None
        fits_at_all = image_size is None or (bw <= image_size[0] and bh <= image_size[1])
        if fits_at_all:
            for ring in range(_NUDGE_RINGS + 1):
                for dx, dy in _ring_offsets(ring):
                    x0 = base_x + dx * _NUDGE_STEP
                    y0 = base_y + dy * _NUDGE_STEP
                    if image_size is not None:
                        x0 = min(max(x0, 0), image_size[0] - bw)
                        y0 = min(max(y0, 0), image_size[1] - bh)
                    box = (x0, y0, x0 + bw, y0 + bh)
                    if not any(_boxes_overlap(box, t) for t in taken):
                        chosen = box
                        break
                if chosen:
                    break

        if chosen is None:
            box = (base_x, base_y, base_x + bw, base_y + bh)
            placed[id(region)] = LabelPlacement(text, region.centroid, box, False,
                                                region.category)
        else:
            taken.append(chosen)
            placed[id(region)] = LabelPlacement(text, region.centroid, chosen, True,
                                                region.category)
    return [placed[id(r)] for r in regions]


def render_asm(smap: SemanticMap, placements: list, palette: dict = None,
               render_scale: int = DEFAULT_RENDER_SCALE) -> AnnotatedMap:
    """Rasterize the map plus labels; see module docstring for layer order."""
    if palette is None:
        palette = palette_for(smap.num_categories)
    s = render_scale
    w_cells, h_cells = smap.spec.width_cells, smap.spec.height_cells
    img = np.empty((h_cells * s, w_cells * s, 3), dtype=np.uint8)
    img[:] = COLOR_BACKGROUND

    def paint(channel, color):
        mask = np.repeat(np.repeat(_raster(channel), s, axis=0), s, axis=1)
        img[mask] = color

    paint(smap.channels[CH_EXPLORED], COLOR_EXPLORED)
    paint(smap.channels[CH_OBSTACLE], COLOR_OBSTACLE)
    for cat in range(smap.num_categories):
        paint(smap.channels[CH_OBJECT_BASE + cat], palette[cat])
    paint(smap.channels[CH_TRAJECTORY], COLOR_TRAJECTORY)
    paint(smap.channels[CH_AGENT], COLOR_AGENT)

    # Heading tick from the agent cell center, pointing along the yaw.
    ix, iy = smap.spec.cell_of(smap.last_pose.x, smap.last_pose.y)
    cx = ix * s + s // 2
    cy = (h_cells - 1 - iy) * s + s // 2
    length = max(3, int(round(smap.agent_radius / smap.spec.resolution * s))) + 2
    ex = cx + int(round(np.cos(smap.last_pose.yaw) * length))
    ey = cy - int(round(np.sin(smap.last_pose.yaw) * length))
    for px, py in bresenham(cx, cy, ex, ey):
        if 0 <= py < img.shape[0] and 0 <= px < img.shape[1]:
            img[py, px] = COLOR_HEADING

    for p in placements:
        if p.visible:
            x0, y0, _, _ = p.rendered_bbox
            draw_text(img, x0 + _LABEL_PAD, y0 + _LABEL_PAD, p.text,
                      COLOR_TEXT, halo=COLOR_HALO)

    return AnnotatedMap(image=img, placements=list(placements),
                        source_step=smap.step_count)


def annotate(smap: SemanticMap, tau: int = DEFAULT_TAU,
             render_scale: int = DEFAULT_RENDER_SCALE,
             palette: dict = None) -> AnnotatedMap:
    """Full pipeline: regions -> labels -> rendered image."""
    regions = extract_all_regions(smap, tau)
    placements = place_labels(
        regions, smap.categories, render_scale,
        image_size=(smap.spec.width_cells * render_scale,
                    smap.spec.height_cells * render_scale))
    return render_asm(smap, placements, palette, render_scale)
