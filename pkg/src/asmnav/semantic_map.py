"""Multi-channel top-down semantic map.

The map is a binary occupancy tensor of shape (C, W, H) with
C = number of object categories + 4.  Channel layout:

    0  physical obstacles
    1  explored cells
    2  agent current position (a filled disk of agent_radius)
    3  historical trajectory (monotonically growing)
    4+ one channel per object category

The map is allocated once per episode with the agent at the center cell
and never grows or recenters; its serialized size is therefore constant
for the whole episode, which `state_bytes` makes measurable.

Snapshot format (little-endian, bit-exact across platforms):

    bytes 0..15   magic b"ASMNAV-MAP\\0\\0" + u32 version (currently 1)
    fixed fields  u32 C, u32 W, u32 H, f64 resolution,
                  f64 origin_x, f64 origin_y, u64 step_count,
                  f64 last_x, f64 last_y, f64 last_yaw, f64 agent_radius
    channel data  C blocks of ceil(W*H/8) bytes; each channel flattened
                  x-major (bit index = ix*H + iy), packed MSB-first
    trailer       u32 length + UTF-8 JSON {"category_names": [...],
                  "step_count": n}, space-padded to a fixed width so the
                  total size never varies with the step counter
    checksum      u32 CRC32 over everything above

Single-writer: concurrent updates must be serialized by the caller.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EpisodeAbort, FormatError, InputError
from .geometry import AgentPose, GridHits, GridSpec

CH_OBSTACLE = 0
CH_EXPLORED = 1
CH_AGENT = 2
CH_TRAJECTORY = 3
CH_OBJECT_BASE = 4

DEFAULT_AGENT_RADIUS = 0.18

# A compact indoor vocabulary; callers may supply their own table.
DEFAULT_CATEGORIES = (
    "chair", "table", "bed", "plant", "sofa", "wardrobe", "door", "window",
    "shelf", "lamp", "sink", "toilet", "tv", "fridge", "counter", "cabinet",
)

_MAGIC = b"ASMNAV-MAP\x00\x00"
_VERSION = 1
_HEADER = struct.Struct("<12sI")
_FIELDS = struct.Struct("<III d d d Q d d d d")


@dataclass(frozen=True)
class CategoryTable:
    """Dense id -> name mapping for the object categories.

    Table ids run 0..C_n-1 and correspond to map channels 4..4+C_n-1.
    Point-cloud / mask category values are shifted by one (0 means
    unlabeled), so mask value c maps to table id c-1.
    """

    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) == 0:
            raise ConfigError("category table must contain at least one category")
        if any(not n for n in names):
            raise ConfigError("category names must be non-empty")
        if len(set(names)) != len(names):
            raise ConfigError("category names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def name_of(self, table_id: int) -> str:
        return self.names[table_id]


def bresenham(x0: int, y0: int, x1: int, y1: int) -> list:
    """All integer cells on the segment from (x0, y0) to (x1, y1), inclusive."""
    cells = []
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            return cells
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def _disk_offsets(radius_cells: float) -> list:
    r = max(0.0, radius_cells)
    n = int(math.floor(r))
    offs = []
    for dx in range(-n, n + 1):
        for dy in range(-n, n + 1):
            if dx * dx + dy * dy <= r * r:
                offs.append((dx, dy))
    return offs


class SemanticMap:
    """Per-episode navigation memory; see module docstring for layout."""

    def __init__(self, spec: GridSpec, categories: CategoryTable,
                 agent_radius: float = DEFAULT_AGENT_RADIUS):
        if agent_radius <= 0:
            raise ConfigError(f"agent_radius must be positive, got {agent_radius}")
        self.spec = spec
        self.categories = categories
        self.agent_radius = float(agent_radius)
        self.channels = np.zeros(
            (CH_OBJECT_BASE + len(categories), spec.width_cells, spec.height_cells),
            dtype=bool)
        self.step_count = 0
        cx, cy = spec.width_cells // 2, spec.height_cells // 2
        self._last_cell = (cx, cy)
        self.last_pose = AgentPose(*spec.cell_center(cx, cy), 0.0)
        self._mark_agent(cx, cy)
        self.channels[CH_TRAJECTORY, cx, cy] = True
        self._trailer_pad = self._trailer_width()

    # -- construction ----------------------------------------------------

    @classmethod
    def create(cls, spec: GridSpec, categories=DEFAULT_CATEGORIES,
               agent_radius: float = DEFAULT_AGENT_RADIUS) -> "SemanticMap":
        if not isinstance(categories, CategoryTable):
            categories = CategoryTable(tuple(categories))
        return cls(spec, categories, agent_radius)

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    # -- update ----------------------------------------------------------

    def _radius_cells(self) -> float:
        return self.agent_radius / self.spec.resolution

    def _mark_agent(self, cx: int, cy: int):
        ch = self.channels[CH_AGENT]
        ch[:] = False
        w, h = self.spec.width_cells, self.spec.height_cells
        for dx, dy in _disk_offsets(self._radius_cells()):
            x, y = cx + dx, cy + dy
            if 0 <= x < w and 0 <= y < h:
                ch[x, y] = True

    def update(self, hits: GridHits, pose: AgentPose):
        """Fold one timestep into the map; allocation footprint is unchanged."""
        cell = self.spec.cell_of(pose.x, pose.y)
        if not self.spec.in_bounds(*cell):
            raise EpisodeAbort(
                f"pose ({pose.x:.3f}, {pose.y:.3f}) maps to cell {cell}, "
                f"outside the fixed {self.spec.width_cells}x{self.spec.height_cells} map")

        for ix, iy in hits.obstacle_cells:
            self.channels[CH_OBSTACLE, ix, iy] = True
        for ix, iy in hits.explored_cells:
            self.channels[CH_EXPLORED, ix, iy] = True
        for cat, cells in hits.category_cells.items():
            ch = CH_OBJECT_BASE + (cat - 1)
            if not (CH_OBJECT_BASE <= ch < self.num_channels):
                raise InputError(
                    f"category id {cat} outside table of {self.num_categories} categories")
            for ix, iy in cells:
                self.channels[ch, ix, iy] = True

        for ix, iy in bresenham(*self._last_cell, *cell):
            self.channels[CH_TRAJECTORY, ix, iy] = True
        self._mark_agent(*cell)
        self._last_cell = cell
        self.last_pose = pose
        self.step_count += 1

    # -- serialization ---------------------------------------------------

    def _trailer_json(self, step_count: int) -> bytes:
        doc = {"category_names": list(self.categories.names), "step_count": step_count}
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")

    def _trailer_width(self) -> int:
        # Pad to the width needed for the largest possible counter so the
        # snapshot size never changes as steps accumulate (u64 <= 20 digits).
        base = len(self._trailer_json(0)) + 20
        return ((base + 15) // 16) * 16

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(_MAGIC, _VERSION)]
        parts.append(_FIELDS.pack(
            self.num_channels, self.spec.width_cells, self.spec.height_cells,
            self.spec.resolution, self.spec.origin_x, self.spec.origin_y,
            self.step_count, self.last_pose.x, self.last_pose.y,
            self.last_pose.yaw, self.agent_radius))
        for c in range(self.num_channels):
            parts.append(np.packbits(self.channels[c].reshape(-1)).tobytes())
        trailer = self._trailer_json(self.step_count).ljust(self._trailer_pad, b" ")
        parts.append(struct.pack("<I", len(trailer)))
        parts.append(trailer)
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    def state_bytes(self) -> int:
        """Exact serialized size of the persistent navigation state."""
        return len(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SemanticMap":
        if len(blob) < _HEADER.size + _FIELDS.size + 8:
            raise FormatError("snapshot truncated")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) != crc:
            raise FormatError("snapshot checksum mismatch")
        magic, version = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC:
            raise FormatError("not a map snapshot (bad magic)")
        if version != _VERSION:
            raise FormatError(f"unsupported snapshot version {version}")
        off = _HEADER.size
        (c, w, h, res, ox, oy, steps, lx, ly, lyaw, radius) = _FIELDS.unpack_from(blob, off)
        off += _FIELDS.size

        per_channel = (w * h + 7) // 8
        data_end = off + c * per_channel
        if data_end + 4 > len(body):
            raise FormatError("snapshot truncated inside channel data")
        raw = np.frombuffer(blob, dtype=np.uint8, count=c * per_channel, offset=off)
        bits = np.unpackbits(raw.reshape(c, per_channel), axis=1)[:, : w * h]
        channels = bits.reshape(c, w, h).astype(bool)

        (tlen,) = struct.unpack_from("<I", blob, data_end)
        trailer_start = data_end + 4
        if trailer_start + tlen > len(body):
            raise FormatError("snapshot truncated inside trailer")
        try:
            doc = json.loads(blob[trailer_start: trailer_start + tlen].decode("utf-8"))
            names = tuple(doc["category_names"])
        except (ValueError, KeyError) as e:
            raise FormatError(f"bad snapshot trailer: {e}") from None
        if len(names) + CH_OBJECT_BASE != c:
            raise FormatError("trailer category count disagrees with channel count")

        m = cls.__new__(cls)
        m.spec = GridSpec(w, h, res, ox, oy)
        m.categories = CategoryTable(names)
        m.agent_radius = radius
        m.channels = channels
        m.step_count = int(steps)
        m.last_pose = AgentPose(lx, ly, lyaw)
        m._last_cell = m.spec.cell_of(lx, ly)
        m._trailer_pad = m._trailer_width()
        return m

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SemanticMap":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def init_map(spec: GridSpec, categories=DEFAULT_CATEGORIES,
             agent_radius: float = DEFAULT_AGENT_RADIUS) -> SemanticMap:
    """Fresh per-episode map with the agent marked at the center cell."""
    return SemanticMap.create(spec, categories, agent_radius)
