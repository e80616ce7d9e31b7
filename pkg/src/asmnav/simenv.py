"""Desk-scale 2.5D indoor simulator: world grid, kinematics, depth/semantic camera.

World file format (UTF-8 text)::

    # comments and blank lines allowed before the grid
    name: apartment_small
    resolution: 0.05            # meters per cell
    wall_height: 2.5            # optional, default 2.5
    category: a chair 1.0       # grid char, category name, height in meters
    grid:
    ########
    #S..a..#
    ########

Grid legend: ``#`` wall, ``.`` free, ``S`` spawn point (free cell, yaw 0),
letters as declared by ``category:`` lines.  The first text row is the
world's north edge; world x runs along columns, y up the rows, with the
origin at the outer corner of cell (0, 0).  Boundary cells must be walls.

Geometry is 2.5D: every non-free cell is a vertical prism from the floor
to its height.  The camera is a level pinhole at ``pose.camera_height``;
depth values are forward (optical-axis) distances, matching what the
back-projection in :mod:`asmnav.geometry` expects, and saturate at the
camera's ``depth_max`` with semantic id 0 (background).

Headings are quantized to 1/192 degree.  Turns move an exact integer
number of quanta, so TURN_LEFT then TURN_RIGHT restores the heading
bit-for-bit and 24 turns of 15 degrees close a full circle exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .actions import Action
from .errors import ConfigError, InputError, ProtocolError
from .geometry import AgentPose, CameraIntrinsics

FREE, WALL, OBJECT = 0, 1, 2

DEFAULT_WALL_HEIGHT = 2.5

_UNITS_PER_DEG = 192
_CIRCLE = 360 * _UNITS_PER_DEG
_HALF = _CIRCLE // 2
_QUANT = 2.0 * math.pi / _CIRCLE


def _yaw_of_units(k: int) -> float:
    k %= _CIRCLE
    if k >= _HALF:
        k -= _CIRCLE
    if k == -_HALF:
        return -math.pi
    return k * _QUANT


def _units_of_yaw(yaw: float) -> int:
    return round(yaw / _QUANT)


@dataclass(frozen=True)
class SimConfig:
    """Kinematic parameters shared by the simulator and planners."""

    forward_step: float = 0.25
    turn_angle_deg: float = 15.0
    agent_radius: float = 0.18

    def __post_init__(self):
        if self.forward_step <= 0:
            raise ConfigError(f"forward_step must be positive, got {self.forward_step}")
        if self.agent_radius <= 0:
            raise ConfigError(f"agent_radius must be positive, got {self.agent_radius}")
        units = self.turn_angle_deg * _UNITS_PER_DEG
        if not 0 < self.turn_angle_deg <= 180 or abs(units - round(units)) > 1e-6:
            raise ConfigError(
                f"turn_angle_deg must be a positive multiple of 1/{_UNITS_PER_DEG} degree"
                f" at most 180, got {self.turn_angle_deg}")

    @property
    def turn_units(self) -> int:
        return round(self.turn_angle_deg * _UNITS_PER_DEG)

    @property
    def turn_angle_rad(self) -> float:
        return math.radians(self.turn_angle_deg)


class World:
    """Immutable occupancy + semantics grid; see module docstring for the format."""

    def __init__(self, kind, category, height, resolution, spawn_points,
                 category_names, name="world"):
        self.kind = kind                    # (W, H) uint8 of FREE/WALL/OBJECT
        self.category = category            # (W, H) int32, 1-based ids, 0 elsewhere
        self.cell_height = height           # (W, H) float64 meters
        self.resolution = float(resolution)
        self.spawn_points = tuple(spawn_points)
        self.category_names = tuple(category_names)
        self.name = name

    @property
    def width_cells(self) -> int:
        return self.kind.shape[0]

    @property
    def height_cells(self) -> int:
        return self.kind.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width_cells * self.resolution, self.height_cells * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x / self.resolution)), int(math.floor(y / self.resolution))

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width_cells and 0 <= iy < self.height_cells

    def is_free_cell(self, ix: int, iy: int) -> bool:
        return self.in_bounds(ix, iy) and self.kind[ix, iy] == FREE

    def point_free(self, x: float, y: float) -> bool:
        return self.is_free_cell(*self.cell_of(x, y))

    def disk_collides(self, x: float, y: float, radius: float) -> bool:
        """Exact disk-vs-cell-rectangle overlap test against non-free cells."""
        res = self.resolution
        ix0 = int(math.floor((x - radius) / res))
        ix1 = int(math.floor((x + radius) / res))
        iy0 = int(math.floor((y - radius) / res))
        iy1 = int(math.floor((y + radius) / res))
        r2 = radius * radius
        for ix in range(ix0, ix1 + 1):
            for iy in range(iy0, iy1 + 1):
                if not self.in_bounds(ix, iy):
                    return True
                if self.kind[ix, iy] == FREE:
                    continue
                nx = min(max(x, ix * res), (ix + 1) * res)
                ny = min(max(y, iy * res), (iy + 1) * res)
                if (x - nx) ** 2 + (y - ny) ** 2 < r2:
                    return True
        return False


def parse_world(text: str, source: str = "<string>") -> World:
    resolution = None
    wall_height = DEFAULT_WALL_HEIGHT
    name = None
    chars = {}          # grid char -> (category id, height)
    cat_names = []
    lines = text.splitlines()
    grid_rows = []
    grid_start = None

    for ln, line in enumerate(lines, start=1):
        if grid_start is None:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped == "grid:":
                grid_start = ln
                continue
            if ":" not in stripped:
                raise InputError(f"{source}:{ln}: expected 'key: value', got {line!r}")
            key, _, value = stripped.partition(":")
            key, value = key.strip(), value.strip()
            if key == "resolution":
                try:
                    resolution = float(value)
                except ValueError:
                    raise InputError(f"{source}:{ln}: bad resolution {value!r}") from None
                if resolution <= 0:
                    raise InputError(f"{source}:{ln}: resolution must be positive")
            elif key == "wall_height":
                try:
                    wall_height = float(value)
                except ValueError:
                    raise InputError(f"{source}:{ln}: bad wall_height {value!r}") from None
                if wall_height <= 0:
                    raise InputError(f"{source}:{ln}: wall_height must be positive")
            elif key == "name":
                name = value
            elif key == "category":
                parts = value.split()
                if len(parts) != 3:
                    raise InputError(
                        f"{source}:{ln}: category needs 'char name height', got {value!r}")
                ch, cat_name, h_str = parts
                if len(ch) != 1 or not ch.islower() or not ch.isalpha():
                    raise InputError(
                        f"{source}:{ln}: category char must be one lowercase letter, got {ch!r}")
                if ch in chars:
                    raise InputError(f"{source}:{ln}: category char {ch!r} declared twice")
                try:
                    h = float(h_str)
                except ValueError:
                    raise InputError(f"{source}:{ln}: bad height {h_str!r}") from None
                if h <= 0:
                    raise InputError(f"{source}:{ln}: height must be positive, got {h}")
                cat_names.append(cat_name)
                chars[ch] = (len(cat_names), h)  # ids are 1-based
            else:
                raise InputError(f"{source}:{ln}: unknown header key {key!r}")
        else:
            grid_rows.append((ln, line))

    if resolution is None:
        raise InputError(f"{source}: missing 'resolution:' header")
    if grid_start is None:
        raise InputError(f"{source}: missing 'grid:' section")
    while grid_rows and not grid_rows[-1][1].strip():
        grid_rows.pop()
    if not grid_rows:
        raise InputError(f"{source}:{grid_start}: empty grid")

    w = len(grid_rows[0][1])
    h = len(grid_rows)
    if w < 3 or h < 3:
        raise InputError(f"{source}: grid must be at least 3x3, got {w}x{h}")
    kind = np.zeros((w, h), dtype=np.uint8)
    category = np.zeros((w, h), dtype=np.int32)
    height = np.zeros((w, h), dtype=np.float64)
    spawns = []

    for r, (ln, row) in enumerate(grid_rows):
        if len(row) != w:
            raise InputError(
                f"{source}:{ln}: row is {len(row)} cells wide, expected {w}")
        iy = h - 1 - r
        for c, ch in enumerate(row):
            ix = c
            on_boundary = r in (0, h - 1) or c in (0, w - 1)
            if ch == "#":
                kind[ix, iy] = WALL
                height[ix, iy] = wall_height
            elif on_boundary:
                raise InputError(
                    f"{source}:{ln}: boundary cell at column {c + 1} must be a wall")
            elif ch == ".":
                pass
            elif ch == "S":
                x = (ix + 0.5) * resolution
                y = (iy + 0.5) * resolution
                spawns.append(AgentPose(x, y, 0.0))
            elif ch in chars:
                cat_id, cat_h = chars[ch]
                kind[ix, iy] = OBJECT
                category[ix, iy] = cat_id
                height[ix, iy] = cat_h
            else:
                raise InputError(
                    f"{source}:{ln}: unknown grid char {ch!r} at column {c + 1}")

    return World(kind, category, height, resolution, spawns, cat_names,
                 name or source)


def load_world(path) -> World:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    world = parse_world(text, source=str(path))
    if world.name == str(path):
        world.name = os.path.splitext(os.path.basename(str(path)))[0]
    return world


# -- episodes ------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    instruction: str
    start: AgentPose
    goal: tuple
    reference_path: tuple
    max_steps: int = 200

    def __post_init__(self):
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        object.__setattr__(self, "reference_path",
                           tuple((float(x), float(y)) for x, y in self.reference_path))
        if self.max_steps <= 0:
            raise InputError(f"{self.episode_id}: max_steps must be positive")
        if len(self.reference_path) < 2:
            raise InputError(f"{self.episode_id}: reference_path needs >= 2 points")
        sx, sy = self.reference_path[0]
        gx, gy = self.reference_path[-1]
        if math.hypot(sx - self.start.x, sy - self.start.y) > 1e-6:
            raise InputError(f"{self.episode_id}: reference_path must begin at start")
        if math.hypot(gx - self.goal[0], gy - self.goal[1]) > 1e-6:
            raise InputError(f"{self.episode_id}: reference_path must end at goal")

    def to_json_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "instruction": self.instruction,
            "start": {"x": self.start.x, "y": self.start.y, "yaw": self.start.yaw},
            "goal": list(self.goal),
            "reference_path": [list(p) for p in self.reference_path],
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EpisodeSpec":
        try:
            start = doc["start"]
            return cls(
                episode_id=str(doc["episode_id"]),
                instruction=str(doc["instruction"]),
                start=AgentPose(float(start["x"]), float(start["y"]),
                                float(start.get("yaw", 0.0))),
                goal=tuple(doc["goal"]),
                reference_path=tuple(tuple(p) for p in doc["reference_path"]),
                max_steps=int(doc.get("max_steps", 200)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"bad episode record: {e}") from None


def load_episodes(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise InputError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(doc, list):
        raise InputError(f"{path}: episode file must be a JSON array")
    return [EpisodeSpec.from_json_dict(d) for d in doc]


def save_episodes(path, specs):
    with open(path, "w", encoding="utf-8") as f:
        json.dump([s.to_json_dict() for s in specs], f, indent=2)
        f.write("\n")


def validate_episode(world: World, spec: EpisodeSpec,
                     agent_radius: float = SimConfig().agent_radius):
    if world.disk_collides(spec.start.x, spec.start.y, agent_radius):
        raise InputError(f"{spec.episode_id}: start pose is not in free space")
    if not world.point_free(*spec.goal):
        raise InputError(f"{spec.episode_id}: goal is not in free space")


# -- kinematics ----------------------------------------------------------


@dataclass(frozen=True)
class StepOutcome:
    new_pose: AgentPose
    collided: bool
    done: bool
    steps_used: int


def try_move(world: World, pose: AgentPose, action: Action,
             cfg: SimConfig = SimConfig()) -> tuple[AgentPose, bool]:
    """Pure one-action kinematics: (new pose, collided)."""
    if action is Action.STOP:
        return pose, False
    if action in (Action.TURN_LEFT, Action.TURN_RIGHT):
        sign = 1 if action is Action.TURN_LEFT else -1
        yaw = _yaw_of_units(_units_of_yaw(pose.yaw) + sign * cfg.turn_units)
        return AgentPose(pose.x, pose.y, yaw, pose.camera_height), False
    # FORWARD: sweep the disk along the translation in sub-resolution hops.
    dx = math.cos(pose.yaw) * cfg.forward_step
    dy = math.sin(pose.yaw) * cfg.forward_step
    n = max(2, int(math.ceil(cfg.forward_step / (world.resolution * 0.5))))
    for i in range(1, n + 1):
        t = i / n
        if world.disk_collides(pose.x + dx * t, pose.y + dy * t, cfg.agent_radius):
            return pose, True
    return AgentPose(pose.x + dx, pose.y + dy, pose.yaw, pose.camera_height), False


class Episode:
    """Mutable episode state: pose, budget, termination flags."""

    def __init__(self, world: World, spec: EpisodeSpec,
                 cfg: SimConfig = SimConfig()):
        validate_episode(world, spec, cfg.agent_radius)
        self.world = world
        self.spec = spec
        self.cfg = cfg
        self.pose = spec.start
        self.steps_used = 0
        self.done = False
        self.stopped = False
        self.collisions = 0
        self.trail = [spec.start]

    def step(self, action: Action) -> StepOutcome:
        if self.done:
            raise ProtocolError(
                f"{self.spec.episode_id}: step({action.value}) after episode end")
        new_pose, collided = try_move(self.world, self.pose, action, self.cfg)
        self.steps_used += 1
        self.pose = new_pose
        self.trail.append(new_pose)
        if collided:
            self.collisions += 1
        if action is Action.STOP:
            self.done = True
            self.stopped = True
        elif self.steps_used >= self.spec.max_steps:
            self.done = True
        return StepOutcome(new_pose, collided, self.done, self.steps_used)


# -- sensing -------------------------------------------------------------


def make_intrinsics(width: int = 128, height: int = 96, hfov_deg: float = 79.0,
                    depth_min: float = 0.1, depth_max: float = 10.0) -> CameraIntrinsics:
    """Square-pixel pinhole with the principal point at the image center."""
    fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    return CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height,
                            depth_min=depth_min, depth_max=depth_max)


def _ray_cells(world: World, x: float, y: float, yaw: float, t_max: float):
    """Grid cells crossed by a planar ray: yields (t_enter, t_exit, ix, iy).

    Standard one-step-per-cell grid traversal; t is distance in meters.
    Stops at t_max or the grid edge.
    """
    res = world.resolution
    dx, dy = math.cos(yaw), math.sin(yaw)
    ix, iy = world.cell_of(x, y)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    inf = math.inf
    if dx > 1e-15:
        t_max_x = ((ix + 1) * res - x) / dx
        t_dx = res / dx
    elif dx < -1e-15:
        t_max_x = (ix * res - x) / dx
        t_dx = -res / dx
    else:
        t_max_x, t_dx = inf, inf
    if dy > 1e-15:
        t_max_y = ((iy + 1) * res - y) / dy
        t_dy = res / dy
    elif dy < -1e-15:
        t_max_y = (iy * res - y) / dy
        t_dy = -res / dy
    else:
        t_max_y, t_dy = inf, inf

    t = 0.0
    while t < t_max and world.in_bounds(ix, iy):
        t_exit = min(t_max_x, t_max_y)
        yield t, min(t_exit, t_max), ix, iy
        if t_max_x <= t_max_y:
            ix += step_x
            t = t_max_x
            t_max_x += t_dx
        else:
            iy += step_y
            t = t_max_y
            t_max_y += t_dy


def sense(world: World, pose: AgentPose, intr: CameraIntrinsics):
    """Render (depth, semantic mask) for the camera at the given pose.

    depth: (H, W) float64 forward distances, saturated at depth_max.
    mask: (H, W) int32 category ids, 0 for walls, floor, and out of range.
    """
    h, w = intr.height, intr.width
    h_cam = pose.camera_height
    rows = np.arange(h, dtype=np.float64)
    slope = (rows - intr.cy) / intr.fy          # positive looks down
    down = slope > 1e-12
    floor_z = np.where(down, h_cam / np.where(down, slope, 1.0), np.inf)

    depth = np.empty((h, w), dtype=np.float64)
    mask = np.zeros((h, w), dtype=np.int32)

    for u in range(w):
        tan_phi = (u - intr.cx) / intr.fx
        phi = math.atan(tan_phi)
        cos_phi = math.cos(phi)
        ray_yaw = pose.yaw - phi
        t_max = intr.depth_max / cos_phi

        best = np.minimum(floor_z, intr.depth_max)
        best_id = np.zeros(h, dtype=np.int32)
        for t_in, t_out, ix, iy in _ray_cells(world, pose.x, pose.y, ray_yaw, t_max):
            if world.kind[ix, iy] == FREE:
                continue
            z_in = t_in * cos_phi
            if z_in >= best.max():
                break
            z_out = t_out * cos_phi
            cell_h = world.cell_height[ix, iy]
            cat = int(world.category[ix, iy])

            alt_in = h_cam - slope * z_in
            front = (alt_in >= 0.0) & (alt_in <= cell_h) & (z_in < best)
            if front.any():
                best = np.where(front, z_in, best)
                best_id = np.where(front, cat, best_id)
            if cell_h < h_cam:
                with np.errstate(divide="ignore"):
                    z_top = np.where(down, (h_cam - cell_h) / np.where(down, slope, 1.0),
                                     np.inf)
                top = down & (z_top > z_in) & (z_top <= z_out) & (z_top < best)
                if top.any():
                    best = np.where(top, z_top, best)
                    best_id = np.where(top, cat, best_id)
        depth[:, u] = best
        mask[:, u] = best_id

    return depth, mask
