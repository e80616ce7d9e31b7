"""Closed-loop episode execution.

Each step senses a depth/segmentation frame, folds it into the running
semantic map, renders the annotated map and a first-person observation,
asks the policy for natural-language action text, parses it, and steps
the simulator.  Unparseable replies fall back to a left rotation so an
episode always makes progress; the raw text is kept in the trace.

The per-step trace and the JSON trajectory artifact deliberately exclude
wall-clock latency so identical inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .actions import Action
from .annotation import DEFAULT_RENDER_SCALE, DEFAULT_TAU, annotate, palette_for
from .errors import InputError
from .geometry import (DEFAULT_OBSTACLE_BAND, AgentPose, CameraIntrinsics,
                       SemanticPointCloud, centered_grid, depth_to_points,
                       project_to_grid)
from .metrics import TrajectoryLog, evaluate
from .pngio import encode_png
from .policy import PolicyInput, PolicyOutput, oracle_decide
from .semantic_map import DEFAULT_CATEGORIES, SemanticMap, init_map
from .simenv import Episode, EpisodeSpec, SimConfig, World, make_intrinsics, sense

# Fraction of a cell that boundary-sitting surface points are pushed along
# the viewing ray's direction, per axis.  Depth hits on vertical surfaces
# land exactly on a shared cell edge, where floor-binning could pick the
# free cell in front of the surface; the nudge moves them into the cell the
# ray was entering.
SURFACE_INSET = 0.25

# Distance from a grid line, in cells, below which a coordinate counts as
# a boundary hit.  Well above float reconstruction noise, far below any
# legitimate interior offset.
_BOUNDARY_TOL = 1e-6

DEFAULT_HISTORY_FRAMES = 2
DEFAULT_SUCCESS_RADIUS = 0.25
DEFAULT_MAP_CELLS = 240


@dataclass(frozen=True)
class MapParams:
    """Size and behavior of the per-episode semantic map."""
    width_cells: int = DEFAULT_MAP_CELLS
    height_cells: int = DEFAULT_MAP_CELLS
    resolution: float = 0.05
    tau: int = DEFAULT_TAU
    render_scale: int = DEFAULT_RENDER_SCALE
    obstacle_band: tuple = DEFAULT_OBSTACLE_BAND


@dataclass
class StepTrace:
    """What happened in one step, minus anything non-deterministic."""
    step: int
    pose: AgentPose          # pose the decision was made from
    text: str
    action: Action
    recovered: bool          # text failed to parse; action is the fallback
    collided: bool
    new_pose: AgentPose


@dataclass
class RunResult:
    episode_id: str
    traces: list
    log: TrajectoryLog
    observations: list = field(default_factory=list)  # per-step PNG bytes
    asm_frames: list = field(default_factory=list)    # per-step PNG bytes
    map: SemanticMap | None = None

    @property
    def stopped(self) -> bool:
        return self.log.stopped

    def artifact_json(self) -> str:
        doc = {
            "episode_id": self.episode_id,
            "stopped": self.log.stopped,
            "collisions": self.log.collisions,
            "final_pose": _pose_triplet(self.log.poses[-1]),
            "steps": [
                {
                    "step": t.step,
                    "pose": _pose_triplet(t.pose),
                    "text": t.text,
                    "action": t.action.name,
                    "recovered": t.recovered,
                    "collided": t.collided,
                }
                for t in self.traces
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _pose_triplet(pose: AgentPose) -> list:
    return [pose.x, pose.y, pose.yaw]


def inset_cloud(cloud: SemanticPointCloud, pose: AgentPose,
                resolution: float) -> SemanticPointCloud:
    """Nudge boundary points into the cell their viewing ray was entering.

    Per horizontal axis: a coordinate sitting on a grid line moves a
    quarter cell along the ray's direction on that axis.  Interior
    coordinates (floor and object-top hits) are left alone, as is any
    axis the ray runs parallel to.
    """
    if len(cloud) == 0:
        return cloud
    res = float(resolution)
    if res <= 0.0:
        raise InputError(f"resolution must be positive, got {resolution}")
    xyz = cloud.xyz.copy()
    near = []
    signs = []
    for axis, origin in ((0, pose.x), (1, pose.y)):
        frac = xyz[:, axis] / res
        frac -= np.floor(frac)
        near.append(np.minimum(frac, 1.0 - frac) < _BOUNDARY_TOL)
        signs.append(np.sign(xyz[:, axis] - origin))
    # A ray through an exact lattice corner may stop in either adjacent
    # cell; the point alone cannot tell which, so such hits are dropped.
    corner = near[0] & near[1] & (signs[0] != 0) & (signs[1] != 0)
    for axis in (0, 1):
        push = np.where(near[axis], signs[axis] * (SURFACE_INSET * res), 0.0)
        xyz[:, axis] += push
    keep = ~corner
    return SemanticPointCloud(xyz[keep], cloud.categories[keep].copy())


def ingest_frame(smap: SemanticMap, intr: CameraIntrinsics,
                 depth: np.ndarray, mask: np.ndarray, pose: AgentPose,
                 obstacle_band: tuple = DEFAULT_OBSTACLE_BAND) -> None:
    """Fold one depth/segmentation frame into the map at the given pose."""
    cloud = depth_to_points(depth, mask, intr, pose)
    cloud = inset_cloud(cloud, pose, smap.spec.resolution)
    hits = project_to_grid(cloud, smap.spec, obstacle_band)
    smap.update(hits, pose)


def render_observation(depth: np.ndarray, mask: np.ndarray,
                       intr: CameraIntrinsics, palette: dict) -> np.ndarray:
    """First-person frame: category colors shaded by distance."""
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask)
    img = np.empty((depth.shape[0], depth.shape[1], 3), dtype=np.float64)
    img[:] = (185.0, 185.0, 185.0)
    for cat_id in np.unique(mask):
        if cat_id <= 0:
            continue
        img[mask == cat_id] = palette[(int(cat_id) - 1) % len(palette)]
    near = intr.depth_min
    frac = np.clip((depth - near) / max(intr.depth_max - near, 1e-9), 0.0, 1.0)
    shade = 1.0 - 0.75 * frac
    img *= shade[:, :, None]
    return img.astype(np.uint8)


class MappingPipeline:
    """Owns the per-episode semantic map and turns frames into updates."""

    def __init__(self, world: World, start: AgentPose,
                 intr: CameraIntrinsics, params: MapParams):
        if params.resolution != world.resolution:
            raise InputError(
                f"map resolution {params.resolution} must match world "
                f"resolution {world.resolution}")
        self.world = world
        self.intr = intr
        self.params = params
        self.grid = centered_grid(start, params.width_cells,
                                  params.height_cells, params.resolution)
        cats = tuple(world.category_names) or DEFAULT_CATEGORIES
        self.map = init_map(self.grid, categories=cats)
        self.palette = palette_for(len(cats))

    def observe(self, pose: AgentPose) -> tuple:
        """Sense, update the map, and return (observation PNG, ASM PNG)."""
        depth, mask = sense(self.world, pose, self.intr)
        ingest_frame(self.map, self.intr, depth, mask, pose,
                     self.params.obstacle_band)
        asm = annotate(self.map, self.params.tau, self.params.render_scale,
                       self.palette)
        obs = render_observation(depth, mask, self.intr, self.palette)
        return encode_png(obs), asm.to_png()


def make_oracle_policy(world: World, spec: EpisodeSpec, phrasing_seed: int = 0,
                       success_radius: float = DEFAULT_SUCCESS_RADIUS,
                       cfg: SimConfig | None = None):
    """Expert decider; ignores the rendered inputs and plans on the world."""

    def decide(pose: AgentPose, _inp: PolicyInput | None) -> PolicyOutput:
        return oracle_decide(world, pose, spec, phrasing_seed=phrasing_seed,
                             success_radius=success_radius, cfg=cfg)

    return decide


def make_scripted_policy(lines):
    """Replays canned text; emits "stop" once the script runs dry."""
    lines = list(lines)
    state = {"i": 0}

    def decide(_pose: AgentPose, _inp: PolicyInput | None) -> PolicyOutput:
        if state["i"] < len(lines):
            text = lines[state["i"]]
            state["i"] += 1
        else:
            text = "stop"
        from .actions import parse_action
        from .errors import NoMatchError
        try:
            parsed = parse_action(text)
        except NoMatchError:
            parsed = None
        return PolicyOutput(text=text, parsed=parsed, latency=0.0)

    return decide


def make_vlm_policy(endpoint_cfg):
    from .policy import vlm_decide

    def decide(_pose: AgentPose, inp: PolicyInput) -> PolicyOutput:
        if inp is None:
            raise InputError("vlm policy needs the mapping pipeline enabled")
        return vlm_decide(inp, endpoint_cfg)

    return decide


def run_episode(world: World, spec: EpisodeSpec, decide,
                sim_cfg: SimConfig | None = None,
                intr: CameraIntrinsics | None = None,
                map_params: MapParams | None = None,
                history_frames: int = DEFAULT_HISTORY_FRAMES,
                with_maps: bool = True,
                keep_frames: bool = False) -> RunResult:
    """Drive one episode to completion and score it.

    `decide` is called as decide(pose, policy_input) and must return a
    PolicyOutput; with `with_maps=False` the sensing/mapping pipeline is
    skipped and policy_input is None (enough for the expert policy).
    """
    sim_cfg = sim_cfg or SimConfig()
    if not 0 <= history_frames <= 4:
        raise InputError("history_frames must be within 0..4")
    episode = Episode(world, spec, sim_cfg)
    pipeline = None
    if with_maps:
        intr = intr or make_intrinsics()
        pipeline = MappingPipeline(world, spec.start, intr,
                                   map_params or MapParams(
                                       resolution=world.resolution))

    pose = spec.start
    poses = [pose]
    traces = []
    observations = []
    asm_frames = []
    history = []
    collisions = 0
    stopped = False

    for step in range(spec.max_steps):
        policy_input = None
        if pipeline is not None:
            obs_png, asm_png = pipeline.observe(pose)
            if keep_frames:
                observations.append(obs_png)
                asm_frames.append(asm_png)
            policy_input = PolicyInput(
                instruction=spec.instruction,
                asm_png=asm_png,
                observation_png=obs_png,
                history_pngs=tuple(history),
                step_index=step,
            )
            history.append(obs_png)
            if len(history) > history_frames:
                del history[: len(history) - history_frames]
        out = decide(pose, policy_input)
        recovered = out.parsed is None
        action = Action.TURN_LEFT if recovered else out.parsed
        result = episode.step(action)
        traces.append(StepTrace(step=step, pose=pose, text=out.text,
                                action=action, recovered=recovered,
                                collided=result.collided,
                                new_pose=result.new_pose))
        collisions += int(result.collided)
        pose = result.new_pose
        poses.append(pose)
        if action is Action.STOP:
            stopped = True
        if result.done:
            break

    log = TrajectoryLog(poses=tuple(poses), stopped=stopped,
                        collisions=collisions)
    return RunResult(episode_id=spec.episode_id, traces=traces, log=log,
                     observations=observations, asm_frames=asm_frames,
                     map=pipeline.map if pipeline else None)


def score(result: RunResult, spec: EpisodeSpec,
          success_radius: float = DEFAULT_SUCCESS_RADIUS,
          world: World | None = None):
    return evaluate(result.log, spec, success_radius=success_radius,
                    world=world)
