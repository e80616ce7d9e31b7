"""Navigation episode scoring.

Scores a walked trajectory against an episode's goal and reference path:

- ne: Euclidean distance from the final pose to the goal, meters.
- os: 1 when any pose along the walk came within the success radius.
- sr: 1 when the agent deliberately stopped within the success radius.
- spl: sr weighted by shortest-path length over max(walked, shortest),
  so detours and overshoot bleed credit away.
- ndtw: exp(-DTW/(|reference| * radius)) where DTW is dynamic time
  warping between the walk and the reference path, so 1 means the walk
  hugged the reference and scores decay smoothly with divergence.

The shortest-path length defaults to the reference path's own length;
pass a world to use the wall-aware grid geodesic instead.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

from .planning import path_length, shortest_path_length
from .simenv import EpisodeSpec, World


@dataclass(frozen=True)
class TrajectoryLog:
    """Everything scoring needs about one finished episode."""
    poses: tuple
    stopped: bool
    collisions: int = 0

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("trajectory needs at least the starting pose")
        if self.collisions < 0:
            raise ValueError("collisions must be >= 0")

    def points(self) -> list:
        return [(p.x, p.y) for p in self.poses]


@dataclass(frozen=True)
class NavMetrics:
    episode_id: str
    ne: float
    os: float
    sr: float
    spl: float
    ndtw: float
    path_length: float
    collisions: int

    def to_dict(self) -> dict:
        return asdict(self)


def dtw_distance(ref, query) -> float:
    """Dynamic time warping cost between two point sequences, rolling array."""
    if not ref or not query:
        raise ValueError("dtw needs non-empty sequences")
    prev = [math.inf] * (len(query) + 1)
    prev[0] = 0.0
    for rx, ry in ref:
        cur = [math.inf] * (len(query) + 1)
        for j, (qx, qy) in enumerate(query, start=1):
            cost = math.hypot(rx - qx, ry - qy)
            cur[j] = cost + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return prev[-1]


def evaluate(log: TrajectoryLog, spec: EpisodeSpec,
             success_radius: float = 3.0,
             world: World | None = None) -> NavMetrics:
    if success_radius <= 0:
        raise ValueError("success_radius must be positive")
    pts = log.points()
    gx, gy = spec.goal
    ne = math.hypot(pts[-1][0] - gx, pts[-1][1] - gy)
    os_hit = any(math.hypot(x - gx, y - gy) <= success_radius for x, y in pts)
    sr_hit = log.stopped and ne <= success_radius
    walked = path_length(pts)

    shortest = None
    if world is not None:
        shortest = shortest_path_length(world, (spec.start.x, spec.start.y),
                                        spec.goal)
    if shortest is None:
        shortest = path_length(spec.reference_path)

    denom = max(walked, shortest)
    if denom == 0.0:
        spl = 1.0 if sr_hit else 0.0
    else:
        spl = (shortest / denom) if sr_hit else 0.0

    dtw = dtw_distance(spec.reference_path, pts)
    ndtw = math.exp(-dtw / (len(spec.reference_path) * success_radius))

    return NavMetrics(
        episode_id=spec.episode_id,
        ne=ne,
        os=1.0 if os_hit else 0.0,
        sr=1.0 if sr_hit else 0.0,
        spl=spl,
        ndtw=ndtw,
        path_length=walked,
        collisions=log.collisions,
    )


_MEAN_FIELDS = ("ne", "os", "sr", "spl", "ndtw", "path_length", "collisions")


def summarize(records) -> dict:
    """Unweighted means across episodes, plus the episode count."""
    records = list(records)
    if not records:
        raise ValueError("no metrics to summarize")
    out = {"count": len(records)}
    for field in _MEAN_FIELDS:
        out[field] = sum(getattr(r, field) for r in records) / len(records)
    return out


def write_metrics_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def write_metrics_csv(records, path) -> None:
    records = list(records)
    fields = list(NavMetrics.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in records:
            writer.writerow(r.to_dict())
