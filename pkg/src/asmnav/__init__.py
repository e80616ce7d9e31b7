"""Annotated semantic map navigation toolkit.

Builds per-episode top-down semantic maps from depth and segmentation
frames, renders them with readable category labels, turns natural-language
replies into discrete actions, and scores trajectories with the standard
navigation metrics.  A small grid simulator, an expert policy, dataset
collectors, and a CLI tie the pieces together.
"""

__version__ = "0.1.0"

from .actions import Action, PatternRuleset, default_ruleset, parse_action
from .annotation import AnnotatedMap, annotate, palette_for
from .errors import (AsmNavError, ConfigError, EndpointError, FormatError,
                     InputError, NoMatchError, PlanningError, ProtocolError)
from .geometry import (AgentPose, CameraIntrinsics, GridSpec,
                       SemanticPointCloud, centered_grid, depth_to_points,
                       project_to_grid)
from .metrics import NavMetrics, TrajectoryLog, evaluate, summarize
from .planning import path_length, plan_path, shortest_path_length
from .policy import (PolicyInput, PolicyOutput, VlmEndpointConfig,
                     oracle_decide, vlm_decide)
from .semantic_map import SemanticMap, init_map
from .simenv import (Episode, EpisodeSpec, SimConfig, World, load_episodes,
                     load_world, make_intrinsics, parse_world, sense,
                     try_move)

__all__ = [
    "__version__",
    "Action", "PatternRuleset", "default_ruleset", "parse_action",
    "AnnotatedMap", "annotate", "palette_for",
    "AsmNavError", "ConfigError", "EndpointError", "FormatError",
    "InputError", "NoMatchError", "PlanningError", "ProtocolError",
    "AgentPose", "CameraIntrinsics", "GridSpec", "SemanticPointCloud",
    "centered_grid", "depth_to_points", "project_to_grid",
    "NavMetrics", "TrajectoryLog", "evaluate", "summarize",
    "path_length", "plan_path", "shortest_path_length",
    "PolicyInput", "PolicyOutput", "VlmEndpointConfig", "oracle_decide",
    "vlm_decide",
    "SemanticMap", "init_map",
    "Episode", "EpisodeSpec", "SimConfig", "World", "load_episodes",
    "load_world", "make_intrinsics", "parse_world", "sense", "try_move",
]
