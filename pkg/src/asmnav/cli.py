"""Command-line interface.

All subcommands accept ``--config FILE`` pointing at a flat JSON object
whose keys mirror the long option names with underscores (for example
``{"map_cells": 160}``).  Precedence is flags > config file > built-in
defaults.  One ``--seed`` drives every random choice (expert phrasing,
collision perturbations, episode generation).

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
import time

from . import __version__
from .actions import default_ruleset
from .annotation import annotate
from .dataset import (CollectConfig, collect_collision, collect_dagger,
                      collect_gt, generate_episodes, summarize_manifest,
                      validate_dataset)
from .errors import (AsmNavError, ConfigError, FormatError, InputError,
                     NoMatchError)
from .metrics import summarize, write_metrics_csv, write_metrics_jsonl
from .policy import VlmEndpointConfig
from .runner import (DEFAULT_HISTORY_FRAMES, DEFAULT_SUCCESS_RADIUS,
                     MapParams, MappingPipeline, make_oracle_policy,
                     make_scripted_policy, make_vlm_policy, run_episode,
                     score)
from .semantic_map import SemanticMap
from .simenv import (Action, SimConfig, load_episodes, load_world,
                     make_intrinsics, parse_world, try_move)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

# Built-in defaults, also the reference list of config-file keys.
DEFAULTS = {
    "policy": "oracle",
    "seed": 0,
    "map_cells": 240,
    "tau": 10,
    "render_scale": 2,
    "success_radius": DEFAULT_SUCCESS_RADIUS,
    "history_frames": DEFAULT_HISTORY_FRAMES,
    "intr_width": 128,
    "intr_height": 96,
    "forward_step": 0.25,
    "turn_angle_deg": 15.0,
    "agent_radius": 0.18,
    "save_frames": False,
    "light": False,
    "script": None,
    "episode_id": None,
    "workers": 1,
    "vlm_base_url": None,
    "vlm_model": None,
    "vlm_auth_env": "",
    "vlm_timeout": 30.0,
    "vlm_retries": 2,
    "steps": "1,10,100,300",
    "out": None,
    "rollout": "oracle",
    "generate": 0,
    "min_dist": 0.6,
    "override_prob": 0.9,
}


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except ValueError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(doc) - set(DEFAULTS) - {"world", "episodes", "root",
                                          "snapshot", "out_png",
                                          "placements"}
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


class Settings:
    """Flags > config file > defaults, resolved lazily per key."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        path = self._args.get("config")
        self._file = _load_config_file(path) if path else {}

    def __getattr__(self, key: str):
        if key.startswith("_"):
            raise AttributeError(key)
        flag = self._args.get(key)
        if flag is not None:
            return flag
        if key in self._file:
            return self._file[key]
        if key in DEFAULTS:
            return DEFAULTS[key]
        raise ConfigError(f"missing required setting {key!r}")

    def validated(self) -> "Settings":
        checks = (
            ("map_cells", 16, 4096),
            ("tau", 1, 10000),
            ("render_scale", 1, 16),
            ("history_frames", 0, 4),
            ("intr_width", 8, 4096),
            ("intr_height", 8, 4096),
            ("workers", 1, 256),
        )
        for key, lo, hi in checks:
            v = getattr(self, key)
            if not lo <= int(v) <= hi:
                raise ConfigError(f"{key} must be within [{lo}, {hi}], "
                                  f"got {v}")
        for key in ("success_radius", "forward_step", "agent_radius",
                    "turn_angle_deg"):
            if float(getattr(self, key)) <= 0:
                raise ConfigError(f"{key} must be positive")
        return self


def _open_world(path):
    if not os.path.isfile(path):
        raise InputError(f"world file not found: {path}")
    return load_world(path)


def _open_episodes(path):
    if not os.path.isfile(path):
        raise InputError(f"episodes file not found: {path}")
    return load_episodes(path)


def _sim_config(s: Settings) -> SimConfig:
    return SimConfig(forward_step=float(s.forward_step),
                     turn_angle_deg=float(s.turn_angle_deg),
                     agent_radius=float(s.agent_radius))


def _map_params(s: Settings, world) -> MapParams:
    return MapParams(width_cells=int(s.map_cells),
                     height_cells=int(s.map_cells),
                     resolution=world.resolution,
                     tau=int(s.tau), render_scale=int(s.render_scale))


def _vlm_config(s: Settings) -> VlmEndpointConfig:
    if not s.vlm_base_url or not s.vlm_model:
        raise ConfigError("vlm policy needs vlm_base_url and vlm_model")
    return VlmEndpointConfig(base_url=str(s.vlm_base_url),
                             model_name=str(s.vlm_model),
                             auth_env=str(s.vlm_auth_env),
                             timeout=float(s.vlm_timeout),
                             retries=int(s.vlm_retries),
                             seed=int(s.seed))


def _policy_provider(s: Settings):
    """-> (provider(world, spec) -> decide, needs_full_pipeline)."""
    choice = s.policy
    if choice == "oracle":
        def provider(world, spec):
            return make_oracle_policy(world, spec, phrasing_seed=int(s.seed),
                                      success_radius=float(s.success_radius),
                                      cfg=_sim_config(s))
        return provider, False
    if choice == "scripted":
        if not s.script:
            raise ConfigError("scripted policy needs --script FILE")
        if not os.path.isfile(s.script):
            raise InputError(f"script file not found: {s.script}")
        with open(s.script, "r", encoding="utf-8") as f:
            lines = [ln.rstrip("\n") for ln in f if ln.strip()]
        return (lambda world, spec: make_scripted_policy(lines)), False
    if choice == "vlm":
        cfg = _vlm_config(s)
        return (lambda world, spec: make_vlm_policy(cfg)), True
    raise ConfigError(f"unknown policy {choice!r} "
                      f"(expected oracle, scripted, or vlm)")


def _run_one(world, spec, s: Settings, provider, full: bool):
    result = run_episode(
        world, spec, provider(world, spec),
        sim_cfg=_sim_config(s),
        intr=make_intrinsics(int(s.intr_width), int(s.intr_height)),
        map_params=_map_params(s, world),
        history_frames=int(s.history_frames),
        with_maps=full,
        keep_frames=bool(s.save_frames))
    metrics = score(result, spec, success_radius=float(s.success_radius),
                    world=world)
    return result, metrics


def _write_artifacts(out_dir, result, metrics, save_frames: bool):
    os.makedirs(out_dir, exist_ok=True)
    traj = os.path.join(out_dir, f"{result.episode_id}.trajectory.json")
    with open(traj, "w", encoding="utf-8") as f:
        f.write(result.artifact_json())
    mpath = os.path.join(out_dir, f"{result.episode_id}.metrics.json")
    with open(mpath, "w", encoding="utf-8") as f:
        json.dump(metrics.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    if result.map is not None:
        result.map.save(os.path.join(out_dir,
                                     f"{result.episode_id}.map.bin"))
    if save_frames:
        fdir = os.path.join(out_dir, f"{result.episode_id}.frames")
        os.makedirs(fdir, exist_ok=True)
        for i, (obs, asm) in enumerate(zip(result.observations,
                                           result.asm_frames)):
            with open(os.path.join(fdir, f"step_{i:04d}_obs.png"), "wb") as f:
                f.write(obs)
            with open(os.path.join(fdir, f"step_{i:04d}_asm.png"), "wb") as f:
                f.write(asm)
    return traj


# -- subcommands -------------------------------------------------------------


def cmd_run_episode(args) -> int:
    s = Settings(args).validated()
    world = _open_world(s.world)
    episodes = _open_episodes(s.episodes)
    if s.episode_id:
        match = [e for e in episodes if e.episode_id == s.episode_id]
        if not match:
            raise InputError(f"episode {s.episode_id!r} not found in "
                             f"{s.episodes}")
        spec = match[0]
    else:
        spec = episodes[0]
    provider, needs_full = _policy_provider(s)
    full = needs_full or not bool(s.light)
    result, metrics = _run_one(world, spec, s, provider, full)
    if s.out:
        _write_artifacts(s.out, result, metrics, bool(s.save_frames))
    print(f"{spec.episode_id}: stopped={result.stopped} "
          f"steps={len(result.traces)} collisions={result.log.collisions} "
          f"ne={metrics.ne:.3f} sr={metrics.sr:.0f} spl={metrics.spl:.3f}")
    return EXIT_OK


def _parse_pairs(pairs):
    out = []
    for pair in pairs:
        world_path, sep, eps_path = pair.partition(":")
        if not sep:
            raise InputError(f"expected WORLD:EPISODES, got {pair!r}")
        out.append((_open_world(world_path), _open_episodes(eps_path)))
    return out


def cmd_batch_eval(args) -> int:
    s = Settings(args).validated()
    provider, needs_full = _policy_provider(s)
    full = needs_full or not bool(s.light)
    tasks = []
    for world, episodes in _parse_pairs(args.pairs):
        for spec in episodes:
            tasks.append((world, spec))

    def one(task):
        world, spec = task
        _, metrics = _run_one(world, spec, s, provider, full)
        return metrics

    workers = int(s.workers)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, tasks))
    else:
        records = [one(t) for t in tasks]
    records.sort(key=lambda m: m.episode_id)
    stats = summarize(records)
    if s.out:
        os.makedirs(s.out, exist_ok=True)
        write_metrics_jsonl(records, os.path.join(s.out, "metrics.jsonl"))
        write_metrics_csv(records, os.path.join(s.out, "metrics.csv"))
        with open(os.path.join(s.out, "summary.json"), "w",
                  encoding="utf-8") as f:
            json.dump(stats, f, indent=2, sort_keys=True)
            f.write("\n")
    for m in records:
        print(f"{m.episode_id}: sr={m.sr:.0f} spl={m.spl:.3f} "
              f"ne={m.ne:.3f} ndtw={m.ndtw:.3f} "
              f"collisions={m.collisions}")
    print(f"episodes={stats['count']} sr={stats['sr']:.3f} "
          f"spl={stats['spl']:.3f} ne={stats['ne']:.3f} "
          f"os={stats['os']:.3f} ndtw={stats['ndtw']:.3f}")
    return EXIT_OK


def cmd_render_asm(args) -> int:
    s = Settings(args)
    if not os.path.isfile(s.snapshot):
        raise InputError(f"snapshot not found: {s.snapshot}")
    smap = SemanticMap.load(s.snapshot)
    art = annotate(smap, int(s.tau), int(s.render_scale))
    with open(s.out_png, "wb") as f:
        f.write(art.to_png())
    placements = getattr(args, "placements", None)
    if placements:
        with open(placements, "w", encoding="utf-8") as f:
            json.dump(art.placements_json(), f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"wrote {s.out_png} ({art.image.shape[1]}x{art.image.shape[0]}, "
          f"{len(art.placements)} labels)")
    return EXIT_OK


# The benchmark arena: an empty hall so the bounce walk runs forever.
def _bench_world():
    rows = ["#" * 60]
    for _ in range(38):
        rows.append("#" + "." * 58 + "#")
    rows.append("#" * 60)
    rows[19] = rows[19][:4] + "S" + rows[19][5:]
    text = ("name: bench\nresolution: 0.05\nwall_height: 2.0\ngrid:\n"
            + "\n".join(rows) + "\n")
    return parse_world(text)


def bench_memory(step_counts=(1, 10, 100, 300), map_cells: int = 240,
                 intr_width: int = 128, intr_height: int = 96,
                 tau: int = 10, render_scale: int = 2) -> dict:
    """Bounce-walk a synthetic hall and checkpoint the map's byte size.

    Returns checkpointed map sizes, a linear frame-history baseline
    (steps times the size of one first-person frame), and mean per-step
    time over the full pipeline (sense, map update, annotate, render).
    """
    step_counts = sorted(set(int(c) for c in step_counts))
    if not step_counts or step_counts[0] < 1:
        raise InputError("step counts must be positive")
    world = _bench_world()
    pose = world.spawn_points[0]
    intr = make_intrinsics(intr_width, intr_height)
    params = MapParams(width_cells=map_cells, height_cells=map_cells,
                       resolution=world.resolution, tau=tau,
                       render_scale=render_scale)
    pipe = MappingPipeline(world, pose, intr, params)
    cfg = SimConfig()
    asm_bytes = {}
    per_frame = None
    t0 = time.perf_counter()
    for step in range(1, step_counts[-1] + 1):
        obs_png, _asm_png = pipe.observe(pose)
        if per_frame is None:
            per_frame = len(obs_png)
        new_pose, collided = try_move(world, pose, Action.FORWARD, cfg)
        if collided:
            new_pose, _ = try_move(world, pose, Action.TURN_LEFT, cfg)
        pose = new_pose
        if step in step_counts:
            asm_bytes[step] = pipe.map.state_bytes()
    elapsed = time.perf_counter() - t0
    return {
        "checkpoints": step_counts,
        "asm_bytes": [asm_bytes[c] for c in step_counts],
        "history_bytes": [c * per_frame for c in step_counts],
        "per_frame_bytes": per_frame,
        "mean_step_ms": 1000.0 * elapsed / step_counts[-1],
    }


def format_bench_table(report: dict) -> str:
    cols = report["checkpoints"]
    head = "memory at step".ljust(26) + "".join(f"{c:>12}" for c in cols)
    asm = "semantic map (bytes)".ljust(26) + "".join(
        f"{b:>12}" for b in report["asm_bytes"])
    hist = "frame history (bytes)".ljust(26) + "".join(
        f"{b:>12}" for b in report["history_bytes"])
    lines = [head, "-" * len(head), asm, hist,
             f"per-frame size: {report['per_frame_bytes']} bytes",
             f"mean per-step map+render time: "
             f"{report['mean_step_ms']:.2f} ms"]
    return "\n".join(lines)


def cmd_bench_memory(args) -> int:
    s = Settings(args).validated()
    try:
        counts = [int(v) for v in str(s.steps).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad step list {s.steps!r}") from None
    report = bench_memory(counts, map_cells=int(s.map_cells),
                          intr_width=int(s.intr_width),
                          intr_height=int(s.intr_height),
                          tau=int(s.tau), render_scale=int(s.render_scale))
    print(format_bench_table(report))
    if s.out:
        with open(s.out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return EXIT_OK


def cmd_collect_dataset(args) -> int:
    s = Settings(args).validated()
    world = _open_world(s.world)
    if int(s.generate) > 0:
        episodes = generate_episodes(world, int(s.generate), int(s.seed),
                                     min_dist=float(s.min_dist))
    else:
        episodes = _open_episodes(s.episodes)
    if not s.out:
        raise ConfigError("collect-dataset needs --out DIR")
    cfg = CollectConfig(seed=int(s.seed),
                        success_radius=float(s.success_radius),
                        intr_width=int(s.intr_width),
                        intr_height=int(s.intr_height),
                        map_cells=int(s.map_cells), tau=int(s.tau),
                        render_scale=int(s.render_scale),
                        forward_override_prob=float(s.override_prob))
    workers = int(s.workers)
    if args.phase == "gt":
        manifest = collect_gt(world, episodes, s.out, cfg, workers)
    elif args.phase == "dagger":
        rollout = s.rollout
        if rollout == "oracle":
            def provider(w, spec):
                return make_oracle_policy(w, spec, phrasing_seed=int(s.seed),
                                          success_radius=cfg.success_radius)
        elif rollout == "forward":
            def provider(w, spec):
                return make_scripted_policy(["move forward"] * spec.max_steps)
        elif rollout == "scripted":
            if not s.script or not os.path.isfile(s.script):
                raise ConfigError("dagger scripted rollout needs --script "
                                  "FILE")
            with open(s.script, "r", encoding="utf-8") as f:
                lines = [ln.rstrip("\n") for ln in f if ln.strip()]

            def provider(w, spec):
                return make_scripted_policy(lines)
        else:
            raise ConfigError(f"unknown rollout {rollout!r} "
                              f"(expected oracle, forward, or scripted)")
        manifest = collect_dagger(world, episodes, provider, s.out, cfg,
                                  workers)
    else:
        manifest = collect_collision(world, episodes, s.out, cfg, workers)
    print(summarize_manifest(manifest))
    return EXIT_OK


def cmd_validate_dataset(args) -> int:
    s = Settings(args)
    if not os.path.isdir(s.root):
        raise InputError(f"dataset directory not found: {s.root}")
    worlds = None
    episodes = None
    if getattr(args, "world", None):
        world = _open_world(args.world)
        worlds = {world.name: world}
        if not getattr(args, "episodes", None):
            raise ConfigError("deep validation needs --episodes with "
                              "--world")
        episodes = {e.episode_id: e for e in _open_episodes(args.episodes)}
    problems = validate_dataset(s.root, worlds=worlds, episodes=episodes)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return EXIT_RUNTIME
    print("dataset valid")
    return EXIT_OK


def cmd_dump_rules(args) -> int:
    rules = default_ruleset()
    doc = {action.name: list(rules.patterns_for(action))
           for action in Action}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_engine_server(args) -> int:
    from .server import serve
    return serve()


# -- parser ------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, help="single seed for all randomness")


def _add_run_flags(p):
    p.add_argument("--world", help="world file")
    p.add_argument("--episodes", help="episodes JSON file")
    p.add_argument("--policy", choices=("oracle", "scripted", "vlm"))
    p.add_argument("--script", help="reply script for the scripted policy")
    p.add_argument("--out", help="output directory")
    p.add_argument("--map-cells", dest="map_cells", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--render-scale", dest="render_scale", type=int)
    p.add_argument("--success-radius", dest="success_radius", type=float)
    p.add_argument("--history-frames", dest="history_frames", type=int)
    p.add_argument("--intr-width", dest="intr_width", type=int)
    p.add_argument("--intr-height", dest="intr_height", type=int)
    p.add_argument("--forward-step", dest="forward_step", type=float)
    p.add_argument("--turn-angle-deg", dest="turn_angle_deg", type=float)
    p.add_argument("--agent-radius", dest="agent_radius", type=float)
    p.add_argument("--save-frames", dest="save_frames",
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--light", action=argparse.BooleanOptionalAction,
                   help="skip the mapping pipeline (oracle/scripted only)")
    p.add_argument("--vlm-base-url", dest="vlm_base_url")
    p.add_argument("--vlm-model", dest="vlm_model")
    p.add_argument("--vlm-auth-env", dest="vlm_auth_env")
    p.add_argument("--vlm-timeout", dest="vlm_timeout", type=float)
    p.add_argument("--vlm-retries", dest="vlm_retries", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asmnav",
        description="Annotated semantic map navigation toolkit")
    parser.add_argument("--version", action="version",
                        version=f"asmnav {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run-episode", help="run one episode end to end")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--episode-id", dest="episode_id",
                   help="select an episode; default first in file")
    p.set_defaults(func=cmd_run_episode)

    p = sub.add_parser("batch-eval", help="run and score many episodes")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("pairs", nargs="+", metavar="WORLD:EPISODES",
                   help="world/episode file pairs")
    p.add_argument("--workers", type=int, help="parallel episodes")
    p.set_defaults(func=cmd_batch_eval)

    p = sub.add_parser("render-asm", help="render a saved map snapshot")
    _add_common(p)
    p.add_argument("--snapshot", required=True, help="map snapshot file")
    p.add_argument("--out-png", dest="out_png", required=True)
    p.add_argument("--placements", help="also write label placements JSON")
    p.add_argument("--tau", type=int)
    p.add_argument("--render-scale", dest="render_scale", type=int)
    p.set_defaults(func=cmd_render_asm)

    p = sub.add_parser("bench-memory",
                       help="map size at step checkpoints vs frame history")
    _add_common(p)
    p.add_argument("--steps", help="comma-separated checkpoints")
    p.add_argument("--map-cells", dest="map_cells", type=int)
    p.add_argument("--intr-width", dest="intr_width", type=int)
    p.add_argument("--intr-height", dest="intr_height", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--render-scale", dest="render_scale", type=int)
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(func=cmd_bench_memory)

    p = sub.add_parser("collect-dataset",
                       help="collect one training-data phase")
    _add_common(p)
    p.add_argument("phase", choices=("gt", "dagger", "collision"))
    p.add_argument("--world", help="world file")
    p.add_argument("--episodes", help="episodes JSON file")
    p.add_argument("--generate", type=int,
                   help="generate N episodes instead of loading a file")
    p.add_argument("--min-dist", dest="min_dist", type=float,
                   help="minimum start-goal distance when generating")
    p.add_argument("--out", help="dataset output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--rollout", choices=("oracle", "forward", "scripted"),
                   help="dagger rollout policy")
    p.add_argument("--script", help="reply script for scripted rollout")
    p.add_argument("--map-cells", dest="map_cells", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--render-scale", dest="render_scale", type=int)
    p.add_argument("--success-radius", dest="success_radius", type=float)
    p.add_argument("--intr-width", dest="intr_width", type=int)
    p.add_argument("--intr-height", dest="intr_height", type=int)
    p.add_argument("--override-prob", dest="override_prob", type=float,
                   help="collision phase: probability of barging when "
                        "blocked")
    p.set_defaults(func=cmd_collect_dataset)

    p = sub.add_parser("validate-dataset", help="check a dataset directory")
    _add_common(p)
    p.add_argument("--root", required=True, help="dataset directory")
    p.add_argument("--world", help="world file for deep label re-query")
    p.add_argument("--episodes", help="episodes file for deep re-query")
    p.set_defaults(func=cmd_validate_dataset)

    p = sub.add_parser("dump-rules",
                       help="print the action phrase rules as JSON")
    _add_common(p)
    p.set_defaults(func=cmd_dump_rules)

    p = sub.add_parser("engine-server",
                       help="serve the engine over stdin/stdout JSON lines")
    _add_common(p)
    p.set_defaults(func=cmd_engine_server)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError, FormatError, NoMatchError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AsmNavError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
