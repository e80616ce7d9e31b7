"""Three-phase step-wise dataset collection.

Phase GT records the expert's own rollouts.  Phase DAGGER rolls out an
arbitrary policy but labels every visited state with the expert's action
at that state.  Phase COLLISION perturbs the expert into collisions and
records the prescribed recovery: the rotations that clear the blockage,
through the first forward move that resumes progress.

On disk a dataset is one directory per episode holding the step frames
and a `records.jsonl`, plus a single top-level `manifest.json`.  Counts,
file references, and the config hash are re-checkable with `validate`.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from .actions import Action, parse_action
from .errors import FormatError, InputError, NoMatchError, PlanningError
from .geometry import AgentPose
from .planning import path_length, plan_path
from .policy import PolicyInput, oracle_decide
from .runner import DEFAULT_SUCCESS_RADIUS, MappingPipeline, MapParams
from .simenv import Episode, EpisodeSpec, World, make_intrinsics, try_move

FORMAT_VERSION = 1

PHASE_GT = "GT"
PHASE_DAGGER = "DAGGER"
PHASE_COLLISION = "COLLISION"
PHASES = (PHASE_GT, PHASE_DAGGER, PHASE_COLLISION)

_ROTATIONS = (Action.TURN_LEFT, Action.TURN_RIGHT)


@dataclass(frozen=True)
class StepRecord:
    """One (state, label) training pair.

    `step` is the record's index within its episode file; `pose` is the
    state the label applies to, kept so labels can be re-derived.
    """
    episode_id: str
    step: int
    observation_ref: str
    asm_ref: str
    instruction: str
    action_text: str
    action: str              # Action name
    phase: str
    pose: tuple              # (x, y, yaw)
    recovery_seq: int = -1   # ordinal of the collision sequence, else -1

    def __post_init__(self):
        if self.phase not in PHASES:
            raise InputError(f"unknown phase {self.phase!r}")
        if self.action not in Action.__members__:
            raise InputError(f"unknown action name {self.action!r}")
        object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "StepRecord":
        try:
            return cls(**{k: d[k] for k in cls.__dataclass_fields__})
        except KeyError as e:
            raise FormatError(f"record missing field {e}") from None


@dataclass(frozen=True)
class CollectConfig:
    """Everything that shapes record content; hashed into the manifest."""
    seed: int = 0
    success_radius: float = DEFAULT_SUCCESS_RADIUS
    intr_width: int = 64
    intr_height: int = 48
    map_cells: int = 160
    tau: int = 10
    render_scale: int = 2
    forward_override_prob: float = 0.9    # collision phase only
    nomatch_budget: int = 3               # dagger phase only

    def to_json_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class EpisodeEntry:
    episode_id: str
    world: str
    records: int
    directory: str
    truncated: bool = False


@dataclass
class DatasetManifest:
    phase_counts: dict
    episodes: list
    skipped: list                      # [{"episode_id", "world", "reason"}]
    config: dict
    config_hash: str
    worlds: list
    format_version: int = FORMAT_VERSION

    @property
    def total_records(self) -> int:
        return sum(self.phase_counts.values())

    def to_json_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "phase_counts": dict(self.phase_counts),
            "total_records": self.total_records,
            "worlds": list(self.worlds),
            "config": dict(self.config),
            "config_hash": self.config_hash,
            "episodes": [asdict(e) for e in self.episodes],
            "skipped": list(self.skipped),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetManifest":
        try:
            return cls(
                phase_counts=dict(d["phase_counts"]),
                episodes=[EpisodeEntry(**e) for e in d["episodes"]],
                skipped=list(d["skipped"]),
                config=dict(d["config"]),
                config_hash=d["config_hash"],
                worlds=list(d["worlds"]),
                format_version=int(d["format_version"]),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"malformed manifest: {e}") from None

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path, "r", encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except ValueError as e:
                raise FormatError(f"{path}: not valid JSON: {e}") from None
        return cls.from_json_dict(doc)


# -- episode generation ----------------------------------------------------


_GOAL_TEMPLATES = (
    "Walk over to the {cat} and stop next to it.",
    "Head toward the {cat}, then stop.",
    "Go to the {cat} and wait there.",
)
_PLAIN_TEMPLATES = (
    "Cross the room to the marked spot and stop.",
    "Navigate to the target location, then stop.",
    "Make your way to the goal point and stop there.",
)


def _free_cell_centers(world: World, radius: float) -> list:
    out = []
    for ix in range(world.width_cells):
        for iy in range(world.height_cells):
            x = (ix + 0.5) * world.resolution
            y = (iy + 0.5) * world.resolution
            if not world.disk_collides(x, y, radius):
                out.append((x, y))
    return out


def _nearest_category(world: World, x: float, y: float, max_dist: float):
    best = None
    best_d = max_dist
    for ix in range(world.width_cells):
        for iy in range(world.height_cells):
            c = int(world.category[ix, iy])
            if c == 0:
                continue
            d = math.hypot((ix + 0.5) * world.resolution - x,
                           (iy + 0.5) * world.resolution - y)
            if d < best_d:
                best_d = d
                best = world.category_names[c - 1]
    return best


def generate_episodes(world: World, count: int, seed: int,
                      min_dist: float = 0.6,
                      agent_radius: float = 0.18,
                      turn_angle_deg: float = 15.0) -> list:
    """Deterministically sample solvable point-goal episodes.

    Starts and goals are free cell centers with full disk clearance and a
    path between them at the given radius, so the expert can always reach
    the goal cell itself (no goal snapping involved).
    """
    if count <= 0:
        raise InputError("count must be positive")
    rng = random.Random(seed)
    centers = _free_cell_centers(world, agent_radius)
    if len(centers) < 2:
        raise InputError(f"{world.name}: no room for start/goal pairs")
    headings = int(round(360.0 / turn_angle_deg))
    episodes = []
    attempts = 0
    while len(episodes) < count:
        attempts += 1
        if attempts > 200 * count:
            raise PlanningError(
                f"{world.name}: could not generate {count} episodes "
                f"(got {len(episodes)})")
        sx, sy = rng.choice(centers)
        gx, gy = rng.choice(centers)
        if math.hypot(gx - sx, gy - sy) < min_dist:
            continue
        if plan_path(world, (sx, sy), (gx, gy), agent_radius) is None:
            continue
        ref = plan_path(world, (sx, sy), (gx, gy), 0.0)
        if ref is None or len(ref) < 2:
            continue
        yaw = math.radians(rng.randrange(headings) * turn_angle_deg)
        cat = _nearest_category(world, gx, gy, max_dist=0.45)
        if cat is not None:
            text = rng.choice(_GOAL_TEMPLATES).format(cat=cat)
        else:
            text = rng.choice(_PLAIN_TEMPLATES)
        budget = int(math.ceil(path_length(ref) / 0.25)) * 4 + 48
        episodes.append(EpisodeSpec(
            episode_id=f"{world.name}_s{seed}_{len(episodes):03d}",
            instruction=text,
            start=AgentPose(sx, sy, yaw),
            goal=(gx, gy),
            reference_path=tuple(ref),
            max_steps=budget,
        ))
    return episodes


# -- collection ------------------------------------------------------------


def _normalize(worlds, episodes) -> list:
    """-> [(World, EpisodeSpec)]; accepts one world or a name->World map."""
    if isinstance(worlds, World):
        table = {worlds.name: worlds}
        default = worlds.name
    else:
        table = dict(worlds)
        default = next(iter(table)) if len(table) == 1 else None
    pairs = []
    for item in episodes:
        if isinstance(item, EpisodeSpec):
            if default is None:
                raise InputError(
                    f"{item.episode_id}: world name required when collecting "
                    f"from {len(table)} worlds")
            name = default
            spec = item
        else:
            name, spec = item
        if name not in table:
            raise InputError(f"{spec.episode_id}: unknown world {name!r}")
        pairs.append((table[name], spec))
    return pairs


class _EpisodeWriter:
    """Frames and records for one episode, under its own directory."""

    def __init__(self, out_dir: str, episode_id: str):
        self.episode_id = episode_id
        self.dir = os.path.join(out_dir, episode_id)
        os.makedirs(self.dir, exist_ok=True)
        self.records = []

    def add(self, phase: str, spec: EpisodeSpec, pose: AgentPose,
            obs_png: bytes, asm_png: bytes, text: str, action: Action,
            recovery_seq: int = -1) -> None:
        k = len(self.records)
        obs_ref = f"{self.episode_id}/step_{k:04d}_obs.png"
        asm_ref = f"{self.episode_id}/step_{k:04d}_asm.png"
        base = os.path.dirname(self.dir)
        with open(os.path.join(base, obs_ref), "wb") as f:
            f.write(obs_png)
        with open(os.path.join(base, asm_ref), "wb") as f:
            f.write(asm_png)
        self.records.append(StepRecord(
            episode_id=self.episode_id, step=k,
            observation_ref=obs_ref, asm_ref=asm_ref,
            instruction=spec.instruction, action_text=text,
            action=action.name, phase=phase,
            pose=(pose.x, pose.y, pose.yaw), recovery_seq=recovery_seq))

    def drop_tail(self, keep: int) -> None:
        base = os.path.dirname(self.dir)
        for rec in self.records[keep:]:
            for ref in (rec.observation_ref, rec.asm_ref):
                try:
                    os.remove(os.path.join(base, ref))
                except FileNotFoundError:
                    pass
        del self.records[keep:]

    def finish(self) -> None:
        path = os.path.join(self.dir, "records.jsonl")
        with open(path, "w", encoding="utf-8") as f:
            for rec in self.records:
                f.write(json.dumps(rec.to_json_dict(), sort_keys=True))
                f.write("\n")

    def discard(self) -> None:
        self.drop_tail(0)
        for name in ("records.jsonl",):
            try:
                os.remove(os.path.join(self.dir, name))
            except FileNotFoundError:
                pass
        try:
            os.rmdir(self.dir)
        except OSError:
            pass


def _episode_rng(cfg: CollectConfig, episode_id: str) -> random.Random:
    return random.Random(zlib.crc32(f"{cfg.seed}|{episode_id}".encode()))


def _pipeline(world: World, spec: EpisodeSpec, cfg: CollectConfig):
    intr = make_intrinsics(cfg.intr_width, cfg.intr_height)
    params = MapParams(width_cells=cfg.map_cells, height_cells=cfg.map_cells,
                       resolution=world.resolution, tau=cfg.tau,
                       render_scale=cfg.render_scale)
    return MappingPipeline(world, spec.start, intr, params)


def _oracle(world, pose, spec, cfg: CollectConfig):
    return oracle_decide(world, pose, spec, phrasing_seed=cfg.seed,
                         success_radius=cfg.success_radius)


def _collect(worlds, episodes, out_dir, cfg: CollectConfig, phase: str,
             run_fn, workers: int = 1) -> DatasetManifest:
    pairs = _normalize(worlds, episodes)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    skipped = []

    def one(pair):
        world, spec = pair
        writer = _EpisodeWriter(out_dir, spec.episode_id)
        try:
            truncated = run_fn(world, spec, writer)
        except (PlanningError, InputError) as e:
            writer.discard()
            return ("skip", {"episode_id": spec.episode_id,
                             "world": world.name, "reason": str(e)})
        if not writer.records:
            writer.discard()
            return ("empty", spec.episode_id)
        writer.finish()
        entry = EpisodeEntry(episode_id=spec.episode_id, world=world.name,
                             records=len(writer.records),
                             directory=spec.episode_id, truncated=truncated)
        return ("ok", entry)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    for kind, payload in results:
        if kind == "ok":
            entries.append(payload)
        elif kind == "skip":
            skipped.append(payload)

    entries.sort(key=lambda e: e.episode_id)
    skipped.sort(key=lambda s: s["episode_id"])
    counts = {p: 0 for p in PHASES}
    counts[phase] = sum(e.records for e in entries)
    manifest = DatasetManifest(
        phase_counts=counts, episodes=entries, skipped=skipped,
        config=cfg.to_json_dict(), config_hash=cfg.hash(),
        worlds=sorted({w.name for w, _ in pairs}))
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def collect_gt(worlds, episodes, out_dir, cfg: CollectConfig = CollectConfig(),
               workers: int = 1) -> DatasetManifest:
    """Expert rollouts; every step becomes a (state, expert action) pair."""

    def run(world, spec, writer):
        pipe = _pipeline(world, spec, cfg)
        episode = Episode(world, spec)
        pose = spec.start
        for _ in range(spec.max_steps):
            obs_png, asm_png = pipe.observe(pose)
            out = _oracle(world, pose, spec, cfg)
            writer.add(PHASE_GT, spec, pose, obs_png, asm_png,
                       out.text, out.parsed)
            result = episode.step(out.parsed)
            pose = result.new_pose
            if result.done:
                if not episode.stopped:
                    raise PlanningError(
                        f"{spec.episode_id}: expert exhausted the step budget")
                return False
        raise PlanningError(f"{spec.episode_id}: expert did not terminate")

    return _collect(worlds, episodes, out_dir, cfg, PHASE_GT, run, workers)


def collect_dagger(worlds, episodes, rollout_policy, out_dir,
                   cfg: CollectConfig = CollectConfig(),
                   workers: int = 1) -> DatasetManifest:
    """Roll out a policy, label every visited state with the expert.

    `rollout_policy` is a provider called as rollout_policy(world, spec)
    once per episode; it returns a decide callable used as
    decide(pose, policy_input) -> PolicyOutput.  The decide's action
    drives the simulator while the expert's action at the same state
    becomes the record label.  Replies that fail to parse fall back to a
    left turn; after `cfg.nomatch_budget` consecutive failures the
    episode is truncated.
    """

    def run(world, spec, writer):
        pipe = _pipeline(world, spec, cfg)
        decide = rollout_policy(world, spec)
        episode = Episode(world, spec)
        pose = spec.start
        failures = 0
        for step in range(spec.max_steps):
            obs_png, asm_png = pipe.observe(pose)
            label = _oracle(world, pose, spec, cfg)
            writer.add(PHASE_DAGGER, spec, pose, obs_png, asm_png,
                       label.text, label.parsed)
            inp = PolicyInput(instruction=spec.instruction, asm_png=asm_png,
                              observation_png=obs_png, step_index=step)
            out = decide(pose, inp)
            if out.parsed is None:
                failures += 1
                if failures >= cfg.nomatch_budget:
                    return True
                executed = Action.TURN_LEFT
            else:
                failures = 0
                executed = out.parsed
            result = episode.step(executed)
            pose = result.new_pose
            if result.done:
                return False
        return False

    return _collect(worlds, episodes, out_dir, cfg, PHASE_DAGGER, run,
                    workers)


def collect_collision(worlds, episodes, out_dir,
                      cfg: CollectConfig = CollectConfig(),
                      workers: int = 1) -> DatasetManifest:
    """Provoke collisions, record the expert's recovery prescription.

    The expert is rolled out, but whenever its forward arc is blocked the
    rollout barges ahead anyway with some probability, the way a sloppy
    policy would.  After each collision, every expert label is recorded
    until the expert next says FORWARD (inclusive); sequences are kept
    only if they open with a rotation, which a blocked state guarantees
    unless the goal is already in reach.
    """

    def run(world, spec, writer):
        pipe = _pipeline(world, spec, cfg)
        rng = _episode_rng(cfg, spec.episode_id)
        episode = Episode(world, spec)
        pose = spec.start
        recovering = False
        seq = -1
        seq_start = 0
        for _ in range(spec.max_steps):
            obs_png, asm_png = pipe.observe(pose)
            out = _oracle(world, pose, spec, cfg)
            action = out.parsed
            if recovering:
                writer.add(PHASE_COLLISION, spec, pose, obs_png, asm_png,
                           out.text, action, recovery_seq=seq)
                if action is Action.FORWARD:
                    recovering = False
            elif action is not Action.STOP:
                _, blocked = try_move(world, pose, Action.FORWARD)
                if blocked and rng.random() < cfg.forward_override_prob:
                    action = Action.FORWARD
            result = episode.step(action)
            if result.collided and not recovering:
                nxt = _oracle(world, result.new_pose, spec, cfg)
                if nxt.parsed in _ROTATIONS:
                    recovering = True
                    seq += 1
                    seq_start = len(writer.records)
            pose = result.new_pose
            if result.done:
                break
        if recovering:
            # an unfinished sequence has no terminating FORWARD; drop it
            writer.drop_tail(seq_start)
        return False

    return _collect(worlds, episodes, out_dir, cfg, PHASE_COLLISION, run,
                    workers)


# -- validation ------------------------------------------------------------


def load_records(root, entry: EpisodeEntry) -> list:
    path = os.path.join(root, entry.directory, "records.jsonl")
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f):
            try:
                out.append(StepRecord.from_json_dict(json.loads(line)))
            except ValueError as e:
                raise FormatError(f"{path}:{ln + 1}: {e}") from None
    return out


def validate_dataset(root, worlds=None, episodes=None) -> list:
    """Check a dataset directory; returns a list of problems (empty = ok).

    With `worlds` (name -> World) and `episodes` (episode_id ->
    EpisodeSpec) the expert is re-queried at every recorded state, which
    verifies label correctness in addition to structural integrity.
    """
    problems = []
    manifest_path = os.path.join(root, "manifest.json")
    if not os.path.isfile(manifest_path):
        return [f"missing manifest.json under {root}"]
    try:
        manifest = DatasetManifest.load(manifest_path)
    except FormatError as e:
        return [str(e)]
    if manifest.format_version != FORMAT_VERSION:
        return [f"unsupported format version {manifest.format_version}"]

    try:
        cfg = CollectConfig(**manifest.config)
    except TypeError as e:
        problems.append(f"manifest config malformed: {e}")
        cfg = None
    if cfg is not None and cfg.hash() != manifest.config_hash:
        problems.append("config hash does not match embedded config")

    unknown = set(manifest.phase_counts) - set(PHASES)
    if unknown:
        problems.append(f"unknown phases in manifest: {sorted(unknown)}")

    seen_counts = {p: 0 for p in PHASES}
    for entry in manifest.episodes:
        prefix = f"episode {entry.episode_id}"
        try:
            records = load_records(root, entry)
        except (OSError, FormatError, InputError) as e:
            problems.append(f"{prefix}: {e}")
            continue
        if len(records) != entry.records:
            problems.append(f"{prefix}: manifest says {entry.records} "
                            f"records, file has {len(records)}")
        for i, rec in enumerate(records):
            where = f"{prefix} step {i}"
            if rec.step != i:
                problems.append(f"{where}: step index {rec.step} not "
                                f"contiguous")
            if rec.episode_id != entry.episode_id:
                problems.append(f"{where}: episode_id mismatch")
            if rec.phase in seen_counts:
                seen_counts[rec.phase] += 1
            for ref in (rec.observation_ref, rec.asm_ref):
                if not os.path.isfile(os.path.join(root, ref)):
                    problems.append(f"{where}: missing file {ref}")
            try:
                parsed = parse_action(rec.action_text)
            except NoMatchError:
                problems.append(f"{where}: label does not parse: "
                                f"{rec.action_text!r}")
                continue
            if parsed.name != rec.action:
                problems.append(f"{where}: action {rec.action} does not "
                                f"match parse of {rec.action_text!r}")
        problems.extend(_check_sequences(prefix, records))
        if worlds is not None and episodes is not None and cfg is not None:
            problems.extend(_requery(prefix, entry, records, worlds,
                                     episodes, cfg))

    for p in PHASES:
        want = manifest.phase_counts.get(p, 0)
        if seen_counts[p] != want:
            problems.append(f"phase {p}: manifest count {want}, "
                            f"found {seen_counts[p]}")
    return problems


def _check_sequences(prefix: str, records: list) -> list:
    problems = []
    last_seq = None
    for rec in records:
        if rec.phase != PHASE_COLLISION:
            if rec.recovery_seq != -1:
                problems.append(f"{prefix} step {rec.step}: recovery_seq on "
                                f"a {rec.phase} record")
            continue
        if rec.recovery_seq < 0:
            problems.append(f"{prefix} step {rec.step}: collision record "
                            f"without a sequence ordinal")
            continue
        if rec.recovery_seq != last_seq:
            last_seq = rec.recovery_seq
            if Action[rec.action] not in _ROTATIONS:
                problems.append(
                    f"{prefix} step {rec.step}: recovery sequence "
                    f"{rec.recovery_seq} opens with {rec.action}")
    return problems


def _requery(prefix, entry, records, worlds, episodes, cfg) -> list:
    problems = []
    world = worlds.get(entry.world)
    if world is None:
        return [f"{prefix}: world {entry.world!r} not supplied"]
    for rec in records:
        spec = episodes.get(rec.episode_id)
        if spec is None:
            problems.append(f"{prefix}: no episode spec for re-query")
            break
        out = oracle_decide(world, AgentPose(*rec.pose), spec,
                            phrasing_seed=cfg.seed,
                            success_radius=cfg.success_radius)
        if out.parsed.name != rec.action:
            problems.append(
                f"{prefix} step {rec.step}: expert prescribes "
                f"{out.parsed.name} at the recorded state, label says "
                f"{rec.action}")
    return problems


def summarize_manifest(manifest: DatasetManifest) -> str:
    lines = [f"format v{manifest.format_version}, "
             f"{manifest.total_records} records, "
             f"{len(manifest.episodes)} episodes, "
             f"{len(manifest.skipped)} skipped"]
    for p in PHASES:
        lines.append(f"  {p:<10} {manifest.phase_counts.get(p, 0)}")
    return "\n".join(lines)
