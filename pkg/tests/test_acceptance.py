"""End-to-end acceptance gate.

One test per headline capability, each at its stated tolerance and with
an explicit runtime budget.  A per-criterion pass/fail summary is
printed at the end of the session (see conftest.py).
"""

import json
import math
import random
import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest

from asmnav.actions import parse_action
from asmnav.annotation import annotate, extract_regions, place_labels
from asmnav.cli import bench_memory
from asmnav.dataset import (CollectConfig, collect_collision, collect_dagger,
                            collect_gt, generate_episodes, load_records,
                            validate_dataset)
from asmnav.errors import NoMatchError
from asmnav.geometry import (DEFAULT_OBSTACLE_BAND, AgentPose, GridSpec,
                             centered_grid)
from asmnav.metrics import TrajectoryLog, evaluate
from asmnav.policy import VlmEndpointConfig, oracle_decide
from asmnav.runner import (MapParams, ingest_frame, make_oracle_policy,
                           make_scripted_policy, make_vlm_policy, run_episode,
                           score)
from asmnav.semantic_map import (CH_EXPLORED, CH_OBSTACLE, CH_OBJECT_BASE,
                                 CategoryTable, DEFAULT_CATEGORIES, init_map)
from asmnav.simenv import (Action, EpisodeSpec, FREE, load_episodes,
                           load_world, make_intrinsics, sense)

FIXTURES = Path(__file__).parent.parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

ALL_WORLDS = ("apartment_small", "corridor_l", "cluttered_room",
              "open_hall", "studio_flat")


def world_file(name):
    return str(FIXTURES / "worlds" / f"{name}.world")


# -- memory constancy ------------------------------------------------------


def test_memory_constancy():
    t0 = time.monotonic()
    report = bench_memory((1, 10, 100, 300))
    elapsed = time.monotonic() - t0

    assert report["checkpoints"] == [1, 10, 100, 300]
    # Map state is byte-identical at every checkpoint.
    assert len(set(report["asm_bytes"])) == 1
    # The frame-history baseline grows exactly linearly.
    per = report["per_frame_bytes"]
    assert report["history_bytes"] == [1 * per, 10 * per, 100 * per, 300 * per]
    assert report["history_bytes"][3] == 300 * report["history_bytes"][0]
    assert elapsed < 120.0, f"memory benchmark took {elapsed:.0f}s"


# -- mapping fidelity --------------------------------------------------------


def surface_rasterization(world, band=DEFAULT_OBSTACLE_BAND):
    """Solid cells a depth camera sweep can record: side faces exposed to
    free space or to a lower solid neighbor, plus visible low tops."""
    low, high = band
    cam_h = AgentPose(0.0, 0.0, 0.0).camera_height
    solid = world.kind != FREE
    h = world.cell_height
    gt = np.zeros_like(solid)
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ncell = np.roll(world.kind, (-dx, -dy), axis=(0, 1))
        nh = np.roll(h, (-dx, -dy), axis=(0, 1))
        edge = np.ones_like(solid)
        if dx == 1:
            edge[-1, :] = False
        elif dx == -1:
            edge[0, :] = False
        if dy == 1:
            edge[:, -1] = False
        elif dy == -1:
            edge[:, 0] = False
        open_side = (ncell == FREE) | ((ncell != FREE) & (nh < h) & (nh < high))
        gt |= solid & edge & open_side & (h > low)
    gt |= solid & (h >= low) & (h < cam_h)
    return gt


def test_mapping_fidelity():
    t0 = time.monotonic()
    intr = make_intrinsics(64, 48)
    for name in ("corridor_l", "cluttered_room", "apartment_small"):
        world = load_world(world_file(name))
        grid = GridSpec(world.width_cells, world.height_cells,
                        world.resolution, 0.0, 0.0)
        cats = tuple(world.category_names) or DEFAULT_CATEGORIES
        smap = init_map(grid, categories=cats)
        for ix in range(0, world.width_cells, 4):
            for iy in range(0, world.height_cells, 4):
                x = (ix + 0.5) * world.resolution
                y = (iy + 0.5) * world.resolution
                if world.disk_collides(x, y, 0.18):
                    continue
                for k in range(8):
                    pose = AgentPose(x, y, 2.0 * math.pi * k / 8)
                    depth, mask = sense(world, pose, intr)
                    ingest_frame(smap, intr, depth, mask, pose,
                                 DEFAULT_OBSTACLE_BAND)
        pred = smap.channels[CH_OBSTACLE]
        gt = surface_rasterization(world)
        iou = (pred & gt).sum() / (pred | gt).sum()
        assert iou >= 0.9, f"{name}: obstacle IoU {iou:.4f}"
        # Every obstacle cell must also be marked explored.
        assert not (pred & ~smap.channels[CH_EXPLORED]).any(), name
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"mapping sweep took {elapsed:.0f}s"


# -- connected-component oracle equivalence ----------------------------------


def flood_components(mask):
    """Plain BFS flood fill, 8-connectivity, one dict per component."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    out = []
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or seen[r0, c0]:
                continue
            cells = []
            queue = deque([(r0, c0)])
            seen[r0, c0] = True
            while queue:
                r, c = queue.popleft()
                cells.append((r, c))
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        rr, cc = r + dr, c + dc
                        if (0 <= rr < h and 0 <= cc < w and mask[rr, cc]
                                and not seen[rr, cc]):
                            seen[rr, cc] = True
                            queue.append((rr, cc))
            rows = [r for r, _ in cells]
            cols = [c for _, c in cells]
            out.append({
                "cells": frozenset(cells),
                "area": len(cells),
                "centroid": (sum(rows) / len(cells), sum(cols) / len(cells)),
                "bbox": (min(rows), min(cols), max(rows), max(cols)),
            })
    out.sort(key=lambda g: (g["bbox"][0], g["bbox"][1]))
    return out


def map_with_mask(mask):
    h, w = mask.shape
    m = init_map(centered_grid(AgentPose(0.0, 0.0, 0.0), w, h, 0.05),
                 ("chair",))
    m.channels[CH_OBJECT_BASE] = mask[::-1, :].T
    return m


def test_region_extraction_oracle():
    t0 = time.monotonic()
    rng = random.Random(97)
    for trial in range(200):
        h = rng.randint(2, 128)
        w = rng.randint(2, 128)
        density = rng.choice((0.05, 0.15, 0.3, 0.5, 0.7))
        mask = np.array([[rng.random() < density for _ in range(w)]
                         for _ in range(h)])
        expected = flood_components(mask)
        by_tau = {}
        for tau in (1, 5, 10):
            got = extract_regions(map_with_mask(mask), 0, tau=tau)
            want = [g for g in expected if g["area"] >= tau]
            assert len(got) == len(want), (trial, tau)
            for region, ref in zip(got, want):
                assert region.cells == ref["cells"], (trial, tau)
                assert region.area == ref["area"]
                assert region.centroid == pytest.approx(ref["centroid"])
                assert region.bbox == ref["bbox"]
            by_tau[tau] = {r.cells for r in got}
        # Raising tau only ever removes regions.
        assert by_tau[10] <= by_tau[5] <= by_tau[1], trial
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0, f"component sweep took {elapsed:.0f}s"


# -- annotation determinism ---------------------------------------------------


def boxes_overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def test_annotation_determinism():
    m = init_map(centered_grid(AgentPose(0.0, 0.0, 0.0), 96, 96, 0.05),
                 ("chair", "plant", "bed"))
    m.channels[4, 20:34, 60:74] = True
    m.channels[6, 70:80, 30:38] = True
    m.channels[1, 10:86, 10:86] = True
    m.channels[0, 10:86, 85] = True
    m.channels[0, 10:86, 10] = True
    from asmnav.geometry import GridHits
    for i in range(1, 12):
        m.update(GridHits(), AgentPose(0.05 * i, 0.02 * i, 0.2))
    assert annotate(m).to_png() == (GOLDEN / "asm_fixture.png").read_bytes()

    # Visible labels never overlap, over randomized region layouts.
    from asmnav.annotation import Region
    table = CategoryTable(DEFAULT_CATEGORIES)
    rng = random.Random(4242)
    for _ in range(100):
        regions = []
        for _ in range(rng.randint(2, 12)):
            r = rng.uniform(2, 60)
            c = rng.uniform(2, 60)
            regions.append(Region(
                category=rng.randrange(len(DEFAULT_CATEGORIES)),
                cells=frozenset({(int(r), int(c))}),
                area=rng.randint(10, 500),
                centroid=(r, c),
                bbox=(int(r), int(c), int(r), int(c))))
        placements = place_labels(regions, table, render_scale=2,
                                  image_size=(128, 128))
        visible = [p for p in placements if p.visible]
        for i in range(len(visible)):
            for j in range(i + 1, len(visible)):
                assert not boxes_overlap(visible[i].rendered_bbox,
                                         visible[j].rendered_bbox)


# -- action parser -----------------------------------------------------------

PHRASE_CORPUS = [
    ("move forward", Action.FORWARD),
    ("proceed", Action.FORWARD),
    ("turn left", Action.TURN_LEFT),
    ("rotate left", Action.TURN_LEFT),
    ("turn right", Action.TURN_RIGHT),
    ("rotate right", Action.TURN_RIGHT),
    ("stop", Action.STOP),
    ("halt", Action.STOP),
    ("wait", Action.STOP),
]

CURATED_VARIANTS = [
    # case
    ("MOVE FORWARD", Action.FORWARD),
    ("Move Forward", Action.FORWARD),
    ("PROCEED", Action.FORWARD),
    ("Turn LEFT", Action.TURN_LEFT),
    ("TURN RIGHT", Action.TURN_RIGHT),
    ("Rotate Left", Action.TURN_LEFT),
    ("ROTATE RIGHT", Action.TURN_RIGHT),
    ("STOP", Action.STOP),
    ("Halt", Action.STOP),
    ("WAIT", Action.STOP),
    # punctuation and whitespace
    ("move forward.", Action.FORWARD),
    ("  proceed  ", Action.FORWARD),
    ('"turn left"', Action.TURN_LEFT),
    ("turn right!", Action.TURN_RIGHT),
    ("stop.", Action.STOP),
    ("(halt)", Action.STOP),
    ("go straight...", Action.FORWARD),
    ("'wait'", Action.STOP),
    # filler words inside the pattern
    ("move slowly forward", Action.FORWARD),
    ("move carefully forward", Action.FORWARD),
    ("turn slightly left", Action.TURN_LEFT),
    ("turn sharply right", Action.TURN_RIGHT),
    ("rotate gently left", Action.TURN_LEFT),
    ("rotate quickly right", Action.TURN_RIGHT),
    ("step boldly forward", Action.FORWARD),
    ("keep on going", Action.FORWARD),
    ("stand very still", Action.STOP),
    ("walk straight forward", Action.FORWARD),
    # rearrangement
    ("forward move", Action.FORWARD),
    ("left turn", Action.TURN_LEFT),
    ("right turn", Action.TURN_RIGHT),
    ("forward step", Action.FORWARD),
    ("left rotate", Action.TURN_LEFT),
    ("right veer", Action.TURN_RIGHT),
    ("forward walk", Action.FORWARD),
    ("ahead move", Action.FORWARD),
    # conversational prefixes
    ("Okay, move forward", Action.FORWARD),
    ("I think you should turn left", Action.TURN_LEFT),
    ("The best next action is to turn right", Action.TURN_RIGHT),
    ("Answer: stop", Action.STOP),
    ("Sure: proceed", Action.FORWARD),
    ("Based on the map you must rotate left", Action.TURN_LEFT),
    ("please veer right", Action.TURN_RIGHT),
    ("you should halt", Action.STOP),
    ("Let's advance", Action.FORWARD),
    ("My decision: go left", Action.TURN_LEFT),
    ("Final answer - go right", Action.TURN_RIGHT),
    ("It would be wise to wait", Action.STOP),
    # trailing context
    ("move forward to the sofa", Action.FORWARD),
    ("turn left at the plant", Action.TURN_LEFT),
    ("turn right near the window", Action.TURN_RIGHT),
    ("stop beside the bed", Action.STOP),
    ("advance toward the door", Action.FORWARD),
    ("spin left then look around", Action.TURN_LEFT),
]

DISTRACTORS = [
    "the kitchen counter is cluttered with dishes",
    "a red sofa sits under the window",
    "sunlight fills the narrow hallway",
    "the bedroom door was painted blue",
    "two lamps flank the wooden shelf",
    "a cat sleeps on the armchair",
    "the fridge hums in the corner",
    "dust covers the old television",
    "the plant needs more water",
    "a mirror hangs above the sink",
    "the carpet pattern looks faded",
    "boxes are stacked near the wardrobe",
    "the ceiling fan rattles softly",
    "a painting of mountains decorates the wall",
    "the table wobbles on uneven legs",
    "curtains block most of the daylight",
    "the toilet seat is cracked",
    "someone forgot a mug on the counter",
    "the bathroom tiles are pale green",
    "a ladder leans against the bookcase",
    "the radiator clicks as it warms",
    "crumbs litter the breakfast table",
    "the closet smells of cedar",
    "a rug covers the scratched floorboards",
    "the chandelier is missing two bulbs",
    "rain streaks the living room window",
    "the oven clock blinks midnight",
    "a spider web spans the corner",
    "the sofa cushions are mismatched",
    "fresh flowers brighten the dim room",
    "the staircase creaks on the third tread",
    "a chessboard lies abandoned mid-game",
    "the freezer is crusted with ice",
    "socks are scattered around the laundry basket",
    "the desk drawer refuses to close",
    "an empty vase sits by the entrance",
    "the wallpaper peels near the ceiling",
    "a dog barks somewhere outside",
    "the microwave beeps three times",
    "shadows fall across the tiled floor",
    "the bookshelf sags under heavy volumes",
    "a candle flickers on the mantel",
    "the bath mat is soaked through",
    "pots and pans hang from a rack",
    "the alarm panel glows faintly",
    "a newspaper yellows on the doormat",
    "the piano has not been tuned in years",
    "cobwebs gather behind the cabinet",
    "the thermostat reads nineteen degrees",
    "a suitcase blocks the closet",
]

MULTI_PHRASE = [
    ("turn left then stop", Action.TURN_LEFT),
    ("stop, then turn left", Action.STOP),
    ("move forward and then turn right at the door", Action.FORWARD),
    ("rotate right before you halt", Action.TURN_RIGHT),
    ("halt! do not move forward", Action.STOP),
    ("after the plant, turn right, then proceed", Action.TURN_RIGHT),
    ("proceed, or if blocked turn left", Action.FORWARD),
    ("you could turn left or turn right", Action.TURN_LEFT),
    ("wait here while I move forward", Action.STOP),
    ("go straight and then wait", Action.FORWARD),
]


def test_action_parser():
    assert len(CURATED_VARIANTS) >= 50
    assert len(DISTRACTORS) == 50
    assert len(MULTI_PHRASE) == 10
    for text, action in PHRASE_CORPUS + CURATED_VARIANTS + MULTI_PHRASE:
        assert parse_action(text) == action, text
    for text in DISTRACTORS:
        with pytest.raises(NoMatchError):
            parse_action(text)


# -- expert navigation soundness ----------------------------------------------


def test_expert_navigation_soundness():
    t0 = time.monotonic()
    spls = []
    for name in ALL_WORLDS:
        world = load_world(world_file(name))
        for spec in generate_episodes(world, 10, seed=11):
            decide = make_oracle_policy(world, spec, phrasing_seed=11)
            result = run_episode(world, spec, decide, with_maps=False)
            m = score(result, spec, world=world)
            assert m.sr == 1.0, spec.episode_id
            assert m.collisions == 0, spec.episode_id
            assert result.stopped, spec.episode_id
            spls.append(m.spl)
            # Every expert utterance round-trips through the parser.
            for trace in result.traces:
                assert parse_action(trace.text) == trace.action
                assert not trace.recovered
    assert len(spls) == 50
    mean_spl = sum(spls) / len(spls)
    assert mean_spl >= 0.9, f"mean SPL {mean_spl:.4f}"
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0, f"soundness sweep took {elapsed:.0f}s"


# -- metrics correctness -------------------------------------------------------


def load_trajectory_fixture(name):
    doc = json.loads((FIXTURES / "trajectories" / name).read_text())
    ep = doc["episode"]
    ref = tuple(tuple(p) for p in ep["reference_path"])
    spec = EpisodeSpec(episode_id=ep["episode_id"],
                       instruction=ep["instruction"],
                       start=AgentPose(ref[0][0], ref[0][1], 0.0),
                       goal=tuple(ep["goal"]), reference_path=ref,
                       max_steps=ep["max_steps"])
    log = TrajectoryLog(poses=tuple(AgentPose(*p) for p in doc["poses"]),
                        stopped=doc["stopped"],
                        collisions=doc["collisions"])
    return spec, log, doc["success_radius"], doc["expected"]


def test_metrics_fixtures():
    for name in ("straight_line.json", "bend_detour.json",
                 "overshoot_split.json"):
        spec, log, radius, expected = load_trajectory_fixture(name)
        m = evaluate(log, spec, success_radius=radius)
        for field, value in expected.items():
            got = getattr(m, field)
            assert abs(got - value) <= 1e-6, (name, field, got, value)

    # The overshoot case splits os from sr: passed the goal, stopped away.
    _, log, radius, expected = load_trajectory_fixture("overshoot_split.json")
    assert expected["os"] == 1.0 and expected["sr"] == 0.0

    # Identity path: query equals reference.
    spec = EpisodeSpec(episode_id="ident", instruction="x",
                       start=AgentPose(0.0, 0.0, 0.0), goal=(1.0, 0.0),
                       reference_path=((0.0, 0.0), (1.0, 0.0)), max_steps=9)
    log = TrajectoryLog(poses=(AgentPose(0.0, 0.0, 0.0),
                               AgentPose(1.0, 0.0, 0.0)),
                        stopped=True, collisions=0)
    m = evaluate(log, spec, success_radius=0.5)
    assert m.ndtw == pytest.approx(1.0, abs=1e-12)
    assert m.spl == pytest.approx(1.0, abs=1e-12)


# -- dataset phases ------------------------------------------------------------


def test_dataset_phases(tmp_path):
    t0 = time.monotonic()
    cfg = CollectConfig(seed=5)
    world = load_world(world_file("cluttered_room"))
    episodes = load_episodes(str(FIXTURES / "episodes" /
                                 "cluttered_room.episodes.json"))
    worlds_by_name = {world.name: world}
    eps_by_id = {e.episode_id: e for e in episodes}

    gt_root = tmp_path / "gt"
    manifest = collect_gt(world, episodes, gt_root, cfg)
    assert manifest.phase_counts["GT"] > 0
    assert validate_dataset(gt_root) == []
    assert validate_dataset(gt_root, worlds=worlds_by_name,
                            episodes=eps_by_id) == []

    # Learner rollout that never turns; labels must still be the expert's.
    dagger_root = tmp_path / "dagger"
    rollout = lambda w, spec: make_scripted_policy(
        ["move forward"] * spec.max_steps)
    manifest = collect_dagger(world, episodes, rollout, dagger_root, cfg)
    assert manifest.phase_counts["DAGGER"] > 0
    assert validate_dataset(dagger_root, worlds=worlds_by_name,
                            episodes=eps_by_id) == []
    requeried = 0
    for entry in manifest.episodes:
        spec = eps_by_id[entry.episode_id]
        for rec in load_records(dagger_root, entry):
            out = oracle_decide(world, AgentPose(*rec.pose), spec,
                                phrasing_seed=cfg.seed,
                                success_radius=cfg.success_radius)
            assert out.parsed.name == rec.action, (entry.episode_id, rec.step)
            requeried += 1
    assert requeried == manifest.phase_counts["DAGGER"]

    collision_root = tmp_path / "collision"
    manifest = collect_collision(world, episodes, collision_root, cfg)
    assert manifest.phase_counts["COLLISION"] > 0
    assert validate_dataset(collision_root, worlds=worlds_by_name,
                            episodes=eps_by_id) == []
    sequences = 0
    for entry in manifest.episodes:
        records = load_records(collision_root, entry)
        by_seq = {}
        for rec in records:
            assert rec.recovery_seq >= 0
            by_seq.setdefault(rec.recovery_seq, []).append(rec)
        for seq in by_seq.values():
            assert Action[seq[0].action] in (Action.TURN_LEFT,
                                             Action.TURN_RIGHT)
            sequences += 1
    assert sequences > 0

    # Parse closure across every record of every phase.
    from asmnav.dataset import DatasetManifest
    for root in (gt_root, dagger_root, collision_root):
        mani = DatasetManifest.load(root / "manifest.json")
        for entry in mani.episodes:
            for rec in load_records(root, entry):
                assert parse_action(rec.action_text).name == rec.action
    elapsed = time.monotonic() - t0
    assert elapsed < 180.0, f"dataset phases took {elapsed:.0f}s"


# -- remote model client replay -------------------------------------------------


def test_vlm_replay():
    from test_policy import StubVlm, ok_payload

    doc = json.loads((FIXTURES / "vlm" / "replay_script.json").read_text())
    world = load_world(doc["world"])
    spec = [e for e in load_episodes(doc["episodes"])
            if e.episode_id == doc["episode_id"]][0]
    script = []
    for r in doc["responses"]:
        if r["status"] == 200:
            script.append(ok_payload(r["content"]))
        else:
            script.append((r["status"], r["body"]))

    with StubVlm(script) as stub:
        cfg = VlmEndpointConfig(base_url=stub.base_url,
                                model_name="replay-stub")
        result = run_episode(
            world, spec, make_vlm_policy(cfg),
            intr=make_intrinsics(doc["intr_width"], doc["intr_height"]),
            map_params=MapParams(doc["map_cells"], doc["map_cells"],
                                 world.resolution))
        requests_made = len(stub.requests)

    golden = (FIXTURES / "trajectories" / "vlm_replay.golden.json").read_bytes()
    assert result.artifact_json().encode() == golden

    # The scripted 500 forced one retry, and the unparseable reply forced
    # one recovery rotation.
    assert requests_made == len(result.traces) + 1
    assert any(t.recovered for t in result.traces)
    assert result.stopped
