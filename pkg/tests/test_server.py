"""Engine server: JSON-lines protocol, error kinds, and parity checks."""

import base64
import io
import json
import math

import numpy as np
import pytest

from asmnav.actions import parse_action
from asmnav.errors import NoMatchError
from asmnav.geometry import DEFAULT_OBSTACLE_BAND, AgentPose, GridSpec
from asmnav.metrics import TrajectoryLog, evaluate
from asmnav.runner import ingest_frame
from asmnav.semantic_map import init_map
from asmnav.server import EngineServer, serve
from asmnav.simenv import EpisodeSpec, load_world, make_intrinsics, sense

INTR_W, INTR_H = 64, 48


def call(server, op, **params):
    params.update({"id": 1, "op": op})
    resp = server.handle_line(json.dumps(params))
    return resp


def ok(server, op, **params):
    resp = call(server, op, **params)
    assert resp["ok"], resp
    return resp["result"]


def err(server, op, **params):
    resp = call(server, op, **params)
    assert not resp["ok"], resp
    return resp["error"]


def b64_of(arr):
    return {"b64": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode(),
            "shape": list(arr.shape)}


def open_map(server, world, cells=160):
    half = cells // 2 + 0.5
    pose = world.spawn_points[0]
    return ok(server, "open", width_cells=cells, height_cells=cells,
              resolution=world.resolution,
              origin_x=pose.x - half * world.resolution,
              origin_y=pose.y - half * world.resolution,
              categories=list(world.category_names) or None,
              intrinsics={"width": INTR_W, "height": INTR_H})


@pytest.fixture(scope="module")
def world():
    return load_world("fixtures/worlds/cluttered_room.world")


@pytest.fixture(scope="module")
def frames(world):
    """A few sensed frames from a short spin at the spawn point."""
    intr = make_intrinsics(INTR_W, INTR_H)
    start = world.spawn_points[0]
    out = []
    for k in range(4):
        pose = AgentPose(start.x, start.y, start.yaw + k * math.pi / 2)
        depth, mask = sense(world, pose, intr)
        out.append((pose, depth, mask))
    return intr, out


def test_version_reports_protocol():
    result = ok(EngineServer(), "version")
    assert result["protocol"] == 1
    assert isinstance(result["version"], str)


def test_open_reports_channels_and_categories(world):
    server = EngineServer()
    result = open_map(server, world)
    assert result["handle"] == 1
    assert result["channels"] == len(result["categories"]) + 4
    assert list(world.category_names) == result["categories"]


def test_update_snapshot_matches_local_pipeline(world, frames):
    intr, steps = frames
    server = EngineServer()
    handle = open_map(server, world)["handle"]

    cells, half = 160, 160 // 2 + 0.5
    start = world.spawn_points[0]
    grid = GridSpec(cells, cells, world.resolution,
                    start.x - half * world.resolution,
                    start.y - half * world.resolution)
    local = init_map(grid, categories=tuple(world.category_names))

    for pose, depth, mask in steps:
        result = ok(server, "update", handle=handle,
                    depth=b64_of(depth), mask=b64_of(mask),
                    pose=[pose.x, pose.y, pose.yaw])
        ingest_frame(local, intr, depth, mask, pose, DEFAULT_OBSTACLE_BAND)
        assert result["step_count"] == local.step_count

    remote = base64.b64decode(ok(server, "snapshot", handle=handle)["data_b64"])
    assert remote == local.to_bytes()
    assert ok(server, "state_bytes", handle=handle)["bytes"] == len(remote)


def test_render_shapes_and_png_magic(world, frames):
    intr, steps = frames
    server = EngineServer()
    handle = open_map(server, world)["handle"]
    pose, depth, mask = steps[0]
    ok(server, "update", handle=handle, depth=b64_of(depth),
       mask=b64_of(mask), pose=[pose.x, pose.y, pose.yaw])

    raw = ok(server, "render", handle=handle, tau=5, render_scale=2)
    assert raw["width"] == 320 and raw["height"] == 320
    data = base64.b64decode(raw["data_b64"])
    assert len(data) == raw["width"] * raw["height"] * 3
    assert isinstance(raw["placements"], list)

    png = ok(server, "render_png", handle=handle, tau=5, render_scale=2)
    blob = base64.b64decode(png["png_b64"])
    assert blob[:8] == b"\x89PNG\r\n\x1a\n"
    assert png["placements"] == raw["placements"]


def test_handles_are_independent(world, frames):
    intr, steps = frames
    server = EngineServer()
    h1 = open_map(server, world)["handle"]
    h2 = open_map(server, world)["handle"]
    assert h1 != h2
    before = ok(server, "snapshot", handle=h2)["data_b64"]
    pose, depth, mask = steps[0]
    ok(server, "update", handle=h1, depth=b64_of(depth),
       mask=b64_of(mask), pose=[pose.x, pose.y, pose.yaw])
    assert ok(server, "snapshot", handle=h2)["data_b64"] == before


def test_shape_mismatch_names_the_field(world, frames):
    intr, steps = frames
    server = EngineServer()
    handle = open_map(server, world)["handle"]
    pose, depth, mask = steps[0]
    bad_mask = mask[: INTR_H // 2, :]
    e = err(server, "update", handle=handle, depth=b64_of(depth),
            mask=b64_of(bad_mask), pose=[pose.x, pose.y, pose.yaw])
    assert e["kind"] == "shape-mismatch"
    assert e["field"] == "mask"

    # element count that cannot form the declared shape
    e = err(server, "update", handle=handle,
            depth={"b64": base64.b64encode(b"\0" * 16).decode(),
                   "shape": [INTR_H, INTR_W]},
            mask=b64_of(mask), pose=[pose.x, pose.y, pose.yaw])
    assert e["kind"] == "shape-mismatch"
    assert e["field"] == "depth"


def test_close_semantics(world):
    server = EngineServer()
    handle = open_map(server, world)["handle"]
    ok(server, "close", handle=handle)
    assert err(server, "close", handle=handle)["kind"] == "use-after-close"
    assert err(server, "snapshot", handle=handle)["kind"] == "use-after-close"
    assert err(server, "snapshot", handle=999)["kind"] == "no-such-handle"


def test_parse_matches_local_ruleset():
    server = EngineServer()
    for text in ("move forward", "please turn left now", "STOP", "go back?"):
        remote = ok(server, "parse", text=text)["action"]
        try:
            local = parse_action(text).name
        except NoMatchError:
            local = None
        assert remote == local
    assert ok(server, "parse", text="zyx qwv")["action"] is None


def test_evaluate_matches_local_metrics():
    ref = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]
    poses = [(0.0, 0.0, 0.0), (1.0, 0.1, 0.0), (1.9, 0.0, 0.0)]
    server = EngineServer()
    remote = ok(server, "evaluate",
                poses=poses, stopped=True, collisions=1,
                episode={"goal": [2.0, 0.0], "reference_path": ref},
                success_radius=0.5)
    spec = EpisodeSpec(episode_id="remote", instruction="remote episode",
                       start=AgentPose(0.0, 0.0, 0.0), goal=(2.0, 0.0),
                       reference_path=tuple(ref), max_steps=500)
    log = TrajectoryLog(poses=tuple(AgentPose(*p) for p in poses),
                        stopped=True, collisions=1)
    local = evaluate(log, spec, success_radius=0.5).to_dict()
    assert remote == local


def test_protocol_level_errors(world):
    server = EngineServer()
    assert err(server, "launch_missiles")["kind"] == "bad-request"
    resp = server.handle_line("{not json")
    assert not resp["ok"] and resp["error"]["kind"] == "bad-request"
    resp = server.handle_line("[1, 2]")
    assert not resp["ok"] and resp["error"]["kind"] == "bad-request"

    handle = open_map(server, world)["handle"]
    e = err(server, "update", handle=handle,
            depth={"b64": "!!!not-base64!!!", "shape": [INTR_H, INTR_W]},
            mask={"b64": "", "shape": [INTR_H, INTR_W]},
            pose=[0, 0, 0])
    assert e["kind"] == "bad-request" and e["field"] == "depth"
    e = err(server, "update", handle=handle, mask={"b64": "", "shape": []},
            pose=[0, 0, 0])
    assert e["kind"] == "bad-request" and e["field"] == "depth"


def test_serve_loop_over_streams(world):
    lines = [
        json.dumps({"id": 10, "op": "version"}),
        "",
        json.dumps({"id": 11, "op": "parse", "text": "turn right"}),
        "{broken",
    ]
    out = io.StringIO()
    rc = serve(stdin=io.StringIO("\n".join(lines) + "\n"), stdout=out)
    assert rc == 0
    responses = [json.loads(ln) for ln in out.getvalue().splitlines()]
    assert [r["id"] for r in responses] == [10, 11, None]
    assert responses[0]["ok"] and responses[1]["ok"]
    assert responses[1]["result"]["action"] == "TURN_RIGHT"
    assert not responses[2]["ok"]
