"""Regenerates fixtures/shared/engine_cases.json.

The fixture records engine-server responses for a scripted session:
map updates from sensed frames, renders, snapshots, parses, and one
metrics evaluation.  Out-of-process clients replay the same requests
against a live server and must reproduce every byte.

Run from the repository root:

    python3 scripts/gen_shared_fixtures.py
"""

import base64
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from asmnav.server import EngineServer, PROTOCOL_VERSION
from asmnav.simenv import AgentPose, load_world, make_intrinsics, sense

ROOT = Path(__file__).resolve().parent.parent

INTR_W, INTR_H = 64, 48
MAP_CELLS = 120

PARSE_CASES = [
    "move forward",
    "Okay, turn LEFT now",
    "please halt",
    "veer right, sharply",
    "go back?",
    "the room is tidy",
]

EVALUATE_REQUEST = {
    "episode": {
        "episode_id": "shared_eval",
        "instruction": "follow the bend to the far corner",
        "goal": [2.0, 2.0],
        "reference_path": [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0],
                           [2.0, 1.0], [2.0, 2.0]],
        "max_steps": 50,
    },
    "poses": [[0.0, 0.0, 0.0], [1.0, 2.0, 0.0], [2.0, 2.0, 0.0]],
    "stopped": True,
    "collisions": 0,
    "success_radius": 0.5,
}


def ok(server, op, **params):
    params.update({"id": 0, "op": op})
    resp = server.handle_line(json.dumps(params))
    assert resp["ok"], resp
    return resp["result"]


def payload_of(arr):
    return {"b64": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode(),
            "shape": list(arr.shape)}


def main():
    world = load_world(str(ROOT / "fixtures" / "worlds" /
                           "cluttered_room.world"))
    intr = make_intrinsics(INTR_W, INTR_H)
    start = world.spawn_points[0]

    half = MAP_CELLS // 2 + 0.5
    open_params = {
        "width_cells": MAP_CELLS,
        "height_cells": MAP_CELLS,
        "resolution": world.resolution,
        "origin_x": start.x - half * world.resolution,
        "origin_y": start.y - half * world.resolution,
        "categories": list(world.category_names),
        "intrinsics": {"width": INTR_W, "height": INTR_H},
    }

    frames = []
    for k in range(4):
        pose = AgentPose(start.x, start.y, start.yaw + k * math.pi / 2)
        depth, mask = sense(world, pose, intr)
        frames.append({"pose": [pose.x, pose.y, pose.yaw],
                       "depth": payload_of(depth),
                       "mask": payload_of(mask)})

    server = EngineServer()
    version = ok(server, "version")
    opened = ok(server, "open", **open_params)
    handle = opened["handle"]

    step_counts = []
    for frame in frames:
        result = ok(server, "update", handle=handle, depth=frame["depth"],
                    mask=frame["mask"], pose=frame["pose"])
        step_counts.append(result["step_count"])

    # tau=1 keeps small sensed patches, so the render carries labels.
    render_tau = 1
    render = ok(server, "render", handle=handle, tau=render_tau)
    rgb = base64.b64decode(render["data_b64"])
    render_png = ok(server, "render_png", handle=handle, tau=render_tau)
    snapshot = ok(server, "snapshot", handle=handle)
    state_bytes = ok(server, "state_bytes", handle=handle)["bytes"]

    doc = {
        "version": version,
        "open": open_params,
        "frames": frames,
        "expected": {
            "channels": opened["channels"],
            "categories": opened["categories"],
            "step_counts": step_counts,
            "snapshot_b64": snapshot["data_b64"],
            "state_bytes": state_bytes,
            "render": {
                "tau": render_tau,
                "width": render["width"],
                "height": render["height"],
                "rgb_sha256": hashlib.sha256(rgb).hexdigest(),
                "placements": render["placements"],
            },
            "render_png_b64": render_png["png_b64"],
        },
        "parse_cases": [
            {"text": text, "action": ok(server, "parse", text=text)["action"]}
            for text in PARSE_CASES
        ],
        "evaluate_case": {
            "request": EVALUATE_REQUEST,
            "expected": ok(server, "evaluate", **EVALUATE_REQUEST),
        },
    }
    assert version["protocol"] == PROTOCOL_VERSION

    out = ROOT / "fixtures" / "shared" / "engine_cases.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
