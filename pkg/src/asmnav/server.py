"""JSON-lines engine server for out-of-process bindings.

Reads one JSON request per line on stdin and writes one JSON response
per line on stdout, so any host language can drive the mapper, renderer,
parser, and metrics through a spawned subprocess.  Arrays cross the
boundary base64-encoded in row-major order (float64 depth, int32 mask,
uint8 image); this always-copies representation is the documented
fallback contract, simple and correct on every host.

Request:  {"id": <int>, "op": <str>, ...params}
Response: {"id": <int>, "ok": true, "result": {...}}
      or  {"id": <int>, "ok": false,
           "error": {"kind": <str>, "message": <str>, "field": <str|null>}}

Error kinds: "shape-mismatch" (names the offending field), "bad-request",
"use-after-close", "no-such-handle", and "internal".

Builders are per-handle and independent; two handles never share state.
"""

from __future__ import annotations

import base64
import json
import sys

import numpy as np

from . import __version__
from .actions import parse_action
from .annotation import DEFAULT_RENDER_SCALE, DEFAULT_TAU, annotate
from .errors import InputError, NoMatchError
from .geometry import (DEFAULT_OBSTACLE_BAND, AgentPose, GridSpec)
from .metrics import TrajectoryLog, evaluate
from .pngio import encode_png
from .runner import ingest_frame
from .semantic_map import DEFAULT_CATEGORIES, init_map
from .simenv import EpisodeSpec, make_intrinsics

PROTOCOL_VERSION = 1


class _ServerError(Exception):
    def __init__(self, kind: str, message: str, field=None):
        super().__init__(message)
        self.kind = kind
        self.field = field


def _bad(message: str, field=None) -> _ServerError:
    return _ServerError("bad-request", message, field)


def _need(params: dict, key: str):
    if key not in params:
        raise _bad(f"missing required field {key!r}", field=key)
    return params[key]


def _decode_array(spec, field: str, dtype, expect_shape) -> np.ndarray:
    if not isinstance(spec, dict) or "b64" not in spec or "shape" not in spec:
        raise _bad(f"{field} must be {{'b64': ..., 'shape': [h, w]}}",
                   field=field)
    try:
        raw = base64.b64decode(spec["b64"], validate=True)
    except Exception:
        raise _bad(f"{field}: invalid base64 payload", field=field) from None
    shape = tuple(int(v) for v in spec["shape"])
    arr = np.frombuffer(raw, dtype=dtype)
    if len(shape) != 2 or arr.size != shape[0] * shape[1]:
        raise _ServerError("shape-mismatch",
                           f"{field}: payload of {arr.size} elements does "
                           f"not form shape {list(shape)}", field=field)
    if expect_shape is not None and shape != expect_shape:
        raise _ServerError(
            "shape-mismatch",
            f"{field}: got shape {list(shape)}, intrinsics require "
            f"{list(expect_shape)}", field=field)
    return arr.reshape(shape)


def _pose_of(value) -> AgentPose:
    try:
        x, y, yaw = (float(v) for v in value)
    except (TypeError, ValueError):
        raise _bad("pose must be [x, y, yaw]", field="pose") from None
    return AgentPose(x, y, yaw)


class EngineServer:
    """Dispatch table plus the live builder handles."""

    def __init__(self):
        self._handles = {}
        self._closed = set()
        self._next = 1

    # -- handle plumbing ---------------------------------------------------

    def _builder(self, params: dict):
        handle = _need(params, "handle")
        if handle in self._closed:
            raise _ServerError("use-after-close",
                               f"handle {handle} is closed")
        if handle not in self._handles:
            raise _ServerError("no-such-handle", f"unknown handle {handle}")
        return self._handles[handle]

    # -- operations ----------------------------------------------------------

    def op_version(self, params: dict) -> dict:
        return {"version": __version__, "protocol": PROTOCOL_VERSION}

    def op_open(self, params: dict) -> dict:
        grid = GridSpec(
            width_cells=int(_need(params, "width_cells")),
            height_cells=int(_need(params, "height_cells")),
            resolution=float(_need(params, "resolution")),
            origin_x=float(params.get("origin_x", 0.0)),
            origin_y=float(params.get("origin_y", 0.0)))
        categories = params.get("categories")
        if categories is None:
            categories = DEFAULT_CATEGORIES
        intr_cfg = params.get("intrinsics") or {}
        intr = make_intrinsics(
            width=int(intr_cfg.get("width", 128)),
            height=int(intr_cfg.get("height", 96)),
            hfov_deg=float(intr_cfg.get("hfov_deg", 79.0)),
            depth_min=float(intr_cfg.get("depth_min", 0.1)),
            depth_max=float(intr_cfg.get("depth_max", 10.0)))
        smap = init_map(grid, categories=tuple(categories),
                        agent_radius=float(params.get("agent_radius", 0.18)))
        band = params.get("obstacle_band", DEFAULT_OBSTACLE_BAND)
        band = (float(band[0]), float(band[1]))
        handle = self._next
        self._next += 1
        self._handles[handle] = {"map": smap, "intr": intr, "band": band}
        return {"handle": handle,
                "channels": smap.channels.shape[0],
                "categories": list(smap.categories.names)}

    def op_update(self, params: dict) -> dict:
        b = self._builder(params)
        intr = b["intr"]
        depth = _decode_array(_need(params, "depth"), "depth", np.float64,
                              (intr.height, intr.width))
        mask = _decode_array(_need(params, "mask"), "mask", np.int32,
                             (intr.height, intr.width))
        pose = _pose_of(_need(params, "pose"))
        ingest_frame(b["map"], intr, depth, mask, pose, b["band"])
        return {"step_count": b["map"].step_count}

    def _render(self, params: dict):
        b = self._builder(params)
        tau = int(params.get("tau", DEFAULT_TAU))
        scale = int(params.get("render_scale", DEFAULT_RENDER_SCALE))
        return annotate(b["map"], tau, scale)

    def op_render(self, params: dict) -> dict:
        art = self._render(params)
        h, w = art.image.shape[:2]
        return {"width": w, "height": h,
                "data_b64": base64.b64encode(art.image.tobytes()).decode(),
                "placements": art.placements_json()}

    def op_render_png(self, params: dict) -> dict:
        art = self._render(params)
        return {"png_b64": base64.b64encode(art.to_png()).decode(),
                "placements": art.placements_json()}

    def op_snapshot(self, params: dict) -> dict:
        b = self._builder(params)
        return {"data_b64": base64.b64encode(b["map"].to_bytes()).decode()}

    def op_state_bytes(self, params: dict) -> dict:
        return {"bytes": self._builder(params)["map"].state_bytes()}

    def op_parse(self, params: dict) -> dict:
        text = _need(params, "text")
        if not isinstance(text, str):
            raise _bad("text must be a string", field="text")
        try:
            return {"action": parse_action(text).name}
        except NoMatchError:
            return {"action": None}

    def op_evaluate(self, params: dict) -> dict:
        ep = _need(params, "episode")
        ref = [tuple(p) for p in _need(ep, "reference_path")]
        spec = EpisodeSpec(
            episode_id=str(ep.get("episode_id", "remote")),
            instruction=str(ep.get("instruction", "remote episode")),
            start=AgentPose(ref[0][0], ref[0][1], 0.0),
            goal=tuple(_need(ep, "goal")),
            reference_path=tuple(ref),
            max_steps=int(ep.get("max_steps", 500)))
        poses = tuple(_pose_of(p) for p in _need(params, "poses"))
        log = TrajectoryLog(poses=poses,
                            stopped=bool(_need(params, "stopped")),
                            collisions=int(params.get("collisions", 0)))
        radius = float(params.get("success_radius", 3.0))
        return evaluate(log, spec, success_radius=radius).to_dict()

    def op_close(self, params: dict) -> dict:
        handle = _need(params, "handle")
        if handle in self._closed:
            raise _ServerError("use-after-close",
                               f"handle {handle} is closed")
        if handle not in self._handles:
            raise _ServerError("no-such-handle", f"unknown handle {handle}")
        del self._handles[handle]
        self._closed.add(handle)
        return {}

    # -- dispatch ------------------------------------------------------------

    def handle_line(self, line: str) -> dict:
        rid = None
        try:
            try:
                req = json.loads(line)
            except ValueError as e:
                raise _bad(f"request is not valid JSON: {e}") from None
            if not isinstance(req, dict):
                raise _bad("request must be a JSON object")
            rid = req.get("id")
            op = req.get("op")
            fn = getattr(self, "op_" + op, None) if isinstance(op, str) \
                else None
            if fn is None:
                raise _bad(f"unknown op {op!r}")
            result = fn(req)
            return {"id": rid, "ok": True, "result": result}
        except _ServerError as e:
            return {"id": rid, "ok": False,
                    "error": {"kind": e.kind, "message": str(e),
                              "field": e.field}}
        except (InputError, ValueError, TypeError, KeyError) as e:
            return {"id": rid, "ok": False,
                    "error": {"kind": "bad-request", "message": str(e),
                              "field": None}}
        except Exception as e:  # keep the server alive on surprises
            return {"id": rid, "ok": False,
                    "error": {"kind": "internal",
                              "message": f"{type(e).__name__}: {e}",
                              "field": None}}


def serve(stdin=None, stdout=None) -> int:
    """Run the request loop until stdin closes."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    server = EngineServer()
    for line in stdin:
        if not line.strip():
            continue
        resp = server.handle_line(line)
        stdout.write(json.dumps(resp, sort_keys=True))
        stdout.write("\n")
        stdout.flush()
    return 0
