"""Decision layer: a scripted expert and a remote VLM client.

Both produce natural-language action text so the full text-to-action
parse path is exercised regardless of who is driving.  The expert plans
against the true world grid and is used for testing and dataset
collection; the VLM client talks to any chat-completions-style HTTP
endpoint with base64-embedded images.
"""

from __future__ import annotations

import base64
import json
import math
import os
import time
import zlib
from dataclasses import dataclass, field

import requests

from .actions import Action, PatternRuleset, default_ruleset, parse_action
from .errors import EndpointError, InputError, NoMatchError, PlanningError, \
    ProtocolError
from .geometry import AgentPose, wrap_angle
from .planning import path_length, plan_path
from .simenv import EpisodeSpec, SimConfig, World, try_move

OBS_MARKER = "<OBS>"
MAP_MARKER = "<MAP>"

SYSTEM_PROMPT = (
    "You drive an indoor robot one step at a time. After the instruction you "
    "receive the camera frames, the marker " + OBS_MARKER + ", the annotated "
    "top-down map, and the marker " + MAP_MARKER + ". Reply with exactly one "
    'of these commands and nothing else: "move forward" (advance one step), '
    '"turn left" (rotate left in place), "turn right" (rotate right in '
    'place), or "stop" (declare the goal reached).')

MAX_HISTORY_FRAMES = 4


@dataclass(frozen=True)
class PolicyInput:
    """One timestep's worth of context handed to a policy."""
    instruction: str
    asm_png: bytes
    observation_png: bytes
    history_pngs: tuple = ()
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "history_pngs", tuple(self.history_pngs))
        if not self.instruction:
            raise InputError("instruction must be non-empty")
        if not self.asm_png or not self.observation_png:
            raise InputError("images must be non-empty")
        if any(not frame for frame in self.history_pngs):
            raise InputError("history frames must be non-empty")
        if len(self.history_pngs) > MAX_HISTORY_FRAMES:
            raise InputError(
                f"at most {MAX_HISTORY_FRAMES} history frames, "
                f"got {len(self.history_pngs)}")
        if self.step_index < 0:
            raise InputError("step_index must be >= 0")


@dataclass(frozen=True)
class PolicyOutput:
    text: str
    parsed: Action | None
    latency: float


@dataclass(frozen=True)
class VlmEndpointConfig:
    base_url: str
    model_name: str
    auth_env: str = ""
    timeout: float = 30.0
    retries: int = 2
    temperature: float = 0.0
    seed: int = 0
    retry_backoff: float = 0.05

    def __post_init__(self):
        if not self.base_url:
            raise InputError("base_url must be non-empty")
        if self.timeout <= 0:
            raise InputError("timeout must be positive")
        if self.retries < 0:
            raise InputError("retries must be >= 0")
        if self.retry_backoff < 0:
            raise InputError("retry_backoff must be >= 0")


@dataclass(frozen=True)
class PreparedRequest:
    url: str
    headers: dict
    body: bytes


def _image_part(png: bytes) -> dict:
    encoded = base64.b64encode(png).decode("ascii")
    return {"type": "image_url",
            "image_url": {"url": "data:image/png;base64," + encoded}}


def build_request(inp: PolicyInput, cfg: VlmEndpointConfig) -> PreparedRequest:
    """Assemble the chat request; pure, so bodies are replay-stable."""
    headers = {"Content-Type": "application/json"}
    if cfg.auth_env:
        token = os.environ.get(cfg.auth_env)
        if not token:
            raise EndpointError(
                f"auth environment variable {cfg.auth_env!r} is not set")
        headers["Authorization"] = "Bearer " + token
    parts = [{"type": "text", "text": inp.instruction}]
    for frame in inp.history_pngs:
        parts.append(_image_part(frame))
    parts.append(_image_part(inp.observation_png))
    parts.append({"type": "text", "text": OBS_MARKER})
    parts.append(_image_part(inp.asm_png))
    parts.append({"type": "text", "text": MAP_MARKER})
    payload = {
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "seed": cfg.seed,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": parts},
        ],
    }
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return PreparedRequest(url=cfg.base_url.rstrip("/") + "/chat/completions",
                           headers=headers, body=body)


def _extract_text(response: requests.Response) -> str:
    try:
        doc = response.json()
        text = doc["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise ProtocolError(f"malformed completion response: {e}") from None
    if not isinstance(text, str):
        raise ProtocolError("completion content is not text")
    return text


def vlm_decide(inp: PolicyInput, cfg: VlmEndpointConfig,
               rules: PatternRuleset | None = None) -> PolicyOutput:
    """One remote decision; retries transient failures, never raises on
    unparseable text (the caller owns recovery)."""
    req = build_request(inp, cfg)
    started = time.perf_counter()
    attempts = cfg.retries + 1
    last_fault = "no attempt made"
    for attempt in range(attempts):
        if attempt:
            time.sleep(cfg.retry_backoff * attempt)
        try:
            resp = requests.post(req.url, data=req.body, headers=req.headers,
                                 timeout=cfg.timeout)
        except (requests.Timeout, requests.ConnectionError) as e:
            last_fault = f"{type(e).__name__}: {e}"
            continue
        except requests.RequestException as e:
            raise EndpointError(f"request failed: {e}") from None
        if resp.status_code == 429 or resp.status_code >= 500:
            last_fault = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise EndpointError(
                f"endpoint rejected request: HTTP {resp.status_code}")
        text = _extract_text(resp)
        try:
            parsed = parse_action(text, rules or default_ruleset())
        except NoMatchError:
            parsed = None
        return PolicyOutput(text=text, parsed=parsed,
                            latency=time.perf_counter() - started)
    raise EndpointError(
        f"gave up after {attempts} attempts, last failure: {last_fault}")


def _clear_line(world: World, x0, y0, x1, y1, radius: float) -> bool:
    dist = math.hypot(x1 - x0, y1 - y0)
    steps = max(1, math.ceil(dist / (world.resolution / 2.0)))
    for i in range(1, steps + 1):
        t = i / steps
        if world.disk_collides(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius):
            return False
    return True


def _phrase_for(action: Action, rules: PatternRuleset, seed: int,
                pose: AgentPose) -> str:
    pats = rules.patterns_for(action)
    key = f"{seed}|{action.name}|{pose.x:.6f}|{pose.y:.6f}|{pose.yaw:.6f}"
    return pats[zlib.crc32(key.encode()) % len(pats)]


def _turn_that_opens(world: World, pose: AgentPose, cfg: SimConfig) -> Action:
    """Pick the rotation direction that frees a forward step soonest."""
    half_circle = max(1, math.ceil(math.pi / cfg.turn_angle_rad))
    for k in range(1, half_circle + 1):
        for action in (Action.TURN_LEFT, Action.TURN_RIGHT):
            probe = pose
            for _ in range(k):
                probe, _ = try_move(world, probe, action, cfg)
            _, collided = try_move(world, probe, Action.FORWARD, cfg)
            if not collided:
                return action
    return Action.TURN_LEFT


def oracle_decide(world: World, pose: AgentPose, spec: EpisodeSpec,
                  phrasing_seed: int = 0, success_radius: float = 0.25,
                  cfg: SimConfig | None = None,
                  rules: PatternRuleset | None = None) -> PolicyOutput:
    """Expert decision from ground truth: plan, then act on the first leg.

    Rotates when the heading error to the next waypoint exceeds half a
    turn increment, else steps forward; stops inside the success radius.
    Emits a phrase chosen deterministically from the ruleset so different
    seeds exercise different wordings.
    """
    cfg = cfg or SimConfig()
    rules = rules or default_ruleset()

    def emit(action: Action) -> PolicyOutput:
        return PolicyOutput(text=_phrase_for(action, rules, phrasing_seed, pose),
                            parsed=action, latency=0.0)

    gx, gy = spec.goal
    if math.hypot(gx - pose.x, gy - pose.y) <= success_radius:
        return emit(Action.STOP)

    path = plan_path(world, (pose.x, pose.y), spec.goal,
                     agent_radius=cfg.agent_radius, snap=success_radius)
    if path is None:
        raise PlanningError(
            f"{spec.episode_id}: no traversable path to goal {spec.goal}")
    if len(path) < 2 or path_length(path) < world.resolution / 2.0:
        return emit(Action.STOP)  # as close as the disk can feasibly get

    # Follow the farthest waypoint we can see in a straight line, so the
    # quantized heading does not clip corners the grid path walks around.
    target = path[1]
    travelled = 0.0
    prev = path[0]
    for point in path[1:]:
        travelled += math.hypot(point[0] - prev[0], point[1] - prev[1])
        prev = point
        if travelled > 3.0 * cfg.forward_step:
            break
        if _clear_line(world, pose.x, pose.y, point[0], point[1],
                       cfg.agent_radius):
            target = point

    desired = math.atan2(target[1] - pose.y, target[0] - pose.x)
    err = wrap_angle(desired - pose.yaw)
    half = cfg.turn_angle_rad / 2.0 + 1e-12

    def forward_free(p: AgentPose) -> bool:
        _, collided = try_move(world, p, Action.FORWARD, cfg)
        return not collided

    if abs(err) <= half:
        if forward_free(pose):
            return emit(Action.FORWARD)
        # Aligned but clipping a corner: sidestep one increment if that
        # opens the way, preferring the side the waypoint leans toward.
        first = Action.TURN_LEFT if err >= 0 else Action.TURN_RIGHT
        second = Action.TURN_RIGHT if first is Action.TURN_LEFT else Action.TURN_LEFT
        for action in (first, second):
            probe, _ = try_move(world, pose, action, cfg)
            if forward_free(probe):
                return emit(action)
        return emit(_turn_that_opens(world, pose, cfg))

    toward = Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    if abs(err) < math.pi / 2.0 and forward_free(pose):
        # Moving now beats rotating onto a heading that cannot move; this
        # breaks the dither between a blocked better-aligned heading and
        # its free neighbor, and any heading within a quarter turn of the
        # waypoint still makes forward progress.
        probe, _ = try_move(world, pose, toward, cfg)
        if not forward_free(probe):
            return emit(Action.FORWARD)
    return emit(toward)
