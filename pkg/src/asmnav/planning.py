"""Grid path planning over simulator worlds.

Plans run on an obstacle-inflated copy of the world grid: a cell is
blocked when a disk of the agent's radius centered on it would overlap
any non-free cell, so any plan the search returns is traversable by the
real disk-shaped agent.  Search is 8-connected A* with octile costs;
diagonal moves are disallowed when either adjacent orthogonal cell is
blocked, so paths never cut corners.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .simenv import FREE, World

SQRT2 = math.sqrt(2.0)


def inflated_blocked(world: World, radius: float) -> np.ndarray:
    """(W, H) bool array: True where a disk of `radius` cannot stand."""
    res = world.resolution
    solid = world.kind != FREE
    blocked = solid.copy()
    reach = int(math.ceil(radius / res)) + 1
    w, h = solid.shape
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            if dx == 0 and dy == 0:
                continue
            # Closest approach between a cell center and a rect dx,dy cells away.
            gap_x = max(abs(dx) - 0.5, 0.0) * res
            gap_y = max(abs(dy) - 0.5, 0.0) * res
            if gap_x * gap_x + gap_y * gap_y >= radius * radius:
                continue
            src_x = slice(max(0, -dx), min(w, w - dx))
            dst_x = slice(max(0, dx), min(w, w + dx))
            src_y = slice(max(0, -dy), min(h, h - dy))
            dst_y = slice(max(0, dy), min(h, h + dy))
            blocked[dst_x, dst_y] |= solid[src_x, src_y]
    return blocked


def _octile(a, b) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def astar_cells(blocked: np.ndarray, start: tuple, goal: tuple):
    """Cheapest 8-connected cell path, or None; cost unit = one cell."""
    w, h = blocked.shape
    if not (0 <= goal[0] < w and 0 <= goal[1] < h):
        return None
    open_heap = [(_octile(start, goal), 0.0, start)]
    g_best = {start: 0.0}
    came = {}
    while open_heap:
        f, g, cell = heapq.heappop(open_heap)
        if cell == goal:
            path = [cell]
            while cell in came:
                cell = came[cell]
                path.append(cell)
            path.reverse()
            return path
        if g > g_best.get(cell, math.inf):
            continue
        x, y = cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h):
                    continue
                if blocked[nx, ny]:
                    continue
                if dx != 0 and dy != 0:
                    if blocked[x + dx, y] or blocked[x, y + dy]:
                        continue
                    step = SQRT2
                else:
                    step = 1.0
                ng = g + step
                if ng < g_best.get((nx, ny), math.inf) - 1e-12:
                    g_best[(nx, ny)] = ng
                    came[(nx, ny)] = cell
                    heapq.heappush(open_heap, (ng + _octile((nx, ny), goal), ng,
                                               (nx, ny)))
    return None


def _pocket_exit(world: World, blocked: np.ndarray, start: tuple,
                 goal_xy: tuple):
    """Open cell bordering the inflated pocket around `start`, or None.

    The pocket is the 4-connected set of unoccupied-but-inflated cells
    containing the start.  Among open cells adjacent to it, prefer the
    one nearest the start, breaking ties toward the goal.
    """
    res = world.resolution
    pocket = {start}
    frontier = [start]
    exits = set()
    while frontier:
        x, y = frontier.pop()
        for n in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if not world.in_bounds(*n) or n in pocket:
                continue
            if blocked[n]:
                if world.kind[n] == FREE:
                    pocket.add(n)
                    frontier.append(n)
            else:
                exits.add(n)

    def rank(cell):
        cx, cy = (cell[0] + 0.5) * res, (cell[1] + 0.5) * res
        sx, sy = (start[0] + 0.5) * res, (start[1] + 0.5) * res
        return (math.hypot(cx - sx, cy - sy),
                math.hypot(cx - goal_xy[0], cy - goal_xy[1]), cell)

    return min(exits, key=rank) if exits else None


def _reachable_cells(blocked: np.ndarray, start: tuple) -> set:
    """4-connected flood fill; same components as corner-safe 8-connected."""
    w, h = blocked.shape
    seen = {start}
    frontier = [start]
    while frontier:
        x, y = frontier.pop()
        for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if (0 <= nx < w and 0 <= ny < h and not blocked[nx, ny]
                    and (nx, ny) not in seen):
                seen.add((nx, ny))
                frontier.append((nx, ny))
    return seen


def plan_path(world: World, start_xy: tuple, goal_xy: tuple,
              agent_radius: float = 0.18, snap: float = 0.0):
    """World-coordinate waypoint list from start toward goal, or None.

    Waypoints are cell centers of the A* path with the exact start (and,
    when reached, the exact goal) substituted at the ends.  The start
    cell is treated as free even if inflation covers it.  Should the
    start sit so deep in an inflated pocket that no route exists, the
    plan detours through the nearest open cell bordering that pocket, so
    a pose that is already legal can always plan out of a tight spot.

    When the goal cell itself is swallowed by inflation (a point right
    next to furniture) no direct plan exists; with `snap` > 0 the plan
    instead ends at the reachable cell nearest the goal, provided that
    cell lies within `snap` meters of it.
    """
    res = world.resolution
    blocked = inflated_blocked(world, agent_radius)
    start = world.cell_of(*start_xy)
    goal = world.cell_of(*goal_xy)
    if not world.in_bounds(*start) or not world.in_bounds(*goal):
        return None
    start_in_pocket = bool(blocked[start]) and world.kind[start] == FREE
    if start_in_pocket:
        blocked[start] = False
    if world.kind[goal] == FREE and agent_radius == 0.0:
        blocked[goal] = False

    def escape():
        if not start_in_pocket:
            return None
        exit_cell = _pocket_exit(world, blocked, start, goal_xy)
        if exit_cell is None:
            return None
        exit_xy = ((exit_cell[0] + 0.5) * res, (exit_cell[1] + 0.5) * res)
        rest = plan_path(world, exit_xy, goal_xy, agent_radius, snap)
        if rest is None:
            return None
        return [(float(start_xy[0]), float(start_xy[1]))] + rest

    target = goal
    exact_goal = True
    if blocked[goal]:
        best = None
        for cell in _reachable_cells(blocked, start):
            cx, cy = (cell[0] + 0.5) * res, (cell[1] + 0.5) * res
            d = math.hypot(cx - goal_xy[0], cy - goal_xy[1])
            if d <= snap and (best is None or (d, cell) < best):
                best = (d, cell)
        if best is None:
            return escape()
        target = best[1]
        exact_goal = False
    cells = astar_cells(blocked, start, target)
    if cells is None:
        return escape()
    pts = [((ix + 0.5) * res, (iy + 0.5) * res) for ix, iy in cells]
    pts[0] = (float(start_xy[0]), float(start_xy[1]))
    if exact_goal:
        pts[-1] = (float(goal_xy[0]), float(goal_xy[1]))
    return pts


def path_length(points) -> float:
    return float(sum(math.hypot(b[0] - a[0], b[1] - a[1])
                     for a, b in zip(points, points[1:])))


def shortest_path_length(world: World, start_xy: tuple, goal_xy: tuple,
                         agent_radius: float = 0.0):
    """Geodesic distance in meters respecting walls, or None if unreachable.

    Defaults to the raw occupancy grid (no inflation) so the distance to
    a goal point flush against furniture is still defined.
    """
    pts = plan_path(world, start_xy, goal_xy, agent_radius)
    if pts is None:
        return None
    return path_length(pts)
