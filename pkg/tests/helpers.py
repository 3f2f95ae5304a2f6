"""Small hand-built fixtures shared by the test modules."""

from __future__ import annotations

from collections import deque

from tidyhet.world import (
    AgentState, Capability, Geometry, ObjectInstance, Pose, Receptacle, Room, Scene,
)


def grid_scene(rows, kb, rooms=None, receptacles=(), objects=(), agents=()):
    """Scene from an ASCII map; the first row is the top (largest y).

    '#' is wall and every other character is floor. ``rooms`` maps a map
    character to (room id, room type); by default every non-wall cell is
    one Kitchen.
    """
    height = len(rows)
    width = max(len(r) for r in rows)
    rooms = rooms or {}
    cells: dict[str, set] = {}
    for row_idx, row in enumerate(rows):
        y = height - 1 - row_idx
        for x, ch in enumerate(row):
            if ch == "#":
                continue
            key = ch if ch in rooms else None
            cells.setdefault(key, set()).add((x, y))
    room_objs = []
    for key, cs in sorted(cells.items(), key=lambda kv: str(kv[0])):
        rid, rtype = rooms.get(key, ("r0", "Kitchen"))
        room_objs.append(Room(rid, rtype, frozenset(cs)))
    recs = [Receptacle(rid, rtype, tuple(cell)) for rid, rtype, cell in receptacles]
    geom = Geometry(width, height, room_objs, [r.cell for r in recs])
    objs = []
    for oid, otype, where in objects:
        if isinstance(where, str):
            objs.append(ObjectInstance(oid, otype, receptacle=where))
        else:
            objs.append(ObjectInstance(oid, otype, floor_cell=tuple(where)))
    ags = [AgentState(Capability(*cap), Pose(*pose)) for cap, pose in agents]
    return Scene(geom, recs, objs, ags, name="fixture", kb=kb)


def bfs_length(walkable, src, dst):
    """Independent cell-level breadth-first distance."""
    if src == dst:
        return 0
    seen = {src}
    q = deque([(src, 0)])
    while q:
        (x, y), d = q.popleft()
        for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if n in walkable and n not in seen:
                if n == dst:
                    return d + 1
                seen.add(n)
                q.append((n, d + 1))
    return None


def pose_bfs_length(walkable, start, goal):
    """Breadth-first distance over (x, y, rot) with the five navigation moves.

    Written from the action definitions alone: MoveAhead steps along the
    heading, MoveRight/MoveLeft strafe, Rotate* turn by 90 degrees.
    """
    heading = {0: (0, 1), 90: (1, 0), 180: (0, -1), 270: (-1, 0)}
    if start == goal:
        return 0
    seen = {start}
    q = deque([(start, 0)])
    while q:
        (x, y, r), d = q.popleft()
        fx, fy = heading[r]
        rx, ry = heading[(r + 90) % 360]
        succ = [(x + fx, y + fy, r), (x + rx, y + ry, r), (x - rx, y - ry, r),
                (x, y, (r + 90) % 360), (x, y, (r - 90) % 360)]
        for s in succ:
            if s[:2] in walkable and s not in seen:
                if s == goal:
                    return d + 1
                seen.add(s)
                q.append((s, d + 1))
    return None
