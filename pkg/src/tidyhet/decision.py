"""Hierarchical decision: sub-task allocation, sub-goal selection, low-level planning."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .knowledge import Ontology, candidate_locations
from .perception import PlacementTarget, SemanticMap, predict_receptacle
from .world import (
    DROP,
    MOVE_AHEAD,
    MOVE_LEFT,
    MOVE_RIGHT,
    PICK_UP,
    PUT_DOWN,
    ROTATE_LEFT,
    ROTATE_RIGHT,
    STOP,
    Action,
    Capability,
    Cell,
    Geometry,
    Pose,
    WorldConfig,
    facing_rotation,
    heading_vector,
    reach_ok,
    receptacle_interaction_cells,
    to_egocentric,
    to_world,
)

EXPLORE = "Explore"
PLACE = "Place"
NO_ACTION = "NoAction"

DELTA_VALUES = tuple(range(-4, 5))
ROT_VALUES = (0, 90, 180, 270)
OPE_VALUES = (PICK_UP, PUT_DOWN, DROP, NO_ACTION)
HOP = 4

PLAN_ORDER = (MOVE_AHEAD, MOVE_RIGHT, MOVE_LEFT, ROTATE_RIGHT, ROTATE_LEFT)


class PathError(RuntimeError):
    pass


class UnreachableTargetError(RuntimeError):
    pass


class ReplanSignal(RuntimeError):
    """Raised when a Place sub-task cannot progress with current knowledge."""


@dataclass(frozen=True)
class SubTask:
    kind: str = EXPLORE
    object_id: str | None = None
    object_type: str | None = None
    receptacle_type: str | None = None
    room_type: str | None = None
    instance: str | None = None

    def __post_init__(self):
        if self.kind not in (EXPLORE, PLACE):
            raise ValueError(f"unknown sub-task kind {self.kind!r}")
        if self.kind == EXPLORE and self.object_id is not None:
            raise ValueError("Explore carries no parameters")

    @classmethod
    def place(cls, object_id: str, object_type: str, target: PlacementTarget, kb: Ontology | None = None):
        if kb is not None and (target.receptacle_type, target.room_type) not in candidate_locations(object_type, kb):
            raise ValueError(f"{target} is not a home for {object_type}")
        return cls(PLACE, object_id, object_type, target.receptacle_type, target.room_type, target.instance)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("kind", "object_id", "object_type", "receptacle_type", "room_type", "instance")}


@dataclass(frozen=True)
class SubGoal:
    dx: int = 0
    dy: int = 0
    drot: int = 0
    ope: str = NO_ACTION
    stop: int = 0

    def __post_init__(self):
        if self.dx not in DELTA_VALUES or self.dy not in DELTA_VALUES:
            raise ValueError(f"sub-goal offsets must lie in [-4, 4], got ({self.dx}, {self.dy})")
        if self.drot not in ROT_VALUES:
            raise ValueError(f"drot must be one of {ROT_VALUES}")
        if self.ope not in OPE_VALUES:
            raise ValueError(f"ope must be one of {OPE_VALUES}")
        if self.stop not in (0, 1):
            raise ValueError("stop is a bit")

    def as_tuple(self) -> tuple:
        return (self.dx, self.dy, self.drot, self.ope, self.stop)

    def to_list(self) -> list:
        return list(self.as_tuple())


@dataclass(frozen=True)
class KnownObject:
    """A believed-misplaced object as one agent knows it."""

    object_id: str
    type: str
    cell: Cell
    height_class: str
    receptacle: str | None
    round: int = 0


@dataclass
class AgentRuntime:
    index: int
    capability: Capability
    pose: Pose
    smap: SemanticMap
    held: str | None = None
    held_type: str | None = None
    stopped: bool = False
    known: dict = field(default_factory=dict)
    subtask: SubTask = field(default_factory=SubTask)
    staleness: int = 0
    new_detection: bool = False
    newest_type: str | None = None
    newest_det: int = 0
    target: PlacementTarget | None = None

    @property
    def mani(self) -> bool:
        return bool(self.capability.mani)


@dataclass(frozen=True)
class TeamMember:
    """What a planner knows about one agent when allocating sub-tasks."""

    index: int
    capability: Capability
    pose: Pose
    subtask: SubTask = SubTask()
    held: str | None = None
    held_type: str | None = None
    stopped: bool = False


# -- grid search ---------------------------------------------------------------

def bfs_distances(geom: Geometry, src: Cell, blocked: frozenset = frozenset()) -> dict[Cell, int]:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        c = queue.popleft()
        for n in geom.neighbors(c):
            if n not in dist and n not in blocked:
                dist[n] = dist[c] + 1
                queue.append(n)
    return dist


def bfs_path(geom: Geometry, src: Cell, dst: Cell, blocked: frozenset = frozenset()) -> list[Cell] | None:
    """Shortest 4-connected path of cells from ``src`` to ``dst`` inclusive."""
    if src == dst:
        return [src]
    parent = {src: None}
    queue = deque([src])
    while queue:
        c = queue.popleft()
        for n in geom.neighbors(c):
            if n in parent or (n in blocked and n != dst):
                continue
            parent[n] = c
            if n == dst:
                path = [n]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path[::-1]
            queue.append(n)
    return None


def distance_to_entity(dist: dict[Cell, int], cell: Cell) -> float:
    """Path length to stand on or beside ``cell`` (which may be furniture)."""
    if cell in dist:
        return dist[cell]
    x, y = cell
    near = [dist[n] + 1 for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)) if n in dist]
    return min(near) if near else math.inf


def nearest_frontier(smap: SemanticMap, src: Cell, blocked: frozenset = frozenset()) -> Cell | None:
    """Closest frontier cell by path length, ties by (x, y); occupied cells are never chosen."""
    frontier = set(smap.frontier()) - blocked
    if not frontier:
        return None
    dist = bfs_distances(smap.geometry, src, blocked)
    reachable = [(dist[c], c[0], c[1]) for c in frontier if c in dist]
    if not reachable and blocked:
        dist = bfs_distances(smap.geometry, src)
        reachable = [(dist[c], c[0], c[1]) for c in frontier if c in dist]
    if not reachable:
        return None
    _, x, y = min(reachable)
    return (x, y)


def exploration_goal(smap: SemanticMap, src: Cell, blocked: frozenset = frozenset()) -> tuple[Cell, int | None] | None:
    """Nearest place to learn something new: a frontier cell, or a free cell
    beside unseen furniture together with the heading that faces it.

    Ties break by (path length, x, y, heading); None when nothing is left.
    """
    geom = smap.geometry
    goals: dict[Cell, list] = {}
    for c in set(smap.frontier()) - blocked:
        goals.setdefault(c, []).append(None)
    for f in smap.unseen_furniture():
        x, y = f
        for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if n in geom.walkable and n not in blocked and smap.explored[n]:
                goals.setdefault(n, []).append(facing_rotation(n, f))
    if not goals:
        return None
    dist = bfs_distances(geom, src, blocked)
    if not any(c in dist for c in goals) and blocked:
        dist = bfs_distances(geom, src)
    best = None
    for c, rots in goals.items():
        if c not in dist:
            continue
        for rot in rots:
            key = (dist[c], c[0], c[1], -1 if rot is None else rot)
            if best is None or key < best[0]:
                best = (key, c, rot)
    return None if best is None else (best[1], best[2])


def _plan_successors(geom: Geometry, state: tuple, blocked: frozenset):
    x, y, rot = state
    for name in PLAN_ORDER:
        if name in (ROTATE_RIGHT, ROTATE_LEFT):
            yield name, (x, y, (rot + (90 if name == ROTATE_RIGHT else 270)) % 360)
            continue
        base = {MOVE_AHEAD: rot, MOVE_RIGHT: rot + 90, MOVE_LEFT: rot + 270}[name]
        dx, dy = heading_vector(base % 360)
        n = (x + dx, y + dy)
        if n in geom.walkable and n not in blocked:
            yield name, (n[0], n[1], rot)


def plan_navigation(geom: Geometry, pose: Pose, goal: tuple[int, int, int], blocked: frozenset = frozenset()) -> list[str]:
    """Minimal action-name sequence from ``pose`` to the (x, y, rot) ``goal``.

    FIFO expansion in ``PLAN_ORDER`` makes the first plan found the
    lexicographically smallest among the shortest.
    """
    start = (pose.x, pose.y, pose.rot)
    if start == goal:
        return []
    if (goal[0], goal[1]) not in geom.walkable or (goal[0], goal[1]) in blocked:
        raise PathError(f"goal cell {goal[:2]} is not free")
    parent = {start: None}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for name, n in _plan_successors(geom, s, blocked):
            if n in parent:
                continue
            parent[n] = (s, name)
            if n == goal:
                names = []
                while parent[n] is not None:
                    n, name = parent[n]
                    names.append(name)
                return names[::-1]
            queue.append(n)
    raise PathError(f"no path from {start} to {goal}")


def subgoal_cell(pose: Pose, sg: SubGoal) -> tuple[int, int, int]:
    wx, wy = to_world(pose.rot, sg.dx, sg.dy)
    return (pose.x + wx, pose.y + wy, (pose.rot + sg.drot) % 360)


def shortest_path_actions(
    geom: Geometry, pose: Pose, sg: SubGoal, blocked: frozenset = frozenset(), target: str | None = None
) -> list[Action]:
    """Low-level burst realising one sub-goal: navigation, then ``ope``, then Stop if requested."""
    names = plan_navigation(geom, pose, subgoal_cell(pose, sg), blocked)
    actions = [Action(n) for n in names]
    if sg.ope != NO_ACTION:
        actions.append(Action(sg.ope, target))
    if sg.stop:
        actions.append(Action(STOP))
    return actions


# -- viewpoints and sub-goals ----------------------------------------------------

def select_viewpoint(
    geom: Geometry,
    cfg: WorldConfig,
    target: Cell,
    height_class: str,
    hei: int,
    receptacle: bool = False,
    blocked: frozenset = frozenset(),
) -> Pose:
    """Closest free walkable pose (not the target cell) from which the target can be manipulated."""
    inter = receptacle_interaction_cells(geom, target) if receptacle else None
    r = int(cfg.interact_range)
    best = None
    for x in range(target[0] - r, target[0] + r + 1):
        for y in range(target[1] - r, target[1] + r + 1):
            c = (x, y)
            if c == target or c not in geom.walkable or c in blocked:
                continue
            d = math.hypot(x - target[0], y - target[1])
            if d > cfg.interact_range or (best is not None and (d, x, y) >= best[0]):
                continue
            pose = Pose(x, y, facing_rotation(c, target))
            if reach_ok(geom, cfg, pose, hei, target, height_class, inter):
                best = ((d, x, y), pose)
    if best is None:
        raise UnreachableTargetError(f"no viewpoint for target at {target}")
    return best[1]


def _clip_hop(path: list[Cell]) -> int:
    x0, y0 = path[0]
    m = 0
    for i, (x, y) in enumerate(path):
        if abs(x - x0) > HOP or abs(y - y0) > HOP:
            break
        m = i
    return m


def _toward(geom: Geometry, pose: Pose, goal: Cell, final_rot: int | None, ope: str, blocked: frozenset) -> SubGoal:
    path = bfs_path(geom, pose.cell, goal, blocked) or bfs_path(geom, pose.cell, goal)
    if path is None:
        raise PathError(f"{goal} unreachable from {pose.cell}")
    m = _clip_hop(path)
    end = path[m]
    if m == len(path) - 1 and final_rot is not None:
        rot, op = final_rot, ope
    else:
        rot = facing_rotation(path[m - 1], end) if m > 0 else pose.rot
        op = NO_ACTION
    ex, ey = to_egocentric(pose.rot, end[0] - pose.x, end[1] - pose.y)
    return SubGoal(ex, ey, (rot - pose.rot) % 360, op, 0)


@dataclass(frozen=True)
class Intent:
    """A sub-goal plus what it needs to become a burst."""

    subgoal: SubGoal
    target: str | None = None
    goal: Cell | None = None
    reason: str = ""

    @property
    def arrives(self) -> bool:
        """The hop ends where the operation can be executed."""
        return self.subgoal.ope != NO_ACTION


def _interact_or_approach(
    rt: AgentRuntime, geom: Geometry, cfg: WorldConfig, cell: Cell, height_class: str,
    receptacle: bool, ope: str, target_id: str, blocked: frozenset,
) -> Intent:
    hei = rt.capability.hei
    inter = receptacle_interaction_cells(geom, cell) if receptacle else None
    pose = rt.pose
    facing = facing_rotation(pose.cell, cell) if pose.cell != cell else pose.rot
    if reach_ok(geom, cfg, pose, hei, cell, height_class, inter):
        return Intent(SubGoal(0, 0, 0, ope, 0), target_id, pose.cell, "interact")
    turned = Pose(pose.x, pose.y, facing, pose.pitch)
    if reach_ok(geom, cfg, turned, hei, cell, height_class, inter):
        return Intent(SubGoal(0, 0, (facing - pose.rot) % 360, ope, 0), target_id, pose.cell, "turn-interact")
    try:
        vp = select_viewpoint(geom, cfg, cell, height_class, hei, receptacle, blocked)
    except UnreachableTargetError:
        if not blocked:
            raise
        vp = select_viewpoint(geom, cfg, cell, height_class, hei, receptacle)
    sg = _toward(geom, pose, vp.cell, vp.rot, ope, blocked)
    return Intent(sg, target_id, vp.cell, "approach")


def next_subgoal(
    rt: AgentRuntime,
    subtask: SubTask,
    smap: SemanticMap,
    blocked: frozenset = frozenset(),
    allow_stop: bool = True,
    parked: frozenset = frozenset(),
) -> Intent:
    """Heuristic sub-goal for one agent given its sub-task and map.

    ``parked`` holds the cells of agents that have stopped for good; a
    finished explorer only waits or stops where it does not cut the floor in two.
    """
    geom, cfg = smap.geometry, smap.config
    if subtask.kind == PLACE:
        if rt.held is None:
            obj = rt.known.get(subtask.object_id)
            if obj is None:
                raise ReplanSignal(f"object {subtask.object_id} no longer known")
            return _interact_or_approach(
                rt, geom, cfg, obj.cell, obj.height_class, False, PICK_UP, subtask.object_id, blocked
            )
        if subtask.instance is not None and subtask.instance in smap.instances:
            e = smap.instances[subtask.instance]
            return _interact_or_approach(rt, geom, cfg, e.cell, e.height_class, True, PUT_DOWN, e.id, blocked)
        goal = exploration_goal(smap, rt.pose.cell, blocked)
        if goal is None:
            raise ReplanSignal(f"nothing left to explore to find a {subtask.receptacle_type}")
        return Intent(_toward(geom, rt.pose, goal[0], goal[1], NO_ACTION, blocked), None, goal[0], "search")
    goal = exploration_goal(smap, rt.pose.cell, blocked)
    if goal is None:
        if not parking_ok(geom, rt.pose.cell, parked):
            spot = nearest_parking(geom, rt.pose.cell, blocked, parked)
            if spot is not None:
                return Intent(_toward(geom, rt.pose, spot, None, NO_ACTION, blocked), None, spot, "park")
        return Intent(SubGoal(0, 0, 0, NO_ACTION, 1 if allow_stop else 0), None, rt.pose.cell, "done")
    return Intent(_toward(geom, rt.pose, goal[0], goal[1], NO_ACTION, blocked), None, goal[0], "explore")


def parking_ok(geom: Geometry, cell: Cell, parked: frozenset = frozenset()) -> bool:
    """Whether stopping on ``cell`` leaves the free floor (minus already parked agents) connected."""
    free = geom.walkable - parked - {cell}
    if not free:
        return True
    src = min(free)
    seen = {src}
    queue = deque([src])
    while queue:
        c = queue.popleft()
        for n in geom.neighbors(c):
            if n in free and n not in seen:
                seen.add(n)
                queue.append(n)
    return len(seen) == len(free)


def nearest_parking(geom: Geometry, src: Cell, blocked: frozenset, parked: frozenset) -> Cell | None:
    dist = bfs_distances(geom, src, blocked)
    for _, x, y in sorted((d, c[0], c[1]) for c, d in dist.items()):
        if parking_ok(geom, (x, y), parked):
            return (x, y)
    return None


# -- allocation -------------------------------------------------------------------

def greedy_assign(agents: list[int], objects: list[str], dist) -> dict[int, str]:
    """Repeatedly pair the globally closest (agent, object); ties by agent index then object id.

    ``dist`` maps ``(agent, object)`` to a path length; infinite pairs are skipped.
    """
    pairs = sorted(
        (dist[(a, o)], a, o) for a in agents for o in objects if math.isfinite(dist[(a, o)])
    )
    out: dict[int, str] = {}
    taken = set()
    for _, a, o in pairs:
        if a in out or o in taken:
            continue
        out[a] = o
        taken.add(o)
    return out


def plan_subtasks(
    team: list[TeamMember],
    detections: dict[str, KnownObject],
    kb: Ontology,
    geom: Geometry,
    maps: dict[int, SemanticMap] | SemanticMap,
    target_fn=None,
) -> dict[int, SubTask]:
    """Allocate Place sub-tasks to manipulation-capable agents, Explore to the rest.

    ``target_fn(member, object_type, smap)`` overrides receptacle prediction
    (used by the oracle expert and the predictor ablation).
    """
    if target_fn is None:
        def target_fn(member, o_type, smap):
            return predict_receptacle(o_type, smap, kb, member.pose)

    def map_for(i):
        return maps[i] if isinstance(maps, dict) else maps

    out: dict[int, SubTask] = {}
    handled = set()
    for m in team:
        st = m.subtask
        if not m.capability.mani:
            continue
        if m.held is not None:
            oid = m.held
            otype = m.held_type if st.object_id != oid or st.object_type is None else st.object_type
            out[m.index] = SubTask.place(oid, otype, target_fn(m, otype, map_for(m.index)))
            handled.add(oid)
        elif st.kind == PLACE and st.object_id in detections:
            obj = detections[st.object_id]
            out[m.index] = SubTask.place(obj.object_id, obj.type, target_fn(m, obj.type, map_for(m.index)))
            handled.add(st.object_id)
    free = [m for m in team if m.capability.mani and m.index not in out and not m.stopped]
    pending = sorted(o for o in detections if o not in handled)
    if free and pending:
        dist = {}
        for m in free:
            field_ = bfs_distances(geom, m.pose.cell)
            for o in pending:
                dist[(m.index, o)] = distance_to_entity(field_, detections[o].cell)
        assignment = greedy_assign([m.index for m in free], pending, dist)
        members = {m.index: m for m in free}
        for a, o in assignment.items():
            obj = detections[o]
            out[a] = SubTask.place(o, obj.type, target_fn(members[a], obj.type, map_for(a)))
    for m in team:
        out.setdefault(m.index, SubTask())
    return out


def infer_intentions(
    peers: list[TeamMember], smap: SemanticMap, known: dict[str, KnownObject], blocked: frozenset = frozenset()
) -> dict[int, Intent | None]:
    """Predict each peer's next sub-goal by running :func:`next_subgoal` under our own map."""
    out = {}
    for p in peers:
        rt = AgentRuntime(p.index, p.capability, p.pose, smap, held=p.held, held_type=p.held_type, known=known)
        try:
            out[p.index] = next_subgoal(rt, p.subtask, smap, blocked)
        except (ReplanSignal, PathError, UnreachableTargetError):
            out[p.index] = None
    return out
