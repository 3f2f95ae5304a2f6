"""Multi-room gridworld: geometry, embodiment, actions, and visibility.

Coordinates are integer cells of 0.25 m.  Heading ``rot`` is measured
clockwise from +y: 0 faces +y, 90 faces +x, 180 faces -y, 270 faces -x.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .knowledge import FLOOR, Ontology, UnknownTypeError, is_reasonable

Cell = tuple[int, int]

SCENE_SCHEMA_VERSION = 1
ROTATIONS = (0, 90, 180, 270)
PITCHES = (-30, 0, 30)

MOVE_AHEAD = "MoveAhead"
MOVE_RIGHT = "MoveRight"
MOVE_LEFT = "MoveLeft"
ROTATE_RIGHT = "RotateRight"
ROTATE_LEFT = "RotateLeft"
LOOK_UP = "LookUp"
LOOK_DOWN = "LookDown"
STOP = "Stop"
PICK_UP = "PickUp"
PUT_DOWN = "PutDown"
DROP = "Drop"

NAV_ACTIONS = (MOVE_AHEAD, MOVE_RIGHT, MOVE_LEFT, ROTATE_RIGHT, ROTATE_LEFT, LOOK_UP, LOOK_DOWN, STOP)
MANI_ACTIONS = (PICK_UP, PUT_DOWN, DROP)


class SceneError(ValueError):
    """Malformed or inconsistent scene file."""


class CapabilityError(ValueError):
    """An agent attempted an action outside its action space."""


@dataclass(frozen=True)
class WorldConfig:
    r_vis: float = 20.0
    interact_range: float = 6.0


@dataclass(frozen=True)
class Capability:
    nav: int = 1
    mani: int = 0
    hei: int = 0

    def __post_init__(self):
        if self.nav != 1:
            raise ValueError("every agent navigates (nav must be 1)")
        if self.mani not in (0, 1) or self.hei not in (0, 1):
            raise ValueError(f"capability bits must be 0/1, got {self}")

    @property
    def actions(self) -> tuple[str, ...]:
        return NAV_ACTIONS + MANI_ACTIONS if self.mani else NAV_ACTIONS

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.nav, self.mani, self.hei)


@dataclass(frozen=True)
class Pose:
    x: int
    y: int
    rot: int = 0
    pitch: int = 0

    def __post_init__(self):
        if self.rot not in ROTATIONS:
            raise ValueError(f"rot must be one of {ROTATIONS}, got {self.rot}")
        if self.pitch not in PITCHES:
            raise ValueError(f"pitch must be one of {PITCHES}, got {self.pitch}")

    @property
    def cell(self) -> Cell:
        return (self.x, self.y)


def heading_vector(rot: int) -> Cell:
    return {0: (0, 1), 90: (1, 0), 180: (0, -1), 270: (-1, 0)}[rot % 360]


def right_vector(rot: int) -> Cell:
    return heading_vector((rot + 90) % 360)


def to_egocentric(rot: int, wx: int, wy: int) -> Cell:
    """World offset -> (right, forward) offset for an agent facing ``rot``."""
    fx, fy = heading_vector(rot)
    rx, ry = right_vector(rot)
    return (wx * rx + wy * ry, wx * fx + wy * fy)


def to_world(rot: int, ex: int, ey: int) -> Cell:
    fx, fy = heading_vector(rot)
    rx, ry = right_vector(rot)
    return (ex * rx + ey * fx, ex * ry + ey * fy)


def facing_rotation(src: Cell, dst: Cell) -> int:
    """Heading from ``src`` that best faces ``dst`` (dominant axis, x on ties)."""
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    if dx == 0 and dy == 0:
        return 0
    if abs(dx) >= abs(dy):
        return 90 if dx > 0 else 270
    return 0 if dy > 0 else 180


@dataclass
class AgentState:
    capability: Capability
    pose: Pose
    held: str | None = None
    stopped: bool = False

    def __post_init__(self):
        if self.held is not None and not self.capability.mani:
            raise ValueError("an agent without manipulation cannot hold objects")


@dataclass(frozen=True)
class Receptacle:
    id: str
    type: str
    cell: Cell


@dataclass
class ObjectInstance:
    id: str
    type: str
    receptacle: str | None = None
    floor_cell: Cell | None = None

    @property
    def held(self) -> bool:
        return self.receptacle is None and self.floor_cell is None


@dataclass(frozen=True)
class Room:
    id: str
    type: str
    cells: frozenset


class Geometry:
    """Static floor plan: rooms, walls, receptacle footprints.

    Instances are hashable by identity and cache visibility queries.
    """

    def __init__(self, width: int, height: int, rooms: list[Room], receptacle_cells: Iterable[Cell]):
        self.width = width
        self.height = height
        self.rooms = list(rooms)
        self.room_of: dict[Cell, str] = {}
        for room in self.rooms:
            for c in room.cells:
                if c in self.room_of:
                    raise SceneError(f"cell {c} belongs to rooms {self.room_of[c]!r} and {room.id!r}")
                self.room_of[c] = room.id
        self.room_type = {r.id: r.type for r in self.rooms}
        self.furniture = frozenset(receptacle_cells)
        self.walkable = frozenset(c for c in self.room_of if c not in self.furniture)
        self._los: dict = {}
        self._vis: dict = {}

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def is_wall(self, c: Cell) -> bool:
        return c not in self.room_of

    def neighbors(self, c: Cell) -> list[Cell]:
        x, y = c
        return [n for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)) if n in self.walkable]

    def line_of_sight(self, a: Cell, b: Cell) -> bool:
        key = (a, b)
        hit = self._los.get(key)
        if hit is None:
            line = supercover_line(a, b)
            hit = self._los[key] = not any(self.is_wall(c) for c in line[1:-1])
        return hit

    def visible_cells(self, x: int, y: int, rot: int, r_vis: float) -> frozenset:
        key = (x, y, rot, r_vis)
        hit = self._vis.get(key)
        if hit is None:
            hit = self._vis[key] = _visible_cells(self, x, y, rot, r_vis)
        return hit


def supercover_line(a: Cell, b: Cell) -> list[Cell]:
    """Grid cells crossed by the segment between two cell centres."""
    x, y = a
    dx, dy = b[0] - a[0], b[1] - a[1]
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    out = [(x, y)]
    ix = iy = 0
    while ix < nx or iy < ny:
        decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if decision == 0:
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif decision < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        out.append((x, y))
    return out


def in_frustum(x: int, y: int, rot: int, c: Cell) -> bool:
    dx, dy = c[0] - x, c[1] - y
    if dx == 0 and dy == 0:
        return True
    fx, fy = heading_vector(rot)
    return fx * dx + fy * dy >= math.hypot(dx, dy) * math.sqrt(0.5) - 1e-9


def _visible_cells(geom: Geometry, x: int, y: int, rot: int, r_vis: float) -> frozenset:
    r = int(math.floor(r_vis))
    out = []
    for cx in range(max(0, x - r), min(geom.width, x + r + 1)):
        for cy in range(max(0, y - r), min(geom.height, y + r + 1)):
            c = (cx, cy)
            if math.hypot(cx - x, cy - y) > r_vis:
                continue
            if in_frustum(x, y, rot, c) and geom.line_of_sight((x, y), c):
                out.append(c)
    return frozenset(out)


def height_permits(hei: int, pitch: int, height_class: str, dist: float, r_vis: float) -> bool:
    """Height rule: each agent height sees two surface bands fully, the third only up close.

    Looking down (pitch -30) widens the near band for floor entities seen by a
    high agent by one cell; looking up (+30) does the same for high surfaces
    seen by a low agent.
    """
    half = r_vis / 2
    if hei == 0 and height_class == "high-surface":
        return dist <= half + (1 if pitch == 30 else 0)
    if hei == 1 and height_class == "floor-level":
        return dist <= half + (1 if pitch == -30 else 0)
    return dist <= r_vis


def entity_visible(
    geom: Geometry, pose: Pose, hei: int, cell: Cell, height_class: str, cfg: WorldConfig
) -> bool:
    dist = math.hypot(cell[0] - pose.x, cell[1] - pose.y)
    if dist > cfg.r_vis:
        return False
    if cell not in geom.visible_cells(pose.x, pose.y, pose.rot, cfg.r_vis):
        return False
    return height_permits(hei, pose.pitch, height_class, dist, cfg.r_vis)


@dataclass(frozen=True)
class ObjectSighting:
    id: str
    type: str
    receptacle: str | None
    receptacle_type: str
    room_id: str
    room_type: str
    cell: Cell

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.type, self.receptacle_type, self.room_type)


@dataclass(frozen=True)
class ReceptacleSighting:
    id: str
    type: str
    room_id: str
    room_type: str
    cell: Cell


@dataclass(frozen=True)
class Observation:
    agent: int
    pose: Pose
    visible_cells: frozenset
    visible_objects: tuple[ObjectSighting, ...]
    visible_receptacles: tuple[ReceptacleSighting, ...]


@dataclass(frozen=True)
class Action:
    name: str
    target: str | None = None

    def to_list(self) -> list:
        return [self.name, self.target]


@dataclass
class StepResult:
    status: str  # "success" | "blocked" | "invalid"
    reason: str = ""
    delta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "success"


class Scene:
    def __init__(
        self,
        geometry: Geometry,
        receptacles: list[Receptacle],
        objects: list[ObjectInstance],
        agents: list[AgentState] | None = None,
        name: str = "",
        kb: Ontology | None = None,
        config: WorldConfig | None = None,
    ):
        self.geometry = geometry
        self.receptacles = {r.id: r for r in receptacles}
        self.objects = {o.id: o for o in objects}
        self.agents = list(agents or [])
        self.name = name
        self.kb = kb
        self.config = config or WorldConfig()
        self._interaction_cells = {r.id: receptacle_interaction_cells(geometry, r.cell) for r in receptacles}

    # -- derived quantities -------------------------------------------------
    def interaction_cells(self, receptacle_id: str) -> tuple[Cell, ...]:
        return self._interaction_cells[receptacle_id]

    def object_cell(self, object_id: str) -> Cell | None:
        o = self.objects[object_id]
        if o.receptacle is not None:
            return self.receptacles[o.receptacle].cell
        if o.floor_cell is not None:
            return o.floor_cell
        for agent in self.agents:
            if agent.held == object_id:
                return agent.pose.cell
        return None

    def object_room(self, object_id: str) -> str | None:
        c = self.object_cell(object_id)
        return None if c is None else self.geometry.room_of[c]

    def holder(self, object_id: str) -> int | None:
        for i, agent in enumerate(self.agents):
            if agent.held == object_id:
                return i
        return None

    def placement_triple(self, object_id: str) -> tuple[str, str, str] | None:
        o = self.objects[object_id]
        if o.held:
            return None
        p_type = self.receptacles[o.receptacle].type if o.receptacle is not None else FLOOR
        room = self.object_room(object_id)
        return (o.type, p_type, self.geometry.room_type[room])

    def occupied(self, exclude: int | None = None) -> set[Cell]:
        return {a.pose.cell for i, a in enumerate(self.agents) if i != exclude}

    def entity_height(self, object_id: str) -> str:
        o = self.objects[object_id]
        if o.receptacle is not None:
            return self.kb.height_class(self.receptacles[o.receptacle].type)
        return "floor-level"

    def copy(self) -> "Scene":
        dup = copy.copy(self)
        dup.objects = {k: copy.copy(v) for k, v in self.objects.items()}
        dup.agents = [copy.copy(a) for a in self.agents]
        return dup

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        g = self.geometry
        rooms = []
        for room in g.rooms:
            rooms.append({"id": room.id, "type": room.type, "rects": _cells_to_rects(room.cells)})
        inside = set()
        for room in rooms:
            for x0, y0, x1, y1 in room["rects"]:
                inside.update((x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1))
        objects = []
        for o in sorted(self.objects.values(), key=lambda o: o.id):
            entry = {"id": o.id, "type": o.type}
            if o.receptacle is not None:
                entry["on"] = o.receptacle
            elif o.floor_cell is not None:
                entry["floor"] = list(o.floor_cell)
            else:
                entry["held"] = True
            objects.append(entry)
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "name": self.name,
            "width": g.width,
            "height": g.height,
            "rooms": rooms,
            "walls": [],
            "receptacles": [
                {"id": r.id, "type": r.type, "cell": list(r.cell)}
                for r in sorted(self.receptacles.values(), key=lambda r: r.id)
            ],
            "objects": objects,
            "agents": [
                {
                    "nav": a.capability.nav,
                    "mani": a.capability.mani,
                    "hei": a.capability.hei,
                    "x": a.pose.x,
                    "y": a.pose.y,
                    "rot": a.pose.rot,
                    "pitch": a.pose.pitch,
                    "held": a.held,
                    "stopped": a.stopped,
                }
                for a in self.agents
            ],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Scene) and self.canonical_json() == other.canonical_json()

    __hash__ = None


def _four(c: Cell) -> list[Cell]:
    x, y = c
    return [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]


def _cells_to_rects(cells: Iterable[Cell]) -> list[list[int]]:
    """Cover a cell set by maximal horizontal runs merged vertically."""
    remaining = set(cells)
    rects = []
    for c in sorted(cells, key=lambda c: (c[1], c[0])):
        if c not in remaining:
            continue
        x0, y0 = c
        x1 = x0
        while (x1 + 1, y0) in remaining:
            x1 += 1
        y1 = y0
        while all((x, y1 + 1) in remaining for x in range(x0, x1 + 1)):
            y1 += 1
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                remaining.discard((x, y))
        rects.append([x0, y0, x1, y1])
    return rects


def parse_scene(doc: dict, kb: Ontology, config: WorldConfig | None = None) -> Scene:
    if doc.get("schema_version") != SCENE_SCHEMA_VERSION:
        raise SceneError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        width, height = int(doc["width"]), int(doc["height"])
        walls = {tuple(c) for c in doc.get("walls", [])}
        rooms = []
        for r in doc["rooms"]:
            if r["type"] not in kb.room_types:
                raise SceneError(f"room {r['id']!r} has unknown type {r['type']!r}")
            cells = set()
            for x0, y0, x1, y1 in r["rects"]:
                cells.update((x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1))
            cells -= walls
            if not cells:
                raise SceneError(f"room {r['id']!r} is empty")
            rooms.append(Room(r["id"], r["type"], frozenset(cells)))
        receptacles = [Receptacle(r["id"], r["type"], tuple(r["cell"])) for r in doc["receptacles"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(f"malformed scene: {exc!r}") from exc
    geometry = Geometry(width, height, rooms, [r.cell for r in receptacles])
    for c in geometry.room_of:
        if not geometry.in_bounds(c):
            raise SceneError(f"room cell {c} outside {width}x{height} grid")
    seen = set()
    for r in receptacles:
        if r.id in seen:
            raise SceneError(f"duplicate receptacle id {r.id!r}")
        seen.add(r.id)
        try:
            if not kb.type(r.type).receptacle:
                raise SceneError(f"receptacle {r.id!r} has non-receptacle type {r.type!r}")
        except UnknownTypeError:
            raise SceneError(f"receptacle {r.id!r} has unknown type {r.type!r}") from None
        if r.cell not in geometry.room_of:
            raise SceneError(f"receptacle {r.id!r} at {r.cell} is outside every room")
    objects = []
    for o in doc["objects"]:
        oid, otype = o["id"], o["type"]
        if oid in seen:
            raise SceneError(f"duplicate id {oid!r}")
        seen.add(oid)
        try:
            if not kb.type(otype).pickupable:
                raise SceneError(f"object {oid!r} has non-pickupable type {otype!r}")
        except UnknownTypeError:
            raise SceneError(f"object {oid!r} has unknown type {otype!r}") from None
        if "on" in o:
            if o["on"] not in {r.id for r in receptacles}:
                raise SceneError(f"object {oid!r} placed on missing receptacle {o['on']!r}")
            objects.append(ObjectInstance(oid, otype, receptacle=o["on"]))
        elif "floor" in o:
            cell = tuple(o["floor"])
            if cell not in geometry.walkable:
                raise SceneError(f"object {oid!r} on non-walkable floor cell {cell}")
            objects.append(ObjectInstance(oid, otype, floor_cell=cell))
        elif o.get("held"):
            objects.append(ObjectInstance(oid, otype))
        else:
            raise SceneError(f"object {oid!r} has no placement")
    agents = []
    for i, a in enumerate(doc.get("agents", [])):
        cap = Capability(a.get("nav", 1), a["mani"], a["hei"])
        pose = Pose(a["x"], a["y"], a.get("rot", 0), a.get("pitch", 0))
        if pose.cell not in geometry.walkable:
            raise SceneError(f"agent {i} on non-walkable cell {pose.cell}")
        agents.append(AgentState(cap, pose, a.get("held"), a.get("stopped", False)))
    scene = Scene(geometry, receptacles, objects, agents, doc.get("name", ""), kb, config)
    validate_scene(scene)
    return scene


def validate_scene(scene: Scene) -> None:
    cells = [a.pose.cell for a in scene.agents]
    if len(set(cells)) != len(cells):
        raise SceneError("two agents share a cell")
    for rid in scene.receptacles:
        if not scene.interaction_cells(rid):
            raise SceneError(f"receptacle {rid!r} has no walkable interaction cell")
    held = [a.held for a in scene.agents if a.held is not None]
    for oid in held:
        if oid not in scene.objects or not scene.objects[oid].held:
            raise SceneError(f"agent holds {oid!r} which is not marked held")
    for o in scene.objects.values():
        if o.held and o.id not in held:
            raise SceneError(f"object {o.id!r} is held by no agent")


def load_scene(path: str | Path, kb: Ontology, config: WorldConfig | None = None) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: not valid JSON: {exc}") from exc
    return parse_scene(doc, kb, config)


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1, sort_keys=True) + "\n")


def shipped_scene_paths() -> list[Path]:
    from importlib import resources

    root = resources.files("tidyhet.data").joinpath("scenes")
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


# -- perception and interaction -------------------------------------------------

def observe(scene: Scene, agent_id: int) -> Observation:
    agent = scene.agents[agent_id]
    pose, hei, cfg, g = agent.pose, agent.capability.hei, scene.config, scene.geometry
    cells = g.visible_cells(pose.x, pose.y, pose.rot, cfg.r_vis)
    objs = []
    for oid in sorted(scene.objects):
        o = scene.objects[oid]
        if o.held:
            continue
        cell = scene.object_cell(oid)
        if not entity_visible(g, pose, hei, cell, scene.entity_height(oid), cfg):
            continue
        room = g.room_of[cell]
        p_type = scene.receptacles[o.receptacle].type if o.receptacle else FLOOR
        objs.append(ObjectSighting(oid, o.type, o.receptacle, p_type, room, g.room_type[room], cell))
    recs = []
    for rid in sorted(scene.receptacles):
        r = scene.receptacles[rid]
        if entity_visible(g, pose, hei, r.cell, scene.kb.height_class(r.type), cfg):
            room = g.room_of[r.cell]
            recs.append(ReceptacleSighting(rid, r.type, room, g.room_type[room], r.cell))
    return Observation(agent_id, pose, cells, tuple(objs), tuple(recs))


def reach_ok(
    geom: Geometry,
    cfg: WorldConfig,
    pose: Pose,
    hei: int,
    cell: Cell,
    height_class: str,
    interaction_cells: Iterable[Cell] | None = None,
) -> bool:
    """Whether an agent at ``pose`` may manipulate the entity at ``cell``.

    Receptacles pass their interaction cells: one of them must also be in range.
    """
    reach = cfg.interact_range
    if math.hypot(cell[0] - pose.x, cell[1] - pose.y) > reach:
        return False
    if interaction_cells is not None and not any(
        math.hypot(c[0] - pose.x, c[1] - pose.y) <= reach for c in interaction_cells
    ):
        return False
    return entity_visible(geom, pose, hei, cell, height_class, cfg)


def receptacle_interaction_cells(geom: Geometry, cell: Cell) -> tuple[Cell, ...]:
    return tuple(sorted(n for n in _four(cell) if n in geom.walkable))


def can_pick_up(scene: Scene, pose: Pose, hei: int, object_id: str) -> bool:
    if scene.objects[object_id].held:
        return False
    cell = scene.object_cell(object_id)
    return reach_ok(scene.geometry, scene.config, pose, hei, cell, scene.entity_height(object_id))


def can_put_down(scene: Scene, pose: Pose, hei: int, receptacle_id: str) -> bool:
    r = scene.receptacles[receptacle_id]
    return reach_ok(
        scene.geometry, scene.config, pose, hei, r.cell, scene.kb.height_class(r.type),
        scene.interaction_cells(receptacle_id),
    )


def step(scene: Scene, agent_id: int, action: Action) -> StepResult:
    """Apply one low-level action in place."""
    if not 0 <= agent_id < len(scene.agents):
        raise IndexError(f"agent {agent_id} out of range")
    agent = scene.agents[agent_id]
    if action.name not in agent.capability.actions:
        raise CapabilityError(f"agent {agent_id} cannot {action.name}")
    if agent.stopped:
        return StepResult("invalid", "agent stopped")
    pose = agent.pose
    name = action.name
    if name in (MOVE_AHEAD, MOVE_RIGHT, MOVE_LEFT):
        base = {MOVE_AHEAD: pose.rot, MOVE_RIGHT: pose.rot + 90, MOVE_LEFT: pose.rot + 270}[name]
        dx, dy = heading_vector(base % 360)
        target = (pose.x + dx, pose.y + dy)
        if target not in scene.geometry.walkable:
            return StepResult("blocked", "not walkable")
        if target in scene.occupied(exclude=agent_id):
            return StepResult("blocked", "occupied")
        agent.pose = Pose(target[0], target[1], pose.rot, pose.pitch)
        return StepResult("success", delta={"pose": [target[0], target[1], pose.rot, pose.pitch]})
    if name in (ROTATE_RIGHT, ROTATE_LEFT):
        rot = (pose.rot + (90 if name == ROTATE_RIGHT else 270)) % 360
        agent.pose = Pose(pose.x, pose.y, rot, pose.pitch)
        return StepResult("success", delta={"pose": [pose.x, pose.y, rot, pose.pitch]})
    if name in (LOOK_UP, LOOK_DOWN):
        pitch = max(-30, min(30, pose.pitch + (30 if name == LOOK_UP else -30)))
        agent.pose = Pose(pose.x, pose.y, pose.rot, pitch)
        return StepResult("success", delta={"pose": [pose.x, pose.y, pose.rot, pitch]})
    if name == STOP:
        agent.stopped = True
        return StepResult("success", delta={"stopped": True})
    if name == PICK_UP:
        oid = action.target
        if agent.held is not None:
            return StepResult("invalid", "hand not empty")
        if oid not in scene.objects:
            return StepResult("invalid", f"no object {oid!r}")
        if not can_pick_up(scene, pose, agent.capability.hei, oid):
            return StepResult("invalid", "object not reachable")
        o = scene.objects[oid]
        o.receptacle = None
        o.floor_cell = None
        agent.held = oid
        return StepResult("success", delta={"held": oid})
    if name == PUT_DOWN:
        rid = action.target
        if agent.held is None:
            return StepResult("invalid", "hand empty")
        if rid not in scene.receptacles:
            return StepResult("invalid", f"no receptacle {rid!r}")
        if not can_put_down(scene, pose, agent.capability.hei, rid):
            return StepResult("invalid", "receptacle not reachable")
        o = scene.objects[agent.held]
        o.receptacle = rid
        agent.held = None
        return StepResult("success", delta={"object": o.id, "on": rid})
    if name == DROP:
        if agent.held is None:
            return StepResult("invalid", "hand empty")
        o = scene.objects[agent.held]
        o.floor_cell = pose.cell
        agent.held = None
        return StepResult("success", delta={"object": o.id, "floor": list(pose.cell)})
    raise CapabilityError(f"unknown action {name!r}")


def discriminate(scene: Scene, object_id: str, kb: Ontology) -> bool:
    if object_id not in scene.objects:
        raise KeyError(object_id)
    triple = scene.placement_triple(object_id)
    if triple is None:
        return False
    return is_reasonable(*triple, kb)


def is_task_complete(scene: Scene, task, kb: Ontology) -> bool:
    """Every object in the scene passes the discriminator and no hand is full.

    ``task`` is accepted for interface symmetry; completion is a property of
    the whole scene, not only of the task's misplaced objects.
    """
    if task is not None and hasattr(task, "misplacements"):
        missing = [m.object_id for m in task.misplacements if m.object_id not in scene.objects]
        if missing:
            raise ValueError(f"task objects {missing} not in scene")
    if any(a.held is not None for a in scene.agents):
        return False
    return all(discriminate(scene, oid, kb) for oid in scene.objects)
