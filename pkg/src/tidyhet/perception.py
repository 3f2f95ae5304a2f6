"""Symbolic perception: semantic mapping, misplacement detection, room
classification and receptacle prediction.

The floor plan (walls, furniture footprints and the wall-bounded region of
every cell) is known to each agent; room *types* are not, and must be
inferred from the receptacles an agent has seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .knowledge import FLOOR, ROOM_TYPES, Ontology, candidate_locations, is_reasonable
from .world import Cell, Geometry, Observation, Pose, WorldConfig, entity_visible


@dataclass(frozen=True)
class InstanceEntry:
    id: str
    type: str
    kind: str  # "object" | "receptacle"
    cell: Cell
    region: str
    height_class: str
    receptacle: str | None = None
    support_type: str | None = None
    room_type: str | None = None
    round: int = 0


@dataclass(frozen=True)
class Detection:
    object_id: str
    det: int
    triple: tuple[str, str, str]
    round: int
    cell: Cell
    receptacle: str | None = None


@dataclass(frozen=True)
class DetectorNoise:
    fp: float = 0.0
    fn: float = 0.0

    def __post_init__(self):
        if not (0 <= self.fp <= 1 and 0 <= self.fn <= 1):
            raise ValueError("noise probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class PlacementTarget:
    receptacle_type: str
    room_type: str
    instance: str | None  # None = not yet observed


class QueryError(ValueError):
    pass


@dataclass
class SemanticMap:
    """One agent's accumulated map.

    ``explored`` is indexed ``[x, y]``.  Type channels are derived from the
    instance table on demand (see :meth:`local_tensor`).
    """

    geometry: Geometry
    kb: Ontology
    hei: int = 0
    config: WorldConfig = field(default_factory=WorldConfig)
    explored: np.ndarray = None
    instances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.explored is None:
            self.explored = np.zeros((self.geometry.width, self.geometry.height), dtype=bool)
        self.type_names = self.kb.all_type_names
        self._type_index = {t: i for i, t in enumerate(self.type_names)}

    @property
    def n_channels(self) -> int:
        return len(self.type_names) + 2

    def is_explored(self, cell: Cell) -> bool:
        return bool(self.explored[cell])

    def region_of(self, cell: Cell) -> str | None:
        return self.geometry.room_of.get(cell)

    def objects(self) -> list[InstanceEntry]:
        return [e for _, e in sorted(self.instances.items()) if e.kind == "object"]

    def receptacles(self) -> list[InstanceEntry]:
        return [e for _, e in sorted(self.instances.items()) if e.kind == "receptacle"]

    def copy(self) -> "SemanticMap":
        dup = replace(self, explored=self.explored.copy(), instances=dict(self.instances))
        return dup

    def explored_fraction(self) -> float:
        walk = self.geometry.walkable
        return sum(1 for c in walk if self.explored[c]) / len(walk)

    def frontier(self) -> list[Cell]:
        """Unexplored walkable cells 4-adjacent to an explored walkable cell."""
        g = self.geometry
        out = []
        for c in sorted(g.walkable):
            if self.explored[c]:
                continue
            if any(self.explored[n] for n in g.neighbors(c)):
                out.append(c)
        return out

    def unseen_furniture(self) -> list[Cell]:
        """Furniture cells not yet seen, next to explored floor."""
        g = self.geometry
        out = []
        for c in sorted(g.furniture):
            if self.explored[c]:
                continue
            x, y = c
            if any(n in g.walkable and self.explored[n] for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))):
                out.append(c)
        return out

    def local_tensor(self, pose: Pose, size: int = 20) -> np.ndarray:
        """G x G x (K_total + 2) crop centred on the agent: type channels, obstacle, explored."""
        g = self.geometry
        out = np.zeros((size, size, self.n_channels), dtype=np.float32)
        x0, y0 = pose.x - size // 2, pose.y - size // 2
        k = len(self.type_names)
        for i in range(size):
            for j in range(size):
                c = (x0 + i, y0 + j)
                if not g.in_bounds(c):
                    out[i, j, k] = 1.0
                    continue
                out[i, j, k] = 0.0 if c in g.walkable else 1.0
                out[i, j, k + 1] = float(self.explored[c])
        for e in self.instances.values():
            i, j = e.cell[0] - x0, e.cell[1] - y0
            if 0 <= i < size and 0 <= j < size:
                out[i, j, self._type_index[e.type]] = 1.0
        return out

    def merge(self, other: "SemanticMap", explored: bool = True) -> None:
        """Absorb another agent's instances (newer sightings win) and optionally its explored cells."""
        for key, e in other.instances.items():
            mine = self.instances.get(key)
            if mine is None or e.round > mine.round:
                self.instances[key] = e
        if explored:
            self.explored |= other.explored


def update_semantic_map(smap: SemanticMap, obs: Observation, round_: int = 0) -> SemanticMap:
    """Fold one observation into ``smap`` in place and return it.

    Object entries whose recorded location is in view but which were not
    seen are dropped: someone moved them.
    """
    g = smap.geometry
    for c in obs.visible_cells:
        if c not in g.furniture:
            smap.explored[c] = True
    # furniture counts as explored only once what stands on it has been seen
    for s in obs.visible_receptacles:
        smap.explored[s.cell] = True
    seen_objects = {s.id for s in obs.visible_objects}
    for key, e in list(smap.instances.items()):
        if e.kind != "object" or e.id in seen_objects:
            continue
        if entity_visible(g, obs.pose, smap.hei, e.cell, e.height_class, smap.config):
            del smap.instances[key]
    kb = smap.kb
    for s in obs.visible_receptacles:
        smap.instances[s.id] = InstanceEntry(
            s.id, s.type, "receptacle", s.cell, s.room_id, kb.height_class(s.type),
            room_type=s.room_type, round=round_,
        )
    for s in obs.visible_objects:
        height = "floor-level" if s.receptacle is None else kb.height_class(s.receptacle_type)
        smap.instances[s.id] = InstanceEntry(
            s.id, s.type, "object", s.cell, s.room_id, height,
            receptacle=s.receptacle, support_type=s.receptacle_type, room_type=s.room_type, round=round_,
        )
    return smap


def room_votes(smap: SemanticMap, region: str, kb: Ontology) -> dict[str, Fraction]:
    votes = {r: Fraction(0) for r in ROOM_TYPES}
    for e in smap.receptacles():
        if e.region != region:
            continue
        rooms = kb.rooms_for_receptacle(e.type)
        for r in rooms:
            votes[r] += Fraction(1, len(rooms))
    return votes


def classify_room(smap: SemanticMap, cell: Cell, kb: Ontology) -> tuple[str, bool]:
    """Anchor vote over receptacles seen in the cell's region.

    Returns ``(room_type, low_confidence)``.
    """
    if not smap.geometry.in_bounds(cell) or not smap.is_explored(cell):
        raise QueryError(f"cell {cell} is not explored")
    region = smap.region_of(cell)
    if region is None:
        raise QueryError(f"cell {cell} is a wall")
    return classify_region(smap, region, kb)


def classify_region(smap: SemanticMap, region: str, kb: Ontology) -> tuple[str, bool]:
    votes = room_votes(smap, region, kb)
    best = max(votes.values())
    if best == 0:
        return "LivingRoom", True
    return next(r for r in ROOM_TYPES if votes[r] == best), False


def detect_misplaced(
    obs: Observation,
    kb: Ontology,
    noise: DetectorNoise = DetectorNoise(),
    rng: np.random.Generator | None = None,
    round_: int = 0,
) -> list[Detection]:
    """Flag each visible object whose observed triple fails the discriminator.

    One uniform draw is consumed per visible object whether or not noise is
    active, so the stream stays aligned across noise settings.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for s in obs.visible_objects:
        det = 0 if is_reasonable(*s.triple, kb) else 1
        u = rng.random()
        if det == 1 and u < noise.fn:
            det = 0
        elif det == 0 and u < noise.fp:
            det = 1
        out.append(Detection(s.id, det, s.triple, round_, s.cell, s.receptacle))
    return out


def predict_receptacle(
    o_type: str,
    smap: SemanticMap,
    kb: Ontology,
    agent_pose: Pose,
    require_room: bool = True,
    exclude: frozenset = frozenset(),
) -> PlacementTarget:
    """First candidate home with an observed instance in a matching room, nearest instance wins.

    ``require_room=False`` accepts an instance of the right type in any region;
    callers use it as a last resort once exploration is exhausted.  Instances
    in ``exclude`` (already tried and found wrong) are skipped.
    """
    candidates = candidate_locations(o_type, kb)
    receptacles = smap.receptacles()
    region_type: dict[str, str] = {}
    for p_type, r_type in candidates:
        best = None
        for e in receptacles:
            if e.type != p_type or e.id in exclude:
                continue
            if require_room:
                if e.region not in region_type:
                    region_type[e.region] = classify_region(smap, e.region, kb)[0]
                if region_type[e.region] != r_type:
                    continue
            d = math.hypot(e.cell[0] - agent_pose.x, e.cell[1] - agent_pose.y)
            if best is None or (d, e.id) < best:
                best = (d, e.id)
        if best is not None:
            return PlacementTarget(p_type, r_type, best[1])
    p_type, r_type = candidates[0]
    return PlacementTarget(p_type, r_type, None)


__all__ = [
    "Detection",
    "DetectorNoise",
    "FLOOR",
    "InstanceEntry",
    "PlacementTarget",
    "QueryError",
    "SemanticMap",
    "classify_region",
    "classify_room",
    "detect_misplaced",
    "predict_receptacle",
    "update_semantic_map",
]
