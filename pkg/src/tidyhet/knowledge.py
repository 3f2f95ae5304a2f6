"""Placement ontology and the reasonable-placement discriminator.

The ontology is a small JSON document::

    {
      "schema_version": 1,
      "room_types": ["Kitchen", "LivingRoom", "Bedroom", "Bathroom"],
      "object_types": [
        {"name": "Apple", "pickupable": true, "receptacle": false,
         "height_class": "low-surface"},
        ...
      ],
      "triples": [["Apple", "CounterTop", "Kitchen"], ...]
    }

``Floor`` is a reserved pseudo-receptacle present in every room.  It may not
be declared in ``object_types`` and never appears in a triple, so anything
lying on the floor is always misplaced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

SCHEMA_VERSION = 1
ROOM_TYPES = ("Kitchen", "LivingRoom", "Bedroom", "Bathroom")
FLOOR = "Floor"
HEIGHT_CLASSES = ("floor-level", "low-surface", "high-surface")


class OntologyError(ValueError):
    """Raised when an ontology file cannot be parsed under the schema."""


class OntologyValidationError(OntologyError):
    """Raised when a parsed ontology violates one or more invariants."""

    def __init__(self, failures: list[str]):
        self.failures = list(failures)
        super().__init__("invalid ontology:\n  " + "\n  ".join(self.failures))


class UnknownTypeError(KeyError):
    pass


@dataclass(frozen=True)
class ObjectType:
    name: str
    pickupable: bool
    receptacle: bool
    height_class: str


@dataclass(frozen=True, order=True)
class PlacementTriple:
    object_type: str
    receptacle_type: str
    room_type: str


@dataclass(frozen=True)
class Ontology:
    object_types: tuple[ObjectType, ...]
    room_types: tuple[str, ...]
    triples: frozenset[PlacementTriple]

    def __post_init__(self):
        failures = _invariant_failures(self)
        if failures:
            raise OntologyValidationError(failures)
        index = {t.name: t for t in self.object_types}
        object.__setattr__(self, "_index", index)

    def type(self, name: str) -> ObjectType:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownTypeError(name) from None

    def has_type(self, name: str) -> bool:
        return name in self._index

    @property
    def pickupable_types(self) -> list[str]:
        return sorted(t.name for t in self.object_types if t.pickupable)

    @property
    def receptacle_types(self) -> list[str]:
        return sorted(t.name for t in self.object_types if t.receptacle)

    @property
    def all_type_names(self) -> list[str]:
        """Every type name in a fixed order; used for map channels."""
        return sorted(t.name for t in self.object_types)

    def height_class(self, name: str) -> str:
        if name == FLOOR:
            return "floor-level"
        return self.type(name).height_class

    def rooms_for_receptacle(self, receptacle_type: str) -> list[str]:
        """Room types that appear with ``receptacle_type`` in any triple."""
        rooms = {t.room_type for t in self.triples if t.receptacle_type == receptacle_type}
        return [r for r in ROOM_TYPES if r in rooms]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "room_types": list(self.room_types),
            "object_types": [
                {
                    "name": t.name,
                    "pickupable": t.pickupable,
                    "receptacle": t.receptacle,
                    "height_class": t.height_class,
                }
                for t in self.object_types
            ],
            "triples": [list((t.object_type, t.receptacle_type, t.room_type)) for t in sorted(self.triples)],
        }


def _invariant_failures(kb: Ontology) -> list[str]:
    failures = []
    names = [t.name for t in kb.object_types]
    seen = set()
    for n in names:
        if n in seen:
            failures.append(f"duplicate type name {n!r}")
        seen.add(n)
    if FLOOR in seen:
        failures.append(f"{FLOOR!r} is reserved and may not be declared")
    for t in kb.object_types:
        if t.height_class not in HEIGHT_CLASSES:
            failures.append(f"type {t.name!r} has unknown height_class {t.height_class!r}")
    if len(kb.room_types) != 4 or set(kb.room_types) != set(ROOM_TYPES):
        failures.append(f"room_types must be exactly {list(ROOM_TYPES)}, got {list(kb.room_types)}")
    if seen & set(kb.room_types):
        failures.append("room type names collide with object type names")
    by_name = {t.name: t for t in kb.object_types}
    for tr in sorted(kb.triples):
        label = f"triple {[tr.object_type, tr.receptacle_type, tr.room_type]}"
        o = by_name.get(tr.object_type)
        p = by_name.get(tr.receptacle_type)
        if o is None:
            failures.append(f"{label}: unknown object type {tr.object_type!r}")
        elif not o.pickupable:
            failures.append(f"{label}: {tr.object_type!r} is not pickupable")
        if p is None:
            failures.append(f"{label}: unknown receptacle type {tr.receptacle_type!r}")
        elif not p.receptacle:
            failures.append(f"{label}: {tr.receptacle_type!r} is not a receptacle")
        if tr.room_type not in kb.room_types:
            failures.append(f"{label}: unknown room type {tr.room_type!r}")
    homed = {tr.object_type for tr in kb.triples}
    for t in kb.object_types:
        if t.pickupable and t.name not in homed:
            failures.append(f"pickupable type {t.name!r} appears in no triple")
    return failures


def parse_ontology(doc: dict) -> Ontology:
    if not isinstance(doc, dict):
        raise OntologyError("ontology document must be a mapping")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise OntologyError(f"unsupported schema_version {doc.get('schema_version')!r}")
    for key in ("room_types", "object_types", "triples"):
        if not isinstance(doc.get(key), list):
            raise OntologyError(f"missing or non-list section {key!r}")
    types = []
    for i, entry in enumerate(doc["object_types"]):
        try:
            name = entry["name"]
            flags = (entry["pickupable"], entry["receptacle"])
            height = entry["height_class"]
        except (KeyError, TypeError):
            raise OntologyError(f"object_types[{i}] ({entry!r}) lacks name/pickupable/receptacle/height_class") from None
        if not isinstance(name, str) or not all(isinstance(f, bool) for f in flags):
            raise OntologyError(f"object_types[{i}] ({entry!r}) has mistyped fields")
        types.append(ObjectType(name, flags[0], flags[1], height))
    triples = []
    for i, entry in enumerate(doc["triples"]):
        if not (isinstance(entry, list) and len(entry) == 3 and all(isinstance(s, str) for s in entry)):
            raise OntologyError(f"triples[{i}] ({entry!r}) is not a list of three names")
        triples.append(PlacementTriple(*entry))
    rooms = doc["room_types"]
    if not all(isinstance(r, str) for r in rooms):
        raise OntologyError("room_types must be names")
    return Ontology(tuple(types), tuple(rooms), frozenset(triples))


def load_ontology(path: str | Path | None = None) -> Ontology:
    """Load and validate an ontology file; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("tidyhet.data").joinpath("ontology.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"not valid JSON: {exc}") from exc
    return parse_ontology(doc)


def _check_names(kb: Ontology, *names: str) -> None:
    for n in names:
        if n != FLOOR and not kb.has_type(n) and n not in kb.room_types:
            raise UnknownTypeError(n)


def is_reasonable(o_type: str, p_type: str, r_type: str, kb: Ontology) -> bool:
    """The discriminator: is ``o_type`` on ``p_type`` in a ``r_type`` sanctioned?"""
    _check_names(kb, o_type, p_type)
    if r_type not in kb.room_types:
        raise UnknownTypeError(r_type)
    return PlacementTriple(o_type, p_type, r_type) in kb.triples


def candidate_locations(o_type: str, kb: Ontology) -> list[tuple[str, str]]:
    """All (receptacle_type, room_type) homes for ``o_type``, sorted."""
    if not kb.type(o_type).pickupable:
        raise ValueError(f"{o_type!r} is not pickupable")
    return sorted((t.receptacle_type, t.room_type) for t in kb.triples if t.object_type == o_type)
