"""Regenerate the shipped desk scenes from ASCII layouts.

Layout rows are listed top to bottom; the top row has the largest y.
``#`` is wall, lowercase letters are room cells, uppercase letters are
receptacles (type from LEGEND, room from the adjacent room letters).
Objects are ``Type@Glyph`` or ``Type@Glyph2`` (second such receptacle in
reading order).
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from tidyhet.knowledge import is_reasonable, load_ontology  # noqa: E402
from tidyhet.world import parse_scene  # noqa: E402

LEGEND = {
    "K": "CounterTop", "F": "Fridge", "D": "DiningTable", "S": "Sofa", "T": "TVStand",
    "O": "CoffeeTable", "B": "Bed", "R": "Dresser", "E": "Desk", "H": "Shelf",
    "I": "SideTable", "W": "Toilet", "U": "BathtubBasin",
}

SCENES = {
    "demo_two_room": dict(
        rooms={"a": "Kitchen", "b": "LivingRoom"},
        layout="""
###############
#Kaaaaa#bbbbbS#
#aaaaaa#bbbbbb#
#Faaaaaabbbbbb#
#aaaaaaabbbbbO#
#aaaaaa#bbbbbb#
#DaaaaK#bbbbbT#
#aaaaaa#Hbbbbb#
###############
""",
        objects="Apple@F Egg@F Bread@K Knife@K2 Plate@D Mug@K RemoteControl@S Newspaper@O Vase@T CD@H",
    ),
    "kitchen_bath": dict(
        rooms={"a": "Kitchen", "b": "Bathroom"},
        layout="""
##############
#KaaaaaF#bbbW#
#aaaaaaa#bbbb#
#aaaaaaabbbbb#
#Daaaaaabbbbb#
#aaaaaaa#bbbK#
#aaaaaaK#Ubbb#
##############
""",
        objects="Apple@D Egg@F Pan@K Kettle@K3 Plate@D Bread@K3 SoapBar@U ToiletPaper@W SprayBottle@K2 Candle@K2",
    ),
    "three_room": dict(
        rooms={"a": "Kitchen", "b": "LivingRoom", "c": "Bedroom"},
        layout="""
######################
#KaaaaF#SbbbbO#cccccB#
#aaaaaa#bbbbbb#cccccc#
#aaaaaabbbbbbbcccccccR
#aaaaaabbbbbbbccccccE#
#Daaaaa#bbbbbb#cccccc#
#aaaaaa#Tbbbbb#Iccccc#
######################
""",
        objects="Apple@F Bread@K Mug@D Plate@D RemoteControl@S Newspaper@O Vase@T Book@B Pillow@B AlarmClock@I KeyChain@I",
    ),
    "four_room": dict(
        rooms={"a": "Kitchen", "b": "LivingRoom", "c": "Bedroom", "d": "Bathroom"},
        layout="""
###############
#KaaaaF#Sbbbbb#
#aaaaaa#bbbbbO#
#aaaaaabbbbbbb#
#Daaaaabbbbbbb#
#aaaaaa#bbbbbT#
###aa#####bb###
#cccccc#dddddd#
#cccccccddddddW
#Bcccccdddddddd
#cccccc#dddddK#
#IccccE#Uddddd#
###############
""",
        objects="Egg@F Knife@K Plate@D RemoteControl@S Vase@O CD@T Pillow@B AlarmClock@I SoapBar@U ToiletPaper@W SprayBottle@K2",
    ),
    "bed_bath": dict(
        rooms={"a": "Bedroom", "b": "Bathroom"},
        layout="""
##############
#Baaaaaa#bbbW#
#aaaaaaa#bbbb#
#aaaaaaabbbbb#
#Raaaaaabbbbb#
#aaaaaaa#bbbK#
#Iaaaaaa#Ubbb#
##############
""",
        objects="Book@B Pillow@B CellPhone@I AlarmClock@R KeyChain@R SoapBar@U ToiletPaper@W SprayBottle@K Candle@K",
    ),
    "studio": dict(
        rooms={"a": "LivingRoom", "b": "Bedroom", "c": "Bathroom"},
        layout="""
#################
#Saaaaaa#bbbbbbB#
#aaaaaaa#bbbbbbb#
#aaaaaaabbbbbbbb#
#Oaaaaaabbbbbbbb#
#aaaaaaa#bbbbbbE#
#Haaaaaa#Ibbbbbb#
#####aa######bb##
#cccccccccccccccc
#Uccccccccccccc##
#ccccccccccccccW#
#################
""",
        objects="RemoteControl@S Newspaper@O CD@H KeyChain@H Laptop@E Book@E Pillow@B CellPhone@I SoapBar@U ToiletPaper@W",
    ),
}


def build(name, spec, kb):
    rows = [r for r in spec["layout"].strip("\n").split("\n")]
    height, width = len(rows), max(len(r) for r in rows)
    grid = {}
    for row_i, row in enumerate(rows):
        for x, ch in enumerate(row.ljust(width, "#")):
            grid[(x, height - 1 - row_i)] = ch
    rooms = {k: [] for k in spec["rooms"]}
    receptacles = []
    counts = {}
    for row_i in range(height):
        y = height - 1 - row_i
        for x in range(width):
            ch = grid[(x, y)]
            if ch in rooms:
                rooms[ch].append((x, y))
            elif ch.isupper() and ch in LEGEND:
                adj = [grid.get(n) for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))]
                letters = sorted({a for a in adj if a in rooms})
                if len(letters) != 1:
                    raise SystemExit(f"{name}: receptacle at {(x, y)} touches rooms {letters}")
                counts[ch] = counts.get(ch, 0) + 1
                rid = f"{LEGEND[ch]}_{len([r for r in receptacles if r['type'] == LEGEND[ch]])}"
                receptacles.append({"id": rid, "type": LEGEND[ch], "cell": [x, y], "glyph": f"{ch}{counts[ch]}", "room": letters[0]})
                rooms[letters[0]].append((x, y))
    by_glyph = {r["glyph"]: r for r in receptacles}
    objects = []
    for tok in spec["objects"].split():
        otype, glyph = tok.split("@")
        if len(glyph) == 1:
            glyph += "1"
        rec = by_glyph[glyph]
        room_type = spec["rooms"][rec["room"]]
        if not is_reasonable(otype, rec["type"], room_type, kb):
            raise SystemExit(f"{name}: {otype} on {rec['type']} in {room_type} is not tidy")
        n = len([o for o in objects if o["type"] == otype])
        objects.append({"id": f"{otype}_{n}", "type": otype, "on": rec["id"]})
    doc = {
        "schema_version": 1,
        "name": name,
        "width": width,
        "height": height,
        "rooms": [
            {"id": f"room{i}", "type": spec["rooms"][k], "rects": [[x, y, x, y] for x, y in sorted(cells)]}
            for i, (k, cells) in enumerate(rooms.items())
        ],
        "walls": [],
        "receptacles": [{"id": r["id"], "type": r["type"], "cell": r["cell"]} for r in receptacles],
        "objects": objects,
        "agents": [],
    }
    scene = parse_scene(doc, kb)  # validates, then re-emits with merged rectangles
    walk = scene.geometry.walkable
    start = min(walk)
    seen, stack = {start}, [start]
    while stack:
        for n in scene.geometry.neighbors(stack.pop()):
            if n not in seen:
                seen.add(n)
                stack.append(n)
    if seen != walk:
        raise SystemExit(f"{name}: walkable area is not connected")
    return scene.to_dict()


def main():
    kb = load_ontology()
    out = Path(__file__).resolve().parents[1] / "src/tidyhet/data/scenes"
    out.mkdir(parents=True, exist_ok=True)
    for name, spec in SCENES.items():
        doc = build(name, spec, kb)
        (out / f"{name}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(name, doc["width"], "x", doc["height"], len(doc["objects"]), "objects")


if __name__ == "__main__":
    main()
