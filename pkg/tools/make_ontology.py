"""Regenerate src/tidyhet/data/ontology.json from the tables below."""

import json
from pathlib import Path

RECEPTACLES = {
    "CounterTop": "high-surface",
    "Fridge": "high-surface",
    "DiningTable": "high-surface",
    "Desk": "high-surface",
    "Dresser": "high-surface",
    "Shelf": "high-surface",
    "Sofa": "low-surface",
    "CoffeeTable": "low-surface",
    "TVStand": "low-surface",
    "Bed": "low-surface",
    "SideTable": "low-surface",
    "Toilet": "low-surface",
    "BathtubBasin": "low-surface",
}

HOMES = {
    "Apple": "CounterTop/Kitchen Fridge/Kitchen DiningTable/Kitchen DiningTable/LivingRoom",
    "Bread": "CounterTop/Kitchen DiningTable/Kitchen",
    "Egg": "Fridge/Kitchen CounterTop/Kitchen",
    "Mug": "CounterTop/Kitchen DiningTable/Kitchen DiningTable/LivingRoom Desk/Bedroom Shelf/LivingRoom",
    "Plate": "CounterTop/Kitchen DiningTable/Kitchen DiningTable/LivingRoom",
    "Knife": "CounterTop/Kitchen",
    "Pan": "CounterTop/Kitchen",
    "Kettle": "CounterTop/Kitchen",
    "RemoteControl": "Sofa/LivingRoom CoffeeTable/LivingRoom TVStand/LivingRoom",
    "Book": "Shelf/LivingRoom Shelf/Bedroom Desk/Bedroom Bed/Bedroom CoffeeTable/LivingRoom SideTable/Bedroom",
    "Newspaper": "CoffeeTable/LivingRoom Sofa/LivingRoom",
    "Vase": "Shelf/LivingRoom CoffeeTable/LivingRoom TVStand/LivingRoom SideTable/LivingRoom",
    "Pillow": "Sofa/LivingRoom Bed/Bedroom",
    "CellPhone": "Desk/Bedroom SideTable/Bedroom Bed/Bedroom CoffeeTable/LivingRoom Sofa/LivingRoom",
    "Laptop": "Desk/Bedroom Bed/Bedroom Desk/LivingRoom CoffeeTable/LivingRoom DiningTable/LivingRoom",
    "AlarmClock": "SideTable/Bedroom Dresser/Bedroom Desk/Bedroom",
    "KeyChain": "Dresser/Bedroom SideTable/Bedroom SideTable/LivingRoom Shelf/LivingRoom",
    "CD": "Shelf/LivingRoom TVStand/LivingRoom Desk/Bedroom",
    "SoapBar": "CounterTop/Bathroom BathtubBasin/Bathroom",
    "ToiletPaper": "Toilet/Bathroom CounterTop/Bathroom",
    "SprayBottle": "CounterTop/Bathroom Toilet/Bathroom",
    "Candle": "CounterTop/Bathroom SideTable/Bedroom Shelf/LivingRoom DiningTable/LivingRoom",
}


def main():
    types = [
        {"name": n, "pickupable": True, "receptacle": False, "height_class": "low-surface"}
        for n in sorted(HOMES)
    ]
    types += [
        {"name": n, "pickupable": False, "receptacle": True, "height_class": h}
        for n, h in sorted(RECEPTACLES.items())
    ]
    triples = sorted(
        [obj, *home.split("/")] for obj, homes in HOMES.items() for home in homes.split()
    )
    doc = {
        "schema_version": 1,
        "room_types": ["Kitchen", "LivingRoom", "Bedroom", "Bathroom"],
        "object_types": types,
        "triples": triples,
    }
    out = Path(__file__).resolve().parents[1] / "src/tidyhet/data/ontology.json"
    out.write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
