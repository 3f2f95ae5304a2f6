"""Meta-task generation, Single/Cross labelling, start poses, and expert demonstrations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .comm import CENTRAL
from .engine import EngineConfig, StepRecord, TeamRunner
from .knowledge import Ontology, is_reasonable
from .world import (
    Action, AgentState, Capability, Pose, ROTATIONS, Scene, discriminate, is_task_complete, step,
)

TASK_SCHEMA_VERSION = 1
DEMO_SCHEMA_VERSION = 1
N_START_SETS = 5
SINGLE = "Single"
CROSS = "Cross"

SETTING_I = (Capability(1, 0, 0), Capability(1, 0, 1), Capability(1, 1, 1))
SETTING_II = SETTING_I + (Capability(1, 1, 1),)
SINGLE_AGENT = (Capability(1, 1, 1),)


class TaskGenError(ValueError):
    pass


class DemonstrationError(RuntimeError):
    pass


def roster_for(setting: str) -> tuple[Capability, ...]:
    try:
        return {"I": SETTING_I, "II": SETTING_II, "SA": SINGLE_AGENT}[setting]
    except KeyError:
        raise ValueError(f"unknown setting {setting!r}; expected I, II or SA") from None


@dataclass(frozen=True)
class Misplacement:
    object_id: str
    original: dict  # {"on": receptacle id} or {"floor": [x, y]}
    new: dict

    def to_dict(self) -> dict:
        return {"object_id": self.object_id, "original": self.original, "new": self.new}


@dataclass
class TaskSpec:
    scene_ref: str
    scene_name: str
    misplacements: list
    k: int
    label: str
    agent_starts: list  # 5 sets of [x, y, rot, pitch]
    seed: int

    def __post_init__(self):
        if self.k != len(self.misplacements):
            raise TaskGenError(f"k={self.k} but {len(self.misplacements)} misplacements")
        if self.label not in (SINGLE, CROSS):
            raise TaskGenError(f"label must be Single or Cross, got {self.label!r}")

    @property
    def ref(self) -> str:
        return f"{self.scene_name}:{self.seed}"

    def to_dict(self) -> dict:
        return {
            "schema_version": TASK_SCHEMA_VERSION,
            "scene_ref": self.scene_ref,
            "scene_name": self.scene_name,
            "misplacements": [m.to_dict() for m in self.misplacements],
            "k": self.k,
            "label": self.label,
            "agent_starts": [[list(p) for p in s] for s in self.agent_starts],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TaskSpec":
        if doc.get("schema_version") != TASK_SCHEMA_VERSION:
            raise TaskGenError(f"unsupported task schema_version {doc.get('schema_version')!r}")
        return cls(
            doc["scene_ref"], doc["scene_name"],
            [Misplacement(m["object_id"], m["original"], m["new"]) for m in doc["misplacements"]],
            doc["k"], doc["label"],
            [[tuple(p) for p in s] for s in doc["agent_starts"]],
            doc["seed"],
        )


def save_tasks(tasks: list[TaskSpec], path: str | Path) -> None:
    Path(path).write_text("\n".join(json.dumps(t.to_dict(), sort_keys=True) for t in tasks) + "\n")


def load_tasks(path: str | Path) -> list[TaskSpec]:
    return [TaskSpec.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


# -- generation --------------------------------------------------------------------------

def _placement_of(scene: Scene, oid: str) -> dict:
    o = scene.objects[oid]
    if o.receptacle is not None:
        return {"on": o.receptacle}
    return {"floor": list(o.floor_cell)}


def _placement_cell(scene: Scene, placement: dict):
    if "on" in placement:
        return scene.receptacles[placement["on"]].cell
    return tuple(placement["floor"])


def generate_meta_task(scene: Scene, kb: Ontology, rng_seed: int, p_floor: float = 0.5,
                       n_agents: int = 4, max_retries: int = 100) -> TaskSpec:
    """Misplace k ~ U{1..5} distinct objects of a tidy scene and sample 5 start-pose sets."""
    bad = [oid for oid in sorted(scene.objects) if not discriminate(scene, oid, kb)]
    if bad:
        raise TaskGenError(f"scene {scene.name!r} is not tidy: {bad}")
    pickable = [oid for oid in sorted(scene.objects) if kb.type(scene.objects[oid].type).pickupable]
    if len(pickable) < 5:
        raise TaskGenError(f"scene {scene.name!r} has {len(pickable)} pickupable objects; need at least 5")
    g = scene.geometry
    walkable = sorted(g.walkable)
    if len(walkable) < n_agents:
        raise TaskGenError("not enough walkable cells for the agents")
    rng = np.random.default_rng(rng_seed)
    k = int(rng.integers(1, 6))
    order = [pickable[i] for i in rng.permutation(len(pickable))]
    chosen: list[Misplacement] = []
    tries = 0
    for oid in order:
        if len(chosen) == k:
            break
        tries += 1
        if tries > max_retries:
            break
        o = scene.objects[oid]
        if rng.random() < p_floor:
            cell = walkable[int(rng.integers(len(walkable)))]
            new = {"floor": list(cell)}
        else:
            options = []
            for rid in sorted(scene.receptacles):
                r = scene.receptacles[rid]
                room_type = g.room_type[g.room_of[r.cell]]
                if not is_reasonable(o.type, r.type, room_type, kb):
                    options.append(rid)
            if not options:
                continue
            new = {"on": options[int(rng.integers(len(options)))]}
        chosen.append(Misplacement(oid, _placement_of(scene, oid), new))
    if len(chosen) < k:
        raise TaskGenError(f"could not misplace {k} objects in {scene.name!r} after {tries} draws")
    starts = []
    for _ in range(N_START_SETS):
        idx = rng.choice(len(walkable), size=n_agents, replace=False)
        starts.append([(walkable[i][0], walkable[i][1], int(ROTATIONS[int(rng.integers(4))]), 0) for i in idx])
    task = TaskSpec(scene.hash(), scene.name, chosen, k, SINGLE, starts, int(rng_seed))
    task.label = classify_task(task, scene)
    mutated = apply_misplacements(scene, task)
    for m in chosen:
        if discriminate(mutated, m.object_id, kb):
            raise TaskGenError(f"misplacement of {m.object_id} passes the discriminator")
    return task


def classify_task(task: TaskSpec, scene: Scene) -> str:
    """Cross when any misplaced object lands in a different room from where it started."""
    g = scene.geometry
    for m in task.misplacements:
        if m.object_id not in scene.objects:
            raise TaskGenError(f"task object {m.object_id} not in scene")
        if g.room_of[_placement_cell(scene, m.original)] != g.room_of[_placement_cell(scene, m.new)]:
            return CROSS
    return SINGLE


def apply_misplacements(scene: Scene, task: TaskSpec) -> Scene:
    out = scene.copy()
    for m in task.misplacements:
        o = out.objects[m.object_id]
        if "on" in m.new:
            o.receptacle, o.floor_cell = m.new["on"], None
        else:
            o.receptacle, o.floor_cell = None, tuple(m.new["floor"])
    return out


def materialize(task: TaskSpec, scene: Scene, start_index: int = 0, roster=SETTING_I) -> Scene:
    """The task's start state: misplacements applied and the roster placed on one start set."""
    if scene.hash() != task.scene_ref:
        raise TaskGenError(f"task {task.ref} was generated for a different scene")
    if not 0 <= start_index < len(task.agent_starts):
        raise TaskGenError(f"start index {start_index} out of range")
    starts = task.agent_starts[start_index]
    if len(roster) > len(starts):
        raise TaskGenError(f"roster of {len(roster)} agents exceeds the {len(starts)} start poses")
    out = apply_misplacements(scene, task)
    out.agents = [AgentState(cap, Pose(*starts[i])) for i, cap in enumerate(roster)]
    return out


# -- demonstrations --------------------------------------------------------------------------

@dataclass
class Demonstration:
    task_ref: str
    scene_ref: str
    start_index: int
    roster: list
    steps: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rounds: int = 0
    n_steps: int = 0
    terminal: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": DEMO_SCHEMA_VERSION,
            "task_ref": self.task_ref,
            "scene_ref": self.scene_ref,
            "start_index": self.start_index,
            "roster": [list(c) for c in self.roster],
            "steps": [s.__dict__ for s in self.steps],
            "actions": self.actions,
            "rounds": self.rounds,
            "n_steps": self.n_steps,
            "terminal": self.terminal,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Demonstration":
        if doc.get("schema_version") != DEMO_SCHEMA_VERSION:
            raise ValueError(f"unsupported demonstration schema_version {doc.get('schema_version')!r}")
        return cls(
            doc["task_ref"], doc["scene_ref"], doc["start_index"], [tuple(c) for c in doc["roster"]],
            [StepRecord(**s) for s in doc["steps"]], doc["actions"], doc["rounds"], doc["n_steps"],
            doc["terminal"],
        )


def save_demos(demos: list[Demonstration], path: str | Path) -> None:
    Path(path).write_text("\n".join(json.dumps(d.to_dict(), sort_keys=True) for d in demos) + "\n")


def load_demos(path: str | Path) -> list[Demonstration]:
    return [Demonstration.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


def generate_expert_demo(scene: Scene, task: TaskSpec, agents=SETTING_I, kb: Ontology | None = None,
                         start_index: int = 0, max_steps: int = 300) -> Demonstration:
    """Oracle-knowledge, centrally allocated rollout recorded for imitation."""
    kb = kb or scene.kb
    agents = tuple(a if isinstance(a, Capability) else Capability(*a) for a in agents)
    if not any(a.mani for a in agents):
        raise DemonstrationError("the roster has no manipulation-capable agent")
    start = materialize(task, scene, start_index, agents)
    cfg = EngineConfig(protocol=CENTRAL, oracle=True, true_targets=True, record=True, max_steps=max_steps)
    res = TeamRunner(start, kb, cfg, seed=task.seed).run()
    if not res.complete:
        stuck = sorted(oid for oid in res.final.objects if not discriminate(res.final, oid, kb))
        raise DemonstrationError(f"expert failed on {task.ref} start {start_index}: stuck objects {stuck}")
    return Demonstration(task.ref, task.scene_ref, start_index, [a.as_tuple() for a in agents],
                         res.decisions, [[r["agent"], r["action"], r["target"]] for r in res.log],
                         res.rounds, res.steps, True)


def replay_demo(demo: Demonstration, scene: Scene, task: TaskSpec) -> Scene:
    """Re-apply a demonstration's actions to the task's start state."""
    roster = [Capability(*c) for c in demo.roster]
    s = materialize(task, scene, demo.start_index, roster)
    for agent, name, target in demo.actions:
        step(s, agent, Action(name, target))
    return s


def demo_complete(demo: Demonstration, scene: Scene, task: TaskSpec, kb: Ontology) -> bool:
    return demo.n_steps <= 300 and is_task_complete(replay_demo(demo, scene, task), task, kb)


__all__ = [
    "CROSS", "DemonstrationError", "Demonstration", "Misplacement", "SETTING_I", "SETTING_II",
    "SINGLE", "SINGLE_AGENT", "TaskGenError", "TaskSpec", "apply_misplacements", "classify_task",
    "demo_complete", "generate_expert_demo", "generate_meta_task", "load_demos", "load_tasks",
    "materialize", "replay_demo", "roster_for", "save_demos", "save_tasks",
]
