"""Lock-step team execution shared by the expert, the heuristic and learned
policies, and the baselines.

One round: every agent observes and updates its map and misplaced-object
beliefs, features are exchanged under the configured protocol, sub-tasks are
allocated, each agent picks a sub-goal, and the resulting low-level bursts
run interleaved in agent-index order.  The round lasts as long as the longest
burst (at least one step); a burst stops at its first unsuccessful action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .comm import (
    BROAD, CENTRAL, CMPR, COND, HANGRCOM, INTEN, NOCOMM, CommConfig, CommRound,
    featurize_state, make_generators, run_protocol,
)
from .decision import (
    EXPLORE, NO_ACTION, PLACE, AgentRuntime, Intent, KnownObject, PathError, ReplanSignal,
    SubGoal, SubTask, TeamMember, UnreachableTargetError, exploration_goal, infer_intentions,
    next_subgoal, plan_navigation, plan_subtasks, shortest_path_actions,
)
from .knowledge import Ontology, candidate_locations
from .learn import LinearHeads, policy_features, predict_heads
from .perception import (
    DetectorNoise, InstanceEntry, PlacementTarget, SemanticMap, detect_misplaced,
    predict_receptacle, update_semantic_map,
)
from .world import (
    DROP, PICK_UP, PUT_DOWN, STOP, Action, Scene, discriminate, entity_visible,
    is_task_complete, observe, step,
)

HEURISTIC = "heuristic"
LEARNED = "learned"
RANDOM = "random"
POLICIES = (HEURISTIC, LEARNED, RANDOM)

NO_KNOWLEDGE = "no_knowledge"
NO_DETECTOR = "no_detector"
NO_PREDICTOR = "no_predictor"
NO_COMM = "no_comm"
FLAT = "flat"
ABLATIONS = (NO_KNOWLEDGE, NO_DETECTOR, NO_PREDICTOR, NO_COMM, FLAT)

IDLE = SubGoal()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    protocol: str = HANGRCOM
    policy: str = HEURISTIC
    max_steps: int = 300
    noise: DetectorNoise = DetectorNoise()
    ablations: tuple = ()
    oracle: bool = False
    true_targets: bool = False
    mu: float = 0.2
    delta: float = 0.8
    preset: str = "semantic"
    record: bool = False

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ConfigError(f"unknown ablations {bad}; expected a subset of {ABLATIONS}")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        if not isinstance(self.noise, DetectorNoise):
            raise ConfigError(f"noise must be a DetectorNoise, got {type(self.noise).__name__}")
        CommConfig(self.protocol, mu=self.mu, delta=self.delta, preset=self.preset)

    @property
    def effective_protocol(self) -> str:
        return NOCOMM if NO_COMM in self.ablations else self.protocol

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol, "policy": self.policy, "max_steps": self.max_steps,
            "noise": [self.noise.fp, self.noise.fn], "ablations": sorted(self.ablations),
            "oracle": self.oracle, "true_targets": self.true_targets,
            "mu": self.mu, "delta": self.delta, "preset": self.preset,
        }


@dataclass
class StepRecord:
    """One agent's decision in one round, as used for imitation."""

    round: int
    agent: int
    sf: list
    features: list
    flat_features: list
    subtask: dict
    subgoal: list
    actions: list


@dataclass
class RunResult:
    rounds: int
    steps: int
    total_dims: int
    picked: set
    log: list
    decisions: list
    final: Scene
    complete: bool
    halted: str


@dataclass
class _Beliefs:
    known: dict = field(default_factory=dict)
    cleared: dict = field(default_factory=dict)
    failed: set = field(default_factory=set)
    peers: dict = field(default_factory=dict)
    peer_stopped: dict = field(default_factory=dict)


def merge_beliefs(dst: _Beliefs, known: dict, cleared: dict) -> None:
    """Newer sightings win; a clearing at the same round beats a detection."""
    for oid, r in cleared.items():
        if r > dst.cleared.get(oid, -1):
            dst.cleared[oid] = r
    for oid, ko in known.items():
        mine = dst.known.get(oid)
        if (mine is None or ko.round > mine.round) and ko.round > dst.cleared.get(oid, -1):
            dst.known[oid] = ko
    for oid in list(dst.known):
        if dst.cleared.get(oid, -1) >= dst.known[oid].round:
            del dst.known[oid]


class TeamRunner:
    """Runs one episode on a scene that already carries its agents."""

    def __init__(self, scene: Scene, kb: Ontology, config: EngineConfig | None = None,
                 seed: int = 0, models: dict[int, LinearHeads] | None = None):
        self.cfg = config or EngineConfig()
        if not scene.agents:
            raise ConfigError("scene has no agents")
        if self.cfg.policy == LEARNED or FLAT in self.cfg.ablations:
            if not models:
                raise ConfigError("the learned policy needs trained models")
            missing = [i for i in range(len(scene.agents)) if i not in models]
            if missing:
                raise ConfigError(f"no model for roster slots {missing}")
        self.scene = scene.copy()
        self.kb = kb
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.models = models or {}
        self.protocol = self.cfg.effective_protocol
        self.gens = make_generators(self.cfg.preset) if self.protocol == HANGRCOM else None
        self.comm_cfg = CommConfig(self.protocol, mu=self.cfg.mu, delta=self.cfg.delta, preset=self.cfg.preset)
        self.runtimes: list[AgentRuntime] = []
        self.beliefs: list[_Beliefs] = []
        for i, a in enumerate(self.scene.agents):
            smap = SemanticMap(scene.geometry, kb, a.capability.hei, scene.config)
            if self.cfg.oracle or self.cfg.true_targets:
                self._reveal_receptacles(smap)
            self.runtimes.append(AgentRuntime(i, a.capability, a.pose, smap))
            self.beliefs.append(_Beliefs())
        self.round = 0
        self.steps = 0
        self.total_dims = 0
        self.picked: set = set()
        self.log: list = []
        self.decisions: list[StepRecord] = []
        self._stopping: frozenset = frozenset()
        self._bumped = [0] * len(self.runtimes)  # consecutive rounds ended by a collision

    # -- perception ----------------------------------------------------------------------
    def _reveal_receptacles(self, smap: SemanticMap) -> None:
        s = self.scene
        for rid, r in s.receptacles.items():
            room = s.geometry.room_of[r.cell]
            smap.instances[rid] = InstanceEntry(
                rid, r.type, "receptacle", r.cell, room, self.kb.height_class(r.type),
                room_type=s.geometry.room_type[room], round=0,
            )

    def _true_misplaced(self) -> dict:
        s = self.scene
        out = {}
        for oid in sorted(s.objects):
            o = s.objects[oid]
            if o.held or discriminate(s, oid, self.kb):
                continue
            out[oid] = KnownObject(oid, o.type, s.object_cell(oid), s.entity_height(oid), o.receptacle, self.round)
        return out

    def _perceive(self, i: int) -> None:
        s, rt, bel = self.scene, self.runtimes[i], self.beliefs[i]
        agent = s.agents[i]
        rt.pose, rt.held, rt.stopped = agent.pose, agent.held, agent.stopped
        rt.held_type = s.objects[agent.held].type if agent.held else None
        obs = observe(s, i)
        update_semantic_map(rt.smap, obs, self.round)
        before = set(bel.known)
        newest = None
        if self.cfg.oracle:
            truth = self._true_misplaced()
            for oid in before - set(truth):
                bel.cleared[oid] = self.round
            bel.known = truth
            fresh = sorted(set(truth) - before)
            newest = (truth[fresh[-1]].type, 1) if fresh else None
        else:
            dets = detect_misplaced(obs, self.kb, self.cfg.noise, self.rng, self.round)
            if NO_KNOWLEDGE in self.cfg.ablations:
                dets = [replace(d, det=int(self.rng.integers(2))) for d in dets]
            sightings = {o.id: o for o in obs.visible_objects}
            for d in dets:
                o = sightings[d.object_id]
                if d.det:
                    height = "floor-level" if o.receptacle is None else self.kb.height_class(o.receptacle_type)
                    bel.known[d.object_id] = KnownObject(d.object_id, o.type, o.cell, height, o.receptacle, self.round)
                    if d.object_id not in before:
                        newest = (o.type, 1)
                else:
                    bel.known.pop(d.object_id, None)
                    bel.cleared[d.object_id] = self.round
            for oid, ko in list(bel.known.items()):
                if oid in sightings:
                    continue
                if entity_visible(s.geometry, rt.pose, rt.capability.hei, ko.cell, ko.height_class, s.config):
                    del bel.known[oid]
                    bel.cleared[oid] = self.round
        if rt.held in bel.known:
            del bel.known[rt.held]
        rt.new_detection = newest is not None
        if newest is not None:
            rt.newest_type, rt.newest_det = newest
            rt.staleness = 0
        elif self.round > 1:
            rt.staleness += 1
        rt.known = bel.known

    # -- communication ---------------------------------------------------------------------
    def _member(self, j: int) -> TeamMember:
        rt = self.runtimes[j]
        return TeamMember(j, rt.capability, rt.pose, rt.subtask, rt.held, rt.held_type, rt.stopped)

    def _communicate(self) -> CommRound:
        n = len(self.runtimes)
        feats = [featurize_state(rt, None, self._blocked(i)) for i, rt in enumerate(self.runtimes)]
        cr = run_protocol(self.protocol, feats, self.comm_cfg,
                          [rt.new_detection for rt in self.runtimes], self.gens)
        self.total_dims += cr.ledger
        maps = [rt.smap.copy() for rt in self.runtimes]
        known = [dict(b.known) for b in self.beliefs]
        cleared = [dict(b.cleared) for b in self.beliefs]
        members = [self._member(j) for j in range(n)]
        share_detections = NO_DETECTOR not in self.cfg.ablations
        for i in range(n):
            bel, rt = self.beliefs[i], self.runtimes[i]
            bel.peers = {}
            if self.protocol == NOCOMM:
                continue
            if self.protocol == HANGRCOM:
                intra = cr.senders(i, ("value",))
                inter = cr.inter_from.get(i)
                for j in intra:
                    rt.smap.merge(maps[j], explored=False)
                    if share_detections:
                        merge_beliefs(bel, known[j], cleared[j])
                    bel.peers[j] = members[j]
                if inter is not None:
                    if share_detections:
                        merge_beliefs(bel, known[inter], cleared[inter])
                    bel.peers[inter] = members[inter]
            else:
                for j in cr.senders(i):
                    bel.peers[j] = members[j]
                    if self.protocol == INTEN:
                        continue
                    rt.smap.merge(maps[j], explored=self.protocol in (BROAD, CENTRAL, COND))
                    if share_detections:
                        merge_beliefs(bel, known[j], cleared[j])
            for j, m in bel.peers.items():
                bel.peer_stopped[j] = m.stopped
            rt.known = bel.known
        return cr

    # -- planning ---------------------------------------------------------------------------
    def _blocked(self, i: int) -> frozenset:
        return frozenset(self.scene.occupied(exclude=i))

    def _target_fn(self, i: int):
        s, kb = self.scene, self.kb
        failed = self.beliefs[i].failed

        def truth(member, o_type, smap):
            for p_type, r_type in candidate_locations(o_type, kb):
                best = None
                for rid in sorted(s.receptacles):
                    r = s.receptacles[rid]
                    if r.type != p_type or s.geometry.room_type[s.geometry.room_of[r.cell]] != r_type:
                        continue
                    d = math.hypot(r.cell[0] - member.pose.x, r.cell[1] - member.pose.y)
                    if best is None or (d, rid) < best:
                        best = (d, rid)
                if best is not None:
                    return PlacementTarget(p_type, r_type, best[1])
            raise UnreachableTargetError(f"no home instance for {o_type} in this scene")

        def predicted(member, o_type, smap):
            exclude = frozenset(r for (t, r) in failed if t == o_type)
            if NO_PREDICTOR in self.cfg.ablations:
                recs = [e for e in smap.receptacles() if e.id not in exclude]
                if recs:
                    e = recs[int(self.rng.integers(len(recs)))]
                    p_type, r_type = candidate_locations(o_type, kb)[0]
                    return PlacementTarget(p_type, r_type, e.id)
            target = predict_receptacle(o_type, smap, kb, member.pose, exclude=exclude)
            if target.instance is None and exploration_goal(smap, member.pose.cell) is None:
                target = predict_receptacle(o_type, smap, kb, member.pose, require_room=False, exclude=exclude)
            return target

        return truth if self.cfg.true_targets else predicted

    def _plan(self) -> dict[int, SubTask]:
        n = len(self.runtimes)
        if self.protocol == CENTRAL:
            team = [self._member(j) for j in range(n)]
            known = {}
            for b in self.beliefs:
                for oid, ko in b.known.items():
                    if oid not in known or ko.round > known[oid].round:
                        known[oid] = ko
            maps = {j: self.runtimes[j].smap for j in range(n)}
            center = plan_subtasks(team, known, self.kb, self.scene.geometry, maps, self._central_target())
            return center
        out = {}
        for i in range(n):
            rt, bel = self.runtimes[i], self.beliefs[i]
            peers = dict(bel.peers)
            if self.protocol == INTEN and peers:
                guesses = infer_intentions(list(peers.values()), rt.smap, bel.known, self._blocked(i))
                for j, guess in guesses.items():
                    if guess is None and peers[j].held is None:
                        peers[j] = replace(peers[j], subtask=SubTask())
            team = [self._member(i)] + [peers[j] for j in sorted(peers)]
            try:
                plan = plan_subtasks(team, bel.known, self.kb, self.scene.geometry, rt.smap, self._target_fn(i))
            except UnreachableTargetError:
                plan = {i: SubTask()}
            out[i] = plan[i]
        return out

    def _central_target(self):
        fns = {i: self._target_fn(i) for i in range(len(self.runtimes))}

        def target(member, o_type, smap):
            return fns[member.index](member, o_type, smap)

        return target

    def _allow_stop(self, i: int) -> bool:
        rt = self.runtimes[i]
        if not rt.mani:
            return True
        return all(self.beliefs[i].peer_stopped.values())

    def _heuristic_intent(self, i: int, blocked: frozenset) -> Intent:
        rt = self.runtimes[i]
        allow = self._allow_stop(i)
        try:
            parked = frozenset(a.pose.cell for j, a in enumerate(self.scene.agents) if j != i and a.stopped)
            parked |= self._stopping
            return next_subgoal(rt, rt.subtask, rt.smap, blocked, allow, parked)
        except ReplanSignal:
            return Intent(IDLE, reason="replan")
        except (PathError, UnreachableTargetError):
            st = rt.subtask
            if st.kind == PLACE and rt.held is None:
                self.beliefs[i].known.pop(st.object_id, None)
            elif st.kind == PLACE and st.instance is not None:
                self.beliefs[i].failed.add((st.object_type, st.instance))
            return Intent(IDLE, reason="unreachable")

    def _decide(self, i: int) -> tuple[SubGoal, list[Action]]:
        rt = self.runtimes[i]
        blocked = self._blocked(i)
        if self.cfg.policy == RANDOM:
            return IDLE, [self._random_action(i)]
        intent = self._heuristic_intent(i, blocked)
        sg = intent.subgoal
        target = intent.target
        if self.cfg.policy == LEARNED or FLAT in self.cfg.ablations or self.cfg.record:
            sf = featurize_state(rt, intent, blocked)
            no_frontier = exploration_goal(rt.smap, rt.pose.cell, blocked) is None
            stop_ok = rt.subtask.kind == EXPLORE and no_frontier and self._allow_stop(i)
            feats = policy_features(sf, rt.subtask.kind, rt.held is not None, intent, stop_ok, no_frontier)
            flat_feats = policy_features(sf, rt.subtask.kind, rt.held is not None, intent, stop_ok, no_frontier, flat=True)
            if self.cfg.policy == LEARNED or FLAT in self.cfg.ablations:
                model = self.models[i]
                sg, _ = predict_heads(model, flat_feats if model.flat else feats)
                target = self._learned_target(i, sg)
            if self.cfg.record:
                self.decisions.append(StepRecord(
                    self.round, i, sf.tolist(), feats.tolist(), flat_feats.tolist(),
                    rt.subtask.to_dict(), sg.to_list(), [],
                ))
        if sg.stop and rt.mani and not self._allow_stop(i):
            sg = replace(sg, stop=0)
        try:
            actions = shortest_path_actions(self.scene.geometry, rt.pose, sg, blocked, target)
        except PathError:
            actions = self._sidestep(i, blocked) if self._bumped[i] else None
            if actions is None:
                try:
                    actions = shortest_path_actions(self.scene.geometry, rt.pose, sg, frozenset(), target)
                except PathError:
                    actions = []
        allowed = set(rt.capability.actions)
        actions = [a for a in actions if a.name in allowed]
        # Randomised back-off breaks symmetric livelocks in doorways.
        if self._bumped[i] >= 2 and actions and actions[-1].name != STOP and self.rng.random() < 0.5:
            actions = []
        if actions and actions[-1].name == STOP:
            self._stopping = self._stopping | {rt.pose.cell}
        if self.cfg.record and self.decisions and self.decisions[-1].agent == i and self.decisions[-1].round == self.round:
            self.decisions[-1].actions = [a.to_list() for a in actions]
        return sg, actions

    def _sidestep(self, i: int, blocked: frozenset) -> list[Action] | None:
        """Step into a random free neighbouring cell to clear a gridlock."""
        g, pose = self.scene.geometry, self.runtimes[i].pose
        x, y = pose.cell
        free = [c for c in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))
                if c in g.walkable and c not in blocked]
        if not free:
            return None
        c = free[int(self.rng.integers(len(free)))]
        return [Action(n) for n in plan_navigation(g, pose, (c[0], c[1], pose.rot), blocked)]

    def _learned_target(self, i: int, sg: SubGoal) -> str | None:
        rt = self.runtimes[i]
        if sg.ope == PICK_UP and rt.subtask.kind == PLACE:
            return rt.subtask.object_id
        if sg.ope == PUT_DOWN and rt.subtask.kind == PLACE:
            return rt.subtask.instance
        return None

    def _random_action(self, i: int) -> Action:
        s = self.scene
        names = [a for a in s.agents[i].capability.actions if a != STOP]
        name = names[int(self.rng.integers(len(names)))]
        if name == PICK_UP:
            ids = sorted(s.objects)
            return Action(name, ids[int(self.rng.integers(len(ids)))])
        if name == PUT_DOWN:
            ids = sorted(s.receptacles)
            return Action(name, ids[int(self.rng.integers(len(ids)))])
        return Action(name)

    # -- execution ----------------------------------------------------------------------------
    def _execute(self, bursts: dict[int, list[Action]]) -> None:
        length = max([1] + [len(b) for b in bursts.values()])
        length = min(length, self.cfg.max_steps - self.steps)
        live = {i: True for i in bursts}
        for k in range(length):
            for i in sorted(bursts):
                burst = bursts[i]
                if k >= len(burst) or not live[i]:
                    continue
                act = burst[k]
                holding = self.scene.agents[i].held
                res = step(self.scene, i, act)
                self.log.append({"round": self.round, "agent": i, "action": act.name,
                                 "target": act.target, "result": res.status})
                if not res.ok:
                    live[i] = False
                    self._bumped[i] = self._bumped[i] + 1 if res.status == "blocked" else 0
                    continue
                if k == len(burst) - 1:
                    self._bumped[i] = 0
                if act.name == PICK_UP:
                    self.picked.add(act.target)
                elif act.name == PUT_DOWN and holding is not None:
                    st = self.runtimes[i].subtask
                    if not discriminate(self.scene, holding, self.kb):
                        self.beliefs[i].failed.add((self.scene.objects[holding].type, act.target))
                    if st.kind == PLACE and st.object_id == holding:
                        self.runtimes[i].subtask = SubTask()
                elif act.name == DROP:
                    pass
        self.steps += length

    def run(self) -> RunResult:
        halted = "budget"
        while self.steps < self.cfg.max_steps:
            if is_task_complete(self.scene, None, self.kb):
                halted = "complete"
                break
            if all(a.stopped for a in self.scene.agents):
                halted = "stopped"
                break
            self.round += 1
            for i in range(len(self.runtimes)):
                self._perceive(i)
            if self.cfg.policy != RANDOM:
                self._communicate()
                plan = self._plan()
                for i, st in plan.items():
                    if not self.runtimes[i].stopped:
                        self.runtimes[i].subtask = st
            bursts = {}
            self._stopping = frozenset()
            for i, rt in enumerate(self.runtimes):
                if rt.stopped:
                    continue
                _, bursts[i] = self._decide(i)
            self._execute(bursts)
        complete = is_task_complete(self.scene, None, self.kb)
        if complete:
            halted = "complete"
        return RunResult(self.round, self.steps, self.total_dims, set(self.picked), self.log,
                         self.decisions, self.scene, complete, halted)


__all__ = [
    "ABLATIONS", "ConfigError", "EngineConfig", "FLAT", "HEURISTIC", "LEARNED", "NO_COMM",
    "NO_DETECTOR", "NO_KNOWLEDGE", "NO_PREDICTOR", "POLICIES", "RANDOM", "RunResult",
    "StepRecord", "TeamRunner", "merge_beliefs",
]
