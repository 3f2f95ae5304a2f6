"""Agent communication: state features, attention-based grouping (HanGrCom)
and the baseline broadcast protocols, with exact bandwidth accounting.

StateFeature layout (``SF_VERSION`` 1, 24 entries)::

    0-2    nav, mani, hei
    3-5    x, y, rot / 90
    6-13   new-detection flag, newest detected type index, newest det flag,
           staleness, known misplaced count, holding flag, held type index,
           sub-task is Place
    14-21  target receptacle type index, target room index, target-known flag,
           target dx, target dy (egocentric), target in reach,
           next hop dx, next hop dy (egocentric)
    22-23  distance to the nearest exploration goal, unexplored fraction
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .decision import PLACE, AgentRuntime, Intent, bfs_distances, exploration_goal
from .knowledge import ROOM_TYPES
from .world import reach_ok, receptacle_interaction_cells, to_egocentric

SF_VERSION = 1
D_SF = 24
D_MSG = 16
MU = 0.2
DELTA = 0.8

SF_FIELDS = (
    "nav", "mani", "hei", "x", "y", "rot",
    "new_det", "newest_type", "det_flag", "staleness", "n_known", "holding", "held_type", "is_place",
    "recep_idx", "room_idx", "target_known", "target_dx", "target_dy", "in_reach", "hop_dx", "hop_dy",
    "frontier_dist", "unexplored",
)
SF_INDEX = {name: i for i, name in enumerate(SF_FIELDS)}

HANGRCOM = "HanGrCom"
COND = "CondComm"
CMPR = "CmprComm"
INTEN = "IntenComm"
BROAD = "BroadComm"
CENTRAL = "CentralComm"
NOCOMM = "NoComm"
PROTOCOLS = (HANGRCOM, COND, CMPR, INTEN, BROAD, CENTRAL, NOCOMM)

STATE_DIMS = 10
MAP_DIMS = 400
CMAP_DIMS = 100


def payload_sizes(d: int = D_MSG) -> dict[str, int]:
    """Dimension count of every message kind."""
    return {"state": STATE_DIMS, "map": MAP_DIMS, "cmap": CMAP_DIMS,
            "query": d, "value": d, "inter": d}


class ProtocolError(ValueError):
    pass


# -- state features ----------------------------------------------------------------

def _type_index(smap, name: str | None) -> float:
    if name is None:
        return 0.0
    return float(smap._type_index[name] + 1)


def target_cell(rt: AgentRuntime):
    """(cell, height_class, interaction cells) of the agent's current manipulation target."""
    st = rt.subtask
    if st.kind != PLACE:
        return None
    if rt.held is None:
        obj = rt.known.get(st.object_id)
        return None if obj is None else (obj.cell, obj.height_class, None)
    if st.instance is not None and st.instance in rt.smap.instances:
        e = rt.smap.instances[st.instance]
        return e.cell, e.height_class, receptacle_interaction_cells(rt.smap.geometry, e.cell)
    return None


def featurize_state(rt: AgentRuntime, intent: Intent | None = None, blocked: frozenset = frozenset()) -> np.ndarray:
    """Deterministic StateFeature of one agent.  ``intent`` fills the next-hop fields."""
    smap, pose, cap = rt.smap, rt.pose, rt.capability
    sf = np.zeros(D_SF)
    sf[0:3] = cap.as_tuple()
    sf[3:6] = (pose.x, pose.y, pose.rot / 90)
    sf[6] = float(rt.new_detection)
    sf[7] = _type_index(smap, rt.newest_type)
    sf[8] = float(rt.newest_det)
    sf[9] = rt.staleness
    sf[10] = len(rt.known)
    sf[11] = float(rt.held is not None)
    sf[12] = _type_index(smap, rt.held_type)
    st = rt.subtask
    sf[13] = float(st.kind == PLACE)
    if st.kind == PLACE:
        sf[14] = _type_index(smap, st.receptacle_type)
        sf[15] = ROOM_TYPES.index(st.room_type) + 1
        sf[16] = float(st.instance is not None)
    tgt = target_cell(rt)
    if tgt is not None:
        cell, height, inter = tgt
        sf[17:19] = to_egocentric(pose.rot, cell[0] - pose.x, cell[1] - pose.y)
        sf[19] = float(reach_ok(smap.geometry, smap.config, pose, cap.hei, cell, height, inter))
    if intent is not None:
        sf[20:22] = (intent.subgoal.dx, intent.subgoal.dy)
    goal = exploration_goal(smap, pose.cell, blocked)
    if goal is not None:
        sf[22] = bfs_distances(smap.geometry, pose.cell).get(goal[0], 0)
    sf[23] = 1.0 - smap.explored_fraction()
    return sf


# -- vectors and attention ------------------------------------------------------------

@dataclass(frozen=True)
class Generators:
    """The four linear generators, each of shape (d, d_sf)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in (self.q, self.k, self.v, self.e)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError(f"generator shapes disagree: {sorted(shapes)}")

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def d_sf(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class CommVectors:
    qry: np.ndarray
    key: np.ndarray
    val: np.ndarray
    inv: np.ndarray


def semantic_generators(d: int = D_MSG, d_sf: int = D_SF, scale: float = 4.0) -> Generators:
    """Hand-set generators: fresh detections and active Place sub-tasks make an
    agent a useful sender to manipulation-capable receivers; agents at the
    same height attend to each other; value and inter vectors copy the leading
    feature entries.
    """
    if d < 4 or d_sf < D_SF:
        raise ValueError("semantic preset needs d >= 4 and the full feature layout")
    q = np.zeros((d, d_sf))
    k = np.zeros((d, d_sf))
    nav, mani, hei = SF_INDEX["nav"], SF_INDEX["mani"], SF_INDEX["hei"]
    q[0, SF_INDEX["new_det"]] = scale
    k[0, mani] = scale
    q[1, SF_INDEX["is_place"]] = scale
    k[1, mani] = scale
    q[2, hei], q[2, nav] = 2 * scale, -scale
    k[2, hei], k[2, nav] = 2 * scale, -scale
    q[3, mani] = -scale
    k[3, nav], k[3, mani] = scale, -scale
    ident = np.eye(d, d_sf)
    return Generators(q, k, ident.copy(), ident.copy())


def random_generators(d: int = D_MSG, d_sf: int = D_SF, seed: int = 0) -> Generators:
    """Seeded generators with orthonormal rows."""
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(4):
        a = rng.standard_normal((d_sf, d))
        qmat, _ = np.linalg.qr(a)
        mats.append(qmat[:, :d].T.copy())
    return Generators(*mats)


def make_generators(preset: str = "semantic", d: int = D_MSG, d_sf: int = D_SF, seed: int = 0) -> Generators:
    if preset == "semantic":
        return semantic_generators(d, d_sf)
    if preset == "random":
        return random_generators(d, d_sf, seed)
    raise ValueError(f"unknown generator preset {preset!r}")


def make_vectors(sf: np.ndarray, gens: Generators) -> CommVectors:
    sf = np.asarray(sf, dtype=float)
    if sf.shape != (gens.d_sf,):
        raise ValueError(f"state feature of shape {sf.shape} does not match generators ({gens.d_sf},)")
    return CommVectors(gens.q @ sf, gens.k @ sf, gens.v @ sf, gens.e @ sf)


@dataclass
class CommMatrix:
    T: np.ndarray
    raw: np.ndarray
    groups: list[frozenset] = field(default_factory=list)
    ledger: int = 0


def softmax_rows(raw: np.ndarray) -> np.ndarray:
    z = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def attention_matrix(vectors: list[CommVectors]) -> CommMatrix:
    """``raw[i, j] = qry_j . key_i / sqrt(d)``: how useful j's information is to i."""
    if not vectors:
        raise ValueError("need at least one agent")
    Q = np.array([v.qry for v in vectors], dtype=float)
    K = np.array([v.key for v in vectors], dtype=float)
    if Q.shape != K.shape:
        raise ValueError("query and key dimensions differ")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(K))):
        raise ValueError("non-finite communication vectors")
    raw = K @ Q.T / math.sqrt(Q.shape[1])
    return CommMatrix(softmax_rows(raw), raw)


def _check_thresholds(mu: float, delta: float) -> None:
    if not 0 < mu < delta < 1:
        raise ValueError(f"thresholds must satisfy 0 < mu < delta < 1, got mu={mu}, delta={delta}")


def partition_groups(T: np.ndarray | CommMatrix, delta: float = DELTA, mu: float = MU) -> list[frozenset]:
    """Connected components of the graph joining receptive agents to the senders they rate above ``mu``.

    Components are returned ordered by their smallest member.
    """
    _check_thresholds(mu, delta)
    T = T.T if isinstance(T, CommMatrix) else np.asarray(T)
    n = T.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    receptive = [T[i, i] < delta for i in range(n)]
    for i in range(n):
        if not receptive[i]:
            continue
        for j in range(n):
            if j != i and T[i, j] > mu:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    comps: dict[int, set] = {}
    for i in range(n):
        comps.setdefault(find(i), set()).add(i)
    return sorted((frozenset(c) for c in comps.values()), key=min)


def intra_senders(T: np.ndarray, mu: float, i: int) -> list[int]:
    return [j for j in range(T.shape[0]) if j != i and T[i, j] > mu]


def aggregate_intra(T: np.ndarray, vals, mu: float, i: int) -> np.ndarray:
    T = np.asarray(T)
    vals = np.asarray(vals, dtype=float)
    out = np.zeros(vals.shape[1])
    for j in intra_senders(T, mu, i):
        out = out + T[i, j] * vals[j]
    return out


def inter_source(T: np.ndarray, groups: list[frozenset], i: int) -> int | None:
    """Agent outside i's group with the highest mean attention from i's group; ties to the lowest index."""
    T = np.asarray(T)
    mine = next(g for g in groups if i in g)
    best, best_j = -math.inf, None
    members = sorted(mine)
    for j in range(T.shape[0]):
        if j in mine:
            continue
        score = sum(T[g, j] for g in members) / len(members)
        if score > best:
            best, best_j = score, j
    return best_j


def aggregate_inter(T: np.ndarray, invs, groups: list[frozenset], i: int) -> np.ndarray:
    invs = np.asarray(invs, dtype=float)
    j = inter_source(T, groups, i)
    return np.zeros(invs.shape[1]) if j is None else invs[j].copy()


def soft_aggregate(T: np.ndarray, vals, invs, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Training-mode aggregation over every agent, self included."""
    T = np.asarray(T)
    vals = np.asarray(vals, dtype=float)
    invs = np.asarray(invs, dtype=float)
    n = T.shape[0]
    inn = sum(T[i, j] * vals[j] for j in range(n))
    if n == 1:
        return np.asarray(inn, dtype=float), np.zeros(invs.shape[1])
    intr = sum((1 - T[i, j]) * invs[j] for j in range(n))
    return np.asarray(inn, dtype=float), np.asarray(intr, dtype=float)


# -- protocols -------------------------------------------------------------------------

@dataclass(frozen=True)
class CommMessage:
    protocol: str
    sender: int
    receiver: int | str  # agent index, or "center"
    kind: str
    dims: int


@dataclass
class CommRound:
    """Outcome of one communication round."""

    protocol: str
    inbox: dict[int, list[CommMessage]]
    ledger: int
    matrix: CommMatrix | None = None
    inn: dict[int, np.ndarray] = field(default_factory=dict)
    inter: dict[int, np.ndarray] = field(default_factory=dict)
    inter_from: dict[int, int | None] = field(default_factory=dict)

    def senders(self, i: int, kinds: tuple[str, ...] | None = None) -> list[int]:
        out = []
        for m in self.inbox.get(i, []):
            if isinstance(m.sender, int) and (kinds is None or m.kind in kinds) and m.sender not in out:
                out.append(m.sender)
        return sorted(out)


@dataclass(frozen=True)
class CommConfig:
    protocol: str = HANGRCOM
    d: int = D_MSG
    mu: float = MU
    delta: float = DELTA
    preset: str = "semantic"
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ProtocolError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        _check_thresholds(self.mu, self.delta)


def run_protocol(
    protocol: str,
    features: list[np.ndarray],
    config: CommConfig | None = None,
    new_detection: list[bool] | None = None,
    gens: Generators | None = None,
) -> CommRound:
    """Exchange one round of messages among ``len(features)`` agents.

    ``new_detection[i]`` gates CondComm senders.  CentralComm relays every
    agent's state and map through the center, so each agent is charged as if
    it had received them directly.
    """
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    cfg = config or CommConfig(protocol)
    n = len(features)
    sizes = payload_sizes(cfg.d)
    inbox: dict[int, list[CommMessage]] = {i: [] for i in range(n)}
    out = CommRound(protocol, inbox, 0)

    def send(j, i, kind):
        inbox[i].append(CommMessage(protocol, j, i, kind, sizes[kind]))
        out.ledger += sizes[kind]

    if protocol == NOCOMM:
        return out
    if protocol in (BROAD, CENTRAL, COND, CMPR, INTEN):
        payload = {BROAD: ("state", "map"), CENTRAL: ("state", "map"), COND: ("state", "map"),
                   CMPR: ("state", "cmap"), INTEN: ("state",)}[protocol]
        for j in range(n):
            if protocol == COND and not (new_detection and new_detection[j]):
                continue
            for i in range(n):
                if i != j:
                    for kind in payload:
                        send(j, i, kind)
        return out
    gens = gens or make_generators(cfg.preset, cfg.d, len(features[0]) if n else D_SF, cfg.seed)
    vecs = [make_vectors(sf, gens) for sf in features]
    cm = attention_matrix(vecs)
    for j in range(n):
        for i in range(n):
            if i != j:
                send(j, i, "query")
    cm.groups = partition_groups(cm.T, cfg.delta, cfg.mu)
    vals = np.array([v.val for v in vecs])
    invs = np.array([v.inv for v in vecs])
    for i in range(n):
        if cm.T[i, i] < cfg.delta:
            for j in intra_senders(cm.T, cfg.mu, i):
                send(j, i, "value")
            out.inn[i] = aggregate_intra(cm.T, vals, cfg.mu, i)
        else:
            out.inn[i] = np.zeros(cfg.d)
        j = inter_source(cm.T, cm.groups, i)
        out.inter_from[i] = j
        if j is not None:
            send(j, i, "inter")
        out.inter[i] = aggregate_inter(cm.T, invs, cm.groups, i)
    cm.ledger = out.ledger
    out.matrix = cm
    return out


def closed_form_dims(protocol: str, n: int, rounds: int = 1, d: int = D_MSG) -> int | None:
    """Total dims over ``rounds`` for the fixed-payload protocols; None where content-dependent."""
    per = {BROAD: STATE_DIMS + MAP_DIMS, CENTRAL: STATE_DIMS + MAP_DIMS,
           CMPR: STATE_DIMS + CMAP_DIMS, INTEN: STATE_DIMS, NOCOMM: 0}
    if protocol not in per:
        return None
    return n * (n - 1) * per[protocol] * rounds


class HanGrCom(TransformerMixin, BaseEstimator):
    """Thresholded attention aggregation as a transformer over a team's feature rows.

    ``transform(X)`` maps an (N, d_sf) array of state features to an
    (N, 2d) array ``[inn | int]``; ``soft=True`` uses the training-mode sums.
    """

    def __init__(self, d: int = D_MSG, mu: float = MU, delta: float = DELTA,
                 preset: str = "semantic", seed: int = 0, soft: bool = False):
        self.d = d
        self.mu = mu
        self.delta = delta
        self.preset = preset
        self.seed = seed
        self.soft = soft

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        _check_thresholds(self.mu, self.delta)
        self.generators_ = make_generators(self.preset, self.d, X.shape[1], self.seed)
        self.n_features_in_ = X.shape[1]
        return self

    def attention(self, X) -> CommMatrix:
        check_is_fitted(self, "generators_")
        X = check_array(X, ensure_min_samples=1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        cm = attention_matrix([make_vectors(row, self.generators_) for row in X])
        cm.groups = partition_groups(cm.T, self.delta, self.mu)
        return cm

    def transform(self, X):
        cm = self.attention(X)
        vecs = [make_vectors(row, self.generators_) for row in check_array(X)]
        vals = np.array([v.val for v in vecs])
        invs = np.array([v.inv for v in vecs])
        rows = []
        for i in range(len(vecs)):
            if self.soft:
                inn, intr = soft_aggregate(cm.T, vals, invs, i)
            else:
                inn = aggregate_intra(cm.T, vals, self.mu, i) if cm.T[i, i] < self.delta else np.zeros(self.d)
                intr = aggregate_inter(cm.T, invs, cm.groups, i)
            rows.append(np.concatenate([inn, intr]))
        return np.array(rows)


__all__ = [
    "BROAD", "CENTRAL", "CMPR", "COND", "CommConfig", "CommMatrix", "CommMessage", "CommRound",
    "CommVectors", "D_MSG", "D_SF", "Generators", "HANGRCOM", "HanGrCom", "INTEN", "NOCOMM",
    "PROTOCOLS", "ProtocolError", "SF_FIELDS", "aggregate_inter", "aggregate_intra",
    "attention_matrix", "closed_form_dims", "featurize_state", "make_generators", "make_vectors",
    "partition_groups", "payload_sizes", "run_protocol", "soft_aggregate",
]
