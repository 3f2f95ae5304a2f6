"""Behaviour cloning with multi-head linear classifiers.

Sub-task heads (kind, object type, receptacle type, room type) and sub-goal
heads (dx, dy, drot, ope, stop) share one input vector: the agent's state
feature followed by a sub-task embedding (see :func:`policy_features`).
Training minimises the weighted sum of per-head cross-entropies with plain
mini-batch SGD.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .decision import DELTA_VALUES, NO_ACTION, OPE_VALUES, PLACE, ROT_VALUES, EXPLORE, Intent, SubGoal
from .knowledge import ROOM_TYPES, Ontology, load_ontology

MODEL_VERSION = 1

SUBTASK_HEADS = ("task", "obj", "rec", "room")
SUBGOAL_HEADS = ("x", "y", "rot", "ope", "stop")
HEADS = SUBTASK_HEADS + SUBGOAL_HEADS
PLACE_PARAM_HEADS = ("obj", "rec", "room")

# which weight scales which head
SUBTASK_WEIGHTS = {"task": None, "obj": "gamma1", "rec": "delta1", "room": "theta1"}
SUBGOAL_WEIGHTS = {"x": None, "y": None, "rot": "gamma2", "ope": "delta2", "stop": "theta2"}
EMBED_DIM = 7 + 9 + 9 + 4


class TrainingError(RuntimeError):
    pass


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    delta1: float = 1.0
    delta2: float = 1.0
    theta1: float = 1.0
    theta2: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        for name in ("alpha", "beta", "lam", "gamma1", "gamma2", "delta1", "delta2", "theta1", "theta2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"loss weight {name} must be positive")

    def weight(self, name: str | None) -> float:
        return 1.0 if name is None else getattr(self, name)


def head_arities(kb: Ontology) -> dict[str, int]:
    return {
        "task": 2,
        "obj": len(kb.pickupable_types),
        "rec": len(kb.receptacle_types),
        "room": len(ROOM_TYPES),
        "x": len(DELTA_VALUES),
        "y": len(DELTA_VALUES),
        "rot": len(ROT_VALUES),
        "ope": len(OPE_VALUES),
        "stop": 2,
    }


# -- features and labels ------------------------------------------------------------

def _onehot(n: int, i: int) -> list[float]:
    v = [0.0] * n
    v[i] = 1.0
    return v


def policy_features(
    sf: np.ndarray,
    kind: str,
    holding: bool,
    intent: Intent | None,
    stop_ok: bool,
    no_frontier: bool,
    flat: bool = False,
) -> np.ndarray:
    """State feature followed by the sub-task embedding.

    The embedding carries the sub-task kind, holding and arrival flags, and
    the planner's next-hop offset and heading as one-hots.  ``flat=True``
    returns the state feature alone.
    """
    sf = np.asarray(sf, dtype=float)
    if flat:
        return sf.copy()
    sg = intent.subgoal if intent is not None else SubGoal()
    arrives = intent is not None and intent.arrives
    place = kind == PLACE
    emb = [
        float(kind == EXPLORE), float(place), float(holding),
        float(place and arrives and not holding), float(place and arrives and holding),
        float(stop_ok), float(no_frontier),
    ]
    emb += _onehot(9, sg.dx + 4) + _onehot(9, sg.dy + 4) + _onehot(4, sg.drot // 90)
    return np.concatenate([sf, np.array(emb)])


def encode_labels(subtask: dict, subgoal, kb: Ontology) -> np.ndarray:
    """Class indices for every head.  Explore samples carry 0 in the masked Place heads."""
    sg = subgoal if isinstance(subgoal, SubGoal) else SubGoal(*subgoal)
    if subtask["kind"] == PLACE:
        task = 1
        obj = kb.pickupable_types.index(subtask["object_type"])
        rec = kb.receptacle_types.index(subtask["receptacle_type"])
        room = ROOM_TYPES.index(subtask["room_type"])
    else:
        task = obj = rec = room = 0
    return np.array([
        task, obj, rec, room,
        DELTA_VALUES.index(sg.dx), DELTA_VALUES.index(sg.dy), ROT_VALUES.index(sg.drot),
        OPE_VALUES.index(sg.ope), sg.stop,
    ], dtype=int)


def decode_subgoal(classes) -> SubGoal:
    x, y, rot, ope, stop = (int(c) for c in classes[-5:])
    return SubGoal(DELTA_VALUES[x], DELTA_VALUES[y], ROT_VALUES[rot], OPE_VALUES[ope], stop)


# -- losses ------------------------------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[None, :] if p.ndim == 1 else p


def _ce(p: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = _as_batch(p)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise LabelError(f"label outside head arity {p.shape[1]}")
    picked = p[np.arange(len(labels)), labels]
    with np.errstate(divide="ignore"):
        return -np.log(picked)


def _weights(weights) -> TrainConfig:
    if weights is None:
        return TrainConfig()
    if isinstance(weights, dict):
        return TrainConfig(**weights)
    return weights


def composite_subgoal_loss(pred: dict, labels: dict, weights=None) -> float:
    """Mean over samples of x + y + g2*rot + d2*ope + t2*stop cross-entropies."""
    w = _weights(weights)
    total = 0.0
    for head, wname in SUBGOAL_WEIGHTS.items():
        total = total + w.weight(wname) * _ce(pred[head], labels[head])
    return float(np.mean(total))


def _place_mask(labels: dict) -> np.ndarray:
    return np.atleast_1d(np.asarray(labels["task"], dtype=int)) == 1


def composite_subtask_loss(pred: dict, labels: dict, weights=None) -> float:
    """Mean over samples of task + g1*obj + d1*rec + t1*room; Place heads masked on Explore samples."""
    w = _weights(weights)
    mask = _place_mask(labels)
    total = _ce(pred["task"], labels["task"])
    for head in PLACE_PARAM_HEADS:
        lab = np.where(mask, np.atleast_1d(labels[head]), 0)
        term = _ce(pred[head], lab)
        total = total + w.weight(SUBTASK_WEIGHTS[head]) * np.where(mask, term, 0.0)
    return float(np.mean(total))


def _bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} does not match labels {y.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -(np.where(y > 0, y * np.log(p), 0.0) + np.where(y < 1, (1 - y) * np.log(1 - p), 0.0))
    return out


def detector_loss(pred: dict, labels: dict, weights=None) -> float:
    """alpha*mis + beta*rec1 + lambda*room1, multi-label terms summed over classes, mean over samples.

    ``pred`` holds probabilities: ``mis`` (n,), ``rec`` (n, K_recep), ``room`` (n, 4).
    """
    w = _weights(weights)
    mis = np.atleast_1d(_bce(pred["mis"], labels["mis"]))
    rec = _bce(_as_batch(pred["rec"]), _as_batch(labels["rec"])).sum(axis=1)
    room = _bce(_as_batch(pred["room"]), _as_batch(labels["room"])).sum(axis=1)
    if not (len(mis) == len(rec) == len(room)):
        raise ValueError("detector heads disagree on batch size")
    return float(np.mean(w.alpha * mis + w.beta * rec + w.lam * room))


def detector_loss_grad(logits: dict, labels: dict, weights=None) -> tuple[float, dict]:
    """Detector loss from logits and its gradient with respect to them."""
    w = _weights(weights)
    sig = {k: 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=float))) for k, v in logits.items()}
    loss = detector_loss(sig, labels, w)
    n = len(np.atleast_1d(labels["mis"]))
    grads = {
        "mis": w.alpha * (sig["mis"] - np.asarray(labels["mis"], dtype=float)) / n,
        "rec": w.beta * (sig["rec"] - np.asarray(labels["rec"], dtype=float)) / n,
        "room": w.lam * (sig["room"] - np.asarray(labels["room"], dtype=float)) / n,
    }
    return loss, grads


def composite_loss_grad(logits: dict, labels: dict, weights=None) -> tuple[float, float, dict]:
    """(subtask loss, subgoal loss, gradient of their sum w.r.t. each head's logits)."""
    w = _weights(weights)
    probs = {h: softmax(_as_batch(logits[h])) for h in HEADS}
    lab = {h: np.atleast_1d(np.asarray(labels[h], dtype=int)) for h in HEADS}
    n = len(lab["task"])
    mask = _place_mask(lab).astype(float)
    grads = {}
    for h in HEADS:
        wname = SUBTASK_WEIGHTS.get(h, SUBGOAL_WEIGHTS.get(h))
        y = lab[h] if h not in PLACE_PARAM_HEADS else np.where(mask > 0, lab[h], 0)
        g = probs[h].copy()
        g[np.arange(n), y] -= 1.0
        g *= w.weight(wname) / n
        if h in PLACE_PARAM_HEADS:
            g *= mask[:, None]
        grads[h] = g
    return composite_subtask_loss(probs, lab, w), composite_subgoal_loss(probs, lab, w), grads


# -- model -------------------------------------------------------------------------------------

@dataclass
class LinearHeads:
    """Per-head weights over standardized inputs."""

    d_in: int
    arities: dict
    W: dict
    b: dict
    mean: np.ndarray
    scale: np.ndarray
    flat: bool = False
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        for h in HEADS:
            if self.W[h].shape != (self.d_in, self.arities[h]) or self.b[h].shape != (self.arities[h],):
                raise ValueError(f"head {h} has the wrong shape")

    @classmethod
    def zeros(cls, d_in: int, arities: dict, flat: bool = False) -> "LinearHeads":
        return cls(
            d_in, dict(arities),
            {h: np.zeros((d_in, arities[h])) for h in HEADS},
            {h: np.zeros(arities[h]) for h in HEADS},
            np.zeros(d_in), np.ones(d_in), flat,
        )

    def logits(self, X: np.ndarray) -> dict:
        Z = (np.atleast_2d(X) - self.mean) / self.scale
        return {h: Z @ self.W[h] + self.b[h] for h in HEADS}

    def to_dict(self) -> dict:
        return {
            "model_version": MODEL_VERSION,
            "d_in": self.d_in,
            "flat": self.flat,
            "arities": self.arities,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "heads": {h: {"W": self.W[h].tolist(), "b": self.b[h].tolist()} for h in HEADS},
            "loss_trace": list(self.loss_trace),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearHeads":
        if doc.get("model_version") != MODEL_VERSION:
            raise ValueError(f"unsupported model_version {doc.get('model_version')!r}")
        heads = doc["heads"]
        return cls(
            doc["d_in"], dict(doc["arities"]),
            {h: np.array(heads[h]["W"], dtype=float).reshape(doc["d_in"], doc["arities"][h]) for h in HEADS},
            {h: np.array(heads[h]["b"], dtype=float) for h in HEADS},
            np.array(doc["mean"], dtype=float), np.array(doc["scale"], dtype=float),
            bool(doc.get("flat", False)), list(doc.get("loss_trace", [])),
        )


def _first_argmax(z: np.ndarray) -> np.ndarray:
    return np.argmax(z, axis=-1)  # numpy returns the lowest index on ties


class ImitationPolicy(ClassifierMixin, BaseEstimator):
    """Multi-head linear classifier.

    ``y`` is an (n, 9) integer array of class indices in head order
    (task, obj, rec, room, x, y, rot, ope, stop).  ``score`` is the fraction
    of samples whose full sub-goal tuple is reproduced.
    """

    def __init__(self, arities: dict | None = None, lr: float = 0.05, epochs: int = 30,
                 batch_size: int = 32, seed: int = 0, weights: dict | None = None, flat: bool = False):
        self.arities = arities
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.weights = weights
        self.flat = flat

    def _config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.epochs, self.batch_size, self.seed, **(self.weights or {}))

    def fit(self, X, y):
        X = check_array(X)
        y = check_array(y, dtype=int)
        if y.shape != (X.shape[0], len(HEADS)):
            raise ValueError(f"labels must have shape (n, {len(HEADS)})")
        cfg = self._config()
        ar = dict(self.arities) if self.arities is not None else {h: int(y[:, k].max()) + 1 for k, h in enumerate(HEADS)}
        for k, h in enumerate(HEADS):
            if y[:, k].min() < 0 or y[:, k].max() >= ar[h]:
                raise LabelError(f"labels for head {h} exceed arity {ar[h]}")
        model = LinearHeads.zeros(X.shape[1], ar, self.flat)
        model.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        model.scale = np.where(sd > 1e-12, sd, 1.0)
        Z = (X - model.mean) / model.scale
        rng = np.random.default_rng(cfg.seed)
        n = len(X)
        step = 0
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            total, count = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                Zb = Z[idx]
                logits = {h: Zb @ model.W[h] + model.b[h] for h in HEADS}
                labels = {h: y[idx, k] for k, h in enumerate(HEADS)}
                l_task, l_goal, grads = composite_loss_grad(logits, labels, cfg)
                loss = l_task + l_goal
                step += 1
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at step {step}")
                for h in HEADS:
                    model.W[h] -= cfg.lr * (Zb.T @ grads[h])
                    model.b[h] -= cfg.lr * grads[h].sum(axis=0)
                total += loss * len(idx)
                count += len(idx)
            model.loss_trace.append(total / count)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.arange(ar["x"])
        return self

    @classmethod
    def from_model(cls, model: LinearHeads) -> "ImitationPolicy":
        est = cls(arities=dict(model.arities), flat=model.flat)
        est.model_ = model
        est.n_features_in_ = model.d_in
        est.classes_ = np.arange(model.arities["x"])
        return est

    def predict_proba(self, X) -> dict:
        check_is_fitted(self, "model_")
        X = check_array(X)
        return {h: softmax(z) for h, z in self.model_.logits(X).items()}

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X)
        logits = self.model_.logits(X)
        return np.stack([_first_argmax(logits[h]) for h in HEADS], axis=1)

    def score(self, X, y, sample_weight=None) -> float:
        pred = self.predict(X)
        y = check_array(y, dtype=int)
        hits = np.all(pred[:, len(SUBTASK_HEADS):] == y[:, len(SUBTASK_HEADS):], axis=1)
        return float(np.average(hits, weights=sample_weight))


# -- corpus plumbing ---------------------------------------------------------------------------

def demo_samples(demos, kb: Ontology, agent: int | None = None, flat: bool = False):
    """Stack (features, labels) from demonstration steps, optionally for one roster slot."""
    X, Y = [], []
    for demo in demos:
        for s in demo.steps:
            if agent is not None and s.agent != agent:
                continue
            X.append(s.flat_features if flat else s.features)
            Y.append(encode_labels(s.subtask, s.subgoal, kb))
    if not X:
        raise ValueError("no demonstration samples")
    return np.array(X, dtype=float), np.array(Y, dtype=int)


def train_imitation(demos, cfg: TrainConfig | None = None, kb: Ontology | None = None,
                    agent: int | None = None, flat: bool = False) -> LinearHeads:
    """Fit heads on the demonstrations (one roster slot if ``agent`` is given)."""
    if not demos:
        raise ValueError("need at least one demonstration")
    cfg = cfg or TrainConfig()
    kb = kb or load_ontology()
    X, Y = demo_samples(demos, kb, agent, flat)
    w = {k: v for k, v in asdict(cfg).items() if k not in ("lr", "epochs", "batch_size", "seed")}
    est = ImitationPolicy(head_arities(kb), cfg.lr, cfg.epochs, cfg.batch_size, cfg.seed, w, flat)
    return est.fit(X, Y).model_


def train_team(demos, cfg: TrainConfig | None = None, kb: Ontology | None = None, flat: bool = False) -> dict[int, LinearHeads]:
    """One independently trained model per roster slot."""
    slots = sorted({s.agent for d in demos for s in d.steps})
    return {a: train_imitation(demos, cfg, kb, a, flat) for a in slots}


def predict_heads(model: LinearHeads, feature) -> tuple[SubGoal, dict]:
    """Decoded sub-goal plus every head's distribution; ties go to the lowest class."""
    x = np.asarray(feature, dtype=float)
    if x.shape != (model.d_in,):
        raise ValueError(f"feature of shape {x.shape} does not match model input ({model.d_in},)")
    logits = model.logits(x)
    dists = {h: softmax(z)[0] for h, z in logits.items()}
    classes = [int(_first_argmax(logits[h])[0]) for h in SUBGOAL_HEADS]
    return decode_subgoal(classes), dists


def save_model(models: dict[int, LinearHeads] | LinearHeads, path: str | Path) -> None:
    if isinstance(models, LinearHeads):
        models = {0: models}
    doc = {"model_version": MODEL_VERSION, "agents": {str(k): m.to_dict() for k, m in sorted(models.items())}}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path: str | Path) -> dict[int, LinearHeads]:
    doc = json.loads(Path(path).read_text())
    if doc.get("model_version") != MODEL_VERSION:
        raise ValueError(f"unsupported model_version {doc.get('model_version')!r}")
    return {int(k): LinearHeads.from_dict(v) for k, v in doc["agents"].items()}


def subgoal_accuracy(model: LinearHeads, demos, kb: Ontology, agent: int | None = None) -> float:
    X, Y = demo_samples(demos, kb, agent, model.flat)
    return ImitationPolicy.from_model(model).score(X, Y)


__all__ = [
    "HEADS", "ImitationPolicy", "LinearHeads", "NO_ACTION", "TrainConfig", "TrainingError",
    "composite_loss_grad", "composite_subgoal_loss", "composite_subtask_loss", "detector_loss",
    "detector_loss_grad", "encode_labels", "head_arities", "load_model", "policy_features",
    "predict_heads", "save_model", "subgoal_accuracy", "train_imitation", "train_team",
]
