import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tidyhet.decision import DELTA_VALUES, OPE_VALUES, ROT_VALUES, SubGoal
from tidyhet.learn import (
    HEADS, ImitationPolicy, LinearHeads, TrainConfig, TrainingError, composite_loss_grad, composite_subgoal_loss,
    composite_subtask_loss, detector_loss, detector_loss_grad, encode_labels, head_arities, load_model,
    predict_heads, save_model, subgoal_accuracy, train_imitation, train_team,
)
from tidyhet.learn import LabelError
from tidyhet.taskgen import generate_expert_demo, generate_meta_task

SMALL = {"task": 2, "obj": 10, "rec": 6, "room": 4, "x": 9, "y": 9, "rot": 4, "ope": 4, "stop": 2}


def uniform(ar, n=1):
    return {h: np.full((n, k), 1.0 / k) for h, k in ar.items()}


def onehot(ar, labels):
    return {h: np.eye(ar[h])[np.atleast_1d(labels[h])] for h in ar}


def place_labels(n=1):
    return {h: np.ones(n, dtype=int) for h in HEADS}


def test_uniform_subgoal_loss():
    expect = 2 * math.log(9) + 2 * math.log(4) + math.log(2)
    assert composite_subgoal_loss(uniform(SMALL), place_labels()) == pytest.approx(expect, abs=1e-9)
    assert expect == pytest.approx(7.86, abs=0.005)


def test_uniform_subtask_loss_toy_ontology():
    expect = math.log(2) + math.log(10) + math.log(6) + math.log(4)
    assert composite_subtask_loss(uniform(SMALL), place_labels()) == pytest.approx(expect, abs=1e-9)


def test_perfect_predictions_zero():
    lab = place_labels()
    p = onehot(SMALL, lab)
    assert composite_subgoal_loss(p, lab) == 0.0 and composite_subtask_loss(p, lab) == 0.0
    det = {"mis": np.array([1.0]), "rec": np.array([[1.0, 0.0]]), "room": np.array([[0.0, 1.0, 0.0, 0.0]])}
    assert detector_loss(det, det) == 0.0


def test_explore_masks_place_heads():
    lab = {h: np.zeros(1, dtype=int) for h in HEADS}
    assert composite_subtask_loss(uniform(SMALL), lab) == pytest.approx(math.log(2), abs=1e-12)


def test_weight_linearity():
    rng = np.random.default_rng(0)
    pred = {h: rng.dirichlet(np.ones(k), size=3) for h, k in SMALL.items()}
    lab = {h: rng.integers(0, k, 3) for h, k in SMALL.items()}
    lab["task"] = np.ones(3, dtype=int)
    base = composite_subgoal_loss(pred, lab)
    rot = float(np.mean(-np.log(pred["rot"][np.arange(3), lab["rot"]])))
    assert composite_subgoal_loss(pred, lab, {"gamma2": 2.0}) == pytest.approx(base + rot, abs=1e-12)
    obj = float(np.mean(-np.log(pred["obj"][np.arange(3), lab["obj"]])))
    assert composite_subtask_loss(pred, lab, {"gamma1": 3.0}) == pytest.approx(
        composite_subtask_loss(pred, lab) + 2 * obj, abs=1e-12)


def test_label_out_of_range():
    lab = place_labels()
    lab["x"] = np.array([9])
    with pytest.raises(LabelError):
        composite_subgoal_loss(uniform(SMALL), lab)


def test_detector_loss_naive_and_alpha():
    pred = {"mis": np.array([0.7, 0.2]), "rec": np.array([[0.6, 0.1, 0.3], [0.5, 0.5, 0.9]]),
            "room": np.array([[0.2, 0.7, 0.1, 0.4], [0.3, 0.3, 0.3, 0.3]])}
    lab = {"mis": np.array([1, 0]), "rec": np.array([[1, 0, 1], [0, 0, 1]]),
           "room": np.array([[0, 1, 0, 0], [1, 0, 0, 1]])}

    def bce(p, y):
        return -(y * math.log(p) + (1 - y) * math.log(1 - p))

    per = []
    for n in range(2):
        t = bce(pred["mis"][n], lab["mis"][n])
        t += sum(bce(p, y) for p, y in zip(pred["rec"][n], lab["rec"][n]))
        t += sum(bce(p, y) for p, y in zip(pred["room"][n], lab["room"][n]))
        per.append(t)
    assert detector_loss(pred, lab) == pytest.approx(sum(per) / 2, abs=1e-12)
    mis = (bce(0.7, 1) + bce(0.2, 0)) / 2
    assert detector_loss(pred, lab, {"alpha": 2.0}) == pytest.approx(sum(per) / 2 + mis, abs=1e-12)
    with pytest.raises(ValueError):
        detector_loss({**pred, "rec": pred["rec"][:, :2]}, lab)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(gamma1=0.0)


def _fd_check(f, logits, grads):
    eps = 1e-6
    for h, z in logits.items():
        for idx in np.ndindex(z.shape):
            zp, zm = {k: v.copy() for k, v in logits.items()}, {k: v.copy() for k, v in logits.items()}
            zp[h][idx] += eps
            zm[h][idx] -= eps
            num = (f(zp) - f(zm)) / (2 * eps)
            ana = grads[h][idx]
            assert abs(num - ana) <= 1e-5 * max(1.0, abs(num), abs(ana)), (h, idx, num, ana)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_composite_gradient_matches_finite_differences(seed, n):
    rng = np.random.default_rng(seed)
    logits = {h: rng.normal(size=(n, k)) for h, k in SMALL.items()}
    lab = {h: rng.integers(0, k, n) for h, k in SMALL.items()}
    w = TrainConfig(gamma1=float(rng.uniform(0.5, 2)), delta2=float(rng.uniform(0.5, 2)))
    _, _, grads = composite_loss_grad(logits, lab, w)

    def f(z):
        a, b, _ = composite_loss_grad(z, lab, w)
        return a + b

    _fd_check(f, logits, grads)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_detector_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = {"mis": rng.normal(size=3), "rec": rng.normal(size=(3, 5)), "room": rng.normal(size=(3, 4))}
    lab = {"mis": rng.integers(0, 2, 3), "rec": rng.integers(0, 2, (3, 5)), "room": rng.integers(0, 2, (3, 4))}
    _, grads = detector_loss_grad(logits, lab, {"beta": 1.5})
    _fd_check(lambda z: detector_loss_grad(z, lab, {"beta": 1.5})[0], logits, grads)


def test_zero_model_decodes_class_zero():
    m = LinearHeads.zeros(5, SMALL)
    sg, dists = predict_heads(m, np.zeros(5))
    assert sg == SubGoal(DELTA_VALUES[0], DELTA_VALUES[0], ROT_VALUES[0], OPE_VALUES[0], 0)
    assert sg.dx == -4
    assert np.allclose(dists["x"], 1 / 9)
    with pytest.raises(ValueError):
        predict_heads(m, np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_models_decode_valid_subgoals(seed):
    rng = np.random.default_rng(seed)
    m = LinearHeads.zeros(6, SMALL)
    for h in HEADS:
        m.W[h] = rng.normal(size=m.W[h].shape)
    sg, _ = predict_heads(m, rng.normal(size=6) * 5)
    assert sg.dx in DELTA_VALUES and sg.dy in DELTA_VALUES and sg.drot in ROT_VALUES
    assert sg.ope in OPE_VALUES and sg.stop in (0, 1)


def _toy_xy(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = np.column_stack([rng.integers(0, SMALL[h], n) for h in HEADS])
    return X, y


def test_single_sample_fit():
    X, y = _toy_xy(n=1)
    est = ImitationPolicy(SMALL, lr=0.5, epochs=50).fit(X, y)
    assert np.array_equal(est.predict(X), y)
    assert est.score(X, y) == 1.0


def test_fit_is_deterministic_and_validates():
    X, y = _toy_xy()
    a = ImitationPolicy(SMALL, epochs=5, seed=3).fit(X, y).model_
    b = ImitationPolicy(SMALL, epochs=5, seed=3).fit(X, y).model_
    assert all(np.array_equal(a.W[h], b.W[h]) for h in HEADS)
    assert a.loss_trace == b.loss_trace
    with pytest.raises(ValueError):
        ImitationPolicy(SMALL).fit(X, y[:, :8])
    bad = y.copy()
    bad[0, 4] = 9
    with pytest.raises(LabelError):
        ImitationPolicy(SMALL).fit(X, bad)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    X, y = _toy_xy()
    X[0, 0] = 1e300
    with pytest.raises(TrainingError, match="step"):
        ImitationPolicy(SMALL, lr=1e10, epochs=3).fit(X, y)


def test_sklearn_params_roundtrip():
    from sklearn.base import clone

    est = ImitationPolicy(SMALL, lr=0.1, epochs=7)
    assert clone(est).get_params() == est.get_params()


@pytest.fixture(scope="module")
def corpus(kb, scenes):
    demos = []
    for name in sorted(scenes)[:3]:
        for seed in range(3):
            task = generate_meta_task(scenes[name], kb, seed)
            demos.append(generate_expert_demo(scenes[name], task, kb=kb, start_index=0))
    return demos


def test_encode_labels_layout(kb):
    lab = encode_labels({"kind": "Place", "object_type": "Apple", "receptacle_type": "Fridge", "room_type": "Kitchen"},
                        SubGoal(-4, 4, 270, "NoAction", 1), kb)
    assert list(lab[4:]) == [0, 8, 3, 3, 1] and lab[0] == 1
    assert list(encode_labels({"kind": "Explore"}, SubGoal(), kb)[:4]) == [0, 0, 0, 0]


def test_team_training_on_demos(kb, corpus, tmp_path):
    models = train_team(corpus, TrainConfig(epochs=20), kb)
    assert sorted(models) == [0, 1, 2]
    for a, m in models.items():
        assert m.arities == head_arities(kb)
        assert m.loss_trace[-1] < m.loss_trace[0]
        assert subgoal_accuracy(m, corpus, kb, a) >= 0.7
    save_model(models, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for a in models:
        assert all(np.array_equal(back[a].W[h], models[a].W[h]) for h in HEADS)
    with pytest.raises(ValueError):
        train_imitation([], kb=kb)
