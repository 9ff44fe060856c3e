import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from capprov.errors import ValidationError
from capprov.gbdt import Hyperparams, RegressionTree, boost, grow_tree


def sse(v):
    v = np.asarray(v, dtype=float)
    return float(((v - v.mean()) ** 2).sum()) if v.size else 0.0


def brute_best_split(X, r):
    """Exhaustive search: every feature, every midpoint between distinct values."""
    best = (sse(r), None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = X[:, f] <= thr
            cost = sse(r[left]) + sse(r[~left])
            if cost < best[0] - 1e-12:
                best = (cost, f, thr)
    return best


def test_hyperparam_validation():
    with pytest.raises(ValidationError):
        Hyperparams(max_depth=0)
    with pytest.raises(ValidationError):
        Hyperparams(num_leaves=1)
    with pytest.raises(ValidationError):
        Hyperparams(learning_rate=0.0)
    with pytest.raises(ValidationError):
        Hyperparams(learning_rate=1.5)


def test_constant_target_predicts_constant():
    X = np.random.default_rng(0).normal(size=(50, 3))
    ens = boost(X, np.full(50, 4.2), Hyperparams(), 1)
    assert np.allclose(ens.predict(X), 4.2)
    assert ens.trees[0].n_leaves == 1


def test_step_function_recovered():
    x = np.linspace(0, 1, 21)
    y = np.where(x < 0.5, 0.0, 10.0)
    ens = boost(x[:, None], y, Hyperparams(max_depth=1, num_leaves=2, learning_rate=1.0), 1)
    tree = ens.trees[0]
    cost, f, thr = brute_best_split(x[:, None], y - y.mean())
    assert tree.feature[0] == f == 0
    assert tree.threshold[0] == pytest.approx(thr)
    assert 0.45 < tree.threshold[0] < 0.5
    assert np.allclose(ens.predict(x[:, None]), y)


@pytest.mark.parametrize("seed", range(10))
def test_root_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(40, 3)).astype(float)
    r = rng.normal(size=40) + 3 * (X[:, seed % 3] > 2)
    orders = [np.argsort(X[:, f], kind="stable") for f in range(3)]
    tree = grow_tree(X, r, orders, Hyperparams(1, 2, 1.0))
    cost, _, _ = brute_best_split(X, r)
    left = X[:, tree.feature[0]] <= tree.threshold[0]
    assert sse(r[left]) + sse(r[~left]) == pytest.approx(cost, rel=1e-10, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (30, 2), elements=st.floats(-5, 5, allow_nan=False)),
    arrays(np.float64, 30, elements=st.floats(-100, 100, allow_nan=False)),
    st.integers(1, 5),
    st.integers(2, 12),
)
def test_tree_shape_limits(X, y, depth, leaves):
    ens = boost(X, y, Hyperparams(depth, leaves, 0.5), 3)
    for tree in ens.trees:
        assert tree.n_leaves <= leaves
        assert tree.max_depth <= depth


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (40, 3), elements=st.floats(-10, 10, allow_nan=False)),
    arrays(np.float64, 40, elements=st.floats(-1e3, 1e3, allow_nan=False)),
    st.sampled_from([0.05, 0.3, 1.0]),
)
def test_training_rmse_non_increasing(X, y, lr):
    ens = boost(X, y, Hyperparams(4, 8, lr), 15)
    loss = ens.train_rmse
    assert len(loss) == 16
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(loss, loss[1:]))


def test_scale_equivariance():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 4))
    y = np.sin(X[:, 0]) * 50 + X[:, 1] ** 2 + rng.normal(size=120)
    hp = Hyperparams(5, 12, 0.2)
    a = boost(X, y, hp, 20)
    b = boost(X, 3.7 * y, hp, 20)
    assert b.base_prediction == pytest.approx(3.7 * a.base_prediction, rel=1e-9)
    for ta, tb in zip(a.trees, b.trees):
        # leaves with tied gains may be expanded in a different order, so compare as sets
        np.testing.assert_allclose(np.sort(tb.leaf_values()), np.sort(3.7 * ta.leaf_values()), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(b.predict(X), 3.7 * a.predict(X), rtol=1e-9)


def test_determinism_bit_identical():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(80, 3))
    y = X @ [1.0, -2.0, 0.5] + rng.normal(size=80)
    hp = Hyperparams(4, 10, 0.1)
    a = boost(X, y, hp, 25, seed=5, subsample=0.7)
    b = boost(X, y, hp, 25, seed=5, subsample=0.7)
    assert [json.dumps(t.to_dict()) for t in a.trees] == [json.dumps(t.to_dict()) for t in b.trees]
    assert a.predict(X).tobytes() == b.predict(X).tobytes()


def test_tree_dict_round_trip():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 2))
    ens = boost(X, X[:, 0] * 3 + X[:, 1], Hyperparams(3, 6, 1.0), 1)
    tree = ens.trees[0]
    back = RegressionTree.from_dict(json.loads(json.dumps(tree.to_dict())))
    assert np.array_equal(back.predict(X), tree.predict(X))


def test_identical_features_differing_targets():
    X = np.zeros((6, 2))
    y = np.array([1.0, 2, 3, 4, 5, 6])
    ens = boost(X, y, Hyperparams(), 3)
    assert np.allclose(ens.predict(X), 3.5)


def test_prediction_is_base_plus_scaled_sum():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    ens = boost(X, y, Hyperparams(3, 5, 0.3), 4)
    manual = ens.base_prediction + 0.3 * sum(t.predict(X) for t in ens.trees)
    np.testing.assert_allclose(ens.predict(X), manual, rtol=0, atol=1e-12)


def test_leaf_wise_growth_captures_interaction():
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, size=(400, 2))
    y = 100 * X[:, 0] * X[:, 1]
    shallow = boost(X, y, Hyperparams(1, 2, 1.0), 1)
    deep = boost(X, y, Hyperparams(6, 31, 1.0), 1)
    assert deep.train_rmse[-1] < 0.6 * shallow.train_rmse[-1]
    assert deep.trees[0].n_leaves > 4
