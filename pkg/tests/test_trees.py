import numpy as np
import pytest

from shiftsched import trees
from shiftsched.diagnostics import roc_auc
from shiftsched.trees import RegressionTree, TreeEnsemble


def leaf(v):
    return RegressionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                          np.array([v]), np.array([0.0]), np.array([1]))


def test_constant_target_gives_single_leaf():
    t = trees.fit_regression_tree(np.arange(10.0)[:, None], np.full(10, 3.5))
    assert t.node_count == 1 and t.value[0] == 3.5


def test_sign_data_needs_one_split():
    X = np.array([[-1.0], [-1.0], [1.0], [1.0]])
    y = np.sign(X[:, 0])
    t = trees.fit_regression_tree(X, y)
    assert t.depth == 1
    np.testing.assert_array_equal(t.predict(X), y)
    assert t.threshold[0] == 0.0


def test_min_leaf_equal_to_n_forces_leaf():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    t = trees.fit_regression_tree(X, y, {"min_leaf": 20})
    assert t.node_count == 1 and t.value[0] == pytest.approx(y.mean())


def test_empty_data_rejected():
    with pytest.raises(trees.EmptyDataError):
        trees.fit_regression_tree(np.zeros((0, 2)), np.zeros(0))


def test_depth_limit_and_feature_indices(rng):
    X, y = rng.normal(size=(300, 4)), rng.normal(size=300)
    t = trees.fit_regression_tree(X, y, {"max_depth": 3})
    assert t.depth <= 3
    assert t.feature.max() < 4


def test_single_tree_forest_equals_cart(rng):
    X, y = rng.normal(size=(100, 3)), rng.normal(size=100)
    f = trees.fit_random_forest(X, y, {"n_trees": 1, "bootstrap": False,
                                       "feature_subsample": None})
    t = trees.fit_regression_tree(X, y, {"max_depth": 8, "min_leaf": 5})
    np.testing.assert_array_equal(trees.ensemble_predict(f, X), t.predict(X))


def test_forest_constant_target():
    X = np.random.default_rng(1).normal(size=(50, 2))
    f = trees.fit_random_forest(X, np.full(50, 7.0), {"n_trees": 5})
    assert np.all(trees.ensemble_predict(f, X * 10) == 7.0)


def test_forest_fits_linear_signal():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 3))
    y = X[:, 0]
    f = trees.fit_random_forest(X, y, {"n_trees": 50, "max_depth": 6, "feature_subsample": None})
    pred = trees.ensemble_predict(f, X)
    r2 = 1 - np.sum((pred - y) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 > 0.9


def test_forest_predictions_bounded_by_training_range(rng):
    X, y = rng.normal(size=(200, 2)), rng.uniform(-3, 5, 200)
    f = trees.fit_random_forest(X, y, {"n_trees": 10})
    pred = trees.ensemble_predict(f, rng.normal(0, 10, size=(500, 2)))
    assert pred.min() >= y.min() and pred.max() <= y.max()


def test_forest_is_deterministic(rng):
    X, y = rng.normal(size=(80, 4)), rng.normal(size=80)
    a = trees.fit_random_forest(X, y, {"n_trees": 4, "seed": 9})
    b = trees.fit_random_forest(X, y, {"n_trees": 4, "seed": 9})
    assert a.to_dict() == b.to_dict()


def test_boosting_zero_trees_predicts_mean(rng):
    X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
    e = trees.fit_gradient_boosting(X, y, {"n_trees": 0})
    assert np.allclose(trees.ensemble_predict(e, X), y.mean())


def test_boosting_single_unrestricted_tree_interpolates(rng):
    X = rng.normal(size=(40, 1))
    y = rng.normal(size=40)
    e = trees.fit_gradient_boosting(X, y, {"n_trees": 1, "learning_rate": 1.0, "max_depth": None,
                                           "min_leaf": 1})
    np.testing.assert_allclose(trees.ensemble_predict(e, X), y, atol=1e-12)


def test_logistic_separable_auc():
    X = np.linspace(-1, 1, 40)[:, None]
    y = (X[:, 0] > 0).astype(int)
    e = trees.fit_gradient_boosting(X, y, {"loss": "logistic", "n_trees": 5})
    assert roc_auc(trees.ensemble_predict(e, X), y) == 1.0


def test_logistic_rejects_non_binary():
    with pytest.raises(trees.InvalidLabelError):
        trees.fit_gradient_boosting(np.zeros((3, 1)), [0, 1, 2], {"loss": "logistic"})


def test_boosting_training_mse_non_increasing(rng):
    X = rng.normal(size=(150, 3))
    y = np.sin(X[:, 0]) + 0.3 * rng.normal(size=150)
    e = trees.fit_gradient_boosting(X, y, {"n_trees": 30, "learning_rate": 0.5})
    score = np.full(len(y), e.base_score)
    prev = np.mean((y - score) ** 2)
    for t in e.trees:
        score = score + e.learning_rate * t.predict(X)
        cur = np.mean((y - score) ** 2)
        assert cur <= prev + 1e-12
        prev = cur


def test_hand_ensembles():
    assert trees.ensemble_predict(TreeEnsemble([leaf(1.0), leaf(2.0)], "boosted_sum", 1, 0.5),
                                  np.zeros((1, 1)))[0] == 1.5
    assert np.all(trees.ensemble_predict(TreeEnsemble([leaf(4.0)] * 3, "forest_mean", 2),
                                         np.ones((5, 2))) == 4.0)
    with pytest.raises(ValueError):
        trees.ensemble_predict(TreeEnsemble([], "forest_mean", 1), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        trees.ensemble_predict(TreeEnsemble([leaf(1.0)], "forest_mean", 2), np.zeros((1, 3)))


def test_importance_single_split():
    X = np.zeros((10, 5))
    X[5:, 3] = 1.0
    y = X[:, 3] * 2
    e = trees.fit_gradient_boosting(X, y, {"n_trees": 1, "max_depth": 1})
    np.testing.assert_array_equal(trees.feature_importance(e), [0, 0, 0, 1.0, 0])


def test_importance_zero_without_splits():
    X = np.random.default_rng(0).normal(size=(20, 3))
    e = trees.fit_gradient_boosting(X, np.ones(20), {"n_trees": 3})
    assert np.all(trees.feature_importance(e) == 0)


def test_importance_finds_signal_feature():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(400, 4))
    y = X[:, 1] + 0.01 * rng.normal(size=400)
    e = trees.fit_gradient_boosting(X, y, {"max_depth": 3})
    assert trees.feature_importance(e)[1] > 0.9


def test_json_round_trip_bit_exact(tmp_path, rng):
    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    e = trees.fit_random_forest(X, y, {"n_trees": 3})
    e.save(tmp_path / "phi.json")
    back = TreeEnsemble.load(tmp_path / "phi.json")
    Z = rng.normal(size=(50, 3))
    np.testing.assert_array_equal(trees.ensemble_predict(back, Z), trees.ensemble_predict(e, Z))


def test_estimator_wrappers(rng):
    from sklearn.base import clone

    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    rf = trees.RandomForest(n_trees=3).fit(X, y)
    assert clone(rf).get_params()["n_trees"] == 3
    assert rf.predict(X).shape == (60,)
    gb = trees.GradientBoosting(loss="logistic", n_trees=5).fit(X, (y > 0).astype(int))
    p = gb.predict_proba(X)
    assert np.allclose(p.sum(axis=1), 1) and set(gb.predict(X)) <= {0, 1}
