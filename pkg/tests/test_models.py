import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwpipe._cart import fit_tree
from bwpipe.errors import DataError, NotTreeModelError
from bwpipe.models import (
    DEFAULT_MODEL_ENTRIES,
    FAMILIES,
    LINEAR_FAMILIES,
    ModelSpec,
    TrainedModel,
    coefficient_magnitudes,
    default_grid,
    fit,
    model_entry,
    predict,
    tree_importances,
)
from bwpipe.models import linear


def regression_data(seed, n=120, q=6, noise=0.5):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, q)) * r.uniform(0.5, 5.0, size=q) + r.normal(size=q)
    beta = r.normal(size=q)
    y = X @ beta + 0.8 * np.sin(X[:, 0]) + noise * r.normal(size=n)
    return X, y


# -- spec / errors ---------------------------------------------------------------------

def test_spec_defaults_and_unknown_keys():
    spec = ModelSpec("gradient_boosting", {"n_stages": 5})
    assert spec.hyperparameters["learning_rate"] == 0.1 and spec.hyperparameters["n_stages"] == 5
    with pytest.raises(DataError):
        ModelSpec("gradient_boosting", {"depth": 2})
    with pytest.raises(DataError):
        ModelSpec("svr")


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_fit_rejects_non_finite(bad):
    X, y = regression_data(0)
    X[3, 1] = bad
    with pytest.raises(DataError):
        fit(ModelSpec("ols"), X, y)


def test_fit_rejects_zero_columns():
    with pytest.raises(DataError):
        fit(ModelSpec("ridge"), np.empty((10, 0)), np.zeros(10))


# -- linear families -------------------------------------------------------------------

def test_ols_residual_orthogonality():
    X, y = regression_data(1)
    m = fit(ModelSpec("ols"), X, y)
    r = y - predict(m, X)
    A = np.column_stack([np.ones(len(y)), X])
    assert np.abs(A.T @ r).max() <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(y)


def test_ols_underdetermined_is_stabilised():
    X, y = regression_data(2, n=10, q=8)
    m = fit(ModelSpec("ols"), X, y)
    assert m.diagnostics["ridge_stabilized"] and np.all(np.isfinite(predict(m, X)))


def test_ridge_tiny_lambda_matches_ols():
    X, y = regression_data(3)
    a = fit(ModelSpec("ols"), X, y).params["coef"]
    b = fit(ModelSpec("ridge", {"lam": 1e-10}), X, y).params["coef"]
    np.testing.assert_allclose(b, a, rtol=1e-6, atol=1e-9)


def test_ridge_hand_design_closed_form():
    # 3x2 design, already standardised so the internal scaling is the identity
    Z = np.array([[1.0, -1.0], [0.0, 1.0], [-1.0, 0.0]])
    Z = (Z - Z.mean(axis=0)) / Z.std(axis=0)
    y = np.array([2.0, -1.0, 0.5])
    lam = 0.7
    coef, intercept, _ = linear.ridge(Z, y, lam)
    from scipy.linalg import solve

    want = solve(Z.T @ Z + lam * np.eye(2), Z.T @ (y - y.mean()), assume_a="pos")
    np.testing.assert_allclose(coef, want, atol=1e-12)
    assert intercept == pytest.approx(y.mean())


def test_ridge_shrinkage_monotone():
    X, y = regression_data(4)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    norms = [np.linalg.norm(linear.ridge(Z, y, lam)[2]) for lam in (0.0, 0.1, 1, 10, 100, 1e4)]
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_lasso_above_lambda_max():
    X, y = regression_data(5)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    lm = linear.lambda_max(Z, y - y.mean())
    m = fit(ModelSpec("lasso", {"lam": lm * 1.001}), X, y)
    assert np.all(m.params["coef"] == 0) and m.params["intercept"] == pytest.approx(y.mean())


def test_bayesian_ridge_against_reference():
    from sklearn.linear_model import BayesianRidge

    X, y = regression_data(6, n=200)
    m = fit(ModelSpec("bayesian_ridge"), X, y)
    ref = BayesianRidge(max_iter=300, tol=1e-6).fit(X, y)
    np.testing.assert_allclose(m.params["coef"], ref.coef_, rtol=1e-4, atol=1e-6)
    assert m.params["alpha"] == pytest.approx(ref.alpha_, rel=1e-3)


@pytest.mark.parametrize("family", LINEAR_FAMILIES)
def test_row_permutation_leaves_coefficients(family):
    X, y = regression_data(7)
    perm = np.random.default_rng(0).permutation(len(y))
    a = fit(ModelSpec(family), X, y)
    b = fit(ModelSpec(family), X[perm], y[perm])
    np.testing.assert_allclose(b.params["coef"], a.params["coef"], rtol=1e-10, atol=1e-10)


# -- tree families ---------------------------------------------------------------------

def test_cart_without_splits_predicts_mean():
    X, y = regression_data(8, n=8)
    m = fit(ModelSpec("cart", {"min_leaf": 5}), X, y)
    assert m.params["tree"].n_splits == 0
    np.testing.assert_allclose(predict(m, X), y.mean(), rtol=1e-14)


def test_cart_piecewise_constant():
    X, y = regression_data(9, n=300)
    m = fit(ModelSpec("cart", {"max_depth": 4, "min_leaf": 3}), X, y)
    assert np.unique(predict(m, X)).size <= m.params["tree"].n_leaves


def test_cart_against_exhaustive_stump_oracle():
    r = np.random.default_rng(10)
    X = r.normal(size=(40, 3))
    y = r.normal(size=40)
    tree = fit_tree(X, y, max_depth=1, min_leaf=1)
    best = (np.inf, None, None)
    for j in range(3):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            left = X[:, j] <= t
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            if sse < best[0] - 1e-12:
                best = (sse, j, t)
    pred = tree.predict(X)
    left = X[:, best[1]] <= best[2]
    np.testing.assert_allclose(pred[left], y[left].mean())
    np.testing.assert_allclose(pred[~left], y[~left].mean())


def test_forest_single_full_tree_equals_cart():
    X, y = regression_data(11, n=150)
    hp = {"max_depth": 5, "min_leaf": 3}
    rf = fit(ModelSpec("random_forest", {"n_trees": 1, "mtry": "all", "bootstrap": False, **hp}), X, y)
    cart = fit(ModelSpec("cart", hp), X, y)
    Xt, _ = regression_data(12, n=60)
    assert np.array_equal(predict(rf, Xt), predict(cart, Xt))


def test_forest_tree_streams_are_prefix_stable():
    X, y = regression_data(13, n=100)
    small = fit(ModelSpec("random_forest", {"n_trees": 3}, seed=4), X, y).params["trees"]
    big = fit(ModelSpec("random_forest", {"n_trees": 6}, seed=4), X, y).params["trees"]
    for a, b in zip(small, big):
        assert a.to_dict() == b.to_dict()


def test_boosting_initial_prediction_is_mean():
    X, y = regression_data(14)
    m = fit(ModelSpec("gradient_boosting", {"n_stages": 0}), X, y)
    assert np.all(predict(m, X) == m.params["init"]) and m.params["init"] == pytest.approx(y.mean())


@settings(max_examples=20)
@given(st.integers(0, 10**6), st.sampled_from([0.05, 0.1, 0.5, 1.0]), st.integers(1, 4))
def test_boosting_train_mse_non_increasing(seed, lr, depth):
    X, y = regression_data(seed, n=80, q=4)
    m = fit(ModelSpec("gradient_boosting",
                      {"n_stages": 40, "learning_rate": lr, "max_depth": depth}), X, y)
    mse = np.asarray(m.diagnostics["train_mse"])
    assert np.all(np.diff(mse) <= 0)
    final = np.mean((predict(m, X) - y) ** 2)
    assert final == pytest.approx(mse[-1], rel=1e-9, abs=1e-12)


def test_adaboost_single_learner_equals_base():
    X, y = regression_data(15)
    m = fit(ModelSpec("adaboost_r2", {"n_learners": 1}, seed=2), X, y)
    tree = m.params["trees"][0]
    assert np.array_equal(predict(m, X), tree.predict(np.ascontiguousarray(X)))


def test_adaboost_weighted_median_oracle():
    X, y = regression_data(16, n=90)
    m = fit(ModelSpec("adaboost_r2", {"n_learners": 7}, seed=1), X, y)
    preds = np.array([t.predict(np.ascontiguousarray(X)) for t in m.params["trees"]])
    w = np.asarray(m.params["weights"])
    got = predict(m, X)
    for i in range(0, 90, 9):
        order = np.argsort(preds[:, i], kind="stable")
        cum = np.cumsum(w[order])
        k = int(np.searchsorted(cum, 0.5 * cum[-1]))
        assert got[i] == preds[order[k], i]


def test_importances_and_linear_error():
    X, y = regression_data(17)
    stump = fit(ModelSpec("cart", {"max_depth": 1, "min_leaf": 1}), X, y)
    imp = tree_importances(stump)
    assert imp.max() == 1.0 and imp.sum() == 1.0
    gb = fit(ModelSpec("gradient_boosting", {"n_stages": 20}), X, y)
    assert tree_importances(gb).sum() == pytest.approx(1.0)
    lin = fit(ModelSpec("ridge"), X, y)
    with pytest.raises(NotTreeModelError, match="coefficient"):
        tree_importances(lin)
    assert coefficient_magnitudes(lin).shape == (X.shape[1],)


# -- prediction contract ---------------------------------------------------------------

def test_predict_by_name_any_order():
    X, y = regression_data(18)
    names = [f"f{j}" for j in range(X.shape[1])]
    m = fit(ModelSpec("gradient_boosting", {"n_stages": 10}), X, y, names)
    perm = np.array([3, 0, 5, 1, 4, 2])
    a = predict(m, X, names)
    b = predict(m, X[:, perm], [names[j] for j in perm])
    assert np.array_equal(a, b)
    with pytest.raises(DataError, match="missing"):
        predict(m, X, names[:-1] + ["other"])


@pytest.mark.parametrize("family", FAMILIES)
def test_reproducible_and_json_round_trip(family, tmp_path):
    X, y = regression_data(19, n=100)
    hp = {"n_trees": 10} if family == "random_forest" else {}
    a = fit(ModelSpec(family, hp, seed=3), X, y)
    b = fit(ModelSpec(family, hp, seed=3), X, y)
    assert np.array_equal(predict(a, X), predict(b, X))
    a.save(tmp_path / "m.json")
    back = TrainedModel.load(tmp_path / "m.json")
    assert np.array_equal(predict(back, X), predict(a, X))
    assert json.loads((tmp_path / "m.json").read_text())["format_version"] == 1


def test_unknown_format_version():
    with pytest.raises(DataError):
        TrainedModel.from_dict({"format_version": 99})


# -- grids -----------------------------------------------------------------------------

def test_grid_sizes():
    assert len(default_grid("gradient_boosting")) == 8
    assert len(default_grid("ols")) == 1
    assert len(default_grid("ridge")) == 4
    assert len(default_grid("lasso")) == 20
    assert len(default_grid("cart")) == 6
    assert len(default_grid("random_forest")) == 2
    assert len(default_grid("adaboost_r2")) == 2


@pytest.mark.parametrize("family", FAMILIES)
def test_every_grid_point_fits(family):
    r = np.random.default_rng(20)
    X = r.normal(size=(100, 10))
    y = X[:, 0] - X[:, 1] + r.normal(size=100)
    for hp in default_grid(family):
        if family == "random_forest":
            hp = {**hp, "n_trees": 5}
        m = fit(ModelSpec(family, hp, seed=1), X, y)
        assert np.all(np.isfinite(predict(m, X)))


def test_twelve_model_entries():
    assert len(DEFAULT_MODEL_ENTRIES) == 12
    assert len({e.name for e in DEFAULT_MODEL_ENTRIES}) == 12
    assert {e.family for e in DEFAULT_MODEL_ENTRIES} == set(FAMILIES)
    assert model_entry("boosted_stumps").search_grid()[0]["max_depth"] == 1
    with pytest.raises(DataError):
        model_entry("svr")
