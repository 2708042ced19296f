import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edmri.cv import (
    CVPlan, SearchSpace, _assert_disjoint, cross_validate, default_space, derive_seed, fixed, loguniform,
    nested_cv, random_search, stratified_holdout, stratified_kfold,
)
from edmri.errors import ConfigurationError, LeakageError

FAST = {"max_epochs": 15, "patience": 5}


def test_kfold_examples():
    y = np.array([1] * 5 + [0] * 5)
    folds = stratified_kfold(y, 5, seed=0)
    assert [int(y[f].sum()) for f in folds] == [1] * 5
    y = np.array([1] * 6 + [0] * 5)
    pos = [int(y[f].sum()) for f in stratified_kfold(y, 5, seed=3)]
    assert set(pos) <= {1, 2} and sum(pos) == 6
    with pytest.raises(ValueError):
        stratified_kfold(np.array([1] * 5 + [0] * 20), 6)


@given(st.integers(4, 60), st.integers(4, 60), st.integers(2, 4), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_kfold_properties(n_pos, n_neg, k, seed):
    y = np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]
    folds = stratified_kfold(y, k, seed)
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(y.size))
    for f in folds:
        assert abs(y[f].sum() - n_pos / k) < 1 + 1e-9
    sizes = [f.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    again = stratified_kfold(y, k, seed)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


def test_holdout_is_stratified(rng):
    y = np.r_[np.ones(30, int), np.zeros(70, int)]
    train, hold = stratified_holdout(y, 0.2, rng)
    assert y[hold].sum() == 6 and (y[hold] == 0).sum() == 14
    assert np.intersect1d(train, hold).size == 0 and train.size + hold.size == 100


def test_random_search_examples():
    space = default_space("fusion")
    one = random_search(space, 1, np.random.default_rng(0))
    assert len(one) == 1
    a = random_search(space, 20, np.random.default_rng(5))
    b = random_search(space, 20, np.random.default_rng(5))
    assert a == b
    for cfg in a:
        for name, p in space.params.items():
            assert p.contains(cfg.params[name])
    with pytest.raises(ConfigurationError):
        random_search(SearchSpace("logreg", {}), 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        random_search(space, 0, np.random.default_rng(0))


def test_loguniform_bounds():
    p = loguniform(1e-4, 1e-1)
    rng = np.random.default_rng(0)
    draws = np.array([p.sample(rng) for _ in range(10_000)])
    assert draws.min() >= 1e-4 and draws.max() <= 1e-1
    assert np.mean(draws < 1e-3) == pytest.approx(1 / 3, abs=0.03)


def test_plan_validation():
    with pytest.raises(ValueError):
        CVPlan(outer_k=1)
    with pytest.raises(ValueError):
        CVPlan(trials=0)


def _data(rng, n=90):
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] + rng.normal(scale=0.8, size=n) > 0).astype(int)
    return X, y


def test_nested_cv_structure(rng):
    X, y = _data(rng)
    res = nested_cv(X, y, default_space("logreg", **FAST), CVPlan(3, 2, 3, seed=1))
    candidates = random_search(default_space("logreg", **FAST), 3, np.random.default_rng(derive_seed(1, 0)))
    tests = np.concatenate([f.test_indices for f in res.folds])
    assert np.array_equal(np.sort(tests), np.arange(y.size))
    for f in res.folds:
        assert np.intersect1d(f.inner_indices, f.test_indices).size == 0
        assert np.intersect1d(f.train_indices, f.test_indices).size == 0
        assert len(f.trial_scores) == 3
        assert f.config == candidates[int(np.argmax(f.trial_scores))]
    agg = res.aggregate
    for m in ("auc", "balanced_accuracy", "f1"):
        vals = [f.metrics[m] for f in res.folds]
        assert agg[m]["mean"] == float(np.mean(vals))
        assert agg[m]["sd"] == float(np.std(vals, ddof=1))
    doc = res.metrics_document()
    assert doc["plan"]["search"] == "seeded random search"
    assert [f["n_epochs"] for f in doc["folds"]] == [f.n_epochs for f in res.folds]


def test_same_folds_across_model_kinds(rng):
    X, y = _data(rng, 60)
    a = nested_cv(X, y, default_space("logreg", **FAST), CVPlan(3, 2, 2, seed=4))
    b = nested_cv(X, y, default_space("mlp", **FAST), CVPlan(3, 2, 2, seed=4))
    assert all(np.array_equal(f.test_indices, g.test_indices) for f, g in zip(a.folds, b.folds))


def test_single_trial_equals_plain_cv(rng):
    X, y = _data(rng, 60)
    res = nested_cv(X, y, default_space("logreg", **FAST), CVPlan(5, 3, 1, seed=2))
    plain = cross_validate(res.folds[0].config, X, y, k=5, seed=2)
    assert res.aggregate == plain.aggregate
    assert all(f.roc == g.roc for f, g in zip(res.folds, plain.folds))


def test_constant_model_ba_half(rng):
    X, y = _data(rng, 60)
    space = SearchSpace("logreg", {"learning_rate": fixed(0.0)}, dict(FAST))
    res = nested_cv(X, y, space, CVPlan(5, 3, 2, seed=0))
    assert all(f.metrics["balanced_accuracy"] == 0.5 for f in res.folds)


def test_strict_exclusion_keeps_fold_structure(rng):
    X, y = _data(rng, 60)
    exclude = np.zeros(60, bool)
    exclude[::7] = True
    full = nested_cv(X, y, default_space("logreg", **FAST), CVPlan(3, 2, 2, seed=9))
    strict = nested_cv(X, y, default_space("logreg", **FAST), CVPlan(3, 2, 2, seed=9), exclude=exclude)
    for f, g in zip(full.folds, strict.folds):
        assert np.array_equal(g.test_indices, f.test_indices[~exclude[f.test_indices]])
        assert not exclude[g.train_indices].any() and not exclude[g.inner_indices].any()


def test_mtl_fit_params_are_sliced(rng):
    X, y = _data(rng, 60)
    age = 60 + 5 * rng.normal(size=60)
    res = nested_cv(X, y, default_space("mtl", **FAST), CVPlan(3, 2, 2, seed=0), fit_params={"age": age})
    assert len(res.folds) == 3


def test_leakage_guard_raises():
    with pytest.raises(LeakageError):
        _assert_disjoint(np.array([1, 2, 3]), np.array([3, 4]), "demo")
    assert issubclass(LeakageError, AssertionError)
