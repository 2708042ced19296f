import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edmri.errors import DegenerateInputError
from edmri.explain import (
    coalition_values, explain_instance, format_mean_sd, modality_share, shapley_exact,
    shapley_sampled, summarize,
)


def brute_shapley(f, x, bg):
    d = x.size

    def v(S):
        Z = bg.copy()
        Z[:, list(S)] = x[list(S)]
        return f(Z).mean()

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for k in range(d):
            for S in itertools.combinations(others, k):
                w = math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d)
                phi[i] += w * (v(S + (i,)) - v(S))
    return phi


def _model(W):
    return lambda Z: np.tanh(Z @ W) + 0.2 * Z[:, 0] * Z[:, -1]


def test_exact_matches_brute_force(rng):
    W = rng.normal(size=5)
    bg, x = rng.normal(size=(7, 5)), rng.normal(size=5)
    rep = shapley_exact(_model(W), x, bg)
    assert np.max(np.abs(rep.values - brute_shapley(_model(W), x, bg))) < 1e-12
    assert abs(rep.efficiency_residual) < 1e-12


def test_linear_closed_form_single_row_background(rng):
    w = rng.normal(size=6)
    b0, x = rng.normal(size=(1, 6)), rng.normal(size=6)
    rep = shapley_exact(lambda Z: Z @ w + 0.7, x, b0)
    assert np.max(np.abs(rep.values - w * (x - b0[0]))) < 1e-12


def test_axioms(rng):
    x, bg = rng.normal(size=4), rng.normal(size=(5, 4))
    null = shapley_exact(lambda Z: 2 * Z[:, 0] + Z[:, 2], x, bg)
    assert null.values[1] == 0.0 and null.values[3] == 0.0
    xs = np.array([1.0, 1.0])
    sym = shapley_exact(lambda Z: Z[:, 0] + Z[:, 1] + Z[:, 0] * Z[:, 1], xs, np.zeros((1, 2)))
    assert sym.values[0] == sym.values[1]
    const = shapley_exact(lambda Z: np.full(len(Z), 3.0), x, bg)
    assert np.all(const.values == 0)
    const_s = shapley_sampled(lambda Z: np.full(len(Z), 3.0), x, bg, 50)
    assert np.all(const_s.values == 0)


def test_coalition_values_endpoints(rng):
    W = rng.normal(size=3)
    x, bg = rng.normal(size=3), rng.normal(size=(4, 3))
    v = coalition_values(_model(W), x, bg)
    assert v[0] == pytest.approx(_model(W)(bg).mean())
    assert v[-1] == pytest.approx(_model(W)(x[None])[0])


def test_exact_rejects_large_d(rng):
    with pytest.raises(ValueError, match="sampled"):
        shapley_exact(lambda Z: Z.sum(1), np.zeros(16), np.zeros((2, 16)))
    assert explain_instance(lambda Z: Z.sum(1), np.ones(16), np.zeros((2, 16)), n_permutations=20).method == "sampled"


def test_sampled_converges_and_is_deterministic(rng):
    W = rng.normal(size=8)
    bg, x = rng.normal(size=(20, 8)), rng.normal(size=8)
    exact = shapley_exact(_model(W), x, bg)
    a = shapley_sampled(_model(W), x, bg, 20_000, np.random.default_rng(3))
    b = shapley_sampled(_model(W), x, bg, 20_000, np.random.default_rng(3))
    assert np.array_equal(a.values, b.values)
    assert np.max(np.abs(a.values - exact.values)) < 0.02
    assert a.values.sum() == pytest.approx(a.prediction - a.base_value, abs=1e-12)
    assert a.residual_redistributed


@given(st.integers(1, 7), st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_efficiency_property(d, seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=d)
    rep = shapley_exact(_model(W), rng.normal(size=d), rng.normal(size=(4, d)))
    assert abs(rep.values.sum() - (rep.prediction - rep.base_value)) < 1e-9


def test_modality_share_examples():
    part = {"imaging": [0, 1], "clinical": [2, 3]}
    assert modality_share([0, 0, 0.3, -0.1], part) == {"imaging": 0.0, "clinical": 1.0}
    assert modality_share([0.2, -0.3, 0.5, 0.0], part) == {"imaging": 0.5, "clinical": 0.5}
    signed = modality_share([0.3, 0.1, -0.1, 0.1], part, signed=True)
    assert signed == {"imaging": pytest.approx(1.0), "clinical": pytest.approx(0.0)}
    with pytest.raises(DegenerateInputError):
        modality_share([0, 0, 0, 0], part)
    with pytest.raises(ValueError):
        modality_share([1, 1, 1, 1], {"a": [0, 1]})


def test_summary_and_formatting(rng):
    W = rng.normal(size=3)
    bg = rng.normal(size=(4, 3))
    reps = [shapley_exact(_model(W), x, bg, feature_names=["a", "b", "c"]) for x in rng.normal(size=(5, 3))]
    s = summarize(reps, {"img": [0], "cli": [1, 2]})
    phi = np.stack([r.values for r in reps])
    assert np.allclose(s.mean, phi.mean(0)) and np.allclose(s.sd, phi.std(0, ddof=1))
    assert s.shares["img"]["mean"] + s.shares["cli"]["mean"] == pytest.approx(1.0)
    doc = s.to_dict()
    assert doc["features"][0]["name"] == "a"
    assert format_mean_sd(0.0078, 0.00384) == "0.00780 ± 0.00384"
