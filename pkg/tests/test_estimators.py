from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqscm.benchmark import (
    BenchmarkDataset,
    OutcomeTarget,
    PotentialOutcomeRecord,
    generate_dataset,
    ite_vector,
    observational_contrast,
    restrict_covariates,
    sate,
)
from seqscm.errors import EmptyArmError, SingleArmError, ValidationError
from seqscm.estimators import (
    ESTIMATORS,
    estimate,
    fit_adjusted_ols,
    fit_linear_s,
    fit_linear_t,
    fit_t_only_ols,
    get_estimator,
    ols,
    one_hot,
)
from seqscm.metrics import r2
from seqscm.sampling import Intervention, exact_interventional

from conftest import make_model

P1 = OutcomeTarget("p", 1)


def dataset(t, v, X=None, v_arms=None):
    """Dataset whose ``p:1`` outcome equals ``v`` (each entry must lie in [0, 1])."""
    t = np.asarray(t, dtype=int)
    v = np.asarray(v, dtype=float)
    X = np.zeros((len(t), 0), dtype=int) if X is None else np.asarray(X, dtype=int).reshape(len(t), -1)
    v_arms = np.column_stack([v, v]) if v_arms is None else np.asarray(v_arms, dtype=float)
    names = tuple(f"x{j}" for j in range(X.shape[1]))
    records = []
    for i in range(len(t)):
        p_arms = tuple((1 - v_arms[i, a], v_arms[i, a]) for a in range(2))
        p_arms = tuple(p_arms[a] if a != t[i] else (1 - v[i], v[i]) for a in range(2))
        records.append(PotentialOutcomeRecord(i, tuple(int(x) for x in X[i]), int(t[i]), 0, p_arms[t[i]],
                                              (0, 0), p_arms, 0))
    cards = {"t": 2, "y": 2, **{n: int(X[:, j].max()) + 1 for j, n in enumerate(names)}}
    return BenchmarkDataset("toy", (0,), "mock", 0, "t", "y", names, cards, tuple(records))


# ---------------------------------------------------------------- ols core


def test_ols_recovers_exact_line():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    fit = ols(X, 2 + 3 * np.arange(5.0))
    np.testing.assert_allclose(fit.coef, [2, 3], atol=1e-12)
    assert not fit.ridge


def test_ols_matches_lstsq():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 3))])
    y = rng.normal(size=200)
    np.testing.assert_allclose(ols(X, y).coef, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)


@pytest.mark.parametrize("X", [
    np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)]),  # collinear
    np.ones((2, 4)),  # n < d
])
def test_ridge_fallback(X):
    fit = ols(X, np.arange(float(len(X))))
    assert fit.ridge
    assert np.all(np.isfinite(fit.coef))


def test_one_hot_drops_first_level():
    mat, labels, levels = one_hot(np.array([[2], [0], [1], [0]]), ["w"])
    assert labels == ("w=1", "w=2")
    np.testing.assert_array_equal(mat, [[0, 1], [0, 0], [1, 0], [0, 0]])
    mat2, _, _ = one_hot(np.array([[1]]), ["w"], levels)
    np.testing.assert_array_equal(mat2, [[1, 0]])


# ---------------------------------------------------------------- t-only


def test_mean_difference_example():
    out = fit_t_only_ols(dataset([0, 0, 1, 1], [0, 0, 1, 1]), P1)
    assert out.ate == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=4, max_size=60))
def test_t_only_is_difference_in_means(rows):
    t = np.array([r[0] for r in rows])
    v = np.array([r[1] for r in rows])
    if t.min() == t.max():
        return
    out = fit_t_only_ols(dataset(t, v), P1)
    assert out.ate == pytest.approx(v[t == 1].mean() - v[t == 0].mean(), abs=1e-10)


def test_null_effect_within_three_se():
    rng = np.random.default_rng(3)
    t = rng.integers(0, 2, 5000)
    v = rng.uniform(0, 1, 5000)
    out = fit_t_only_ols(dataset(t, v), P1)
    assert abs(out.ate) <= 3 * out.diagnostics["stderr"]


def test_no_covariates_adjusted_equals_t_only():
    rng = np.random.default_rng(4)
    ds = dataset(rng.integers(0, 2, 100), rng.uniform(size=100))
    a, b = fit_adjusted_ols(ds, P1), fit_t_only_ols(ds, P1)
    assert a.ate == b.ate
    np.testing.assert_array_equal(a.cate, b.cate)


def test_confounded_bias_sign(flip):
    ds = generate_dataset(flip, 2000, seed=8)
    out = fit_t_only_ols(ds, P1)
    oracle = (exact_interventional(flip, Intervention("t", 1)).marginal(["y"])[1]
              - exact_interventional(flip, Intervention("t", 0)).marginal(["y"])[1])
    assert out.ate == pytest.approx(observational_contrast(ds, P1), abs=1e-10)
    assert out.ate < 0 < oracle
    adjusted = fit_adjusted_ols(ds, P1)
    assert abs(adjusted.ate - oracle) < abs(out.ate - oracle)


# ---------------------------------------------------------------- adjustment on toy graphs


def test_confounder_adjustment_helps(g1):
    ds = restrict_covariates(generate_dataset(g1, 2000, seed=1), ["w"])
    truth = sate(ds, P1)
    assert abs(fit_adjusted_ols(ds, P1).ate - truth) < abs(fit_t_only_ols(ds, P1).ate - truth)


def test_collider_adjustment_does_not_help(g2):
    ds = restrict_covariates(generate_dataset(g2, 2000, seed=1), ["w"])
    truth = sate(ds, P1)
    naive, adjusted = fit_t_only_ols(ds, P1), fit_adjusted_ols(ds, P1)
    assert abs(adjusted.ate - truth) >= abs(naive.ate - truth) - naive.diagnostics["stderr"]


# ---------------------------------------------------------------- S- and T-learners


def _hetero_model(seed=0):
    """x is a fair coin, t depends on x, and y = t * x up to 1e-9 noise."""
    eps = 1e-9

    def cpt(name, pa):
        if name == "x":
            return [0.5, 0.5]
        if name == "t":
            return [0.6, 0.4] if pa["x"] else [0.3, 0.7]
        return [eps, 1 - eps] if pa["t"] and pa["x"] else [1 - eps, eps]

    return make_model([("x", "exogenous", 2), ("t", "endogenous", 2), ("y", "endogenous", 2)],
                      [("x", "t"), ("x", "y"), ("t", "y")], cpt, seed=seed)


@pytest.fixture(scope="module")
def hetero():
    return generate_dataset(_hetero_model(), 5000, seed=2)


def test_linear_s_equals_adjusted(hetero):
    s, lin = fit_linear_s(hetero, P1), fit_adjusted_ols(hetero, P1)
    assert s.ate == lin.ate
    assert np.ptp(s.cate) == 0.0
    assert s.method == "linear_s"


def test_linear_s_r2_nonpositive_on_heterogeneous_truth(hetero):
    truth = ite_vector(hetero, P1)
    assert np.var(truth) > 0.1
    assert r2(fit_linear_s(hetero, P1).cate, truth) <= 0.0


@pytest.mark.parametrize("target", [P1, OutcomeTarget("cat", 1)])
def test_t_learner_recovers_interaction(hetero, target):
    out = fit_linear_t(hetero, target)
    x = hetero.column("x")
    np.testing.assert_allclose(out.cate, x, atol=0.05)
    assert out.diagnostics["d"] == 2


def test_t_learner_null_heterogeneity():
    rng = np.random.default_rng(11)
    X = rng.integers(0, 3, 4000)
    t = rng.integers(0, 2, 4000)
    v = np.clip(0.2 + 0.2 * X + rng.normal(0, 0.05, 4000), 0, 1)
    out = fit_linear_t(dataset(t, v, X), P1)
    assert np.all(np.abs(out.cate) <= 3 * out.diagnostics["stderr"] + 0.02)


@pytest.mark.parametrize("method", sorted(ESTIMATORS))
def test_shift_invariance(method):
    rng = np.random.default_rng(5)
    X = rng.integers(0, 3, (300, 2))
    t = rng.integers(0, 2, 300)
    v = rng.uniform(0, 0.5, 300)
    a = estimate(dataset(t, v, X), method, P1)
    b = estimate(dataset(t, v + 0.4, X), method, P1)
    np.testing.assert_allclose(a.cate, b.cate, atol=1e-10)
    assert a.ate == pytest.approx(b.ate, abs=1e-10)


@pytest.mark.parametrize("method", sorted(ESTIMATORS))
def test_deterministic(method, hetero):
    a, b = estimate(hetero, method, P1), estimate(hetero, method, P1)
    np.testing.assert_array_equal(a.cate, b.cate)
    assert len(a.cate) == len(hetero)


def test_single_arm_errors():
    ds = dataset([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(SingleArmError):
        fit_t_only_ols(ds, P1)
    with pytest.raises(EmptyArmError):
        fit_linear_t(ds, P1)
    with pytest.raises(ValidationError):
        fit_t_only_ols(ds, P1, arms=(1, 1))


def test_aliases_and_unknown():
    assert get_estimator("adjusted_ols") is fit_adjusted_ols
    assert get_estimator("t_learner") is fit_linear_t
    with pytest.raises(ValueError):
        get_estimator("forest")


def test_predictions_csv(tmp_path, hetero):
    out = fit_linear_t(hetero, P1)
    path = out.to_csv(tmp_path / "pred.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "unit_id,cate_hat"
    assert len(lines) == len(hetero) + 1
    assert float(lines[1].split(",")[1]) == out.cate[0]
