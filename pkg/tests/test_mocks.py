from __future__ import annotations

import numpy as np
import pytest

from seqscm.mocks import shipped_fixtures, shifted_effect_cpt, tabulate
from seqscm.sampling import Intervention, exact_interventional, exact_joint
from seqscm.scorers import TabularScoreTable, TabularScorer, load_scorer
from seqscm.spec_format import bundled_path, bundled_spec, instantiate_variation, sample_variations

from conftest import toy_model


@pytest.fixture(scope="module")
def recipes():
    return shipped_fixtures()


@pytest.mark.parametrize("name", ["marathon_g1_confounder", "marathon_g2_collider", "signflip", "signflip_plus",
                                  "signflip_minus", "breast_cancer_roots"])
def test_shipped_tables_match_recipes(recipes, name):
    shipped = TabularScoreTable.load(bundled_path(f"mocks/{name}.table.json"))
    assert shipped.entries == recipes[name].entries
    assert shipped.default == recipes[name].default


def _contrasts(scm, t="t", y="y"):
    joint = exact_joint(scm)
    ty = joint.marginal([t, y])
    observational = ty[1, 1] / ty[1].sum() - ty[0, 1] / ty[0].sum()
    ate = (exact_interventional(scm, Intervention(t, 1)).marginal([y])[1]
           - exact_interventional(scm, Intervention(t, 0)).marginal([y])[1])
    return observational, ate


def test_signflip_oracle(flip):
    observational, ate = _contrasts(flip)
    assert ate == pytest.approx(0.1, abs=1e-12)
    assert observational == pytest.approx(-0.46, abs=1e-12)
    assert np.sign(observational) != np.sign(ate)


@pytest.mark.parametrize("mock,delta", [("signflip_plus", 0.1), ("signflip_minus", -0.1)])
def test_shifted_effect_oracle_every_variation(mock, delta):
    spec = bundled_spec("signflip")
    scorer = load_scorer(f"mock:{mock}")
    for vid in sample_variations(spec, 5, seed=1):
        _, ate = _contrasts(instantiate_variation(spec, vid, scorer))
        assert ate == pytest.approx(delta, abs=1e-12)


def test_confounded_toy_has_zero_effect_but_association(g1):
    observational, ate = _contrasts(g1, "g", "m")
    assert ate == pytest.approx(0.0, abs=1e-12)
    assert observational > 0.3


def test_collider_toy_is_null(g2):
    observational, ate = _contrasts(g2, "g", "m")
    assert ate == pytest.approx(0.0, abs=1e-12)
    assert observational == pytest.approx(0.0, abs=1e-12)


def test_breast_cancer_root_skew():
    scm = toy_model("breast_cancer", "breast_cancer_roots", variation=(3,) + (0,) * 13)
    dist = scm.scorer.score_candidates("", scm.variables["u1"].space)
    w = np.exp(np.array(dist))
    np.testing.assert_allclose(w / w.sum(), np.array([1, 2, 3, 4, 4, 3, 2]) / 19)


def test_conflicting_weights_rejected():
    spec = bundled_spec("signflip")
    calls = iter(range(10**6))
    with pytest.raises(ValueError, match="conflicting"):
        tabulate(spec, lambda name, pa: [1.0, 1.0 + next(calls)] if name == "u" else None)


def test_wrong_width_rejected():
    with pytest.raises(ValueError, match="expected"):
        tabulate(bundled_spec("signflip"), lambda name, pa: [1.0])


def test_shifted_effect_rejects_nothing_for_small_delta():
    table = tabulate(bundled_spec("signflip"), shifted_effect_cpt(0.05), variations=[(0, 0, 0)])
    scm = instantiate_variation(bundled_spec("signflip"), (0, 0, 0), TabularScorer(table))
    _, ate = _contrasts(scm)
    assert ate == pytest.approx(0.05, abs=1e-12)
