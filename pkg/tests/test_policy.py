import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from alpha_ewm.data import ObservationTable
from alpha_ewm.policy import (
    Constant,
    Feature,
    FeatureThreshold,
    LinearHalfSpace,
    PolicyClassSpec,
    canonicalize,
    decide,
    describe,
    normalize_on,
    policy_from_json,
    policy_to_json,
    treated_fraction,
)


def test_decide_examples():
    assert decide(Constant(1), [0.3]) == 1
    assert decide(LinearHalfSpace((-0.5, 1.0)), [1.0]) == 1
    assert decide(FeatureThreshold(0, 0.6, "<="), [0.7]) == 0
    assert decide(FeatureThreshold(0, 0.6, ">"), [0.7]) == 1


def test_zero_score_goes_to_control():
    assert decide(LinearHalfSpace((-1.0, 1.0)), [1.0]) == 0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        decide(LinearHalfSpace((0.0, 1.0, 1.0)), [1.0])
    with pytest.raises(ValueError):
        decide(FeatureThreshold(2, 0.0), [1.0, 2.0])


def test_invalid_rules():
    with pytest.raises(ValueError):
        LinearHalfSpace((0.0, 0.0))
    with pytest.raises(ValueError):
        LinearHalfSpace((np.inf, 1.0))
    with pytest.raises(ValueError):
        Constant(2)


@pytest.mark.parametrize("beta,expected", [((2, 0), (1, 0)), ((0, -3), (0, -1)), ((3, 4), (0.6, 0.8))])
def test_canonicalize_examples(beta, expected):
    assert np.allclose(canonicalize(LinearHalfSpace(beta)).beta, expected)


def test_treated_fraction_examples():
    x = np.linspace(0, 1, 11)[:, None]
    t = ObservationTable(x=x, y=np.zeros(11), a=np.zeros(11, dtype=int))
    assert treated_fraction(Constant(1), t) == 1.0
    assert treated_fraction(Constant(0), t) == 0.0
    assert treated_fraction(FeatureThreshold(0, float(x.max())), t) == 1.0


def test_transformed_features():
    feats = (Feature(0), Feature(0, "square"), Feature(0, "cube"))
    rule = LinearHalfSpace((0.0, 0.0, 1.0, -1.0), feats)
    # x^2 - x^3 > 0 iff x < 1 (x != 0)
    assert decide(rule, [0.5]) == 1 and decide(rule, [2.0]) == 0
    assert "x1^2" in describe(rule)
    with pytest.raises(ValueError):
        Feature(0, "log")


def test_normalize_on_keeps_boundary():
    r = LinearHalfSpace((1.0, -4.0, 2.0))
    s = normalize_on(r, 1)
    assert abs(s.beta[1]) == 1.0
    x = np.random.default_rng(0).normal(size=(200, 2))
    assert np.array_equal(decide(r, x), decide(s, x))


@pytest.mark.parametrize(
    "rule",
    [Constant(0), FeatureThreshold(1, 0.25, ">"), LinearHalfSpace((0.1, -2.0)), LinearHalfSpace((1.0, 2.0), (Feature(0, "cube"),))],
)
def test_json_round_trip(rule):
    assert policy_from_json(policy_to_json(rule)) == rule


def test_class_spec_validation():
    with pytest.raises(ValueError):
        PolicyClassSpec("tree")
    with pytest.raises(ValueError):
        PolicyClassSpec.threshold(0, (1.0, 1.0))
    spec = PolicyClassSpec.linear((Feature(0), Feature(0, "square")))
    assert PolicyClassSpec.from_dict(spec.to_dict()) == spec
    assert len(PolicyClassSpec.linear().resolved_features(3)) == 3


@settings(max_examples=500)
@given(
    beta=hnp.arrays(np.float64, 4, elements=st.floats(-10, 10)).filter(lambda b: np.abs(b).max() > 1e-300),  # scaling a subnormal beta can underflow to zero
    scale=st.floats(1e-3, 1e3),
    x=hnp.arrays(np.float64, (20, 3), elements=st.floats(-5, 5)),
)
def test_decision_invariant_under_positive_scaling(beta, scale, x):
    rule = LinearHalfSpace(tuple(beta))
    raw = rule.score(x)
    keep = np.abs(raw) > 1e-9 * (1 + np.abs(beta).sum() * 5)
    scaled = LinearHalfSpace(tuple(scale * beta))
    canon = canonicalize(rule)
    assert np.array_equal(decide(rule, x)[keep], decide(scaled, x)[keep])
    assert np.array_equal(decide(rule, x)[keep], decide(canon, x)[keep])
    assert abs(np.linalg.norm(canon.beta) - 1) < 1e-12


def test_canonicalize_subnormal_beta():
    rule = LinearHalfSpace((5e-324, -5e-324, 1e-323))
    canon = canonicalize(rule)
    assert abs(np.linalg.norm(canon.beta) - 1) < 1e-12
    x = np.array([[3.0, 0.0], [0.0, -7.0], [1.0, 1.0]])
    assert np.array_equal(decide(rule, x), decide(canon, x))
