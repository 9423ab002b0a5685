import numpy as np
import pytest

from alpha_ewm.data import CapabilityError, ObservationTable
from alpha_ewm.dgp import (
    DgpSpec,
    cate,
    generate,
    measure_regret,
    oracle_best_policy,
    oracle_first_best,
    oracle_welfare,
    population_dual_value,
    sample_without_replacement,
    superpopulation,
    tau1,
    tau2,
)
from alpha_ewm.policy import Constant, FeatureThreshold, PolicyClassSpec
from alpha_ewm.welfare import empirical_cvar

# quadrature values of the closed-form outcome distributions
ILLUSTRATIVE_NONE_CVAR_010 = 18.673737102221633
AW_NONE_CVAR_025 = 9.011541416766166
# reported optima for AW-tau1 (alpha = 0.25) and first-best AW-tau2 (alpha = 0.5)
AW_TAU1_OPT_025 = 9.09461
AW_TAU2_FB_050 = 9.59143


def test_illustrative_zero_noise():
    t = generate(DgpSpec("illustrative", 3, 0), eps_override=0.0, x_override=[[0.5]])
    assert np.allclose(t.y0, 20.5) and np.allclose(t.y1, 21.0)
    assert np.all(t.y == np.where(t.a == 1, t.y1, t.y0))


def test_tau_examples():
    assert tau1([[1.0, 1.0, 0, 0]])[0] == 0.5
    assert tau1([[-1.0, -1.0, 0, 0]])[0] == -0.5
    assert tau2([[1.0, -1.0, 0, 0]])[0] == -0.5
    assert tau2([[0.0, 3.0, 0, 0]])[0] == 0.0
    assert cate("illustrative", [[0.6]])[0] == pytest.approx(0.0)


def test_generation_is_reproducible_and_prefix_stable():
    a = generate(DgpSpec("aw-tau2", 50, 3))
    b = generate(DgpSpec("aw_tau2", 50, 3))
    c = generate(DgpSpec("aw-tau2", 80, 3))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert np.array_equal(a.x, c.x[:50]) and np.array_equal(a.a, c.a[:50])
    assert not np.array_equal(a.x, generate(DgpSpec("aw-tau2", 50, 4)).x)


def test_spec_validation():
    with pytest.raises(ValueError):
        DgpSpec("nope", 10)
    with pytest.raises(ValueError):
        DgpSpec("illustrative", 0)


@pytest.mark.parametrize("kind", ["illustrative", "aw-tau1"])
def test_sample_moments(kind):
    n = 200_000
    t = generate(DgpSpec(kind, n, 11))
    e = 0.5 if kind == "illustrative" else 2 / 3
    assert abs(t.a.mean() - e) < 3 * np.sqrt(e * (1 - e) / n)
    if kind == "illustrative":
        assert abs(t.x.mean() - 0.5) < 3 * np.sqrt(1 / 12 / n)
        # E[Y0] = 20.5, Var[Y0] = 1/12 + 1
        assert abs(t.y0.mean() - 20.5) < 3 * np.sqrt((1 + 1 / 12) / n)
    else:
        assert np.all(np.abs(t.x.mean(axis=0)) < 3 / np.sqrt(n))
        assert np.all(np.abs(t.x.std(axis=0) - 1) < 0.01)


def test_cvar_monotone_in_alpha():
    t = superpopulation("illustrative", 100_000, seed=1)
    vals = [oracle_welfare(t, Constant(1), a) for a in (0.05, 0.1, 0.3, 0.6, 1.0)]
    assert vals == sorted(vals)


def test_treat_none_matches_quadrature():
    t = superpopulation("illustrative", 1_000_000, seed=3)
    assert oracle_welfare(t, Constant(0), 0.1) == pytest.approx(ILLUSTRATIVE_NONE_CVAR_010, abs=0.01)
    aw = superpopulation("aw-tau1", 1_000_000, seed=3)
    assert empirical_cvar(aw.y0, 0.25) == pytest.approx(AW_NONE_CVAR_025, abs=0.01)


def test_observed_only_table_rejects_oracles():
    t = ObservationTable(x=np.zeros((4, 1)), y=np.arange(4.0), a=np.array([0, 1, 0, 1]))
    with pytest.raises(CapabilityError):
        oracle_welfare(t, Constant(1), 0.5)


def test_regret_of_treat_none_is_positive():
    pop = superpopulation("aw-tau1", 100_000, seed=8)
    cls = PolicyClassSpec.linear()
    from alpha_ewm.optimize import SaConfig

    cfg = SaConfig(iterations=600, restarts=3)
    regret = measure_regret(pop, Constant(0), cls, 0.25, cfg)
    assert regret == pytest.approx(AW_TAU1_OPT_025 - AW_NONE_CVAR_025, abs=0.03)
    best = oracle_best_policy(pop, cls, 0.25, sa_config=cfg)
    assert measure_regret(pop, best.policy, cls, 0.25, cfg) == pytest.approx(0.0, abs=1e-3)


def test_threshold_oracle_and_sampling():
    pop = superpopulation("illustrative", 100_000, seed=2)
    spec = PolicyClassSpec.threshold(0, (0.0, 1.0))
    best = oracle_best_policy(pop, spec, 1.0 - 1e-12, criterion="mean")
    # mean-optimal cutoff is where CATE changes sign
    assert best.policy.cutoff == pytest.approx(0.6, abs=0.02)
    s = sample_without_replacement(pop, 500, 1)
    assert s.n == 500 and len(np.unique(s.x[:, 0])) == 500


def test_first_best_degenerate_and_boundary():
    t = generate(DgpSpec("illustrative", 20_000, 6))
    rule, value, eta = oracle_first_best(t, 0.999999, np.array([40.0]))
    # with eta above every outcome the dual is the mean, so the rule follows the CATE sign
    x = np.linspace(0, 1, 11)[:, None]
    d = rule.decide_many(x)
    assert d[:5].all() and not d[7:].any()
    assert value == pytest.approx(oracle_welfare(t, rule.decide_many(t.x), 0.999999))
    with pytest.raises(ValueError):
        oracle_first_best(t, 0.5, [])


@pytest.mark.slow
def test_first_best_tau2_dominates_reported_value():
    pop = superpopulation("aw-tau2", 1_000_000)
    _, value, _ = oracle_first_best(pop, 0.5, np.linspace(9.0, 10.5, 31))
    assert value >= AW_TAU2_FB_050 - 0.01


def test_population_dual_value_treat_none():
    # at the 0.25 quantile of Y0 the dual equals the CVaR
    val, se = population_dual_value("aw-tau1", Constant(0), 0.25, 9.6716, draws=2_000_000)
    assert val == pytest.approx(AW_NONE_CVAR_025, abs=max(5 * se, 0.002))


def test_threshold_rule_decides_on_cutoff():
    t = superpopulation("illustrative", 1000, seed=0)
    pi = FeatureThreshold(0, 0.6).decide_many(t.x)
    assert np.array_equal(pi, (t.x[:, 0] <= 0.6).astype(np.int8))
