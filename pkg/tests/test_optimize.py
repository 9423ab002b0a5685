import numpy as np
import pytest

from alpha_ewm.dgp import DgpSpec, generate, oracle_best_policy, superpopulation
from alpha_ewm.nuisance import NuisanceConfig, fit_nuisance
from alpha_ewm.optimize import SaConfig, evaluate_policy, learn_policy, simulated_annealing
from alpha_ewm.policy import Constant, LinearHalfSpace, PolicyClassSpec, decide
from alpha_ewm.welfare import ProfiledCriterion, estimate_W

FAST = SaConfig(iterations=400, restarts=2)


def test_sa_finds_parabola_peak():
    res = simulated_annealing(lambda v: -((v[0] - 0.3) ** 2), np.array([2.0]), SaConfig(iterations=2000, restarts=2, seed=1))
    assert abs(res.x[0] - 0.3) < 0.01
    assert res.trace == sorted(res.trace)


def test_sa_constant_objective_returns_finite():
    res = simulated_annealing(lambda v: 7.0, np.zeros(3), SaConfig(iterations=50, restarts=1))
    assert res.value == 7.0 and np.all(np.isfinite(res.x))


def test_sa_skips_nonfinite_candidates():
    def f(v):
        if v[0] > 0.5:
            return float("nan")
        return -abs(v[0])

    res = simulated_annealing(f, np.array([0.0]), SaConfig(iterations=200, restarts=1, step_scale=1.0))
    assert res.rejected_nonfinite > 0 and res.value == pytest.approx(0.0, abs=1e-3)


def test_sa_config_validation():
    with pytest.raises(ValueError):
        SaConfig(cooling_rate=1.0)
    with pytest.raises(ValueError):
        SaConfig(iterations=0)


@pytest.fixture(scope="module")
def aw():
    t = generate(DgpSpec("aw-tau1", 400, 21))
    return t, fit_nuisance(t, NuisanceConfig())


def test_learned_beats_constants_and_is_deterministic(aw):
    t, nu = aw
    fit = learn_policy(t, 0.25, PolicyClassSpec.linear(), sa_config=FAST, nuisance=nu)
    for c in (0, 1):
        assert fit.W_hat >= estimate_W(t, Constant(c), nu, 0.25).W_hat - 1e-12
    again = learn_policy(t, 0.25, PolicyClassSpec.linear(), sa_config=FAST, nuisance=nu)
    assert again.policy == fit.policy and again.W_hat == fit.W_hat
    assert isinstance(fit.policy, LinearHalfSpace)
    assert fit.alpha == 0.25 and 0.0 <= fit.treated_fraction <= 1.0
    assert fit.W_hat == pytest.approx(fit.scores.mean, abs=1e-12)


def test_eta_is_profiled_exactly(aw):
    t, nu = aw
    fit = learn_policy(t, 0.3, PolicyClassSpec.linear(), sa_config=FAST, nuisance=nu)
    crit = ProfiledCriterion(t, nu, 0.3)
    pi = decide(fit.policy, t.x)
    vals = crit.values(pi)
    assert vals.max() <= fit.W_hat + 1e-12
    fine = np.linspace(crit.interval.lo, crit.interval.hi, 2001)
    assert max(crit.value_at(pi, e) for e in fine) <= fit.W_hat + 1e-10


def test_joint_mode_lands_near_profiled(aw):
    t, nu = aw
    prof = learn_policy(t, 0.25, PolicyClassSpec.linear(), sa_config=FAST, nuisance=nu)
    joint = learn_policy(t, 0.25, PolicyClassSpec.linear(), sa_config=FAST, nuisance=nu, mode="joint")
    # the reported value always profiles eta exactly, so both are valid sample values
    assert np.isfinite(joint.W_hat)
    assert abs(joint.W_hat - prof.W_hat) < 0.3
    with pytest.raises(ValueError):
        learn_policy(t, 0.25, PolicyClassSpec.linear(), nuisance=nu, mode="greedy")


def test_constant_class(aw):
    t, nu = aw
    fit = learn_policy(t, 0.25, PolicyClassSpec.constant_pair(), nuisance=nu)
    vals = [estimate_W(t, Constant(c), nu, 0.25).W_hat for c in (0, 1)]
    assert fit.W_hat == max(vals)


def test_learner_rejects_bad_inputs(aw):
    t, _ = aw
    with pytest.raises(ValueError):
        learn_policy(t, 1.0, PolicyClassSpec.linear())
    with pytest.raises(ValueError):
        learn_policy(t.subset(np.arange(3)), 0.5, PolicyClassSpec.linear())


def test_threshold_learner_tracks_oracle_cutoff():
    t = generate(DgpSpec("illustrative", 5000, 2))
    spec = PolicyClassSpec.threshold(0, (0.0, 1.0))
    fit = learn_policy(t, 0.5, spec)
    pop = superpopulation("illustrative", 200_000, seed=5)
    oracle = oracle_best_policy(pop, spec, 0.5)
    assert abs(fit.policy.cutoff - oracle.policy.cutoff) < 0.1


def test_evaluate_policy_reports(aw):
    t, nu = aw
    alphas = [0.1, 0.25, 0.5, 0.75, 0.9]
    rule = LinearHalfSpace((0.1, 1.0, 1.0, 0.0, 0.0))
    reps = evaluate_policy(t, rule, alphas, nuisance=nu)
    assert [r.alpha for r in reps] == alphas
    for r in reps:
        assert r.wald_lo <= r.W_hat <= r.wald_hi and r.se > 0
    again = evaluate_policy(t, rule, alphas, nuisance=nu)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in reps]
