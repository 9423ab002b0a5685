import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import alpha_ewm.nuisance as nmod
from alpha_ewm.data import FoldAssignment, ObservationTable, partition_folds
from alpha_ewm.nuisance import (
    KernelRegression,
    NuisanceConfig,
    fit_nuisance,
    fit_outcome_regression,
    fit_propensity,
    mu_plugin_identity_check,
)


def _table(n=120, seed=0, p=2, e=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    a = (rng.random(n) < e).astype(int)
    y = x[:, 0] + a * (1 - x[:, 1]) + rng.normal(size=n)
    return ObservationTable(x=x, y=y, a=a, known_propensity=e)


def test_known_propensity():
    t = _table()
    f = partition_folds(t.n, 3, 0)
    for ev in fit_propensity(t, f, "known", value=2 / 3):
        assert np.all(ev(t.x) == 2 / 3)


def test_sample_mean_propensity():
    n = 200
    a = np.zeros(n, dtype=int)
    fold_of = np.repeat([0, 1], 100)
    a[100:160] = 1  # fold 1 holds 60 treated of 100
    t = ObservationTable(x=np.zeros((n, 1)), y=np.zeros(n), a=a)
    evs = fit_propensity(t, FoldAssignment(2, fold_of), "sample_mean")
    assert evs[0](t.x[:1])[0] == pytest.approx(0.6)
    assert evs[1](t.x[:1])[0] == pytest.approx(0.0 + 0.01)


def test_all_treated_complement_is_clipped():
    n = 20
    a = np.r_[np.ones(10, int), np.zeros(10, int)]
    t = ObservationTable(x=np.zeros((n, 1)), y=np.zeros(n), a=a)
    evs = fit_propensity(t, FoldAssignment(2, np.repeat([1, 0], 10)), "logistic", kappa=0.01)
    assert evs[0](t.x[:1])[0] == pytest.approx(0.99)


def test_logistic_recovers_dependence():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4000, 1))
    a = (rng.random(4000) < 1 / (1 + np.exp(-1.5 * x[:, 0]))).astype(int)
    t = ObservationTable(x=x, y=np.zeros(4000), a=a)
    ev = fit_propensity(t, partition_folds(4000, 2, 0), "logistic")[0]
    e = ev(np.array([[-1.0], [0.0], [1.0]]))
    assert e[0] < 0.25 < 0.4 < e[1] < 0.6 < 0.75 < e[2]


def test_logistic_non_convergence_falls_back(monkeypatch):
    monkeypatch.setattr(nmod, "_logistic_newton", lambda x, a, **kw: None)
    t = _table()
    with pytest.warns(RuntimeWarning, match="did not converge"):
        evs = fit_propensity(t, partition_folds(t.n, 2, 0), "logistic")
    assert all(ev.fell_back for ev in evs)
    assert evs[0].constant == pytest.approx(t.a[partition_folds(t.n, 2, 0).complement(0)].mean())


def test_propensity_clipping_on_dense_queries():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(600, 1))
    a = (x[:, 0] > 0).astype(int)  # near separable
    a[:3] = 1 - a[:3]
    t = ObservationTable(x=x, y=np.zeros(600), a=a)
    for ev in fit_propensity(t, partition_folds(600, 2, 0), "logistic", kappa=0.05):
        e = ev(np.linspace(-50, 50, 10001)[:, None])
        assert e.min() >= 0.05 and e.max() <= 0.95


def test_single_training_point():
    reg = KernelRegression(np.array([[0.3]]), np.array([2.0]), np.array([0]))
    q = np.array([[-5.0], [0.3], [9.0]])
    assert np.allclose(reg.predict(q, 3.5), -1.5)
    assert np.allclose(reg.predict(q, 1.0), 0.0)


def test_eta_extremes():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(50, 2)), rng.normal(size=50)
    reg = KernelRegression(x, y, np.arange(50))
    q = rng.normal(size=(7, 2))
    assert np.all(reg.predict(q, y.min()) == 0.0)
    w = reg.weights(q)
    assert np.allclose(reg.predict(q, y.max() + 1), w @ y - (y.max() + 1))


def test_plugin_identity_residual():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(80, 3)), rng.normal(size=80) * 10
    reg = KernelRegression(x, y, np.arange(80))
    q = rng.normal(size=(25, 3))
    for eta in (y.min() - 1, -3.0, 0.0, 2.5, y.max() + 1):
        assert np.max(np.abs(mu_plugin_identity_check(reg, q, eta))) < 1e-12


def test_many_and_few_eta_paths_agree():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(300, 2)), rng.normal(size=300)
    reg = KernelRegression(x, y, np.arange(300))
    q = rng.normal(size=(40, 2))
    etas = np.linspace(-2, 2, 30)
    many = reg.predict(q, etas)
    few = np.column_stack([reg.predict(q, e) for e in etas])
    assert np.max(np.abs(many - few)) < 1e-12


def test_constant_covariate_is_ignored():
    x = np.column_stack([np.ones(30), np.linspace(0, 1, 30)])
    reg = KernelRegression(x, np.linspace(0, 1, 30), np.arange(30))
    assert np.all(np.isfinite(reg.predict(x, 0.5)))


def test_empty_arm_falls_back_to_complement():
    n = 10
    a = np.r_[np.ones(5, int), np.zeros(5, int)]
    t = ObservationTable(x=np.arange(n, dtype=float)[:, None], y=np.arange(n, dtype=float), a=a)
    folds = FoldAssignment(2, np.repeat([0, 1], 5))
    with pytest.warns(RuntimeWarning, match="empty"):
        regs = fit_outcome_regression(t, folds, arm=1)
    # fold 1's complement (rows 0-4) holds arm 1; fold 0's complement has none
    assert set(regs[0].train_index) == {5, 6, 7, 8, 9}
    assert np.allclose(regs[0].predict(t.x[:2], 100.0), np.mean(np.arange(5, 10)) - 100.0)


def test_fitted_model_oof_shapes_and_cache():
    t = _table(n=90)
    nm = fit_nuisance(t, NuisanceConfig(K=3))
    assert nm.propensity_oof().shape == (90,)
    assert nm.mu_oof(0, 0.1).shape == (90,)
    assert nm.mu_oof(1, np.array([0.0, 1.0])).shape == (90, 2)
    assert nm.mu_oof(0, 0.1) is not None and np.array_equal(nm.mu_oof(0, 0.1), nm.mu_oof(0, 0.1))
    blocks = nm.oof_weight_blocks(1)
    assert len(blocks) == 3
    for k, (rows, train, W) in enumerate(blocks):
        assert np.array_equal(rows, nm.folds.rows(k))
        assert not np.isin(train, rows).any()
        assert np.allclose(W.sum(axis=1), 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        NuisanceConfig(kappa=0.5)
    with pytest.raises(ValueError):
        NuisanceConfig(propensity_mode="forest")
    with pytest.raises(ValueError):
        NuisanceConfig(K=1)


reg_inputs = st.tuples(st.integers(1, 40), st.integers(1, 3), st.integers(0, 10_000))


@settings(max_examples=150)
@given(reg_inputs, st.floats(-4, 4), st.floats(-4, 4))
def test_mu_range_monotone_lipschitz(params, e1, e2):
    m, p, seed = params
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(m, p)), rng.normal(size=m) * 2
    reg = KernelRegression(x, y, np.arange(m))
    q = rng.normal(size=(6, p)) * 2
    lo, hi = min(e1, e2), max(e1, e2)
    mu_lo, mu_hi = reg.predict(q, lo), reg.predict(q, hi)
    tol = 1e-12
    assert np.all(mu_lo <= tol) and np.all(mu_hi <= tol)
    assert np.all(mu_lo >= mu_hi - tol)
    assert np.all(np.abs(mu_lo - mu_hi) <= (hi - lo) + tol)
    assert np.all(mu_hi >= np.min(np.minimum(y - hi, 0)) - tol)
