"""Synthetic designs with both potential outcomes, and oracles computed on them.

Two designs are provided:

* ``illustrative``: ``X ~ U[0,1]``, ``A ~ Bernoulli(1/2)``,
  ``Y = 20 + 3A + X - 5AX + (1 + A + 2AX) eps``.
* ``aw-tau1`` / ``aw-tau2``: ``X ~ N(0, I_4)``, ``A ~ Bernoulli(2/3)``,
  ``Y = 10 + (X3 + X4)_+ + A tau(X) + eps`` with
  ``tau1 = ((X1)_+ + (X2)_+ - 1) / 2`` and ``tau2 = sign(X1 X2) / 2``.

Both potential outcomes share the same ``eps``. Draws come from per-row
counter-based streams, so row ``i`` is identical for every ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from alpha_ewm._rng import generator, row_uniforms_blocked, std_normal
from alpha_ewm.data import ObservationTable
from alpha_ewm.nuisance import KernelRegression
from alpha_ewm.optimize import SaConfig, _unit, simulated_annealing
from alpha_ewm.policy import (
    Constant,
    FeatureThreshold,
    LinearHalfSpace,
    PolicyClassSpec,
    PolicyRule,
    canonicalize,
    decide,
    feature_matrix,
)
from alpha_ewm.welfare import empirical_cvar, gini_welfare, quantile_welfare

KINDS = ("illustrative", "aw-tau1", "aw-tau2")
SUPERPOPULATION_SIZE = 1_000_000

# SA budget for oracle searches on large superpopulations
ORACLE_SA = SaConfig(iterations=1500, restarts=3, cooling_rate=0.995, step_scale=0.2)


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    n: int
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower().replace("_", "-")
        if kind not in KINDS:
            raise ValueError(f"unknown DGP {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.n < 1:
            raise ValueError("n must be at least 1")

    @property
    def p(self) -> int:
        return 1 if self.kind == "illustrative" else 4

    @property
    def propensity(self) -> float:
        return 0.5 if self.kind == "illustrative" else 2.0 / 3.0


def tau1(x):
    x = np.atleast_2d(x)
    return (np.maximum(x[:, 0], 0) + np.maximum(x[:, 1], 0) - 1.0) / 2.0


def tau2(x):
    x = np.atleast_2d(x)
    return np.sign(x[:, 0] * x[:, 1]) / 2.0


def conditional_moments(kind: str, x) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(m0, s0, m1, s1)``: ``Y(a) | X=x ~ N(m_a, s_a^2)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if kind == "illustrative":
        xs = x[:, 0]
        return 20.0 + xs, np.ones_like(xs), 23.0 - 4.0 * xs, 2.0 + 2.0 * xs
    base = 10.0 + np.maximum(x[:, 2] + x[:, 3], 0.0)
    tau = tau1(x) if kind == "aw-tau1" else tau2(x)
    one = np.ones_like(base)
    return base, one, base + tau, one


def cate(kind: str, x) -> np.ndarray:
    m0, _, m1, _ = conditional_moments(kind, x)
    return m1 - m0


def _outcomes(kind, x, eps):
    m0, s0, m1, s1 = conditional_moments(kind, x)
    return m0 + s0 * eps, m1 + s1 * eps


def generate(spec: DgpSpec, eps_override: float | None = None, x_override=None) -> ObservationTable:
    """Draw ``spec.n`` rows with both potential outcomes.

    ``eps_override``/``x_override`` pin the noise or covariates (for checks of
    the outcome equations).
    """
    u = row_uniforms_blocked(spec.seed, spec.n)
    if spec.kind == "illustrative":
        x = u[:, [0]]
        a = (u[:, 1] < 0.5).astype(np.int8)
        eps = std_normal(u[:, 2])
    else:
        x = std_normal(u[:, :4])
        eps = std_normal(u[:, 4])
        a = (u[:, 5] < 2.0 / 3.0).astype(np.int8)
    if x_override is not None:
        x = np.broadcast_to(np.atleast_2d(np.asarray(x_override, dtype=np.float64)), x.shape).copy()
    if eps_override is not None:
        eps = np.full(spec.n, float(eps_override))
    y0, y1 = _outcomes(spec.kind, x, eps)
    y = np.where(a == 1, y1, y0)
    return ObservationTable(x=x, y=y, a=a, y0=y0, y1=y1, known_propensity=spec.propensity)


def superpopulation(kind: str, n: int = SUPERPOPULATION_SIZE, seed: int = 20240101) -> ObservationTable:
    return generate(DgpSpec(kind, n, seed))


def sample_without_replacement(pop: ObservationTable, n: int, seed: int) -> ObservationTable:
    rows = generator(seed, pop.n, n).choice(pop.n, size=n, replace=False)
    return pop.subset(np.sort(rows))


# ---------------------------------------------------------------- oracles


def post_treatment_outcomes(table: ObservationTable, policy) -> np.ndarray:
    table.require_counterfactuals()
    pi = decide(policy, table.x) if not isinstance(policy, np.ndarray) else policy
    return np.where(np.asarray(pi) == 1, table.y1, table.y0)


def oracle_welfare(table: ObservationTable, policy, alpha: float) -> float:
    """Alpha-tail average of the outcomes the rule would produce."""
    return empirical_cvar(post_treatment_outcomes(table, policy), alpha)


def criterion_value(values, criterion: str, alpha: float = 0.25, k: float = 3.0) -> float:
    if criterion == "cvar":
        return empirical_cvar(values, alpha)
    if criterion == "mean":
        return float(np.mean(values))
    if criterion == "gini":
        return gini_welfare(values, k)
    if criterion == "quantile":
        return quantile_welfare(values, alpha)
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass(frozen=True, eq=False)
class OracleOptimum:
    policy: PolicyRule
    value: float
    diagnostics: dict


def oracle_best_policy(
    table: ObservationTable,
    class_spec: PolicyClassSpec,
    alpha: float = 0.25,
    criterion: str = "cvar",
    k: float = 3.0,
    sa_config: SaConfig = ORACLE_SA,
    starts=None,
) -> OracleOptimum:
    """Best rule in the class for a criterion of the post-treatment outcomes.

    Linear classes are searched by annealing; thresholds by a coarse grid
    refined around its maximizer; the constant pair exhaustively.
    """
    table.require_counterfactuals()

    def score(pi):
        return criterion_value(np.where(pi == 1, table.y1, table.y0), criterion, alpha, k)

    if class_spec.kind == "constant":
        vals = [score(np.full(table.n, v)) for v in (0, 1)]
        j = int(np.argmax(vals))
        return OracleOptimum(Constant(j), vals[j], {"values": vals})

    if class_spec.kind == "threshold":
        col = table.x[:, class_spec.feature]
        lo, hi = class_spec.cutoff_range or (float(col.min()), float(col.max()))
        direction = class_spec.direction

        def at(c):
            return score((col <= c) if direction == "<=" else (col > c))

        coarse = np.linspace(lo, hi, 201)
        vals = np.array([at(c) for c in coarse])
        j = int(np.argmax(vals))
        step = coarse[1] - coarse[0]
        fine = np.linspace(max(lo, coarse[j] - step), min(hi, coarse[j] + step), 41)
        fvals = np.array([at(c) for c in fine])
        jf = int(np.argmax(fvals))
        best_c, best_v = (fine[jf], fvals[jf]) if fvals[jf] >= vals[j] else (coarse[j], vals[j])
        return OracleOptimum(FeatureThreshold(class_spec.feature, float(best_c), direction), float(best_v), {"grid": coarse.size + fine.size})

    feats = class_spec.resolved_features(table.p)
    F = feature_matrix(table.x, feats)

    def objective(beta):
        return score((beta[0] + F @ beta[1:] > 0).astype(np.int8))

    d = F.shape[1] + 1
    if starts is None:
        starts = [np.eye(d)[0], -np.eye(d)[0]]
        rng = generator(sa_config.seed, 20_000)
        while len(starts) < sa_config.restarts:
            starts.append(_unit(rng.normal(size=d)))
    starts = [_unit(np.asarray(s, dtype=np.float64)) for s in starts]
    cfg = sa_config if len(starts) <= sa_config.restarts else sa_config.replace(restarts=len(starts))
    sa = simulated_annealing(objective, starts[0], cfg, project=_unit, starts=starts)
    policy = canonicalize(LinearHalfSpace(tuple(sa.x), feats if class_spec.features else None))
    return OracleOptimum(policy, float(sa.value), sa.summary())


def measure_regret(
    table: ObservationTable,
    learned: PolicyRule,
    class_spec: PolicyClassSpec,
    alpha: float,
    sa_config: SaConfig = ORACLE_SA,
) -> float:
    """Best attainable welfare in the class minus the learned rule's welfare (>= 0)."""
    table.require_counterfactuals()
    own = oracle_welfare(table, learned, alpha)
    starts = None
    if class_spec.kind == "linear" and isinstance(learned, LinearHalfSpace):
        d = len(class_spec.resolved_features(table.p)) + 1
        starts = [np.asarray(learned.beta)] + [np.eye(d)[0], -np.eye(d)[0]]
    best = oracle_best_policy(table, class_spec, alpha, "cvar", sa_config=sa_config, starts=starts)
    return max(best.value, own) - own


class FirstBestRule:
    """Pointwise rule ``1{tau_hat(x, eta) > 0}`` from a kernel smoother of arm differences."""

    def __init__(self, smoother: KernelRegression, delta: np.ndarray, eta: float):
        self.smoother = smoother
        self.delta = delta
        self.eta = eta

    def tau(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty(x.shape[0])
        step = max(1, 4_000_000 // max(1, self.delta.size))
        for lo in range(0, x.shape[0], step):
            out[lo : lo + step] = self.smoother.weights(x[lo : lo + step]) @ self.delta
        return out

    def decide_many(self, x) -> np.ndarray:
        return (self.tau(x) > 0).astype(np.int8)


def oracle_first_best(
    table: ObservationTable,
    alpha: float,
    eta_grid,
    bandwidth: float = 1.0,
    max_train: int = 2000,
    seed: int = 0,
) -> tuple[FirstBestRule, float, float]:
    """Unrestricted best rule: ``(rule, welfare, eta)``.

    For each grid ``eta`` the arm difference ``(y1 - eta)_- - (y0 - eta)_-``
    is smoothed over covariates (on at most ``max_train`` rows), the rule
    treats where the smoothed difference is positive, and ``eta`` is chosen to
    maximize the dual value. The returned welfare is the tail average of the
    chosen rule's outcomes.
    """
    table.require_counterfactuals()
    eta_grid = np.atleast_1d(np.asarray(eta_grid, dtype=np.float64))
    if eta_grid.size == 0:
        raise ValueError("eta grid is empty")
    train = np.arange(table.n)
    if table.n > max_train:
        train = np.sort(generator(seed, table.n, 7).choice(table.n, size=max_train, replace=False))
    smoother = KernelRegression(table.x[train], np.zeros(train.size), train, bandwidth)
    delta = np.minimum(table.y1[train, None] - eta_grid, 0.0) - np.minimum(table.y0[train, None] - eta_grid, 0.0)
    neg0 = np.minimum(table.y0[:, None] - eta_grid, 0.0)
    neg1 = np.minimum(table.y1[:, None] - eta_grid, 0.0) if table.n * eta_grid.size <= 5e7 else None
    dual = np.zeros(eta_grid.size)
    step = max(1, 4_000_000 // max(train.size, 1))
    for lo in range(0, table.n, step):
        hi = min(lo + step, table.n)
        tau_hat = smoother.weights(table.x[lo:hi]) @ delta
        treat = tau_hat > 0
        if neg1 is not None:
            contrib = np.where(treat, neg1[lo:hi], neg0[lo:hi])
        else:
            contrib = np.where(treat, np.minimum(table.y1[lo:hi, None] - eta_grid, 0.0), neg0[lo:hi])
        dual += contrib.sum(axis=0)
    dual = dual / table.n / alpha + eta_grid
    j = int(np.argmax(dual))
    rule = FirstBestRule(smoother, delta[:, j].copy(), float(eta_grid[j]))
    value = oracle_welfare(table, rule.decide_many(table.x), alpha)
    return rule, value, float(eta_grid[j])


# --------------------------------------------------------- closed-form truths


def _neg_part_normal(z):
    """``E[min(z + eps, 0)]`` for ``eps ~ N(0, 1)``."""
    return z * ndtr(-z) - np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


def exact_mu(kind: str):
    """True ``mu_a(x, eta) = E[(Y(a) - eta)_- | X = x]`` for a design, as ``(arm, x, eta) -> array``."""

    def mu(arm, x, eta):
        m0, s0, m1, s1 = conditional_moments(kind, x)
        m, s = (m1, s1) if arm == 1 else (m0, s0)
        return s * _neg_part_normal((m - eta) / s)

    return mu


def population_dual_value(kind: str, policy: PolicyRule, alpha: float, eta: float, draws: int = 10_000_000, seed: int = 99) -> tuple[float, float]:
    """Monte Carlo ``(value, standard error)`` of the population dual objective.

    Covariates are drawn ``draws`` times; the noise is integrated out in
    closed form.
    """
    p = 1 if kind == "illustrative" else 4
    rng = generator(seed, draws)
    chunk = 1_000_000
    total, total_sq, done = 0.0, 0.0, 0
    mu = exact_mu(kind)
    while done < draws:
        m = min(chunk, draws - done)
        x = rng.random((m, p)) if kind == "illustrative" else rng.standard_normal((m, p))
        pi = decide(policy, x)
        vals = np.where(pi == 1, mu(1, x, eta), mu(0, x, eta))
        total += vals.sum()
        total_sq += (vals * vals).sum()
        done += m
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0)
    return mean / alpha + eta, np.sqrt(var / draws) / alpha
