"""Tail-average welfare, its dual, doubly robust scores and related criteria.

For a sample ``v`` and ``alpha`` in (0, 1] the alpha-tail average is
``(1/alpha) * integral_0^alpha F_n^{-1}(t) dt``. Its dual form
``eta + mean((v - eta)_-) / alpha`` is maximized at the empirical
alpha-quantile; the doubly robust score below is the cross-fitted analogue of
the dual objective for a treatment rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from alpha_ewm.data import ObservationTable
from alpha_ewm.nuisance import Nuisance, NuisanceModel
from alpha_ewm.policy import PolicyRule, decide

DEFAULT_GRID_SIZE = 512


def neg_part(u):
    """``min(u, 0)``, elementwise."""
    if np.ndim(u) == 0:
        return min(float(u), 0.0)
    return np.minimum(u, 0.0)


def _values(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("values must be non-empty")
    return v


def _check_alpha(alpha, allow_one=True):
    hi_ok = alpha <= 1.0 if allow_one else alpha < 1.0
    if not (alpha > 0.0 and hi_ok):
        raise ValueError(f"alpha must lie in (0, {'1]' if allow_one else '1)'}, got {alpha}")


def _alpha_n(alpha: float, n: int) -> float:
    # snap alpha*n to an integer when it is one up to rounding (e.g. 0.3 * 10)
    an = alpha * n
    r = round(an)
    return float(r) if abs(an - r) <= 1e-9 * max(1.0, an) else an


def empirical_cvar(values, alpha: float) -> float:
    """Exact tail average of the empirical quantile function over ``[0, alpha]``."""
    _check_alpha(alpha)
    v = _values(values)
    n = v.size
    an = _alpha_n(alpha, n)
    m = int(math.floor(an))
    # a partial sort is enough: the m smallest, then the (m+1)-th
    v = np.partition(v, m) if m < n else v
    total = float(v[:m].sum())
    if m < n and an > m:
        total += (an - m) * v[m]
    return total / an


def dual_value(values, alpha: float, eta: float) -> float:
    _check_alpha(alpha)
    v = _values(values)
    return float(np.mean(np.minimum(v - eta, 0.0)) / alpha + eta)


def dual_sup(values, alpha: float) -> tuple[float, float]:
    """``(eta*, value)`` with ``eta*`` the empirical alpha-quantile."""
    _check_alpha(alpha, allow_one=False)
    v = np.sort(_values(values))
    k = max(1, int(math.ceil(_alpha_n(alpha, v.size))))
    eta = float(v[k - 1])
    return eta, dual_value(v, alpha, eta)


def quantile_welfare(values, alpha: float) -> float:
    _check_alpha(alpha)
    v = np.sort(_values(values))
    k = max(1, int(math.ceil(_alpha_n(alpha, v.size))))
    return float(v[k - 1])


def gini_weights(n: int, k: float) -> np.ndarray:
    """Order-statistic weights ``(1-(i-1)/n)^(k-1) - (1-i/n)^(k-1)``, i = 1..n."""
    if k < 2:
        raise ValueError("Gini parameter k must be >= 2")
    grid = 1.0 - np.arange(n + 1) / n
    lam = grid ** (k - 1)
    return lam[:-1] - lam[1:]


def gini_welfare(values, k: float = 3.0) -> float:
    """Extended Gini welfare ``integral F^{-1}(t) (k-1)(1-t)^(k-2) dt`` of the sample."""
    raw = _values(values)
    if k == 2:
        # equal weights; average in input order so the result is the sample mean bit for bit
        return float(raw.mean())
    return float(gini_weights(raw.size, k) @ np.sort(raw))


def gini_identity_check(values, k: float) -> dict:
    """Numerically integrate ``(k-2) * int_0^1 W_a * a * (1-a)^(k-3) da`` and compare.

    Returns the rank-weighted value, the integral and their ratio. For the
    empirical distribution the ratio is ``k - 1`` rather than 1.
    """
    if k <= 2:
        raise ValueError("the integral form needs k > 2")
    v = np.sort(_values(values))
    n = v.size
    cum = np.concatenate([[0.0], np.cumsum(v)])

    def lorenz(a):
        # integral_0^a F_n^{-1}(t) dt = a * W_a
        an = a * n
        m = min(int(math.floor(an)), n)
        out = cum[m]
        if m < n:
            out += (an - m) * v[m]
        return out / n

    breaks = list(np.arange(1, n) / n) if n <= 50 else None
    with warnings.catch_warnings():
        # large n: many kinks and quad reports roundoff; the value stays accurate to about 1e-7
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        integral, _ = integrate.quad(lambda a: lorenz(a) * (1 - a) ** (k - 3), 0.0, 1.0, points=breaks, limit=max(200, 4 * n))
    rhs = (k - 2) * integral
    lhs = gini_welfare(v, k)
    return {
        "gini": lhs,
        "integral_form": rhs,
        "residual": lhs - rhs,
        "ratio": lhs / rhs if rhs != 0 else math.nan,
    }


# ----------------------------------------------------------------- scores


@dataclass(frozen=True)
class FeasibleEtaInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("eta interval needs lo <= hi")

    @classmethod
    def from_outcomes(cls, y) -> "FeasibleEtaInterval":
        y = _values(y)
        return cls(float(y.min()), float(y.max()))

    def clip(self, eta):
        return np.clip(eta, self.lo, self.hi)


@dataclass(frozen=True)
class Theta:
    policy: PolicyRule
    eta: float


@dataclass(frozen=True, eq=False)
class ScoreSet:
    alpha: float
    theta: Theta
    gamma: np.ndarray
    treated: np.ndarray

    @property
    def n(self) -> int:
        return self.gamma.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.gamma))

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "treated", "gamma"])
            for i, (t, g) in enumerate(zip(self.treated, self.gamma)):
                w.writerow([i, int(t), repr(float(g))])


def dr_score(y, a, pi, e, mu0, mu1, eta, alpha):
    """Doubly robust score of the dual objective; vectorizes over rows.

    ``pi`` is the rule's decision at the row, ``e`` the propensity,
    ``mu0``/``mu1`` the pseudo-outcome regressions at ``(x, eta)``.
    """
    e = np.asarray(e, dtype=np.float64)
    if np.any((e <= 0.0) | (e >= 1.0)):
        raise FloatingPointError("propensity must lie strictly inside (0, 1)")
    y = np.asarray(y, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    pseudo = np.minimum(y - eta, 0.0)
    out = ((1 - pi) * mu0 + pi * mu1) / alpha + eta
    out = out + (1 - pi) * (1 - a) / (1 - e) * (pseudo - mu0) / alpha
    out = out + pi * a / e * (pseudo - mu1) / alpha
    return float(out) if out.ndim == 0 else out


def ipw_weight(a, pi, e):
    """``a*pi/e + (1-a)(1-pi)/(1-e)``."""
    a = np.asarray(a, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    return a * pi / e + (1 - a) * (1 - pi) / (1 - e)


def _check_folds(table: ObservationTable, nuisance: Nuisance):
    if nuisance.folds.n != table.n:
        raise ValueError("nuisance was fitted on a different fold assignment / table size")
    if isinstance(nuisance, NuisanceModel) and nuisance.table is not table:
        if not (np.array_equal(nuisance.table.y, table.y) and np.array_equal(nuisance.table.x, table.x)):
            raise ValueError("nuisance was fitted on a different table")


def score_set(table: ObservationTable, theta: Theta, nuisance: Nuisance, alpha: float) -> ScoreSet:
    """Cross-fitted scores: row ``i`` uses the nuisances of its own fold's complement."""
    _check_alpha(alpha)
    _check_folds(table, nuisance)
    pi = np.asarray(decide(theta.policy, table.x), dtype=np.int8)
    e = nuisance.propensity_oof()
    eta = float(theta.eta)
    mu0 = nuisance.mu_oof(0, eta)
    mu1 = nuisance.mu_oof(1, eta)
    gamma = dr_score(table.y, table.a, pi, e, mu0, mu1, eta, alpha)
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    gamma.setflags(write=False)
    return ScoreSet(alpha=alpha, theta=theta, gamma=gamma, treated=pi)


# ------------------------------------------------------ profiled criterion


def eta_candidates(y, grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Observed outcomes plus a uniform grid over ``[min y, max y]``."""
    y = _values(y)
    grid = np.linspace(y.min(), y.max(), grid_size) if grid_size > 0 else np.empty(0)
    return np.unique(np.concatenate([y, grid]))


class ProfiledCriterion:
    """``eta -> sum_i w_i g_(pi, eta)(Z_i)`` on a candidate set, for any rule decisions ``pi``.

    Row weights ``w`` default to ``1/n`` (the estimated dual objective); the
    multiplier bootstrap passes perturbed weights. Evaluations are cached
    against the previous decision vector so nearby rules are cheap.

    With kernel nuisances the criterion is a weighted sum of ``(y_j - eta)_-``
    over the observed outcomes, which is exact at every eta. Other nuisances
    use dense per-row score matrices on the candidate set.
    """

    _REFRESH_EVERY = 256

    def __init__(self, table, nuisance, alpha, row_weights=None, grid_size=DEFAULT_GRID_SIZE, dense=None):
        _check_alpha(alpha, allow_one=False)
        _check_folds(table, nuisance)
        self.table = table
        self.nuisance = nuisance
        self.alpha = float(alpha)
        n = table.n
        self.w = np.full(n, 1.0 / n) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
        self.wsum = float(self.w.sum())
        self.etas = eta_candidates(table.y, grid_size)
        self.interval = FeasibleEtaInterval.from_outcomes(table.y)
        e = nuisance.propensity_oof()
        if np.any((e <= 0) | (e >= 1)):
            raise FloatingPointError("propensity must lie strictly inside (0, 1)")
        a = table.a.astype(np.float64)
        # ratio r^arm_i = 1{a_i = arm} / P(A = arm | x_i)
        self._r = {1: a / e, 0: (1 - a) / (1 - e)}
        self.dense = not isinstance(nuisance, NuisanceModel) if dense is None else dense
        self._last_pi = None
        self._calls = 0
        if self.dense:
            self._init_dense()
        else:
            self._init_kernel()

    # -- kernel path
    def _init_kernel(self):
        nm: NuisanceModel = self.nuisance
        n = self.table.n
        self._order = np.argsort(self.table.y, kind="stable")
        self._ys = self.table.y[self._order]
        self._cand_idx = np.searchsorted(self._ys, self.etas, side="left")
        self._blocks = {}
        self._pos = np.empty(n, dtype=np.int64)
        self._fold = nm.folds.fold_of
        for arm in (0, 1):
            for k, (rows, train, W) in enumerate(nm.oof_weight_blocks(arm)):
                self._blocks[(k, arm)] = (rows, train, W)
                self._pos[rows] = np.arange(rows.size)
        self._c = None

    def _coef(self, rows, arm):
        return self.w[rows] * (1.0 - self._r[arm][rows])

    def _full_c(self, pi):
        c = np.zeros(self.table.n)
        for (k, arm), (rows, train, W) in self._blocks.items():
            sel = pi[rows] == arm
            if sel.any():
                coef = self._coef(rows[sel], arm)
                c[train] += coef @ W[sel]
        return c

    def _update_c(self, changed, old_pi, new_pi):
        for k in np.unique(self._fold[changed]):
            ck = changed[self._fold[changed] == k]
            for arm in (0, 1):
                rows, train, W = self._blocks[(k, arm)]
                add = ck[new_pi[ck] == arm]
                sub = ck[old_pi[ck] == arm]
                delta = np.zeros(train.size)
                if add.size:
                    delta += self._coef(add, arm) @ W[self._pos[add]]
                if sub.size:
                    delta -= self._coef(sub, arm) @ W[self._pos[sub]]
                self._c[train] += delta

    def _kernel_d(self, pi):
        refresh = self._c is None or self._calls % self._REFRESH_EVERY == 0
        if not refresh:
            changed = np.flatnonzero(pi != self._last_pi)
            if changed.size > self.table.n // 4:
                refresh = True
            elif changed.size:
                self._update_c(changed, self._last_pi, pi)
        if refresh:
            self._c = self._full_c(pi)
        r = np.where(pi == 1, self._r[1], self._r[0])
        return self._c + self.w * r

    def _sums(self, d):
        ds = d[self._order]
        p0 = np.concatenate([[0.0], np.cumsum(ds)])
        p1 = np.concatenate([[0.0], np.cumsum(ds * self._ys)])
        return p0, p1

    # -- dense path
    def _init_dense(self):
        etas = self.etas
        mu0 = self.nuisance.mu_oof(0, etas)
        mu1 = self.nuisance.mu_oof(1, etas)
        pseudo = np.minimum(self.table.y[:, None] - etas[None, :], 0.0)
        g0 = etas[None, :] + ((1 - self._r[0])[:, None] * mu0 + self._r[0][:, None] * pseudo) / self.alpha
        g1 = etas[None, :] + ((1 - self._r[1])[:, None] * mu1 + self._r[1][:, None] * pseudo) / self.alpha
        self._base = self.w @ g0
        self._diff = self.w[:, None] * (g1 - g0)
        self._v = None

    def _dense_values(self, pi):
        refresh = self._v is None or self._calls % self._REFRESH_EVERY == 0
        if not refresh:
            changed = np.flatnonzero(pi != self._last_pi)
            if changed.size > self.table.n // 4:
                refresh = True
            elif changed.size:
                sign = (pi[changed].astype(np.float64) - self._last_pi[changed])
                self._v = self._v + sign @ self._diff[changed]
        if refresh:
            self._v = self._base + pi.astype(np.float64) @ self._diff
        return self._v

    # -- public
    def _prepare(self, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=np.int8)
        if pi.shape != (self.table.n,):
            raise ValueError("decision vector has the wrong length")
        return pi

    def values(self, pi) -> np.ndarray:
        """Criterion at every candidate eta for decisions ``pi``."""
        pi = self._prepare(pi)
        if self.dense:
            out = self._dense_values(pi)
        else:
            p0, p1 = self._sums(self._kernel_d(pi))
            idx = self._cand_idx
            out = self.etas * self.wsum + (p1[idx] - self.etas * p0[idx]) / self.alpha
        self._last_pi = pi.copy()
        self._calls += 1
        return out

    def value_at(self, pi, eta: float) -> float:
        """Criterion at an arbitrary ``eta`` (clipped to the feasible interval)."""
        pi = self._prepare(pi)
        eta = float(self.interval.clip(eta))
        if self.dense:
            e = self.nuisance.propensity_oof()
            g = dr_score(self.table.y, self.table.a, pi, e, self.nuisance.mu_oof(0, eta), self.nuisance.mu_oof(1, eta), eta, self.alpha)
            return float(self.w @ g)
        p0, p1 = self._sums(self._kernel_d(pi))
        self._last_pi = pi.copy()
        self._calls += 1
        i = int(np.searchsorted(self._ys, eta, side="left"))
        return eta * self.wsum + (p1[i] - eta * p0[i]) / self.alpha

    def best(self, pi) -> tuple[float, float]:
        v = self.values(pi)
        j = int(np.argmax(v))
        return float(self.etas[j]), float(v[j])


@dataclass(frozen=True, eq=False)
class WelfareEstimate:
    eta_hat: float
    W_hat: float
    scores: ScoreSet


def estimate_W(
    table: ObservationTable,
    policy: PolicyRule,
    nuisance: Nuisance,
    alpha: float,
    grid_size: int = DEFAULT_GRID_SIZE,
    criterion: ProfiledCriterion | None = None,
) -> WelfareEstimate:
    """Estimated welfare of a fixed rule: the sup over eta of the mean score."""
    _check_alpha(alpha, allow_one=False)
    if criterion is None:
        criterion = ProfiledCriterion(table, nuisance, alpha, grid_size=grid_size)
    pi = np.asarray(decide(policy, table.x), dtype=np.int8)
    eta_hat, _ = criterion.best(pi)
    scores = score_set(table, Theta(policy, eta_hat), nuisance, alpha)
    return WelfareEstimate(eta_hat=eta_hat, W_hat=scores.mean, scores=scores)
