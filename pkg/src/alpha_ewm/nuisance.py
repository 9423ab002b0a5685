"""Cross-fitted propensity scores and pseudo-outcome regressions.

The outcome regressions estimate ``mu_a(x, eta) = E[(Y(a) - eta)_- | X = x]``
with a Nadaraya-Watson smoother. Kernel weights do not depend on ``eta``, so
each evaluator keeps its training outcomes sorted and answers any number of
``eta`` values from cumulative sums.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from alpha_ewm.data import FoldAssignment, ObservationTable, partition_folds

_CHUNK_ENTRIES = 4_000_000
_DIRECT_MAX_ETAS = 8


@dataclass(frozen=True)
class NuisanceConfig:
    propensity_mode: str = "known"  # known | sample_mean | logistic
    propensity_value: float | None = None
    kappa: float = 0.01
    bandwidth_multiplier: float = 1.0
    K: int = 2
    fold_seed: int = 0

    def __post_init__(self):
        if self.propensity_mode not in ("known", "sample_mean", "logistic"):
            raise ValueError(f"unknown propensity_mode {self.propensity_mode!r}")
        if not 0.0 < self.kappa < 0.5:
            raise ValueError("kappa must lie in (0, 0.5)")
        if self.bandwidth_multiplier <= 0:
            raise ValueError("bandwidth_multiplier must be positive")
        if self.K < 2:
            raise ValueError("K must be at least 2")


# ---------------------------------------------------------------- propensity


@dataclass(frozen=True)
class PropensityEvaluator:
    """``x -> e(x)`` clipped to ``[kappa, 1 - kappa]``."""

    kappa: float
    constant: float | None = None
    coef: np.ndarray | None = None
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    fell_back: bool = False

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.constant is not None:
            e = np.full(x.shape[0], self.constant)
        else:
            z = (x - self.center) / self.scale
            e = expit(self.coef[0] + z @ self.coef[1:])
        return np.clip(e, self.kappa, 1.0 - self.kappa)


def _logistic_newton(x, a, ridge=1e-3, max_iter=50, tol=1e-10):
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    Z = np.column_stack([np.ones(len(a)), (x - center) / scale])
    pen = np.full(Z.shape[1], ridge)
    pen[0] = 0.0
    beta = np.zeros(Z.shape[1])
    for _ in range(max_iter):
        prob = expit(Z @ beta)
        grad = Z.T @ (a - prob) - pen * beta
        hess = (Z * (prob * (1 - prob))[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            return None
        if np.max(np.abs(step)) < tol:
            return beta, center, scale
    return None


def fit_propensity(
    table: ObservationTable,
    folds: FoldAssignment,
    mode: str = "known",
    kappa: float = 0.01,
    value: float | None = None,
) -> list[PropensityEvaluator]:
    """One evaluator per fold, each fitted on the fold's complement."""
    if not 0.0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 0.5)")
    if mode == "known":
        e = value if value is not None else table.known_propensity
        if e is None:
            raise ValueError("known propensity mode needs a value or a table with known_propensity")
        return [PropensityEvaluator(kappa, constant=float(e)) for _ in range(folds.K)]
    out = []
    for k in range(folds.K):
        rows = folds.complement(k)
        a = table.a[rows].astype(np.float64)
        mean = float(a.mean())
        if mode == "sample_mean" or mean in (0.0, 1.0):
            out.append(PropensityEvaluator(kappa, constant=mean))
            continue
        if mode != "logistic":
            raise ValueError(f"unknown propensity mode {mode!r}")
        fit = _logistic_newton(table.x[rows], a)
        if fit is None:
            warnings.warn(f"logistic propensity did not converge on fold {k}; using the sample mean", RuntimeWarning)
            out.append(PropensityEvaluator(kappa, constant=mean, fell_back=True))
        else:
            beta, center, scale = fit
            out.append(PropensityEvaluator(kappa, coef=beta, center=center, scale=scale))
    return out


# ------------------------------------------------------- outcome regressions


class PseudoOutcomeRegression:
    """Weighted average of ``(y_j - eta)_-`` over training rows.

    Subclasses provide :meth:`weights`; rows of the returned matrix are
    non-negative and sum to one. ``train_index`` maps training columns back to
    rows of the table the regression was fitted on.
    """

    def __init__(self, y_train: np.ndarray, train_index: np.ndarray):
        self.y_train = np.asarray(y_train, dtype=np.float64)
        self.train_index = np.asarray(train_index)
        self._order = np.argsort(self.y_train, kind="stable")
        self._y_sorted = self.y_train[self._order]

    def raw_weights(self, xq: np.ndarray) -> np.ndarray:
        """Unnormalized non-negative weights; every row has a positive sum."""
        raise NotImplementedError

    def weights(self, xq: np.ndarray) -> np.ndarray:
        w = self.raw_weights(xq)
        w /= w.sum(axis=1, keepdims=True)
        return w

    def _chunks(self, m: int):
        step = max(1, _CHUNK_ENTRIES // max(1, self.y_train.size))
        for lo in range(0, m, step):
            yield lo, min(lo + step, m)

    def predict(self, xq, eta) -> np.ndarray:
        """``mu(xq, eta)``; shape ``(m,)`` for scalar eta, ``(m, len(eta))`` otherwise."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        eta_arr = np.atleast_1d(np.asarray(eta, dtype=np.float64))
        out = np.empty((xq.shape[0], eta_arr.size))
        if eta_arr.size <= _DIRECT_MAX_ETAS:
            # few etas: a plain weighted average beats sorting the weights
            pseudo = np.minimum(self.y_train[:, None] - eta_arr[None, :], 0.0)
            for lo, hi in self._chunks(xq.shape[0]):
                w = self.raw_weights(xq[lo:hi])
                out[lo:hi] = (w @ pseudo) / w.sum(axis=1)[:, None]
            return out[:, 0] if np.ndim(eta) == 0 else out
        idx = np.searchsorted(self._y_sorted, eta_arr, side="left")
        for lo, hi in self._chunks(xq.shape[0]):
            w = self.weights(xq[lo:hi])[:, self._order]
            c0 = np.concatenate([np.zeros((w.shape[0], 1)), np.cumsum(w, axis=1)], axis=1)
            c1 = np.concatenate([np.zeros((w.shape[0], 1)), np.cumsum(w * self._y_sorted, axis=1)], axis=1)
            out[lo:hi] = c1[:, idx] - eta_arr * c0[:, idx]
        return out[:, 0] if np.ndim(eta) == 0 else out

    def plugin_form(self, xq, eta: float) -> np.ndarray:
        """Weighted empirical-CDF form ``sum_j w_j (y_j - eta) 1{y_j <= eta}``."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        w = self.weights(xq)
        below = self.y_train <= eta
        return (w * np.where(below, self.y_train - eta, 0.0)).sum(axis=1)


class KernelRegression(PseudoOutcomeRegression):
    """Nadaraya-Watson with a product Gaussian kernel on standardized covariates.

    Per-dimension bandwidth is ``multiplier * sd_j * m ** (-1 / (4 + p))`` with
    ``m`` the number of training rows.
    """

    def __init__(self, x_train, y_train, train_index, bandwidth_multiplier: float = 1.0):
        super().__init__(y_train, train_index)
        x_train = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
        m, p = x_train.shape
        sd = x_train.std(axis=0, ddof=1) if m > 1 else np.zeros(p)
        self.active = sd > 0
        h = bandwidth_multiplier * m ** (-1.0 / (4 + p))
        self.bandwidth = np.where(self.active, sd * h, np.inf)
        self.center = x_train.mean(axis=0)
        self._z = self._scale(x_train)
        self._z2 = np.einsum("ij,ij->i", self._z, self._z)

    def _scale(self, x):
        return ((x - self.center) / self.bandwidth[None, :])[:, self.active] if self.active.any() else np.zeros((x.shape[0], 0))

    def raw_weights(self, xq):
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        zq = self._scale(xq)
        d2 = zq @ self._z.T
        d2 *= -2.0
        d2 += np.einsum("ij,ij->i", zq, zq)[:, None]
        d2 += self._z2[None, :]
        np.maximum(d2, 0.0, out=d2)
        # shifting by the row minimum leaves normalized weights unchanged and keeps the max weight at 1
        d2 -= d2.min(axis=1, keepdims=True)
        d2 *= -0.5
        return np.exp(d2, out=d2)


class UniformRegression(PseudoOutcomeRegression):
    """Unweighted mean of the pseudo-outcome; the fallback for empty arms."""

    def raw_weights(self, xq):
        return np.ones((np.atleast_2d(xq).shape[0], self.y_train.size))


def fit_outcome_regression(
    table: ObservationTable,
    folds: FoldAssignment,
    arm: int,
    bandwidth_multiplier: float = 1.0,
) -> list[PseudoOutcomeRegression]:
    """Per-fold evaluators of ``mu_arm``, each fitted on the fold's complement."""
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    out = []
    for k in range(folds.K):
        rows = folds.complement(k)
        rows_a = rows[table.a[rows] == arm]
        if rows_a.size > 0:
            out.append(KernelRegression(table.x[rows_a], table.y[rows_a], rows_a, bandwidth_multiplier))
            continue
        # pooled complement mean keeps the fold-k evaluator free of fold-k rows
        warnings.warn(f"arm {arm} is empty in the training complement of fold {k}; using the pooled complement mean", RuntimeWarning)
        out.append(UniformRegression(table.y[rows], rows))
    return out


def mu_plugin_identity_check(evaluator: PseudoOutcomeRegression, x, eta: float) -> np.ndarray:
    """Residual between the fitted value and its weighted-empirical-CDF form."""
    return evaluator.plugin_form(x, eta) - evaluator.predict(x, eta)


# ----------------------------------------------------------- fitted bundle


class Nuisance:
    """Out-of-fold nuisance values for every row of the table it was built on."""

    folds: FoldAssignment

    def propensity_oof(self) -> np.ndarray:
        raise NotImplementedError

    def mu_oof(self, arm: int, eta) -> np.ndarray:
        """``(n,)`` for scalar eta, ``(n, len(eta))`` for an array."""
        raise NotImplementedError


@dataclass
class NuisanceModel(Nuisance):
    table: ObservationTable
    folds: FoldAssignment
    kappa: float
    propensity: list[PropensityEvaluator]
    outcome: dict[int, list[PseudoOutcomeRegression]]
    config: NuisanceConfig | None = None
    _e_cache: np.ndarray | None = field(default=None, repr=False)
    _w_cache: dict = field(default_factory=dict, repr=False)
    _mu_cache: dict = field(default_factory=dict, repr=False)

    def propensity_oof(self) -> np.ndarray:
        if self._e_cache is None:
            e = np.empty(self.table.n)
            for k in range(self.folds.K):
                rows = self.folds.rows(k)
                e[rows] = self.propensity[k](self.table.x[rows])
            e.setflags(write=False)
            self._e_cache = e
        return self._e_cache

    def mu_oof(self, arm: int, eta) -> np.ndarray:
        scalar = np.ndim(eta) == 0
        eta_arr = np.atleast_1d(np.asarray(eta, dtype=np.float64))
        key = (arm, eta_arr.tobytes())
        out = self._mu_cache.get(key)
        if out is None:
            out = np.empty((self.table.n, eta_arr.size))
            for k in range(self.folds.K):
                rows = self.folds.rows(k)
                out[rows] = self.outcome[arm][k].predict(self.table.x[rows], eta_arr)
            out.setflags(write=False)
            if eta_arr.size <= _DIRECT_MAX_ETAS:
                if len(self._mu_cache) >= 16:
                    self._mu_cache.clear()
                self._mu_cache[key] = out
        return out[:, 0] if scalar else out

    def oof_weight_blocks(self, arm: int):
        """``[(query_rows, train_rows, W)]`` per fold for the in-sample rows (cached)."""
        if arm not in self._w_cache:
            blocks = []
            for k in range(self.folds.K):
                rows = self.folds.rows(k)
                ev = self.outcome[arm][k]
                W = ev.weights(self.table.x[rows])
                W.setflags(write=False)
                blocks.append((rows, ev.train_index, W))
            self._w_cache[arm] = blocks
        return self._w_cache[arm]

    @property
    def fell_back(self) -> bool:
        return any(e.fell_back for e in self.propensity)


def fit_nuisance(table: ObservationTable, config: NuisanceConfig = NuisanceConfig(), folds: FoldAssignment | None = None) -> NuisanceModel:
    if folds is None:
        folds = partition_folds(table.n, config.K, config.fold_seed)
    elif folds.n != table.n:
        raise ValueError("fold assignment does not match the table size")
    prop = fit_propensity(table, folds, config.propensity_mode, config.kappa, config.propensity_value)
    outcome = {a: fit_outcome_regression(table, folds, a, config.bandwidth_multiplier) for a in (0, 1)}
    return NuisanceModel(table, folds, config.kappa, prop, outcome, config)


class ArrayNuisance(Nuisance):
    """Nuisances supplied directly, for oracles, overrides and corruption studies.

    ``mu`` is a callable ``(arm, x, eta) -> array`` or ``None`` for ``mu == 0``;
    ``propensity`` is a scalar or a callable ``x -> array``.
    """

    def __init__(self, table: ObservationTable, folds: FoldAssignment, propensity, mu=None):
        self.table = table
        self.folds = folds
        if callable(propensity):
            e = np.asarray(propensity(table.x), dtype=np.float64)
        else:
            e = np.full(table.n, float(propensity))
        self._e = e
        self._mu = mu

    def propensity_oof(self):
        return self._e

    def mu_oof(self, arm, eta):
        scalar = np.ndim(eta) == 0
        eta_arr = np.atleast_1d(np.asarray(eta, dtype=np.float64))
        if self._mu is None:
            out = np.zeros((self.table.n, eta_arr.size))
        else:
            out = np.column_stack([np.asarray(self._mu(arm, self.table.x, t), dtype=np.float64) for t in eta_arr])
        return out[:, 0] if scalar else out


class ShiftedNuisance(Nuisance):
    """Wraps a nuisance, adding ``mu_shift`` to both regressions and/or replacing the propensity."""

    def __init__(self, base: Nuisance, mu_shift: float = 0.0, propensity: float | None = None):
        self.base = base
        self.folds = base.folds
        self.mu_shift = mu_shift
        self.propensity = propensity

    def propensity_oof(self):
        if self.propensity is None:
            return self.base.propensity_oof()
        return np.full(self.folds.n, float(self.propensity))

    def mu_oof(self, arm, eta):
        return self.base.mu_oof(arm, eta) + self.mu_shift
