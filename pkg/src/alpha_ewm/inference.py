"""Confidence intervals for estimated welfare and Monte Carlo coverage experiments."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from alpha_ewm._rng import generator
from alpha_ewm.data import ObservationTable
from alpha_ewm.nuisance import Nuisance, NuisanceConfig
from alpha_ewm.optimize import LearnResult, SaConfig, learn_policy, maximize_over_class
from alpha_ewm.policy import LinearHalfSpace, PolicyClassSpec, decide, policy_to_dict
from alpha_ewm.welfare import DEFAULT_GRID_SIZE, ProfiledCriterion, ScoreSet

SCHEMA_VERSION = "1"


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed."""


@dataclass(frozen=True)
class WaldInterval:
    estimate: float
    se: float
    level: float
    lo: float
    hi: float

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def _check_level(level: float):
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")


def wald_ci(scores: ScoreSet | Sequence[float], level: float = 0.95) -> WaldInterval:
    """Normal interval ``mean +- z se`` with ``se^2 = sum (g - mean)^2 / (n (n - 1))``."""
    _check_level(level)
    g = np.asarray(scores.gamma if isinstance(scores, ScoreSet) else scores, dtype=np.float64).reshape(-1)
    n = g.size
    if n < 2:
        raise ValueError("a Wald interval needs at least two scores")
    est = float(g.mean())
    se = float(np.sqrt(np.sum((g - est) ** 2) / (n * (n - 1))))
    z = float(norm.ppf((1 + level) / 2))
    return WaldInterval(est, se, level, est - z * se, est + z * se)


# ---------------------------------------------------------------- bootstrap


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    B: int
    epsilon_n: float
    level: float
    W_hat: float
    n: int
    psi_prime_draws: np.ndarray
    one_sided_lo: float
    two_sided: tuple[float, float]
    multiplier_kind: str = "normal"
    dropped: int = 0
    seed: int = 0

    def critical_value(self, level: float) -> float:
        """``c``: the ``level`` quantile of the draws (one-sided)."""
        _check_level(level)
        return float(np.quantile(self.psi_prime_draws, level))

    def abs_critical_value(self, level: float) -> float:
        """``q``: the ``level`` quantile of the absolute draws (two-sided)."""
        _check_level(level)
        return float(np.quantile(np.abs(self.psi_prime_draws), level))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "B": self.B,
            "epsilon_n": self.epsilon_n,
            "level": self.level,
            "W_hat": self.W_hat,
            "n": self.n,
            "one_sided_lo": self.one_sided_lo,
            "two_sided_lo": self.two_sided[0],
            "two_sided_hi": self.two_sided[1],
            "multiplier_kind": self.multiplier_kind,
            "dropped": self.dropped,
            "seed": self.seed,
            "psi_prime_draws": [float(v) for v in self.psi_prime_draws],
        }


def _multipliers(kind: str, rng: np.random.Generator, n: int) -> np.ndarray:
    if kind == "normal":
        return rng.standard_normal(n)
    if kind == "rademacher":
        return rng.choice([-1.0, 1.0], size=n)
    raise ValueError(f"unknown multiplier kind {kind!r}")


def bootstrap_optimal_welfare(
    table: ObservationTable,
    alpha: float,
    class_spec: PolicyClassSpec,
    nuisance: Nuisance,
    theta_hat: LearnResult,
    B: int = 100,
    epsilon_n: float | None = None,
    level: float = 0.95,
    seed: int = 0,
    sa_config: SaConfig = SaConfig(iterations=1000, restarts=1),
    multiplier_kind: str = "normal",
    grid_size: int = DEFAULT_GRID_SIZE,
) -> BootstrapResult:
    """Multiplier bootstrap of the optimal welfare with a numerical delta method.

    Replicate ``b`` maximizes ``theta -> sum_i w_i g_theta(Z_i)`` with
    ``w_i = 1/n + eps n^{-1/2} (xi_i - mean xi)``, which is the estimated
    criterion plus ``eps`` times the centred multiplier process. The
    derivative draw is ``(perturbed sup - W_hat) / eps``. ``level`` is the
    confidence level of the returned intervals.
    """
    _check_level(level)
    if B < 2:
        raise ValueError("B must be at least 2")
    n = table.n
    eps = n ** -0.25 if epsilon_n is None else float(epsilon_n)
    if not eps > 0:
        raise ValueError("epsilon_n must be positive")
    base = ProfiledCriterion(table, nuisance, alpha, grid_size=grid_size)
    pi_hat = np.asarray(decide(theta_hat.policy, table.x), dtype=np.int8)
    _, sup0 = base.best(pi_hat)
    starts = [np.asarray(theta_hat.policy.beta)] if isinstance(theta_hat.policy, LinearHalfSpace) else None

    draws, dropped = [], 0
    for b in range(B):
        rng = generator(seed, b)
        xi = _multipliers(multiplier_kind, rng, n)
        w = 1.0 / n + eps * (xi - xi.mean()) / math.sqrt(n)
        try:
            crit = ProfiledCriterion(table, nuisance, alpha, row_weights=w, grid_size=grid_size)
            _, at_hat = crit.best(pi_hat)
            _, sup_b, _ = maximize_over_class(table, crit, class_spec, sa_config.replace(seed=seed + b), starts=starts)
            sup_b = max(sup_b, at_hat)
            if not math.isfinite(sup_b):
                raise FloatingPointError("non-finite perturbed supremum")
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            dropped += 1
            warnings.warn(f"bootstrap replicate {b} dropped: {exc}", RuntimeWarning, stacklevel=2)
            continue
        draws.append((sup_b - sup0) / eps)
    if dropped > 0.1 * B:
        raise BootstrapError(f"{dropped} of {B} bootstrap replicates failed")
    draws = np.asarray(draws)
    c = float(np.quantile(draws, level))
    q = float(np.quantile(np.abs(draws), level))
    W = theta_hat.W_hat
    root_n = math.sqrt(n)
    return BootstrapResult(
        B=B,
        epsilon_n=eps,
        level=level,
        W_hat=W,
        n=n,
        psi_prime_draws=draws,
        one_sided_lo=W - c / root_n,
        two_sided=(W - q / root_n, W + q / root_n),
        multiplier_kind=multiplier_kind,
        dropped=dropped,
        seed=seed,
    )


# --------------------------------------------------------------- simulation


@dataclass(frozen=True)
class SimulationMetrics:
    n: int
    alpha: float
    reps: int
    truth: float
    avg_treated_fraction: float
    bias: float
    variance: float
    mse: float
    coverage_95: float
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    CSV_FIELDS = ("n", "alpha", "reps", "truth", "avg_treated_fraction", "bias", "variance", "mse", "coverage_95")

    def csv_row(self) -> list:
        return [getattr(self, k) for k in self.CSV_FIELDS]


def write_metrics_csv(metrics: Sequence[SimulationMetrics], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SimulationMetrics.CSV_FIELDS)
        for m in metrics:
            w.writerow(m.csv_row())


@dataclass(frozen=True)
class ReplicateOutcome:
    seed: int
    W_hat: float
    se: float
    covered: bool
    treated_fraction: float


def _one_replicate(args) -> ReplicateOutcome:
    from alpha_ewm.dgp import DgpSpec, generate

    kind, n, seed, alpha, class_spec, nuisance_config, sa_config, truth, level = args
    table = generate(DgpSpec(kind, n, seed))
    fit = learn_policy(table, alpha, class_spec, nuisance_config, sa_config.replace(seed=seed))
    ci = wald_ci(fit.scores, level)
    return ReplicateOutcome(seed, fit.W_hat, ci.se, ci.covers(truth), fit.treated_fraction)


def aggregate(outcomes: Sequence[ReplicateOutcome], truth: float, n: int, alpha: float, settings: dict | None = None) -> SimulationMetrics:
    if not outcomes:
        raise ValueError("no replicates to aggregate")
    est = np.array([o.W_hat for o in outcomes])
    err = est - truth
    # fsum keeps the reduction independent of replicate order
    bias = math.fsum(err) / est.size
    variance = math.fsum((err - bias) ** 2) / est.size
    return SimulationMetrics(
        n=n,
        alpha=alpha,
        reps=len(outcomes),
        truth=truth,
        avg_treated_fraction=math.fsum(o.treated_fraction for o in outcomes) / len(outcomes),
        bias=bias,
        variance=variance,
        mse=math.fsum(err**2) / est.size,
        coverage_95=sum(o.covered for o in outcomes) / len(outcomes),
        settings=settings or {},
    )


def run_coverage_experiment(
    dgp_spec,
    alpha: float,
    n: int,
    reps: int,
    class_spec: PolicyClassSpec,
    nuisance_config: NuisanceConfig = NuisanceConfig(),
    sa_config: SaConfig = SaConfig(),
    base_seed: int = 0,
    truth: float | None = None,
    workers: int = 1,
    level: float = 0.95,
    return_replicates: bool = False,
):
    """Replicate: draw, learn, Wald interval, hit or miss against ``truth``.

    ``dgp_spec`` is a :class:`~alpha_ewm.dgp.DgpSpec` or a design name. Replicate
    ``r`` uses seed ``base_seed + r``. Without ``truth``, the oracle optimum on
    a default superpopulation is computed first (slow).
    """
    from alpha_ewm.dgp import DgpSpec, oracle_best_policy, superpopulation

    kind = dgp_spec.kind if isinstance(dgp_spec, DgpSpec) else DgpSpec(dgp_spec, n).kind
    if reps < 1:
        raise ValueError("reps must be positive")
    if truth is None:
        truth = oracle_best_policy(superpopulation(kind), class_spec, alpha).value
    jobs = [(kind, n, base_seed + r, alpha, class_spec, nuisance_config, sa_config, truth, level) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_replicate, jobs))
    else:
        outcomes = [_one_replicate(j) for j in jobs]
    settings = {
        "dgp": kind,
        "base_seed": base_seed,
        "class": class_spec.to_dict(),
        "nuisance": asdict(nuisance_config),
        "sa": asdict(sa_config),
        "level": level,
    }
    metrics = aggregate(outcomes, truth, n, alpha, settings)
    return (metrics, outcomes) if return_replicates else metrics


def learn_summary(fit: LearnResult, level: float = 0.95) -> dict:
    ci = wald_ci(fit.scores, level)
    return {
        "policy": policy_to_dict(fit.policy),
        "alpha": fit.alpha,
        "eta_hat": fit.eta_hat,
        "W_hat": fit.W_hat,
        "se": ci.se,
        "wald_lo": ci.lo,
        "wald_hi": ci.hi,
        "level": level,
        "treated_fraction": fit.treated_fraction,
    }

