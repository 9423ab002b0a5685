"""Simulated annealing and the policy learner built on it."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from alpha_ewm._rng import generator
from alpha_ewm.data import ObservationTable
from alpha_ewm.nuisance import Nuisance, NuisanceConfig, fit_nuisance
from alpha_ewm.policy import (
    Constant,
    FeatureThreshold,
    LinearHalfSpace,
    PolicyClassSpec,
    PolicyRule,
    canonicalize,
    decide,
    feature_matrix,
    treated_fraction,
)
from alpha_ewm.welfare import DEFAULT_GRID_SIZE, ProfiledCriterion, ScoreSet, estimate_W


@dataclass(frozen=True)
class SaConfig:
    initial_temperature: float = 1.0
    cooling_rate: float = 0.995
    iterations: int = 5000
    step_scale: float = 0.2
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.initial_temperature <= 0 or self.step_scale <= 0:
            raise ValueError("temperature and step scale must be positive")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ValueError("cooling_rate must lie in (0, 1)")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be positive")

    def replace(self, **kw) -> "SaConfig":
        return SaConfig(**{**asdict(self), **kw})


@dataclass
class SaResult:
    x: np.ndarray
    value: float
    evaluations: int = 0
    rejected_nonfinite: int = 0
    accepted: int = 0
    restart_values: list[float] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "best_value": self.value,
            "evaluations": self.evaluations,
            "accepted": self.accepted,
            "rejected_nonfinite": self.rejected_nonfinite,
            "restart_values": list(self.restart_values),
            "trace_deciles": _deciles(self.trace),
        }


def _deciles(trace: list[float]) -> list[float]:
    if not trace:
        return []
    idx = np.linspace(0, len(trace) - 1, 11).round().astype(int)
    return [float(trace[i]) for i in idx]


def simulated_annealing(
    objective: Callable[[np.ndarray], float],
    init,
    config: SaConfig = SaConfig(),
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    starts: Sequence | None = None,
) -> SaResult:
    """Maximize ``objective`` by annealing with geometric cooling.

    Restart ``r`` begins at ``starts[r]`` when given, otherwise at ``init``;
    each restart draws from its own stream derived from ``config.seed``.
    The returned point is the best evaluated over all restarts, ``init``
    included.
    """
    init = np.asarray(init, dtype=np.float64)
    project = project or (lambda v: v)
    res = SaResult(x=init.copy(), value=-math.inf)

    def evaluate(v):
        res.evaluations += 1
        try:
            out = float(objective(v))
        except (FloatingPointError, ValueError, ZeroDivisionError):
            out = math.nan
        return out

    for r in range(config.restarts):
        rng = generator(config.seed, r)
        x = project(np.asarray(starts[r] if starts is not None and r < len(starts) else init, dtype=np.float64).copy())
        fx = evaluate(x)
        if not math.isfinite(fx):
            res.rejected_nonfinite += 1
            fx = -math.inf
        best_x, best_f = x.copy(), fx
        temp = config.initial_temperature
        for _ in range(config.iterations):
            scale = config.step_scale * temp / config.initial_temperature
            cand = project(x + rng.normal(scale=scale, size=x.shape))
            fc = evaluate(cand)
            u = rng.random()
            if not math.isfinite(fc):
                res.rejected_nonfinite += 1
            else:
                delta = fc - fx
                if delta >= 0 or u < math.exp(delta / temp):
                    x, fx = cand, fc
                    res.accepted += 1
                    if fx > best_f:
                        best_x, best_f = x.copy(), fx
            res.trace.append(max(best_f, res.value))
            temp *= config.cooling_rate
        res.restart_values.append(best_f)
        if best_f > res.value:
            res.x, res.value = best_x, best_f
    return res


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


# ------------------------------------------------------------------ learner


@dataclass(frozen=True, eq=False)
class LearnResult:
    policy: PolicyRule
    eta_hat: float
    W_hat: float
    scores: ScoreSet
    treated_fraction: float
    diagnostics: dict

    @property
    def alpha(self) -> float:
        return self.scores.alpha


class _LinearSearch:
    """Profiled objective ``beta -> max_eta V(pi_beta, eta)`` over precomputed features."""

    def __init__(self, table, criterion: ProfiledCriterion, features):
        self.table = table
        self.criterion = criterion
        self.features = tuple(features)
        self.F = feature_matrix(table.x, self.features)

    def decisions(self, beta):
        return (beta[0] + self.F @ beta[1:] > 0).astype(np.int8)

    def profiled(self, beta) -> float:
        return self.criterion.best(self.decisions(beta))[1]

    def joint(self, params) -> float:
        lo, hi = self.criterion.interval.lo, self.criterion.interval.hi
        eta = lo + float(np.clip(params[-1], 0.0, 1.0)) * (hi - lo)
        return self.criterion.value_at(self.decisions(params[:-1]), eta)

    def starts(self, restarts: int, seed: int):
        # treat-all, treat-none, then random directions
        d = self.F.shape[1] + 1
        base = [np.eye(d)[0], -np.eye(d)[0]]
        rng = generator(seed, 10_000)
        while len(base) < restarts:
            base.append(_unit(rng.normal(size=d)))
        return base[:restarts]


def _threshold_candidates(col: np.ndarray, lo: float, hi: float) -> np.ndarray:
    xs = np.unique(col[(col >= lo) & (col <= hi)])
    # midpoints between consecutive observed values, plus the range ends
    mids = (xs[:-1] + xs[1:]) / 2 if xs.size > 1 else np.empty(0)
    return np.unique(np.concatenate([[lo, hi], mids]))


def maximize_over_class(
    table: ObservationTable,
    criterion: ProfiledCriterion,
    class_spec: PolicyClassSpec,
    sa_config: SaConfig = SaConfig(),
    mode: str = "profiled",
    starts: Sequence | None = None,
) -> tuple[PolicyRule, float, dict]:
    """Best rule in the class for a profiled criterion: ``(policy, value, diagnostics)``.

    Constants and thresholds are enumerated; linear rules are annealed.
    """
    if mode not in ("profiled", "joint"):
        raise ValueError("mode must be 'profiled' or 'joint'")
    diagnostics: dict = {"mode": mode, "class": class_spec.kind}

    if class_spec.kind == "constant":
        cands = [Constant(0), Constant(1)]
        vals = [criterion.best(decide(c, table.x))[1] for c in cands]
        j = int(np.argmax(vals))
        diagnostics["candidate_values"] = vals
        return cands[j], float(vals[j]), diagnostics

    if class_spec.kind == "threshold":
        col = table.x[:, class_spec.feature]
        lo, hi = class_spec.cutoff_range or (float(col.min()), float(col.max()))
        if not lo < hi:
            raise ValueError("cutoff range is degenerate")
        cuts = _threshold_candidates(col, lo, hi)
        if class_spec.direction == ">":
            cuts = cuts[::-1]
        vals = np.array([criterion.best(FeatureThreshold(class_spec.feature, c, class_spec.direction).decide_many(table.x))[1] for c in cuts])
        j = int(np.argmax(vals))
        diagnostics["evaluations"] = int(cuts.size)
        return FeatureThreshold(class_spec.feature, float(cuts[j]), class_spec.direction), float(vals[j]), diagnostics

    feats = class_spec.resolved_features(table.p)
    search = _LinearSearch(table, criterion, feats)
    init_starts = list(starts) if starts is not None else search.starts(sa_config.restarts, sa_config.seed)
    if mode == "profiled":
        sa = simulated_annealing(search.profiled, init_starts[0], sa_config, project=_unit, starts=init_starts)
        beta = sa.x
    else:
        t_starts = []
        lo, hi = criterion.interval.lo, criterion.interval.hi
        for b in init_starts:
            b = _unit(np.asarray(b, dtype=float))
            eta0, _ = criterion.best(search.decisions(b))
            t_starts.append(np.append(b, (eta0 - lo) / (hi - lo) if hi > lo else 0.0))

        def project(v):
            return np.append(_unit(v[:-1]), np.clip(v[-1], 0.0, 1.0))

        sa = simulated_annealing(search.joint, t_starts[0], sa_config, project=project, starts=t_starts)
        beta = sa.x[:-1]
    diagnostics["sa"] = sa.summary()
    policy = canonicalize(LinearHalfSpace(tuple(beta), feats if class_spec.features else None))
    return policy, float(sa.value), diagnostics


def learn_policy(
    table: ObservationTable,
    alpha: float,
    class_spec: PolicyClassSpec,
    nuisance_config: NuisanceConfig = NuisanceConfig(),
    sa_config: SaConfig = SaConfig(),
    nuisance: Nuisance | None = None,
    mode: str = "profiled",
    grid_size: int = DEFAULT_GRID_SIZE,
    starts: Sequence | None = None,
) -> LearnResult:
    """Fit cross-fitted nuisances once and maximize the estimated welfare over the class.

    ``mode="profiled"`` searches rule parameters and maximizes over eta
    exactly for each candidate rule; ``mode="joint"`` anneals over
    (rule parameters, eta) together.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("the learner needs alpha in (0, 1)")
    if mode not in ("profiled", "joint"):
        raise ValueError("mode must be 'profiled' or 'joint'")
    if nuisance is None:
        if table.n < 2 * nuisance_config.K:
            raise ValueError(f"need at least 2K = {2 * nuisance_config.K} rows")
        nuisance = fit_nuisance(table, nuisance_config)
    criterion = ProfiledCriterion(table, nuisance, alpha, grid_size=grid_size)
    policy, _, diagnostics = maximize_over_class(table, criterion, class_spec, sa_config, mode, starts)
    est = estimate_W(table, policy, nuisance, alpha, grid_size=grid_size, criterion=criterion)
    return LearnResult(
        policy=policy,
        eta_hat=est.eta_hat,
        W_hat=est.W_hat,
        scores=est.scores,
        treated_fraction=treated_fraction(policy, table),
        diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class WelfareReport:
    alpha: float
    eta_hat: float
    W_hat: float
    se: float
    wald_lo: float
    wald_hi: float
    level: float
    treated_fraction: float
    bootstrap_one_sided_lo: float | None = None
    bootstrap_lo: float | None = None
    bootstrap_hi: float | None = None
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_policy(
    table: ObservationTable,
    policy: PolicyRule,
    alpha_list: Sequence[float],
    nuisance_config: NuisanceConfig = NuisanceConfig(),
    nuisance: Nuisance | None = None,
    level: float = 0.95,
    grid_size: int = DEFAULT_GRID_SIZE,
) -> list[WelfareReport]:
    """Estimated welfare of a fixed rule at each alpha, with Wald intervals."""
    from alpha_ewm.inference import wald_ci

    if nuisance is None:
        nuisance = fit_nuisance(table, nuisance_config)
    frac = treated_fraction(policy, table)
    out = []
    for alpha in alpha_list:
        est = estimate_W(table, policy, nuisance, alpha, grid_size=grid_size)
        ci = wald_ci(est.scores, level)
        out.append(
            WelfareReport(
                alpha=float(alpha),
                eta_hat=est.eta_hat,
                W_hat=est.W_hat,
                se=ci.se,
                wald_lo=ci.lo,
                wald_hi=ci.hi,
                level=level,
                treated_fraction=frac,
                settings={"nuisance": asdict(nuisance_config) if nuisance_config else None, "grid_size": grid_size},
            )
        )
    return out

