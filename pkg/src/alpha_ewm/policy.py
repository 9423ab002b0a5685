"""Deterministic treatment rules and the restricted classes they are learned from."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

_POWERS = {"identity": 1, "square": 2, "cube": 3}


@dataclass(frozen=True)
class Feature:
    """A unary transform of one covariate column (``x[:, column] ** power``)."""

    column: int
    transform: str = "identity"

    def __post_init__(self):
        if self.transform not in _POWERS:
            raise ValueError(f"unknown transform {self.transform!r}; expected one of {sorted(_POWERS)}")
        if self.column < 0:
            raise ValueError("feature column must be non-negative")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x[:, self.column] ** _POWERS[self.transform]

    def label(self, names: Sequence[str] | None = None) -> str:
        base = names[self.column] if names else f"x{self.column + 1}"
        p = _POWERS[self.transform]
        return base if p == 1 else f"{base}^{p}"


def identity_features(p: int) -> tuple[Feature, ...]:
    return tuple(Feature(j) for j in range(p))


def feature_matrix(x: np.ndarray, features: Sequence[Feature]) -> np.ndarray:
    """Precomputed transformed columns; the linear score is ``b0 + F @ b[1:]``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for f in features:
        if f.column >= x.shape[1]:
            raise ValueError(f"feature column {f.column} out of range for p={x.shape[1]}")
    return np.column_stack([f.apply(x) for f in features]) if features else np.empty((x.shape[0], 0))


@dataclass(frozen=True)
class Constant:
    value: int

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError("constant policy value must be 0 or 1")

    def decide_many(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], self.value, dtype=np.int8)


@dataclass(frozen=True)
class LinearHalfSpace:
    """``1{beta[0] + <beta[1:], features(x)> > 0}``; ties at zero go to control.

    ``features=None`` means the identity transform of every covariate, in
    which case ``len(beta) == p + 1``.
    """

    beta: tuple[float, ...]
    features: tuple[Feature, ...] | None = None

    def __post_init__(self):
        b = tuple(float(v) for v in np.asarray(self.beta, dtype=np.float64).reshape(-1))
        if len(b) < 2:
            raise ValueError("beta needs an intercept and at least one slope")
        if not all(np.isfinite(b)):
            raise ValueError("beta must be finite")
        if not any(b):
            raise ValueError("beta must be non-zero")
        object.__setattr__(self, "beta", b)
        if self.features is not None:
            feats = tuple(self.features)
            if len(feats) != len(b) - 1:
                raise ValueError("len(beta) must equal 1 + number of features")
            object.__setattr__(self, "features", feats)

    def resolved_features(self, p: int) -> tuple[Feature, ...]:
        if self.features is None:
            if len(self.beta) != p + 1:
                raise ValueError(f"beta has length {len(self.beta)}, expected p+1={p + 1}")
            return identity_features(p)
        return self.features

    def score(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        F = feature_matrix(x, self.resolved_features(x.shape[1]))
        b = np.asarray(self.beta)
        return b[0] + F @ b[1:]

    def decide_many(self, x: np.ndarray) -> np.ndarray:
        return (self.score(x) > 0).astype(np.int8)


@dataclass(frozen=True)
class FeatureThreshold:
    """``1{x[j] <= c}`` (direction ``"<="``) or ``1{x[j] > c}`` (direction ``">"``)."""

    feature: int
    cutoff: float
    direction: str = "<="

    def __post_init__(self):
        if self.direction not in ("<=", ">"):
            raise ValueError("direction must be '<=' or '>'")
        object.__setattr__(self, "cutoff", float(self.cutoff))

    def decide_many(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.feature >= x.shape[1]:
            raise ValueError(f"feature index {self.feature} out of range for p={x.shape[1]}")
        col = x[:, self.feature]
        hit = col <= self.cutoff if self.direction == "<=" else col > self.cutoff
        return hit.astype(np.int8)


PolicyRule = Union[Constant, LinearHalfSpace, FeatureThreshold]


def decide(policy: PolicyRule, x) -> int | np.ndarray:
    """Treatment decision for one covariate vector (returns int) or a matrix of rows."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        if isinstance(policy, LinearHalfSpace):
            policy.resolved_features(arr.shape[0])
        return int(policy.decide_many(arr[None, :])[0])
    if isinstance(policy, LinearHalfSpace):
        policy.resolved_features(arr.shape[1])
    return policy.decide_many(arr)


def canonicalize(policy: LinearHalfSpace) -> LinearHalfSpace:
    b = np.asarray(policy.beta)
    top = np.max(np.abs(b))
    if top == 0 or not np.isfinite(top):
        raise ValueError("cannot canonicalize a zero coefficient vector")
    # rescale first so tiny coefficients do not underflow in the norm
    b = b / top
    return LinearHalfSpace(tuple(b / np.linalg.norm(b)), policy.features)


def normalize_on(policy: LinearHalfSpace, index: int) -> LinearHalfSpace:
    """Rescale so that ``|beta[index]| == 1``; same decision boundary."""
    b = np.asarray(policy.beta)
    if b[index] == 0:
        raise ValueError("cannot normalize on a zero coefficient")
    return LinearHalfSpace(tuple(b / abs(b[index])), policy.features)


def treated_fraction(policy: PolicyRule, table) -> float:
    return float(np.mean(decide(policy, table.x)))


def describe(policy: PolicyRule, names: Sequence[str] | None = None) -> str:
    if isinstance(policy, Constant):
        return "treat all" if policy.value else "treat none"
    if isinstance(policy, FeatureThreshold):
        name = names[policy.feature] if names else f"x{policy.feature + 1}"
        return f"1[{name} {policy.direction} {policy.cutoff:.6g}]"
    feats = policy.features or identity_features(len(policy.beta) - 1)
    terms = [f"{policy.beta[0]:.6g}"] + [f"{b:+.6g}*{f.label(names)}" for b, f in zip(policy.beta[1:], feats)]
    return "1[" + " ".join(terms) + " > 0]"


def policy_to_dict(policy: PolicyRule) -> dict:
    if isinstance(policy, Constant):
        return {"kind": "constant", "value": policy.value}
    if isinstance(policy, FeatureThreshold):
        return {"kind": "threshold", "feature": policy.feature, "cutoff": policy.cutoff, "direction": policy.direction}
    out = {"kind": "linear", "beta": list(policy.beta)}
    if policy.features is not None:
        out["features"] = [{"column": f.column, "transform": f.transform} for f in policy.features]
    return out


def policy_from_dict(d: dict) -> PolicyRule:
    kind = d.get("kind")
    if kind == "constant":
        return Constant(int(d["value"]))
    if kind == "threshold":
        return FeatureThreshold(int(d["feature"]), float(d["cutoff"]), d.get("direction", "<="))
    if kind == "linear":
        feats = d.get("features")
        if feats is not None:
            feats = tuple(Feature(int(f["column"]), f.get("transform", "identity")) for f in feats)
        return LinearHalfSpace(tuple(d["beta"]), feats)
    raise ValueError(f"unknown policy kind {kind!r}")


def policy_to_json(policy: PolicyRule) -> str:
    return json.dumps(policy_to_dict(policy))


def policy_from_json(text: str) -> PolicyRule:
    return policy_from_dict(json.loads(text))


@dataclass(frozen=True)
class PolicyClassSpec:
    """Descriptor of a restricted policy class.

    kind ``"constant"`` is the pair {treat none, treat all}; ``"linear"`` is
    half-spaces over ``features`` (empty means identity on every covariate);
    ``"threshold"`` is ``1{x[feature] <= c}`` with ``c`` in ``cutoff_range``.
    """

    kind: str
    features: tuple[Feature, ...] = ()
    feature: int = 0
    cutoff_range: tuple[float, float] | None = None
    direction: str = "<="

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "threshold"):
            raise ValueError(f"unknown policy class {self.kind!r}")
        object.__setattr__(self, "features", tuple(self.features))
        if self.kind == "threshold":
            if self.direction not in ("<=", ">"):
                raise ValueError("direction must be '<=' or '>'")
            if self.cutoff_range is not None:
                lo, hi = (float(v) for v in self.cutoff_range)
                if not lo < hi:
                    raise ValueError("cutoff range is degenerate")
                object.__setattr__(self, "cutoff_range", (lo, hi))

    @classmethod
    def constant_pair(cls) -> "PolicyClassSpec":
        return cls("constant")

    @classmethod
    def linear(cls, features: Sequence[Feature] = ()) -> "PolicyClassSpec":
        return cls("linear", features=tuple(features))

    @classmethod
    def threshold(cls, feature: int = 0, cutoff_range=None, direction: str = "<=") -> "PolicyClassSpec":
        return cls("threshold", feature=feature, cutoff_range=cutoff_range, direction=direction)

    def resolved_features(self, p: int) -> tuple[Feature, ...]:
        feats = self.features or identity_features(p)
        for f in feats:
            if f.column >= p:
                raise ValueError(f"feature column {f.column} out of range for p={p}")
        return feats

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant"}
        if self.kind == "linear":
            return {"kind": "linear", "features": [{"column": f.column, "transform": f.transform} for f in self.features]}
        return {
            "kind": "threshold",
            "feature": self.feature,
            "cutoff_range": list(self.cutoff_range) if self.cutoff_range else None,
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyClassSpec":
        kind = d.get("kind")
        if kind == "linear":
            feats = tuple(Feature(int(f["column"]), f.get("transform", "identity")) for f in d.get("features") or ())
            return cls.linear(feats)
        if kind == "threshold":
            return cls.threshold(int(d.get("feature", 0)), d.get("cutoff_range"), d.get("direction", "<="))
        if kind == "constant":
            return cls.constant_pair()
        raise ValueError(f"unknown policy class {kind!r}")
