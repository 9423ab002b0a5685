"""Observation tables, CSV ingestion and fold partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from alpha_ewm._rng import generator


class DataError(ValueError):
    """Base class for ingestion and validation failures."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class CapabilityError(DataError):
    """Raised when an operation needs counterfactual columns the table lacks."""


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Immutable sample of (covariates, outcome, treatment).

    ``y0``/``y1`` hold both potential outcomes when the table comes from a
    synthetic superpopulation.
    """

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    known_propensity: float | None = None
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValidationError("covariates must form an (n, p) array with p >= 1")
        n = x.shape[0]
        if n < 1:
            raise ValidationError("table must have at least one row")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        a_raw = np.asarray(self.a).reshape(-1)
        if y.shape[0] != n or a_raw.shape[0] != n:
            raise ValidationError("x, y and a must have the same number of rows")
        if not np.all((a_raw == 0) | (a_raw == 1)):
            bad = int(np.flatnonzero(~((a_raw == 0) | (a_raw == 1)))[0])
            raise ValidationError(f"treatment must be 0 or 1 (row {bad})")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("all numeric entries must be finite")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "a", _frozen(a_raw, np.int8))

        if (self.y0 is None) != (self.y1 is None):
            raise ValidationError("counterfactual columns y0 and y1 must be given together")
        if self.y0 is not None:
            y0 = np.asarray(self.y0, dtype=np.float64).reshape(-1)
            y1 = np.asarray(self.y1, dtype=np.float64).reshape(-1)
            if y0.shape[0] != n or y1.shape[0] != n:
                raise ValidationError("counterfactual columns must have n rows")
            if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(y1))):
                raise ValidationError("counterfactual outcomes must be finite")
            realized = np.where(self.a == 1, y1, y0)
            if not np.array_equal(realized, self.y):
                bad = int(np.flatnonzero(realized != self.y)[0])
                raise ValidationError(f"y != a*y1 + (1-a)*y0 at row {bad}")
            object.__setattr__(self, "y0", _frozen(y0))
            object.__setattr__(self, "y1", _frozen(y1))
        if self.known_propensity is not None:
            e = float(self.known_propensity)
            if not 0.0 < e < 1.0:
                raise ValidationError("known_propensity must lie in (0, 1)")
            object.__setattr__(self, "known_propensity", e)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValidationError("covariate_names must have length p")
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def has_counterfactuals(self) -> bool:
        return self.y0 is not None

    def require_counterfactuals(self):
        if not self.has_counterfactuals:
            raise CapabilityError("operation needs counterfactual columns y0/y1")

    def subset(self, rows) -> "ObservationTable":
        rows = np.asarray(rows)
        return ObservationTable(
            x=self.x[rows],
            y=self.y[rows],
            a=self.a[rows],
            y0=None if self.y0 is None else self.y0[rows],
            y1=None if self.y1 is None else self.y1[rows],
            known_propensity=self.known_propensity,
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class Schema:
    covariates: tuple[str, ...]
    outcome: str
    treatment: str
    y0: str | None = None
    y1: str | None = None

    @classmethod
    def from_mapping(cls, m: Mapping) -> "Schema":
        try:
            cov = m["covariates"]
            if isinstance(cov, str):
                cov = [c.strip() for c in cov.split(",") if c.strip()]
            return cls(
                covariates=tuple(cov),
                outcome=m["outcome"],
                treatment=m["treatment"],
                y0=m.get("y0"),
                y1=m.get("y1"),
            )
        except KeyError as exc:
            raise SchemaError(f"schema is missing key {exc.args[0]!r}") from None


def load_table(path, schema: Schema | Mapping, known_propensity: float | None = None) -> ObservationTable:
    """Read a header-row CSV into a validated :class:`ObservationTable`."""
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "no such file", str(path))
    if not schema.covariates:
        raise SchemaError("schema must name at least one covariate column")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        wanted = [*schema.covariates, schema.outcome, schema.treatment]
        if schema.y0 or schema.y1:
            if not (schema.y0 and schema.y1):
                raise SchemaError("y0 and y1 columns must be named together")
            wanted += [schema.y0, schema.y1]
        index = {}
        for col in wanted:
            if col not in header:
                raise SchemaError(f"missing column {col!r}")
            index[col] = header.index(col)
        cols = {c: [] for c in wanted}
        for row_idx, row in enumerate(reader):
            if not row:
                continue
            for col in wanted:
                j = index[col]
                cell = row[j].strip() if j < len(row) else ""
                if cell == "":
                    raise ParseError(f"missing value in column {col!r} at row {row_idx}")
                try:
                    cols[col].append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r} in column {col!r} at row {row_idx}") from None
    if not cols[schema.outcome]:
        raise ValidationError(f"{path} has no data rows")
    a = np.asarray(cols[schema.treatment])
    if not np.all((a == 0) | (a == 1)):
        bad = int(np.flatnonzero(~((a == 0) | (a == 1)))[0])
        raise ValidationError(f"treatment value {a[bad]!r} outside {{0,1}} at row {bad}")
    x = np.column_stack([cols[c] for c in schema.covariates])
    return ObservationTable(
        x=x,
        y=cols[schema.outcome],
        a=a.astype(np.int8),
        y0=cols[schema.y0] if schema.y0 else None,
        y1=cols[schema.y1] if schema.y1 else None,
        known_propensity=known_propensity,
        covariate_names=schema.covariates,
    )


def write_table(table: ObservationTable, path, outcome: str = "y", treatment: str = "a") -> Schema:
    """Write ``table`` as CSV (floats in round-trip repr) and return its schema."""
    names = list(table.covariate_names)
    header = [*names, outcome, treatment]
    if table.has_counterfactuals:
        header += ["y0", "y1"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(table.n):
            row = [repr(float(v)) for v in table.x[i]]
            row += [repr(float(table.y[i])), str(int(table.a[i]))]
            if table.has_counterfactuals:
                row += [repr(float(table.y0[i])), repr(float(table.y1[i]))]
            w.writerow(row)
    return Schema(
        covariates=tuple(names),
        outcome=outcome,
        treatment=treatment,
        y0="y0" if table.has_counterfactuals else None,
        y1="y1" if table.has_counterfactuals else None,
    )


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """``fold_of[i]`` is the 0-based fold of row ``i``."""

    K: int
    fold_of: np.ndarray

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)

    def __eq__(self, other):
        return isinstance(other, FoldAssignment) and self.K == other.K and np.array_equal(self.fold_of, other.fold_of)


def partition_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Random partition of ``range(n)`` into ``K`` folds of size floor/ceil(n/K)."""
    if K < 2 or K > n:
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = generator(seed, n, K).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % K
    fold_of.setflags(write=False)
    return FoldAssignment(K=K, fold_of=fold_of)

