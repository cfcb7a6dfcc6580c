"""Core domain types for almost-exact matching on categorical covariates.

Covariates are addressed by 0-based integer index everywhere in the
library; the CLI maps column names to indices at ingestion. Category
values are dense integer codes in [0, arity). When missing values are
enabled, the reserved code ``arity - 1`` marks a missing entry and the
dataset's ``missing_mask`` records where those entries are.

All types here are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "MatchingError",
    "ConfigError",
    "DatasetValidationError",
    "SizeCapError",
    "CovariateSpec",
    "Dataset",
    "CovariateSet",
    "indicator_of",
    "set_weight",
    "validate_dataset",
]


class MatchingError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MatchingError):
    """Invalid or inconsistent configuration."""


class SizeCapError(MatchingError):
    """A brute-force routine was asked to exceed its size cap."""


class DatasetValidationError(MatchingError):
    """A dataset failed validation; ``issues`` lists every violation."""

    def __init__(self, issues: Sequence[str]):
        super().__init__("; ".join(issues))
        self.issues = list(issues)


@dataclass(frozen=True)
class CovariateSpec:
    """Name and arity of one categorical covariate.

    ``arity`` counts the category levels, including the missing
    sentinel level when missing handling is enabled.
    """

    name: str
    arity: int

    def __post_init__(self):
        if self.arity < 2:
            raise ConfigError(f"covariate {self.name!r}: arity must be >= 2, got {self.arity}")


@dataclass(frozen=True)
class CovariateSet:
    """An immutable set of covariate indices (a candidate set to drop).

    ``members`` is a sorted, duplicate-free tuple. ``mask`` is the
    matching bitmask (bit i set iff i is a member), giving O(1) subset
    tests for any number of covariates since Python ints are unbounded.
    """

    members: tuple[int, ...]

    def __post_init__(self):
        m = self.members
        if any(m[i] >= m[i + 1] for i in range(len(m) - 1)) or any(j < 0 for j in m):
            raise ValueError(f"members must be sorted, non-negative and duplicate-free: {m}")

    @classmethod
    def of(cls, indices: Iterable[int]) -> "CovariateSet":
        return cls(tuple(sorted(set(int(i) for i in indices))))

    @classmethod
    def empty(cls) -> "CovariateSet":
        return _EMPTY_SET

    @cached_property
    def mask(self) -> int:
        m = 0
        for j in self.members:
            m |= 1 << j
        return m

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, j: int) -> bool:
        return j in self.members

    def __iter__(self):
        return iter(self.members)

    def issubset(self, other: "CovariateSet") -> bool:
        return self.mask & other.mask == self.mask

    def union_one(self, j: int) -> "CovariateSet":
        if j in self:
            return self
        return CovariateSet(tuple(sorted(self.members + (j,))))

    def complement(self, p: int) -> "CovariateSet":
        """Covariates in [0, p) not in this set (the retained set when dropping self)."""
        return CovariateSet(tuple(j for j in range(p) if j not in self))

    def order_key(self) -> tuple:
        """Deterministic tie-break key: smaller sets first, then lexicographic."""
        return (len(self.members), self.members)

    def __repr__(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


_EMPTY_SET = CovariateSet(())


class Dataset:
    """Immutable table of units: covariate codes, treatment, outcome.

    Args:
        specs: one CovariateSpec per covariate column, names unique.
        codes: (n, p) integer category codes, each in [0, arity).
        treatment: (n,) array of 0/1 treatment indicators.
        outcome: (n,) array of real outcomes.
        missing_mask: optional (n, p) boolean array, True where the
            original entry was unobserved. Presence of a mask enables
            missing-aware grouping downstream.
        label_maps: optional per-covariate dict code -> original label,
            retained for reporting only.

    Arrays are copied and frozen; the constructor checks shapes and
    dtypes only. Value-level invariants are checked by
    :func:`validate_dataset`, which reports every violation rather
    than raising on the first.
    """

    def __init__(
        self,
        specs: Sequence[CovariateSpec],
        codes: np.ndarray,
        treatment: np.ndarray,
        outcome: np.ndarray,
        missing_mask: Optional[np.ndarray] = None,
        label_maps: Optional[Sequence[dict]] = None,
    ):
        specs = tuple(specs)
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError("covariate names must be unique")

        codes = np.ascontiguousarray(codes, dtype=np.int64)
        treatment = np.ascontiguousarray(treatment, dtype=np.int8)
        outcome = np.ascontiguousarray(outcome, dtype=np.float64)
        if codes.ndim != 2:
            raise ConfigError(f"codes must be 2-D, got shape {codes.shape}")
        n, p = codes.shape
        if p != len(specs):
            raise ConfigError(f"codes have {p} columns but {len(specs)} specs given")
        if treatment.shape != (n,) or outcome.shape != (n,):
            raise ConfigError("treatment and outcome must be 1-D with one entry per unit")
        if missing_mask is not None:
            missing_mask = np.ascontiguousarray(missing_mask, dtype=bool)
            if missing_mask.shape != (n, p):
                raise ConfigError(f"missing_mask must have shape {(n, p)}")
            missing_mask.setflags(write=False)
        for arr in (codes, treatment, outcome):
            arr.setflags(write=False)

        self.specs = specs
        self.codes = codes
        self.treatment = treatment
        self.outcome = outcome
        self.missing_mask = missing_mask
        self.label_maps = tuple(label_maps) if label_maps is not None else None

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def p(self) -> int:
        return self.codes.shape[1]

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(s.arity for s in self.specs)

    def covariate_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def n_treated(self) -> int:
        return int((self.treatment == 1).sum())

    def n_control(self) -> int:
        return int((self.treatment == 0).sum())

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, p={self.p}, treated={self.n_treated()})"


def indicator_of(s: CovariateSet, p: int) -> np.ndarray:
    """Indicator vector of the retained covariates when dropping ``s``.

    Returns a length-``p`` uint8 vector with 1 exactly at indices not in
    ``s``: the covariates that remain available for matching.
    """
    if len(s) and s.members[-1] >= p:
        raise ConfigError(f"covariate index {s.members[-1]} out of range for p={p}")
    v = np.ones(p, dtype=np.uint8)
    if len(s):
        v[list(s.members)] = 0
    return v


def set_weight(s: CovariateSet, w: np.ndarray) -> float:
    """Total weight retained when dropping ``s``: sum of w over indices not in s."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ConfigError("weight vector must be 1-D")
    if len(s) and s.members[-1] >= w.shape[0]:
        raise ConfigError(f"covariate index {s.members[-1]} out of range for p={w.shape[0]}")
    if not len(s):
        return float(w.sum())
    return float(w.sum() - w[list(s.members)].sum())


def validate_dataset(d: Dataset) -> list[str]:
    """Check every dataset invariant; returns a list of violations (empty = ok).

    Reported violations carry row/column locations so callers can emit
    actionable diagnostics. Matching runs additionally require at least
    one treated and one control unit, which is reported here too.
    """
    issues: list[str] = []
    for j, spec in enumerate(d.specs):
        col = d.codes[:, j]
        bad = np.where((col < 0) | (col >= spec.arity))[0]
        for i in bad[:20]:
            issues.append(
                f"row {i}, covariate {spec.name!r} (col {j}): code {col[i]} outside [0, {spec.arity})"
            )
        if len(bad) > 20:
            issues.append(f"covariate {spec.name!r} (col {j}): {len(bad) - 20} further out-of-range rows")
    bad_t = np.where((d.treatment != 0) & (d.treatment != 1))[0]
    for i in bad_t[:20]:
        issues.append(f"row {i}: treatment value {d.treatment[i]} is not binary")
    if len(bad_t) > 20:
        issues.append(f"{len(bad_t) - 20} further non-binary treatment rows")
    bad_y = np.where(~np.isfinite(d.outcome))[0]
    for i in bad_y[:20]:
        issues.append(f"row {i}: outcome is not finite")
    if len(bad_y) > 20:
        issues.append(f"{len(bad_y) - 20} further non-finite outcome rows")
    if d.n_treated() == 0:
        issues.append("dataset has no treated units")
    if d.n_control() == 0:
        issues.append("dataset has no control units")
    return issues
