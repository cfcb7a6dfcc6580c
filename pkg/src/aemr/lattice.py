"""Dynamic lattice of candidate dropped-covariate sets.

The search walks the subset lattice of covariate indices from small
dropped sets toward larger ones. A set becomes *active* (eligible for
processing) only after every one of its proper subsets has been
processed; this downward closure means the walk can never skip past a
cheaper superset and guarantees each treated unit is matched on its
highest-weight agreeing subset the first time it matches at all.

New active sets are generated incrementally: when a size-k set ``s`` is
processed, only supersets of ``s`` of size k+1 can newly qualify, and a
candidate covariate ``alpha`` must appear in at least k of the
processed size-k sets for ``s + {alpha}`` to have any chance of having
all subsets processed. The final explicit all-subsets check makes the
generation exact, not just a heuristic.
"""

from __future__ import annotations

from collections import Counter
from itertools import combinations
from typing import Iterable, Optional

import numpy as np

from .core import ConfigError, CovariateSet

__all__ = [
    "generate_new_active_sets",
    "brute_eligible",
    "LatticeState",
]


def generate_new_active_sets(
    processed: Iterable[CovariateSet], s: CovariateSet
) -> list[CovariateSet]:
    """All size-(k+1) supersets of ``s`` whose every size-k subset is processed.

    ``processed`` must already include ``s`` itself (the caller marks
    ``s`` processed before asking what it newly activates). Only the
    processed sets of size k = |s| matter; the support pre-filter keeps
    the candidate covariates down to those appearing in at least k such
    sets before the exact subset check runs.
    """
    k = len(s)
    delta_k = [q for q in processed if len(q) == k]
    if s not in delta_k:
        raise ConfigError("s must be marked processed before generating from it")
    processed_keys = {q.members for q in delta_k}

    support: Counter[int] = Counter()
    for q in delta_k:
        support.update(q.members)

    # covariates whose support reaches k, excluding members of s itself
    omega = sorted(a for a, c in support.items() if c >= k and a not in s)

    out: list[CovariateSet] = []
    if any(support[j] < k for j in s):
        # some member of s is itself under-supported; no superset can qualify
        return out
    for alpha in omega:
        r = s.union_one(alpha)
        if all(sub in processed_keys for sub in combinations(r.members, k)):
            out.append(r)
    return out


def brute_eligible(
    processed: Iterable[CovariateSet],
    s: CovariateSet,
    universe: Optional[int] = None,
) -> list[CovariateSet]:
    """Enumeration oracle for :func:`generate_new_active_sets`.

    Tries every covariate in ``universe`` (default: all covariates
    mentioned by any processed set) and keeps ``s + {alpha}`` when all
    of its size-|s| subsets are processed. Exponentially dumber but
    obviously correct.
    """
    k = len(s)
    processed_keys = {q.members for q in processed}
    if s.members not in processed_keys:
        raise ConfigError("s must be marked processed before generating from it")
    if universe is None:
        seen: set[int] = set()
        for q in processed:
            seen.update(q.members)
        candidates = sorted(seen - set(s.members))
    else:
        candidates = [a for a in range(universe) if a not in s]

    out = []
    for alpha in candidates:
        r = s.union_one(alpha)
        if all(sub in processed_keys for sub in combinations(r.members, k)):
            out.append(r)
    return out


class LatticeState:
    """Active/processed bookkeeping for the dropped-set lattice.

    Starts with all singletons active (nothing processed). Processing a
    set moves it from active to processed and activates exactly the new
    sets :func:`generate_new_active_sets` yields, except that sets
    covering all ``p`` covariates are never activated: dropping
    everything would leave nothing to match on.

    With ``p == 1`` the active set starts empty for the same reason.
    """

    def __init__(self, p: int):
        if p < 1:
            raise ConfigError("need at least one covariate")
        self.p = p
        self.active: set[CovariateSet] = set()
        self.processed: set[CovariateSet] = set()
        # per-size index of processed sets and member support counts,
        # maintained incrementally so activation cost stays local
        self._by_size: dict[int, list[CovariateSet]] = {}
        self._support: dict[int, Counter] = {}
        if p > 1:
            for j in range(p):
                self.active.add(CovariateSet.of([j]))

    def __contains__(self, s: CovariateSet) -> bool:
        return s in self.active

    def n_active(self) -> int:
        return len(self.active)

    def active_sets(self) -> list[CovariateSet]:
        """Active sets in deterministic (size, members) order."""
        return sorted(self.active, key=lambda s: s.order_key())

    def mark_processed(self, s: CovariateSet) -> list[CovariateSet]:
        """Process ``s``: retire it from the active set, activate its successors.

        Returns the newly activated sets (size-p sets already withheld).
        """
        if s not in self.active:
            raise ConfigError(f"set {s!r} is not active")
        self.active.discard(s)
        self.processed.add(s)
        k = len(s)
        self._by_size.setdefault(k, []).append(s)
        self._support.setdefault(k, Counter()).update(s.members)

        new = self._generate_from(s)
        activated = []
        for r in new:
            if len(r) >= self.p:
                continue  # would drop every covariate
            if r in self.active or r in self.processed:
                continue
            self.active.add(r)
            activated.append(r)
        return activated

    def _generate_from(self, s: CovariateSet) -> list[CovariateSet]:
        # same computation as generate_new_active_sets, but against the
        # incrementally maintained per-size indexes
        k = len(s)
        delta_k = self._by_size.get(k, [])
        support = self._support.get(k, Counter())
        processed_keys = {q.members for q in delta_k}

        if any(support[j] < k for j in s):
            return []
        omega = sorted(a for a, c in support.items() if c >= k and a not in s)
        out = []
        for alpha in omega:
            r = s.union_one(alpha)
            if all(sub in processed_keys for sub in combinations(r.members, k)):
                out.append(r)
        return out
