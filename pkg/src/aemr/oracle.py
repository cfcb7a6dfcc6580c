"""Brute-force reference implementations for checking the engine.

Two independent oracles, both deliberately simple:

* :func:`brute_pairwise` answers, for each unit, the best achievable
  retained weight directly from its pairwise agreements with units of
  the opposite arm. No lattice, no groups; just scan every opposite
  unit and keep the one whose agreement set carries the most weight.

* :func:`brute_enumerate` runs the same grouped matching procedure as
  the engine but over an explicitly enumerated, pre-sorted list of all
  candidate dropped sets, with no lattice bookkeeping at all. Run to
  the same stopping point it must reproduce the engine's output
  exactly, group for group.

Both raise :class:`SizeCapError` rather than attempt an enumeration
that cannot finish.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .bitgroup import MatchedGroup, MatchState, grouped_mr
from .core import ConfigError, CovariateSet, Dataset, SizeCapError, set_weight

__all__ = [
    "PairwiseRecord",
    "brute_pairwise",
    "EnumerateResult",
    "brute_enumerate",
    "enumerate_dropped_sets",
    "check_engine_against_oracles",
]


@dataclass(frozen=True)
class PairwiseRecord:
    """Best pairwise match achievable for one unit.

    ``matched`` is False when the unit shares no observed covariate
    value with any opposite-arm unit, in which case no grouping on a
    nonempty retained set can ever contain it. ``dropped`` is the
    lexicographically-least smallest dropped set achieving
    ``opt_weight``, mirroring the engine's processing order, and is
    only computed when witnesses are requested.
    """

    unit_id: int
    treated: bool
    matched: bool
    opt_weight: float
    dropped: Optional[CovariateSet]


def _pair_keys(d: Dataset) -> np.ndarray:
    """(n, p) uint8 matrix, nonzero where a value can never agree (missing)."""
    if d.missing_mask is None:
        return np.zeros((d.n, d.p), dtype=bool)
    return np.asarray(d.missing_mask, dtype=bool)


def brute_pairwise(
    d: Dataset,
    w: np.ndarray,
    both_sides: bool = False,
    with_witness: bool = True,
) -> list[PairwiseRecord]:
    """Optimal retained weight per unit by direct pairwise scan.

    For each treated unit (each unit, with ``both_sides``) every
    opposite-arm unit is examined; agreement on a covariate requires
    equal codes with neither value missing. The reported optimum is the
    weight of the best nonempty agreement set; ties between dropped
    sets resolve by (size, members) so the witness matches what the
    lattice search realizes.

    ``with_witness=False`` skips witness sets and runs vectorized in
    blocks; use it for large instances where only weights matter.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (d.p,):
        raise ConfigError(f"weights must have length {d.p}")
    missing = _pair_keys(d)
    treated_mask = d.treatment == 1
    targets = np.flatnonzero(treated_mask | both_sides)

    records: list[PairwiseRecord] = []
    for u in targets:
        opp = np.flatnonzero(treated_mask != treated_mask[u])
        if len(opp) == 0:
            records.append(
                PairwiseRecord(int(u), bool(treated_mask[u]), False, 0.0, None)
            )
            continue
        # a covariate disagrees when codes differ or either side is missing
        neq = (d.codes[opp] != d.codes[u]) | missing[opp] | missing[u]
        agree_count = d.p - neq.sum(axis=1)
        usable = agree_count > 0
        if not usable.any():
            records.append(
                PairwiseRecord(int(u), bool(treated_mask[u]), False, 0.0, None)
            )
            continue
        if not with_witness:
            # same arithmetic as set_weight: total minus dropped sum
            scores = w.sum() - (neq[usable] @ w)
            records.append(
                PairwiseRecord(
                    int(u), bool(treated_mask[u]), True, float(scores.max()), None
                )
            )
            continue
        best_key = None
        best_set = None
        best_score = None
        for row in neq[usable]:
            dropped = CovariateSet.of(np.flatnonzero(row))
            score = set_weight(dropped, w)
            key = (-score, len(dropped), dropped.members)
            if best_key is None or key < best_key:
                best_key, best_set, best_score = key, dropped, score
        records.append(
            PairwiseRecord(
                int(u), bool(treated_mask[u]), True, float(best_score), best_set
            )
        )
    return records


@dataclass
class EnumerateResult:
    """Output of the enumeration oracle; mirrors the engine's result shape."""

    groups: tuple[MatchedGroup, ...]
    processed: tuple[CovariateSet, ...]
    state: MatchState


def enumerate_dropped_sets(p: int, w: np.ndarray) -> list[CovariateSet]:
    """Every candidate dropped set in engine processing order.

    The empty set first, then all nonempty proper subsets of the ``p``
    covariates sorted by (-retained weight, size, members). Dropping
    everything is excluded: there would be nothing left to match on.
    """
    sets: list[CovariateSet] = [CovariateSet.empty()]
    for k in range(1, p):
        for members in combinations(range(p), k):
            sets.append(CovariateSet(members))
    sets.sort(key=lambda s: (-set_weight(s, w), len(s), s.members))
    return sets


def brute_enumerate(
    d: Dataset,
    w: np.ndarray,
    p_cap: int = 16,
    stop_when_treated_exhausted: bool = True,
    respect_missing: bool = True,
) -> EnumerateResult:
    """Grouped matching over the explicit sorted list of all dropped sets.

    Processes candidates one by one with the exact group machinery the
    engine uses, but the candidate list is fully enumerated up front,
    which caps usable ``p``. With ``stop_when_treated_exhausted`` the
    loop ends as soon as no unmatched treated unit remains (the
    engine's own guard); disable it to grind through every subset
    unconditionally.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (d.p,):
        raise ConfigError(f"weights must have length {d.p}")
    if d.p > p_cap:
        raise SizeCapError(
            f"p={d.p} exceeds enumeration cap {p_cap}; refusing 2**{d.p} subsets"
        )
    order = enumerate_dropped_sets(d.p, w)
    state = MatchState(d)
    state.weights = w
    processed: list[CovariateSet] = []
    for iteration, s in enumerate(order):
        if stop_when_treated_exhausted and state.n_unmatched_treated() == 0:
            break
        grouped_mr(
            d, state.unmatched_mask(), s.complement(d.p), state, iteration,
            respect_missing,
        )
        processed.append(s)
    return EnumerateResult(
        groups=tuple(state.groups), processed=tuple(processed), state=state
    )


def check_engine_against_oracles(
    d: Dataset,
    w: np.ndarray,
    oracle_weights: Optional[np.ndarray] = None,
    p_cap: int = 16,
) -> list[str]:
    """Run the engine and both oracles on ``d``; list every disagreement.

    An empty return means the engine's groups are identical to the
    enumeration oracle's and every unit's match status, matched-on set
    and achieved weight agree with the pairwise oracle. Passing
    ``oracle_weights`` different from ``w`` runs the oracles against
    other weights than the engine saw, which is how the checker's own
    ability to detect disagreement is exercised.
    """
    from .engine import STOP_LATTICE_EXHAUSTED, EngineConfig, run

    w = np.asarray(w, dtype=np.float64)
    ow = w if oracle_weights is None else np.asarray(oracle_weights, dtype=np.float64)
    problems: list[str] = []

    engine = run(d, EngineConfig(mode="fixed_weight", weights=w))
    enum = brute_enumerate(d, ow, p_cap=p_cap)

    if len(engine.groups) != len(enum.groups):
        problems.append(
            f"group count: engine {len(engine.groups)} vs enumeration {len(enum.groups)}"
        )
    for ge, go in zip(engine.groups, enum.groups):
        if ge != go:
            problems.append(f"group {ge.group_id}: engine {ge!r} vs enumeration {go!r}")
            break  # one structural divergence implies many; report the first

    pairwise = brute_pairwise(d, ow, both_sides=True, with_witness=True)
    treated_exhausted = engine.stop_reason != STOP_LATTICE_EXHAUSTED
    for rec in pairwise:
        u = rec.unit_id
        done = bool(engine.state.done[u])
        if rec.treated or not treated_exhausted:
            # treated units must match iff matchable; the same holds for
            # controls whenever the engine ran the lattice to the end
            if done != rec.matched:
                problems.append(
                    f"unit {u}: engine matched={done}, pairwise matched={rec.matched}"
                )
                continue
        elif done and not rec.matched:
            problems.append(f"unit {u}: engine matched an unmatchable unit")
            continue
        if not done or not rec.matched:
            continue
        group = engine.main_group_of(u)
        dropped = group.retained.complement(d.p)
        if dropped != rec.dropped:
            problems.append(
                f"unit {u}: engine matched dropping {dropped!r}, "
                f"pairwise optimum drops {rec.dropped!r}"
            )
        achieved = engine.trace[group.group_id[0]].retained_weight
        if achieved != rec.opt_weight:
            problems.append(
                f"unit {u}: engine weight {achieved!r} != optimal {rec.opt_weight!r}"
            )
    return problems
