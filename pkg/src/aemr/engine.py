"""Matching engine: lattice-ordered search over dropped covariate sets.

Each iteration picks one dropped set, forms every valid matched group
on the complementary retained covariates, and permanently matches the
units that were still unmatched (already-matched units keep joining new
groups as auxiliaries). Iteration 0 always matches exactly, on every
covariate; afterwards candidates come from the dynamic lattice, which
only activates a dropped set once all of its proper subsets have been
processed.

Two selection modes:

* ``fixed_weight``: each candidate is scored by the total weight of the
  covariates it retains, with weights supplied up front or derived once
  from a holdout by permutation importance. Candidates are kept in a
  heap keyed by (-score, size, members), which together with downward
  closure makes the realized processing order identical to sorting all
  subsets by that key; the score column of the trace is therefore
  non-increasing.

* ``adaptive_mq``: each active candidate is re-scored every iteration
  as ``C * balancing_factor - prediction_error`` against the holdout,
  trading off how many currently unmatched units the set would match
  against how much outcome signal its dropped covariates carried.

Stopping: no unmatched treated units remain, the lattice empties, an
iteration cap is hit, the next candidate would drop a covariate heavier
than ``early_stop_before_important``, or (adaptive mode only) the
prediction error of the chosen candidate degrades too far from the
exact-matching baseline or the matched fractions of the two arms drift
too far apart.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bitgroup import (
    MatchedGroup,
    MatchState,
    _segments,
    group_by,
    grouped_mr,
    prune,
)
from .core import ConfigError, CovariateSet, Dataset, set_weight
from .holdout import (
    balancing_factor,
    match_quality,
    permutation_importance,
    prediction_error,
    weights_from_importance,
)
from .lattice import LatticeState

__all__ = [
    "EngineConfig",
    "IterationRecord",
    "MatchResult",
    "run",
    "run_elimination_baseline",
    "STOP_ALL_TREATED_MATCHED",
    "STOP_LATTICE_EXHAUSTED",
    "STOP_MAX_ITERATIONS",
    "STOP_PE_DEGRADATION",
    "STOP_BALANCE_GAP",
    "STOP_EARLY_WEIGHT",
]

STOP_ALL_TREATED_MATCHED = "all_treated_matched"
STOP_LATTICE_EXHAUSTED = "lattice_exhausted"
STOP_MAX_ITERATIONS = "max_iterations"
STOP_PE_DEGRADATION = "pe_degradation"
STOP_BALANCE_GAP = "balance_gap"
STOP_EARLY_WEIGHT = "early_stop_weight"

MODE_FIXED = "fixed_weight"
MODE_ADAPTIVE = "adaptive_mq"


@dataclass(frozen=True)
class EngineConfig:
    """Run parameters. Only fields relevant to the chosen mode are consulted.

    ``weights`` may be omitted in fixed mode when a holdout is supplied;
    they are then derived by permutation importance. Adaptive mode
    always needs a holdout. ``max_pe_degradation_fraction`` and
    ``max_balance_ratio_gap`` act in adaptive mode only; either can be
    set to None to disable that stopping rule.
    """

    mode: str = MODE_FIXED
    weights: Optional[np.ndarray] = None
    tradeoff_c: float = 1.0
    max_pe_degradation_fraction: Optional[float] = 0.05
    max_balance_ratio_gap: Optional[float] = 0.10
    max_iterations: Optional[int] = None
    early_stop_before_important: Optional[float] = None
    missing_enabled: bool = True
    ridge_lambda: float = 0.1
    importance_shuffles: int = 100
    seed: int = 0


@dataclass(frozen=True)
class IterationRecord:
    """Trace row for one processed dropped set."""

    iteration: int
    dropped: CovariateSet
    retained_weight: float
    pe: Optional[float]
    bf: Optional[float]
    mq: Optional[float]
    n_groups: int
    n_new_treated: int
    n_new_control: int
    n_unmatched_treated: int
    n_unmatched_control: int


@dataclass
class MatchResult:
    """Everything a finished run produced.

    ``groups`` lists matched groups in creation order; ``trace`` has one
    record per processed iteration; ``weights`` is the resolved weight
    vector (supplied or derived). ``timing_seconds`` is wall-clock and
    deliberately excluded from any serialized/canonical form.
    """

    groups: tuple[MatchedGroup, ...]
    trace: tuple[IterationRecord, ...]
    weights: np.ndarray
    stop_reason: str
    config: EngineConfig
    state: MatchState
    timing_seconds: float = 0.0

    def matched_unit_ids(self) -> np.ndarray:
        return np.flatnonzero(self.state.done)

    def main_group_of(self, unit_id: int) -> Optional[MatchedGroup]:
        idx = int(self.state.main_group_idx[unit_id])
        return None if idx < 0 else self.state.groups[idx]


def _resolve_weights(
    d: Dataset, config: EngineConfig, holdout: Optional[Dataset]
) -> np.ndarray:
    if config.weights is not None:
        w = np.asarray(config.weights, dtype=np.float64).copy()
        if w.shape != (d.p,):
            raise ConfigError(f"weights must have length {d.p}, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or (w < 0).any():
            raise ConfigError("weights must be finite and nonnegative")
        return w
    if holdout is None:
        raise ConfigError(
            "no weights supplied and no holdout to derive them from"
        )
    scores = permutation_importance(
        holdout,
        n_shuffles=config.importance_shuffles,
        ridge_lambda=config.ridge_lambda,
        seed=config.seed,
    )
    return weights_from_importance(scores)


def _dry_run_counts(
    d: Dataset, retained: CovariateSet, unmatched: np.ndarray, respect_missing: bool
) -> tuple[int, int]:
    """Count (treated, control) units a retained set would newly match."""
    seg = _segments(d, retained, respect_missing)
    if seg is None:
        res = group_by(d, retained, None, respect_missing=respect_missing)
        mt = mc = 0
        for g in prune(res.groups):
            members = np.asarray(g.unit_ids, dtype=np.int64)
            new = members[unmatched[members]]
            if len(new):
                t = int(d.treatment[new].sum())
                mt += t
                mc += len(new) - t
        return mt, mc
    sorted_ids, starts = seg
    if len(sorted_ids) == 0:
        return 0, 0
    treated = (d.treatment[sorted_ids] == 1).astype(np.int64)
    new = unmatched[sorted_ids]
    seg_len = np.diff(np.append(starts, len(sorted_ids)))
    n_t = np.add.reduceat(treated, starts)
    n_c = seg_len - n_t
    valid = (n_t >= 1) & (n_c >= 1)
    new_t = np.add.reduceat((treated & new).astype(np.int64), starts)
    new_any = np.add.reduceat(new.astype(np.int64), starts)
    return int(new_t[valid].sum()), int((new_any - new_t)[valid].sum())


class _FixedSelector:
    """Heap over active sets keyed by (-retained weight, size, members)."""

    def __init__(self, weights: np.ndarray):
        self.weights = weights
        self.heap: list[tuple[float, int, tuple[int, ...]]] = []
        self.by_members: dict[tuple[int, ...], CovariateSet] = {}

    def push_all(self, sets) -> None:
        for s in sets:
            score = set_weight(s, self.weights)
            heapq.heappush(self.heap, (-score, len(s), s.members))
            self.by_members[s.members] = s

    def pop(self) -> tuple[CovariateSet, float]:
        neg, _, members = heapq.heappop(self.heap)
        return self.by_members.pop(members), -neg


def _select_adaptive(
    d: Dataset,
    holdout: Dataset,
    lattice: LatticeState,
    state: MatchState,
    config: EngineConfig,
    pe_cache: dict[CovariateSet, float],
) -> tuple[CovariateSet, float, float, float]:
    """Re-score every active set and return (s, pe, bf, mq) of the best."""
    unmatched = state.unmatched_mask()
    rem_t = state.n_unmatched_treated()
    rem_c = state.n_unmatched_control()
    best = None
    for s in lattice.active_sets():
        retained = s.complement(d.p)
        pe = pe_cache.get(s)
        if pe is None:
            pe = prediction_error(holdout, retained, config.ridge_lambda)
            pe_cache[s] = pe
        mt, mc = _dry_run_counts(d, retained, unmatched, config.missing_enabled)
        bf = balancing_factor(mc, rem_c, mt, rem_t)
        mq = match_quality(pe, bf, config.tradeoff_c)
        key = (-mq, len(s), s.members)
        if best is None or key < best[0]:
            best = (key, s, pe, bf, mq)
    assert best is not None
    return best[1], best[2], best[3], best[4]


def run(
    d: Dataset, config: EngineConfig, holdout: Optional[Dataset] = None
) -> MatchResult:
    """Run the full matching loop on ``d`` and return the result."""
    t0 = time.perf_counter()
    if config.mode not in (MODE_FIXED, MODE_ADAPTIVE):
        raise ConfigError(f"unknown mode {config.mode!r}")
    adaptive = config.mode == MODE_ADAPTIVE
    if adaptive and holdout is None:
        raise ConfigError("adaptive mode requires a holdout dataset")
    if holdout is not None and holdout.p != d.p:
        raise ConfigError("holdout covariate layout differs from matching data")

    weights = _resolve_weights(d, config, holdout)
    state = MatchState(d)
    lattice = LatticeState(d.p)
    state.lattice = lattice
    state.weights = weights
    respect_missing = config.missing_enabled

    selector = None
    if not adaptive:
        selector = _FixedSelector(weights)
        selector.push_all(lattice.active_sets())
    pe_cache: dict[CovariateSet, float] = {}
    pe_baseline: Optional[float] = None
    all_covs = CovariateSet.of(range(d.p))

    def record(
        iteration: int,
        dropped: CovariateSet,
        pe: Optional[float],
        bf: Optional[float],
        mq: Optional[float],
        emitted,
        newly,
    ) -> None:
        new_t = int(d.treatment[list(newly)].sum()) if newly else 0
        state.trace.append(
            IterationRecord(
                iteration=iteration,
                dropped=dropped,
                retained_weight=set_weight(dropped, weights),
                pe=pe,
                bf=bf,
                mq=mq,
                n_groups=len(emitted),
                n_new_treated=new_t,
                n_new_control=len(newly) - new_t,
                n_unmatched_treated=state.n_unmatched_treated(),
                n_unmatched_control=state.n_unmatched_control(),
            )
        )

    # iteration 0: exact matching on every covariate
    rem_t0, rem_c0 = state.n_unmatched_treated(), state.n_unmatched_control()
    newly, _, emitted = grouped_mr(
        d, state.unmatched_mask(), all_covs, state, 0, respect_missing
    )
    pe0 = bf0 = mq0 = None
    if holdout is not None:
        pe0 = prediction_error(holdout, all_covs, config.ridge_lambda)
        pe_baseline = pe0
        new_t = int(d.treatment[list(newly)].sum()) if newly else 0
        bf0 = balancing_factor(len(newly) - new_t, rem_c0, new_t, rem_t0)
        mq0 = match_quality(pe0, bf0, config.tradeoff_c)
    record(0, CovariateSet.empty(), pe0, bf0, mq0, emitted, newly)

    stop_reason = None
    iteration = 0
    while True:
        if state.n_unmatched_treated() == 0:
            stop_reason = STOP_ALL_TREATED_MATCHED
            break
        if lattice.n_active() == 0:
            stop_reason = STOP_LATTICE_EXHAUSTED
            break
        iteration += 1
        if config.max_iterations is not None and iteration > config.max_iterations:
            stop_reason = STOP_MAX_ITERATIONS
            break

        pe = bf = mq = None
        if adaptive:
            s, pe, bf, mq = _select_adaptive(
                d, holdout, lattice, state, config, pe_cache
            )
            if (
                config.max_pe_degradation_fraction is not None
                and pe_baseline is not None
                and pe
                > pe_baseline * (1.0 + config.max_pe_degradation_fraction)
            ):
                stop_reason = STOP_PE_DEGRADATION
                break
        else:
            s, _ = selector.pop()

        if config.early_stop_before_important is not None and len(s) > 0:
            heaviest = float(weights[list(s.members)].max())
            if heaviest > config.early_stop_before_important:
                stop_reason = STOP_EARLY_WEIGHT
                break

        activated = lattice.mark_processed(s)
        if not adaptive:
            selector.push_all(activated)

        newly, _, emitted = grouped_mr(
            d, state.unmatched_mask(), s.complement(d.p), state, iteration,
            respect_missing,
        )
        record(iteration, s, pe, bf, mq, emitted, newly)

        if adaptive and config.max_balance_ratio_gap is not None:
            n_t = int((d.treatment == 1).sum())
            n_c = d.n - n_t
            frac_t = state.n_matched_treated() / n_t if n_t else 0.0
            frac_c = state.n_matched_control() / n_c if n_c else 0.0
            if abs(frac_t - frac_c) > config.max_balance_ratio_gap:
                stop_reason = STOP_BALANCE_GAP
                break

    elapsed = time.perf_counter() - t0
    return MatchResult(
        groups=tuple(state.groups),
        trace=tuple(state.trace),
        weights=weights,
        stop_reason=stop_reason,
        config=config,
        state=state,
        timing_seconds=elapsed,
    )


def run_elimination_baseline(
    d: Dataset,
    weights: np.ndarray,
    max_iterations: Optional[int] = None,
    respect_missing: bool = True,
) -> MatchResult:
    """Backward-elimination baseline: drop one covariate per iteration, forever.

    Starts from exact matching, then repeatedly discards the
    lowest-weight covariate still retained. Dropped covariates never
    come back, so all matches after iteration k share one nested
    retained set. Exists as a comparison point for the lattice search;
    uses the same group machinery and trace format.
    """
    t0 = time.perf_counter()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (d.p,):
        raise ConfigError(f"weights must have length {d.p}")
    state = MatchState(d)
    state.weights = weights

    dropped: list[int] = []
    iteration = 0
    stop_reason = None
    while True:
        retained_members = [j for j in range(d.p) if j not in dropped]
        drop_set = CovariateSet.of(dropped)
        retained = CovariateSet.of(retained_members)
        newly, _, emitted = grouped_mr(
            d, state.unmatched_mask(), retained, state, iteration, respect_missing
        )
        new_t = int(d.treatment[list(newly)].sum()) if newly else 0
        state.trace.append(
            IterationRecord(
                iteration=iteration,
                dropped=drop_set,
                retained_weight=set_weight(drop_set, weights),
                pe=None,
                bf=None,
                mq=None,
                n_groups=len(emitted),
                n_new_treated=new_t,
                n_new_control=len(newly) - new_t,
                n_unmatched_treated=state.n_unmatched_treated(),
                n_unmatched_control=state.n_unmatched_control(),
            )
        )
        if state.n_unmatched_treated() == 0:
            stop_reason = STOP_ALL_TREATED_MATCHED
            break
        if len(retained_members) == 1:
            stop_reason = STOP_LATTICE_EXHAUSTED
            break
        iteration += 1
        if max_iterations is not None and iteration > max_iterations:
            stop_reason = STOP_MAX_ITERATIONS
            break
        # drop the cheapest remaining covariate; ties resolve to the
        # lowest index so runs are reproducible
        next_drop = min(retained_members, key=lambda j: (weights[j], j))
        dropped = sorted(dropped + [next_drop])

    elapsed = time.perf_counter() - t0
    return MatchResult(
        groups=tuple(state.groups),
        trace=tuple(state.trace),
        weights=weights,
        stop_reason=stop_reason,
        config=EngineConfig(mode=MODE_FIXED, weights=weights),
        state=state,
        timing_seconds=elapsed,
    )
