"""Exact group-by on retained covariates via mixed-radix integer keys.

Each unit's retained covariate codes are packed into a single integer
key so that two units share a key exactly when they agree on every
retained covariate. A second key additionally embeds the treatment bit
as the lowest digit, which lets valid groups (at least one treated and
one control member) be detected by frequency counting.

The packing is true mixed-radix: digit j is scaled by the product of
the arities of digits 0..j-1. For all-binary data this coincides with
plain bit packing; for mixed arities it stays injective. When the key
space fits in a signed 64-bit integer the encoding runs vectorized in
numpy; otherwise it falls back to exact Python integers (dict grouping
hashes the key and verifies equality on collision, so collisions are
never silent).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ConfigError, CovariateSet, Dataset

__all__ = [
    "encode_units",
    "group_by",
    "prune",
    "grouped_mr",
    "RawGroup",
    "GroupByResult",
    "MatchedGroup",
    "MatchState",
]

# leave headroom below 2**63 so key arithmetic can never wrap
_INT64_KEY_LIMIT = 1 << 62


def _multipliers(arities: Sequence[int]) -> tuple[list[int], int]:
    """Mixed-radix place values for the given digit arities (lowest digit first).

    Returns (multipliers, total key-space size).
    """
    mult = []
    acc = 1
    for k in arities:
        mult.append(acc)
        acc *= int(k)
    return mult, acc


def encode_units(d: Dataset, retained: CovariateSet) -> tuple[np.ndarray, np.ndarray]:
    """Pack each unit's retained covariate codes into grouping keys.

    Returns ``(b, b_plus)`` where ``b`` encodes the retained codes and
    ``b_plus`` additionally embeds the treatment bit as the lowest
    digit (``b_plus = t + 2 * b``). Two units have equal ``b`` iff they
    agree on every retained covariate.
    """
    if len(retained) == 0:
        raise ConfigError("retained covariate set must be nonempty")
    cols = list(retained.members)
    arities = [d.specs[j].arity for j in cols]
    mult, size = _multipliers(arities)

    if 2 * size <= _INT64_KEY_LIMIT:
        m = np.asarray(mult, dtype=np.int64)
        b = d.codes[:, cols] @ m
        b_plus = d.treatment.astype(np.int64) + 2 * b
        return b, b_plus

    # exact big-int fallback for huge key spaces
    codes = d.codes[:, cols]
    t = d.treatment
    b = np.empty(d.n, dtype=object)
    b_plus = np.empty(d.n, dtype=object)
    for i in range(d.n):
        acc = 0
        row = codes[i]
        for v, mu in zip(row, mult):
            acc += int(v) * mu
        b[i] = acc
        b_plus[i] = int(t[i]) + 2 * acc
    return b, b_plus


@dataclass(frozen=True)
class RawGroup:
    """One exact-match cell: units sharing every retained covariate value."""

    key: int
    key_values: tuple[int, ...]
    unit_ids: tuple[int, ...]
    n_treated: int
    n_control: int


@dataclass(frozen=True)
class GroupByResult:
    groups: tuple[RawGroup, ...]
    ineligible: tuple[int, ...]  # units excluded for missing values on retained covariates


def group_by(
    d: Dataset,
    retained: CovariateSet,
    eligible: Optional[Iterable[int]] = None,
    respect_missing: bool = True,
) -> GroupByResult:
    """Partition eligible units by equality on the retained covariates.

    Units with a missing value among the retained covariates are never
    placed in a group; they are returned in the ``ineligible`` bucket
    (matching on the missing sentinel would be meaningless). Groups are
    ordered by ascending key and unit ids ascend within each group, so
    the output is independent of input row order up to unit ids.
    """
    if len(retained) == 0:
        raise ConfigError("retained covariate set must be nonempty")
    if eligible is None:
        ids = np.arange(d.n, dtype=np.int64)
    else:
        ids = np.asarray(sorted(int(i) for i in eligible), dtype=np.int64)
        if len(ids) and (ids[0] < 0 or ids[-1] >= d.n):
            raise ConfigError("eligible unit ids out of range")

    ineligible: tuple[int, ...] = ()
    if respect_missing and d.missing_mask is not None and len(ids):
        miss = d.missing_mask[np.ix_(ids, list(retained.members))].any(axis=1)
        ineligible = tuple(int(i) for i in ids[miss])
        ids = ids[~miss]

    if len(ids) == 0:
        return GroupByResult((), ineligible)

    b, _ = encode_units(d, retained)
    keys = b[ids]
    cols = list(retained.members)
    treat = d.treatment

    groups: list[RawGroup] = []
    if keys.dtype == object:
        buckets: dict[int, list[int]] = {}
        for i, k in zip(ids, keys):
            buckets.setdefault(k, []).append(int(i))
        ordered = sorted(buckets.items())
    else:
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        sorted_ids = ids[order]
        cuts = np.flatnonzero(np.diff(sorted_keys)) + 1
        ordered = [
            (int(chunk_keys[0]), [int(i) for i in chunk_ids])
            for chunk_keys, chunk_ids in zip(
                np.split(sorted_keys, cuts), np.split(sorted_ids, cuts)
            )
        ]
    for key, members in ordered:
        first = members[0]
        kv = tuple(int(v) for v in d.codes[first, cols])
        nt = int(treat[members].sum())
        groups.append(
            RawGroup(
                key=key,
                key_values=kv,
                unit_ids=tuple(members),
                n_treated=nt,
                n_control=len(members) - nt,
            )
        )
    return GroupByResult(tuple(groups), ineligible)


def prune(groups: Iterable[RawGroup]) -> tuple[RawGroup, ...]:
    """Keep exactly the groups with at least one treated and one control unit."""
    return tuple(g for g in groups if g.n_treated >= 1 and g.n_control >= 1)


def _segments(
    d: Dataset, retained: CovariateSet, respect_missing: bool
) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Eligible unit ids sorted by grouping key, plus segment start offsets.

    Vectorized core shared by the hot paths; segment boundaries mark key
    changes, so each segment is one would-be group in ascending key
    order with ascending unit ids inside. Returns None when the key
    space forces the big-int fallback; callers then go through
    :func:`group_by` instead.
    """
    ids = np.arange(d.n, dtype=np.int64)
    if respect_missing and d.missing_mask is not None:
        miss = d.missing_mask[:, list(retained.members)].any(axis=1)
        ids = ids[~miss]
    if len(ids) == 0:
        return ids, np.empty(0, dtype=np.int64)
    b, _ = encode_units(d, retained)
    keys = b[ids]
    if keys.dtype == object:
        return None
    order = np.argsort(keys, kind="stable")
    sorted_ids = ids[order]
    sorted_keys = keys[order]
    starts = np.concatenate(
        [np.zeros(1, dtype=np.int64), np.flatnonzero(np.diff(sorted_keys)) + 1]
    )
    return sorted_ids, starts


@dataclass(frozen=True)
class MatchedGroup:
    """A valid matched group emitted by one iteration.

    ``main_members`` were matched here for the first time;
    ``aux_members`` were matched earlier and participate with
    replacement (their outcomes still enter this group's effect
    estimate). ``retained`` is the covariate set the members agree on.
    """

    group_id: tuple[int, int]  # (iteration, rank of key within the iteration)
    retained: CovariateSet
    key_values: tuple[int, ...]
    members: tuple[int, ...]
    n_treated: int
    n_control: int
    main_members: tuple[int, ...]
    aux_members: tuple[int, ...]

    def check(self) -> None:
        """Assert the structural invariants; used by tests and debug paths."""
        assert self.n_treated >= 1 and self.n_control >= 1
        assert set(self.main_members) | set(self.aux_members) == set(self.members)
        assert not (set(self.main_members) & set(self.aux_members))


class MatchState:
    """Mutable bookkeeping for one matching run.

    Owned by a single run; per-unit ``done`` flags, the main-group
    assignment, auxiliary memberships, the flat group list, and the
    per-iteration trace all live here. The engine attaches its lattice
    and resolved weight vector so stopping rules can be evaluated from
    the state alone.
    """

    def __init__(self, d: Dataset):
        n = d.n
        self.done = np.zeros(n, dtype=bool)
        self.main_group_idx = np.full(n, -1, dtype=np.int64)
        self.auxiliary: list[list[int]] = [[] for _ in range(n)]
        self.groups: list[MatchedGroup] = []
        self.trace: list = []  # engine IterationRecord entries
        self.treatment = d.treatment
        self.lattice = None
        self.weights: Optional[np.ndarray] = None

    def unmatched_mask(self) -> np.ndarray:
        return ~self.done

    def n_unmatched_treated(self) -> int:
        return int((~self.done & (self.treatment == 1)).sum())

    def n_unmatched_control(self) -> int:
        return int((~self.done & (self.treatment == 0)).sum())

    def n_matched_treated(self) -> int:
        return int((self.done & (self.treatment == 1)).sum())

    def n_matched_control(self) -> int:
        return int((self.done & (self.treatment == 0)).sum())


def _as_mask(unmatched: Iterable[int] | np.ndarray, n: int) -> np.ndarray:
    if isinstance(unmatched, np.ndarray) and unmatched.dtype == bool:
        if unmatched.shape != (n,):
            raise ConfigError("unmatched mask has wrong length")
        return unmatched
    mask = np.zeros(n, dtype=bool)
    for i in unmatched:
        mask[int(i)] = True
    return mask


def grouped_mr(
    d: Dataset,
    unmatched: Iterable[int] | np.ndarray,
    retained: CovariateSet,
    state: MatchState,
    iteration: int,
    respect_missing: bool = True,
) -> tuple[tuple[int, ...], np.ndarray, tuple[MatchedGroup, ...]]:
    """Form all valid matched groups on ``retained`` over the whole dataset.

    Groups are built over every eligible unit of ``d`` (not only the
    unmatched ones) so that already-matched units can participate with
    replacement. A group is emitted only when it is valid after pruning
    AND matches at least one previously unmatched unit; those units
    become its main members and are recorded as done in ``state``,
    while already-matched members join as auxiliaries.

    Returns ``(newly_matched_ids, remaining_unmatched_mask, emitted_groups)``.
    """
    unmatched_mask = _as_mask(unmatched, d.n)
    emitted: list[MatchedGroup] = []
    newly: list[int] = []
    rank = 0

    def take(member_arr: np.ndarray, key_values, n_treated: int, n_control: int):
        nonlocal rank
        is_new = unmatched_mask[member_arr]
        mains = tuple(int(i) for i in member_arr[is_new])
        auxs = tuple(int(i) for i in member_arr[~is_new])
        mg = MatchedGroup(
            group_id=(iteration, rank),
            retained=retained,
            key_values=key_values,
            members=tuple(int(i) for i in member_arr),
            n_treated=n_treated,
            n_control=n_control,
            main_members=mains,
            aux_members=auxs,
        )
        rank += 1
        state.groups.append(mg)
        gidx = len(state.groups) - 1
        for u in mains:
            state.done[u] = True
            state.main_group_idx[u] = gidx
        for u in auxs:
            state.auxiliary[u].append(gidx)
        emitted.append(mg)
        newly.extend(mains)

    seg = _segments(d, retained, respect_missing)
    if seg is None:
        # big-int keys: go through the reference grouping
        for g in prune(group_by(d, retained, None, respect_missing).groups):
            member_arr = np.asarray(g.unit_ids, dtype=np.int64)
            if unmatched_mask[member_arr].any():
                take(member_arr, g.key_values, g.n_treated, g.n_control)
    else:
        sorted_ids, starts = seg
        if len(sorted_ids):
            treated = (d.treatment[sorted_ids] == 1).astype(np.int64)
            seg_len = np.diff(np.append(starts, len(sorted_ids)))
            n_t = np.add.reduceat(treated, starts)
            n_c = seg_len - n_t
            n_new = np.add.reduceat(
                unmatched_mask[sorted_ids].astype(np.int64), starts
            )
            cols = list(retained.members)
            for gi in np.flatnonzero((n_t >= 1) & (n_c >= 1) & (n_new >= 1)):
                lo = starts[gi]
                member_arr = sorted_ids[lo : lo + seg_len[gi]]
                kv = tuple(int(v) for v in d.codes[member_arr[0], cols])
                take(member_arr, kv, int(n_t[gi]), int(n_c[gi]))

    newly_ids = tuple(sorted(newly))
    remaining = unmatched_mask.copy()
    if newly_ids:
        remaining[list(newly_ids)] = False
    return newly_ids, remaining, tuple(emitted)
