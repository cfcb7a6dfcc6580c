"""Treatment-effect estimates from matched groups.

Every matched group carries all units that agree on its retained
covariates, main and auxiliary alike, so the group-level effect is
simply the difference of the treated and control outcome means over the
full membership. Each unit then inherits the estimate of the group it
was first matched in (its main group); averaging those per-unit values
over the treated units gives the overall effect on the treated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bitgroup import MatchedGroup
from .core import ConfigError, Dataset
from .engine import MatchResult

__all__ = ["CateRecord", "group_cate", "estimate_cates", "ate"]


@dataclass(frozen=True)
class CateRecord:
    """Per-unit effect estimate, taken from the unit's main group."""

    unit_id: int
    treated: bool
    group_id: tuple[int, int]
    cate: float
    n_group_treated: int
    n_group_control: int


def group_cate(d: Dataset, group: MatchedGroup) -> float:
    """Difference of mean treated and mean control outcomes over all members."""
    members = np.asarray(group.members, dtype=np.int64)
    t = d.treatment[members] == 1
    if not t.any() or t.all():
        raise ConfigError("matched group must contain both treated and control units")
    y = d.outcome[members]
    return float(y[t].mean() - y[~t].mean())


def estimate_cates(d: Dataset, result: MatchResult) -> tuple[CateRecord, ...]:
    """One record per matched unit, ordered by unit id.

    The group-level estimate is computed once per group and shared by
    the group's main members; auxiliary membership never changes a
    unit's own estimate.
    """
    cache: dict[int, float] = {}
    records: list[CateRecord] = []
    main_idx = result.state.main_group_idx
    for u in np.flatnonzero(result.state.done):
        gidx = int(main_idx[u])
        if gidx < 0:
            raise ConfigError(f"unit {u} marked done without a main group")
        val = cache.get(gidx)
        group = result.state.groups[gidx]
        if val is None:
            val = group_cate(d, group)
            cache[gidx] = val
        records.append(
            CateRecord(
                unit_id=int(u),
                treated=bool(d.treatment[u] == 1),
                group_id=group.group_id,
                cate=val,
                n_group_treated=group.n_treated,
                n_group_control=group.n_control,
            )
        )
    return tuple(records)


def ate(records: Iterable[CateRecord] | Sequence[CateRecord]) -> float:
    """Average effect over the matched treated units.

    Matching runs aim to match every treated unit, so this estimates
    the effect on the treated population. Raises when no treated unit
    was matched.
    """
    vals = [r.cate for r in records if r.treated]
    if not vals:
        raise ConfigError("no matched treated units to average over")
    return float(np.mean(vals))
