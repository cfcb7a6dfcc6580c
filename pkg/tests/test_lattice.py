import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aemr.core import ConfigError, CovariateSet
from aemr.lattice import LatticeState, brute_eligible, generate_new_active_sets

S = CovariateSet.of


def test_worked_generation_example():
    # after processing {2,3}, with these size-1 and size-2 sets already
    # processed, exactly {1,2,3} becomes active: 1 is the only covariate
    # with enough support and all of {1,2}, {1,3}, {2,3} are processed
    processed = [S([1]), S([2]), S([3]), S([5]),
                 S([1, 2]), S([1, 3]), S([1, 5]), S([2, 3])]
    assert generate_new_active_sets(processed, S([2, 3])) == [S([1, 2, 3])]


def test_support_alone_is_not_enough():
    # covariate 5 has support 2 here, but {2,3,5} must be rejected
    # because its subset {2,5} was never processed
    processed = [S([1, 2]), S([1, 3]), S([3, 5]), S([5, 6]), S([2, 3])]
    out = generate_new_active_sets(processed, S([2, 3]))
    assert S([2, 3, 5]) not in out
    assert out == [S([1, 2, 3])]


def test_generation_requires_s_to_be_processed():
    with pytest.raises(ConfigError):
        generate_new_active_sets([S([1])], S([2]))
    with pytest.raises(ConfigError):
        brute_eligible([S([1])], S([2]))


def test_underpowered_member_support_short_circuits():
    # {7} appears in only one size-2 processed set, so nothing above
    # {7,8} can have every subset processed
    processed = [S([7, 8])]
    assert generate_new_active_sets(processed, S([7, 8])) == []


@st.composite
def processed_families(draw):
    p = draw(st.integers(2, 10))
    k = draw(st.integers(1, min(4, p - 1)))
    universe = list(range(p))
    n_sets = draw(st.integers(1, 40))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    fam = {tuple(sorted(rng.choice(universe, size=k, replace=False)))
           for _ in range(n_sets)}
    s = tuple(sorted(rng.choice(universe, size=k, replace=False)))
    fam.add(s)
    return [S(m) for m in fam], S(s), p


@given(processed_families())
@settings(max_examples=300, deadline=None)
def test_incremental_generation_matches_enumeration(fam):
    processed, s, p = fam
    got = generate_new_active_sets(processed, s)
    want = brute_eligible(processed, s, universe=p)
    assert sorted(got, key=lambda q: q.members) == sorted(
        want, key=lambda q: q.members
    )


@given(processed_families())
@settings(max_examples=150, deadline=None)
def test_generated_sets_extend_s_by_one(fam):
    processed, s, _ = fam
    for r in generate_new_active_sets(processed, s):
        assert len(r) == len(s) + 1
        assert s.issubset(r)


# ------------------------------------------------------------ LatticeState


def test_state_starts_with_singletons_active():
    lat = LatticeState(4)
    assert sorted(q.members for q in lat.active_sets()) == [(0,), (1,), (2,), (3,)]
    assert lat.n_active() == 4


def test_single_covariate_has_nothing_to_drop():
    lat = LatticeState(1)
    assert lat.n_active() == 0


def test_processing_moves_and_activates():
    lat = LatticeState(3)
    assert lat.mark_processed(S([0])) == []
    assert lat.mark_processed(S([1])) == [S([0, 1])]
    assert S([0, 1]) in lat.active
    assert S([0]) in lat.processed
    with pytest.raises(ConfigError):
        lat.mark_processed(S([0]))  # no longer active


def test_full_cover_sets_are_never_activated():
    lat = LatticeState(2)
    lat.mark_processed(S([0]))
    new = lat.mark_processed(S([1]))
    assert new == []  # {0,1} would drop everything
    assert lat.n_active() == 0


def _drain(p, order_key=lambda s: s.order_key()):
    """Process the whole lattice in a deterministic order, recording it."""
    lat = LatticeState(p)
    sequence = []
    while lat.n_active():
        s = min(lat.active_sets(), key=order_key)
        lat.mark_processed(s)
        sequence.append(s)
    return lat, sequence


@pytest.mark.parametrize("p", [2, 3, 4, 5, 6])
def test_draining_visits_every_proper_nonempty_subset(p):
    lat, sequence = _drain(p)
    assert len(sequence) == 2**p - 2
    assert len(set(sequence)) == len(sequence)
    assert all(0 < len(s) < p for s in sequence)


@pytest.mark.parametrize("p", [3, 4, 5, 6])
def test_downward_closure_along_any_drain(p):
    rng = np.random.default_rng(p)
    # random processing priority still never violates subset-first order
    priorities = {(): 0.0}
    key = lambda s: (priorities.setdefault(s.members, rng.random()), s.members)
    _, sequence = _drain(p, order_key=key)
    seen = set()
    for s in sequence:
        for j in s.members:
            sub = tuple(x for x in s.members if x != j)
            if sub:
                assert sub in seen, f"{s} processed before its subset {sub}"
        seen.add(s.members)
