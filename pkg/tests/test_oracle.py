import numpy as np
import pytest

from aemr.core import CovariateSet, CovariateSpec, Dataset, SizeCapError, set_weight
from aemr.engine import EngineConfig, run
from aemr.oracle import (
    brute_enumerate,
    brute_pairwise,
    check_engine_against_oracles,
    enumerate_dropped_sets,
)
from aemr.synthgen import random_categorical_instance


def test_enumeration_order_starts_empty_and_excludes_the_full_set():
    w = np.array([4.0, 2.0, 1.0])
    order = enumerate_dropped_sets(3, w)
    assert order[0] == CovariateSet.empty()
    assert CovariateSet.of([0, 1, 2]) not in order
    assert len(order) == 2**3 - 1
    scores = [set_weight(s, w) for s in order]
    assert scores == sorted(scores, reverse=True)
    # ties in score break by size first, then members
    w2 = np.ones(3)
    sizes = [len(s) for s in enumerate_dropped_sets(3, w2)]
    assert sizes == sorted(sizes)


def test_enumeration_refuses_oversized_problems():
    d, w = random_categorical_instance(0, n_range=(20, 20), p_range=(5, 5))
    with pytest.raises(SizeCapError):
        brute_enumerate(d, w, p_cap=4)


def test_pairwise_on_a_hand_worked_instance():
    # control rows: (0,0), (1,1); treated rows: (0,1), (2,2)
    codes = np.array([[0, 0], [1, 1], [0, 1], [2, 2]])
    treatment = np.array([0, 0, 1, 1], dtype=np.int8)
    specs = [CovariateSpec("a", 3), CovariateSpec("b", 3)]
    d = Dataset(specs, codes, treatment, np.zeros(4))
    w = np.array([2.0, 1.0])
    recs = {r.unit_id: r for r in brute_pairwise(d, w, both_sides=True)}
    # treated (0,1): agrees with control 0 on a (weight 2), with control 1 on b
    assert recs[2].matched and recs[2].opt_weight == 2.0
    assert recs[2].dropped == CovariateSet.of([1])
    # treated (2,2) shares nothing with any control
    assert not recs[3].matched
    # control 0 best partner is treated 2, agreeing on a
    assert recs[0].opt_weight == 2.0 and recs[0].dropped == CovariateSet.of([1])


def test_pairwise_fast_path_matches_witness_path():
    for seed in range(5):
        d, w = random_categorical_instance(seed, n_range=(40, 120))
        slow = brute_pairwise(d, w, both_sides=True, with_witness=True)
        fast = brute_pairwise(d, w, both_sides=True, with_witness=False)
        for a, b in zip(slow, fast):
            assert (a.unit_id, a.matched) == (b.unit_id, b.matched)
            if a.matched:
                assert a.opt_weight == b.opt_weight


def test_pairwise_treats_missing_values_as_disagreement():
    codes = np.array([[0, 0], [0, 0]])
    missing = np.array([[False, True], [False, False]])
    treatment = np.array([0, 1], dtype=np.int8)
    specs = [CovariateSpec("a", 3), CovariateSpec("b", 3)]
    d = Dataset(specs, codes, treatment, np.zeros(2), missing_mask=missing)
    recs = brute_pairwise(d, np.array([1.0, 1.0]), both_sides=True)
    # the pair agrees on covariate 0 only; covariate 1 cannot count
    assert all(r.opt_weight == 1.0 and r.dropped == CovariateSet.of([1]) for r in recs)


def test_enumeration_reproduces_engine_run_exactly():
    for seed in (2, 11, 29):
        d, w = random_categorical_instance(seed, n_range=(30, 120), p_range=(3, 7))
        engine = run(d, EngineConfig(weights=w))
        enum = brute_enumerate(d, w)
        assert engine.groups == enum.groups
        assert (engine.state.done == enum.state.done).all()
        assert (engine.state.main_group_idx == enum.state.main_group_idx).all()


def test_full_enumeration_keeps_matching_after_treated_are_done():
    d, w = random_categorical_instance(4, n_range=(60, 60), p_range=(4, 4))
    stopped = brute_enumerate(d, w, stop_when_treated_exhausted=True)
    full = brute_enumerate(d, w, stop_when_treated_exhausted=False)
    assert len(full.processed) == 2**4 - 1
    assert len(full.processed) >= len(stopped.processed)
    assert full.state.done.sum() >= stopped.state.done.sum()


def test_checker_reports_nothing_on_a_healthy_engine():
    for seed in range(6):
        d, w = random_categorical_instance(seed)
        assert check_engine_against_oracles(d, w) == []


def test_checker_detects_weight_disagreement():
    hits = 0
    for seed in range(5):
        d, w = random_categorical_instance(seed)
        shifted = w.copy()
        shifted[int(np.argmax(shifted))] += 0.5
        if check_engine_against_oracles(d, w, oracle_weights=shifted):
            hits += 1
    assert hits == 5
