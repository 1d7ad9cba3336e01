import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mask, vec
from hetfl.errors import ConfigError
from hetfl.masks import (CoverageTracker, MaskStrategy, check_noise_bound, coverage, gen_mask,
                         identical_assignment, keep_count, kept_fraction, optimize_assignment)
from hetfl.params import ParamVector, make_layout, reduction_noise


def bits(strategy, theta, client=0, round=0, seed=0):
    return gen_mask(strategy, theta, client, round, seed).bits.tolist()


def test_magnitude_example():
    s = MaskStrategy("magnitude", {0: 0.5})
    assert bits(s, vec([0.5, -2, 1, 0.1])) == [0, 1, 1, 0]


def test_static_and_rolling_examples():
    theta = vec([1.0, 2, 3, 4])
    assert bits(MaskStrategy("static-subnet", {0: 0.5}), theta) == [1, 1, 0, 0]
    rolling = MaskStrategy("rolling-subnet", {0: 0.5})
    assert bits(rolling, theta, round=0) == [1, 1, 0, 0]
    assert bits(rolling, theta, round=1) == [0, 0, 1, 1]
    # start offset (round * k) mod len = 4 mod 4 = 0
    assert bits(rolling, theta, round=2) == [1, 1, 0, 0]
    assert bits(MaskStrategy("rolling-subnet", {0: 0.75}), theta, round=1) == [1, 1, 0, 1]


def test_full_ignores_beta_and_exempt_layers_are_kept():
    layout = make_layout([("W", 4), ("out", 2)])
    theta = ParamVector(np.arange(1.0, 7.0), layout)
    assert bits(MaskStrategy("full", {0: 0.25}), theta) == [1] * 6
    s = MaskStrategy("static-subnet", {0: 0.5}, exempt_layers=frozenset({"out"}))
    assert bits(s, theta) == [1, 1, 0, 0, 1, 1]


def test_every_layer_keeps_ceil_beta_len():
    layout = make_layout([("a", 7), ("b", 3), ("c", 10)])
    theta = ParamVector(np.random.default_rng(0).standard_normal(20), layout)
    for kind in ("magnitude", "static-subnet", "rolling-subnet", "random", "coverage-optimized"):
        m = gen_mask(MaskStrategy(kind, {0: 0.4}), theta, 0, 3, 1)
        assert [int(m.layer(n).sum()) for n in "abc"] == [3, 2, 4]


def test_empty_layer_violation():
    with pytest.raises(ConfigError):
        keep_count(0.1, 5)
    with pytest.raises(ConfigError):
        gen_mask(MaskStrategy("magnitude", {0: 0.1}), vec(np.ones(5)), 0, 0)
    with pytest.raises(ConfigError):
        MaskStrategy("magnitude", {0: 0.0})


def test_random_masks_are_seeded():
    theta = vec(np.ones(30))
    s = MaskStrategy("random", {0: 0.5, 1: 0.5})
    assert bits(s, theta, 0, 4, 9) == bits(s, theta, 0, 4, 9)
    assert bits(s, theta, 0, 4, 9) != bits(s, theta, 1, 4, 9)
    assert bits(s, theta, 0, 4, 9) != bits(s, theta, 0, 5, 9)


@pytest.mark.parametrize("masks, counts, gamma", [
    ([[1, 1, 0], [0, 1, 1], [1, 0, 1]], [2, 2, 2], 2),
    ([[1, 1, 1]] * 4, [4, 4, 4], 4),
    ([[1, 0]], [1, 0], 0),
])
def test_coverage_examples(masks, counts, gamma):
    rep = coverage([mask(m) for m in masks])
    assert rep.per_param_counts.tolist() == counts
    assert rep.gamma_min_round == gamma


def test_coverage_errors_and_running_minimum():
    with pytest.raises(ConfigError):
        coverage([])
    t = CoverageTracker()
    t.update([mask([1, 1]), mask([1, 1])])
    t.update([mask([1, 0]), mask([1, 1])])
    assert t.update([mask([1, 1]), mask([1, 1])]).gamma_min_running == 1
    assert t.running == 1


def test_effective_gamma_ignores_parameters_nobody_holds():
    rep = coverage([mask([1, 1, 0]), mask([1, 1, 0])])
    assert rep.gamma_min_round == 0 and rep.effective_gamma_min == 2 and rep.uncovered == 1


def four_full_six_half():
    return {c: (1.0 if c < 4 else 0.5) for c in range(10)}


def gamma_for(strategy, length=8, clients=range(10)):
    theta = vec(np.arange(1.0, length + 1))
    return coverage({c: gen_mask(strategy, theta, c, 0) for c in clients}).gamma_min_round


def test_four_full_six_half_identical_vs_optimized():
    caps = four_full_six_half()
    assert gamma_for(identical_assignment(caps)) == 4
    assert gamma_for(optimize_assignment(caps, [8])) == 7


def test_optimize_assignment_small_examples():
    assert gamma_for(optimize_assignment({c: 1.0 for c in range(5)}, [6]), 6, range(5)) == 5
    two = {0: 0.5, 1: 0.5}
    assert gamma_for(optimize_assignment(two, [4]), 4, range(2)) == 1
    assert gamma_for(identical_assignment(two), 4, range(2)) == 0
    assert optimize_assignment({0: 0.5}, [4]).degenerate


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([1.0, 0.75, 0.5, 1 / 3, 0.25]), min_size=1, max_size=12),
       st.lists(st.integers(4, 40), min_size=1, max_size=3))
def test_optimized_coverage_never_below_identical(betas, lengths):
    caps = dict(enumerate(betas))
    layout = make_layout((f"l{i}", n) for i, n in enumerate(lengths))
    theta = ParamVector(np.ones(sum(lengths)), layout)
    opt = optimize_assignment(caps, lengths)
    ident = identical_assignment(caps)
    g_opt = coverage({c: gen_mask(opt, theta, c, 0) for c in caps}).gamma_min_round
    g_id = coverage({c: gen_mask(ident, theta, c, 0) for c in caps}).gamma_min_round
    assert g_opt >= g_id
    assert opt.degenerate == (g_opt == 0)


@pytest.mark.parametrize("n", range(1, 13))
@pytest.mark.parametrize("beta", [0.25, 0.5, 0.75, 1.0])
def test_magnitude_mask_minimises_noise_exhaustively(n, beta):
    rng = np.random.default_rng(n)
    values = rng.standard_normal(n)
    values[rng.integers(0, n)] = values[0]  # include a tie
    theta = vec(values)
    k = keep_count(beta, n) if beta * n >= 1 else None
    if k is None:
        return
    best = reduction_noise(theta, gen_mask(MaskStrategy("magnitude", {0: beta}), theta, 0, 0))
    for keep in itertools.combinations(range(n), k):
        b = np.zeros(n, dtype=np.uint8)
        b[list(keep)] = 1
        assert best <= reduction_noise(theta, mask(b))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.sampled_from([0.25, 0.5, 0.75]), st.integers(0, 1000))
def test_rolling_subnet_covers_every_coordinate(length, beta, start):
    if beta * length < 1:
        return
    theta = vec(np.ones(length))
    s = MaskStrategy("rolling-subnet", {0: beta})
    k = keep_count(beta, length)
    window = -(-length // k)
    total = sum(np.asarray(gen_mask(s, theta, 0, start + r).bits, dtype=int) for r in range(length))
    assert total.min() >= 1
    total = sum(np.asarray(gen_mask(s, theta, 0, r).bits, dtype=int) for r in range(window))
    assert total.min() >= 1


def test_noise_bound_examples():
    theta = vec([1.0, 1, 1, 1])
    full = check_noise_bound(theta, [mask([1] * 4)] * 3, 0.1)
    assert list(full.per_client.values()) == [0, 0, 0] and full.flagged == ()
    half = gen_mask(MaskStrategy("magnitude", {0: 0.5}), theta, 0, 0)
    rep = check_noise_bound(theta, {7: half}, 0.4)
    assert rep.per_client[7] == 0.5 and rep.flagged == (7,)
    with pytest.raises(ConfigError):
        check_noise_bound(theta, [half], 1.0)


def test_kept_fraction():
    assert kept_fraction([mask([1, 1, 0, 0]), mask([1, 1, 1, 1])]) == 0.75
