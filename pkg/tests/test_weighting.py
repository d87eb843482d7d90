import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conformal_evalues import WeightingScheme, normalize, trimmed_mean_weight, ttest_weight, uniform_weight
from conformal_evalues.weighting import MAX_TTEST_WEIGHT, normalize_log, trimmed_mean_log_weight

from oracles import pooled_t

# |t| of [1,2,3,4] vs [10,12] from scipy.stats.ttest_ind(equal_var=True)
TTEST_EXAMPLE = 7.419408268023742


def test_uniform():
    assert uniform_weight(4).normalized.tolist() == [0.25] * 4
    assert uniform_weight(1).normalized.tolist() == [1.0]
    assert np.allclose(uniform_weight(3).normalized, 1 / 3, atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        uniform_weight(0)


def test_ttest_example():
    assert ttest_weight([1, 2, 3, 4, 10, 12], 1 / 3) == pytest.approx(TTEST_EXAMPLE, abs=1e-12)
    assert ttest_weight([12, 3, 10, 1, 4, 2], 1 / 3) == ttest_weight([1, 2, 3, 4, 10, 12], 1 / 3)


def test_ttest_degenerate_cases():
    assert ttest_weight([2.0, 2.0, 2.0, 2.0], 0.5) == 0.0
    assert ttest_weight([0.0, 0.0, 1.0, 1.0], 0.5) == MAX_TTEST_WEIGHT
    with pytest.raises(ValueError, match="degenerate split"):
        ttest_weight([1.0, 2.0, 3.0], 0.999)
    with pytest.raises(ValueError):
        ttest_weight([1.0, 2.0], 0.5)


def test_ttest_matches_independent_oracles():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(3, 200))
        s = rng.normal(size=n) * rng.uniform(0.1, 10)
        gamma = float(rng.uniform(0.02, 0.9))
        n2 = math.ceil(round(gamma * n, 9))
        if n2 >= n:
            continue
        srt = np.sort(s)
        low, high = srt[: n - n2].tolist(), srt[n - n2:].tolist()
        if len(low) + len(high) < 3:
            continue
        expected = abs(pooled_t(low, high))
        assert ttest_weight(s, gamma) == pytest.approx(expected, abs=1e-9, rel=0)
        ref = abs(stats.ttest_ind(low, high, equal_var=True).statistic)
        assert ttest_weight(s, gamma) == pytest.approx(ref, abs=1e-9, rel=1e-12)


def test_trimmed_mean_examples():
    assert trimmed_mean_weight([1, 2, 3, 4], 0.5) == pytest.approx(math.exp(-3))
    assert trimmed_mean_weight([0, 0, 0, 0], 0.5) == 1.0
    assert trimmed_mean_weight([4, 1, 3, 2], 0.5) == trimmed_mean_weight([1, 2, 3, 4], 0.5)


def test_normalize():
    assert normalize([1, 3]).normalized.tolist() == [0.25, 0.75]
    assert normalize([0, 0]).normalized.tolist() == [0.5, 0.5]
    assert normalize([5]).normalized.tolist() == [1.0]
    with pytest.raises(ValueError):
        normalize([1, -1])


def test_normalize_log_handles_underflow():
    w = normalize_log([-2000.0, -2001.0])
    assert w.normalized == pytest.approx([1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))])
    assert normalize_log([-math.inf, -math.inf]).normalized.tolist() == [0.5, 0.5]


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=60),
    st.floats(0.05, 0.6),
    st.randoms(use_true_random=False),
)
def test_all_schemes_permutation_invariant(scores, gamma, rnd):
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    for kind in ("uniform", "ttest", "trimmed_mean"):
        scheme = WeightingScheme(kind, gamma)
        assert scheme.log_raw_weight(shuffled) == scheme.log_raw_weight(scores)
    assert trimmed_mean_log_weight(shuffled, gamma) == trimmed_mean_log_weight(scores, gamma)


def test_scheme_weights_sum_to_one():
    rng = np.random.default_rng(1)
    pools = [rng.normal(loc=k, size=50) for k in range(4)]
    for kind in ("uniform", "ttest", "trimmed_mean"):
        w = WeightingScheme(kind, 0.1).weights(pools)
        assert abs(w.normalized.sum() - 1) <= 1e-12
        assert np.all(w.normalized >= 0)


def test_scheme_rejects_bad_gamma():
    with pytest.raises(ValueError):
        WeightingScheme("ttest", 1.0)
