import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conformal_evalues import Calibrator, SoftRankParams, p_to_e, soft_rank_evalue, soft_rank_evalues

from oracles import soft_rank_by_loop


def test_p_to_e_examples():
    assert p_to_e(0.25, "shafer") == pytest.approx(1.0)
    assert p_to_e(1.0, "shafer") == 0.0
    assert p_to_e(math.exp(-2), "vs") == pytest.approx(math.e / 2)
    assert p_to_e(math.exp(-1), "integral") == pytest.approx(math.e - 2)
    assert p_to_e(1.0, "integral") == 0.5
    assert p_to_e(0.5, Calibrator("epsilon", 0.5)) == pytest.approx(0.5 * 0.5 ** -0.5)


@pytest.mark.parametrize("u", [1e-6, 0.01, 0.3, math.exp(-1), 0.9, 1 - 1e-5, 1 - 1e-6, 1.0])
def test_integral_matches_quadrature(u):
    expected = integrate.quad(lambda eps: eps * u ** (eps - 1), 0, 1, epsabs=1e-14)[0]
    assert p_to_e(u, "integral") == pytest.approx(expected, rel=1e-8)


def test_integral_continuous_across_series_switch():
    below = p_to_e(1 - 1e-4 - 1e-12, "integral")
    above = p_to_e(1 - 1e-4 + 1e-12, "integral")
    assert abs(below - above) < 1e-8


def test_p_to_e_domain():
    for bad in (0.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            p_to_e(bad, "shafer")
    with pytest.raises(ValueError):
        Calibrator("epsilon")
    with pytest.raises(ValueError):
        Calibrator("shafer", 0.5)


def test_p_to_e_vectorized():
    u = np.array([0.25, 1.0])
    assert p_to_e(u, "shafer").tolist() == [1.0, 0.0]


def test_calibrators_valid_on_discrete_grid():
    for m in range(1, 201):
        grid = np.arange(1, m + 2) / (m + 1)
        for cal in (Calibrator("shafer"), Calibrator("integral"),
                    Calibrator("epsilon", 0.1), Calibrator("epsilon", 0.5), Calibrator("epsilon", 0.9)):
            assert p_to_e(grid, cal).mean() <= 1 + 1e-9


def test_vs_invalid_on_discrete_grid():
    means = [p_to_e(np.arange(1, m + 2) / (m + 1), "vs").mean() for m in range(1, 201)]
    assert max(means) > 1
    assert not Calibrator("vs").is_valid


SOFT_R1 = 0.8222058571835911  # brute-force evaluation of the pooled formula


def test_soft_rank_examples():
    assert soft_rank_evalue(5, [0, 10], SoftRankParams(0)) == pytest.approx(1.0)
    assert soft_rank_evalue(10, [0, 5], SoftRankParams(0)) == pytest.approx(2.0)
    assert soft_rank_evalue(5, [0, 10], SoftRankParams(1)) == pytest.approx(SOFT_R1, rel=1e-12)
    assert soft_rank_evalue(3, [3, 3, 3], SoftRankParams(75)) == 1.0


@pytest.mark.parametrize("r", [0.0, 1.0, 10.0, 75.0, 500.0])
def test_soft_rank_matches_loop(r):
    rng = np.random.default_rng(int(r))
    for _ in range(50):
        cal = rng.normal(size=int(rng.integers(1, 15)))
        t = float(rng.normal())
        assert soft_rank_evalue(t, cal, SoftRankParams(r)) == pytest.approx(
            soft_rank_by_loop(t, cal, r), rel=1e-9, abs=1e-300
        )


def test_soft_rank_exact_average():
    rng = np.random.default_rng(0)
    for r in (0.0, 1.0, 75.0, 500.0):
        for _ in range(100):
            pool = rng.normal(size=int(rng.integers(2, 11)))
            e = [soft_rank_evalue(pool[b], np.delete(pool, b), SoftRankParams(r)) for b in range(pool.size)]
            assert abs(np.mean(e) - 1) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    st.floats(-60, 60),
    st.floats(0, 30),
    st.sampled_from([0.0, 1.0, 75.0, 500.0]),
)
def test_soft_rank_monotone(cal, t, bump, r):
    params = SoftRankParams(r)
    assert soft_rank_evalue(t + bump, cal, params) >= soft_rank_evalue(t, cal, params) - 1e-12


def test_soft_rank_small_r_continuity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        cal = rng.normal(size=8)
        t = float(rng.normal())
        assert abs(soft_rank_evalue(t, cal, SoftRankParams(1e-8)) - soft_rank_evalue(t, cal, SoftRankParams(0))) < 1e-6


def test_soft_rank_vectorized_agrees():
    rng = np.random.default_rng(2)
    cal = rng.normal(size=20)
    test = rng.normal(size=7)
    vec = soft_rank_evalues(test, cal, SoftRankParams(75))
    assert vec == pytest.approx([soft_rank_evalue(t, cal, SoftRankParams(75)) for t in test])


def test_soft_rank_params_validation():
    with pytest.raises(ValueError):
        SoftRankParams(-1.0)
