import math
from fractions import Fraction

import numpy as np
import pytest

from mgdlrc.weights import WeightSchedule, default_alpha_tilde, gap_envelope, theoretical_eta


def exact_profile(H, t):
    """alpha_t^j by the defining product, in exact rational arithmetic."""
    alpha = [None] + [Fraction(H + 1, H + k) for k in range(1, t + 1)]
    out = []
    for j in range(1, t + 1):
        v = alpha[j]
        for k in range(j + 1, t + 1):
            v *= 1 - alpha[k]
        out.append(v)
    return out


@pytest.mark.parametrize("t,expected", [(1, 1.0), (2, 0.75), (3, 0.6)])
def test_alpha_h2(t, expected):
    assert WeightSchedule(2).alpha(t) == pytest.approx(expected, abs=1e-15)


def test_alpha_rejects_round_zero():
    with pytest.raises(ValueError):
        WeightSchedule(2).alpha(0)


def test_profile_h2_t3():
    # by hand: alpha_3 = 0.6, alpha_2 (1 - alpha_3) = 0.3, 1 * 0.25 * 0.4 = 0.1
    np.testing.assert_allclose(WeightSchedule(2).alpha_profile(3), [0.1, 0.3, 0.6], atol=1e-15)
    assert [float(v) for v in exact_profile(2, 3)] == pytest.approx([0.1, 0.3, 0.6])


@pytest.mark.parametrize("H", [1, 2, 3, 5])
def test_profile_t1_is_one(H):
    np.testing.assert_array_equal(WeightSchedule(H).alpha_profile(1), [1.0])


@pytest.mark.parametrize("H", [1, 2, 4])
def test_profile_matches_exact_rationals(H):
    for t in (1, 2, 7, 30):
        exact = np.array([float(v) for v in exact_profile(H, t)])
        np.testing.assert_allclose(WeightSchedule(H).alpha_profile(t), exact, rtol=1e-13)


def test_item6_at_t50():
    prof = WeightSchedule(2).alpha_profile(50)
    j = np.arange(1, 51)
    assert (prof / j).sum() <= (1 + 1 / 2) / 50


@pytest.mark.parametrize("H", [1, 2, 3, 5])
def test_w_closed_form_against_exact_ratio(H):
    sched = WeightSchedule(H)
    for t in range(1, 41):
        prof = exact_profile(H, t)
        ratio = prof[-1] / prof[0]
        assert ratio.denominator == 1
        assert int(ratio) == sched.w_exact(t)


def test_w_examples():
    assert WeightSchedule(1).w_exact(5) == 5
    assert WeightSchedule(2).w_exact(4) == 10
    for H in (1, 2, 3, 7):
        assert WeightSchedule(H).w_exact(1) == 1


def test_w_independent_of_outer_round():
    sched = WeightSchedule(3)
    for t in (10, 25, 60):
        prof = sched.alpha_profile(t)
        for j in (1, 4, 9):
            assert prof[j - 1] / prof[0] == pytest.approx(sched.w(j), rel=1e-10)


def test_log_w_and_kappa():
    sched = WeightSchedule(3)
    for t in (1, 2, 17, 900):
        assert sched.log_w(t) == pytest.approx(math.log(sched.w_exact(t)), rel=1e-12, abs=1e-12)
    for t in range(2, 30):
        assert sched.kappa(t) == pytest.approx(sched.w(t) / sched.w(t - 1), rel=1e-14)
        assert sched.w_ratio(t) == pytest.approx(sched.w(t) / sched.w(t + 1), rel=1e-14)
    assert sched.kappa(1) == 1.0


def test_cumulative_w():
    sched = WeightSchedule(2)
    cum = sched.cumulative_w(20)
    direct = np.concatenate([[0.0], np.cumsum([sched.w(j) for j in range(1, 21)])])
    np.testing.assert_array_equal(cum, direct)


def test_eta_t():
    assert WeightSchedule(1, 0.5).eta_t(4) == 0.125
    assert WeightSchedule(3, 0.3).eta_t(1) == 0.3
    eta = 1 / (24 * 2 * math.sqrt(2) * 2)
    assert WeightSchedule(2, eta).eta_t(10) == pytest.approx(eta / 55, rel=1e-15)


def test_theoretical_eta():
    assert theoretical_eta(1, 1) == pytest.approx(1 / 24)
    assert theoretical_eta(4, 2) == pytest.approx(1 / 384)
    assert theoretical_eta(2, 2) == pytest.approx(1 / (96 * math.sqrt(2)))


def test_alpha_tilde_and_envelope():
    assert default_alpha_tilde(2) == pytest.approx(70 * math.log(2) ** 2 + 2 * math.log(2) + 2)
    assert default_alpha_tilde(1) == 2.0
    assert gap_envelope(10, 2, 2, 37.0, 2) == 2.0
    big = gap_envelope(10**12, 1, 1, 2.0, 1)
    assert big == pytest.approx(864 * (2 * math.log(10**12) + 2) / 10**12)
