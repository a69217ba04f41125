import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projdiff.numerics import (
    PROB_FLOOR,
    SeededRng,
    is_simplex,
    kl_div,
    sliced_wasserstein,
    softmax,
)


def w1_cdf_area(x, y):
    # Independent 1-D W1 oracle: integral of |F_x - F_y| over the real line,
    # evaluated on the merged support grid.
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    grid = np.union1d(x, y)
    total = 0.0
    for left, right in zip(grid[:-1], grid[1:]):
        fx = np.searchsorted(x, left, side="right") / len(x)
        fy = np.searchsorted(y, left, side="right") / len(y)
        total += abs(fx - fy) * (right - left)
    return total


class TestSoftmax:
    def test_two_logit_example(self):
        # exp(ln 3) = 3, so probabilities are 1/(1+3) and 3/(1+3)
        out = softmax(np.array([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_shift_invariance(self):
        v = np.array([1.0, -2.0, 0.5, 7.0])
        np.testing.assert_allclose(softmax(v), softmax(v + 123.4), atol=1e-12)

    def test_large_logits_do_not_overflow(self):
        out = softmax(np.array([1e6, 0.0]))
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_output_on_simplex(self, logits):
        out = softmax(np.array(logits))
        assert is_simplex(out)

    def test_matrix_rows(self):
        rng = SeededRng(0)
        m = rng.standard_normal((5, 4))
        out = softmax(m)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(5), atol=1e-12)


class TestKlDiv:
    def test_onehot_vs_uniform_example(self):
        # 1 * log(1 / 0.5) = log 2
        assert kl_div(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(
            math.log(2.0), abs=1e-12
        )

    def test_half_half_vs_skewed_example(self):
        expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        got = kl_div(np.array([0.5, 0.5]), np.array([0.9, 0.1]))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_zero_q_entry_is_clamped_finite(self):
        got = kl_div(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert math.isfinite(got)
        assert got == pytest.approx(math.log(1.0 / PROB_FLOOR), rel=1e-12)

    def test_self_divergence_zero(self):
        p = np.array([0.2, 0.3, 0.5])
        assert kl_div(p, p) == pytest.approx(0.0, abs=1e-15)

    @settings(max_examples=200)
    @given(
        st.lists(st.floats(0.01, 10.0), min_size=2, max_size=6),
        st.lists(st.floats(0.01, 10.0), min_size=2, max_size=6),
    )
    def test_nonnegative_and_zero_iff_equal(self, wp, wq):
        n = min(len(wp), len(wq))
        p = np.array(wp[:n]) / np.sum(wp[:n])
        q = np.array(wq[:n]) / np.sum(wq[:n])
        d = kl_div(p, q)
        assert d >= -1e-12
        if np.allclose(p, q, atol=1e-15):
            assert d == pytest.approx(0.0, abs=1e-12)
        elif np.max(np.abs(p - q)) > 1e-6:
            assert d > 0.0

    def test_rejects_non_simplex_p(self):
        with pytest.raises(AssertionError):
            kl_div(np.array([0.7, 0.7]), np.array([0.5, 0.5]))


class TestSlicedWasserstein:
    def test_identical_sets_zero(self):
        pts = SeededRng(1).standard_normal((40, 3))
        assert sliced_wasserstein(pts, pts.copy(), rng=SeededRng(2)) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_single_fixed_direction_example(self):
        # Projection of (3, 4) onto the x-axis direction lands at 3.
        a = np.array([[0.0, 0.0]])
        b = np.array([[3.0, 4.0]])
        got = sliced_wasserstein(a, b, directions=np.array([[1.0, 0.0]]))
        assert got == pytest.approx(3.0, abs=1e-12)

    def test_direction_normalization(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[3.0, 4.0]])
        got = sliced_wasserstein(a, b, directions=np.array([[10.0, 0.0]]))
        assert got == pytest.approx(3.0, abs=1e-12)

    def test_matches_cdf_area_oracle_equal_sizes(self):
        rng = SeededRng(3)
        x = rng.standard_normal(17)
        y = rng.standard_normal(17) + 0.7
        got = sliced_wasserstein(x[:, None], y[:, None], directions=np.array([[1.0]]))
        assert got == pytest.approx(w1_cdf_area(x, y), abs=1e-10)

    def test_matches_cdf_area_oracle_unequal_sizes(self):
        rng = SeededRng(4)
        x = rng.standard_normal(13)
        y = rng.standard_normal(29) - 0.4
        got = sliced_wasserstein(x[:, None], y[:, None], directions=np.array([[1.0]]))
        assert got == pytest.approx(w1_cdf_area(x, y), abs=1e-10)

    def test_deterministic_given_rng_seed(self):
        rng = SeededRng(5)
        a = rng.standard_normal((30, 2))
        b = rng.standard_normal((25, 2)) + 1.0
        d1 = sliced_wasserstein(a, b, n_directions=16, rng=SeededRng(9))
        d2 = sliced_wasserstein(a, b, n_directions=16, rng=SeededRng(9))
        assert d1 == d2
        assert d1 > 0.0


class TestSeededRng:
    def test_same_seed_same_stream(self):
        a = SeededRng(42).standard_normal(10)
        b = SeededRng(42).standard_normal(10)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = SeededRng(42).standard_normal(10)
        b = SeededRng(43).standard_normal(10)
        assert not np.array_equal(a, b)

    def test_child_streams_are_stable_and_distinct(self):
        r = SeededRng(7)
        c1 = r.child("chain", 0).standard_normal(8)
        c1_again = SeededRng(7).child("chain", 0).standard_normal(8)
        c2 = r.child("chain", 1).standard_normal(8)
        np.testing.assert_array_equal(c1, c1_again)
        assert not np.array_equal(c1, c2)

    def test_child_does_not_consume_parent_state(self):
        r = SeededRng(11)
        before = SeededRng(11).standard_normal(4)
        r.child("x")
        np.testing.assert_array_equal(r.standard_normal(4), before)

    def test_choice_index_respects_distribution(self):
        r = SeededRng(13)
        probs = np.array([0.1, 0.7, 0.2])
        draws = np.array([r.choice_index(probs) for _ in range(5000)])
        freq = np.bincount(draws, minlength=3) / len(draws)
        np.testing.assert_allclose(freq, probs, atol=0.03)

    def test_gumbel_moments(self):
        # Gumbel(0,1): mean = Euler-Mascheroni, var = pi^2 / 6
        g = SeededRng(17).gumbel(200_000)
        assert float(np.mean(g)) == pytest.approx(0.5772, abs=0.01)
        assert float(np.var(g)) == pytest.approx(np.pi**2 / 6.0, rel=0.02)
