"""Backend parity: the compiled kernels must agree with the NumPy reference
element by element, including hinge edge cases (zero distance, inactive
pairs, empty gram tables)."""

import numpy as np
import pytest

from projdiff.kernels import _reference
from projdiff.numerics import SeededRng

_speedups = pytest.importorskip(
    "projdiff.kernels._speedups", reason="compiled kernels not built"
)

BACKENDS = [_reference, _speedups]


def random_scene(seed, n_agents=4, n_steps=10):
    rng = SeededRng(seed)
    pos = rng.uniform(0.0, 6.0, shape=(n_agents, n_steps, 2))
    radii = rng.uniform(0.2, 0.8, shape=n_agents)
    dmin = radii[:, None] + radii[None, :]
    centers = rng.uniform(0.0, 6.0, shape=(3, 2))
    obs_radii = rng.uniform(0.5, 1.5, shape=3)
    return pos, dmin, centers, obs_radii


class TestPairwiseParity:
    @pytest.mark.parametrize("seed", range(10))
    def test_random_scenes(self, seed):
        pos, dmin, _, _ = random_scene(seed)
        v_ref, g_ref = _reference.pairwise_clearance(pos, dmin)
        v_c, g_c = _speedups.pairwise_clearance(pos, dmin)
        assert v_c == pytest.approx(v_ref, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(g_c, g_ref, rtol=1e-12, atol=1e-14)

    def test_coincident_points_zero_gradient(self):
        pos = np.zeros((2, 3, 2))
        dmin = np.full((2, 2), 1.0)
        for impl in BACKENDS:
            v, g = impl.pairwise_clearance(pos, dmin)
            assert v == pytest.approx(3.0)
            np.testing.assert_array_equal(g, np.zeros_like(pos))

    def test_clear_scene_is_exactly_zero(self):
        pos = np.array([[[0.0, 0.0]], [[10.0, 0.0]]])
        dmin = np.full((2, 2), 1.0)
        for impl in BACKENDS:
            v, g = impl.pairwise_clearance(pos, dmin)
            assert v == 0.0
            np.testing.assert_array_equal(g, np.zeros_like(pos))


class TestObstacleParity:
    @pytest.mark.parametrize("seed", range(10))
    def test_random_scenes(self, seed):
        pos, _, centers, radii = random_scene(seed)
        v_ref, g_ref = _reference.obstacle_clearance(pos, centers, radii)
        v_c, g_c = _speedups.obstacle_clearance(pos, centers, radii)
        assert v_c == pytest.approx(v_ref, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(g_c, g_ref, rtol=1e-12, atol=1e-14)

    def test_point_at_center_zero_gradient(self):
        pos = np.zeros((1, 1, 2))
        centers = np.zeros((1, 2))
        radii = np.array([2.0])
        for impl in BACKENDS:
            v, g = impl.obstacle_clearance(pos, centers, radii)
            assert v == pytest.approx(2.0)
            np.testing.assert_array_equal(g, np.zeros_like(pos))


class TestNgramParity:
    @pytest.mark.parametrize("seed", range(10))
    def test_random_tables(self, seed):
        rng = SeededRng(100 + seed)
        rows = rng.uniform(0.01, 1.0, shape=(12, 5))
        rows /= rows.sum(axis=1, keepdims=True)
        grams = rng.integers(0, 5, shape=(4, 3))
        weights = rng.uniform(-2.0, 2.0, shape=4)
        v_ref, g_ref = _reference.ngram_score(rows, grams, weights)
        v_c, g_c = _speedups.ngram_score(rows, grams, weights)
        assert v_c == pytest.approx(v_ref, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(g_c, g_ref, rtol=1e-12, atol=1e-14)

    def test_empty_gram_table(self):
        rows = np.full((4, 3), 1.0 / 3)
        grams = np.zeros((0, 2), dtype=np.int64)
        weights = np.zeros(0)
        for impl in BACKENDS:
            v, g = impl.ngram_score(rows, grams, weights)
            assert v == 0.0
            np.testing.assert_array_equal(g, np.zeros_like(rows))

    def test_gram_longer_than_sequence(self):
        rows = np.full((2, 3), 1.0 / 3)
        grams = np.array([[0, 1, 2]], dtype=np.int64)
        weights = np.ones(1)
        for impl in BACKENDS:
            v, g = impl.ngram_score(rows, grams, weights)
            assert v == 0.0

    def test_zero_weight_rows_are_skipped(self):
        rows = np.array([[0.5, 0.5], [0.4, 0.6]])
        grams = np.array([[0, 1], [1, 0]], dtype=np.int64)
        weights = np.array([0.0, 2.0])
        for impl in BACKENDS:
            v, g = impl.ngram_score(rows, grams, weights)
            assert v == pytest.approx(2.0 * 0.4 * 0.5)


class TestBackendSelection:
    def test_env_override_forces_reference(self):
        import subprocess
        import sys

        code = (
            "import os; os.environ['PROJDIFF_KERNELS'] = 'reference'; "
            "from projdiff import kernels; print(kernels.BACKEND)"
        )
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True
        )
        assert out.stdout.strip() == "reference"

    def test_default_prefers_compiled(self):
        from projdiff import kernels

        assert kernels.BACKEND == "compiled"

    def test_noncontiguous_inputs_accepted(self):
        pos = np.ascontiguousarray(
            SeededRng(3).uniform(0.0, 5.0, shape=(4, 6, 4))
        )[:, :, ::2]
        assert not pos.flags.c_contiguous
        dmin = np.full((4, 4), 1.0)
        v_ref, g_ref = _reference.pairwise_clearance(pos, dmin)
        v_c, g_c = _speedups.pairwise_clearance(pos, dmin)
        assert v_c == pytest.approx(v_ref, rel=1e-12)
        np.testing.assert_allclose(g_c, g_ref, rtol=1e-12)
