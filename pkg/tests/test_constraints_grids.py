"""Porosity count and kinematics rollout constraints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projdiff.constraints import (
    KinematicsSpec,
    PorosityTarget,
    kinematics_constraint,
    kinematics_rollout,
    negative_count,
    porosity_constraint,
    soft_negative_count,
)
from projdiff.errors import ConfigError
from projdiff.numerics import SeededRng


def fd_grad(f, x, h=1e-7):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestPorosity:
    def test_exact_count_is_feasible(self):
        t = PorosityTarget(k=3, n_rows=2, n_cols=3)
        c = porosity_constraint(t)
        grid = np.array([[-0.5, 0.5, -0.8], [0.9, -0.1, 0.7]])
        assert c.satisfied(grid)

    def test_all_positive_with_target_violates(self):
        t = PorosityTarget(k=2, n_rows=2, n_cols=2)
        c = porosity_constraint(t)
        assert not c.satisfied(np.full((2, 2), 0.6))

    def test_projection_always_certifies(self):
        rng = SeededRng(17)
        for trial in range(100):
            n, m = 4, 5
            k = int(rng.integers(0, n * m + 1))
            c = porosity_constraint(PorosityTarget(k, n, m))
            grid = rng.uniform(-1.0, 1.0, shape=(n, m))
            fixed = c.exact_project(grid)
            assert negative_count(fixed) == k
            assert c.satisfied(fixed)

    def test_residual_gradient_matches_finite_differences(self):
        t = PorosityTarget(k=4, n_rows=3, n_cols=3)
        c = porosity_constraint(t)
        rng = SeededRng(5)
        x = rng.uniform(-0.4, 0.4, shape=9)
        g = c.residual_grad(x)
        g_fd = fd_grad(c.residual, x)
        rel = np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12)
        assert rel < 1e-4

    def test_predicate_and_residual_agree_on_saturated_grids(self):
        # Entries at least 0.25 from zero keep each sigmoid term within
        # 0.0067 of its hard indicator, so the soft count separates exact
        # matches from off-by-one grids at the constraint's cutoff.
        rng = SeededRng(8)
        t = PorosityTarget(k=5, n_rows=4, n_cols=4)
        c = porosity_constraint(t)
        for trial in range(200):
            signs = rng.uniform(shape=16) < 0.3
            mag = rng.uniform(0.25, 1.0, shape=16)
            grid = np.where(signs, -mag, mag)
            assert c.satisfied(grid) == (c.residual(grid) <= c.check_tol)

    def test_target_validation(self):
        with pytest.raises(ConfigError):
            PorosityTarget(k=7, n_rows=2, n_cols=3)
        with pytest.raises(ConfigError):
            PorosityTarget(k=0, n_rows=0, n_cols=3)

    @given(st.integers(min_value=0, max_value=12), st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_projection_count_property(self, k, seed):
        grid = SeededRng(seed).uniform(-1.0, 1.0, shape=(3, 4))
        c = porosity_constraint(PorosityTarget(k, 3, 4))
        assert negative_count(c.exact_project(grid)) == k

    def test_soft_count_tracks_hard_count_when_saturated(self):
        grid = np.array([-1.0, -0.9, 0.8, 1.0, 0.6])
        assert soft_negative_count(grid) == pytest.approx(2.0, abs=1e-4)


class TestKinematicsRollout:
    def test_quadratic_formula(self):
        roll = kinematics_rollout(KinematicsSpec(p0=0.0, g=2.0, horizon=3))
        np.testing.assert_allclose(roll, [1.0, 4.0, 9.0])
        assert roll[2] == pytest.approx(2.0 * 9 / 2)

    def test_zero_acceleration_holds_position(self):
        roll = kinematics_rollout(KinematicsSpec(p0=1.5, g=0.0, horizon=5))
        np.testing.assert_allclose(roll, np.full(5, 1.5))

    def test_displacements_scale_linearly_with_g(self):
        g_moon, g_earth = 1.62, 9.81
        a = kinematics_rollout(KinematicsSpec(p0=0.0, g=g_moon, horizon=6))
        b = kinematics_rollout(KinematicsSpec(p0=0.0, g=g_earth, horizon=6))
        np.testing.assert_allclose(a, b * (g_moon / g_earth), rtol=1e-12)

    def test_initial_velocity_advances_linearly(self):
        roll = kinematics_rollout(KinematicsSpec(p0=0.0, g=0.0, horizon=4, v0=2.0))
        np.testing.assert_allclose(roll, [2.0, 4.0, 6.0, 8.0])

    def test_horizon_validated(self):
        with pytest.raises(ConfigError):
            KinematicsSpec(p0=0.0, g=1.0, horizon=0)


class TestKinematicsConstraint:
    def spec(self):
        return KinematicsSpec(p0=0.0, g=2.0, horizon=4)

    def test_rollout_itself_feasible(self):
        c = kinematics_constraint(self.spec())
        roll = kinematics_rollout(self.spec())
        assert c.satisfied(roll)
        assert c.residual(roll) == 0.0

    def test_single_offset_residual(self):
        c = kinematics_constraint(self.spec())
        x = kinematics_rollout(self.spec())
        x[2] += 0.25
        assert c.residual(x) == pytest.approx(0.25)
        assert not c.satisfied(x)

    def test_projection_overwrites_to_rollout(self):
        c = kinematics_constraint(self.spec())
        rng = SeededRng(3)
        for _ in range(20):
            x = rng.standard_normal(4) * 10
            out = c.exact_project(x)
            assert c.satisfied(out)
            np.testing.assert_array_equal(out, kinematics_rollout(self.spec()))

    def test_length_mismatch_raises(self):
        c = kinematics_constraint(self.spec())
        with pytest.raises(ValueError):
            c.residual(np.zeros(7))
        with pytest.raises(ValueError):
            c.exact_project(np.zeros(2))

    def test_gradient_matches_finite_differences(self):
        c = kinematics_constraint(self.spec())
        x = kinematics_rollout(self.spec()) + np.array([0.3, -0.2, 0.5, 0.1])
        g = c.residual_grad(x)
        g_fd = fd_grad(c.residual, x)
        assert np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd) < 1e-5
