"""Reverse-chain behavior: unconstrained dynamics, per-step projection,
batch engine determinism, and the feasibility/closeness properties of the
projected chain on convex setups."""

import numpy as np
import pytest

from projdiff.errors import NonConvergenceError, RetryExhaustedError
from projdiff.models import AnalyticGMM, GaussianMixture, NoiseSchedule
from projdiff.numerics import SeededRng, sliced_wasserstein
from projdiff.projections import (
    ALMConfig,
    Constraint,
    ConstraintSet,
    halfspace_constraint,
    project_halfspace,
)
from projdiff.sampler_continuous import (
    SamplerState,
    ViolationTrace,
    projected_reverse_step,
    reverse_step,
    sample_constrained,
    sample_unconstrained,
)


class ZeroScore:
    """Score model that never moves the iterate."""

    def __init__(self, dim):
        self.dim = dim

    def score(self, x, sched, t):
        return np.zeros_like(x)


def single_gaussian(dim=2, mean=0.0):
    return AnalyticGMM(
        GaussianMixture(
            weights=np.array([1.0]),
            means=np.full((1, dim), float(mean)),
            variances=np.array([1.0]),
        )
    )


def two_mode_model():
    return AnalyticGMM(
        GaussianMixture(
            weights=np.array([0.5, 0.5]),
            means=np.array([[-1.5, 0.0], [1.5, 0.0]]),
            variances=np.array([0.25, 0.25]),
        )
    )


def infeasible_set():
    """x <= -1 and x >= 1 simultaneously: empty, and only reachable through
    the iterative projector since two constraints disable the closed form."""
    return ConstraintSet(
        [
            halfspace_constraint(np.array([1.0, 0.0]), -1.0, "right"),
            halfspace_constraint(np.array([-1.0, 0.0]), -1.0, "left"),
        ]
    )


class TestReverseStep:
    def test_vanishing_gamma_and_zero_score_leave_x_unchanged(self):
        sched = NoiseSchedule("linear", T=10, gamma_base=1e-300)
        state = SamplerState(np.array([0.7, -0.3]), t=5, rng=SeededRng(1))
        out = reverse_step(state, ZeroScore(2), sched)
        np.testing.assert_allclose(out.x, state.x, atol=1e-100)
        assert out.t == 4

    def test_requires_positive_t(self):
        sched = NoiseSchedule("linear", T=10)
        state = SamplerState(np.zeros(2), t=0, rng=SeededRng(1))
        with pytest.raises(ValueError):
            reverse_step(state, ZeroScore(2), sched)

    def test_far_field_contracts_toward_mean(self):
        # For a unit Gaussian at the origin the smoothed score pulls with
        # factor 1/(1 + sigma_t^2); from far away the drift dominates the
        # injected noise, so the expected distance must shrink.
        sched = NoiseSchedule("linear", T=20, gamma_base=0.1)
        model = single_gaussian(dim=2)
        start_dist = 8.0
        dists = []
        for s in range(1000):
            state = SamplerState(
                np.array([start_dist, 0.0]), t=sched.T, rng=SeededRng(1000 + s)
            )
            for _ in range(10):
                state = reverse_step(state, model, sched)
            dists.append(float(np.linalg.norm(state.x)))
        assert np.mean(dists) < start_dist * 0.75

    def test_fixed_seed_bit_identical(self):
        sched = NoiseSchedule("cosine", T=15)
        model = two_mode_model()
        runs = []
        for _ in range(2):
            state = SamplerState(np.array([0.1, 0.2]), t=15, rng=SeededRng(42))
            xs = []
            while state.t >= 1:
                state = reverse_step(state, model, sched)
                xs.append(state.x.copy())
            runs.append(np.stack(xs))
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_state_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SamplerState(np.array([np.nan, 0.0]), t=3, rng=SeededRng(0))


class TestProjectedReverseStep:
    def test_satisfied_constraint_matches_plain_step(self):
        sched = NoiseSchedule("linear", T=10)
        model = two_mode_model()
        cs = ConstraintSet([halfspace_constraint(np.array([1.0, 0.0]), 1e6)])
        a = SamplerState(np.array([0.3, -0.1]), t=6, rng=SeededRng(9))
        b = SamplerState(np.array([0.3, -0.1]), t=6, rng=SeededRng(9))
        plain = reverse_step(a, model, sched)
        projected, res = projected_reverse_step(b, model, sched, cs)
        np.testing.assert_array_equal(plain.x, projected.x)
        assert res.converged and res.iterations_used == 0

    def test_halfspace_exact_path_feasible_output(self):
        sched = NoiseSchedule("linear", T=10)
        model = two_mode_model()
        a = np.array([1.0, 1.0])
        cs = ConstraintSet([halfspace_constraint(a, 0.5)])
        rng = SeededRng(11)
        for trial in range(50):
            state = SamplerState(rng.standard_normal(2) * 3, t=5, rng=rng.child(trial))
            out, res = projected_reverse_step(state, model, sched, cs)
            assert float(a @ out.x) <= 0.5 + 1e-8
            assert res.converged

    def test_nonconvergence_carries_candidate(self):
        sched = NoiseSchedule("linear", T=10)
        model = two_mode_model()
        cfg = ALMConfig(max_outer_iter=3, max_inner_iter=10)
        state = SamplerState(np.array([0.0, 0.0]), t=4, rng=SeededRng(3))
        with pytest.raises(NonConvergenceError) as exc:
            projected_reverse_step(state, model, sched, infeasible_set(), cfg=cfg)
        cand = exc.value.candidate
        assert cand is not None and np.all(np.isfinite(cand))
        assert exc.value.result is not None
        assert not exc.value.result.converged

    def test_paired_seeds_projected_chain_clean_raw_chain_dirty(self):
        # Same noise stream with and without interleaved projection: the
        # projected chain ends feasible, the raw chain keeps violating mass.
        sched = NoiseSchedule("linear", T=30)
        model = two_mode_model()
        a = np.array([1.0, 0.0])
        cs = ConstraintSet([halfspace_constraint(a, 0.0, "keep-left")])
        clean, _ = sample_constrained(model, sched, cs, n_samples=60, seed=77)
        raw, _ = sample_unconstrained(model, sched, n_samples=60, seed=77, cs=cs)
        assert all(cs.all_satisfied(x) for x in clean)
        raw_violations = sum(1 for x in raw if not cs.all_satisfied(x))
        assert raw_violations > 0


class TestSampleConstrained:
    def test_trivial_constraint_matches_unconstrained_exactly(self):
        sched = NoiseSchedule("linear", T=25)
        model = two_mode_model()
        cs = ConstraintSet([halfspace_constraint(np.array([0.0, 1.0]), 1e9, "sky")])
        xs, _ = sample_constrained(model, sched, cs, n_samples=300, seed=5)
        ys, _ = sample_unconstrained(model, sched, n_samples=300, seed=5)
        np.testing.assert_array_equal(xs, ys)

    def test_trivial_constraint_distribution_close_across_seeds(self):
        sched = NoiseSchedule("linear", T=25)
        model = two_mode_model()
        cs = ConstraintSet([halfspace_constraint(np.array([0.0, 1.0]), 1e9, "sky")])
        xs, _ = sample_constrained(model, sched, cs, n_samples=2000, seed=21)
        ys, _ = sample_unconstrained(model, sched, n_samples=2000, seed=22)
        sw = sliced_wasserstein(xs, ys, n_directions=64, rng=SeededRng(1))
        assert sw < 0.05

    def test_halfspace_zero_violations_among_1000(self):
        sched = NoiseSchedule("linear", T=20)
        model = two_mode_model()
        a = np.array([1.0, 0.0])
        cs = ConstraintSet([halfspace_constraint(a, 0.0)])
        xs, trace = sample_constrained(model, sched, cs, n_samples=1000, seed=13)
        violating = sum(1 for x in xs if float(a @ x) > 1e-8)
        assert violating == 0
        assert len(trace) == sched.T

    def test_trace_tail_residuals_vanish(self):
        sched = NoiseSchedule("linear", T=40)
        model = two_mode_model()
        cs = ConstraintSet([halfspace_constraint(np.array([1.0, 0.0]), 0.0)])
        _, trace = sample_constrained(model, sched, cs, n_samples=50, seed=31)
        assert all(m < 1e-6 for m in trace.tail_means(0.1))

    def test_post_only_fraction_keeps_final_feasible_but_dirty_path(self):
        sched = NoiseSchedule("linear", T=30)
        model = two_mode_model()
        cs = ConstraintSet([halfspace_constraint(np.array([1.0, 0.0]), 0.0)])
        xs, trace = sample_constrained(
            model, sched, cs, n_samples=80, seed=17, project_fraction=0.0
        )
        assert all(cs.all_satisfied(x) for x in xs)
        mid_means = [m for _, m, _ in trace.entries[: sched.T // 2]]
        assert max(mid_means) > 1e-3

    def test_retry_exhausted_reports_failed_chains(self):
        sched = NoiseSchedule("linear", T=5)
        model = two_mode_model()
        cfg = ALMConfig(max_outer_iter=2, max_inner_iter=5)
        with pytest.raises(RetryExhaustedError) as exc:
            sample_constrained(
                model,
                sched,
                infeasible_set(),
                cfg=cfg,
                n_samples=2,
                seed=1,
                retry_cap=2,
            )
        assert exc.value.attempts == 2
        assert "2 of 2" in str(exc.value)

    def test_deterministic_across_calls(self):
        sched = NoiseSchedule("cosine", T=15)
        model = two_mode_model()
        cs = ConstraintSet([halfspace_constraint(np.array([1.0, 1.0]), 0.7)])
        a_xs, a_tr = sample_constrained(model, sched, cs, n_samples=40, seed=99)
        b_xs, b_tr = sample_constrained(model, sched, cs, n_samples=40, seed=99)
        np.testing.assert_array_equal(a_xs, b_xs)
        assert a_tr.entries == b_tr.entries


class TestConvexChainProperties:
    """Single Gaussian + halfspace: the projected chain's corrections stay
    small and its endpoint is exactly feasible."""

    def setup_method(self):
        self.sched = NoiseSchedule("linear", T=40)
        self.model = single_gaussian(dim=2, mean=0.0)
        self.a = np.array([1.0, 0.0])
        self.b = -0.5  # plane through the mass so projection genuinely acts

    def _candidate_gaps(self, seed, project):
        """Distance from each step's pre-projection candidate to the
        feasible set, along one chain."""
        rng = SeededRng(seed)
        state = SamplerState(rng.standard_normal(2), t=self.sched.T, rng=rng)
        gaps = []
        while state.t >= 1:
            moved = reverse_step(state, self.model, self.sched)
            proj = project_halfspace(moved.x, self.a, self.b)
            gaps.append(float(np.linalg.norm(moved.x - proj)))
            if project:
                moved = SamplerState(proj, t=moved.t, rng=moved.rng)
            state = moved
        return gaps

    def test_interleaved_projection_cost_never_exceeds_free_chain(self):
        n_seeds = 200
        with_proj = np.zeros(self.sched.T)
        without = np.zeros(self.sched.T)
        for s in range(n_seeds):
            with_proj += np.asarray(self._candidate_gaps(s, True))
            without += np.asarray(self._candidate_gaps(s, False))
        with_proj /= n_seeds
        without /= n_seeds
        half = self.sched.T // 2
        assert np.all(with_proj[half:] <= without[half:] + 1e-12)

    def test_final_step_projection_gap_tiny_for_every_chain(self):
        cs = ConstraintSet([halfspace_constraint(self.a, self.b)])
        xs, _ = sample_constrained(self.model, self.sched, cs, n_samples=100, seed=8)
        for x in xs:
            gap = float(np.linalg.norm(x - project_halfspace(x, self.a, self.b)))
            assert gap < 1e-6


class TestViolationTrace:
    def test_record_and_aggregates(self):
        tr = ViolationTrace()
        tr.record(3, [0.2, 0.4])
        tr.record(2, [0.0, 0.1])
        tr.record(1, [0.0, 0.0])
        assert tr.mean_at(3) == pytest.approx(0.3)
        assert tr.entries[0][2] == pytest.approx(0.4)
        assert tr.tail_means(0.34) == [0.0]

    def test_rejects_negative_residuals(self):
        tr = ViolationTrace()
        with pytest.raises(ValueError):
            tr.record(1, [-0.5])

    def test_csv_round_trip(self, tmp_path):
        tr = ViolationTrace()
        tr.record(2, [0.125, 0.375])
        tr.record(1, [0.0, 0.0])
        path = tmp_path / "trace.csv"
        tr.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "t,mean_residual,max_residual"
        t, mean, peak = lines[1].split(",")
        assert int(t) == 2
        assert float(mean) == pytest.approx(0.25)
        assert float(peak) == pytest.approx(0.375)
