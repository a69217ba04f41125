"""Reverse-diffusion sampling in R^d with optional per-step projection.

The unconstrained chain anneals Langevin dynamics down the noise schedule:
x <- x + gamma_t * score(x, t) + sqrt(2 gamma_t) * eps. The constrained chain
applies the feasibility projection after every step (or after a configurable
trailing fraction of steps), so the emitted samples satisfy the declared
constraint set. Each chain owns a derived rng stream, which makes batches
reproducible and lets matched seeds isolate the effect of projection.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NonConvergenceError, RetryExhaustedError
from .models import NoiseSchedule
from .numerics import SeededRng
from .projections import ALMConfig, ConstraintSet, ProjectionResult, alm_project

RETRY_CAP = 5


@dataclass
class SamplerState:
    """One chain's position: current iterate, step index, and noise stream."""

    x: np.ndarray
    t: int
    rng: SeededRng

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if not np.all(np.isfinite(self.x)):
            raise ValueError("sampler state requires finite x")


class ViolationTrace:
    """Aggregate constraint violation per reverse step.

    One entry per step, recorded after the step's update (and projection,
    when enabled): (t, mean residual across chains, max residual across
    chains). Residuals are nonnegative aggregates of the constraint set.
    """

    def __init__(self):
        self.entries: list[tuple[int, float, float]] = []

    def record(self, t: int, residuals) -> None:
        arr = np.asarray(residuals, dtype=np.float64)
        mean = float(np.mean(arr))
        peak = float(np.max(arr))
        if mean < 0.0 or peak < 0.0:
            raise ValueError("violation residuals must be nonnegative")
        self.entries.append((int(t), mean, peak))

    def __len__(self) -> int:
        return len(self.entries)

    def mean_at(self, t: int) -> float:
        for step, mean, _ in self.entries:
            if step == t:
                return mean
        raise KeyError(f"no trace entry for t={t}")

    def tail_means(self, fraction: float) -> list[float]:
        """Mean residuals over the trailing ``fraction`` of recorded steps
        (the low-noise end of the schedule)."""
        n = max(1, int(round(fraction * len(self.entries))))
        return [mean for _, mean, _ in self.entries[-n:]]

    def to_csv(self, path) -> None:
        lines = ["t,mean_residual,max_residual"]
        for t, mean, peak in self.entries:
            lines.append(f"{t},{mean!r},{peak!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def reverse_step(state: SamplerState, model, sched: NoiseSchedule) -> SamplerState:
    """One annealed Langevin update; consumes one noise draw from the state
    rng and decrements t."""
    if state.t < 1:
        raise ValueError(f"reverse_step requires t >= 1, got {state.t}")
    gamma = sched.gamma(state.t)
    score = model.score(state.x, sched, state.t)
    eps = state.rng.standard_normal(state.x.shape)
    x_new = state.x + gamma * score + np.sqrt(2.0 * gamma) * eps
    return replace(state, x=x_new, t=state.t - 1)


def _project_point(
    x: np.ndarray,
    cs: ConstraintSet,
    cfg: ALMConfig | None,
    warm,
) -> ProjectionResult:
    """Project onto the feasible set: closed form when the set carries one,
    otherwise the augmented Lagrangian solver."""
    exact = cs.exact_projector
    if exact is not None:
        point = np.asarray(exact(x), dtype=np.float64)
        return ProjectionResult(
            point=point,
            residual_final=cs.residual_total(point),
            iterations_used=0,
            converged=True,
            warm=None,
            inner_iterations=0,
        )
    return alm_project(x, cs, cfg=cfg, warm=warm)


def projected_reverse_step(
    state: SamplerState,
    model,
    sched: NoiseSchedule,
    cs: ConstraintSet,
    cfg: ALMConfig | None = None,
    warm=None,
) -> tuple[SamplerState, ProjectionResult]:
    """Langevin update followed by projection onto the feasible set.

    Returns the projected state and the projection report (whose warm state
    can seed the next step's projection). On projection failure raises
    NonConvergenceError carrying the unprojected candidate.
    """
    moved = reverse_step(state, model, sched)
    try:
        res = _project_point(moved.x, cs, cfg, warm)
    except NonConvergenceError as err:
        err.candidate = moved.x
        raise
    return replace(moved, x=res.point), res


def _run_chain(
    model,
    sched: NoiseSchedule,
    rng: SeededRng,
    cs: ConstraintSet | None,
    cfg: ALMConfig | None,
    project_fraction: float,
    final_project: bool,
) -> tuple[np.ndarray, list[float]]:
    """One full reverse chain. Returns the final point and the per-step
    post-update residual aggregates (empty when cs is None)."""
    x = rng.standard_normal(model.dim)
    state = SamplerState(x=x, t=sched.T, rng=rng)
    residuals: list[float] = []
    cutoff = int(np.ceil(project_fraction * sched.T))
    warm = None
    while state.t >= 1:
        do_project = cs is not None and state.t <= cutoff
        if do_project:
            state, res = projected_reverse_step(state, model, sched, cs, cfg, warm)
            warm = res.warm
        else:
            state = reverse_step(state, model, sched)
        if cs is not None:
            residuals.append(cs.residual_total(state.x))
    if cs is not None and final_project and not cs.all_satisfied(state.x):
        res = _project_point(state.x, cs, cfg, warm)
        state = replace(state, x=res.point)
        if residuals:
            residuals[-1] = cs.residual_total(state.x)
    return state.x, residuals


def sample_constrained(
    model,
    sched: NoiseSchedule,
    cs: ConstraintSet,
    cfg: ALMConfig | None = None,
    n_samples: int = 1,
    seed: int = 0,
    project_fraction: float = 1.0,
    retry_cap: int = RETRY_CAP,
) -> tuple[np.ndarray, ViolationTrace]:
    """Draw n_samples feasible points by projected reverse diffusion.

    Each chain starts from x_T ~ N(0, I) under its own derived rng and runs
    T projected steps; project_fraction < 1 restricts projection to the
    trailing steps of the schedule (0.0 leaves only the final repair, the
    post-hoc baseline). Chains whose projection fails restart with fresh
    noise up to retry_cap attempts. Returns the samples and a trace of the
    mean/max residual across chains after every step.

    Raises RetryExhaustedError naming the number of chains that never
    produced a feasible sample.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    root = SeededRng(seed)
    samples = np.zeros((n_samples, model.dim), dtype=np.float64)
    per_chain: list[list[float]] = []
    failed = 0
    for i in range(n_samples):
        result = None
        for attempt in range(retry_cap):
            rng = root.child("chain", i, "retry", attempt)
            try:
                result = _run_chain(
                    model, sched, rng, cs, cfg, project_fraction, True
                )
                break
            except NonConvergenceError:
                continue
        if result is None:
            failed += 1
            per_chain.append([np.nan] * sched.T)
        else:
            samples[i], residuals = result
            per_chain.append(residuals)
    if failed:
        raise RetryExhaustedError(
            f"{failed} of {n_samples} chains found no feasible sample "
            f"within {retry_cap} attempts each",
            attempts=retry_cap,
        )
    trace = ViolationTrace()
    table = np.asarray(per_chain, dtype=np.float64)
    for j in range(sched.T):
        trace.record(sched.T - 1 - j, table[:, j])
    return samples, trace


def sample_unconstrained(
    model,
    sched: NoiseSchedule,
    n_samples: int = 1,
    seed: int = 0,
    cs: ConstraintSet | None = None,
) -> tuple[np.ndarray, ViolationTrace]:
    """Plain reverse-diffusion batch with no projection anywhere.

    When cs is given it is only measured, never enforced, so the returned
    trace shows the violations the raw dynamics would incur. The rng stream
    layout matches sample_constrained, so equal seeds give matched noise.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    root = SeededRng(seed)
    samples = np.zeros((n_samples, model.dim), dtype=np.float64)
    per_chain: list[list[float]] = []
    for i in range(n_samples):
        rng = root.child("chain", i, "retry", 0)
        samples[i], residuals = _run_chain(model, sched, rng, cs, None, -1.0, False)
        per_chain.append(residuals)
    trace = ViolationTrace()
    if cs is not None:
        table = np.asarray(per_chain, dtype=np.float64)
        for j in range(sched.T):
            trace.record(sched.T - 1 - j, table[:, j])
    return samples, trace
