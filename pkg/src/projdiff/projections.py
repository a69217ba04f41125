"""Constraint types and projection operators.

A Constraint pairs a boolean predicate with a nonnegative residual that is
zero (up to the constraint's check tolerance) exactly on the feasible set.
Projection finds the nearest feasible point: closed forms where available
(box, halfspace, top-k sign flips), otherwise an augmented Lagrangian solver
(``alm_project``) that alternates inner gradient descent on the penalized
objective with outer dual updates, and reports convergence only when every
predicate holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, NonConvergenceError

# Default tolerance tying predicates to residuals: a predicate holds iff the
# residual is at or below this value (constraints may override, e.g. counting
# constraints whose smooth residual is a stand-in for a hard test).
CHECK_TOL = 1e-8

# Inner line-search settings. The search is derivative-free (bracket then
# golden-section) because hinge residuals give the augmented objective
# gradient kinks at the feasible boundary: a slope-based acceptance test uses
# the one-sided derivative, which misjudges any step that crosses a kink.
# Along a fixed ray the objective is unimodal whenever the constraints are
# convex, so golden-section finds the 1-D minimizer; for nonconvex residuals
# it still returns a strict-decrease point or reports failure.
_GRAD_TOL = 1e-12
_RAY_SHRINK = 50
_RAY_EXPAND = 40
_GOLDEN = 0.6180339887498949
_GOLDEN_MAX = 30
_GOLDEN_RTOL = 1e-3
# Relative displacement below which an accepted inner step counts as a stall.
# At a kink the raw gradient direction admits only microscopic oscillation
# steps even when other directions still make real progress, so a collapsed
# raw step first triggers the deflected retry and only then the stall.
_STEP_TOL = 1e-11
_DEFLECT_TRY_TOL = 1e-7
_JAM_MOVE_TOL = 1e-4
_MU_WARM_FACTOR = 100.0


@dataclass(frozen=True)
class Constraint:
    """One feasibility requirement.

    predicate(x) decides hard feasibility. residual(x) is the nonnegative
    violation magnitude driving ALM; residual_grad(x) its gradient where
    defined (None marks non-differentiable constraints, which exact repair
    must handle). exact_project(x), when present, returns the exact nearest
    feasible point.
    """

    name: str
    predicate: Callable[[Any], bool]
    residual: Callable[[Any], float]
    residual_grad: Callable[[Any], np.ndarray] | None = None
    exact_project: Callable[[Any], Any] | None = None
    is_convex: bool = False
    check_tol: float = CHECK_TOL

    @property
    def supports_exact_projection(self) -> bool:
        return self.exact_project is not None

    @property
    def differentiable(self) -> bool:
        return self.residual_grad is not None

    def satisfied(self, x) -> bool:
        return bool(self.predicate(x))


class ConstraintSet:
    """Ordered collection of constraints with aggregate helpers.

    ``vector_residual`` / ``vector_weighted_grad``, when supplied, evaluate
    the whole set in one call — ``vector_residual(x)`` returns the stacked
    residuals in constraint order and ``vector_weighted_grad(x, w)`` the
    weighted sum of residual gradients. They must agree with the
    per-constraint callables; domains whose constraints share intermediate
    work (e.g. one geometry expansion feeding every pairwise term) provide
    them so projection's innermost probes touch the shared work once.
    """

    def __init__(
        self,
        constraints: Sequence[Constraint],
        *,
        vector_residual: Callable[[Any], np.ndarray] | None = None,
        vector_weighted_grad: Callable[[Any, np.ndarray], np.ndarray] | None = None,
    ):
        self.constraints: tuple[Constraint, ...] = tuple(constraints)
        self.vector_residual = vector_residual
        self.vector_weighted_grad = vector_weighted_grad

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self) -> Iterator[Constraint]:
        return iter(self.constraints)

    def __getitem__(self, i) -> Constraint:
        return self.constraints[i]

    def residual_vector(self, x) -> np.ndarray:
        if self.vector_residual is not None:
            return np.asarray(self.vector_residual(x), dtype=np.float64)
        return np.array([c.residual(x) for c in self.constraints], dtype=np.float64)

    def residual_total(self, x) -> float:
        return float(np.sum(self.residual_vector(x)))

    def all_satisfied(self, x) -> bool:
        return all(c.satisfied(x) for c in self.constraints)

    @property
    def exact_projector(self) -> Callable | None:
        """Closed-form projection, available only for a single-constraint set
        (composing per-constraint exact projections is not the projection of
        the intersection)."""
        if len(self.constraints) == 1 and self.constraints[0].supports_exact_projection:
            return self.constraints[0].exact_project
        return None


@dataclass(frozen=True)
class ALMConfig:
    """Augmented Lagrangian settings.

    lambda0/mu0 initialize the multipliers and penalty weight; gamma is the
    inner descent base step; alpha the penalty growth factor per outer round
    (capped at mu_max); delta the aggregate-residual termination tolerance.
    """

    lambda0: float = 0.0
    mu0: float = 1.0
    gamma: float = 0.05
    alpha: float = 2.0
    delta: float = 1e-6
    mu_max: float = 1e6
    max_inner_iter: int = 100
    max_outer_iter: int = 50

    def __post_init__(self):
        if self.gamma <= 0 or self.alpha < 1 or self.delta <= 0:
            raise ConfigError("ALMConfig requires gamma > 0, alpha >= 1, delta > 0")
        if self.max_inner_iter < 1 or self.max_outer_iter < 1:
            raise ConfigError("ALM iteration limits must be >= 1")
        if self.mu0 <= 0 or self.mu_max < self.mu0:
            raise ConfigError("ALMConfig requires 0 < mu0 <= mu_max")


@dataclass
class WarmState:
    """Dual variables (and optionally a start point) carried across
    successive projections of one evolving iterate. Single-owner: the solver
    returns a fresh instance, it never mutates the one passed in."""

    lambdas: np.ndarray
    mu: float
    y: Any | None = None


@dataclass
class ProjectionResult:
    point: Any
    residual_final: float
    iterations_used: int
    converged: bool
    warm: WarmState | None = None
    inner_iterations: int = 0


# ---------------------------------------------------------------------------
# Exact projections
# ---------------------------------------------------------------------------


def project_box(x: np.ndarray, lo, hi) -> np.ndarray:
    """Clamp to the axis-aligned box [lo, hi] (the exact L2 projection)."""
    return np.clip(np.asarray(x, dtype=np.float64), lo, hi)


def project_halfspace(x: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Exact L2 projection onto {y : a . y <= b}.

    Points the halfspace predicate accepts (violation at or below the check
    tolerance) pass through unchanged, which makes the projection idempotent
    bit-for-bit despite boundary rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    gap = float(a @ x) - float(b)
    if gap <= CHECK_TOL:
        return x.copy()
    return x - a * (gap / float(a @ a))


def residual_linear(x: np.ndarray, a: np.ndarray, b: float) -> float:
    """Hinge violation max(0, a . x - b) of a linear inequality."""
    return max(0.0, float(np.asarray(a) @ np.asarray(x)) - float(b))


def project_topk_negative(grid: np.ndarray, k: int, eps: float) -> np.ndarray:
    """Flip the cheapest entries so exactly ``k`` are negative.

    Entries are assumed to lie in [-1, 1]. If the grid already has k negative
    entries it is returned unchanged (bit-for-bit). Otherwise the entries
    closest to the sign boundary (smallest absolute value, ties to the lowest
    flat index) are flipped: to -eps when negatives are missing, to +eps when
    there are too many. Untouched entries are preserved exactly.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if not (0.0 < eps <= 1.0):
        raise ConfigError(f"eps must be in (0, 1], got {eps}")
    flat = grid.ravel()
    n = flat.size
    if not (0 <= k <= n):
        raise ConfigError(f"target count {k} outside [0, {n}]")
    neg = flat < 0.0
    count = int(np.sum(neg))
    if count == k:
        return grid
    out = flat.copy()
    if count < k:
        candidates = np.flatnonzero(~neg)
        order = candidates[np.argsort(flat[candidates], kind="stable")]
        out[order[: k - count]] = -eps
    else:
        candidates = np.flatnonzero(neg)
        order = candidates[np.argsort(-flat[candidates], kind="stable")]
        out[order[: count - k]] = eps
    return out.reshape(grid.shape)


# ---------------------------------------------------------------------------
# Constraint builders for the basic convex shapes
# ---------------------------------------------------------------------------


def halfspace_constraint(a: np.ndarray, b: float, name: str = "halfspace") -> Constraint:
    a = np.asarray(a, dtype=np.float64)
    b = float(b)
    return Constraint(
        name=name,
        predicate=lambda x: residual_linear(x, a, b) <= CHECK_TOL,
        residual=lambda x: residual_linear(x, a, b),
        residual_grad=lambda x: a if float(a @ x) > b else np.zeros_like(a),
        exact_project=lambda x: project_halfspace(x, a, b),
        is_convex=True,
    )


def box_constraint(lo, hi, name: str = "box") -> Constraint:
    lo_arr = np.asarray(lo, dtype=np.float64)
    hi_arr = np.asarray(hi, dtype=np.float64)

    def residual(x):
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(np.maximum(lo_arr - x, 0.0) + np.maximum(x - hi_arr, 0.0)))

    def grad(x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x > hi_arr, 1.0, 0.0) + np.where(x < lo_arr, -1.0, 0.0)

    return Constraint(
        name=name,
        predicate=lambda x: residual(x) <= CHECK_TOL,
        residual=residual,
        residual_grad=grad,
        exact_project=lambda x: project_box(x, lo_arr, hi_arr),
        is_convex=True,
    )


# ---------------------------------------------------------------------------
# Augmented Lagrangian projection
# ---------------------------------------------------------------------------


class _EuclideanProblem:
    """Squared-distance projection problem over a flat float array."""

    def __init__(self, x: np.ndarray, cs: ConstraintSet):
        self.x = np.asarray(x, dtype=np.float64)
        self.cs = cs
        diff = [c for c in cs if not c.differentiable]
        if diff:
            names = ", ".join(c.name for c in diff)
            raise ConfigError(f"ALM requires differentiable residuals; lacking: {names}")

    def start(self, warm_y):
        return np.asarray(warm_y, dtype=np.float64).copy() if warm_y is not None else self.x.copy()

    def on_outer_start(self, k: int):
        pass

    def cost_and_grad(self, y):
        d = y - self.x
        return float(np.sum(d * d)), 2.0 * d

    def residual_vector(self, y) -> np.ndarray:
        return self.cs.residual_vector(y)

    def weighted_residual_grad(self, y, weights: np.ndarray) -> np.ndarray:
        if self.cs.vector_weighted_grad is not None:
            return np.asarray(self.cs.vector_weighted_grad(y, weights), dtype=np.float64)
        total = np.zeros_like(y)
        for w, c in zip(weights, self.cs):
            if w != 0.0:
                total += w * c.residual_grad(y)
        return total

    def hard_check(self, y) -> bool:
        return self.cs.all_satisfied(y)

    def finalize(self, y):
        return y


def _ray_search(problem, lagrangian, y, d, f0, step):
    """Approximately minimize the augmented objective along ``y + t*d``.

    Brackets a decrease starting from trial length ``step`` (halving on
    failure, doubling while the objective keeps falling), then refines by
    golden-section. Returns (t, y_new, res_new, l_new) for the best point
    found, or None when no step along the ray beats ``f0``."""

    def value(t):
        p = y + t * d
        r = problem.residual_vector(p)
        f = lagrangian(p, r)
        if not np.isfinite(f):
            f = np.inf
        return f, p, r

    t = step
    ft, pt, rt = value(t)
    shrunk = False
    for _ in range(_RAY_SHRINK):
        if ft < f0:
            break
        t *= 0.5
        shrunk = True
        ft, pt, rt = value(t)
    if not ft < f0:
        return None
    best = (ft, t, pt, rt)
    if shrunk:
        hi = 2.0 * t
    else:
        hi = t
        for _ in range(_RAY_EXPAND):
            t2 = 2.0 * t
            f2, p2, r2 = value(t2)
            if f2 >= ft:
                hi = t2
                break
            t, ft, pt, rt = t2, f2, p2, r2
            best = (ft, t, pt, rt)
            hi = t
    a, b = 0.0, hi
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, pc, rc = value(c)
    fe, pe, re_ = value(e)
    for _ in range(_GOLDEN_MAX):
        if fc < best[0]:
            best = (fc, c, pc, rc)
        if fe < best[0]:
            best = (fe, e, pe, re_)
        if (b - a) <= _GOLDEN_RTOL * hi:
            break
        if fc <= fe:
            b, e, fe, pe, re_ = e, c, fc, pc, rc
            c = b - _GOLDEN * (b - a)
            fc, pc, rc = value(c)
        else:
            a, c, fc, pc, rc = c, e, fe, pe, re_
            e = a + _GOLDEN * (b - a)
            fe, pe, re_ = value(e)
    if not best[0] < f0:
        return None
    ft, t, pt, rt = best
    return t, pt, rt, ft


def _deflected_direction(problem, y, grad, cur_res):
    """Remove from ``-grad`` the motion into constraints that activate along
    it.

    At a residual kink (the feasible boundary) the one-sided gradients
    disagree: evaluated from the feasible side the penalty contributes
    nothing, so ``-grad`` drives the iterate across the kink, the penalty
    wall rejects every backtracked step, and plain descent jams even though
    other directions still make progress. Probing a short step exposes which
    constraints activate; projecting the direction off their normals (one
    Gram-Schmidt pass per newly active constraint) yields the reduced
    direction that slides along the active boundary.

    Returns ``(direction, activated)``: ``direction`` is the reduced descent
    direction or None when nothing useful remains, and ``activated`` records
    whether the probe ran into any constraint at all. ``(None, True)`` is the
    genuine boundary-stationarity signal; ``(None, False)`` only means the
    probe saw no wall, so ``-grad`` itself was unobstructed."""
    d = -grad
    n = cur_res.shape[0]
    probe_scale = 1e-9 * (1.0 + float(np.linalg.norm(y)))
    handled: set[int] = set()
    for _ in range(n + 1):
        dn = float(np.linalg.norm(d))
        if dn <= _GRAD_TOL:
            return None, True
        probe = y + (probe_scale / dn) * d
        res_p = problem.residual_vector(probe)
        newly = [
            i
            for i in range(n)
            if i not in handled and res_p[i] > cur_res[i] + 1e-14
        ]
        if not newly:
            break
        unit = np.zeros(n, dtype=np.float64)
        for i in newly:
            handled.add(i)
            unit[:] = 0.0
            unit[i] = 1.0
            normal = problem.weighted_residual_grad(probe, unit)
            nn = float(np.linalg.norm(normal))
            if nn <= _GRAD_TOL:
                continue
            normal = normal / nn
            d = d - float(np.sum(d * normal)) * normal
    if not handled:
        return None, False
    dn = float(np.linalg.norm(d))
    return (d if dn > _GRAD_TOL else None), True


def _kink_stationary(problem, y, lambdas, mu, res_vec) -> bool:
    """First-order optimality test at a feasible boundary point.

    One-sided residual hinges vanish identically on the feasible side, so a
    projection whose solution sits exactly on the boundary can never satisfy
    the smooth stationarity tests: descent jams against the penalty wall in
    microscopic zigzag crossings while the multiplier update (mu * residual)
    is a no-op at zero residual, and further outer rounds change nothing.
    The correct certificate at such a kink is active-set based: steepest
    descent must run into activating constraints, and projecting it off
    their normals must leave no usable descent direction."""
    _, cost_grad = problem.cost_and_grad(y)
    grad = cost_grad + problem.weighted_residual_grad(y, lambdas + mu * res_vec)
    if float(np.sum(grad * grad)) <= _GRAD_TOL**2:
        return True
    d, activated = _deflected_direction(problem, y, grad, res_vec)
    return activated and d is None


def _alm_loop(problem, cfg: ALMConfig, warm: WarmState | None, n_constraints: int):
    lambdas = (
        np.array(warm.lambdas, dtype=np.float64).copy()
        if warm is not None
        else np.full(n_constraints, cfg.lambda0, dtype=np.float64)
    )
    # Multipliers carry the active-set memory between successive projections;
    # the penalty parameter only sets conditioning, and resuming it saturated
    # is poison on curved boundaries: a tangential stride s leaves the surface
    # by ~s^2 / (2 * curvature radius), so stiffness mu caps useful strides at
    # ~sqrt(1/mu) and a carried-over mu_max reduces descent to a microscopic
    # crawl. Resume mu moderated; a genuinely stiff subproblem re-escalates
    # within its own outer loop.
    mu = (
        min(float(warm.mu), cfg.mu0 * _MU_WARM_FACTOR)
        if warm is not None
        else cfg.mu0
    )
    # The zero-iteration fast path below must judge the point being
    # projected, never the warm iterate: a feasible warm iterate from an
    # earlier projection says nothing about the new input.
    y = problem.start(None)

    def lagrangian(point, res_vec):
        cost, _ = problem.cost_and_grad(point)
        return cost + float(lambdas @ res_vec) + 0.5 * mu * float(res_vec @ res_vec)

    best_y = y
    best_res = float(np.sum(problem.residual_vector(y)))
    inner_total = 0
    outer_used = 0
    converged = False

    def feasible(res_vec, point) -> bool:
        # Problems may supply their own acceptance rule; the relaxed-sequence
        # problem terminates on the hard decoded check alone because its
        # residuals are smoothed surrogates that stay positive even at
        # feasible points.
        custom = getattr(problem, "is_feasible", None)
        if custom is not None:
            return bool(custom(res_vec, point, cfg.delta))
        return float(np.sum(res_vec)) <= cfg.delta and problem.hard_check(point)

    # Zero-iteration fast path: a feasible input is returned untouched.
    problem.on_outer_start(0)
    res_vec = problem.residual_vector(y)
    if feasible(res_vec, y):
        converged = True
    elif warm is not None and warm.y is not None:
        y = problem.start(warm.y)

    for k in range(1, cfg.max_outer_iter + 1):
        if converged:
            break
        if k > 1:
            problem.on_outer_start(k - 1)

        # inner: descent on the augmented objective, each step found by a
        # derivative-free ray search. When the raw gradient step fails or
        # collapses to a microscopic kink oscillation, retry along the
        # deflected (active-set) direction and keep the better point.
        # "stationary" means the descent genuinely ended (tiny gradient,
        # exhausted directions, or a negligible best step), as opposed to
        # running out of the iteration budget mid-descent; termination
        # requires it so that a merely-feasible overshoot cannot masquerade
        # as the projection.
        step = cfg.gamma
        cur_res = problem.residual_vector(y)
        cur_l = lagrangian(y, cur_res)
        stationary = False
        for _ in range(cfg.max_inner_iter):
            _, cost_grad = problem.cost_and_grad(y)
            weights = lambdas + mu * cur_res
            grad = cost_grad + problem.weighted_residual_grad(y, weights)
            if not np.all(np.isfinite(grad)):
                raise ValueError(
                    "NaN/inf gradient in ALM inner loop "
                    f"(outer {k}, residual {float(np.sum(cur_res)):.3e})"
                )
            gn2 = float(np.sum(grad * grad))
            if gn2 <= _GRAD_TOL**2:
                stationary = True
                break
            inner_total += 1
            scale = 1.0 + float(np.linalg.norm(y))
            unit = -grad / float(np.sqrt(gn2))
            hit = _ray_search(problem, lagrangian, y, unit, cur_l, step)
            raw_move = hit[0] if hit is not None else 0.0
            # Deflect when the raw step collapsed outright, or when a
            # feasible iterate is reduced to microscopic wall crossings:
            # sliding along the active boundary takes full strides where
            # steepest descent can only zigzag at the penalty's depth scale.
            at_wall = float(np.sum(cur_res)) <= 0.0
            if (
                hit is None
                or raw_move <= _DEFLECT_TRY_TOL * scale
                or (at_wall and raw_move <= _JAM_MOVE_TOL * scale)
            ):
                d, _ = _deflected_direction(problem, y, grad, cur_res)
                if d is not None:
                    d = d / float(np.linalg.norm(d))
                    alt = _ray_search(problem, lagrangian, y, d, cur_l, step)
                    if alt is not None and (hit is None or alt[3] < hit[3]):
                        hit = alt
            if hit is None:
                stationary = True
                break
            _, y_new, cur_res, cur_l = hit
            moved = float(np.linalg.norm(y_new - y))
            y = y_new
            if moved <= _STEP_TOL * scale:
                stationary = True
                break
            step = max(2.0 * moved, cfg.gamma * 1e-3)

        res_vec = problem.residual_vector(y)
        agg = float(np.sum(res_vec))
        if agg < best_res:
            best_res, best_y = agg, y
        outer_used = k
        # Feasibility alone is not enough to stop: a merely-feasible
        # overshoot mid-descent must not masquerade as the projection. The
        # optimality half of the test is either the smooth stationarity the
        # inner loop declared, or — when the solution sits exactly on a
        # residual kink where smooth stationarity is unreachable — the
        # active-set first-order certificate.
        if feasible(res_vec, y) and (
            stationary or _kink_stationary(problem, y, lambdas, mu, res_vec)
        ):
            converged = True
            break
        lambdas = lambdas + mu * res_vec
        mu = min(cfg.alpha * mu, cfg.mu_max)

    final_res = float(np.sum(problem.residual_vector(y)))
    if not converged and best_res < final_res:
        y, final_res = best_y, best_res
    result = ProjectionResult(
        point=problem.finalize(y),
        residual_final=final_res,
        iterations_used=outer_used,
        converged=converged,
        warm=WarmState(lambdas=lambdas, mu=mu, y=y),
        inner_iterations=inner_total,
    )
    if not converged:
        raise NonConvergenceError(
            f"projection did not reach feasibility in {cfg.max_outer_iter} outer "
            f"iterations (residual {final_res:.3e})",
            result=result,
        )
    return result


def alm_project(
    x,
    cs: ConstraintSet,
    cost: str = "euclidean",
    cfg: ALMConfig | None = None,
    warm: WarmState | None = None,
    **kl_kwargs,
) -> ProjectionResult:
    """Project ``x`` onto the feasible set of ``cs`` by augmented Lagrangian.

    cost="euclidean" minimizes ||x - y||^2 over arrays; cost="kl" minimizes
    KL(x || y) over stacks of probability rows (see the discrete sampler,
    which supplies the relaxation settings through keyword arguments).

    Returns a ProjectionResult whose point satisfies every predicate.
    Raises NonConvergenceError (carrying the best iterate and its residual)
    when the iteration budget runs out, and ValueError on non-finite
    gradients.
    """
    cfg = cfg or ALMConfig()
    if cost == "euclidean":
        problem = _EuclideanProblem(np.asarray(x, dtype=np.float64), cs)
        return _alm_loop(problem, cfg, warm, len(cs))
    if cost == "kl":
        from .sampler_discrete import make_kl_problem  # local import, avoids a cycle

        problem = make_kl_problem(x, cs, **kl_kwargs)
        return _alm_loop(problem, cfg, warm, len(cs))
    raise ConfigError(f"unknown projection cost {cost!r} (expected 'euclidean' or 'kl')")
