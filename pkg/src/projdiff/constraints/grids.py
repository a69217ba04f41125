"""Grid-count and rollout-matching constraints.

Porosity fixes the number of negative cells in a scalar grid; the hard count
cannot drive a gradient method, so the residual substitutes a sigmoid count
and the certificate comes from the exact sign-flip projection. Kinematics
pins a sampled position sequence to the trajectory a constant-acceleration
rollout dictates, with overwrite as the exact projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..projections import Constraint, project_topk_negative

SIGMOID_WIDTH = 0.05
FLIP_DEPTH = 0.05
# A saturated sigmoid still leaks a little mass on the wrong side of zero,
# so the soft count sits near but not exactly on the hard count; the
# feasibility cutoff must tolerate that gap while rejecting an off-by-one.
POROSITY_CHECK_TOL = 0.45


@dataclass(frozen=True)
class PorosityTarget:
    """Exactly ``k`` of the n_rows x n_cols cells must be negative."""

    k: int
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ConfigError("grid dimensions must be positive")
        if not (0 <= self.k <= self.n_rows * self.n_cols):
            raise ConfigError("target count outside the grid size")

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols


def negative_count(x: np.ndarray) -> int:
    return int(np.sum(np.asarray(x) < 0.0))


def soft_negative_count(x: np.ndarray, width: float = SIGMOID_WIDTH) -> float:
    """Differentiable stand-in for the negative-cell count."""
    z = -np.asarray(x, dtype=np.float64).ravel() / width
    return float(np.sum(1.0 / (1.0 + np.exp(-z))))


def porosity_constraint(target: PorosityTarget) -> Constraint:
    k = target.k

    def residual(x):
        return abs(soft_negative_count(x) - k)

    def residual_grad(x):
        x = np.asarray(x, dtype=np.float64)
        z = -x.ravel() / SIGMOID_WIDTH
        s = 1.0 / (1.0 + np.exp(-z))
        sign = np.sign(soft_negative_count(x) - k)
        return (-sign / SIGMOID_WIDTH) * s * (1.0 - s)

    def exact(x):
        return project_topk_negative(np.asarray(x, dtype=np.float64), k, FLIP_DEPTH)

    return Constraint(
        name=f"porosity[k={k}]",
        predicate=lambda x: negative_count(x) == k,
        residual=residual,
        residual_grad=residual_grad,
        exact_project=exact,
        is_convex=False,
        check_tol=POROSITY_CHECK_TOL,
    )


@dataclass(frozen=True)
class KinematicsSpec:
    """Free motion under constant acceleration with unit timestep.

    The sample is the position at steps 1..horizon; the initial state
    (position p0, velocity v0) is known and not part of the sample.
    """

    p0: float
    g: float
    horizon: int
    v0: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least one step")


def kinematics_rollout(spec: KinematicsSpec) -> np.ndarray:
    """Positions p_1..p_F from v_t = v_{t-1} + g, p_t = p_{t-1} + v_{t-1} + g/2.

    For v0 = 0 this telescopes to p_t = p0 + g t^2 / 2.
    """
    out = np.empty(spec.horizon, dtype=np.float64)
    p, v = float(spec.p0), float(spec.v0)
    for t in range(spec.horizon):
        p = p + v + 0.5 * spec.g
        v = v + spec.g
        out[t] = p
    return out


def kinematics_constraint(spec: KinematicsSpec) -> Constraint:
    roll = kinematics_rollout(spec)

    def check_shape(x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != roll.shape:
            raise ValueError(
                f"expected a length-{spec.horizon} position sequence, "
                f"got shape {x.shape}"
            )
        return x

    def residual(x):
        return float(np.linalg.norm(check_shape(x) - roll))

    def residual_grad(x):
        d = check_shape(x) - roll
        nrm = float(np.linalg.norm(d))
        if nrm == 0.0:
            return np.zeros_like(d)
        return d / nrm

    def exact(x):
        check_shape(x)
        return roll.copy()

    return Constraint(
        name="kinematics",
        predicate=lambda x: float(np.max(np.abs(check_shape(x) - roll))) <= 1e-9,
        residual=residual,
        residual_grad=residual_grad,
        exact_project=exact,
        is_convex=True,
    )
