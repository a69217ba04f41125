"""Multi-agent trajectory constraints: pairwise clearance and obstacle
avoidance over 2-D waypoint bundles with pinned endpoints.

The decision variables are the interior waypoints of every agent jointly,
flattened to one vector. Start and goal waypoints are structural: they are
inserted when paths are reconstructed and simply never appear among the
variables, so no projection can move them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ConfigError
from ..numerics import SeededRng
from ..projections import CHECK_TOL, Constraint, ConstraintSet


@dataclass(frozen=True)
class AgentTrajectoryBundle:
    """A agents moving through J timesteps in the plane.

    ``starts``/``goals`` are (A, 2); ``radii`` is (A,). The minimum allowed
    distance between agents i and k is radii[i] + radii[k]. A flattened
    sample vector covers only the J - 2 interior waypoints of each agent.
    """

    starts: np.ndarray
    goals: np.ndarray
    radii: np.ndarray
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "starts", np.asarray(self.starts, dtype=np.float64))
        object.__setattr__(self, "goals", np.asarray(self.goals, dtype=np.float64))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=np.float64))
        if self.starts.ndim != 2 or self.starts.shape[1] != 2:
            raise ConfigError("starts must be (A, 2)")
        if self.goals.shape != self.starts.shape:
            raise ConfigError("goals must match starts")
        if self.radii.shape != (self.starts.shape[0],):
            raise ConfigError("one radius per agent required")
        if np.any(self.radii <= 0):
            raise ConfigError("agent radii must be positive")
        if self.n_steps < 2:
            raise ConfigError("a trajectory needs at least its two endpoints")

    @property
    def n_agents(self) -> int:
        return self.starts.shape[0]

    @property
    def n_interior(self) -> int:
        return self.n_steps - 2

    @property
    def dim(self) -> int:
        return self.n_agents * self.n_interior * 2

    @property
    def dmin_matrix(self) -> np.ndarray:
        return self.radii[:, None] + self.radii[None, :]

    def paths(self, x: np.ndarray) -> np.ndarray:
        """Expand a flat interior vector to full (A, J, 2) paths."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected flat vector of length {self.dim}")
        out = np.empty((self.n_agents, self.n_steps, 2))
        out[:, 0] = self.starts
        out[:, -1] = self.goals
        if self.n_interior:
            out[:, 1:-1] = x.reshape(self.n_agents, self.n_interior, 2)
        return out

    def paths_shared(self, x: np.ndarray) -> np.ndarray:
        """Like :meth:`paths`, but memoized and read-only.

        Projection evaluates every constraint of a bundle at the same point,
        so the most recent expansion is cached (keyed by the raw bytes of
        ``x``) and shared; callers that need to mutate use :meth:`paths`.
        """
        x = np.asarray(x, dtype=np.float64)
        key = x.tobytes()
        cached = self.__dict__.get("_paths_memo")
        if cached is not None and cached[0] == key:
            return cached[1]
        out = self.paths(x)
        out.flags.writeable = False
        object.__setattr__(self, "_paths_memo", (key, out))
        return out

    def interior_flat(self, paths: np.ndarray) -> np.ndarray:
        paths = np.asarray(paths, dtype=np.float64)
        return paths[:, 1:-1].reshape(-1).copy()

    def straight_lines(self) -> np.ndarray:
        """Interior waypoints of the straight start-to-goal interpolations."""
        ts = np.linspace(0.0, 1.0, self.n_steps)[1:-1]
        pts = (
            self.starts[:, None, :] * (1.0 - ts)[None, :, None]
            + self.goals[:, None, :] * ts[None, :, None]
        )
        return pts.reshape(-1)


@dataclass(frozen=True)
class ObstacleMap:
    """Disc obstacles inside a rectangular world.

    ``bounds`` is (xmin, ymin, xmax, ymax); every obstacle center must lie
    inside it and every radius must be positive.
    """

    centers: np.ndarray
    radii: np.ndarray
    bounds: tuple = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(
            self, "centers", np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        )
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=np.float64))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        if self.radii.shape != (self.centers.shape[0],):
            raise ConfigError("one radius per obstacle required")
        if np.any(self.radii <= 0):
            raise ConfigError("obstacle radii must be positive")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ConfigError("degenerate world bounds")
        inside = (
            (self.centers[:, 0] >= xmin)
            & (self.centers[:, 0] <= xmax)
            & (self.centers[:, 1] >= ymin)
            & (self.centers[:, 1] <= ymax)
        )
        if not np.all(inside):
            raise ConfigError("obstacle centers must lie within the bounds")

    @property
    def n_obstacles(self) -> int:
        return self.centers.shape[0]


def _clearance_constraint(bundle, value_grad, name, value_only=None):
    """Wrap a (total hinge, path gradient) kernel as a flat-vector Constraint.

    ``value_only``, when given, computes just the hinge total from the
    expanded paths; residual evaluation is the innermost loop of the
    projection's ray searches, and skipping the gradient there is the
    difference between touching a handful of floats and allocating
    path-shaped arrays per probe.
    """

    def residual(x):
        p = bundle.paths_shared(x)
        if value_only is not None:
            return float(value_only(p))
        return float(value_grad(p)[0])

    def residual_grad(x):
        g = value_grad(bundle.paths_shared(x))[1]
        return bundle.interior_flat(g)

    return Constraint(
        name=name,
        predicate=lambda x: residual(x) <= CHECK_TOL,
        residual=residual,
        residual_grad=residual_grad,
        is_convex=False,
    )


def collision_constraint(bundle: AgentTrajectoryBundle) -> Constraint:
    """All agent pairs keep at least their summed radii apart, every step."""
    if bundle.n_agents < 2:
        raise ConfigError("collision constraint needs at least two agents")
    dmin = bundle.dmin_matrix
    return _clearance_constraint(
        bundle, lambda p: kernels.pairwise_clearance(p, dmin), "collision"
    )


def collision_constraints(bundle: AgentTrajectoryBundle) -> list[Constraint]:
    """Per-pair clearance constraints.

    One constraint per unordered agent pair gives the projection one
    multiplier per pair; the aggregated form shares a single multiplier
    across every pair and conditions much worse.
    """
    if bundle.n_agents < 2:
        raise ConfigError("collision constraints need at least two agents")
    out = []
    for i in range(bundle.n_agents):
        for k in range(i + 1, bundle.n_agents):
            sub = np.array([i, k])
            dmin = bundle.dmin_matrix[np.ix_(sub, sub)]

            def vg(paths, sub=sub, dmin=dmin):
                val, g2 = kernels.pairwise_clearance(paths[sub], dmin)
                g = np.zeros_like(paths)
                g[sub] = g2
                return val, g

            def val(paths, i=i, k=k, d=float(bundle.dmin_matrix[i, k])):
                diff = paths[i] - paths[k]
                dist = np.sqrt(np.sum(diff * diff, axis=1))
                return np.sum(np.maximum(0.0, d - dist))

            out.append(
                _clearance_constraint(bundle, vg, f"clear({i},{k})", val)
            )
    return out


def obstacle_constraint(
    bundle: AgentTrajectoryBundle, omap: ObstacleMap
) -> Constraint:
    """Every waypoint of every agent stays out of every obstacle disc."""
    return _clearance_constraint(
        bundle,
        lambda p: kernels.obstacle_clearance(p, omap.centers, omap.radii),
        "obstacles",
    )


def obstacle_constraints(
    bundle: AgentTrajectoryBundle, omap: ObstacleMap
) -> list[Constraint]:
    """One constraint per (agent, obstacle) pair; see collision_constraints."""
    out = []
    for i in range(bundle.n_agents):
        for k in range(omap.n_obstacles):
            center = omap.centers[k : k + 1]
            radius = omap.radii[k : k + 1]

            def vg(paths, i=i, center=center, radius=radius):
                val, g1 = kernels.obstacle_clearance(
                    paths[i : i + 1], center, radius
                )
                g = np.zeros_like(paths)
                g[i : i + 1] = g1
                return val, g

            def val(paths, i=i, c=omap.centers[k], r=float(omap.radii[k])):
                diff = paths[i] - c
                dist = np.sqrt(np.sum(diff * diff, axis=1))
                return np.sum(np.maximum(0.0, r - dist))

            out.append(
                _clearance_constraint(bundle, vg, f"avoid({i},{k})", val)
            )
    return out


def constraint_set(
    bundle: AgentTrajectoryBundle, omap: ObstacleMap | None = None
) -> ConstraintSet:
    """Decomposed clearance constraints with whole-set fast evaluation.

    The constraints are the per-pair and per-(agent, obstacle) hinges of
    :func:`collision_constraints` and :func:`obstacle_constraints`, in that
    order. Every one of them reads the same expanded paths, so the set also
    carries vectorized whole-set hooks: one geometry expansion and one batch
    of distance computations per probe instead of one per constraint, which
    is where projection spends nearly all of its time on these problems.
    """
    parts: list[Constraint] = []
    n_agents = bundle.n_agents
    pair_idx = (
        np.array(
            [(i, k) for i in range(n_agents) for k in range(i + 1, n_agents)],
            dtype=np.intp,
        )
        if n_agents >= 2
        else np.empty((0, 2), dtype=np.intp)
    )
    if len(pair_idx):
        parts.extend(collision_constraints(bundle))
    have_obstacles = omap is not None and omap.n_obstacles > 0
    if have_obstacles:
        parts.extend(obstacle_constraints(bundle, omap))
    if not parts:
        raise ConfigError("constraint set needs agent pairs or obstacles")

    n_pairs = len(pair_idx)
    pi = pair_idx[:, 0]
    pk = pair_idx[:, 1]
    pair_dmin = bundle.dmin_matrix[pi, pk]

    def vector_residual(x):
        p = bundle.paths_shared(x)
        chunks = []
        if n_pairs:
            d = p[pi] - p[pk]
            dist = np.sqrt(np.sum(d * d, axis=2))
            chunks.append(
                np.sum(np.maximum(0.0, pair_dmin[:, None] - dist), axis=1)
            )
        if have_obstacles:
            d = p[:, None, :, :] - omap.centers[None, :, None, :]
            dist = np.sqrt(np.sum(d * d, axis=3))
            gaps = np.maximum(0.0, omap.radii[None, :, None] - dist)
            chunks.append(np.sum(gaps, axis=2).reshape(-1))
        return chunks[0] if len(chunks) == 1 else np.concatenate(chunks)

    def vector_weighted_grad(x, weights):
        p = bundle.paths_shared(x)
        g = np.zeros((n_agents, bundle.n_steps, 2))
        if n_pairs:
            w = weights[:n_pairs]
            d = p[pi] - p[pk]
            dist = np.sqrt(np.sum(d * d, axis=2))
            active = (pair_dmin[:, None] > dist) & (dist > 0.0)
            coef = np.where(active, w[:, None] / np.where(dist > 0.0, dist, 1.0), 0.0)
            contrib = d * coef[:, :, None]
            for m in range(n_pairs):
                g[pi[m]] -= contrib[m]
                g[pk[m]] += contrib[m]
        if have_obstacles:
            w = weights[n_pairs:].reshape(n_agents, omap.n_obstacles)
            d = p[:, None, :, :] - omap.centers[None, :, None, :]
            dist = np.sqrt(np.sum(d * d, axis=3))
            active = (omap.radii[None, :, None] > dist) & (dist > 0.0)
            coef = np.where(
                active, w[:, :, None] / np.where(dist > 0.0, dist, 1.0), 0.0
            )
            g -= np.sum(d * coef[..., None], axis=1)
        return bundle.interior_flat(g)

    return ConstraintSet(
        parts,
        vector_residual=vector_residual,
        vector_weighted_grad=vector_weighted_grad,
    )


def load_map(path, n_steps: int):
    """Read a world file and build the bundle plus obstacle map.

    The file is JSON: {"bounds": [xmin, ymin, xmax, ymax],
    "obstacles": [{"center": [x, y], "radius": r}, ...],
    "agents": [{"start": [x, y], "goal": [x, y], "radius": r}, ...]}.
    """
    with open(path) as fh:
        doc = json.load(fh)
    agents = doc["agents"]
    bundle = AgentTrajectoryBundle(
        starts=np.array([a["start"] for a in agents], dtype=np.float64),
        goals=np.array([a["goal"] for a in agents], dtype=np.float64),
        radii=np.array([a["radius"] for a in agents], dtype=np.float64),
        n_steps=n_steps,
    )
    obstacles = doc.get("obstacles", [])
    if obstacles:
        omap = ObstacleMap(
            centers=np.array([o["center"] for o in obstacles], dtype=np.float64),
            radii=np.array([o["radius"] for o in obstacles], dtype=np.float64),
            bounds=tuple(doc["bounds"]),
        )
    else:
        omap = ObstacleMap(
            centers=np.zeros((0, 2)), radii=np.zeros(0), bounds=tuple(doc["bounds"])
        )
    return bundle, omap


def save_map(path, bundle: AgentTrajectoryBundle, omap: ObstacleMap):
    doc = {
        "bounds": list(omap.bounds),
        "obstacles": [
            {"center": list(map(float, c)), "radius": float(r)}
            for c, r in zip(omap.centers, omap.radii)
        ],
        "agents": [
            {
                "start": list(map(float, s)),
                "goal": list(map(float, g)),
                "radius": float(r),
            }
            for s, g, r in zip(bundle.starts, bundle.goals, bundle.radii)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def random_instance(
    seed: int,
    n_agents: int = 3,
    n_steps: int = 8,
    n_obstacles: int = 2,
    bounds=(0.0, 0.0, 12.0, 12.0),
    agent_radius: float = 0.25,
    margin: float = 0.3,
    max_tries: int = 500,
):
    """Generate a solvable world: straight-line paths clear everything.

    Agents travel left to right inside stratified horizontal lanes (start and
    goal heights jittered within the same lane), which keeps the straight
    interpolations from ever crossing. Obstacles land in the middle band and
    are redrawn until the straight paths keep ``margin`` beyond every
    clearance requirement, so the instance is feasible by construction with
    room for the sampler to move.
    """
    rng = SeededRng(seed).generator
    xmin, ymin, xmax, ymax = bounds
    radii = np.full(n_agents, agent_radius)
    band = (ymax - ymin - 2.0) / n_agents
    lane_centers = ymin + 1.0 + band * (np.arange(n_agents) + 0.5)
    jitter = 0.24 * band
    for _ in range(max_tries):
        ys = lane_centers[None, :] + rng.uniform(
            -jitter, jitter, size=(2, n_agents)
        )
        starts = np.column_stack([np.full(n_agents, xmin + 0.8), ys[0]])
        goals = np.column_stack([np.full(n_agents, xmax - 0.8), ys[1]])
        bundle = AgentTrajectoryBundle(starts, goals, radii, n_steps)
        if n_obstacles:
            centers = rng.uniform(
                [xmin + 3.0, ymin + 1.0], [xmax - 3.0, ymax - 1.0],
                size=(n_obstacles, 2),
            )
            obs_radii = rng.uniform(0.25, 0.45, size=n_obstacles)
            omap = ObstacleMap(centers, obs_radii, bounds)
        else:
            omap = ObstacleMap(np.zeros((0, 2)), np.zeros(0), bounds)
        paths = bundle.paths(bundle.straight_lines())
        pad = bundle.dmin_matrix + margin
        coll, _ = kernels.pairwise_clearance(paths, pad)
        obs, _ = kernels.obstacle_clearance(
            paths, omap.centers, omap.radii + margin
        )
        if coll == 0.0 and obs == 0.0:
            return bundle, omap
    raise ConfigError("could not draw a feasible world; loosen the margins")
