"""Config-driven experiment runs at desk scale.

A run loads an ExperimentConfig (TOML, or JSON with the same keys), builds
the scenario's model and constraints, draws samples in one of three modes,
and writes a fully reproducible artifact directory:

    report.json   canonical metrics, stable key order, no timing data
    timing.json   wall time sidecar (the one file allowed to differ between
                  identical runs)
    metrics.csv   flat key,value view of the report
    trace.csv     per-step violation trace (t, mean_residual, max_residual);
                  header-only for discrete scenarios, which have no step
                  residual stream
    samples.csv / samples.txt
                  every emitted sample (vectors as CSV floats, sequences as
                  token lines), in emission order

Modes: "nsd" interleaves projection with every reverse step, "unconstrained"
never projects (violations are only measured), "post_only" runs the
unconstrained chain and applies one repair at the very end. All reported
violation percentages are recomputed from the emitted samples, never taken
from sampler internals, so `projdiff check` can reproduce them from the
artifact directory alone.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    AgentTrajectoryBundle,
    KinematicsSpec,
    NoveltyState,
    PatternRule,
    PorosityTarget,
    SurrogateScorer,
    collision_constraints,
    constraint_set as trajectory_constraint_set,
    kinematics_constraint,
    kinematics_rollout,
    novelty_constraint,
    obstacle_constraints,
    pattern_constraint,
    porosity_constraint,
    random_instance,
    surrogate_constraint,
)
from .errors import ConfigError
from .models import (
    AnalyticGMM,
    GaussianMixture,
    NoiseSchedule,
    TrainConfig,
    TrainableBigram,
    train_denoiser,
)
from .numerics import SeededRng, sliced_wasserstein
from .projections import ConstraintSet, halfspace_constraint
from .sampler_continuous import (
    ViolationTrace,
    sample_constrained,
    sample_unconstrained,
)
from .sampler_discrete import (
    MASK,
    DiscreteNoiseSpec,
    GumbelConfig,
    one_hot_rows,
    sample_discrete_constrained,
)

SCENARIOS = (
    "gmm_halfspace",
    "mapf",
    "porosity",
    "kinematics",
    "sequence_patterns",
    "sequence_novelty",
    "sequence_surrogate",
)
MODES = ("nsd", "unconstrained", "post_only")
DISCRETE_SCENARIOS = ("sequence_patterns", "sequence_novelty", "sequence_surrogate")

DEFAULT_RULES = (
    {"pattern": (0, 0), "replacements": ((0, 1), (1, 0))},
    {"pattern": (1, 2, 3), "replacements": ((1, 2, 4), (1, 3, 3))},
    {"pattern": (7, 7), "replacements": ((7, 6), (6, 7))},
    {"pattern": (4, 5), "replacements": ((4, 6), (5, 4))},
    {"pattern": (2, 2, 2), "replacements": ((2, 1, 2),)},
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One experiment: scenario, mode, sampling budget, and parameter blocks.

    model / schedule / constraints are free-form dicts whose required keys
    depend on the scenario; validation happens eagerly so a bad config fails
    with the offending field named before any sampling starts.
    """

    scenario: str
    seed: int
    mode: str = "nsd"
    n_samples: int = 16
    schedule: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    constraints: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"scenario: must be one of {SCENARIOS}, got {self.scenario!r}"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed: required integer, got {self.seed!r}")
        if not isinstance(self.n_samples, int) or self.n_samples < 1:
            raise ConfigError(f"n_samples: must be an integer >= 1, got {self.n_samples!r}")
        for name in ("schedule", "model", "constraints"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(f"{name}: must be a table/object")
        # Constraint keys are scenario-specific, but the schedule block has
        # one fixed vocabulary; a misspelled key here would otherwise fall
        # back to the default silently.
        unknown = set(self.schedule) - {
            "kind",
            "T",
            "beta_max",
            "sigma_max",
            "gamma_base",
        }
        if unknown:
            raise ConfigError(f"schedule: unknown keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if "scenario" not in doc:
            raise ConfigError("scenario: required field is missing")
        if "seed" not in doc:
            raise ConfigError("seed: required field is missing")
        known = {"scenario", "seed", "mode", "n_samples", "schedule", "model", "constraints"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**doc)


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from TOML (or JSON, by file extension)."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.endswith(".json"):
        doc = json.loads(raw.decode("utf-8"))
    else:
        try:
            import tomllib
        except ImportError:  # python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(raw.decode("utf-8"))
    return ExperimentConfig.from_dict(doc)


def _schedule(cfg: ExperimentConfig, default_T: int) -> NoiseSchedule:
    s = cfg.schedule
    kwargs = {}
    for key in ("beta_max", "sigma_max", "gamma_base"):
        if key in s:
            kwargs[key] = float(s[key])
    return NoiseSchedule(s.get("kind", "linear"), T=int(s.get("T", default_T)), **kwargs)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    """Everything a run claims, in serializable form.

    wall_time_s is excluded from equality and from the canonical report file
    so that identically-seeded runs produce byte-identical report.json.
    """

    scenario: str
    mode: str
    seed: int
    n_samples: int
    violations: dict
    fidelity: dict
    metrics: dict
    samples_file: str
    trace_file: str
    wall_time_s: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for name, pct in self.violations.items():
            if not (0.0 <= pct <= 100.0):
                raise ValueError(f"violation percentage out of range: {name}={pct}")

    def to_dict(self) -> dict:
        return _native(
            {
                "scenario": self.scenario,
                "mode": self.mode,
                "seed": self.seed,
                "n_samples": self.n_samples,
                "violations": self.violations,
                "fidelity": self.fidelity,
                "metrics": self.metrics,
                "samples_file": self.samples_file,
                "trace_file": self.trace_file,
            }
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(**doc)


def _native(obj):
    """Recursively convert numpy scalars/arrays to plain Python types."""
    if isinstance(obj, dict):
        return {str(k): _native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_native(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_native(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def emit_report(report: RunReport, out_dir) -> dict:
    """Write report.json, metrics.csv, and the timing sidecar.

    report.json and metrics.csv are canonical: stable key order, repr-exact
    floats, no timestamps, so re-running an identical config yields the same
    bytes. Returns the written paths.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    doc = report.to_dict()
    report_path = os.path.join(out_dir, "report.json")
    _atomic_write(report_path, json.dumps(doc, sort_keys=True, indent=2) + "\n")

    rows = []
    for group in ("violations", "fidelity", "metrics"):
        for key in sorted(doc[group]):
            rows.append((f"{group}.{key}", json.dumps(doc[group][key])))
    csv_lines = ["key,value"] + [f"{k},{v}" for k, v in rows]
    metrics_path = os.path.join(out_dir, "metrics.csv")
    _atomic_write(metrics_path, "\n".join(csv_lines) + "\n")

    timing_path = os.path.join(out_dir, "timing.json")
    _atomic_write(
        timing_path,
        json.dumps({"wall_time_s": report.wall_time_s}, sort_keys=True) + "\n",
    )
    return {"report": report_path, "metrics": metrics_path, "timing": timing_path}


def load_report(path) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        return RunReport.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def violation_rate(samples, cs: ConstraintSet, n_tokens: int | None = None) -> dict:
    """Percentage of samples violating each constraint's predicate.

    samples: (n, dim) float array, or an iterable of token sequences when
    n_tokens is given (each sequence is re-encoded one-hot before the
    predicate runs). Always a fresh predicate evaluation, independent of
    whatever the sampler claimed.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("violation_rate needs at least one sample")
    out = {}
    for c in cs:
        bad = 0
        for s in samples:
            x = one_hot_rows(s, n_tokens) if n_tokens is not None else np.asarray(s, dtype=np.float64)
            if not c.satisfied(x):
                bad += 1
        out[c.name] = 100.0 * bad / len(samples)
    return out


def path_length(paths: np.ndarray):
    """Per-agent and mean Euclidean lengths of (agents, steps, 2) paths."""
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim != 3 or paths.shape[1] < 2:
        raise ValueError("paths must be (agents, steps >= 2, 2)")
    seg = np.linalg.norm(np.diff(paths, axis=1), axis=2)
    per_agent = seg.sum(axis=1)
    return per_agent, float(per_agent.mean())


def success_rate(reports) -> float:
    """Percentage of runs whose every emitted bundle was fully feasible."""
    reports = list(reports)
    if not reports:
        raise ValueError("success_rate needs at least one report")
    good = sum(1 for r in reports if r.metrics.get("success_pct") == 100.0)
    return 100.0 * good / len(reports)


def _bigram_tv(sample_seqs, corpus_seqs, n_tokens: int) -> float:
    """Total variation between empirical bigram distributions."""

    def table(seqs):
        counts = np.zeros((n_tokens, n_tokens))
        for seq in seqs:
            for a, b in zip(seq[:-1], seq[1:]):
                counts[int(a), int(b)] += 1.0
        total = counts.sum()
        return counts / total if total > 0 else counts
    return float(0.5 * np.abs(table(sample_seqs) - table(corpus_seqs)).sum())


# ---------------------------------------------------------------------------
# Scenario setups
# ---------------------------------------------------------------------------


def _require(block: dict, block_name: str, key: str):
    if key not in block:
        raise ConfigError(f"{block_name}.{key}: required for this scenario")
    return block[key]


def _setup_gmm_halfspace(cfg: ExperimentConfig) -> dict:
    m = cfg.model
    weights = np.asarray(m.get("weights", [0.5, 0.5]), dtype=np.float64)
    means = np.asarray(m.get("means", [[-2.0, 0.0], [2.0, 0.0]]), dtype=np.float64)
    variances = np.asarray(m.get("variances", [0.5, 0.5]), dtype=np.float64)
    mixture = GaussianMixture(weights, means, variances)
    c = cfg.constraints
    a = np.asarray(c.get("a", [1.0, 0.0]), dtype=np.float64)
    b = float(c.get("b", 0.0))
    if a.shape != (mixture.dim,):
        raise ConfigError(
            f"constraints.a: expected length {mixture.dim}, got shape {a.shape}"
        )
    cs = ConstraintSet([halfspace_constraint(a, b)])
    return {
        "kind": "continuous",
        "model": AnalyticGMM(mixture),
        "mixture": mixture,
        "sched": _schedule(cfg, default_T=200),
        "cs": cs,
        "check_cs": cs,
    }


def _setup_mapf(cfg: ExperimentConfig) -> dict:
    c = cfg.constraints
    n_agents = int(c.get("n_agents", 3))
    n_steps = int(c.get("n_steps", 8))
    n_obstacles = int(c.get("n_obstacles", 2))
    bounds = tuple(float(v) for v in c.get("bounds", (0.0, 0.0, 12.0, 12.0)))
    agent_radius = float(c.get("agent_radius", 0.25))
    margin = float(c.get("margin", 0.3))
    bundle, omap = random_instance(
        cfg.seed,
        n_agents=n_agents,
        n_steps=n_steps,
        n_obstacles=n_obstacles,
        bounds=bounds,
        agent_radius=agent_radius,
        margin=margin,
    )
    cs = trajectory_constraint_set(
        bundle, omap if len(omap.centers) else None
    )
    center = bundle.straight_lines()
    var = float(cfg.model.get("variance", 0.5))
    mixture = GaussianMixture(np.array([1.0]), center[None, :], np.array([var]))
    return {
        "kind": "continuous",
        "model": AnalyticGMM(mixture),
        "mixture": mixture,
        "sched": _schedule(cfg, default_T=64),
        "cs": cs,
        "check_cs": cs,
        "bundle": bundle,
    }


def _porosity_templates(n_templates, n_rows, n_cols, seed) -> np.ndarray:
    """Smooth synthetic training grids: coarse noise upsampled then centered."""
    g = SeededRng(seed).child("templates").generator
    coarse = g.normal(0.0, 1.0, size=(n_templates, 4, 4))
    reps = (int(np.ceil(n_rows / 4)), int(np.ceil(n_cols / 4)))
    grids = np.stack(
        [np.kron(c, np.ones(reps))[:n_rows, :n_cols] for c in coarse]
    )
    grids -= grids.mean(axis=(1, 2), keepdims=True)
    return grids.reshape(n_templates, n_rows * n_cols)


def _setup_porosity(cfg: ExperimentConfig) -> dict:
    c = cfg.constraints
    k = int(_require(c, "constraints", "k"))
    n_rows = int(c.get("n_rows", 16))
    n_cols = int(c.get("n_cols", 16))
    target = PorosityTarget(k, n_rows, n_cols)
    n_templates = int(cfg.model.get("n_templates", 8))
    var = float(cfg.model.get("variance", 0.25))
    templates = _porosity_templates(
        n_templates, n_rows, n_cols, int(cfg.model.get("template_seed", 0))
    )
    mixture = GaussianMixture(
        np.full(n_templates, 1.0 / n_templates),
        templates,
        np.full(n_templates, var),
    )
    cs = ConstraintSet([porosity_constraint(target)])
    return {
        "kind": "continuous",
        "model": AnalyticGMM(mixture),
        "mixture": mixture,
        "sched": _schedule(cfg, default_T=48),
        "cs": cs,
        "check_cs": cs,
        "target": target,
        "templates": templates,
    }


def _setup_kinematics(cfg: ExperimentConfig) -> dict:
    c = cfg.constraints
    horizon = int(c.get("horizon", 6))
    p0 = float(c.get("p0", 0.0))
    g_sample = float(_require(c, "constraints", "g_sample"))
    g_train = float(cfg.model.get("g_train", 9.81))
    n_train = int(cfg.model.get("n_train", 256))
    train_seed = int(cfg.model.get("train_seed", 0))
    sched = _schedule(cfg, default_T=32)

    spread = SeededRng(train_seed).child("starts").generator
    p0s = spread.uniform(-2.0, 2.0, size=n_train)
    data = np.stack(
        [
            kinematics_rollout(KinematicsSpec(p, g_train, horizon))
            for p in p0s
        ]
    )
    tc = TrainConfig(
        lr=float(cfg.model.get("lr", 1e-3)),
        epochs=int(cfg.model.get("epochs", 12)),
        batch_size=int(cfg.model.get("batch_size", 32)),
        hidden=int(cfg.model.get("hidden", 32)),
        seed=train_seed,
    )
    model = train_denoiser(data, sched, tc)
    spec = KinematicsSpec(p0, g_sample, horizon)
    cs = ConstraintSet([kinematics_constraint(spec)])
    return {
        "kind": "continuous",
        "model": model,
        "sched": sched,
        "cs": cs,
        "check_cs": cs,
        "spec": spec,
        "train_data": data,
    }


def _corpus_and_model(cfg: ExperimentConfig):
    m = cfg.model
    n_tokens = int(m.get("n_tokens", 8))
    length = int(m.get("length", 8))
    n_corpus = int(m.get("n_corpus", 300))
    corpus_seed = int(m.get("corpus_seed", 0))
    g = SeededRng(corpus_seed).child("corpus").generator
    trans = g.dirichlet(np.full(n_tokens, 0.6), size=n_tokens)
    uni = g.dirichlet(np.full(n_tokens, 0.6))
    corpus = np.zeros((n_corpus, length), dtype=np.int64)
    for i in range(n_corpus):
        corpus[i, 0] = g.choice(n_tokens, p=uni)
        for j in range(1, length):
            corpus[i, j] = g.choice(n_tokens, p=trans[corpus[i, j - 1]])
    model = TrainableBigram.fit(corpus, n_tokens)
    model.length = length
    return corpus, model, n_tokens, length


def _rules_from_config(cfg: ExperimentConfig) -> list[PatternRule]:
    raw = cfg.constraints.get("rules", [dict(r) for r in DEFAULT_RULES])
    return [
        PatternRule(tuple(r["pattern"]), tuple(tuple(c) for c in r["replacements"]))
        for r in raw
    ]


def _setup_sequences(cfg: ExperimentConfig) -> dict:
    corpus, model, n_tokens, length = _corpus_and_model(cfg)
    parts = []
    check_parts = []
    if cfg.scenario == "sequence_patterns":
        rules = _rules_from_config(cfg)
        pc = pattern_constraint(rules, n_tokens)
        parts.append(pc)
        check_parts.append(pc)
        if cfg.constraints.get("novelty", False):
            state = NoveltyState(corpus, n_tokens, dedupe=True)
            parts.append(novelty_constraint(state))
            check_parts.append(
                novelty_constraint(NoveltyState(corpus, n_tokens, dedupe=False))
            )
    elif cfg.scenario == "sequence_novelty":
        dedupe = bool(cfg.constraints.get("dedupe", True))
        state = NoveltyState(corpus, n_tokens, dedupe=dedupe)
        parts.append(novelty_constraint(state))
        check_parts.append(
            novelty_constraint(NoveltyState(corpus, n_tokens, dedupe=False))
        )
    else:
        weights = cfg.constraints.get(
            "weights", [[[0, 0], 1.0], [[7, 7], 1.0]]
        )
        tau = float(cfg.constraints.get("tau", 0.5))
        scorer = SurrogateScorer(
            weights=[(tuple(gram), w) for gram, w in weights], tau=tau
        )
        sc = surrogate_constraint(scorer)
        parts.append(sc)
        check_parts.append(sc)
    return {
        "kind": "discrete",
        "model": model,
        "sched": _schedule(cfg, default_T=12),
        "noise": DiscreteNoiseSpec(MASK, n_tokens=n_tokens),
        "cs": ConstraintSet(parts),
        "check_cs": ConstraintSet(check_parts),
        "corpus": corpus,
        "n_tokens": n_tokens,
        "length": length,
    }


_SETUPS = {
    "gmm_halfspace": _setup_gmm_halfspace,
    "mapf": _setup_mapf,
    "porosity": _setup_porosity,
    "kinematics": _setup_kinematics,
    "sequence_patterns": _setup_sequences,
    "sequence_novelty": _setup_sequences,
    "sequence_surrogate": _setup_sequences,
}


def setup_scenario(cfg: ExperimentConfig) -> dict:
    """Build the scenario's model, schedule, and constraint sets."""
    return _SETUPS[cfg.scenario](cfg)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def _run_continuous(cfg: ExperimentConfig, ctx: dict) -> np.ndarray:
    model, sched, cs = ctx["model"], ctx["sched"], ctx["cs"]
    if cfg.mode == "nsd":
        samples, trace = sample_constrained(
            model, sched, cs, n_samples=cfg.n_samples, seed=cfg.seed,
            project_fraction=1.0,
        )
    elif cfg.mode == "post_only":
        samples, trace = sample_constrained(
            model, sched, cs, n_samples=cfg.n_samples, seed=cfg.seed,
            project_fraction=0.0,
        )
    else:
        samples, trace = sample_unconstrained(
            model, sched, n_samples=cfg.n_samples, seed=cfg.seed, cs=cs
        )
    ctx["trace"] = trace
    return samples


def _final_repair_rows(rows: np.ndarray, cs: ConstraintSet) -> np.ndarray:
    """One pass of exact repairs, the post-hoc baseline's only projection."""
    for c in cs:
        if not c.satisfied(rows) and c.exact_project is not None:
            rows = np.asarray(c.exact_project(rows), dtype=np.float64)
    return rows


def _run_discrete(cfg: ExperimentConfig, ctx: dict) -> list[list[int]]:
    model, sched, noise = ctx["model"], ctx["sched"], ctx["noise"]
    gcfg = GumbelConfig()
    if cfg.mode == "nsd":
        return sample_discrete_constrained(
            model, sched, noise, cs=ctx["cs"], gcfg=gcfg,
            n=cfg.n_samples, seed=cfg.seed,
        )
    outs = sample_discrete_constrained(
        model, sched, noise, cs=None, gcfg=gcfg, n=cfg.n_samples, seed=cfg.seed
    )
    if cfg.mode == "unconstrained":
        return outs
    repaired = []
    for tokens in outs:
        rows = _final_repair_rows(one_hot_rows(tokens, noise.width), ctx["cs"])
        repaired.append([int(t) for t in np.argmax(rows, axis=1)])
    return repaired


def _scenario_extras(cfg: ExperimentConfig, ctx: dict, samples) -> tuple[dict, dict]:
    """Scenario-specific (fidelity, metrics) computed from emitted samples."""
    fidelity: dict = {}
    metrics: dict = {}
    if ctx["kind"] == "discrete":
        seqs = [tuple(s) for s in samples]
        fidelity["bigram_tv"] = _bigram_tv(
            seqs, [tuple(s) for s in ctx["corpus"].tolist()], ctx["n_tokens"]
        )
        metrics["unique_pct"] = 100.0 * len(set(seqs)) / len(seqs)
        return fidelity, metrics

    samples = np.asarray(samples, dtype=np.float64)
    if cfg.scenario == "mapf":
        bundle: AgentTrajectoryBundle = ctx["bundle"]
        ok = [ctx["check_cs"].all_satisfied(s) for s in samples]
        metrics["success_pct"] = 100.0 * sum(ok) / len(ok)
        lengths = np.stack(
            [path_length(bundle.paths(s))[0] for s in samples]
        )
        metrics["path_length_per_agent"] = lengths.mean(axis=0).tolist()
        metrics["path_length_mean"] = float(lengths.mean())
        ref = ctx["mixture"].sample(
            len(samples), SeededRng(cfg.seed).child("fidelity-ref")
        )
        fidelity["sliced_wasserstein"] = sliced_wasserstein(
            samples, ref, n_directions=64, rng=SeededRng(0)
        )
    elif cfg.scenario == "porosity":
        target: PorosityTarget = ctx["target"]
        counts = np.array([int(np.sum(s < 0.0)) for s in samples])
        metrics["porosity_error_mean"] = float(np.abs(counts - target.k).mean())
        metrics["exact_k_pct"] = 100.0 * float(np.mean(counts == target.k))
        fidelity["sliced_wasserstein"] = sliced_wasserstein(
            samples, ctx["templates"], n_directions=64, rng=SeededRng(0)
        )
    elif cfg.scenario == "kinematics":
        roll = kinematics_rollout(ctx["spec"])
        metrics["max_rollout_deviation"] = float(
            np.max(np.abs(samples - roll[None, :]))
        )
        fidelity["sliced_wasserstein"] = sliced_wasserstein(
            samples, ctx["train_data"], n_directions=64, rng=SeededRng(0)
        )
    else:
        ref = ctx["mixture"].sample(
            len(samples), SeededRng(cfg.seed).child("fidelity-ref")
        )
        fidelity["sliced_wasserstein"] = sliced_wasserstein(
            samples, ref, n_directions=64, rng=SeededRng(0)
        )
    return fidelity, metrics


def save_samples(path, samples, kind: str) -> None:
    """Persist emitted samples: CSV float rows or token lines."""
    if kind == "continuous":
        lines = [
            ",".join(repr(float(v)) for v in row) for row in np.atleast_2d(samples)
        ]
    else:
        lines = [" ".join(str(int(t)) for t in seq) for seq in samples]
    _atomic_write(path, "\n".join(lines) + "\n")


def load_samples(path, kind: str):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if kind == "continuous":
        return np.array([[float(v) for v in ln.split(",")] for ln in lines])
    return [[int(t) for t in ln.split()] for ln in lines]


def run_experiment(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Execute one configured run and write its artifact directory."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    ctx = setup_scenario(cfg)

    if ctx["kind"] == "continuous":
        samples = _run_continuous(cfg, ctx)
        samples_file = "samples.csv"
        viol = violation_rate(samples, ctx["check_cs"])
        trace = ctx["trace"] if ctx.get("trace") is not None else ViolationTrace()
    else:
        samples = _run_discrete(cfg, ctx)
        samples_file = "samples.txt"
        viol = violation_rate(samples, ctx["check_cs"], n_tokens=ctx["noise"].width)
        trace = ViolationTrace()

    fidelity, metrics = _scenario_extras(cfg, ctx, samples)
    save_samples(os.path.join(out_dir, samples_file), samples, ctx["kind"])
    trace.to_csv(os.path.join(out_dir, "trace.csv"))

    report = RunReport(
        scenario=cfg.scenario,
        mode=cfg.mode,
        seed=cfg.seed,
        n_samples=cfg.n_samples,
        violations=viol,
        fidelity=_native(fidelity),
        metrics=_native(metrics),
        samples_file=samples_file,
        trace_file="trace.csv",
        wall_time_s=time.perf_counter() - t0,
    )
    emit_report(report, out_dir)
    return report


def check_samples(cfg: ExperimentConfig, samples_path) -> dict:
    """Recompute per-constraint violation percentages from a samples file."""
    ctx = setup_scenario(cfg)
    if ctx["kind"] == "continuous":
        samples = load_samples(samples_path, "continuous")
        return violation_rate(samples, ctx["check_cs"])
    samples = load_samples(samples_path, "discrete")
    return violation_rate(samples, ctx["check_cs"], n_tokens=ctx["noise"].width)
