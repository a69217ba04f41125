"""Discrete diffusion over token sequences.

Forward corruption interpolates each one-hot row toward a noise distribution
(a reserved absorbing mask symbol, or uniform over the vocabulary). Reverse
steps invert that corruption one schedule increment at a time: the masked
kernel carries revealed tokens over verbatim and unmasks the rest with the
schedule ratio, the uniform kernel resamples every position from the exact
categorical posterior. Constraint enforcement happens on the predicted
probability rows before sampling, through a KL-cost projection over logits
with Gumbel-softmax relaxed residuals, plus an exact one-hot repair at the
end of the chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonConvergenceError, RetryExhaustedError
from .models import NoiseSchedule
from .numerics import PROB_FLOOR, SeededRng, is_simplex, softmax
from .projections import (
    ALMConfig,
    ConstraintSet,
    ProjectionResult,
    alm_project,
)
from .sampler_continuous import RETRY_CAP

MASK = "mask"
UNIFORM = "uniform"


class CategoricalSequence:
    """L rows of token probabilities over a fixed row width.

    Rows must lie on the simplex. ``decode()`` gives the per-position argmax
    token ids with ties broken toward the lowest id.
    """

    def __init__(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("sequence rows must be a 2-D array")
        for j in range(rows.shape[0]):
            if not is_simplex(rows[j]):
                raise ValueError(f"row {j} is not on the probability simplex")
        self.rows = rows

    @property
    def length(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def decode(self) -> list[int]:
        return [int(i) for i in np.argmax(self.rows, axis=1)]

    def is_one_hot(self) -> bool:
        return bool(
            np.all(np.max(self.rows, axis=1) == 1.0)
            and np.all(np.sum(self.rows, axis=1) == 1.0)
        )


def _trusted_sequence(rows: np.ndarray) -> CategoricalSequence:
    """Wrap rows the reverse kernels built themselves, skipping row-by-row
    simplex validation. Internal only: callers must guarantee simplex rows."""
    seq = CategoricalSequence.__new__(CategoricalSequence)
    seq.rows = rows
    return seq


def decode_argmax(x: CategoricalSequence) -> list[int]:
    """Per-position argmax token ids, lowest id winning ties."""
    return x.decode()


def one_hot_rows(tokens, width: int) -> np.ndarray:
    rows = np.zeros((len(tokens), width), dtype=np.float64)
    for j, tok in enumerate(tokens):
        rows[j, int(tok)] = 1.0
    return rows


@dataclass(frozen=True)
class DiscreteNoiseSpec:
    """The stationary corruption target.

    kind=MASK reserves token id ``n_tokens`` as the absorbing mask symbol and
    works over rows of width n_tokens + 1; kind=UNIFORM spreads mass evenly
    over the plain vocabulary (width n_tokens).
    """

    kind: str
    n_tokens: int

    def __post_init__(self):
        if self.kind not in (MASK, UNIFORM):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.n_tokens < 1:
            raise ConfigError("n_tokens must be >= 1")

    @property
    def width(self) -> int:
        return self.n_tokens + 1 if self.kind == MASK else self.n_tokens

    @property
    def mask_id(self) -> int:
        if self.kind != MASK:
            raise ConfigError("mask_id is only defined for mask noise")
        return self.n_tokens

    @property
    def nu(self) -> np.ndarray:
        row = np.zeros(self.width, dtype=np.float64)
        if self.kind == MASK:
            row[self.mask_id] = 1.0
        else:
            row[:] = 1.0 / self.n_tokens
        return row


@dataclass(frozen=True)
class GumbelConfig:
    """Relaxation settings: softmax temperature and the noise seed."""

    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ConfigError("gumbel temperature must be positive")


def forward_marginal(
    x0: CategoricalSequence, noise: DiscreteNoiseSpec, beta: float
) -> CategoricalSequence:
    """Marginal of the corrupted sequence: each row (1-beta)*x0 + beta*nu."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if x0.width != noise.width:
        raise ValueError(
            f"row width {x0.width} does not match noise vocabulary width {noise.width}"
        )
    return CategoricalSequence((1.0 - beta) * x0.rows + beta * noise.nu[None, :])


def _require_one_hot(xt: CategoricalSequence, op: str) -> None:
    if not xt.is_one_hot():
        raise ValueError(f"{op} expects one-hot state rows")


def _reverse_masked_from_preds(
    xt: CategoricalSequence,
    predict_rows,
    sched: NoiseSchedule,
    t: int,
    rng: SeededRng,
    mask_id: int,
) -> CategoricalSequence:
    """Masked-kernel transition with lazily-evaluated prediction rows.

    Revealed positions carry over verbatim (the absorbing property); each
    masked position unmasks with probability (beta(t) - beta(t-1)) / beta(t),
    drawing its token from the prediction, and otherwise stays masked. At
    t = 1 the stay-masked weight beta(0)/beta(1) is zero, so every position
    resolves.

    Draw order is two-phase: one vectorized uniform draw gates all masked
    positions, then the firing positions draw tokens in ascending order.
    ``predict_rows`` is only called when at least one position fires, so
    stay-masked steps never touch the denoiser (or the projection stacked on
    top of it by the constrained engine).
    """
    beta_t = sched.beta(t)
    beta_s = sched.beta(t - 1)
    unmask_p = (beta_t - beta_s) / beta_t
    rows = xt.rows.copy()
    tokens = np.argmax(rows, axis=1)
    masked = np.flatnonzero(tokens == mask_id)
    fired = masked[rng.uniform(shape=masked.size) < unmask_p]
    if fired.size == 0:
        return _trusted_sequence(rows)
    preds = np.asarray(predict_rows(), dtype=np.float64)
    for j in fired:
        probs = preds[j, :mask_id]
        total = float(np.sum(probs))
        if total <= 0.0:
            raise ValueError(f"prediction row {j} has no unmasked mass")
        tok = rng.choice_index(probs / total)
        rows[j] = 0.0
        rows[j, tok] = 1.0
    return _trusted_sequence(rows)


def reverse_step_masked(
    xt: CategoricalSequence,
    d,
    sched: NoiseSchedule,
    t: int,
    rng: SeededRng,
) -> CategoricalSequence:
    """One reverse increment of the absorbing-mask chain."""
    _require_one_hot(xt, "reverse_step_masked")
    if t < 1:
        raise ValueError("reverse step requires t >= 1")
    mask_id = xt.width - 1
    if not np.any(np.argmax(xt.rows, axis=1) == mask_id):
        return xt
    return _reverse_masked_from_preds(
        xt, lambda: d.predict(xt.rows, t), sched, t, rng, mask_id
    )


def _reverse_uniform_from_preds(
    xt: CategoricalSequence,
    preds: np.ndarray,
    sched: NoiseSchedule,
    t: int,
    rng: SeededRng,
) -> CategoricalSequence:
    """Uniform-kernel transition given predicted clean-token rows.

    Every position resamples from the categorical posterior that mixes the
    prediction with the uniform target using the schedule's interpolation
    ratios. The last increment (beta(t-1) = 0) collapses the posterior onto
    the prediction itself, so the draw comes straight from the denoiser.
    """
    v = xt.width
    beta_t = sched.beta(t)
    beta_s = sched.beta(t - 1)
    rows = np.zeros_like(xt.rows)
    if beta_s == 0.0:
        for j in range(xt.length):
            tok = rng.choice_index(preds[j])
            rows[j, tok] = 1.0
        return _trusted_sequence(rows)
    # One-increment corruption weight b solving (1-beta_t) = (1-b)(1-beta_s).
    b = 1.0 - (1.0 - beta_t) / (1.0 - beta_s)
    tokens = np.argmax(xt.rows, axis=1)
    for j in range(xt.length):
        likelihood = np.full(v, b / v, dtype=np.float64)
        likelihood[tokens[j]] += 1.0 - b
        prior = (1.0 - beta_s) * preds[j] + beta_s / v
        post = likelihood * prior
        post /= float(np.sum(post))
        tok = rng.choice_index(post)
        rows[j, tok] = 1.0
    return _trusted_sequence(rows)


def reverse_step_uniform(
    xt: CategoricalSequence,
    d,
    sched: NoiseSchedule,
    t: int,
    rng: SeededRng,
) -> CategoricalSequence:
    """One reverse increment of the uniform-noise chain."""
    _require_one_hot(xt, "reverse_step_uniform")
    if t < 1:
        raise ValueError("reverse step requires t >= 1")
    preds = np.asarray(
        d.predict(xt.rows, t, beta_t=sched.beta(t)), dtype=np.float64
    )
    return _reverse_uniform_from_preds(xt, preds, sched, t, rng)


def gumbel_softmax(row: np.ndarray, cfg: GumbelConfig, rng: SeededRng | None = None):
    """Relax probability rows: softmax((log row + g) / temperature).

    Rows are clamped at 1e-12 before the log so one-hot inputs stay finite.
    Accepts a single row or a stack of rows; gumbel noise comes from ``rng``
    when given, else from a stream seeded by cfg.seed.
    """
    rng = rng or SeededRng(cfg.seed)
    row = np.asarray(row, dtype=np.float64)
    g = rng.gumbel(row.shape)
    return softmax((np.log(np.maximum(row, PROB_FLOOR)) + g) / cfg.temperature)


class _KLSequenceProblem:
    """KL-cost projection of probability rows onto a decoded-feasible set.

    The candidate is parameterized by logits over the free positions; fixed
    positions keep their input rows (the masked chain's revealed context).
    Constraint residuals and gradients are evaluated on the Gumbel-softmax
    relaxation of the candidate rows, with fresh gumbels each outer round,
    and acceptance is the hard predicate check on the full sequence (whose
    predicates judge the decoded argmax), not the relaxed residual level.
    """

    def __init__(
        self,
        seq: CategoricalSequence,
        cs: ConstraintSet,
        gcfg: GumbelConfig,
        rng: SeededRng | None = None,
        free: np.ndarray | None = None,
    ):
        lacking = [c.name for c in cs if not c.differentiable]
        if lacking:
            raise ConfigError(
                "KL projection requires differentiable residuals; lacking: "
                + ", ".join(lacking)
            )
        self.seq = seq
        self.cs = cs
        self.gcfg = gcfg
        self.rng = rng or SeededRng(gcfg.seed)
        if free is None:
            free = np.ones(seq.length, dtype=bool)
        self.free = np.asarray(free, dtype=bool)
        if self.free.shape != (seq.length,):
            raise ConfigError("free mask must have one flag per position")
        self.p = seq.rows[self.free]
        if not all(is_simplex(row) for row in self.p):
            raise ConfigError("sequence rows must lie on the probability simplex")
        # The base rows never change during a projection, so their log side
        # of the KL cost is fixed; precomputing it keeps the innermost probe
        # to one softmax and one masked sum.
        self._logp = np.log(np.maximum(self.p, PROB_FLOOR))
        self._psupport = self.p > 0.0
        self.g = np.zeros_like(self.p)

    def start(self, warm_y):
        if warm_y is not None:
            return np.asarray(warm_y, dtype=np.float64).copy()
        self._theta0 = np.log(np.maximum(self.p, PROB_FLOOR))
        return self._theta0

    def on_outer_start(self, k: int):
        self.g = self.rng.child("outer", k).gumbel(self.p.shape)

    def _q(self, theta: np.ndarray) -> np.ndarray:
        return softmax(theta)

    def _full_rows(self, free_rows: np.ndarray) -> np.ndarray:
        rows = self.seq.rows.copy()
        rows[self.free] = free_rows
        return rows

    def _psi(self, theta: np.ndarray) -> np.ndarray:
        logq = theta - _logsumexp_rows(theta)
        return softmax((logq + self.g) / self.gcfg.temperature)

    def cost_and_grad(self, theta: np.ndarray):
        q = self._q(theta)
        q_safe = np.maximum(q, PROB_FLOOR)
        terms = np.where(self._psupport, self.p * (self._logp - np.log(q_safe)), 0.0)
        return float(np.sum(terms)), q - self.p

    def residual_vector(self, theta: np.ndarray) -> np.ndarray:
        return self.cs.residual_vector(self._full_rows(self._psi(theta)))

    def weighted_residual_grad(self, theta: np.ndarray, weights: np.ndarray):
        psi = self._psi(theta)
        full = self._full_rows(psi)
        g_full = np.zeros_like(full)
        for w, c in zip(weights, self.cs):
            if w != 0.0:
                g_full += w * np.asarray(c.residual_grad(full), dtype=np.float64)
        g_psi = g_full[self.free]
        inner = np.sum(psi * g_psi, axis=1, keepdims=True)
        v = psi * g_psi - inner * psi
        return v / self.gcfg.temperature

    def hard_check(self, theta: np.ndarray) -> bool:
        return self.cs.all_satisfied(self._full_rows(self._q(theta)))

    def is_feasible(self, res_vec, theta, delta) -> bool:
        return self.hard_check(theta)

    def finalize(self, theta: np.ndarray) -> CategoricalSequence:
        # An untouched start iterate means the input already satisfied every
        # constraint: hand the caller back the exact rows rather than a
        # log/softmax round trip of them.
        if theta is getattr(self, "_theta0", None):
            return CategoricalSequence(self.seq.rows.copy())
        return CategoricalSequence(self._full_rows(self._q(theta)))


def _logsumexp_rows(theta: np.ndarray) -> np.ndarray:
    m = np.max(theta, axis=-1, keepdims=True)
    return m + np.log(np.sum(np.exp(theta - m), axis=-1, keepdims=True))


def make_kl_problem(
    x: CategoricalSequence,
    cs: ConstraintSet,
    gcfg: GumbelConfig | None = None,
    rng: SeededRng | None = None,
    free: np.ndarray | None = None,
) -> _KLSequenceProblem:
    return _KLSequenceProblem(x, cs, gcfg or GumbelConfig(), rng, free)


def kl_project_sequence(
    xt: CategoricalSequence,
    cs: ConstraintSet,
    cfg: ALMConfig | None = None,
    gcfg: GumbelConfig | None = None,
    rng: SeededRng | None = None,
    free: np.ndarray | None = None,
    warm=None,
) -> ProjectionResult:
    """Project rows to the KL-nearest candidate whose decoding satisfies cs.

    A sequence whose decoding is already feasible comes back unchanged with
    zero iterations. Raises NonConvergenceError when no feasible decoding is
    reached within the iteration budget.
    """
    return alm_project(
        xt, cs, cost="kl", cfg=cfg, warm=warm, gcfg=gcfg, rng=rng, free=free
    )


def _project_step_rows(preds, cs, cfg, gcfg, rng, free):
    """Project one step's predicted rows, degrading gracefully.

    Sampling can reveal a token the constraints dislike even after its row's
    argmax was moved, because the draw keeps the row's leftover mass. Revealed
    context is absorbing, so later projections over the remaining free rows
    may have no feasible decoding at all; the chain still deserves to finish,
    since the exact repair at the end is what certifies the output. A
    projection that cannot converge therefore yields its best iterate instead
    of aborting the chain.
    """
    try:
        proj = kl_project_sequence(
            CategoricalSequence(preds), cs, cfg=cfg, gcfg=gcfg, rng=rng,
            free=free,
        )
    except NonConvergenceError as err:
        if err.result is None:
            return preds
        return err.result.point.rows
    return proj.point.rows


def _run_discrete_chain(
    d,
    sched: NoiseSchedule,
    noise: DiscreteNoiseSpec,
    cs: ConstraintSet | None,
    cfg: ALMConfig | None,
    gcfg: GumbelConfig,
    rng: SeededRng,
    proj_rng: SeededRng,
    length: int | None = None,
) -> list[int] | None:
    """One full reverse chain; returns decoded tokens, or None when the final
    repair could not reach feasibility."""
    length = length or getattr(d, "length", None)
    if length is None:
        raise ConfigError(
            "denoiser carries no sequence length; pass length= explicitly"
        )
    if noise.kind == MASK:
        state = CategoricalSequence(
            one_hot_rows([noise.mask_id] * length, noise.width)
        )
    else:
        start = [int(rng.integers(0, noise.n_tokens)) for _ in range(length)]
        state = CategoricalSequence(one_hot_rows(start, noise.width))
    constrain = cs is not None and len(cs) > 0
    for t in range(sched.T, 0, -1):
        if noise.kind == MASK:
            tokens = np.argmax(state.rows, axis=1)
            masked = tokens == noise.mask_id
            if not np.any(masked):
                break

            def predict_rows(state=state, t=t, masked=masked):
                preds = np.asarray(d.predict(state.rows, t), dtype=np.float64)
                if constrain:
                    preds = _project_step_rows(
                        preds, cs, cfg, gcfg, proj_rng.child("step", t), masked
                    )
                return preds

            state = _reverse_masked_from_preds(
                state, predict_rows, sched, t, rng, noise.mask_id
            )
        else:
            preds = np.asarray(
                d.predict(state.rows, t, beta_t=sched.beta(t)), dtype=np.float64
            )
            if constrain:
                preds = _project_step_rows(
                    preds, cs, cfg, gcfg, proj_rng.child("step", t), None
                )
            state = _reverse_uniform_from_preds(state, preds, sched, t, rng)
    if constrain and not cs.all_satisfied(state.rows):
        rows = state.rows
        for c in cs:
            if not c.satisfied(rows) and c.exact_project is not None:
                rows = np.asarray(c.exact_project(rows), dtype=np.float64)
        state = CategoricalSequence(rows)
        if not cs.all_satisfied(state.rows):
            return None
    return state.decode()


def sample_discrete_constrained(
    d,
    sched: NoiseSchedule,
    noise: DiscreteNoiseSpec,
    cs: ConstraintSet | None = None,
    cfg: ALMConfig | None = None,
    gcfg: GumbelConfig | None = None,
    n: int = 1,
    seed: int = 0,
    retry_cap: int = RETRY_CAP,
    length: int | None = None,
) -> list[list[int]]:
    """Draw n decoded sequences whose every constraint predicate holds.

    Each chain starts from the pure noise state (all-mask or uniform draws),
    projects the predicted probability rows before sampling at every step,
    and finishes with the constraints' exact repairs if the decoded sequence
    still violates. Chains that fail restart with fresh noise up to
    retry_cap attempts; RetryExhaustedError reports how many never
    succeeded.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gcfg = gcfg or GumbelConfig()
    root = SeededRng(seed)
    groot = SeededRng(gcfg.seed)
    out: list[list[int]] = []
    failed = 0
    for i in range(n):
        got = None
        for attempt in range(retry_cap):
            rng = root.child("chain", i, "retry", attempt)
            proj_rng = groot.child("chain", i, "retry", attempt)
            try:
                got = _run_discrete_chain(
                    d, sched, noise, cs, cfg, gcfg, rng, proj_rng, length
                )
            except NonConvergenceError:
                got = None
            if got is not None:
                break
        if got is None:
            failed += 1
        else:
            out.append(got)
    if failed:
        raise RetryExhaustedError(
            f"{failed} of {n} chains found no feasible sequence "
            f"within {retry_cap} attempts each",
            attempts=retry_cap,
        )
    return out
