"""Generative models at desk scale.

Continuous side: noise schedules, analytic Gaussian-mixture scores, and a
small tanh MLP denoiser trained with denoising score matching (hand-rolled
forward/backward passes, Adam updates). Discrete side: an enumerable toy
sequence distribution with an exact masked posterior, and a bigram model fit
by counting. Plus a plain-text checkpoint format documented well enough to be
read without this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .numerics import PROB_FLOOR, SeededRng, softmax

# ---------------------------------------------------------------------------
# Noise schedules
# ---------------------------------------------------------------------------

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    """Corruption schedule over integer steps t in (0, T].

    beta(t) is the corruption level: 0 at t=0, beta_max at t=T, monotone
    nondecreasing. The continuous side derives from it the smoothing noise
    noise_std(t) = sigma_max * sqrt(beta(t) / beta_max) and the Langevin step
    size gamma(t) = gamma_base * noise_std(t)^2, which strictly decreases as
    t -> 0 so late updates become deterministic.
    """

    kind: str
    T: int
    beta_max: float = 0.999
    sigma_max: float = 1.0
    gamma_base: float = 0.1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigError(f"schedule T must be an integer >= 1, got {self.T!r}")
        if not (0.0 < self.beta_max <= 1.0):
            raise ConfigError(f"beta_max must be in (0, 1], got {self.beta_max!r}")
        if self.sigma_max <= 0.0 or self.gamma_base <= 0.0:
            raise ConfigError("sigma_max and gamma_base must be positive")

    def beta(self, t) -> float | np.ndarray:
        """Corruption level at step t (accepts scalars or arrays in [0, T])."""
        t_arr = np.asarray(t, dtype=np.float64)
        assert np.all(t_arr >= 0) and np.all(t_arr <= self.T), "t out of range"
        frac = t_arr / self.T
        if self.kind == "linear":
            out = self.beta_max * frac
        else:
            out = self.beta_max * np.sin(0.5 * np.pi * frac) ** 2
        return float(out) if np.isscalar(t) else out

    def noise_std(self, t) -> float | np.ndarray:
        b = np.asarray(self.beta(t), dtype=np.float64)
        out = self.sigma_max * np.sqrt(b / self.beta_max)
        return float(out) if np.isscalar(t) else out

    def gamma(self, t) -> float | np.ndarray:
        """Langevin step size at step t (t in [1, T])."""
        t_arr = np.asarray(t)
        assert np.all(t_arr >= 1), "gamma is defined for t >= 1"
        s = np.asarray(self.noise_std(t), dtype=np.float64)
        out = self.gamma_base * s**2
        return float(out) if np.isscalar(t) else out


# ---------------------------------------------------------------------------
# Gaussian mixtures and analytic scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussian components in R^d.

    weights: (K,), sum to 1; means: (K, d); variances: (K,) per-component
    isotropic variance.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=np.float64)))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64))
        k = self.weights.shape[0]
        if self.means.shape[0] != k or self.variances.shape[0] != k:
            raise ConfigError("mixture weights, means, variances must agree on K")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        if np.any(self.variances <= 0):
            raise ConfigError("mixture variances must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: SeededRng) -> np.ndarray:
        comps = rng.generator.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comps] + np.sqrt(self.variances[comps])[:, None] * eps


def _component_logs(m: GaussianMixture, x: np.ndarray, noise_var: float):
    # x: (n, d). Returns (n, K) per-component log w_k + log N(x; mu_k, v_k I).
    v = m.variances + noise_var  # (K,)
    diff = x[:, None, :] - m.means[None, :, :]  # (n, K, d)
    sq = np.sum(diff**2, axis=2)  # (n, K)
    d = m.dim
    return (
        np.log(np.maximum(m.weights, PROB_FLOOR))[None, :]
        - 0.5 * d * np.log(2.0 * np.pi * v)[None, :]
        - 0.5 * sq / v[None, :]
    )


def gmm_log_density_smoothed(m: GaussianMixture, x: np.ndarray, noise_var: float):
    """Log density of the mixture convolved with N(0, noise_var * I)."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    logs = _component_logs(m, x2, noise_var)
    mx = np.max(logs, axis=1, keepdims=True)
    out = mx[:, 0] + np.log(np.sum(np.exp(logs - mx), axis=1))
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def gmm_score_smoothed(m: GaussianMixture, x: np.ndarray, noise_var: float) -> np.ndarray:
    """Gradient of the smoothed log density at x (supports batches)."""
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v = m.variances + noise_var  # (K,)
    logs = _component_logs(m, x2, noise_var)
    resp = softmax(logs, axis=1)  # (n, K)
    pull = (m.means[None, :, :] - x2[:, None, :]) / v[None, :, None]  # (n, K, d)
    score = np.sum(resp[:, :, None] * pull, axis=1)
    return score[0] if single else score


def gmm_score(m: GaussianMixture, sched: NoiseSchedule, x: np.ndarray, t: int) -> np.ndarray:
    """Exact score of the mixture smoothed to the schedule's noise level t."""
    s = float(sched.noise_std(t))
    return gmm_score_smoothed(m, x, s * s)


class AnalyticGMM:
    """Score model wrapping an exact Gaussian-mixture score."""

    def __init__(self, mixture: GaussianMixture):
        self.mixture = mixture
        self.dim = mixture.dim

    def score(self, x: np.ndarray, sched: NoiseSchedule, t: int) -> np.ndarray:
        return gmm_score(self.mixture, sched, x, t)


# ---------------------------------------------------------------------------
# MLP denoiser (noise prediction) with hand-rolled backprop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    hidden: int = 64

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")


PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


class DenoiserMLP:
    """Two-hidden-layer tanh MLP predicting the corrupting noise.

    Input is the noisy point concatenated with the noise level sigma; output
    is the predicted noise eps_hat, so the score at level t is
    -eps_hat / sigma_t. Forward and backward passes are written out explicitly
    (no autodiff); see loss_and_grad.
    """

    def __init__(self, dim: int, hidden: int = 64, rng: SeededRng | None = None):
        self.dim = dim
        self.hidden = hidden
        rng = rng or SeededRng(0)
        g = rng.generator
        def init(n_out, n_in):
            return g.normal(0.0, math.sqrt(1.0 / n_in), size=(n_out, n_in))
        self.params = {
            "w1": init(hidden, dim + 1),
            "b1": np.zeros(hidden),
            "w2": init(hidden, hidden),
            "b2": np.zeros(hidden),
            "w3": init(dim, hidden),
            "b3": np.zeros(dim),
        }
        self.train_losses: list[float] = []

    def _forward(self, x: np.ndarray, sigma: np.ndarray):
        z = np.concatenate([x, sigma[:, None]], axis=1)  # (n, d+1)
        p = self.params
        h1 = np.tanh(z @ p["w1"].T + p["b1"])
        h2 = np.tanh(h1 @ p["w2"].T + p["b2"])
        out = h2 @ p["w3"].T + p["b3"]
        return z, h1, h2, out

    def predict_eps(self, x: np.ndarray, sigma) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x2.shape[0],))
        out = self._forward(x2, sig)[3]
        return out[0] if single else out

    def score(self, x: np.ndarray, sched: NoiseSchedule, t: int) -> np.ndarray:
        sigma = float(sched.noise_std(t))
        assert sigma > 0, "score is undefined at zero noise level"
        return -self.predict_eps(x, sigma) / sigma

    def loss_and_grad(self, x_noisy: np.ndarray, sigma: np.ndarray, eps: np.ndarray):
        """Mean squared noise-prediction error and its parameter gradients.

        Deterministic in its inputs, which makes finite-difference checks of
        the backward pass straightforward.
        """
        z, h1, h2, out = self._forward(x_noisy, sigma)
        n = x_noisy.shape[0]
        diff = out - eps
        loss = float(np.mean(diff**2))
        p = self.params
        d_out = 2.0 * diff / diff.size  # d loss / d out
        grads = {}
        grads["w3"] = d_out.T @ h2
        grads["b3"] = d_out.sum(axis=0)
        d_h2 = d_out @ p["w3"]
        d_a2 = d_h2 * (1.0 - h2**2)
        grads["w2"] = d_a2.T @ h1
        grads["b2"] = d_a2.sum(axis=0)
        d_h1 = d_a2 @ p["w2"]
        d_a1 = d_h1 * (1.0 - h1**2)
        grads["w1"] = d_a1.T @ z
        grads["b1"] = d_a1.sum(axis=0)
        return loss, grads


def train_denoiser(data: np.ndarray, sched: NoiseSchedule, cfg: TrainConfig) -> DenoiserMLP:
    """Fit a DenoiserMLP by denoising score matching.

    Each step draws clean points, a schedule level t, and Gaussian noise;
    the model is trained to recover the noise from x0 + noise_std(t) * eps.
    Adam updates, hand-rolled like the backprop. Raises TrainingDivergedError
    if the loss stops being finite and ConfigError for unusable settings.
    """
    cfg.validate()
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, dim = data.shape
    rng = SeededRng(cfg.seed)
    model = DenoiserMLP(dim, hidden=cfg.hidden, rng=rng.child("init"))
    steps_per_epoch = max(1, n // cfg.batch_size)
    train_rng = rng.child("train")
    g = train_rng.generator

    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            idx = g.integers(0, n, size=cfg.batch_size)
            x0 = data[idx]
            t = g.integers(1, sched.T + 1, size=cfg.batch_size)
            sigma = np.asarray(sched.noise_std(t), dtype=np.float64)
            eps = g.standard_normal((cfg.batch_size, dim))
            x_noisy = x0 + sigma[:, None] * eps
            loss, grads = model.loss_and_grad(x_noisy, sigma, eps)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, step {step}"
                )
            step += 1
            for k in PARAM_NAMES:
                adam_m[k] = beta1 * adam_m[k] + (1 - beta1) * grads[k]
                adam_v[k] = beta2 * adam_v[k] + (1 - beta2) * grads[k] ** 2
                m_hat = adam_m[k] / (1 - beta1**step)
                v_hat = adam_v[k] / (1 - beta2**step)
                model.params[k] -= cfg.lr * m_hat / (np.sqrt(v_hat) + adam_eps)
            epoch_losses.append(loss)
        model.train_losses.append(float(np.mean(epoch_losses)))
    return model


# ---------------------------------------------------------------------------
# Discrete denoisers
# ---------------------------------------------------------------------------


class AnalyticToy:
    """Exact denoiser for an explicitly enumerated sequence distribution.

    The table lists every supported sequence with its probability. Under
    absorbing-mask corruption the posterior over clean sequences given the
    currently revealed tokens is exact Bayes: mask events carry no information
    about values, so the posterior weight of a table row is its prior weight
    if it matches all revealed positions, else zero.
    """

    def __init__(self, sequences: np.ndarray, probs: np.ndarray, n_tokens: int):
        self.sequences = np.asarray(sequences, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.n_tokens = int(n_tokens)
        assert self.sequences.ndim == 2, "table sequences must be (S, L)"
        assert len(self.probs) == len(self.sequences)
        assert abs(float(np.sum(self.probs)) - 1.0) < 1e-9, "table probs must sum to 1"
        assert np.all(self.sequences >= 0) and np.all(self.sequences < n_tokens)

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    def predict(self, rows: np.ndarray, t: int) -> np.ndarray:
        """Posterior marginals over clean tokens per position.

        rows: (L, n_tokens + 1) one-hot state rows where column n_tokens is
        the absorbing mask symbol. Output: (L, n_tokens + 1) rows with zero
        mass on the mask column. If no table row matches the evidence the
        revealed positions keep their observed token and hidden positions get
        a uniform fallback.
        """
        rows = np.asarray(rows, dtype=np.float64)
        length, width = rows.shape
        assert length == self.length, "state length must match the table"
        assert width == self.n_tokens + 1, "expected mask-extended rows"
        tokens = np.argmax(rows, axis=1)
        observed = tokens < self.n_tokens

        match = np.all(
            (self.sequences == tokens[None, :]) | ~observed[None, :], axis=1
        )
        weights = np.where(match, self.probs, 0.0)
        total = float(np.sum(weights))
        out = np.zeros((length, width), dtype=np.float64)
        if total <= 0.0:
            out[observed, tokens[observed]] = 1.0
            out[~observed, : self.n_tokens] = 1.0 / self.n_tokens
            return out
        weights = weights / total
        for j in range(length):
            if observed[j]:
                out[j, tokens[j]] = 1.0
            else:
                np.add.at(out[j], self.sequences[:, j], weights)
        return out


class TrainableBigram:
    """Bigram sequence model fit by counting, used as a learned denoiser.

    Holds Laplace-smoothed unigram and transition tables. predict() does
    per-position Bayes: a neighbor-informed prior (transition from the left
    neighbor when revealed, times transition into the right neighbor when
    revealed) combined with the corruption likelihood of the current token.
    """

    def __init__(self, n_tokens: int, unigram: np.ndarray, trans: np.ndarray):
        self.n_tokens = int(n_tokens)
        self.unigram = np.asarray(unigram, dtype=np.float64)
        self.trans = np.asarray(trans, dtype=np.float64)
        assert self.unigram.shape == (n_tokens,)
        assert self.trans.shape == (n_tokens, n_tokens)

    @classmethod
    def fit(cls, sequences: np.ndarray, n_tokens: int, smoothing: float = 1.0):
        sequences = np.asarray(sequences, dtype=np.int64)
        uni = np.full(n_tokens, smoothing, dtype=np.float64)
        trans = np.full((n_tokens, n_tokens), smoothing, dtype=np.float64)
        for seq in sequences:
            np.add.at(uni, seq, 1.0)
            for a, b in zip(seq[:-1], seq[1:]):
                trans[a, b] += 1.0
        uni /= uni.sum()
        row_sums = trans.sum(axis=1, keepdims=True)
        trans = np.where(row_sums > 0, trans / np.maximum(row_sums, 1e-300), 1.0 / n_tokens)
        return cls(n_tokens, uni, trans)

    def predict(self, rows: np.ndarray, t: int, beta_t: float = 0.0) -> np.ndarray:
        """Predicted clean-token rows given the current state rows.

        Accepts mask-extended rows (width n_tokens + 1, revealed positions
        are hard evidence) or plain rows (width n_tokens, the current token is
        soft evidence whose reliability is 1 - beta_t).
        """
        rows = np.asarray(rows, dtype=np.float64)
        length, width = rows.shape
        v = self.n_tokens
        masked_mode = width == v + 1
        tokens = np.argmax(rows, axis=1)
        observed = tokens < v if masked_mode else np.ones(length, dtype=bool)

        out = np.zeros((length, width), dtype=np.float64)
        for j in range(length):
            if masked_mode and observed[j]:
                out[j, tokens[j]] = 1.0
                continue
            prior = self.unigram.copy()
            if j > 0 and observed[j - 1]:
                prior = self.trans[tokens[j - 1]].copy()
            if j + 1 < length and observed[j + 1]:
                prior = prior * self.trans[:, tokens[j + 1]]
            prior = np.maximum(prior, PROB_FLOOR)
            prior /= prior.sum()
            if masked_mode:
                out[j, :v] = prior
            else:
                like = (1.0 - beta_t) * rows[j, :v] + beta_t / v
                post = prior * like
                post_sum = post.sum()
                out[j, :v] = post / post_sum if post_sum > 0 else prior
        return out


# ---------------------------------------------------------------------------
# Checkpoint and sequence-file formats
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "projdiff-checkpoint v1"


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays as plain text.

    Line format:
        projdiff-checkpoint v1
        <entry count>
    then per array three lines: ``name <name>``, ``shape <d0> <d1> ...``
    (empty for scalars), ``data <row-major values>``. Values use repr for
    exact float64 round-trips.
    """
    lines = [CHECKPOINT_MAGIC, str(len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        lines.append(f"name {name}")
        lines.append("shape" + "".join(f" {d}" for d in arr.shape))
        lines.append("data " + " ".join(repr(float(v)) for v in arr.ravel(order="C")))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigError(f"not a checkpoint file (bad header): {path}")
    count = int(lines[1])
    arrays: dict[str, np.ndarray] = {}
    pos = 2
    for _ in range(count):
        name = lines[pos].split(" ", 1)[1]
        shape = tuple(int(s) for s in lines[pos + 1].split()[1:])
        flat = np.array([float(v) for v in lines[pos + 2].split()[1:]], dtype=np.float64)
        arrays[name] = flat.reshape(shape) if shape else flat.reshape(())
        pos += 3
    return arrays


def save_mlp(path, model: DenoiserMLP) -> None:
    arrays = dict(model.params)
    arrays["meta_dim"] = np.array(float(model.dim))
    arrays["meta_hidden"] = np.array(float(model.hidden))
    save_checkpoint(path, arrays)


def load_mlp(path) -> DenoiserMLP:
    arrays = load_checkpoint(path)
    model = DenoiserMLP(int(arrays["meta_dim"]), hidden=int(arrays["meta_hidden"]))
    for k in PARAM_NAMES:
        model.params[k] = arrays[k]
    return model


def save_sequence_file(path, sequences: np.ndarray, vocab: list[str]) -> None:
    """Token-id sequences as text: a vocab header line, one sequence per line."""
    sequences = np.asarray(sequences, dtype=np.int64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vocab " + " ".join(vocab) + "\n")
        for seq in sequences:
            fh.write(" ".join(vocab[tok] for tok in seq) + "\n")


def load_sequence_file(path):
    """Returns (sequences (S, L) int array, vocab list)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("vocab "):
        raise ConfigError(f"sequence file must start with a 'vocab' header: {path}")
    vocab = lines[0].split()[1:]
    index = {sym: i for i, sym in enumerate(vocab)}
    seqs = []
    for ln in lines[1:]:
        try:
            seqs.append([index[sym] for sym in ln.split()])
        except KeyError as exc:
            raise ConfigError(f"unknown token {exc} in {path}") from exc
    arr = np.asarray(seqs, dtype=np.int64)
    if arr.ndim != 2:
        raise ConfigError(f"sequences must share one length: {path}")
    return arr, vocab


def toy_from_sequences(sequences: np.ndarray, n_tokens: int) -> AnalyticToy:
    """Build an AnalyticToy from raw lines; duplicates raise the probability."""
    sequences = np.asarray(sequences, dtype=np.int64)
    uniq, counts = np.unique(sequences, axis=0, return_counts=True)
    return AnalyticToy(uniq, counts / counts.sum(), n_tokens)
