"""Token-sequence constraints: forbidden n-gram repair, batch novelty, and a
linear surrogate scorer with a threshold.

All relaxed residuals work on (L, W) probability rows and decode argmax
internally for their hard predicates, matching the discrete sampler's
projection interface. Margin-free quantities here are already calibrated:
soft scores evaluated at one-hot rows equal their hard counterparts exactly.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ConfigError, InfeasibleError
from ..numerics import PROB_FLOOR
from ..projections import Constraint
from ..sampler_discrete import CategoricalSequence


def _contains(tokens, pattern) -> bool:
    n = len(pattern)
    return any(
        tuple(tokens[i : i + n]) == pattern for i in range(len(tokens) - n + 1)
    )


@dataclass(frozen=True)
class PatternRule:
    """A forbidden contiguous n-gram with ordered rewrite candidates.

    Candidates must be at most pattern-length and must not themselves contain
    the pattern, so substituting one always removes the match it targets.
    When no candidate survives the local recheck, the span is deleted.
    """

    pattern: tuple
    replacements: tuple

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(int(t) for t in self.pattern))
        object.__setattr__(
            self,
            "replacements",
            tuple(tuple(int(t) for t in r) for r in self.replacements),
        )
        if not self.pattern:
            raise ConfigError("forbidden pattern must be non-empty")
        for r in self.replacements:
            if len(r) > len(self.pattern):
                raise ConfigError("replacements cannot grow the sequence")
            if _contains(r, self.pattern):
                raise ConfigError("replacement reintroduces the pattern")


def load_rules(path) -> list[PatternRule]:
    """Read rules from a JSON list of {"pattern": [...], "replacements": [[...], ...]}."""
    with open(path) as fh:
        doc = json.load(fh)
    return [
        PatternRule(tuple(r["pattern"]), tuple(tuple(c) for c in r["replacements"]))
        for r in doc
    ]


def _match_at(tokens, rules, i):
    for rule in rules:
        n = len(rule.pattern)
        if tuple(tokens[i : i + n]) == rule.pattern:
            return rule
    return None


def _window_clean(tokens, rules, lo, hi) -> bool:
    maxlen = max(len(r.pattern) for r in rules)
    lo = max(0, lo - maxlen + 1)
    hi = min(len(tokens), hi + maxlen - 1)
    return all(
        _match_at(tokens, rules, i) is None for i in range(lo, hi)
    )


def pattern_repair(tokens, rules) -> list:
    """Rewrite until no rule's pattern occurs anywhere.

    The scan walks left to right. At a match, candidates are tried in order
    and the first whose surrounding window comes out clean is substituted;
    edits only affect matches overlapping the edited span, so a clean window
    means no new match anywhere. Deletion is the fallback and shrinks the
    sequence, which bounds the total number of edits.
    """
    if not rules:
        return list(tokens)
    out = list(int(t) for t in tokens)
    maxlen = max(len(r.pattern) for r in rules)
    i = 0
    while i < len(out):
        rule = _match_at(out, rules, i)
        if rule is None:
            i += 1
            continue
        n = len(rule.pattern)
        done = False
        for cand in rule.replacements:
            trial = out[:i] + list(cand) + out[i + n :]
            if _window_clean(trial, rules, i, i + len(cand)):
                out = trial
                done = True
                break
        if not done:
            out = out[:i] + out[i + n :]
        i = max(0, i - maxlen + 1)
    return out


def pattern_constraint(rules, n_tokens: int, name: str = "patterns") -> Constraint:
    """Decoded sequence contains no forbidden n-gram.

    The relaxed residual is the expected number of pattern matches under the
    rows (a weighted n-gram score with unit weights), which is zero exactly
    on pattern-free hard sequences. The exact repair runs the rewrite cascade
    and re-encodes one-hot rows at the original width.
    """
    if not rules:
        raise ConfigError("need at least one rule")
    by_len: dict[int, list[tuple]] = {}
    for r in rules:
        by_len.setdefault(len(r.pattern), []).append(r.pattern)

    def soft(rows):
        total = 0.0
        grad = np.zeros_like(rows)
        for n, pats in by_len.items():
            grams = np.array(pats, dtype=np.int64)
            weights = np.ones(len(pats))
            val, g = kernels.ngram_score(rows, grams, weights)
            total += val
            grad += g
        return total, grad

    def decode(rows):
        return [int(t) for t in np.argmax(rows, axis=1)]

    def exact(rows):
        rows = np.asarray(rows, dtype=np.float64)
        fixed = pattern_repair(decode(rows), rules)
        out = np.zeros((len(fixed), rows.shape[1]))
        out[np.arange(len(fixed)), fixed] = 1.0
        return out

    return Constraint(
        name=name,
        predicate=lambda rows: not any(
            _contains(decode(np.asarray(rows)), r.pattern) for r in rules
        ),
        residual=lambda rows: float(soft(np.asarray(rows, dtype=np.float64))[0]),
        residual_grad=lambda rows: soft(np.asarray(rows, dtype=np.float64))[1],
        exact_project=exact,
        is_convex=False,
    )


def _flip_costs(rows: np.ndarray):
    """Per-position cost of moving the argmax to each token.

    cost[j, v] = log p_j(argmax) - log p_j(v), zero at the argmax itself.
    """
    logp = np.log(np.maximum(rows, PROB_FLOOR))
    return logp[np.arange(rows.shape[0]), np.argmax(rows, axis=1)][:, None] - logp


def novelty_project(
    x: CategoricalSequence, dataset: set, n_tokens: int | None = None
) -> CategoricalSequence:
    """Cheapest token flips that land outside ``dataset``.

    Uniform-cost best-first search over flip sets, cost = summed per-position
    log-probability drops, ties broken lexically for determinism. The rows
    come back with the old argmax mass and the substitute's mass swapped at
    every flipped position, so the found sequence is the new argmax and stays
    top-ranked. The found sequence is added to ``dataset`` in place.
    """
    rows = x.rows
    width = rows.shape[1]
    n_tokens = width if n_tokens is None else n_tokens
    costs = _flip_costs(rows)
    base = tuple(int(t) for t in np.argmax(rows, axis=1))
    heap = [(0.0, base)]
    seen = {base}
    while heap:
        cost, seq = heapq.heappop(heap)
        if seq not in dataset:
            out = rows.copy()
            for j, tok in enumerate(seq):
                if tok != base[j]:
                    out[j, base[j]], out[j, tok] = out[j, tok], out[j, base[j]]
            dataset.add(seq)
            return CategoricalSequence(out)
        for j in range(len(seq)):
            for v in range(n_tokens):
                if v == seq[j]:
                    continue
                nxt = seq[:j] + (v,) + seq[j + 1 :]
                if nxt in seen:
                    continue
                seen.add(nxt)
                heapq.heappush(
                    heap, (cost - costs[j, seq[j]] + costs[j, v], nxt)
                )
    raise InfeasibleError("every sequence in the space is already taken")


class NoveltyState:
    """Dataset view for a batch of novelty-constrained chains.

    With dedupe on, one shared set accumulates every emitted sequence so a
    batch never repeats itself; otherwise each repair call works against a
    fresh copy of the base dataset and separate chains may agree.
    """

    def __init__(self, dataset, n_tokens: int, dedupe: bool = False):
        self.base = {tuple(int(t) for t in s) for s in dataset}
        self.n_tokens = int(n_tokens)
        self.dedupe = bool(dedupe)
        self._shared = set(self.base) if dedupe else None

    def view(self) -> set:
        return self._shared if self.dedupe else set(self.base)

    def taken(self, seq) -> bool:
        seq = tuple(int(t) for t in seq)
        return seq in (self._shared if self.dedupe else self.base)


def novelty_constraint(state, name: str = "novelty") -> Constraint:
    """Decoded sequence must not belong to the dataset view.

    Membership has no useful relaxation, so the residual is identically zero
    (with a zero gradient) and enforcement rides entirely on the exact
    repair, which the discrete engine applies at the end of the chain.
    ``state`` is a NoveltyState.
    """

    def decode(rows):
        return tuple(int(t) for t in np.argmax(np.asarray(rows), axis=1))

    def exact(rows):
        rows = np.asarray(rows, dtype=np.float64)
        out = novelty_project(
            CategoricalSequence(rows), state.view(), state.n_tokens
        )
        return out.rows

    return Constraint(
        name=name,
        predicate=lambda rows: not state.taken(decode(rows)),
        residual=lambda rows: 0.0,
        residual_grad=lambda rows: np.zeros_like(np.asarray(rows, dtype=np.float64)),
        exact_project=exact,
        is_convex=False,
    )


@dataclass(frozen=True)
class SurrogateScorer:
    """Linear n-gram scorer with an acceptance threshold.

    ``weights`` maps token tuples to weights; the hard score of a decoded
    sequence sums weights over every occurrence, and the soft score replaces
    indicator matches with products of row probabilities, which is linear in
    each row.
    """

    weights: tuple
    tau: float

    def __post_init__(self):
        raw = self.weights
        if isinstance(raw, dict):
            raw = raw.items()
        pairs = tuple(
            (tuple(int(t) for t in gram), float(w)) for gram, w in raw
        )
        object.__setattr__(self, "weights", pairs)
        for gram, _ in pairs:
            if not gram:
                raise ConfigError("empty n-gram in weight table")

    def hard_score(self, tokens) -> float:
        tokens = [int(t) for t in tokens]
        total = 0.0
        for gram, w in self.weights:
            n = len(gram)
            total += w * sum(
                tuple(tokens[i : i + n]) == gram
                for i in range(len(tokens) - n + 1)
            )
        return total

    def soft_score(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float64)
        by_len: dict[int, list] = {}
        for gram, w in self.weights:
            by_len.setdefault(len(gram), []).append((gram, w))
        total = 0.0
        grad = np.zeros_like(rows)
        for n, items in by_len.items():
            grams = np.array([g for g, _ in items], dtype=np.int64)
            ws = np.array([w for _, w in items])
            val, g = kernels.ngram_score(rows, grams, ws)
            total += val
            grad += g
        return total, grad


def surrogate_constraint(scorer: SurrogateScorer, name: str = "surrogate") -> Constraint:
    """Soft score at most tau; hard predicate on the decoded sequence."""

    def residual(rows):
        return max(0.0, scorer.soft_score(rows)[0] - scorer.tau)

    def residual_grad(rows):
        rows = np.asarray(rows, dtype=np.float64)
        val, g = scorer.soft_score(rows)
        if val - scorer.tau <= 0.0:
            return np.zeros_like(rows)
        return g

    return Constraint(
        name=name,
        predicate=lambda rows: scorer.hard_score(
            np.argmax(np.asarray(rows), axis=1)
        ) <= scorer.tau,
        residual=residual,
        residual_grad=residual_grad,
        is_convex=False,
    )


def load_dataset(path) -> set:
    """Read sequences from a text file, one whitespace-separated row per line."""
    out = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.add(tuple(int(t) for t in line.split()))
    return out


def save_dataset(path, sequences):
    with open(path, "w") as fh:
        for seq in sorted(sequences):
            fh.write(" ".join(str(int(t)) for t in seq) + "\n")
