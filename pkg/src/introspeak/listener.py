"""Listeners: scoring how well a sentence picks out one context over another.

The introspector reads the generative model itself, comparing the sequence
log-probability under the target and distractor contexts.  The naive Bayes
listener is a separately trained per-context unigram model.  ``rs_rerank``
is the sample-then-rerank decoding baseline, and ``two_afc`` is the oracle
forced-choice used to grade whether a caption identifies its context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, Vocabulary
from .lm import ConditionalLM, UnknownContextError, sample_sequence, sequence_logprob

ListenerFn = Callable[[Sequence[int]], float]


def introspector_score(
    lm: ConditionalLM,
    tokens: Sequence[int],
    target_context: str,
    distractor_context: str,
) -> float:
    """log p(s | target) - log p(s | distractor) under one generative model.

    Antisymmetric in the two contexts; exactly 0.0 when they coincide.
    """
    if target_context == distractor_context:
        return 0.0
    return sequence_logprob(lm, target_context, tokens) - sequence_logprob(
        lm, distractor_context, tokens
    )


@dataclass(frozen=True)
class RerankedSample:
    tokens: tuple[int, ...]
    speaker_lp: float
    listener_score: float
    combined: float


def rs_rerank(
    lm: ConditionalLM,
    target_context: str,
    listener: ListenerFn,
    n_samples: int,
    lam: float,
    max_len: int,
    rng: np.random.Generator,
) -> list[RerankedSample]:
    """Draw speaker samples and rerank them by

        lam * speaker_logprob + (1 - lam) * listener_score.

    Samples are deduplicated and empty draws are dropped (they are not
    sentences).  The output order depends only on the surviving sample set:
    ties in the combined score break by token order.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lam must lie in [0, 1], got {lam!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    seen: set[tuple[int, ...]] = set()
    for _ in range(n_samples):
        sample = sample_sequence(lm, target_context, max_len, rng)
        if sample:
            seen.add(sample)
    scored = []
    for tokens in seen:
        speaker_lp = sequence_logprob(lm, target_context, tokens)
        listener_score = float(listener(tokens))
        scored.append(
            RerankedSample(
                tokens=tokens,
                speaker_lp=speaker_lp,
                listener_score=listener_score,
                combined=lam * speaker_lp + (1.0 - lam) * listener_score,
            )
        )
    scored.sort(key=lambda r: (-r.combined, r.tokens))
    return scored


@dataclass(frozen=True)
class NaiveBayesListener:
    """Per-context smoothed unigram tables with a uniform context prior."""

    vocab: Vocabulary
    alpha: float
    _counts: dict[str, np.ndarray]
    _totals: dict[str, int]

    def context_logprob(self, context: str, tokens: Sequence[int]) -> float:
        counts = self._counts.get(context)
        if counts is None:
            raise UnknownContextError(f"context {context!r} was not in the training corpus")
        n = len(self.vocab.tokens)
        denom = np.log(self._totals[context] + self.alpha * n)
        total = 0.0
        for t in tokens:
            if not (0 <= t < n):
                raise ValueError("tokens must be regular vocabulary ids")
            total += float(np.log(counts[t] + self.alpha) - denom)
        return total


def train_nb_listener(corpus: Corpus, alpha: float = 1.0) -> NaiveBayesListener:
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    n = len(corpus.vocab.tokens)
    counts: dict[str, np.ndarray] = {}
    totals: dict[str, int] = {}
    for rec in corpus.records:
        vec = counts.get(rec.context)
        if vec is None:
            vec = np.zeros(n, dtype=np.float64)
            counts[rec.context] = vec
            totals[rec.context] = 0
        for t in rec.tokens:
            vec[t] += 1
        totals[rec.context] += len(rec.tokens)
    return NaiveBayesListener(vocab=corpus.vocab, alpha=alpha, _counts=counts, _totals=totals)


def nb_score(
    listener: NaiveBayesListener,
    tokens: Sequence[int],
    target_context: str,
    distractor_context: str,
) -> float:
    """log p(target | s) - log p(distractor | s) under the naive Bayes model.

    With a uniform prior this is the per-token likelihood ratio sum.
    """
    if target_context == distractor_context:
        return 0.0
    return listener.context_logprob(target_context, tokens) - listener.context_logprob(
        distractor_context, tokens
    )


@dataclass(frozen=True)
class TwoAfcResult:
    choice: str  # "a", "b", or "tie"
    margin: float

    @property
    def credit_a(self) -> float:
        """Correctness credit when ``a`` is the true context (ties count half)."""
        if self.choice == "a":
            return 1.0
        if self.choice == "tie":
            return 0.5
        return 0.0


def two_afc(
    eval_lm: ConditionalLM,
    tokens: Sequence[int],
    context_a: str,
    context_b: str,
) -> TwoAfcResult:
    """Forced choice: which of two contexts better explains the sentence,
    judged by an evaluation model.  Exact ties are declared, not broken."""
    lp_a = sequence_logprob(eval_lm, context_a, tokens)
    lp_b = sequence_logprob(eval_lm, context_b, tokens)
    if lp_a > lp_b:
        choice = "a"
    elif lp_b > lp_a:
        choice = "b"
    else:
        choice = "tie"
    return TwoAfcResult(choice=choice, margin=abs(lp_a - lp_b))
