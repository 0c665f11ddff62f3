"""Emitter-suppressor beam decoding.

The decoder grows a sentence under two conditional models sharing one
prefix: an emitter scored on the target context and a suppressor scored on
the distractor context.  Each step adds

    emitter_lp - (1 - lam) * suppressor_lp

to the running objective, so lam = 1 recovers plain likelihood search and
lam = 0 maximizes the pure emitter/suppressor log ratio.  Both searches
treat EOS as a final scored factor, which makes sequences of different
lengths comparable: a hypothesis that hits ``max_len`` without emitting
EOS still receives its EOS factor before entering the final ranking (its
``finished`` flag stays False).  Sentences are non-empty; EOS is not an
eligible first emission.

Ties in score are broken by ascending lexicographic token-id order, which
orders a prefix before its extensions (shorter first).  All searches are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .lm import ConditionalLM

# Internal search state: (tokens, emitter logprob sum, suppressor logprob sum).
_Partial = tuple[tuple[int, ...], float, float]


@dataclass(frozen=True)
class DecodeParams:
    lam: float = 0.5
    beam_width: int = 5
    max_len: int = 20
    length_normalize: bool = False

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lam must lie in [0, 1], got {self.lam!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    emitter_lp: float
    suppressor_lp: float
    es_score: float
    finished: bool


@dataclass(frozen=True)
class DecodeResult:
    hypotheses: tuple[BeamHypothesis, ...]
    params: DecodeParams

    @property
    def best(self) -> BeamHypothesis:
        return self.hypotheses[0]


def es_token_score(emitter_lp: float, suppressor_lp: float, lam: float) -> float:
    """Per-token emitter-suppressor score."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lam must lie in [0, 1], got {lam!r}")
    return emitter_lp - (1.0 - lam) * suppressor_lp


def _rank_key(score: float, tokens: tuple[int, ...], length_normalize: bool):
    if length_normalize:
        score = score / (len(tokens) + 1)  # +1 for the EOS factor
    return (-score, tokens)


def beam_search(lm: ConditionalLM, context: str, params: DecodeParams) -> DecodeResult:
    """Plain log-likelihood beam search under a single model.

    ``params.lam`` plays no role here; scores are sequence log-probabilities
    including the EOS factor.  Equivalent to es_beam_search at lam = 1.
    """
    if hasattr(lm, "has_context") and not lm.has_context(context):
        raise KeyError(f"context {context!r} not known to the model")
    eos = lm.vocab.eos_id
    width = params.beam_width
    active: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    pool: list[tuple[float, tuple[int, ...], bool]] = []

    def prune_pool() -> None:
        if len(pool) > width:
            pool.sort(key=lambda h: _rank_key(h[0], h[1], params.length_normalize))
            del pool[width:]

    for step in range(params.max_len):
        grown: list[tuple[tuple[int, ...], float]] = []
        for tokens, lp in active:
            vec = lm.next_token_logprobs(context, tokens)
            if tokens:
                pool.append((lp + vec[eos], tokens, True))
            for v in range(eos):
                grown.append((tokens + (v,), lp + vec[v]))
        prune_pool()
        if len(grown) > width:
            grown.sort(key=lambda h: (-h[1], h[0]))
            del grown[width:]
        active = grown
    for tokens, lp in active:
        vec = lm.next_token_logprobs(context, tokens)
        pool.append((lp + vec[eos], tokens, False))
    pool.sort(key=lambda h: _rank_key(h[0], h[1], params.length_normalize))
    del pool[width:]
    hyps = tuple(
        BeamHypothesis(
            tokens=tokens,
            emitter_lp=float(lp),
            suppressor_lp=float(lp),
            es_score=float(lp),
            finished=fin,
        )
        for lp, tokens, fin in pool
    )
    return DecodeResult(hypotheses=hyps, params=params)


def es_beam_search(
    emitter_lm: ConditionalLM,
    target_context: str,
    suppressor_lm: ConditionalLM,
    distractor_context: str,
    params: DecodeParams,
) -> DecodeResult:
    """Beam search maximizing the accumulated emitter-suppressor objective.

    Emitter and suppressor are queried with the same growing prefix.  At
    every step finished hypotheses leave the active beam for a pool that
    competes in the final ranking; the top ``beam_width`` comes back,
    best first.
    """
    if emitter_lm.vocab != suppressor_lm.vocab:
        raise ValueError("emitter and suppressor models must share a vocabulary")
    for lm, ctx, role in (
        (emitter_lm, target_context, "target"),
        (suppressor_lm, distractor_context, "distractor"),
    ):
        if hasattr(lm, "has_context") and not lm.has_context(ctx):
            raise KeyError(f"{role} context {ctx!r} not known to its model")

    lam = params.lam
    one_minus = 1.0 - lam
    eos = emitter_lm.vocab.eos_id
    width = params.beam_width
    active: list[_Partial] = [((), 0.0, 0.0)]
    # Pool rows: (es score, tokens, emitter lp, suppressor lp, finished).
    pool: list[tuple[float, tuple[int, ...], float, float, bool]] = []

    def prune_pool() -> None:
        if len(pool) > width:
            pool.sort(key=lambda h: _rank_key(h[0], h[1], params.length_normalize))
            del pool[width:]

    def terminate(tokens: tuple[int, ...], e: float, s: float, finished: bool) -> None:
        pool.append((e - one_minus * s, tokens, e, s, finished))

    for step in range(params.max_len):
        grown: list[_Partial] = []
        for tokens, e, s in active:
            e_vec = emitter_lm.next_token_logprobs(target_context, tokens)
            s_vec = suppressor_lm.next_token_logprobs(distractor_context, tokens)
            if tokens:
                terminate(tokens, e + e_vec[eos], s + s_vec[eos], True)
            for v in range(eos):
                grown.append((tokens + (v,), e + e_vec[v], s + s_vec[v]))
        prune_pool()
        if len(grown) > width:
            grown.sort(key=lambda h: (-(h[1] - one_minus * h[2]), h[0]))
            del grown[width:]
        active = grown
    for tokens, e, s in active:
        e_vec = emitter_lm.next_token_logprobs(target_context, tokens)
        s_vec = suppressor_lm.next_token_logprobs(distractor_context, tokens)
        terminate(tokens, e + e_vec[eos], s + s_vec[eos], False)
    pool.sort(key=lambda h: _rank_key(h[0], h[1], params.length_normalize))
    del pool[width:]
    hyps = tuple(
        BeamHypothesis(
            tokens=tokens,
            emitter_lp=float(e),
            suppressor_lp=float(s),
            es_score=float(score),
            finished=fin,
        )
        for score, tokens, e, s, fin in pool
    )
    return DecodeResult(hypotheses=hyps, params=params)


def rendered(result: DecodeResult) -> str:
    """Canonical text form of a decode: one line per hypothesis with its
    token ids, objective, and emitter log-probability.  Used by tests that
    compare two decodes byte for byte."""
    lines = []
    for h in result.hypotheses:
        toks = " ".join(str(t) for t in h.tokens)
        lines.append(f"{toks}|{h.es_score!r}|{h.emitter_lp!r}|{int(h.finished)}")
    return "\n".join(lines)
