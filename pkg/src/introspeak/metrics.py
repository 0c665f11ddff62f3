"""Consensus-based caption metrics.

``cider_d`` follows the established CIDEr-D definition: per-n TF-IDF
vectors (n = 1..4) with candidate counts clipped to the reference count, a
cosine similarity per reference, a Gaussian penalty on the length gap, an
average over references, scaled into [0, 10] per n, and a final mean over
n.  Document frequencies count reference *sets*, and an n-gram never seen
in the IDF corpus is treated as appearing in one document (df clipped to
1).  No stemming is applied: tokens are compared verbatim.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

MAX_N = 4
DEFAULT_SIGMA = 6.0

Ngram = tuple[str, ...]


def _ngrams(tokens: Sequence[str], max_n: int = MAX_N) -> Counter[Ngram]:
    counts: Counter[Ngram] = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


@dataclass(frozen=True)
class IdfStats:
    """Document frequencies over reference sets.

    ``doc_count`` is the number of reference sets; ``df`` maps an n-gram to
    the number of sets whose union of captions contains it.
    """

    doc_count: int
    df: Mapping[Ngram, int]

    def weight(self, gram: Ngram) -> float:
        """ln(N / df), with df clipped to at least 1 for unseen n-grams."""
        return math.log(self.doc_count) - math.log(max(1, self.df.get(gram, 0)))


def compute_idf(reference_sets: Iterable[Sequence[Sequence[str]]]) -> IdfStats:
    """Count, for every n-gram up to length 4, how many reference sets use it."""
    df: dict[Ngram, int] = {}
    n_sets = 0
    for ref_set in reference_sets:
        refs = list(ref_set)
        if not refs:
            raise ValueError(f"reference set {n_sets} is empty")
        n_sets += 1
        grams: set[Ngram] = set()
        for ref in refs:
            grams.update(_ngrams(ref))
        for g in grams:
            df[g] = df.get(g, 0) + 1
    if n_sets == 0:
        raise ValueError("cannot build IDF statistics from zero reference sets")
    return IdfStats(doc_count=n_sets, df=df)


@dataclass(frozen=True)
class CiderScore:
    total: float
    per_n: tuple[float, float, float, float]


def _tfidf(counts: Counter[Ngram], idf: IdfStats) -> tuple[list[dict[Ngram, float]], list[float]]:
    vecs: list[dict[Ngram, float]] = [dict() for _ in range(MAX_N)]
    for gram, tf in counts.items():
        vecs[len(gram) - 1][gram] = tf * idf.weight(gram)
    norms = [math.sqrt(sum(v * v for v in vec.values())) for vec in vecs]
    return vecs, norms


def cider_d(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    idf: IdfStats,
    sigma: float = DEFAULT_SIGMA,
) -> CiderScore:
    """Score a candidate caption against its references.

    An empty candidate scores 0 with a warning.  A candidate identical to
    its single reference scores 10 on every n it is long enough to have
    n-grams for.
    """
    if not references:
        raise ValueError("at least one reference is required")
    if any(len(r) == 0 for r in references):
        raise ValueError("references must be non-empty token sequences")
    if len(candidate) == 0:
        warnings.warn("scoring an empty candidate; returning 0")
        return CiderScore(total=0.0, per_n=(0.0, 0.0, 0.0, 0.0))

    cand_vecs, cand_norms = _tfidf(_ngrams(candidate), idf)
    sums = [0.0] * MAX_N
    for ref in references:
        ref_vecs, ref_norms = _tfidf(_ngrams(ref), idf)
        delta = float(len(candidate) - len(ref))
        penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
        for n in range(MAX_N):
            if cand_norms[n] == 0.0 or ref_norms[n] == 0.0:
                continue
            rv = ref_vecs[n]
            overlap = 0.0
            for gram, cv in cand_vecs[n].items():
                r = rv.get(gram)
                if r is not None:
                    overlap += min(cv, r) * r
            sums[n] += penalty * overlap / (cand_norms[n] * ref_norms[n])
    per_n = tuple(10.0 * s / len(references) for s in sums)
    return CiderScore(total=sum(per_n) / MAX_N, per_n=per_n)  # type: ignore[arg-type]


def overlap_iou(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    """Intersection over union of two token sets; 1.0 when both are empty."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)
