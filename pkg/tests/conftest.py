"""Shared test helpers: tiny corpus builders, an independent CIDEr-D
reimplementation used as an oracle, and an exhaustive decode enumerator."""

from __future__ import annotations

import math

from introspeak.corpus import Corpus, CorpusRecord, Vocabulary, tokenize


def corpus_from(lines: list[tuple[str, str]]) -> Corpus:
    """Build a Corpus directly from (context, raw text) pairs."""
    tokenized = [(ctx, tokenize(text)) for ctx, text in lines]
    vocab = Vocabulary(tokens=tuple(sorted({t for _, toks in tokenized for t in toks})))
    records = tuple(
        CorpusRecord(context=ctx, tokens=vocab.encode(toks)) for ctx, toks in tokenized
    )
    return Corpus(records=records, vocab=vocab)


# ---------------------------------------------------------------------------
# Independent CIDEr-D oracle.  Plain dicts and math.fsum; shares no code with
# introspeak.metrics.  Goldens in test_metrics.py were minted from this.

def _oracle_ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _oracle_counts(tokens, n):
    counts: dict[tuple, int] = {}
    for g in _oracle_ngrams(tokens, n):
        counts[g] = counts.get(g, 0) + 1
    return counts


def oracle_idf(reference_sets):
    """(n_sets, df dict) over the union of each set's captions."""
    df: dict[tuple, int] = {}
    n_sets = 0
    for refs in reference_sets:
        n_sets += 1
        grams = set()
        for ref in refs:
            for n in range(1, 5):
                grams.update(_oracle_ngrams(ref, n))
        for g in grams:
            df[g] = df.get(g, 0) + 1
    return n_sets, df


def oracle_cider_d(candidate, references, n_sets, df, sigma=6.0):
    """Returns (total, [per_n x4]) following the consensus metric definition."""
    per_n = []
    for n in range(1, 5):
        cand = {g: c * (math.log(n_sets) - math.log(max(1, df.get(g, 0))))
                for g, c in _oracle_counts(candidate, n).items()}
        cnorm = math.sqrt(math.fsum(v * v for v in cand.values()))
        acc = 0.0
        for ref in references:
            rv = {g: c * (math.log(n_sets) - math.log(max(1, df.get(g, 0))))
                  for g, c in _oracle_counts(ref, n).items()}
            rnorm = math.sqrt(math.fsum(v * v for v in rv.values()))
            if cnorm == 0.0 or rnorm == 0.0:
                continue
            num = math.fsum(min(cv, rv[g]) * rv[g] for g, cv in cand.items() if g in rv)
            delta = len(candidate) - len(ref)
            acc += math.exp(-(delta * delta) / (2.0 * sigma * sigma)) * num / (cnorm * rnorm)
        per_n.append(10.0 * acc / len(references))
    return math.fsum(per_n) / 4.0, per_n


# ---------------------------------------------------------------------------
# Exhaustive decode oracle: score every non-empty sequence up to max_len by
# accumulated per-token emitter-suppressor factors plus the EOS factor, the
# same objective the beam reports.

def enumerate_scored(emitter, target_ctx, suppressor, distractor_ctx, max_len):
    eos = emitter.vocab.eos_id
    rows: list[tuple[tuple[int, ...], float, float]] = []

    def walk(prefix: tuple[int, ...], e: float, s: float) -> None:
        e_vec = emitter.next_token_logprobs(target_ctx, prefix)
        s_vec = suppressor.next_token_logprobs(distractor_ctx, prefix)
        if prefix:
            rows.append((prefix, e + float(e_vec[eos]), s + float(s_vec[eos])))
        if len(prefix) == max_len:
            return
        for v in range(eos):
            walk(prefix + (v,), e + float(e_vec[v]), s + float(s_vec[v]))

    walk((), 0.0, 0.0)
    return rows


def brute_force_best(rows, lam):
    """argmax of e - (1-lam)*s with the decoder's tie rule (token order)."""
    return min(rows, key=lambda r: (-(r[1] - (1.0 - lam) * r[2]), r[0]))
