"""Conditional n-gram language models over context-keyed corpora.

One model holds a separate count table per context key.  Queries return a
dense vector of natural-log probabilities over ``vocabulary tokens + EOS``;
add-alpha smoothing keeps every entry finite, and unseen histories back off
to shorter ones down to the per-context unigram table.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Corpus, Vocabulary

DEFAULT_ORDER = 3
DEFAULT_ALPHA = 0.1

_MAGIC = b"ISNG"
_FORMAT_VERSION = 1


class UnknownContextError(KeyError):
    pass


class ConditionalLM(Protocol):
    """What decoding and scoring need from a model: a vocabulary and
    per-step next-token log-probabilities given (context, prefix)."""

    vocab: Vocabulary

    def next_token_logprobs(self, context: str, prefix: Sequence[int]) -> np.ndarray: ...


# Count tables, per context: one dict per history length h in 0..order-1,
# mapping history tuple -> {token id -> count}.  Token ids follow the
# vocabulary's dense distribution indexing (EOS included as an outcome).
_ContextTables = list[dict[tuple[int, ...], dict[int, int]]]


@dataclass
class NGramLM:
    vocab: Vocabulary
    order: int
    alpha: float
    _tables: dict[str, _ContextTables]
    _cache: dict[tuple[str, tuple[int, ...]], np.ndarray] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0 so every outcome keeps support")

    @property
    def contexts(self) -> tuple[str, ...]:
        return tuple(sorted(self._tables))

    def has_context(self, context: str) -> bool:
        return context in self._tables

    def _history(self, prefix: Sequence[int]) -> tuple[int, ...]:
        """The last order-1 items of the BOS-padded prefix."""
        h = self.order - 1
        if h == 0:
            return ()
        pad = [self.vocab.bos_id] * h + list(prefix)
        return tuple(pad[-h:])

    def next_token_logprobs(self, context: str, prefix: Sequence[int]) -> np.ndarray:
        """Dense log-probability vector over vocabulary tokens + EOS.

        A pure function of (model, context, last order-1 prefix tokens).
        """
        tables = self._tables.get(context)
        if tables is None:
            raise UnknownContextError(f"context {context!r} was not in the training corpus")
        hist = self._history(prefix)
        key = (context, hist)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        # Back off to shorter histories until one has been observed.
        h = len(hist)
        use = hist
        while h > 0 and use not in tables[h]:
            h -= 1
            use = use[1:]
        counts = tables[h].get(use, {})
        k = self.vocab.dist_size
        vec = np.full(k, self.alpha, dtype=np.float64)
        for tok, c in counts.items():
            vec[tok] += c
        vec = np.log(vec) - np.log(sum(counts.values()) + self.alpha * k)
        vec.setflags(write=False)
        self._cache[key] = vec
        return vec


def train_ngram(
    corpus: Corpus,
    order: int = DEFAULT_ORDER,
    alpha: float = DEFAULT_ALPHA,
) -> NGramLM:
    """Count n-grams per context with BOS padding and a terminal EOS event.

    Histories of every length up to order-1 are counted so queries can back
    off through observed shorter histories.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    vocab = corpus.vocab
    tables: dict[str, _ContextTables] = {}
    for rec in corpus.records:
        ctx_tables = tables.get(rec.context)
        if ctx_tables is None:
            ctx_tables = [dict() for _ in range(order)]
            tables[rec.context] = ctx_tables
        pad = [vocab.bos_id] * (order - 1) + list(rec.tokens)
        events = list(rec.tokens) + [vocab.eos_id]
        for i, out in enumerate(events):
            full_hist = pad[i : i + order - 1]
            for h in range(order):
                hist = tuple(full_hist[len(full_hist) - h :])
                slot = ctx_tables[h].setdefault(hist, {})
                slot[out] = slot.get(out, 0) + 1
    return NGramLM(vocab=vocab, order=order, alpha=alpha, _tables=tables)


def sequence_logprob(lm: ConditionalLM, context: str, tokens: Sequence[int]) -> float:
    """Total log-probability of a token sequence plus its terminal EOS factor.

    Always <= 0.  The sequence must be non-empty and contain regular token
    ids only.
    """
    if len(tokens) == 0:
        raise ValueError("cannot score an empty sequence")
    eos = lm.vocab.eos_id
    if any(not (0 <= t < eos) for t in tokens):
        raise ValueError("sequence must contain regular token ids only")
    total = 0.0
    for i, tok in enumerate(tokens):
        total += float(lm.next_token_logprobs(context, tokens[:i])[tok])
    total += float(lm.next_token_logprobs(context, tokens)[eos])
    return total


def sample_sequence(
    lm: ConditionalLM,
    context: str,
    max_len: int,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Ancestral sampling until EOS or max_len tokens.

    May return an empty tuple when EOS is drawn first; callers that need a
    sentence filter those out.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    eos = lm.vocab.eos_id
    tokens: list[int] = []
    for _ in range(max_len):
        probs = np.exp(lm.next_token_logprobs(context, tokens))
        cdf = np.cumsum(probs)
        tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        tok = min(tok, len(probs) - 1)
        if tok == eos:
            break
        tokens.append(tok)
    return tuple(tokens)


def save_ngram(lm: NGramLM, path: str | Path) -> None:
    """Versioned binary serialization: magic, header, zlib-compressed tables."""
    payload = {
        "tokens": list(lm.vocab.tokens),
        "tables": {
            ctx: [
                [[list(hist), sorted(counts.items())] for hist, counts in sorted(per_h.items())]
                for per_h in per_ctx
            ]
            for ctx, per_ctx in sorted(lm._tables.items())
        },
    }
    blob = zlib.compress(json.dumps(payload, sort_keys=True).encode("utf-8"))
    digest = bytes.fromhex(lm.vocab.sha256())
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HHId", _FORMAT_VERSION, 0, lm.order, lm.alpha))
        fh.write(digest)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)


def load_ngram(path: str | Path) -> NGramLM:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic bytes)")
    version, _flags, order, alpha = struct.unpack_from("<HHId", data, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    off = 4 + struct.calcsize("<HHId")
    digest = data[off : off + 32]
    off += 32
    (blob_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    payload = json.loads(zlib.decompress(data[off : off + blob_len]).decode("utf-8"))
    vocab = Vocabulary(tokens=tuple(payload["tokens"]))
    if vocab.sha256() != digest.hex():
        raise ValueError(f"{path}: vocabulary hash mismatch; file is corrupt")
    tables: dict[str, _ContextTables] = {}
    for ctx, per_ctx in payload["tables"].items():
        tables[ctx] = [
            {tuple(hist): {int(t): int(c) for t, c in counts} for hist, counts in per_h}
            for per_h in per_ctx
        ]
    return NGramLM(vocab=vocab, order=int(order), alpha=float(alpha), _tables=tables)
