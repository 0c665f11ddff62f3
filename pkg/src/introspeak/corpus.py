"""Corpus loading, tokenization, vocabulary construction, and splits.

A corpus is a flat list of (context key, token ids) records read from a
tab-separated text file.  Context keys are opaque strings naming the
conditioning class of each caption (a bird species, an image id, a
synthetic context).  All downstream models condition on these keys.
"""

from __future__ import annotations

import hashlib
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"

DEFAULT_MAX_RECORD_LEN = 30

# Anything that is not a word character acts as a separator, so hyphens,
# commas and other punctuation can never leak into tokens.
_SEPARATORS = re.compile(r"[\W_]+", re.UNICODE)


class CorpusFormatError(ValueError):
    """Raised for malformed corpus / vocabulary files.  Carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True


def tokenize(text: str, config: TokenizerConfig | None = None) -> list[str]:
    """Split raw text into tokens.

    Lowercases (unless configured off) and treats every non-word character
    as a separator.  Idempotent on its own space-joined output.
    """
    if config is None:
        config = TokenizerConfig()
    if config.lowercase:
        text = text.lower()
    return [t for t in _SEPARATORS.split(text) if t]


@dataclass(frozen=True)
class Vocabulary:
    """Token <-> id bijection with reserved sentinel ids.

    Regular tokens occupy ids 0..n-1 in sorted order.  EOS takes id n and
    BOS id n+1, so a dense next-token distribution over ``tokens + EOS``
    can be indexed directly by token id (BOS is never a predicted outcome).
    """

    tokens: tuple[str, ...]
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = {t: i for i, t in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        for t in (BOS_TOKEN, EOS_TOKEN):
            if t in ids:
                raise ValueError(f"reserved sentinel {t!r} cannot be a regular token")
        object.__setattr__(self, "_ids", ids)

    @property
    def eos_id(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return len(self.tokens) + 1

    @property
    def size(self) -> int:
        """Total entries including the two sentinels."""
        return len(self.tokens) + 2

    @property
    def dist_size(self) -> int:
        """Length of a dense next-token distribution: regular tokens + EOS."""
        return len(self.tokens) + 1

    @property
    def unk_id(self) -> int | None:
        return self._ids.get(UNK_TOKEN)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id: int) -> str:
        if token_id == self.eos_id:
            return EOS_TOKEN
        if token_id == self.bos_id:
            return BOS_TOKEN
        if 0 <= token_id < len(self.tokens):
            return self.tokens[token_id]
        raise KeyError(f"token id {token_id} out of range")

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        """Map token strings to ids; unknowns fall back to UNK when present."""
        unk = self.unk_id
        out = []
        for t in tokens:
            i = self._ids.get(t)
            if i is None:
                if unk is None:
                    raise KeyError(f"token {t!r} not in vocabulary and no UNK entry")
                i = unk
            out.append(i)
        return tuple(out)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def file_lines(self) -> list[str]:
        return list(self.tokens) + [EOS_TOKEN, BOS_TOKEN]

    def sha256(self) -> str:
        """Hash of the canonical file serialization; used by model files and the wire protocol."""
        blob = "\n".join(self.file_lines()).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.file_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2 or lines[-1] != BOS_TOKEN or lines[-2] != EOS_TOKEN:
            raise CorpusFormatError("vocabulary file must end with the EOS and BOS sentinels")
        return cls(tokens=tuple(lines[:-2]))


def build_vocab(
    lines: Iterable[str],
    config: TokenizerConfig | None = None,
    include_unk: bool = False,
) -> Vocabulary:
    """Build a vocabulary from raw caption lines.

    Ids are assigned in sorted token order, so the result is independent of
    line order.  ``include_unk`` adds an UNK entry for open-vocabulary reuse.
    """
    seen: set[str] = set()
    for line in lines:
        seen.update(tokenize(line, config))
    if not seen:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if include_unk:
        seen.add(UNK_TOKEN)
    return Vocabulary(tokens=tuple(sorted(seen)))


@dataclass(frozen=True)
class CorpusRecord:
    context: str
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class Corpus:
    records: tuple[CorpusRecord, ...]
    vocab: Vocabulary
    _by_context: dict[str, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: dict[str, list[int]] = defaultdict(list)
        for i, rec in enumerate(self.records):
            if not rec.tokens:
                raise ValueError(f"record {i} for context {rec.context!r} is empty")
            if any(not (0 <= t < len(self.vocab.tokens)) for t in rec.tokens):
                raise ValueError(f"record {i} holds a token id outside the vocabulary")
            index[rec.context].append(i)
        object.__setattr__(self, "_by_context", {c: tuple(v) for c, v in index.items()})

    @property
    def contexts(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_context))

    def records_for(self, context: str) -> tuple[CorpusRecord, ...]:
        try:
            idx = self._by_context[context]
        except KeyError:
            raise KeyError(f"unknown context {context!r}") from None
        return tuple(self.records[i] for i in idx)

    def __len__(self) -> int:
        return len(self.records)


def load_corpus(
    path: str | Path,
    vocab: Vocabulary | None = None,
    config: TokenizerConfig | None = None,
    max_record_len: int = DEFAULT_MAX_RECORD_LEN,
) -> Corpus:
    """Read a tab-separated ``context_key<TAB>raw caption`` file.

    Lines starting with ``#`` and blank lines are skipped.  Records longer
    than ``max_record_len`` tokens are truncated with a warning.  When a
    vocabulary is supplied, unknown tokens map to its UNK entry; without
    one, the vocabulary is built from the file itself.
    """
    path = Path(path)
    raw: list[tuple[int, str, list[str]]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(
                    f"expected 2 tab-separated fields, found {len(parts)}", line=lineno
                )
            context, text = parts
            if not context.strip():
                raise CorpusFormatError("empty context key", line=lineno)
            toks = tokenize(text, config)
            if not toks:
                raise CorpusFormatError("caption tokenizes to nothing", line=lineno)
            if len(toks) > max_record_len:
                warnings.warn(
                    f"{path.name}:{lineno}: record truncated from "
                    f"{len(toks)} to {max_record_len} tokens"
                )
                toks = toks[:max_record_len]
            raw.append((lineno, context, toks))
    if vocab is None:
        if not raw:
            raise ValueError(f"{path}: no records to build a vocabulary from")
        vocab = Vocabulary(tokens=tuple(sorted({t for _, _, toks in raw for t in toks})))
    records = []
    for lineno, context, toks in raw:
        try:
            ids = vocab.encode(toks)
        except KeyError as exc:
            raise CorpusFormatError(str(exc), line=lineno) from None
        records.append(CorpusRecord(context=context, tokens=ids))
    return Corpus(records=tuple(records), vocab=vocab)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write records back out as ``context<TAB>space-joined tokens`` lines."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in corpus.records:
            fh.write(f"{rec.context}\t{' '.join(corpus.vocab.decode(rec.tokens))}\n")


def split_corpus(
    corpus: Corpus,
    fractions: Sequence[float],
    seed: int,
) -> tuple[Corpus, Corpus, Corpus]:
    """Stratified (train, val, test) split, deterministic in ``seed``.

    Each context's records are shuffled and allocated by largest remainder,
    so a 10-record context under (0.8, 0.1, 0.1) lands 8/1/1.  Contexts with
    fewer records than splits go wholly to train with a warning.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must name (train, val, test) shares")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")

    rng = np.random.default_rng(seed)
    buckets: tuple[list[CorpusRecord], ...] = ([], [], [])
    for context in corpus.contexts:
        recs = list(corpus.records_for(context))
        if len(recs) < len(fractions):
            warnings.warn(
                f"context {context!r} has {len(recs)} record(s), fewer than 3 splits; "
                "assigning all of them to train"
            )
            buckets[0].extend(recs)
            continue
        order = rng.permutation(len(recs))
        recs = [recs[i] for i in order]
        n = len(recs)
        ideal = [f * n for f in fractions]
        counts = [int(x) for x in ideal]
        remainders = sorted(
            range(3), key=lambda i: (-(ideal[i] - counts[i]), i)
        )
        for i in remainders[: n - sum(counts)]:
            counts[i] += 1
        start = 0
        for b, c in zip(buckets, counts):
            b.extend(recs[start : start + c])
            start += c
    return tuple(
        Corpus(records=tuple(b), vocab=corpus.vocab) for b in buckets
    )  # type: ignore[return-value]
