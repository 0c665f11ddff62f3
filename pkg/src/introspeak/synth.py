"""Synthetic attribute worlds with a known ground truth.

A world is a set of contexts ("birds") that all carry the same shared
attributes plus a few distinctive ones unique to each context.  Captions
are filler phrases wrapping attribute mentions, where shared attributes
are mentioned more often than distinctive ones; a likelihood-only speaker
trained on such data drifts toward captions that never separate two
contexts, which is the failure mode this package's decoders target.
Ground-truth justifications for a (target, distractor) pair mention
exactly the target's distinctive attributes.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, CorpusRecord, Vocabulary, tokenize
from .pairing import FeatureTable

_COLORS = (
    "red", "blue", "green", "yellow", "orange", "purple", "brown",
    "gray", "black", "white", "pink", "teal", "olive", "crimson",
)
_DISTINCT_PARTS = (
    "crown", "beak", "throat", "eye", "leg", "nape",
    "cheek", "chin", "rump", "crest", "stripe", "patch",
)
_SHARED_PARTS = ("wing", "tail", "back", "belly", "breast", "side")


class InventoryError(ValueError):
    """Raised when a world asks for more attributes than the pools hold."""


@dataclass(frozen=True)
class CaptionGrammar:
    openers: tuple[str, ...] = ("this bird has", "this is a bird with")
    empty_opener: str = "this is a plain bird"
    conjunction: str = "and"
    shared_mention_prob: float = 0.9
    distinct_mention_prob: float = 0.5
    min_attributes: int = 0
    max_attributes: int | None = None
    shuffle_attributes: bool = True

    def __post_init__(self):
        for p in (self.shared_mention_prob, self.distinct_mention_prob):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"mention probability {p!r} outside [0, 1]")
        if self.min_attributes < 0:
            raise ValueError("min_attributes must be >= 0")
        if self.max_attributes is not None and self.max_attributes < max(1, self.min_attributes):
            raise ValueError("max_attributes must be >= min_attributes and >= 1")
        if not self.openers:
            raise ValueError("at least one opener phrase is required")


@dataclass(frozen=True)
class AttributeWorld:
    shared: tuple[str, ...]
    distinct: dict[str, tuple[str, ...]] = field(compare=False)
    grammar: CaptionGrammar = CaptionGrammar()

    @property
    def contexts(self) -> tuple[str, ...]:
        return tuple(sorted(self.distinct))

    def attributes_of(self, context: str) -> tuple[str, ...]:
        try:
            return self.shared + self.distinct[context]
        except KeyError:
            raise KeyError(f"unknown context {context!r}") from None


def gen_world(
    n_contexts: int,
    n_shared: int,
    n_distinct: int,
    seed: int,
    grammar: CaptionGrammar | None = None,
) -> AttributeWorld:
    """Build a world from disjoint shared/distinctive attribute pools.

    Every distinctive attribute gets a color and a body part used nowhere
    else in the world, so no two contexts' distinguishing phrases share a
    token.  Asking for more attributes than the pools can supply raises
    InventoryError.
    """
    if n_contexts < 2:
        raise ValueError("a world needs at least two contexts to form pairs")
    if n_distinct < 1:
        raise ValueError(
            "each context needs at least one distinctive attribute; "
            "a justification cannot exist without one"
        )
    if n_shared < 0:
        raise ValueError("n_shared must be >= 0")
    need_distinct = n_contexts * n_distinct
    if need_distinct > min(len(_COLORS), len(_DISTINCT_PARTS)):
        raise InventoryError(
            f"world needs {need_distinct} distinctive attributes but the pools "
            f"support at most {min(len(_COLORS), len(_DISTINCT_PARTS))}"
        )
    rng = np.random.default_rng(seed)
    colors = list(_COLORS)
    d_parts = list(_DISTINCT_PARTS)
    rng.shuffle(colors)
    rng.shuffle(d_parts)
    distinct_attrs = [f"{c} {p}" for c, p in zip(colors[:need_distinct], d_parts)]
    remaining_colors = colors[need_distinct:]
    shared_pool = [f"{c} {p}" for c in remaining_colors for p in _SHARED_PARTS]
    if n_shared > len(shared_pool):
        raise InventoryError(
            f"world needs {n_shared} shared attributes but only "
            f"{len(shared_pool)} remain in the pool"
        )
    shared_idx = rng.choice(len(shared_pool), size=n_shared, replace=False)
    shared = tuple(shared_pool[i] for i in sorted(shared_idx))
    distinct = {
        f"ctx{i:02d}": tuple(distinct_attrs[i * n_distinct : (i + 1) * n_distinct])
        for i in range(n_contexts)
    }
    return AttributeWorld(shared=shared, distinct=distinct, grammar=grammar or CaptionGrammar())


_MAX_DRAW_RETRIES = 1000


def _caption(world: AttributeWorld, context: str, rng: np.random.Generator) -> str:
    g = world.grammar
    attrs = world.attributes_of(context)
    probs = [g.shared_mention_prob] * len(world.shared) + [g.distinct_mention_prob] * len(
        world.distinct[context]
    )
    for _ in range(_MAX_DRAW_RETRIES):
        chosen = [a for a, p in zip(attrs, probs) if rng.random() < p]
        if len(chosen) < g.min_attributes:
            continue
        if g.max_attributes is not None and len(chosen) > g.max_attributes:
            continue
        break
    else:
        raise ValueError("could not satisfy min/max attribute bounds; loosen the grammar")
    if not chosen:
        return g.empty_opener
    if g.shuffle_attributes:
        order = rng.permutation(len(chosen))
        chosen = [chosen[i] for i in order]
    opener = g.openers[int(rng.integers(len(g.openers)))]
    return f"{opener} " + f" {g.conjunction} ".join(chosen)


def gen_corpus(world: AttributeWorld, captions_per_context: int, seed: int) -> Corpus:
    """Sample a caption corpus; each attribute of a context appears in
    roughly its configured share of that context's captions."""
    if captions_per_context < 1:
        raise ValueError("captions_per_context must be >= 1")
    rng = np.random.default_rng(seed)
    lines: list[tuple[str, str]] = []
    for context in world.contexts:
        for _ in range(captions_per_context):
            lines.append((context, _caption(world, context, rng)))
    vocab = Vocabulary(tokens=tuple(sorted({t for _, text in lines for t in tokenize(text)})))
    records = tuple(
        CorpusRecord(context=ctx, tokens=vocab.encode(tokenize(text))) for ctx, text in lines
    )
    return Corpus(records=records, vocab=vocab)


@dataclass(frozen=True)
class GroundTruthJustification:
    target: str
    distractor: str
    references: tuple[tuple[str, ...], ...]


def gen_justification_refs(
    world: AttributeWorld, pair: tuple[str, str]
) -> GroundTruthJustification:
    """References that mention exactly the target's distinctive attributes.

    One reference per opener per single attribute, plus one per opener
    naming them all; none mentions a shared attribute.
    """
    target, distractor = pair
    if target == distractor:
        raise ValueError("target and distractor must differ")
    for key in pair:
        if key not in world.distinct:
            raise KeyError(f"unknown context {key!r}")
    attrs = [a for a in world.distinct[target] if a not in set(world.distinct[distractor])]
    if not attrs:
        raise ValueError(f"context {target!r} has no attribute distinguishing it from {distractor!r}")
    g = world.grammar
    texts = [f"{opener} {attr}" for opener in g.openers for attr in attrs]
    if len(attrs) > 1:
        # Small sets get every ordering so no valid phrasing loses n-gram credit.
        orders = itertools.permutations(attrs) if len(attrs) <= 3 else [tuple(attrs)]
        for order in orders:
            joined = f" {g.conjunction} ".join(order)
            texts.extend(f"{opener} {joined}" for opener in g.openers)
    return GroundTruthJustification(
        target=target,
        distractor=distractor,
        references=tuple(tuple(tokenize(t)) for t in texts),
    )


def attribute_features(
    world: AttributeWorld, seed: int = 0, noise: float = 0.05
) -> FeatureTable:
    """Attribute-presence indicator vectors with a little Gaussian jitter,
    standing in for image features."""
    dims = sorted({a for ctx in world.contexts for a in world.attributes_of(ctx)})
    index = {a: i for i, a in enumerate(dims)}
    rng = np.random.default_rng(seed)
    vectors: dict[str, np.ndarray] = {}
    for context in world.contexts:
        vec = np.zeros(len(dims), dtype=np.float64)
        for a in world.attributes_of(context):
            vec[index[a]] = 1.0
        vec += noise * rng.standard_normal(len(dims))
        vec.setflags(write=False)
        vectors[context] = vec
    return FeatureTable(dim=len(dims), vectors=vectors)


def save_world(world: AttributeWorld, path: str | Path) -> None:
    g = world.grammar
    doc = {
        "version": 1,
        "shared": list(world.shared),
        "contexts": {k: list(v) for k, v in sorted(world.distinct.items())},
        "grammar": {
            "openers": list(g.openers),
            "empty_opener": g.empty_opener,
            "conjunction": g.conjunction,
            "shared_mention_prob": g.shared_mention_prob,
            "distinct_mention_prob": g.distinct_mention_prob,
            "min_attributes": g.min_attributes,
            "max_attributes": g.max_attributes,
            "shuffle_attributes": g.shuffle_attributes,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_world(path: str | Path) -> AttributeWorld:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise ValueError(f"{path}: unsupported world file version {doc.get('version')!r}")
    g = doc["grammar"]
    grammar = CaptionGrammar(
        openers=tuple(g["openers"]),
        empty_opener=g["empty_opener"],
        conjunction=g["conjunction"],
        shared_mention_prob=g["shared_mention_prob"],
        distinct_mention_prob=g["distinct_mention_prob"],
        min_attributes=g["min_attributes"],
        max_attributes=g["max_attributes"],
        shuffle_attributes=g["shuffle_attributes"],
    )
    return AttributeWorld(
        shared=tuple(doc["shared"]),
        distinct={k: tuple(v) for k, v in doc["contexts"].items()},
        grammar=grammar,
    )
