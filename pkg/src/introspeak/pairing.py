"""Building confusable (target, distractor) pairs from item features.

Easy pairs take each source item's nearest neighbor in feature space.
Hard pairs rerank those neighbors by how much the items' generated
captions overlap, keeping the most confusable ones: pairs a plain
likelihood decoder describes identically end up at the top.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .metrics import overlap_iou

DecoderFn = Callable[[str], Sequence[int]]


class FeatureFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class FeatureTable:
    """Fixed-dimension feature vectors keyed by item id."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        for item_id, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"feature for {item_id!r} has shape {vec.shape}, want ({self.dim},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"feature for {item_id!r} contains non-finite values")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.vectors))

    def __len__(self) -> int:
        return len(self.vectors)

    def vector(self, item_id: str) -> np.ndarray:
        try:
            return self.vectors[item_id]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None


def load_features(path: str | Path) -> FeatureTable:
    """Read a feature file: a ``dim=<D>`` header, then ``id<TAB>v1 v2 ... vD`` lines."""
    path = Path(path)
    dim: int | None = None
    vectors: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if dim is None:
                if not line.startswith("dim="):
                    raise FeatureFormatError("first line must be a dim=<D> header", line=lineno)
                try:
                    dim = int(line[4:])
                except ValueError:
                    raise FeatureFormatError(f"bad dimension {line[4:]!r}", line=lineno) from None
                if dim < 1:
                    raise FeatureFormatError("dimension must be >= 1", line=lineno)
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FeatureFormatError(
                    f"expected 2 tab-separated fields, found {len(parts)}", line=lineno
                )
            item_id, values = parts
            if item_id in vectors:
                raise FeatureFormatError(f"duplicate item id {item_id!r}", line=lineno)
            try:
                vec = np.array([float(x) for x in values.split()], dtype=np.float64)
            except ValueError:
                raise FeatureFormatError("unparsable feature value", line=lineno) from None
            if vec.shape != (dim,):
                raise FeatureFormatError(
                    f"expected {dim} values, found {vec.shape[0]}", line=lineno
                )
            if not np.all(np.isfinite(vec)):
                raise FeatureFormatError("non-finite feature value", line=lineno)
            vec.setflags(write=False)
            vectors[item_id] = vec
    if dim is None:
        raise FeatureFormatError(f"{path}: missing dim=<D> header")
    return FeatureTable(dim=dim, vectors=vectors)


def save_features(table: FeatureTable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"dim={table.dim}\n")
        for item_id in table.ids:
            values = " ".join(repr(float(v)) for v in table.vectors[item_id])
            fh.write(f"{item_id}\t{values}\n")


@dataclass(frozen=True)
class ConfusionPair:
    target: str
    distractor: str
    similarity: float  # easy: negated feature distance; hard: caption IoU
    kind: str  # "easy" | "hard"


def _distance(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 1.0
        return float(1.0 - np.dot(a, b) / (na * nb))
    raise ValueError(f"unknown metric {metric!r}")


def easy_pairs(
    features: FeatureTable,
    source_ids: Sequence[str],
    k: int = 1,
    metric: str = "euclidean",
) -> list[ConfusionPair]:
    """Pair each source with its k nearest other items.

    Distance ties break by ascending id; results keep source order.  A
    table with a single item has no valid neighbor and is an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(features) < 2:
        raise ValueError("need at least two items to form a pair")
    all_ids = features.ids
    pairs: list[ConfusionPair] = []
    for src in source_ids:
        src_vec = features.vector(src)
        ranked = sorted(
            ((_distance(src_vec, features.vectors[other], metric), other)
             for other in all_ids if other != src),
        )
        if k > len(ranked):
            raise ValueError(f"k={k} exceeds the {len(ranked)} available neighbors")
        for dist, other in ranked[:k]:
            pairs.append(ConfusionPair(target=src, distractor=other, similarity=-dist, kind="easy"))
    return pairs


class HardPairResult(NamedTuple):
    pairs: list[ConfusionPair]
    identical_count: int  # pairs whose two captions are the same sequence


def hard_pairs(
    decoder_fn: DecoderFn,
    features: FeatureTable,
    source_ids: Sequence[str],
    top_k: int,
    metric: str = "euclidean",
) -> HardPairResult:
    """Rerank nearest-neighbor pairs by generated-caption overlap.

    ``decoder_fn`` maps an item id to its caption tokens (a plain
    likelihood decode).  The ``top_k`` highest-IoU pairs come back along
    with a count of pairs whose captions are outright identical.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    candidates = easy_pairs(features, source_ids, k=1, metric=metric)
    captions: dict[str, tuple[int, ...]] = {}

    def caption(item_id: str) -> tuple[int, ...]:
        if item_id not in captions:
            captions[item_id] = tuple(decoder_fn(item_id))
        return captions[item_id]

    scored = []
    for pair in candidates:
        iou = overlap_iou(caption(pair.target), caption(pair.distractor))
        scored.append(ConfusionPair(pair.target, pair.distractor, similarity=iou, kind="hard"))
    scored.sort(key=lambda p: (-p.similarity, p.target, p.distractor))
    if top_k > len(scored):
        warnings.warn(f"top_k={top_k} exceeds the {len(scored)} candidate pairs; returning all")
        top_k = len(scored)
    kept = scored[:top_k]
    identical = sum(1 for p in kept if caption(p.target) == caption(p.distractor))
    return HardPairResult(pairs=kept, identical_count=identical)
