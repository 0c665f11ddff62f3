"""Experiment harness: seeded sweeps, sample-budget sweeps, and the
discriminative captioning benchmark.

Every run resolves an ExperimentConfig (from a TOML file plus overrides),
funnels all randomness through generators derived from the configured
seeds, and can write four artifacts into the output directory:

    report.csv    aggregated rows; bitwise-reproducible given config+seeds
    items.jsonl   one record per decoded item, enough to recompute any row
    config.lock   the resolved configuration echoed back as JSON
    timings.csv   wall-clock per row (the one file that varies run to run)

Figures are rendered next to report.csv unless disabled.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, load_corpus, split_corpus
from .decode import DecodeParams, beam_search, es_beam_search
from .listener import (
    NaiveBayesListener,
    introspector_score,
    nb_score,
    rs_rerank,
    train_nb_listener,
    two_afc,
)
from .lm import NGramLM, train_ngram
from .metrics import IdfStats, cider_d, compute_idf
from .pairing import FeatureTable, easy_pairs, hard_pairs, load_features
from .synth import (
    AttributeWorld,
    CaptionGrammar,
    GroundTruthJustification,
    attribute_features,
    gen_corpus,
    gen_justification_refs,
    gen_world,
)

VALID_METHODS = ("S", "IS", "blind-IS", "RS", "RS-TL")

# Seed-stream tags, so each consumer of randomness gets its own generator.
_TAG_SPLIT = 2
_TAG_PAIR_CAP = 5
_TAG_FEATURES = 6
_TAG_RS = 7


def _int_seed(*parts: int) -> int:
    return int(np.random.default_rng(list(parts)).integers(2**62))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # experiment
    out_dir: str | None = None
    seeds: tuple[int, ...] = (0,)
    methods: tuple[str, ...] = ("S", "IS")
    lambda_grid: tuple[float, ...] = (0.0, 0.3, 0.5, 0.7, 1.0)
    beam_width: int = 10
    max_len: int = 10
    length_normalize: bool = True
    rs_samples: int = 10
    sample_grid: tuple[int, ...] = (10, 50, 100)
    rs_lambda: float = 0.5
    discrim_lambda: float = 0.3
    discrim_beam: int = 2
    max_pairs: int | None = None
    hard_top_k: int = 4
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    figures: bool = True
    # lm
    order: int = 3
    alpha: float = 0.1
    nb_alpha: float = 1.0
    # synthetic data
    n_contexts: int = 4
    n_shared: int = 2
    n_distinct: int = 2
    captions_per_context: int = 60
    shared_mention_prob: float = 0.9
    distinct_mention_prob: float = 0.5
    feature_noise: float = 0.05
    # corpus data (when set, replaces the synthetic world)
    corpus_path: str | None = None
    pairs_path: str | None = None
    features_path: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        bad = [m for m in self.methods if m not in VALID_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; valid: {list(VALID_METHODS)}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if any(not (0.0 <= lam <= 1.0) for lam in self.lambda_grid):
            raise ConfigError("lambda_grid values must lie in [0, 1]")
        if not self.lambda_grid:
            raise ConfigError("lambda_grid must not be empty")
        if (self.corpus_path is None) != (self.pairs_path is None):
            raise ConfigError("corpus_path and pairs_path must be given together")

    @property
    def uses_corpus(self) -> bool:
        return self.corpus_path is not None

    @classmethod
    def from_toml(cls, path: str | Path) -> "ExperimentConfig":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        with Path(path).open("rb") as fh:
            doc = tomllib.load(fh)
        flat: dict = {}
        for section in ("experiment", "lm", "synth", "corpus"):
            part = doc.get(section, {})
            if not isinstance(part, dict):
                raise ConfigError(f"[{section}] must be a table")
            flat.update(part)
        known = {f.name for f in dataclasses.fields(cls)}
        # The corpus section uses "path" style keys to read naturally.
        for alias, target in (("path", "corpus_path"), ("pairs", "pairs_path"), ("features", "features_path")):
            if alias in flat:
                flat[target] = flat.pop(alias)
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("seeds", "methods", "lambda_grid", "sample_grid", "split"):
            if key in flat:
                flat[key] = tuple(flat[key])
        return cls(**flat)

    def replaced(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def lock_json(self) -> str:
        doc = dataclasses.asdict(self)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class SweepRow:
    method: str
    lam: float | None
    samples: int | None
    split: str | None
    n_items: int
    cider_mean: float | None
    cider_sem: float | None
    twoafc_mean: float

    def label(self) -> str:
        bits = [self.method]
        if self.lam is not None:
            bits.append(f"lam={self.lam:g}")
        if self.samples is not None:
            bits.append(f"samples={self.samples}")
        if self.split is not None:
            bits.append(self.split)
        return " ".join(bits)


@dataclass
class SweepReport:
    kind: str
    rows: list[SweepRow]
    items: list[dict]
    meta: dict
    timings: list[tuple[str, float]]
    config: ExperimentConfig


@dataclass
class _SeedEnv:
    """Everything one seed's evaluations need, built once."""

    seed: int
    world: AttributeWorld | None
    speaker: NGramLM
    eval_lm: NGramLM
    nb: NaiveBayesListener
    pairs: list[tuple[str, str]]
    refs: dict[tuple[str, str], GroundTruthJustification]
    idf: IdfStats
    features: FeatureTable | None
    s_cache: dict[tuple[str, int], tuple[int, ...]] = field(default_factory=dict)


def _merge(a: Corpus, b: Corpus) -> Corpus:
    return Corpus(records=a.records + b.records, vocab=a.vocab)


def _load_pairs_file(path: str) -> tuple[list[tuple[str, str]], dict]:
    pairs: list[tuple[str, str]] = []
    refs: dict[tuple[str, str], GroundTruthJustification] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                key = (obj["target"], obj["distractor"])
                references = tuple(tuple(r) for r in obj["references"])
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad pair record ({exc})") from None
            if not references:
                raise ConfigError(f"{path}:{lineno}: pair has no references")
            pairs.append(key)
            refs[key] = GroundTruthJustification(
                target=key[0], distractor=key[1], references=references
            )
    if not pairs:
        raise ConfigError(f"{path}: no pairs found")
    return pairs, refs


def _build_env(cfg: ExperimentConfig, seed: int, need_features: bool) -> _SeedEnv:
    if cfg.uses_corpus:
        world = None
        corpus = load_corpus(cfg.corpus_path)
        pairs, refs = _load_pairs_file(cfg.pairs_path)
        features = load_features(cfg.features_path) if cfg.features_path else None
    else:
        grammar = CaptionGrammar(
            shared_mention_prob=cfg.shared_mention_prob,
            distinct_mention_prob=cfg.distinct_mention_prob,
        )
        world = gen_world(cfg.n_contexts, cfg.n_shared, cfg.n_distinct, seed=seed, grammar=grammar)
        corpus = gen_corpus(world, cfg.captions_per_context, seed=_int_seed(seed, 1))
        contexts = world.contexts
        pairs = [(a, b) for a in contexts for b in contexts if a != b]
        refs = {p: gen_justification_refs(world, p) for p in pairs}
        features = (
            attribute_features(world, seed=_int_seed(seed, _TAG_FEATURES), noise=cfg.feature_noise)
            if need_features
            else None
        )
    if need_features and features is None:
        raise ConfigError("this run needs item features; set features_path")

    if cfg.max_pairs is not None and len(pairs) > cfg.max_pairs:
        rng = np.random.default_rng([seed, _TAG_PAIR_CAP])
        keep = sorted(rng.choice(len(pairs), size=cfg.max_pairs, replace=False))
        pairs = [pairs[i] for i in keep]

    train, val, test = split_corpus(corpus, cfg.split, seed=_int_seed(seed, _TAG_SPLIT))
    heldout = _merge(val, test)
    if len(heldout) == 0:
        raise ConfigError("the (val, test) shares are empty; the oracle needs held-out data")
    needed = {c for p in pairs for c in p}
    missing = needed - set(heldout.contexts)
    if missing:
        raise ConfigError(
            f"held-out split lacks contexts {sorted(missing)}; "
            "increase captions_per_context or the val/test shares"
        )
    missing_train = needed - set(train.contexts)
    if missing_train:
        raise ConfigError(f"train split lacks contexts {sorted(missing_train)}")

    speaker = train_ngram(train, order=cfg.order, alpha=cfg.alpha)
    eval_lm = train_ngram(heldout, order=cfg.order, alpha=cfg.alpha)
    nb = train_nb_listener(train, alpha=cfg.nb_alpha)
    idf = compute_idf([refs[p].references for p in pairs])
    return _SeedEnv(
        seed=seed,
        world=world,
        speaker=speaker,
        eval_lm=eval_lm,
        nb=nb,
        pairs=pairs,
        refs=refs,
        idf=idf,
        features=features,
    )


def _speaker_caption(
    env: _SeedEnv, context: str, beam_width: int, max_len: int, length_normalize: bool = True
) -> tuple[int, ...]:
    key = (context, beam_width)
    hit = env.s_cache.get(key)
    if hit is None:
        params = DecodeParams(
            lam=1.0, beam_width=beam_width, max_len=max_len, length_normalize=length_normalize
        )
        hit = beam_search(env.speaker, context, params).best.tokens
        env.s_cache[key] = hit
    return hit


def _decode(
    env: _SeedEnv,
    cfg: ExperimentConfig,
    method: str,
    lam: float,
    target: str,
    distractor: str,
    *,
    n_samples: int | None = None,
    rs_rng_parts: tuple[int, ...] = (),
) -> tuple[tuple[int, ...], float | None]:
    """Run one method on one ordered pair; returns (tokens, objective)."""
    if method == "S":
        tokens = _speaker_caption(env, target, cfg.beam_width, cfg.max_len, cfg.length_normalize)
        return tokens, None
    if method in ("IS", "blind-IS"):
        # blind-IS shares this computation: conditioning is already blind to
        # per-record identity beyond the context key, so the two labels
        # denote the same decoder here and reports keep both names.
        params = DecodeParams(
            lam=lam,
            beam_width=cfg.beam_width,
            max_len=cfg.max_len,
            length_normalize=cfg.length_normalize,
        )
        best = es_beam_search(env.speaker, target, env.speaker, distractor, params).best
        return best.tokens, best.es_score
    if method in ("RS", "RS-TL"):
        if method == "RS":
            listener = lambda toks: introspector_score(env.speaker, toks, target, distractor)
        else:
            listener = lambda toks: nb_score(env.nb, toks, target, distractor)
        rng = np.random.default_rng(list(rs_rng_parts))
        ranked = rs_rerank(
            env.speaker,
            target,
            listener,
            n_samples=n_samples if n_samples is not None else cfg.rs_samples,
            lam=lam,
            max_len=cfg.max_len,
            rng=rng,
        )
        if not ranked:
            return (), None
        return ranked[0].tokens, ranked[0].combined
    raise ConfigError(f"unknown method {method!r}")


def _score_item(env: _SeedEnv, tokens: tuple[int, ...], target: str, distractor: str) -> dict:
    if not tokens:
        return {
            "tokens": [],
            "text": "",
            "cider": 0.0,
            "cider_per_n": [0.0, 0.0, 0.0, 0.0],
            "twoafc_choice": "none",
            "twoafc_margin": 0.0,
            "twoafc_credit": 0.5,
        }
    words = env.speaker.vocab.decode(tokens)
    ref = env.refs[(target, distractor)]
    score = cider_d(words, ref.references, env.idf)
    afc = two_afc(env.eval_lm, tokens, target, distractor)
    return {
        "tokens": list(tokens),
        "text": " ".join(words),
        "cider": score.total,
        "cider_per_n": list(score.per_n),
        "twoafc_choice": afc.choice,
        "twoafc_margin": afc.margin,
        "twoafc_credit": afc.credit_a,
    }


def _sem(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _aggregate(
    kind: str,
    cells: dict[tuple, dict],
    cfg: ExperimentConfig,
    meta: dict,
    items: list[dict],
) -> SweepReport:
    rows = []
    timings = []

    def order(key: tuple):
        method, lam, samples, split = key
        return (
            method,
            split or "",
            lam if lam is not None else -1.0,
            samples if samples is not None else -1,
        )

    for key in sorted(cells, key=order):
        cell = cells[key]
        method, lam, samples, split = key
        ciders = cell["cider"]
        has_cider = bool(ciders)
        rows.append(
            SweepRow(
                method=method,
                lam=lam,
                samples=samples,
                split=split,
                n_items=cell["n"],
                cider_mean=float(np.mean(ciders)) if has_cider else None,
                cider_sem=_sem(ciders) if has_cider else None,
                twoafc_mean=float(np.mean(cell["afc"])),
            )
        )
        timings.append((rows[-1].label(), cell["seconds"]))
    return SweepReport(kind=kind, rows=rows, items=items, meta=meta, timings=timings, config=cfg)


def _new_cell() -> dict:
    return {"cider": [], "afc": [], "n": 0, "seconds": 0.0}


def run_sweep(cfg: ExperimentConfig, log=None) -> SweepReport:
    """Evaluate each configured method across the lambda grid.

    Items are (seed, ordered pair) combinations; every item is captioned,
    scored against the pair's justification references, and graded by the
    held-out 2AFC oracle.
    """
    cells: dict[tuple, dict] = {}
    items: list[dict] = []
    for seed in cfg.seeds:
        env = _build_env(cfg, seed, need_features=False)
        if log:
            log(f"seed {seed}: {len(env.pairs)} pairs")
        for method in cfg.methods:
            for lam_idx, lam in enumerate(cfg.lambda_grid):
                key = (method, lam, cfg.rs_samples if method in ("RS", "RS-TL") else None, None)
                cell = cells.setdefault(key, _new_cell())
                for pair_idx, (target, distractor) in enumerate(env.pairs):
                    t0 = time.perf_counter()
                    tokens, objective = _decode(
                        env,
                        cfg,
                        method,
                        lam,
                        target,
                        distractor,
                        rs_rng_parts=(seed, _TAG_RS, cfg.rs_samples, pair_idx),
                    )
                    scored = _score_item(env, tokens, target, distractor)
                    cell["seconds"] += time.perf_counter() - t0
                    item = {
                        "kind": "sweep",
                        "seed": seed,
                        "method": method,
                        "lambda": lam,
                        "target": target,
                        "distractor": distractor,
                        "objective": objective,
                        **scored,
                    }
                    items.append(item)
                    cell["cider"].append(scored["cider"])
                    cell["afc"].append(scored["twoafc_credit"])
                    cell["n"] += 1
    return _aggregate("sweep", cells, cfg, meta={}, items=items)


def run_rs_samplesweep(cfg: ExperimentConfig, log=None) -> SweepReport:
    """RS at each sample budget, against an IS reference row at beam 10."""
    cells: dict[tuple, dict] = {}
    items: list[dict] = []
    is_cfg = cfg.replaced(beam_width=10)
    for seed in cfg.seeds:
        env = _build_env(cfg, seed, need_features=False)
        if log:
            log(f"seed {seed}: {len(env.pairs)} pairs")
        for budget in cfg.sample_grid:
            key = ("RS", cfg.rs_lambda, budget, None)
            cell = cells.setdefault(key, _new_cell())
            for pair_idx, (target, distractor) in enumerate(env.pairs):
                t0 = time.perf_counter()
                tokens, objective = _decode(
                    env,
                    cfg,
                    "RS",
                    cfg.rs_lambda,
                    target,
                    distractor,
                    n_samples=budget,
                    rs_rng_parts=(seed, _TAG_RS, budget, pair_idx),
                )
                scored = _score_item(env, tokens, target, distractor)
                cell["seconds"] += time.perf_counter() - t0
                items.append(
                    {
                        "kind": "rs-sweep",
                        "seed": seed,
                        "method": "RS",
                        "lambda": cfg.rs_lambda,
                        "samples": budget,
                        "target": target,
                        "distractor": distractor,
                        "objective": objective,
                        **scored,
                    }
                )
                cell["cider"].append(scored["cider"])
                cell["afc"].append(scored["twoafc_credit"])
                cell["n"] += 1
        key = ("IS", cfg.rs_lambda, None, None)
        cell = cells.setdefault(key, _new_cell())
        for target, distractor in env.pairs:
            t0 = time.perf_counter()
            tokens, objective = _decode(env, is_cfg, "IS", cfg.rs_lambda, target, distractor)
            scored = _score_item(env, tokens, target, distractor)
            cell["seconds"] += time.perf_counter() - t0
            items.append(
                {
                    "kind": "rs-sweep",
                    "seed": seed,
                    "method": "IS",
                    "lambda": cfg.rs_lambda,
                    "beam_width": 10,
                    "target": target,
                    "distractor": distractor,
                    "objective": objective,
                    **scored,
                }
            )
            cell["cider"].append(scored["cider"])
            cell["afc"].append(scored["twoafc_credit"])
            cell["n"] += 1
    return _aggregate("rs-sweep", cells, cfg, meta={}, items=items)


def run_discrim_captioning(cfg: ExperimentConfig, log=None) -> SweepReport:
    """S versus IS on easy (nearest-neighbor) and hard (caption-overlap)
    confusion pairs, graded by the held-out 2AFC oracle.

    Each pair is evaluated in both directions, so a speaker that captions
    the two items identically lands at exactly chance on that pair.
    """
    cells: dict[tuple, dict] = {}
    items: list[dict] = []
    identical_total = 0
    for seed in cfg.seeds:
        env = _build_env(cfg, seed, need_features=True)

        def decoder_fn(item_id: str) -> tuple[int, ...]:
            return _speaker_caption(
                env, item_id, cfg.discrim_beam, cfg.max_len, cfg.length_normalize
            )

        sources = env.features.ids
        easy = easy_pairs(env.features, sources, k=1)
        hard = hard_pairs(decoder_fn, env.features, sources, top_k=cfg.hard_top_k)
        identical_total += hard.identical_count
        if log:
            log(
                f"seed {seed}: {len(easy)} easy pairs, {len(hard.pairs)} hard pairs "
                f"({hard.identical_count} with identical speaker captions)"
            )
        for split_name, pair_list in (("easy", easy), ("hard", hard.pairs)):
            for pair in pair_list:
                s_t = decoder_fn(pair.target)
                s_d = decoder_fn(pair.distractor)
                s_identical = s_t == s_d
                for target, distractor in ((pair.target, pair.distractor), (pair.distractor, pair.target)):
                    for method in ("S", "IS"):
                        key = (method, cfg.discrim_lambda if method == "IS" else None, None, split_name)
                        cell = cells.setdefault(key, _new_cell())
                        t0 = time.perf_counter()
                        if method == "S":
                            tokens = decoder_fn(target)
                            objective = None
                        else:
                            params = DecodeParams(
                                lam=cfg.discrim_lambda,
                                beam_width=cfg.discrim_beam,
                                max_len=cfg.max_len,
                                length_normalize=cfg.length_normalize,
                            )
                            best = es_beam_search(
                                env.speaker, target, env.speaker, distractor, params
                            ).best
                            tokens, objective = best.tokens, best.es_score
                        words = env.speaker.vocab.decode(tokens)
                        afc = two_afc(env.eval_lm, tokens, target, distractor)
                        cell["seconds"] += time.perf_counter() - t0
                        items.append(
                            {
                                "kind": "discrim",
                                "seed": seed,
                                "method": method,
                                "lambda": cfg.discrim_lambda if method == "IS" else None,
                                "split": split_name,
                                "target": target,
                                "distractor": distractor,
                                "pair_similarity": pair.similarity,
                                "s_identical": s_identical,
                                "objective": objective,
                                "tokens": list(tokens),
                                "text": " ".join(words),
                                "twoafc_choice": afc.choice,
                                "twoafc_margin": afc.margin,
                                "twoafc_credit": afc.credit_a,
                            }
                        )
                        cell["afc"].append(afc.credit_a)
                        cell["n"] += 1
    meta = {"hard_identical_pairs": identical_total}
    return _aggregate("discrim", cells, cfg, meta=meta, items=items)


def best_lambda(report: SweepReport, method: str) -> float:
    """The lambda whose row maximizes mean score for a method, re-derived
    from the report itself (ties go to the smaller lambda)."""
    rows = [r for r in report.rows if r.method == method and r.cider_mean is not None]
    if not rows:
        raise ValueError(f"no scored rows for method {method!r}")
    return min(rows, key=lambda r: (-r.cider_mean, r.lam)).lam


_REPORT_COLUMNS = (
    "method",
    "lambda",
    "samples",
    "split",
    "n_items",
    "cider_mean",
    "cider_sem",
    "twoafc_mean",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def report_csv(report: SweepReport) -> str:
    lines = [",".join(_REPORT_COLUMNS)]
    for r in report.rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.method,
                    r.lam,
                    r.samples,
                    r.split,
                    r.n_items,
                    r.cider_mean,
                    r.cider_sem,
                    r.twoafc_mean,
                )
            )
        )
    return "\n".join(lines) + "\n"


def write_report(report: SweepReport, out_dir: str | Path) -> list[Path]:
    """Write report.csv, items.jsonl, config.lock, timings.csv and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.csv"
    path.write_text(report_csv(report), encoding="utf-8")
    written.append(path)

    path = out / "items.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for item in report.items:
            fh.write(json.dumps(item, sort_keys=True) + "\n")
    written.append(path)

    path = out / "config.lock"
    path.write_text(report.config.lock_json(), encoding="utf-8")
    written.append(path)

    path = out / "timings.csv"
    with path.open("w", encoding="utf-8") as fh:
        fh.write("row,seconds\n")
        for label, seconds in report.timings:
            fh.write(f"{label},{seconds:.3f}\n")
    written.append(path)

    if report.meta:
        path = out / "meta.json"
        path.write_text(json.dumps(report.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)

    if report.config.figures:
        from . import figures

        written.extend(figures.render(report, out))
    return written
