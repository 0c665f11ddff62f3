"""Command-line interface.

    introspeak train     fit an n-gram model on a corpus file
    introspeak generate  decode a plain likelihood caption
    introspeak justify   decode an emitter-suppressor caption for a pair
    introspeak pair      build easy/hard confusion pairs from features
    introspeak sweep     run the lambda sweep experiment
    introspeak rs-sweep  run the sample-budget sweep
    introspeak discrim   run the discriminative captioning benchmark
    introspeak eval      score a JSONL of candidates against references
    introspeak synth     generate a synthetic world + corpus on disk
    introspeak serve     answer model queries over stdio or TCP
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .corpus import DEFAULT_MAX_RECORD_LEN, load_corpus
from .decode import DecodeParams, beam_search, es_beam_search
from .lm import DEFAULT_ALPHA, DEFAULT_ORDER, load_ngram, save_ngram, train_ngram
from .metrics import cider_d, compute_idf
from .pairing import easy_pairs, hard_pairs, load_features, save_features
from .synth import (
    attribute_features,
    gen_corpus,
    gen_justification_refs,
    gen_world,
    save_world,
)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="fit an n-gram model on a corpus TSV")
    p.add_argument("corpus", help="tab-separated context<TAB>caption file")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--max-record-len", type=int, default=DEFAULT_MAX_RECORD_LEN)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--vocab-out", help="also write the vocabulary file")


def _cmd_train(args) -> int:
    corpus = load_corpus(args.corpus, max_record_len=args.max_record_len)
    lm = train_ngram(corpus, order=args.order, alpha=args.alpha)
    save_ngram(lm, args.out)
    if args.vocab_out:
        corpus.vocab.save(args.vocab_out)
    _log(
        f"trained order-{args.order} model on {len(corpus)} records, "
        f"{len(lm.contexts)} contexts, vocab size {corpus.vocab.size} -> {args.out}"
    )
    return 0


def _decode_args(p, with_pair: bool) -> None:
    p.add_argument("--model", required=True)
    if with_pair:
        p.add_argument("--target", required=True)
        p.add_argument("--distractor", required=True)
        p.add_argument("--lam", type=float, default=0.5, help="emitter weight in [0, 1]")
        p.add_argument("--suppressor-model", help="separate model for the distractor side")
    else:
        p.add_argument("--context", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--length-normalize", action="store_true")
    p.add_argument("--top", type=int, default=1, help="how many hypotheses to print")


def _print_hypotheses(result, vocab, top: int) -> None:
    for hyp in result.hypotheses[:top]:
        text = " ".join(vocab.decode(hyp.tokens))
        print(f"{hyp.es_score:.6f}\t{text}")


def _cmd_generate(args) -> int:
    lm = load_ngram(args.model)
    params = DecodeParams(
        lam=1.0,
        beam_width=args.beam,
        max_len=args.max_len,
        length_normalize=args.length_normalize,
    )
    result = beam_search(lm, args.context, params)
    _print_hypotheses(result, lm.vocab, args.top)
    return 0


def _cmd_justify(args) -> int:
    emitter = load_ngram(args.model)
    suppressor = load_ngram(args.suppressor_model) if args.suppressor_model else emitter
    params = DecodeParams(
        lam=args.lam,
        beam_width=args.beam,
        max_len=args.max_len,
        length_normalize=args.length_normalize,
    )
    result = es_beam_search(emitter, args.target, suppressor, args.distractor, params)
    _print_hypotheses(result, emitter.vocab, args.top)
    return 0


def _add_pair(sub) -> None:
    p = sub.add_parser("pair", help="build confusion pairs from a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--mode", choices=("easy", "hard"), default="easy")
    p.add_argument("--sources", help="comma-separated item ids (default: all)")
    p.add_argument("--k", type=int, default=1, help="neighbors per source (easy mode)")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--model", help="model for captions (hard mode)")
    p.add_argument("--top-k", type=int, default=10, help="pairs to keep (hard mode)")
    p.add_argument("--beam", type=int, default=2)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--out", help="CSV to write (default: stdout)")


def _cmd_pair(args) -> int:
    features = load_features(args.features)
    sources = args.sources.split(",") if args.sources else list(features.ids)
    if args.mode == "easy":
        pairs = easy_pairs(features, sources, k=args.k, metric=args.metric)
        identical = None
    else:
        if not args.model:
            _log("hard mode needs --model to caption the items")
            return 2
        lm = load_ngram(args.model)
        params = DecodeParams(lam=1.0, beam_width=args.beam, max_len=args.max_len)

        def decoder_fn(item_id: str):
            return beam_search(lm, item_id, params).best.tokens

        pairs, identical = hard_pairs(
            decoder_fn, features, sources, top_k=args.top_k, metric=args.metric
        )
    lines = ["target,distractor,similarity,kind"]
    lines += [f"{p.target},{p.distractor},{p.similarity:.10g},{p.kind}" for p in pairs]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if identical is not None:
        _log(f"{identical} of {len(pairs)} pairs have identical captions")
    return 0


def _add_experiment(sub, name: str, help_text: str) -> None:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--out-dir", help="override the output directory")
    p.add_argument("--seeds", help="override seeds, comma-separated")
    p.add_argument("--methods", help="override methods, comma-separated")
    p.add_argument("--lambda-grid", help="override the lambda grid, comma-separated")
    p.add_argument("--no-figures", action="store_true")


def _experiment_config(args) -> harness.ExperimentConfig:
    cfg = (
        harness.ExperimentConfig.from_toml(args.config)
        if args.config
        else harness.ExperimentConfig()
    )
    changes = {}
    if args.out_dir:
        changes["out_dir"] = args.out_dir
    if args.seeds:
        changes["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.methods:
        changes["methods"] = tuple(args.methods.split(","))
    if args.lambda_grid:
        changes["lambda_grid"] = tuple(float(x) for x in args.lambda_grid.split(","))
    if args.no_figures:
        changes["figures"] = False
    return cfg.replaced(**changes) if changes else cfg


def _finish_experiment(report, cfg) -> int:
    for row in report.rows:
        bits = [f"{row.label():<40}", f"n={row.n_items:<5}"]
        if row.cider_mean is not None:
            bits.append(f"cider={row.cider_mean:.3f}±{row.cider_sem:.3f}")
        bits.append(f"2afc={row.twoafc_mean:.3f}")
        print("  ".join(bits))
    if report.kind == "sweep":
        for method in sorted({r.method for r in report.rows if r.cider_mean is not None}):
            print(f"best lambda for {method}: {harness.best_lambda(report, method):g}")
    if report.meta:
        print(f"meta: {json.dumps(report.meta, sort_keys=True)}")
    if cfg.out_dir:
        written = harness.write_report(report, cfg.out_dir)
        _log("wrote " + ", ".join(str(p) for p in written))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    return _finish_experiment(harness.run_sweep(cfg, log=_log), cfg)


def _cmd_rs_sweep(args) -> int:
    cfg = _experiment_config(args)
    return _finish_experiment(harness.run_rs_samplesweep(cfg, log=_log), cfg)


def _cmd_discrim(args) -> int:
    cfg = _experiment_config(args)
    return _finish_experiment(harness.run_discrim_captioning(cfg, log=_log), cfg)


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="score candidate captions against references")
    p.add_argument("--items", required=True, help="JSONL: {id, candidate, references}")
    p.add_argument("--out", help="CSV to write (default: stdout)")


def _cmd_eval(args) -> int:
    rows = []
    with open(args.items, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                rows.append(
                    (
                        str(obj["id"]),
                        [str(t) for t in obj["candidate"]],
                        [[str(t) for t in ref] for ref in obj["references"]],
                    )
                )
            except (KeyError, TypeError) as exc:
                _log(f"{args.items}:{lineno}: bad item ({exc})")
                return 2
    if not rows:
        _log(f"{args.items}: no items")
        return 2
    idf = compute_idf([refs for _, _, refs in rows])
    lines = ["id,cider,cider_1,cider_2,cider_3,cider_4"]
    totals = []
    for item_id, candidate, refs in rows:
        score = cider_d(candidate, refs, idf)
        totals.append(score.total)
        per = ",".join(format(x, ".10g") for x in score.per_n)
        lines.append(f"{item_id},{score.total:.10g},{per}")
    lines.append(f"MEAN,{format(float(np.mean(totals)), '.10g')},,,,")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _add_synth(sub) -> None:
    p = sub.add_parser("synth", help="generate a synthetic world and corpus")
    p.add_argument("--contexts", type=int, default=4)
    p.add_argument("--shared", type=int, default=2)
    p.add_argument("--distinct", type=int, default=2)
    p.add_argument("--captions", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)


def _cmd_synth(args) -> int:
    world = gen_world(args.contexts, args.shared, args.distinct, seed=args.seed)
    corpus = gen_corpus(world, args.captions, seed=args.seed + 1)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_world(world, out / "world.json")
    with (out / "corpus.tsv").open("w", encoding="utf-8") as fh:
        for rec in corpus.records:
            fh.write(f"{rec.context}\t{' '.join(corpus.vocab.decode(rec.tokens))}\n")
    save_features(attribute_features(world, seed=args.seed), out / "features.tsv")
    with (out / "refs.jsonl").open("w", encoding="utf-8") as fh:
        contexts = world.contexts
        for a in contexts:
            for b in contexts:
                if a == b:
                    continue
                just = gen_justification_refs(world, (a, b))
                fh.write(
                    json.dumps(
                        {
                            "target": a,
                            "distractor": b,
                            "references": [list(r) for r in just.references],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    _log(f"wrote world.json, corpus.tsv, features.tsv, refs.jsonl under {out}")
    return 0


def _add_serve(sub) -> None:
    p = sub.add_parser("serve", help="answer model queries over stdio or TCP")
    p.add_argument("--model", required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true")
    mode.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")


def _cmd_serve(args) -> int:
    from . import protocol

    lm = load_ngram(args.model)
    if args.stdio:
        protocol.serve(lm, sys.stdin.buffer, sys.stdout.buffer)
    else:
        protocol.serve_tcp(lm, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="introspeak",
        description="Context-aware caption decoding and its experiment harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    p = sub.add_parser("generate", help="plain likelihood decode for one context")
    _decode_args(p, with_pair=False)
    p = sub.add_parser("justify", help="emitter-suppressor decode for a pair")
    _decode_args(p, with_pair=True)
    _add_pair(sub)
    _add_experiment(sub, "sweep", "lambda sweep over the configured methods")
    _add_experiment(sub, "rs-sweep", "sample-budget sweep for the rerank baseline")
    _add_experiment(sub, "discrim", "easy/hard discriminative captioning benchmark")
    _add_eval(sub)
    _add_synth(sub)
    _add_serve(sub)
    return parser


_COMMANDS = {
    "train": _cmd_train,
    "generate": _cmd_generate,
    "justify": _cmd_justify,
    "pair": _cmd_pair,
    "sweep": _cmd_sweep,
    "rs-sweep": _cmd_rs_sweep,
    "discrim": _cmd_discrim,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
