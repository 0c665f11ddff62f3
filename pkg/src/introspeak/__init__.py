"""Context-aware caption decoding from context-agnostic models.

The package turns a per-context generative captioner into a pragmatic one:
``es_beam_search`` decodes sentences that describe a target while staying
unlikely under a distractor, ``rs_rerank`` is the sample-then-rerank
baseline, and the harness measures both against ground-truth
justifications with consensus-weighted n-gram metrics and a forced-choice
oracle.
"""

from .corpus import (
    Corpus,
    CorpusFormatError,
    CorpusRecord,
    TokenizerConfig,
    Vocabulary,
    build_vocab,
    load_corpus,
    save_corpus,
    split_corpus,
    tokenize,
)
from .decode import (
    BeamHypothesis,
    DecodeParams,
    DecodeResult,
    beam_search,
    es_beam_search,
    es_token_score,
)
from .harness import (
    ExperimentConfig,
    SweepReport,
    SweepRow,
    best_lambda,
    run_discrim_captioning,
    run_rs_samplesweep,
    run_sweep,
    write_report,
)
from .listener import (
    NaiveBayesListener,
    RerankedSample,
    TwoAfcResult,
    introspector_score,
    nb_score,
    rs_rerank,
    train_nb_listener,
    two_afc,
)
from .lm import (
    NGramLM,
    UnknownContextError,
    load_ngram,
    sample_sequence,
    save_ngram,
    sequence_logprob,
    train_ngram,
)
from .metrics import CiderScore, IdfStats, cider_d, compute_idf, overlap_iou
from .pairing import (
    ConfusionPair,
    FeatureTable,
    HardPairResult,
    easy_pairs,
    hard_pairs,
    load_features,
    save_features,
)
from .protocol import ExternalLM, ProtocolError, serve, serve_tcp
from .synth import (
    AttributeWorld,
    CaptionGrammar,
    GroundTruthJustification,
    attribute_features,
    gen_corpus,
    gen_justification_refs,
    gen_world,
    load_world,
    save_world,
)

__version__ = "0.1.0"
