import math
import random

import pytest

from conftest import oracle_cider_d, oracle_idf
from introspeak.metrics import IdfStats, cider_d, compute_idf, overlap_iou

# The reference sets behind every golden below.
S1 = [["this", "bird", "has", "yellow", "nape"],
      ["this", "is", "a", "bird", "with", "yellow", "nape"]]
S2 = [["this", "bird", "has", "green", "leg"],
      ["this", "bird", "has", "green", "leg", "and", "yellow", "nape"]]
S3 = [["this", "is", "a", "plain", "bird"]]
SETS = [S1, S2, S3]

# Frozen outputs of the independent oracle in conftest.py.
GOLDENS = [
    (["this", "bird", "has", "yellow", "nape"],
     [["this", "bird", "has", "yellow", "nape"]],
     10.0,
     (9.999999999999998, 9.999999999999998, 10.000000000000002, 10.0)),
    (["this", "bird", "has", "green", "nape"],
     [["this", "bird", "has", "yellow", "nape"]],
     1.4845752096906082,
     (3.778002039938994, 1.5226617440564285, 0.6376370547670097, 0.0)),
    (["yellow", "nape"],
     [["this", "is", "a", "bird", "with", "yellow", "nape"]],
     1.0950156455661408,
     (2.9674539213522886, 1.4126086609122745, 0.0, 0.0)),
    (["yellow", "nape", "yellow", "nape", "yellow", "nape"],
     [["this", "bird", "has", "yellow", "nape"]],
     0.7948074534179108,
     (2.684115796359995, 0.4951140173116481, 0.0, 0.0)),
    (["this", "bird", "has", "yellow", "nape"],
     [["this", "bird", "has", "yellow", "nape"],
      ["this", "is", "a", "bird", "with", "yellow", "nape"],
      ["this", "bird", "has", "green", "leg"]],
     3.9541397826961635,
     (4.900449144527134, 4.036897634668517, 3.5458790182556705, 3.3333333333333335)),
]


@pytest.mark.parametrize("candidate,references,total,per_n", GOLDENS)
def test_cider_goldens(candidate, references, total, per_n):
    idf = compute_idf(SETS)
    got = cider_d(candidate, references, idf)
    assert got.total == pytest.approx(total, abs=1e-6)
    for g, want in zip(got.per_n, per_n):
        assert g == pytest.approx(want, abs=1e-6)


def test_idf_counts_sets_not_captions():
    # "yellow" appears in three captions but only two sets.
    idf = compute_idf(SETS)
    assert idf.doc_count == 3
    assert idf.df[("yellow",)] == 2
    assert idf.weight(("yellow",)) == pytest.approx(math.log(3) - math.log(2))
    # A set-internal repeat still counts once per set.
    assert idf.df[("this", "bird", "has")] == 2


def test_idf_unseen_gram_clips_to_one_document():
    idf = compute_idf(SETS)
    assert idf.weight(("wingspan",)) == pytest.approx(math.log(3))


def test_idf_rejects_empty_input():
    with pytest.raises(ValueError):
        compute_idf([])
    with pytest.raises(ValueError):
        compute_idf([[]])


def test_identical_candidate_scores_ten_per_n():
    idf = compute_idf(SETS)
    got = cider_d(S1[0], [S1[0]], idf)
    for x in got.per_n:
        assert x == pytest.approx(10.0, abs=1e-9)


def test_length_penalty_factor():
    # Same n-gram content, sigma=6: a 2-token gap multiplies by e^(-4/72).
    idf = IdfStats(doc_count=2, df={})  # every gram unseen -> weight ln 2
    near = cider_d(["a", "b"], [["a", "b"]], idf)
    far = cider_d(["a", "b"], [["a", "b", "c", "d"]], idf)
    # unigram sim: overlap/(norms) identical content ratio times penalty
    ratio = far.per_n[0] / near.per_n[0]
    expected = math.exp(-4.0 / 72.0) * (2 / math.sqrt(2 * 4))
    assert ratio == pytest.approx(expected, abs=1e-12)


def test_empty_candidate_warns_and_zeroes():
    idf = compute_idf(SETS)
    with pytest.warns(UserWarning):
        got = cider_d([], [S1[0]], idf)
    assert got.total == 0.0
    assert got.per_n == (0.0, 0.0, 0.0, 0.0)


def test_reference_validation():
    idf = compute_idf(SETS)
    with pytest.raises(ValueError):
        cider_d(["a"], [], idf)
    with pytest.raises(ValueError):
        cider_d(["a"], [[]], idf)


def test_fuzz_matches_oracle():
    rng = random.Random(20250817)
    vocab = list("abcdefg")
    for case in range(200):
        n_sets = rng.randint(2, 5)
        sets = [
            [[rng.choice(vocab) for _ in range(rng.randint(1, 8))]
             for _ in range(rng.randint(1, 3))]
            for _ in range(n_sets)
        ]
        cand = [rng.choice(vocab) for _ in range(rng.randint(1, 8))]
        refs = sets[rng.randrange(n_sets)]
        idf = compute_idf(sets)
        n, df = oracle_idf(sets)
        got = cider_d(cand, refs, idf)
        want_total, want_per_n = oracle_cider_d(cand, refs, n, df)
        assert got.total == pytest.approx(want_total, abs=1e-9), f"case {case}"
        for g, w in zip(got.per_n, want_per_n):
            assert g == pytest.approx(w, abs=1e-9), f"case {case}"


def test_overlap_iou():
    assert overlap_iou([], []) == 1.0
    assert overlap_iou([1, 2], []) == 0.0
    assert overlap_iou([1, 2], [2, 3]) == pytest.approx(1 / 3)
    assert overlap_iou([1, 2, 2], [2, 1]) == 1.0  # set semantics
