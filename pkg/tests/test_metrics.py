import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsynth.errors import ConstantTruth, DegenerateReal, SingleClass
from fedsynth.metrics import (
    CONTENT_CLASSES,
    MetricResult,
    accuracy,
    auc,
    brier_and_calibration,
    dimwise_r2,
    r2_regression,
    unigram_r2,
)
from fedsynth.tokenizer import PHT
from fedsynth.vocab import TokenClass, Vocabulary

# Vocabulary: ids 0..3 are event names, then START/END structural.
ENTRIES = [(f"t{i}", TokenClass.EVENT_NAME) for i in range(4)]
ENTRIES += [
    ("TIMELINE_END", TokenClass.STRUCTURAL),
    ("TIMELINE_START", TokenClass.STRUCTURAL),
]
VOCAB = Vocabulary(tokens=tuple(ENTRIES))
START, END = VOCAB.start_id, VOCAB.end_id


def pht(*tokens, pid="p"):
    return PHT(pid, (START, *tokens, END))


def test_unigram_identical_is_exactly_one():
    corpus = [pht(0, 1, 2), pht(2, 2, 1)]
    assert unigram_r2(corpus, list(corpus), VOCAB) == 1.0


def test_unigram_hand_example():
    real = [pht(*( [0] * 5 + [1] * 3 + [2] * 2 ))]
    synth = [pht(*( [0] * 4 + [1] * 4 + [2] * 2 ))]
    value = unigram_r2(real, synth, VOCAB)
    assert value == pytest.approx(1 - 0.02 / (0.046666666666666666), abs=1e-9)
    assert value == pytest.approx(0.5714285714, abs=1e-6)


def test_unigram_ignores_structural_tokens():
    # START/END appear in every timeline but must not enter the frequencies.
    real = [pht(0), pht(0)]
    synth = [pht(0)]
    assert unigram_r2(real, synth, VOCAB) == 1.0


def test_unigram_degenerate_real():
    real = [pht(0, 1)]  # equal frequencies 0.5/0.5
    synth = [pht(0, 0, 0, 1)]
    with pytest.raises(DegenerateReal):
        unigram_r2(real, synth, VOCAB)


def brute_force_unigram(real, synth, truncation=256):
    def freqs(corpus):
        c = Counter()
        for p in corpus:
            for t in p.token_ids[:truncation]:
                if VOCAB.token_class(t) is not TokenClass.STRUCTURAL:
                    c[t] += 1
        total = sum(c.values())
        return {t: n / total for t, n in c.items()}

    fr, fs = freqs(real), freqs(synth)
    union = sorted(set(fr) | set(fs))
    r = [fr.get(t, 0.0) for t in union]
    s = [fs.get(t, 0.0) for t in union]
    mean = sum(r) / len(r)
    num = sum((a - b) ** 2 for a, b in zip(r, s))
    den = sum((a - mean) ** 2 for a in r)
    return 1 - num / den if den else (1.0 if num == 0 else None)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unigram_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    real = [
        pht(*rng.integers(0, 4, size=rng.integers(1, 12)))
        for _ in range(rng.integers(1, 20))
    ]
    synth = [
        pht(*rng.integers(0, 4, size=rng.integers(1, 12)))
        for _ in range(rng.integers(1, 20))
    ]
    oracle = brute_force_unigram(real, synth)
    if oracle is None:
        with pytest.raises(DegenerateReal):
            unigram_r2(real, synth, VOCAB)
    else:
        assert unigram_r2(real, synth, VOCAB) == pytest.approx(oracle, abs=1e-12)


def test_dimwise_identical_is_one():
    corpus = [pht(0, 1), pht(2, 2, 3)]
    value, skipped = dimwise_r2(corpus, list(corpus), VOCAB)
    assert value == 1.0
    assert skipped == 0


def test_dimwise_mean_level_insensitivity():
    real = [pht(0), pht(1)]  # per-patient vectors (1,0) and (0,1)
    synth = [pht(0, 1), pht(1, 0)]  # both (0.5, 0.5)
    value, _ = dimwise_r2(real, synth, VOCAB)
    assert value == 1.0


def test_dimwise_skips_patients_without_tokens():
    empty = PHT("e", (START, END))
    value, skipped = dimwise_r2([pht(0, 1), empty], [pht(0, 1)], VOCAB)
    assert skipped == 1
    assert value == 1.0


def brute_force_dimwise(real, synth):
    union = sorted(
        {
            t
            for p in itertools.chain(real, synth)
            for t in p.token_ids
            if VOCAB.token_class(t) is not TokenClass.STRUCTURAL
        }
    )

    def mean_vec(corpus):
        rows = []
        for p in corpus:
            counts = Counter(
                t for t in p.token_ids
                if VOCAB.token_class(t) is not TokenClass.STRUCTURAL
            )
            total = sum(counts.values())
            if total == 0:
                continue
            rows.append([counts.get(t, 0) / total for t in union])
        return [sum(col) / len(rows) for col in zip(*rows)]

    r, s = mean_vec(real), mean_vec(synth)
    mean = sum(r) / len(r)
    num = sum((a - b) ** 2 for a, b in zip(r, s))
    den = sum((a - mean) ** 2 for a in r)
    return 1 - num / den if den else (1.0 if num == 0 else None)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dimwise_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    real = [
        pht(*rng.integers(0, 4, size=rng.integers(1, 10)))
        for _ in range(rng.integers(1, 15))
    ]
    synth = [
        pht(*rng.integers(0, 4, size=rng.integers(1, 10)))
        for _ in range(rng.integers(1, 15))
    ]
    oracle = brute_force_dimwise(real, synth)
    if oracle is None:
        with pytest.raises(DegenerateReal):
            dimwise_r2(real, synth, VOCAB)
    else:
        value, _ = dimwise_r2(real, synth, VOCAB)
        assert value == pytest.approx(oracle, abs=1e-12)


# --- AUC ---


def test_auc_perfect_and_ties():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]).value == 1.0
    assert auc([0.5] * 6, [1, 1, 1, 0, 0, 0]).value == 0.5


def test_auc_hand_example():
    scores = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2]
    labels = [1, 1, 1, 0, 0, 0]
    result = auc(scores, labels)
    assert result.value == pytest.approx(8 / 9)
    assert result.ci_low <= result.value <= result.ci_high


def test_auc_single_class():
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    scores = rng.choice([0.1, 0.2, 0.3, 0.5, 0.9], size=n)
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    oracle = sum(
        1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg
    ) / (len(pos) * len(neg))
    assert auc(scores, labels, n_boot=10).value == pytest.approx(oracle, abs=0)


# --- Brier, accuracy, regression R² ---


def test_brier_trivial_and_hand_case():
    assert brier_and_calibration([1.0, 0.0], [1, 0])[0] == 0.0
    assert brier_and_calibration([0.5] * 4, [1, 0, 1, 0])[0] == pytest.approx(0.25)
    brier, table = brier_and_calibration([0.8, 0.2, 0.6, 0.9], [1, 0, 0, 1])
    assert brier == pytest.approx(0.1125)
    assert sum(count for _, _, count in table) == 4
    for mean_p, rate, _ in table:
        assert 0 <= mean_p <= 1 and 0 <= rate <= 1


def test_accuracy_and_r2():
    assert accuracy(["a", "b"], ["a", "b"]).value == 1.0
    truths = [1.0, 2.0, 3.0]
    assert r2_regression(truths, truths).value == 1.0
    assert r2_regression([2.0, 2.0, 2.0], truths).value == pytest.approx(0.0)
    with pytest.raises(ConstantTruth):
        r2_regression([1.0, 1.0], [5.0, 5.0])


def test_metric_result_invariant():
    with pytest.raises(ValueError):
        MetricResult("m", value=0.9, ci_low=0.95, ci_high=1.0)


def test_bootstrap_is_seeded():
    scores = list(np.random.default_rng(1).random(40))
    labels = [i % 2 for i in range(40)]
    a = auc(scores, labels, seed=5)
    b = auc(scores, labels, seed=5)
    assert (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)
