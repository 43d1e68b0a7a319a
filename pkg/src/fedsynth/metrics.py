"""Fidelity and downstream-task metrics with bootstrap confidence intervals.

Fidelity compares token-frequency profiles of a real and a synthetic corpus
(corpus-level for the unigram score, mean per-patient vectors for the
dimension-wise score). Task metrics (AUC, accuracy, regression R², Brier)
come with seeded nonparametric bootstrap CIs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConstantTruth, DegenerateReal, EmptyCorpus, SingleClass
from .tokenizer import PHT
from .vocab import TokenClass, Vocabulary

DEFAULT_TRUNCATION = 256

# Default token filter: every non-structural class.
CONTENT_CLASSES = frozenset(
    {
        TokenClass.STATIC,
        TokenClass.HIERARCHICAL,
        TokenClass.INTERVAL,
        TokenClass.QUANTILE,
        TokenClass.EVENT_NAME,
    }
)
CODE_CLASSES = frozenset({TokenClass.HIERARCHICAL})


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    ci_low: float
    ci_high: float
    higher_is_better: bool = True

    def __post_init__(self):
        if not self.ci_low <= self.value <= self.ci_high:
            raise ValueError(
                f"{self.name}: CI [{self.ci_low}, {self.ci_high}] does not "
                f"bracket {self.value}"
            )


def _token_multiset(
    corpus: Sequence[PHT],
    vocab: Vocabulary,
    classes: frozenset[TokenClass],
    truncation: int,
) -> dict[int, int]:
    counts: dict[int, int] = {}
    for pht in corpus:
        for tok in pht.token_ids[:truncation]:
            if vocab.token_class(tok) in classes:
                counts[tok] = counts.get(tok, 0) + 1
    return counts


def _r_squared(real: np.ndarray, synth: np.ndarray) -> float:
    num = float(np.sum((real - synth) ** 2))
    den = float(np.sum((real - real.mean()) ** 2))
    if den == 0.0:
        if num == 0.0:
            return 1.0
        raise DegenerateReal("all real frequencies are equal")
    return 1.0 - num / den


def unigram_r2(
    real: Sequence[PHT],
    synth: Sequence[PHT],
    vocab: Vocabulary,
    classes: frozenset[TokenClass] = CONTENT_CLASSES,
    truncation: int = DEFAULT_TRUNCATION,
) -> float:
    """R² between corpus-level token frequencies over the filtered union."""
    if not real or not synth:
        raise EmptyCorpus("fidelity needs two non-empty corpora")
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    rc = _token_multiset(real, vocab, classes, truncation)
    sc = _token_multiset(synth, vocab, classes, truncation)
    union = sorted(set(rc) | set(sc))
    if not union:
        raise DegenerateReal("no tokens pass the filter")
    rt, st = sum(rc.values()), sum(sc.values())
    f_real = np.array([rc.get(t, 0) / rt if rt else 0.0 for t in union])
    f_synth = np.array([sc.get(t, 0) / st if st else 0.0 for t in union])
    return _r_squared(f_real, f_synth)


def dimwise_r2(
    real: Sequence[PHT],
    synth: Sequence[PHT],
    vocab: Vocabulary,
    classes: frozenset[TokenClass] = CONTENT_CLASSES,
    truncation: int = DEFAULT_TRUNCATION,
) -> tuple[float, int]:
    """R² between mean per-patient normalized frequency vectors.

    Patients with no qualifying tokens are skipped; the count of skipped
    patients (both corpora) is returned alongside the score.
    """
    if not real or not synth:
        raise EmptyCorpus("fidelity needs two non-empty corpora")
    union: set[int] = set()
    per_patient: dict[int, list[dict[int, int]]] = {0: [], 1: []}
    skipped = 0
    for side, corpus in enumerate((real, synth)):
        for pht in corpus:
            counts = _token_multiset([pht], vocab, classes, truncation)
            if not counts:
                skipped += 1
                continue
            union |= set(counts)
            per_patient[side].append(counts)
    if not per_patient[0] or not per_patient[1]:
        raise DegenerateReal("a corpus has no patients with qualifying tokens")
    order = sorted(union)
    index = {t: i for i, t in enumerate(order)}

    def mean_vector(rows: list[dict[int, int]]) -> np.ndarray:
        acc = np.zeros(len(order))
        for counts in rows:
            total = sum(counts.values())
            for t, c in counts.items():
                acc[index[t]] += c / total
        return acc / len(rows)

    return _r_squared(mean_vector(per_patient[0]), mean_vector(per_patient[1])), skipped


# --- task metrics with bootstrap CIs ---


def _percentile_ci(samples: list[float]) -> tuple[float, float]:
    lo, hi = np.percentile(samples, [2.5, 97.5])
    return float(lo), float(hi)


def auc(
    scores: Sequence[float],
    labels: Sequence[int],
    n_boot: int = 1000,
    seed: int = 0,
) -> MetricResult:
    """Mann–Whitney AUC (ties count one half) with a stratified bootstrap CI."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("AUC needs both classes present")

    def statistic(p: np.ndarray, n: np.ndarray) -> float:
        greater = (p[:, None] > n[None, :]).sum()
        ties = (p[:, None] == n[None, :]).sum()
        return float((greater + 0.5 * ties) / (len(p) * len(n)))

    value = statistic(pos, neg)
    rng = np.random.default_rng(seed)
    resamples = []
    for _ in range(n_boot):
        p = pos[rng.integers(0, len(pos), len(pos))]
        n = neg[rng.integers(0, len(neg), len(neg))]
        resamples.append(statistic(p, n))
    lo, hi = _percentile_ci(resamples)
    return MetricResult("auc", value, min(lo, value), max(hi, value))


def _bootstrap_paired(
    statistic: Callable[[np.ndarray, np.ndarray], float],
    a: np.ndarray,
    b: np.ndarray,
    n_boot: int,
    seed: int,
) -> list[float]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_boot):
        idx = rng.integers(0, len(a), len(a))
        out.append(statistic(a[idx], b[idx]))
    return out


def accuracy(
    preds: Sequence[object],
    labels: Sequence[object],
    n_boot: int = 1000,
    seed: int = 0,
) -> MetricResult:
    if len(preds) == 0 or len(preds) != len(labels):
        raise ValueError("preds and labels must be non-empty and aligned")
    hits = np.asarray([p == y for p, y in zip(preds, labels)], dtype=np.float64)
    value = float(hits.mean())
    samples = _bootstrap_paired(lambda h, _: float(h.mean()), hits, hits, n_boot, seed)
    lo, hi = _percentile_ci(samples)
    return MetricResult("accuracy", value, min(lo, value), max(hi, value))


def r2_regression(
    preds: Sequence[float],
    truths: Sequence[float],
    n_boot: int = 1000,
    seed: int = 0,
) -> MetricResult:
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if len(preds) == 0 or len(preds) != len(truths):
        raise ValueError("preds and truths must be non-empty and aligned")
    if np.all(truths == truths[0]):
        raise ConstantTruth("regression R² is undefined for constant truths")

    def statistic(p: np.ndarray, t: np.ndarray) -> float:
        den = float(np.sum((t - t.mean()) ** 2))
        if den == 0:
            return 0.0
        return 1.0 - float(np.sum((t - p) ** 2)) / den

    value = statistic(preds, truths)
    samples = _bootstrap_paired(statistic, preds, truths, n_boot, seed)
    lo, hi = _percentile_ci(samples)
    return MetricResult("r2", value, min(lo, value), max(hi, value))


def brier_and_calibration(
    probs: Sequence[float],
    labels: Sequence[int],
    bins: int = 10,
) -> tuple[float, list[tuple[float, float, int]]]:
    """Brier score plus equal-width reliability bins (mean prob, event
    rate, count); empty bins are omitted."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if np.any((probs < 0) | (probs > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    brier = float(np.mean((probs - labels) ** 2))
    edges = np.linspace(0, 1, bins + 1)
    assignment = np.clip(np.digitize(probs, edges[1:-1], right=False), 0, bins - 1)
    table = []
    for b in range(bins):
        mask = assignment == b
        if not mask.any():
            continue
        table.append(
            (float(probs[mask].mean()), float(labels[mask].mean()), int(mask.sum()))
        )
    return brier, table
