"""Smoothed n-gram generator with normalized backoff.

The order-n model interpolates maximum-likelihood counts at each context
length with the next-shorter context's distribution:

    P_L(t | c) = (count(c, t) + beta * P_{L-1}(t | c[1:])) / (count(c) + beta)

with beta = backoff_weight * alpha * |V| and the base case

    P_0(t) = (count(t) + alpha) / (N + alpha * |V|).

Every level is a proper distribution, strictly positive whenever alpha > 0,
and the maximum-likelihood counts dominate as contexts become well
observed, so deterministic corpora are learned exactly in the alpha -> 0
limit.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..errors import EmptyCorpus, InvalidProcess
from ..tokenizer import PHT
from .base import Generator

_DEFAULT_BACKOFF = 0.4


def _pack(context: Sequence[int], base: int) -> int:
    """Bijective packing of a token-id tuple into one int key."""
    key = 0
    for t in context:
        key = key * base + (t + 1)
    return key


class NGramGenerator(Generator):
    backend = "ngram"

    def __init__(
        self,
        order: int,
        alpha: float,
        vocab_size: int,
        fingerprint: int,
        backoff_weight: float = _DEFAULT_BACKOFF,
    ):
        if order < 1:
            raise InvalidProcess("n-gram order must be >= 1")
        if alpha < 0:
            raise InvalidProcess("smoothing alpha must be >= 0")
        if vocab_size < 1:
            raise InvalidProcess("vocabulary must be non-empty")
        self.order = order
        self.alpha = float(alpha)
        self.vocab_size = vocab_size
        self.fingerprint = fingerprint
        self.backoff_weight = float(backoff_weight)
        # Per context length L in 1..order-1: packed context -> {token: count}.
        self.tables: list[dict[int, dict[int, int]]] = [
            {} for _ in range(order - 1)
        ]
        self.unigram = np.zeros(vocab_size, dtype=np.int64)
        self._pack_base = vocab_size + 1
        self._dist_cache: dict[int, np.ndarray] = {}

    # --- training ---

    def fit(self, corpus: Iterable[PHT | Sequence[int]]) -> "NGramGenerator":
        n_seqs = 0
        for item in corpus:
            ids = item.token_ids if isinstance(item, PHT) else tuple(item)
            self._check_ids(ids)
            n_seqs += 1
            for j, tok in enumerate(ids):
                self.unigram[tok] += 1
                if j == 0:
                    continue
                for L in range(1, self.order):
                    if j - L < 0:
                        break
                    key = _pack(ids[j - L : j], self._pack_base)
                    row = self.tables[L - 1].setdefault(key, {})
                    row[tok] = row.get(tok, 0) + 1
        if n_seqs == 0:
            raise EmptyCorpus("cannot fit an n-gram on an empty corpus")
        self._dist_cache.clear()
        return self

    # --- inference ---

    def _base_dist(self) -> np.ndarray:
        total = int(self.unigram.sum())
        num = self.unigram + self.alpha
        den = total + self.alpha * self.vocab_size
        if den == 0:
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        return num / den

    def next_token_dist(self, prefix: Sequence[int]) -> np.ndarray:
        if not prefix:
            raise ValueError("prefix must be non-empty")
        self._check_ids(prefix)
        context = tuple(prefix[-(self.order - 1) :]) if self.order > 1 else ()
        cache_key = _pack(context, self._pack_base)
        cached = self._dist_cache.get(cache_key)
        if cached is not None:
            return cached
        beta = self.backoff_weight * self.alpha * self.vocab_size
        dist = self._base_dist()
        for L in range(1, len(context) + 1):
            key = _pack(context[-L:], self._pack_base)
            row = self.tables[L - 1].get(key)
            if row is None:
                continue  # unseen context: keep the shorter-context estimate
            total = sum(row.values())
            interpolated = beta * dist
            for tok, c in row.items():
                interpolated[tok] += c
            dist = interpolated / (total + beta) if total + beta > 0 else dist
        dist = dist / dist.sum()
        dist.setflags(write=False)
        if len(self._dist_cache) < 1_000_000:
            self._dist_cache[cache_key] = dist
        return dist


def train_ngram(
    corpus: Iterable[PHT | Sequence[int]],
    order: int,
    alpha: float,
    vocab_size: int,
    fingerprint: int,
    backoff_weight: float = _DEFAULT_BACKOFF,
) -> NGramGenerator:
    """Closed-form n-gram fit: count and normalize."""
    model = NGramGenerator(order, alpha, vocab_size, fingerprint, backoff_weight)
    return model.fit(corpus)
