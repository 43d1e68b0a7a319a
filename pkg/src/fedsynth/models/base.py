"""Backend-agnostic generator interface: next-token distributions,
temperature shaping, autoregressive sampling, and NLL evaluation."""

from __future__ import annotations

import abc
from typing import Iterable, Sequence

import numpy as np

from ..errors import EmptyCorpus, NonPositiveTemperature, TokenNotInVocabulary
from ..tokenizer import PHT


class Generator(abc.ABC):
    """A trained autoregressive model over a fixed token vocabulary.

    Implementations are immutable after training and safe to share across
    threads; sampling is pure given (params, seed).
    """

    backend: str
    vocab_size: int
    fingerprint: int

    @abc.abstractmethod
    def next_token_dist(self, prefix: Sequence[int]) -> np.ndarray:
        """Probability vector over the vocabulary given a non-empty prefix."""

    def sequence_log_probs(self, token_ids: Sequence[int]) -> np.ndarray:
        """log p(x_j | x_<j) for j = 2..L. Backends may batch this."""
        out = np.empty(len(token_ids) - 1)
        for j in range(1, len(token_ids)):
            dist = self.next_token_dist(token_ids[:j])
            p = dist[token_ids[j]]
            out[j - 1] = np.log(p) if p > 0 else -np.inf
        return out

    def nll(self, corpus: Iterable[PHT | Sequence[int]]) -> float:
        """Mean negative log-likelihood in nats per predicted token."""
        total = 0.0
        count = 0
        for item in corpus:
            ids = item.token_ids if isinstance(item, PHT) else tuple(item)
            self._check_ids(ids)
            if len(ids) < 2:
                continue
            total -= float(self.sequence_log_probs(ids).sum())
            count += len(ids) - 1
        if count == 0:
            raise EmptyCorpus("no next-token events to score")
        return total / count

    def _check_ids(self, ids: Sequence[int]) -> None:
        if any(i < 0 or i >= self.vocab_size for i in ids):
            raise TokenNotInVocabulary("token id out of vocabulary range")


def apply_temperature(dist: np.ndarray, temperature: float) -> np.ndarray:
    """Raise each probability to 1/T and renormalize.

    Equivalent to softmax(logits / T); computed against the max log
    probability so small temperatures stay finite. Zero entries stay zero.
    """
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    dist = np.asarray(dist, dtype=np.float64)
    if temperature == 1.0:
        return dist / dist.sum()
    out = np.zeros_like(dist)
    support = dist > 0
    logs = np.log(dist[support])
    logs = (logs - logs.max()) / temperature
    w = np.exp(logs)
    out[support] = w / w.sum()
    return out


def sample_timeline(
    generator: Generator,
    prefix: Sequence[int],
    temperature: float,
    stop_ids: frozenset[int] | set[int],
    max_new_tokens: int,
    seed: int,
    patient_id: str = "sample",
) -> PHT:
    """Extend a prefix autoregressively until a stop token (inclusive) or
    the new-token budget. Deterministic given the seed."""
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    if not prefix:
        raise ValueError("prefix must be non-empty")
    rng = np.random.default_rng(seed)
    ids = list(prefix)
    complete = False
    for _ in range(max_new_tokens):
        dist = apply_temperature(generator.next_token_dist(ids), temperature)
        cdf = np.cumsum(dist)
        tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        tok = min(tok, len(dist) - 1)
        ids.append(tok)
        if tok in stop_ids:
            complete = True
            break
    return PHT(patient_id=patient_id, token_ids=tuple(ids), complete=complete)
