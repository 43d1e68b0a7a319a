"""Training entry point shared by both backends.

The n-gram fit is closed form (count and normalize). The transformer is
trained with AdamW and a cosine learning-rate schedule; the returned
checkpoint is the one with the lowest validation NLL among the final five
periodic evaluations.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..errors import EmptyCorpus, InvalidProcess, VocabularyMismatch
from ..tokenizer import PHT
from ..vocab import TokenClass, Vocabulary
from .base import Generator
from .ngram import NGramGenerator, train_ngram
from .transformer import TransformerArch, TransformerGenerator, _GPT


@dataclass(frozen=True)
class TrainConfig:
    backend: str = "ngram"  # "ngram" | "transformer"
    # n-gram
    order: int = 6
    alpha: float = 0.1
    backoff_weight: float = 0.4
    # transformer
    epochs: int = 5
    batch_size: int = 32
    context_length: int = 256
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    dropout: float = 0.1
    lr_peak: float = 6e-4
    lr_floor: float = 1e-5
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.95)
    validation_fraction: float = 0.1
    eval_every: int = 50
    keep_last_evals: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("ngram", "transformer"):
            raise InvalidProcess(f"unknown backend {self.backend!r}")
        if not (self.lr_peak >= self.lr_floor > 0):
            raise InvalidProcess("require lr_peak >= lr_floor > 0")
        if self.context_length < 2:
            raise InvalidProcess("context_length must be >= 2")


def _as_ids(corpus: Sequence[PHT | Sequence[int]]) -> list[tuple[int, ...]]:
    out = []
    for item in corpus:
        out.append(tuple(item.token_ids) if isinstance(item, PHT) else tuple(item))
    return out


def train_local(
    corpus: Sequence[PHT | Sequence[int]],
    config: TrainConfig,
    vocab: Vocabulary,
    corpus_fingerprint: int | None = None,
) -> Generator:
    """Fit one generator on one site's corpus. Deterministic given the seed."""
    sequences = _as_ids(corpus)
    if not sequences:
        raise EmptyCorpus("training corpus is empty")
    if corpus_fingerprint is not None and corpus_fingerprint != vocab.fingerprint():
        raise VocabularyMismatch(
            f"corpus fingerprint {corpus_fingerprint:#x} does not match "
            f"vocabulary {vocab.fingerprint():#x}"
        )
    for ids in sequences:
        if any(i < 0 or i >= len(vocab) for i in ids):
            raise VocabularyMismatch("token id outside the vocabulary")
    if config.backend == "ngram":
        return train_ngram(
            sequences,
            order=config.order,
            alpha=config.alpha,
            vocab_size=len(vocab),
            fingerprint=vocab.fingerprint(),
            backoff_weight=config.backoff_weight,
        )
    return _train_transformer(sequences, config, vocab)


def _batches(sequences, batch_size, context_length, rng):
    order = rng.permutation(len(sequences))
    for lo in range(0, len(order), batch_size):
        chunk = [sequences[i] for i in order[lo : lo + batch_size]]
        width = min(max(len(s) for s in chunk), context_length)
        ids = torch.full((len(chunk), width), 0, dtype=torch.long)
        mask = torch.zeros((len(chunk), width), dtype=torch.bool)
        for r, s in enumerate(chunk):
            if len(s) > width:
                start = int(rng.integers(0, len(s) - width + 1))
                s = s[start : start + width]
            ids[r, : len(s)] = torch.tensor(s, dtype=torch.long)
            mask[r, : len(s)] = True
        yield ids, mask


def _batch_nll(module, ids, mask):
    logits = module(ids)
    logp = torch.log_softmax(logits[:, :-1].double(), dim=-1)
    target = ids[:, 1:]
    valid = mask[:, 1:] & mask[:, :-1]
    tok_logp = logp.gather(2, target[:, :, None]).squeeze(2)
    return -(tok_logp * valid).sum() / valid.sum().clamp(min=1)


def _train_transformer(
    sequences: list[tuple[int, ...]], config: TrainConfig, vocab: Vocabulary
) -> TransformerGenerator:
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    arch = TransformerArch(
        vocab_size=len(vocab),
        layers=config.layers,
        model_dim=config.model_dim,
        heads=config.heads,
        context_length=config.context_length,
        dropout=config.dropout,
    )
    module = _GPT(arch)
    split = rng.permutation(len(sequences))
    n_val = max(1, int(len(sequences) * config.validation_fraction)) if len(sequences) > 1 else 0
    val = [sequences[i] for i in split[:n_val]]
    train = [sequences[i] for i in split[n_val:]] or list(sequences)

    decay, no_decay = [], []
    for name, p in module.named_parameters():
        (no_decay if p.dim() < 2 else decay).append(p)
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.lr_peak,
        betas=config.betas,
    )
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total_steps = max(1, config.epochs * steps_per_epoch)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: (
            config.lr_floor
            + 0.5
            * (config.lr_peak - config.lr_floor)
            * (1 + math.cos(math.pi * min(step, total_steps) / total_steps))
        )
        / config.lr_peak,
    )

    def validate() -> float:
        module.eval()
        with torch.no_grad():
            losses, weights = [], []
            for ids, mask in _batches(
                val or train, config.batch_size, config.context_length,
                np.random.default_rng(0),
            ):
                losses.append(float(_batch_nll(module, ids, mask)))
                weights.append(int((mask[:, 1:] & mask[:, :-1]).sum()))
        module.train()
        return float(np.average(losses, weights=weights))

    evals: list[tuple[float, dict]] = []
    step = 0
    module.train()
    for _ in range(config.epochs):
        for ids, mask in _batches(train, config.batch_size, config.context_length, rng):
            optimizer.zero_grad()
            loss = _batch_nll(module, ids, mask)
            loss.backward()
            optimizer.step()
            schedule.step()
            step += 1
            if step % config.eval_every == 0 or step == total_steps:
                evals.append((validate(), copy.deepcopy(module.state_dict())))
    if not evals:
        evals.append((validate(), copy.deepcopy(module.state_dict())))
    # Lowest validation NLL among the last few evaluations.
    window = evals[-config.keep_last_evals :]
    best_state = min(window, key=lambda e: e[0])[1]
    module.load_state_dict(best_state)
    module.eval()
    statics = frozenset({vocab.start_id} | set(vocab.ids_of_class(TokenClass.STATIC)))
    return TransformerGenerator(
        arch,
        vocab.fingerprint(),
        static_prefix_ids=tuple(sorted(statics)),
        module=module,
    )
