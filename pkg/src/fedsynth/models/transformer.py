"""Small GPT-style transformer generator.

Decoder-only, pre-norm, learned positional embeddings, untied output
projection. Parameters are float32; loss and gradient checks accumulate in
float64. Prefixes longer than the context window are truncated from the
left, but the leading [TIMELINE_START, static...] block is always
re-prepended so time-independent patient attributes stay visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidProcess
from .base import Generator


@dataclass(frozen=True)
class TransformerArch:
    vocab_size: int
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    context_length: int = 256
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise InvalidProcess("model_dim must be divisible by heads")
        if self.context_length < 2:
            raise InvalidProcess("context_length must be >= 2")


class _Block(nn.Module):
    def __init__(self, arch: TransformerArch):
        super().__init__()
        d = arch.model_dim
        self.ln1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(
            d, arch.heads, dropout=arch.dropout, batch_first=True
        )
        self.ln2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(
            nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d), nn.Dropout(arch.dropout)
        )

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, attn_mask=causal_mask, need_weights=False)
        x = x + a
        return x + self.mlp(self.ln2(x))


class _GPT(nn.Module):
    def __init__(self, arch: TransformerArch):
        super().__init__()
        self.arch = arch
        d = arch.model_dim
        self.tok_emb = nn.Embedding(arch.vocab_size, d)
        self.pos_emb = nn.Embedding(arch.context_length, d)
        self.drop = nn.Dropout(arch.dropout)
        self.blocks = nn.ModuleList(_Block(arch) for _ in range(arch.layers))
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Linear(d, arch.vocab_size, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        _, T = ids.shape
        pos = torch.arange(T, device=ids.device)
        x = self.drop(self.tok_emb(ids) + self.pos_emb(pos))
        mask = torch.triu(
            torch.full((T, T), float("-inf"), device=ids.device), diagonal=1
        )
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.ln_f(x))


class TransformerGenerator(Generator):
    backend = "transformer"

    def __init__(
        self,
        arch: TransformerArch,
        fingerprint: int,
        static_prefix_ids: tuple[int, ...] = (),
        module: _GPT | None = None,
    ):
        self.arch = arch
        self.vocab_size = arch.vocab_size
        self.fingerprint = fingerprint
        # Token ids treated as the re-prepended block under left truncation
        # (TIMELINE_START and static tokens).
        self.static_prefix_ids = tuple(static_prefix_ids)
        self.module = module if module is not None else _GPT(arch)
        self.module.eval()

    def _window(self, prefix: Sequence[int]) -> list[int]:
        ctx = self.arch.context_length
        if len(prefix) <= ctx:
            return list(prefix)
        keep = set(self.static_prefix_ids)
        block = []
        for t in prefix:
            if t in keep:
                block.append(t)
            else:
                break
        tail = list(prefix[-(ctx - len(block)) :])
        return block + tail

    @torch.no_grad()
    def next_token_dist(self, prefix: Sequence[int]) -> np.ndarray:
        if not prefix:
            raise ValueError("prefix must be non-empty")
        self._check_ids(prefix)
        ids = torch.tensor([self._window(prefix)], dtype=torch.long)
        logits = self.module(ids)[0, -1].double()
        return F.softmax(logits, dim=-1).numpy()

    @torch.no_grad()
    def sequence_log_probs(self, token_ids: Sequence[int]) -> np.ndarray:
        self._check_ids(token_ids)
        if len(token_ids) <= self.arch.context_length:
            ids = torch.tensor([list(token_ids)], dtype=torch.long)
            logits = self.module(ids)[0].double()
            logp = F.log_softmax(logits, dim=-1)
            targets = torch.tensor(list(token_ids[1:]), dtype=torch.long)
            return logp[:-1].gather(1, targets[:, None]).squeeze(1).numpy()
        return super().sequence_log_probs(token_ids)
