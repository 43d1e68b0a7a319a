"""Server side of the federation protocol.

The server receives serialized generator checkpoints and nothing else: no
function in this module accepts or opens a client corpus file, which is the
data-isolation boundary of the whole design (and is enforced by an audit
test). From the checkpoints it samples a synthetic corpus, optionally
conditioning on static tokens, and trains the global generator on those
samples alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedSequence, TokenNotInVocabulary, TooManyRejections
from .models import Generator, deserialize, sample_timeline, train_local
from .models.training import TrainConfig
from .tokenizer import PHT, validate_pht
from .vocab import Vocabulary, fnv1a_64

_MAX_ATTEMPTS = 5
_REJECTION_BUDGET = 0.2

UNCONDITIONAL = "unconditional"
MATCH_STATIC_HISTOGRAM = "match_static_histogram"
FIXED_PREFIX = "fixed_prefix"


@dataclass(frozen=True)
class Conditioning:
    """How synthetic timelines are prefixed before sampling."""

    mode: str = UNCONDITIONAL
    # attribute -> value -> probability, for MATCH_STATIC_HISTOGRAM
    static_histogram: dict[str, dict[str, float]] = field(default_factory=dict)
    # explicit token ids, for FIXED_PREFIX
    prefix: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in (UNCONDITIONAL, MATCH_STATIC_HISTOGRAM, FIXED_PREFIX):
            raise ValueError(f"unknown conditioning mode {self.mode!r}")
        if self.mode == MATCH_STATIC_HISTOGRAM and not self.static_histogram:
            raise ValueError("match_static_histogram requires a histogram")
        if self.mode == FIXED_PREFIX and not self.prefix:
            raise ValueError("fixed_prefix requires a prefix")


@dataclass(frozen=True)
class ClientSynthesis:
    client_id: str
    checkpoint_digest: str
    sample_count: int
    temperature: float
    seed: int
    rejected: int


@dataclass(frozen=True)
class SynthesisManifest:
    clients: tuple[ClientSynthesis, ...]
    corpus_digest: str

    def render(self) -> str:
        lines = []
        for c in self.clients:
            lines.append(
                f"client {c.client_id} checkpoint={c.checkpoint_digest} "
                f"samples={c.sample_count} temperature={c.temperature} "
                f"seed={c.seed} rejected={c.rejected}"
            )
        lines.append(f"corpus {self.corpus_digest}")
        return "\n".join(lines) + "\n"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sample_seed(master_seed: int, client_id: str, index: int, attempt: int) -> int:
    token = f"{master_seed}:{client_id}:{index}:{attempt}".encode("utf-8")
    return fnv1a_64(token)


def _draw_prefix(
    conditioning: Conditioning,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> list[int]:
    if conditioning.mode == FIXED_PREFIX:
        return list(conditioning.prefix)
    prefix = [vocab.start_id]
    if conditioning.mode == MATCH_STATIC_HISTOGRAM:
        for attr in sorted(conditioning.static_histogram):
            dist = conditioning.static_histogram[attr]
            values = sorted(dist)
            probs = np.asarray([dist[v] for v in values], dtype=np.float64)
            pick = values[int(rng.choice(len(values), p=probs / probs.sum()))]
            prefix.append(vocab.id_of(f"{attr}={pick}"))
    return prefix


def synthesize_from_client(
    client_id: str,
    checkpoint: bytes,
    vocab: Vocabulary,
    samples: int,
    temperature: float,
    conditioning: Conditioning,
    master_seed: int,
    max_new_tokens: int = 512,
) -> tuple[list[PHT], ClientSynthesis]:
    """Sample one client's share of the synthetic corpus.

    Each sample has a derived seed, so results do not depend on execution
    order. Samples violating the structural invariants are resampled up to
    five times, then counted as rejected; more than 20% rejected aborts.
    """
    generator = deserialize(checkpoint, expected_fingerprint=vocab.fingerprint())
    out: list[PHT] = []
    rejected = 0
    for n in range(samples):
        accepted = None
        for attempt in range(_MAX_ATTEMPTS):
            seed = _sample_seed(master_seed, client_id, n, attempt)
            prefix_rng = np.random.default_rng(seed)
            prefix = _draw_prefix(conditioning, vocab, prefix_rng)
            pht = sample_timeline(
                generator,
                prefix,
                temperature,
                {vocab.end_id},
                max_new_tokens,
                seed=seed,
                patient_id=f"{client_id}-s{n}",
            )
            try:
                validate_pht(pht, vocab)
            except (MalformedSequence, TokenNotInVocabulary):
                continue
            accepted = pht
            break
        if accepted is None:
            rejected += 1
            if rejected > _REJECTION_BUDGET * samples:
                raise TooManyRejections(
                    f"client {client_id}: more than "
                    f"{_REJECTION_BUDGET:.0%} of {samples} samples rejected"
                )
        else:
            out.append(accepted)
    record = ClientSynthesis(
        client_id=client_id,
        checkpoint_digest=sha256_hex(checkpoint),
        sample_count=len(out),
        temperature=temperature,
        seed=master_seed,
        rejected=rejected,
    )
    return out, record


def synthesize_corpus(
    checkpoints: dict[str, bytes],
    vocab: Vocabulary,
    samples_per_client: dict[str, int],
    temperature: float,
    conditioning: Conditioning,
    master_seed: int,
    max_new_tokens: int = 512,
) -> tuple[list[PHT], tuple[ClientSynthesis, ...]]:
    """Union of per-client synthetic shares, in client-id order."""
    corpus: list[PHT] = []
    records: list[ClientSynthesis] = []
    for client_id in sorted(checkpoints):
        share, record = synthesize_from_client(
            client_id,
            checkpoints[client_id],
            vocab,
            samples_per_client[client_id],
            temperature,
            conditioning,
            master_seed,
            max_new_tokens,
        )
        corpus.extend(share)
        records.append(record)
    return corpus, tuple(records)


def train_global(
    pseudo_corpus: list[PHT],
    config: TrainConfig,
    vocab: Vocabulary,
) -> bytes:
    """Train the global generator on synthetic timelines only."""
    from .models import serialize

    generator: Generator = train_local(pseudo_corpus, config, vocab)
    return serialize(generator)
