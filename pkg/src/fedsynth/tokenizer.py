"""Tokenization of raw timelines into token-id sequences and back.

A timeline becomes: [TIMELINE_START], the static block (alphabetical by
attribute name), each event's token subsequence (interval tokens, event-name
token, payload tokens), and [TIMELINE_END]. Detokenization recovers a
bin-level sketch per event, never the raw values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codes import decompose_code, recompose_code
from .errors import MalformedSequence, TokenNotInVocabulary
from .events import ClinicalEvent, CodePayload, RawTimeline, ScalarPayload, VectorPayload
from .intervals import IntervalLadder, default_ladder, interval_tokens
from .quantiles import QuantileSpec, quantile_token
from .vocab import TokenClass, Vocabulary


@dataclass(frozen=True)
class TokenizationConfig:
    ladder: IntervalLadder = field(default_factory=default_ladder)
    quantile_spec: QuantileSpec = field(default_factory=QuantileSpec)


@dataclass(frozen=True)
class PHT:
    """A patient's tokenized timeline."""

    patient_id: str
    token_ids: tuple[int, ...]
    complete: bool = True


@dataclass(frozen=True)
class EventSketch:
    """Bin-level reconstruction of one event from its tokens.

    Code events carry no event-name token, so name is None and the
    reconstructed code string identifies them instead.
    """

    name: str | None
    interval_labels: tuple[str, ...] = ()
    quantiles: tuple[int, ...] | None = None
    code: str | None = None


def tokenize_event(
    event: ClinicalEvent,
    prev_timestamp: float | None,
    config: TokenizationConfig,
    vocab: Vocabulary,
) -> list[int]:
    """Token-id subsequence for one event: intervals, name, payload."""
    surfaces: list[str] = []
    if prev_timestamp is not None:
        gap = event.timestamp - prev_timestamp
        surfaces += interval_tokens(gap, config.ladder)
    payload = event.payload
    if isinstance(payload, CodePayload):
        # The hierarchical tokens themselves identify a code event; no
        # event-name token is emitted for it.
        surfaces += decompose_code(payload.code)
    else:
        surfaces.append(event.name)
        if isinstance(payload, ScalarPayload):
            q = quantile_token(payload.value, payload.variable, config.quantile_spec)
            surfaces.append(f"QNT_{q}")
        elif isinstance(payload, VectorPayload):
            for value, variable in zip(payload.values, payload.variables):
                q = quantile_token(value, variable, config.quantile_spec)
                surfaces.append(f"QNT_{q}")
    return [vocab.id_of(s) for s in surfaces]


def tokenize_timeline(
    timeline: RawTimeline, config: TokenizationConfig, vocab: Vocabulary
) -> PHT:
    ids = [vocab.start_id]
    for attr in sorted(timeline.static_attributes):
        ids.append(vocab.id_of(f"{attr}={timeline.static_attributes[attr]}"))
    prev_t: float | None = None
    for event in timeline.events:
        ids += tokenize_event(event, prev_t, config, vocab)
        prev_t = event.timestamp
    ids.append(vocab.end_id)
    return PHT(patient_id=timeline.patient_id, token_ids=tuple(ids), complete=True)


def validate_pht(pht: PHT, vocab: Vocabulary) -> None:
    """Raise MalformedSequence if the structural invariants do not hold."""
    ids = pht.token_ids
    if not ids or ids[0] != vocab.start_id:
        raise MalformedSequence("sequence must begin with TIMELINE_START")
    if any(i >= len(vocab) or i < 0 for i in ids):
        raise TokenNotInVocabulary("token id out of vocabulary range")
    end_positions = [j for j, i in enumerate(ids) if i == vocab.end_id]
    if pht.complete:
        if len(end_positions) != 1 or end_positions[0] != len(ids) - 1:
            raise MalformedSequence("complete sequence must end with a single TIMELINE_END")
    elif end_positions:
        raise MalformedSequence("incomplete sequence must not contain TIMELINE_END")
    if ids.count(vocab.start_id) != 1:
        raise MalformedSequence("TIMELINE_START must appear exactly once")
    # Static tokens only in the contiguous block right after TIMELINE_START.
    j = 1
    while j < len(ids) and vocab.token_class(ids[j]) is TokenClass.STATIC:
        j += 1
    for k in range(j, len(ids)):
        if vocab.token_class(ids[k]) is TokenClass.STATIC:
            raise MalformedSequence("static token outside the leading static block")


def static_block(token_ids: tuple[int, ...] | list[int], vocab: Vocabulary) -> list[int]:
    """The leading [START, static...] block of a sequence starting at START."""
    if not token_ids or token_ids[0] != vocab.start_id:
        return []
    block = [token_ids[0]]
    for i in token_ids[1:]:
        if vocab.token_class(i) is TokenClass.STATIC:
            block.append(i)
        else:
            break
    return block


def detokenize(pht: PHT, vocab: Vocabulary) -> list[EventSketch]:
    """Parse a PHT back into per-event sketches.

    Raises MalformedSequence when token classes appear in an impossible
    order (payload token with no preceding event-name token, static token
    outside the leading block, missing structural frame).
    """
    validate_pht(pht, vocab)
    ids = list(pht.token_ids)
    j = len(static_block(ids, vocab))
    end = len(ids) - 1 if pht.complete else len(ids)
    sketches: list[EventSketch] = []
    while j < end:
        intervals: list[str] = []
        while j < end and vocab.token_class(ids[j]) is TokenClass.INTERVAL:
            intervals.append(vocab.surface(ids[j]))
            j += 1
        if j >= end:
            raise MalformedSequence("interval tokens with no following event")
        head = vocab.token_class(ids[j])
        if head is TokenClass.HIERARCHICAL:
            # Code event: a run of hierarchical tokens, no name token.
            # Adjacent code events with a suppressed interval between them
            # are not separable and parse as one code.
            code_parts: list[str] = []
            while j < end and vocab.token_class(ids[j]) is TokenClass.HIERARCHICAL:
                code_parts.append(vocab.surface(ids[j]))
                j += 1
            sketches.append(
                EventSketch(
                    name=None,
                    interval_labels=tuple(intervals),
                    code=recompose_code(code_parts),
                )
            )
            continue
        if head is not TokenClass.EVENT_NAME:
            raise MalformedSequence(
                f"expected an event-name or code token, got {vocab.surface(ids[j])!r}"
            )
        name = vocab.surface(ids[j])
        j += 1
        quantiles: list[int] = []
        while j < end and vocab.token_class(ids[j]) is TokenClass.QUANTILE:
            quantiles.append(int(vocab.surface(ids[j]).removeprefix("QNT_")))
            j += 1
        sketches.append(
            EventSketch(
                name=name,
                interval_labels=tuple(intervals),
                quantiles=tuple(quantiles) if quantiles else None,
            )
        )
    return sketches
