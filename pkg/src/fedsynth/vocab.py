"""Token vocabulary: dense ids, class partition, stable fingerprint, file IO."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, TextIO

from .codes import decompose_code
from .errors import IoFailure, TokenNotInVocabulary
from .events import CodePayload, RawTimeline
from .intervals import IntervalLadder


class TokenClass(str, Enum):
    STATIC = "STATIC"
    HIERARCHICAL = "HIERARCHICAL"
    INTERVAL = "INTERVAL"
    QUANTILE = "QUANTILE"
    EVENT_NAME = "EVENT_NAME"
    STRUCTURAL = "STRUCTURAL"


_CLASS_ORDER = {c: i for i, c in enumerate(TokenClass)}

TIMELINE_START = "TIMELINE_START"
TIMELINE_END = "TIMELINE_END"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class Vocabulary:
    """Dense id -> (surface, class) table with reserved structural tokens."""

    tokens: tuple[tuple[str, TokenClass], ...]

    def __post_init__(self):
        surfaces = [s for s, _ in self.tokens]
        if len(set(surfaces)) != len(surfaces):
            raise ValueError("duplicate token surfaces in vocabulary")
        structural = [s for s, c in self.tokens if c is TokenClass.STRUCTURAL]
        if sorted(structural) != sorted([TIMELINE_START, TIMELINE_END]):
            raise ValueError("vocabulary must contain exactly TIMELINE_START and TIMELINE_END")
        object.__setattr__(self, "_id_of", {s: i for i, (s, _) in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, surface: str) -> int:
        try:
            return self._id_of[surface]
        except KeyError:
            raise TokenNotInVocabulary(f"token {surface!r} not in vocabulary") from None

    def __contains__(self, surface: str) -> bool:
        return surface in self._id_of

    def surface(self, token_id: int) -> str:
        return self.tokens[token_id][0]

    def token_class(self, token_id: int) -> TokenClass:
        return self.tokens[token_id][1]

    @property
    def start_id(self) -> int:
        return self.id_of(TIMELINE_START)

    @property
    def end_id(self) -> int:
        return self.id_of(TIMELINE_END)

    def ids_of_class(self, cls: TokenClass) -> list[int]:
        return [i for i, (_, c) in enumerate(self.tokens) if c is cls]

    def fingerprint(self) -> int:
        """Stable 64-bit FNV-1a over the vocabulary file lines in id order."""
        blob = "".join(f"{c.value}\t{s}\n" for s, c in self.tokens)
        return fnv1a_64(blob.encode("utf-8"))


def build_vocabulary(
    cohort: Iterable[RawTimeline],
    ladder: IntervalLadder,
    num_quantiles: int = 10,
) -> Vocabulary:
    """Collect every token surface the cohort can produce, deterministically.

    Ids are assigned by sorting on (class order, surface), so two parties
    scanning the same cohort arrive at identical fingerprints.
    """
    cohort = list(cohort)
    if not cohort:
        raise ValueError("cohort is empty")
    static: set[str] = set()
    names: set[str] = set()
    hier: set[str] = set()
    for t in cohort:
        for attr, value in t.static_attributes.items():
            static.add(f"{attr}={value}")
        for e in t.events:
            if isinstance(e.payload, CodePayload):
                # Code events are represented by their hierarchical tokens
                # alone; their names never appear in sequences.
                hier.update(decompose_code(e.payload.code))
            else:
                names.add(e.name)
    entries: list[tuple[str, TokenClass]] = []
    entries += [(s, TokenClass.STATIC) for s in static]
    entries += [(s, TokenClass.HIERARCHICAL) for s in hier]
    entries += [(label, TokenClass.INTERVAL) for label in ladder.labels]
    entries += [(f"QNT_{q}", TokenClass.QUANTILE) for q in range(num_quantiles)]
    entries += [(n, TokenClass.EVENT_NAME) for n in names]
    entries += [(TIMELINE_START, TokenClass.STRUCTURAL), (TIMELINE_END, TokenClass.STRUCTURAL)]
    entries.sort(key=lambda e: (_CLASS_ORDER[e[1]], e[0]))
    return Vocabulary(tokens=tuple(entries))


def write_vocabulary(vocab: Vocabulary, fh: TextIO) -> None:
    for surface, cls in vocab.tokens:
        fh.write(f"{cls.value}\t{surface}\n")


def read_vocabulary(fh: TextIO) -> Vocabulary:
    entries = []
    for lineno, line in enumerate(fh, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        try:
            cls, surface = line.split("\t", 1)
            entries.append((surface, TokenClass(cls)))
        except ValueError as exc:
            raise IoFailure(f"bad vocabulary line {lineno}: {line!r}") from exc
    return Vocabulary(tokens=tuple(entries))
