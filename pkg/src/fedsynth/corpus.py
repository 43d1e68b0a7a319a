"""Binary tokenized-corpus files (magic "PHT1", little-endian)."""

from __future__ import annotations

import struct
from typing import BinaryIO, Sequence

from .errors import BadMagic, IoFailure, VocabularyMismatch
from .tokenizer import PHT

MAGIC = b"PHT1"


def write_corpus(phts: Sequence[PHT], fingerprint: int, fh: BinaryIO) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<QI", fingerprint, len(phts)))
    for pht in phts:
        fh.write(struct.pack("<I", len(pht.token_ids)))
        fh.write(struct.pack(f"<{len(pht.token_ids)}I", *pht.token_ids))


def read_corpus(fh: BinaryIO, expected_fingerprint: int | None = None) -> tuple[list[PHT], int]:
    """Read a corpus file; patient ids are positional ("p<index>")."""
    if fh.read(4) != MAGIC:
        raise BadMagic("not a PHT1 corpus file")
    head = fh.read(12)
    if len(head) != 12:
        raise IoFailure("truncated corpus header")
    fingerprint, count = struct.unpack("<QI", head)
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise VocabularyMismatch(
            f"corpus fingerprint {fingerprint:#x} != expected {expected_fingerprint:#x}"
        )
    phts = []
    for i in range(count):
        raw = fh.read(4)
        if len(raw) != 4:
            raise IoFailure(f"truncated corpus at patient {i}")
        (n,) = struct.unpack("<I", raw)
        data = fh.read(4 * n)
        if len(data) != 4 * n:
            raise IoFailure(f"truncated token data at patient {i}")
        phts.append(PHT(patient_id=f"p{i}", token_ids=struct.unpack(f"<{n}I", data)))
    return phts, fingerprint
