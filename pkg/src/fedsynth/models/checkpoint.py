"""Bit-exact binary serialization of trained generators.

Layout (little-endian): magic "FTSG", u16 version, u8 backend tag, u64
vocabulary fingerprint, u32 header length, JSON header (hyperparameters),
then tensors, each as: u16 name length, name bytes, u8 rank, u32 dims,
float32 data. This is the only artifact that crosses the federation
boundary.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np
import torch

from ..errors import (
    BadMagic,
    FingerprintMismatch,
    ShapeMismatch,
    VersionUnsupported,
)
from .base import Generator
from .ngram import NGramGenerator, _pack
from .transformer import TransformerArch, TransformerGenerator, _GPT

_MAGIC = b"FTSG"
_VERSION = 1
_BACKEND_TAGS = {"ngram": 0, "transformer": 1}
_TAG_BACKENDS = {v: k for k, v in _BACKEND_TAGS.items()}


def _write_tensor(out: io.BytesIO, name: str, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f4")
    nb = name.encode("utf-8")
    out.write(struct.pack("<H", len(nb)))
    out.write(nb)
    out.write(struct.pack("<B", data.ndim))
    for dim in data.shape:
        out.write(struct.pack("<I", dim))
    out.write(data.tobytes())


def _read_exact(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise ShapeMismatch("checkpoint truncated mid-record")
    return data


def _read_tensors(buf: io.BytesIO) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    while True:
        head = buf.read(2)
        if not head:
            return tensors
        if len(head) != 2:
            raise ShapeMismatch("checkpoint truncated mid-record")
        (name_len,) = struct.unpack("<H", head)
        name = _read_exact(buf, name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(buf, 1))
        shape = tuple(
            struct.unpack("<I", _read_exact(buf, 4))[0] for _ in range(rank)
        )
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(_read_exact(buf, 4 * count), dtype="<f4")
        tensors[name] = data.reshape(shape)


def serialize(generator: Generator) -> bytes:
    out = io.BytesIO()
    if isinstance(generator, NGramGenerator):
        header = {
            "order": generator.order,
            "alpha": generator.alpha,
            "backoff_weight": generator.backoff_weight,
            "vocab_size": generator.vocab_size,
        }
        tensors: list[tuple[str, np.ndarray]] = [
            ("unigram", generator.unigram.astype(np.float32))
        ]
        for L, table in enumerate(generator.tables, start=1):
            rows = sorted(
                (ctx, tok, cnt)
                for ctx, row in table.items()
                for tok, cnt in row.items()
            )
            ctxs = np.empty((len(rows), L), dtype=np.float32)
            toks = np.empty(len(rows), dtype=np.float32)
            cnts = np.empty(len(rows), dtype=np.float32)
            base = generator.vocab_size + 1
            for r, (packed, tok, cnt) in enumerate(rows):
                for j in range(L - 1, -1, -1):
                    ctxs[r, j] = packed % base - 1
                    packed //= base
                toks[r] = tok
                cnts[r] = cnt
            tensors += [(f"ctx{L}", ctxs), (f"tok{L}", toks), (f"cnt{L}", cnts)]
        tag = _BACKEND_TAGS["ngram"]
    elif isinstance(generator, TransformerGenerator):
        arch = generator.arch
        header = {
            "layers": arch.layers,
            "model_dim": arch.model_dim,
            "heads": arch.heads,
            "context_length": arch.context_length,
            "dropout": arch.dropout,
            "vocab_size": arch.vocab_size,
            "static_prefix_ids": list(generator.static_prefix_ids),
        }
        tensors = [
            (name, p.detach().cpu().numpy())
            for name, p in generator.module.state_dict().items()
        ]
        tag = _BACKEND_TAGS["transformer"]
    else:
        raise TypeError(f"cannot serialize {type(generator).__name__}")
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out.write(_MAGIC)
    out.write(struct.pack("<HBQ", _VERSION, tag, generator.fingerprint))
    out.write(struct.pack("<I", len(head)))
    out.write(head)
    for name, array in tensors:
        _write_tensor(out, name, array)
    return out.getvalue()


def deserialize(data: bytes, expected_fingerprint: int | None = None) -> Generator:
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise BadMagic("not a generator checkpoint")
    version, tag, fingerprint = struct.unpack("<HBQ", _read_exact(buf, 11))
    if version != _VERSION:
        raise VersionUnsupported(f"checkpoint version {version} not supported")
    if tag not in _TAG_BACKENDS:
        raise VersionUnsupported(f"unknown backend tag {tag}")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise FingerprintMismatch(
            f"checkpoint fingerprint {fingerprint:#x} != expected "
            f"{expected_fingerprint:#x}"
        )
    (header_len,) = struct.unpack("<I", _read_exact(buf, 4))
    header = json.loads(_read_exact(buf, header_len).decode("utf-8"))
    tensors = _read_tensors(buf)
    if _TAG_BACKENDS[tag] == "ngram":
        model = NGramGenerator(
            order=int(header["order"]),
            alpha=float(header["alpha"]),
            vocab_size=int(header["vocab_size"]),
            fingerprint=fingerprint,
            backoff_weight=float(header["backoff_weight"]),
        )
        if "unigram" not in tensors:
            raise ShapeMismatch("missing unigram table")
        if tensors["unigram"].shape != (model.vocab_size,):
            raise ShapeMismatch("unigram table has the wrong width")
        model.unigram = tensors["unigram"].astype(np.int64)
        base = model.vocab_size + 1
        for L in range(1, model.order):
            ctxs = tensors.get(f"ctx{L}")
            toks = tensors.get(f"tok{L}")
            cnts = tensors.get(f"cnt{L}")
            if ctxs is None or toks is None or cnts is None:
                raise ShapeMismatch(f"missing order-{L} tables")
            if ctxs.shape != (len(toks), L) or cnts.shape != toks.shape:
                raise ShapeMismatch(f"inconsistent order-{L} table shapes")
            table: dict[int, dict[int, int]] = {}
            for r in range(len(toks)):
                key = _pack([int(v) for v in ctxs[r]], base)
                table.setdefault(key, {})[int(toks[r])] = int(cnts[r])
            model.tables[L - 1] = table
        return model
    arch = TransformerArch(
        vocab_size=int(header["vocab_size"]),
        layers=int(header["layers"]),
        model_dim=int(header["model_dim"]),
        heads=int(header["heads"]),
        context_length=int(header["context_length"]),
        dropout=float(header["dropout"]),
    )
    module = _GPT(arch)
    state = module.state_dict()
    if set(state) != set(tensors):
        raise ShapeMismatch("tensor names do not match the declared architecture")
    for name, tensor in state.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ShapeMismatch(
                f"tensor {name!r} has shape {arr.shape}, expected {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)
    return TransformerGenerator(
        arch,
        fingerprint,
        static_prefix_ids=tuple(int(i) for i in header.get("static_prefix_ids", ())),
        module=module,
    )
