"""Hierarchical decomposition of dotted categorical codes."""

from __future__ import annotations

from .errors import MalformedCode


def decompose_code(code: str) -> list[str]:
    """Split a dotted code into its prefix token and suffix tokens.

    "E11.65" -> ["E11", "65"]; a code with no dot is a single-level token.
    Joining the pieces with "." reconstructs the original code.
    """
    if not code:
        raise MalformedCode("empty code")
    parts = code.split(".")
    if any(not part for part in parts):
        raise MalformedCode(f"malformed code {code!r}")
    return parts


def recompose_code(parts: list[str]) -> str:
    if not parts or any(not p for p in parts):
        raise MalformedCode(f"cannot recompose {parts!r}")
    return ".".join(parts)
