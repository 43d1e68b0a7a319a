"""Raw clinical event timelines and the lexicographic event ordering.

Events carry a timestamp in seconds since the cohort epoch, an event name,
and an optional payload (a scalar measurement, a vector of measurements, or
a dotted hierarchical code). Ties in the timestamp are broken by the index
of the event name in the alphabetically sorted event-name dictionary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

from .errors import IoFailure, UnknownEventName


@dataclass(frozen=True)
class ScalarPayload:
    value: float
    variable: str


@dataclass(frozen=True)
class VectorPayload:
    values: tuple[float, ...]
    variables: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.variables):
            raise ValueError("values and variables must have equal length")


@dataclass(frozen=True)
class CodePayload:
    code: str


Payload = ScalarPayload | VectorPayload | CodePayload | None


@dataclass(frozen=True)
class ClinicalEvent:
    """One clinical event: (timestamp, name, optional payload)."""

    timestamp: float
    name: str
    payload: Payload = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError(f"non-finite timestamp for event {self.name!r}")


@dataclass(frozen=True)
class RawTimeline:
    """Ordered event history of one patient plus static attributes."""

    patient_id: str
    static_attributes: dict[str, str] = field(default_factory=dict)
    events: tuple[ClinicalEvent, ...] = ()


def name_dictionary(names: Iterable[str]) -> dict[str, int]:
    """Map each event name to its rank in the alphabetically sorted name set."""
    return {name: i for i, name in enumerate(sorted(set(names)))}


def secondary_key(event: ClinicalEvent, dictionary: dict[str, int]) -> int:
    try:
        return dictionary[event.name]
    except KeyError:
        raise UnknownEventName(f"event name {event.name!r} not in dictionary") from None


def order_events(
    events: Sequence[ClinicalEvent], dictionary: dict[str, int]
) -> list[ClinicalEvent]:
    """Sort events by (timestamp, secondary key), stable for fully equal keys."""
    for e in events:
        if e.name not in dictionary:
            raise UnknownEventName(f"event name {e.name!r} not in dictionary")
    return sorted(events, key=lambda e: (e.timestamp, dictionary[e.name]))


def is_ordered(events: Sequence[ClinicalEvent], dictionary: dict[str, int]) -> bool:
    keys = [(e.timestamp, secondary_key(e, dictionary)) for e in events]
    return all(keys[i] <= keys[i + 1] for i in range(len(keys) - 1))


# --- line-delimited event-stream files ---
#
# One JSON object per line:
#   {"patient_id": str, "kind": "static"|"event", "t": seconds (events only),
#    "name": str, "value": number | [number, ...] | "code" | null}


def _payload_from_value(value) -> Payload:
    if value is None:
        return None
    if isinstance(value, bool):
        raise IoFailure("boolean payloads are not supported")
    if isinstance(value, (int, float)):
        return ScalarPayload(float(value), variable="")
    if isinstance(value, list):
        return VectorPayload(tuple(float(v) for v in value), variables=("",) * len(value))
    if isinstance(value, str):
        return CodePayload(value)
    raise IoFailure(f"unsupported payload value: {value!r}")


def _payload_to_value(payload: Payload):
    if payload is None:
        return None
    if isinstance(payload, ScalarPayload):
        return payload.value
    if isinstance(payload, VectorPayload):
        return list(payload.values)
    if isinstance(payload, CodePayload):
        return payload.code
    raise IoFailure(f"unsupported payload: {payload!r}")


def write_event_stream(timelines: Iterable[RawTimeline], fh: TextIO) -> None:
    for t in timelines:
        for attr in sorted(t.static_attributes):
            rec = {
                "patient_id": t.patient_id,
                "kind": "static",
                "name": attr,
                "value": t.static_attributes[attr],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for e in t.events:
            rec = {
                "patient_id": t.patient_id,
                "kind": "event",
                "t": e.timestamp,
                "name": e.name,
                "value": _payload_to_value(e.payload),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_event_stream(fh: TextIO) -> list[RawTimeline]:
    """Read timelines back, grouping consecutive records by patient id.

    Payload variable ids are reconstructed as "<name>[<dim>]" for vectors and
    "<name>" for scalars, matching the convention used by the cohort sampler.
    """
    statics: dict[str, dict[str, str]] = {}
    events: dict[str, list[ClinicalEvent]] = {}
    order: list[str] = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            pid = rec["patient_id"]
            kind = rec["kind"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise IoFailure(f"bad event-stream record at line {lineno}: {exc}") from exc
        if pid not in statics:
            statics[pid] = {}
            events[pid] = []
            order.append(pid)
        if kind == "static":
            statics[pid][rec["name"]] = rec["value"]
        elif kind == "event":
            payload = _payload_from_value(rec.get("value"))
            name = rec["name"]
            if isinstance(payload, ScalarPayload):
                payload = ScalarPayload(payload.value, variable=name)
            elif isinstance(payload, VectorPayload):
                payload = VectorPayload(
                    payload.values,
                    variables=tuple(f"{name}[{i}]" for i in range(len(payload.values))),
                )
            events[pid].append(ClinicalEvent(float(rec["t"]), name, payload))
        else:
            raise IoFailure(f"unknown record kind {kind!r} at line {lineno}")
    return [
        RawTimeline(pid, static_attributes=statics[pid], events=tuple(events[pid]))
        for pid in order
    ]
