"""Inter-event gap binning into nominal duration tokens.

Gaps below the emission threshold (half of the shortest bin's lower bound by
default) produce no token. Gaps beyond the last finite bin edge emit the top
bin label repeatedly, floor(gap / top bin lower bound) times, capped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NegativeGap

_MIN = 60.0
_HOUR = 3600.0
_DAY = 86400.0
_MONTH = 30.0 * _DAY  # nominal 30-day month


@dataclass(frozen=True)
class IntervalLadder:
    """Contiguous gap bins: (label, lower bound s, upper bound s); last upper is inf."""

    bins: tuple[tuple[str, float, float], ...]
    emit_threshold: float
    long_gap_cap: int = 4

    def __post_init__(self):
        if not self.bins:
            raise ValueError("ladder needs at least one bin")
        prev_upper = None
        for label, lo, hi in self.bins:
            if not lo < hi:
                raise ValueError(f"bin {label!r} has lower >= upper")
            if prev_upper is not None and lo != prev_upper:
                raise ValueError(f"bin {label!r} is not contiguous with the previous bin")
            prev_upper = hi
        if not math.isinf(self.bins[-1][2]):
            raise ValueError("last bin must be unbounded above")
        if self.long_gap_cap < 1:
            raise ValueError("long_gap_cap must be positive")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _, _ in self.bins)

    @property
    def top_lower_bound(self) -> float:
        return self.bins[-1][1]

    def bin_index(self, gap: float) -> int | None:
        """Index of the bin containing the gap, or None below the threshold."""
        if gap < 0:
            raise NegativeGap(f"negative gap {gap!r}")
        if gap < self.emit_threshold:
            return None
        for i, (_, lo, hi) in enumerate(self.bins):
            if lo <= gap < hi:
                return i
        # Below the first bin's lower bound but at or above the threshold:
        # round up into the first bin.
        return 0


def default_ladder(long_gap_cap: int = 4) -> IntervalLadder:
    """The 19-range ladder from 5 minutes up to an open-ended 6-month bin."""
    edges = [
        ("5m-15m", 5 * _MIN, 15 * _MIN),
        ("15m-45m", 15 * _MIN, 45 * _MIN),
        ("45m-1h15m", 45 * _MIN, 75 * _MIN),
        ("1h15m-2h", 75 * _MIN, 2 * _HOUR),
        ("2h-3h", 2 * _HOUR, 3 * _HOUR),
        ("3h-5h", 3 * _HOUR, 5 * _HOUR),
        ("5h-8h", 5 * _HOUR, 8 * _HOUR),
        ("8h-12h", 8 * _HOUR, 12 * _HOUR),
        ("12h-18h", 12 * _HOUR, 18 * _HOUR),
        ("18h-1d", 18 * _HOUR, _DAY),
        ("1d-2d", _DAY, 2 * _DAY),
        ("2d-4d", 2 * _DAY, 4 * _DAY),
        ("4d-7d", 4 * _DAY, 7 * _DAY),
        ("7d-12d", 7 * _DAY, 12 * _DAY),
        ("12d-20d", 12 * _DAY, 20 * _DAY),
        ("20d-30d", 20 * _DAY, 30 * _DAY),
        ("30d-2mt", 30 * _DAY, 2 * _MONTH),
        ("2mt-6mt", 2 * _MONTH, 6 * _MONTH),
        ("=6mt", 6 * _MONTH, math.inf),
    ]
    return IntervalLadder(
        bins=tuple(edges),
        emit_threshold=edges[0][1] / 2.0,
        long_gap_cap=long_gap_cap,
    )


def interval_tokens(gap: float, ladder: IntervalLadder) -> list[str]:
    """Zero or more interval token labels for an inter-event gap in seconds."""
    idx = ladder.bin_index(gap)
    if idx is None:
        return []
    label, lo, hi = ladder.bins[idx]
    if math.isinf(hi):
        reps = min(int(gap // ladder.top_lower_bound), ladder.long_gap_cap)
        return [label] * max(reps, 1)
    return [label]
