"""Empirical-CDF quantile binning for continuous measurements.

The convention is F(v) = (# training observations <= v) / n, and the bin
index is q = min(floor(F(v) * Q), Q - 1), which places the sample maximum
in the top bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyVariable, NonFiniteValue, UnknownVariable


@dataclass(frozen=True)
class QuantileSpec:
    """Per-variable sorted training samples plus the quantile count Q."""

    samples: dict[str, np.ndarray] = field(default_factory=dict)
    num_quantiles: int = 10

    def variables(self) -> list[str]:
        return sorted(self.samples)

    def ecdf(self, variable: str, value: float) -> float:
        sample = self._sample(variable)
        if not math.isfinite(value):
            raise NonFiniteValue(f"non-finite value {value!r} for {variable!r}")
        return float(np.searchsorted(sample, value, side="right")) / len(sample)

    def bin_midpoint(self, variable: str, q: int) -> float:
        """Midpoint of the training-value interval covered by quantile bin q."""
        sample = self._sample(variable)
        quantiles = self.num_quantiles
        if not 0 <= q < quantiles:
            raise ValueError(f"quantile index {q} out of range 0..{quantiles - 1}")
        lo = float(np.quantile(sample, q / quantiles))
        hi = float(np.quantile(sample, (q + 1) / quantiles))
        return (lo + hi) / 2.0

    def _sample(self, variable: str) -> np.ndarray:
        try:
            return self.samples[variable]
        except KeyError:
            raise UnknownVariable(f"variable {variable!r} not in quantile spec") from None


def fit_quantiles(values_per_variable: dict[str, "list[float]"], num_quantiles: int = 10) -> QuantileSpec:
    """Build a QuantileSpec from raw training observations per variable."""
    if num_quantiles < 2:
        raise ValueError("num_quantiles must be >= 2")
    samples: dict[str, np.ndarray] = {}
    for var, values in values_per_variable.items():
        arr = np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64)
        if arr.size == 0:
            raise EmptyVariable(f"variable {var!r} has no finite observations")
        samples[var] = np.sort(arr)
    return QuantileSpec(samples=samples, num_quantiles=num_quantiles)


def quantile_token(value: float, variable: str, spec: QuantileSpec) -> int:
    """Quantile bin index in 0..Q-1 for a measurement value."""
    f = spec.ecdf(variable, value)
    return min(int(math.floor(f * spec.num_quantiles)), spec.num_quantiles - 1)


def write_quantiles(spec: QuantileSpec, fh) -> None:
    """Persist a spec as JSON so later stages can decode quantile tokens."""
    import json

    json.dump(
        {
            "num_quantiles": spec.num_quantiles,
            "samples": {v: spec.samples[v].tolist() for v in spec.variables()},
        },
        fh,
    )


def read_quantiles(fh) -> QuantileSpec:
    import json

    doc = json.load(fh)
    return QuantileSpec(
        samples={v: np.asarray(s, dtype=np.float64) for v, s in doc["samples"].items()},
        num_quantiles=int(doc["num_quantiles"]),
    )
