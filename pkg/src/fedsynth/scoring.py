"""Overall method score: inverse-variance weighted sum of min–max
normalized metrics, with an analytic 95% confidence interval.

For each metric the CI half-width h = (high − low) / 2 yields a standard
error σ = h / 1.96. Values are min–max normalized across methods; the
normalized variance is σ² / range². Each method's score is the
inverse-variance weighted mean of its normalized metrics, with
Var(S) = 1 / Σ(1/Var) and CI = S ± 1.96·√Var(S). Metrics whose values are
identical across all methods carry no ranking signal and are excluded
(listed in the report); σ is floored at 1e-9 to keep weights finite.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .metrics import MetricResult

_SIGMA_FLOOR = 1e-9
_Z = 1.96


@dataclass(frozen=True)
class MethodScore:
    method: str
    normalized: dict[str, float]
    weights: dict[str, float]
    score: float
    variance: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class ScoreReport:
    methods: tuple[MethodScore, ...]
    excluded: tuple[tuple[str, str], ...]  # (metric name, reason)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("method,score,variance,ci_low,ci_high\n")
        for m in self.methods:
            out.write(
                f"{m.method},{m.score:.12g},{m.variance:.12g},"
                f"{m.ci_low:.12g},{m.ci_high:.12g}\n"
            )
        return out.getvalue()

    def render_markdown(self) -> str:
        # Display values are clamped to [0, 1]; raw values stay in the CSV.
        def clamp(x: float) -> float:
            return min(1.0, max(0.0, x))

        lines = ["| method | overall score |", "| --- | --- |"]
        for m in self.methods:
            lines.append(
                f"| {m.method} | {clamp(m.score):.3f} "
                f"[{clamp(m.ci_low):.3f}, {clamp(m.ci_high):.3f}] |"
            )
        for name, reason in self.excluded:
            lines.append("")
            lines.append(f"Excluded metric `{name}`: {reason}")
        return "\n".join(lines) + "\n"


def overall_score(per_method: dict[str, list[MetricResult]]) -> ScoreReport:
    """Score every method from its metric results, exactly as documented in
    the module docstring. Requires at least two methods, each reporting the
    same metric set."""
    if len(per_method) < 2:
        raise ValueError("scoring needs at least two methods")
    method_names = sorted(per_method)
    metric_names = [r.name for r in per_method[method_names[0]]]
    for m in method_names:
        if [r.name for r in per_method[m]] != metric_names:
            raise ValueError("every method must report the same metrics in order")
    if len(set(metric_names)) != len(metric_names):
        raise ValueError("duplicate metric names")

    oriented: dict[str, dict[str, tuple[float, float]]] = {}
    excluded: list[tuple[str, str]] = []
    for k, name in enumerate(metric_names):
        results = {m: per_method[m][k] for m in method_names}
        sign = 1.0 if results[method_names[0]].higher_is_better else -1.0
        values = {m: sign * r.value for m, r in results.items()}
        lo = min(values.values())
        hi = max(values.values())
        rng = hi - lo
        if rng == 0.0:
            excluded.append((name, "identical value across all methods"))
            continue
        entry = {}
        for m, r in results.items():
            h = (r.ci_high - r.ci_low) / 2
            sigma = max(h / _Z, _SIGMA_FLOOR)
            if h / _Z < _SIGMA_FLOOR:
                warnings.warn(
                    f"metric {name!r} for {m!r} has zero CI width; "
                    f"flooring its standard error",
                    stacklevel=2,
                )
            normalized = (values[m] - lo) / rng
            variance = (sigma / rng) ** 2
            entry[m] = (normalized, variance)
        oriented[name] = entry

    scores = []
    for m in method_names:
        normalized = {name: oriented[name][m][0] for name in oriented}
        variances = {name: oriented[name][m][1] for name in oriented}
        if not variances:
            raise ValueError("all metrics were excluded; nothing to score")
        inv = {name: 1.0 / v for name, v in variances.items()}
        total_inv = sum(inv.values())
        weights = {name: w / total_inv for name, w in inv.items()}
        score = sum(weights[name] * normalized[name] for name in weights)
        variance = 1.0 / total_inv
        half = float(_Z * np.sqrt(variance))
        scores.append(
            MethodScore(
                method=m,
                normalized=normalized,
                weights=weights,
                score=score,
                variance=variance,
                ci_low=score - half,
                ci_high=score + half,
            )
        )
    return ScoreReport(methods=tuple(scores), excluded=tuple(excluded))
