"""Zero-shot probabilistic inference by Monte Carlo simulation.

Given a trained generator and a patient prefix, sample N future timelines
and estimate outcome probabilities from the sampled trajectories: a binary
event probability as the hit fraction, a multiclass distribution over first
class tokens, or a regression value as the mean of decoded quantile-bin
midpoints. Trajectories that reach the horizon (or TIMELINE_END) without a
task-relevant token are censored: binary treats them as negatives,
multiclass renormalizes over resolved trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import AllCensored, BadConfig, KindMismatch, NoInstances
from .models.base import Generator, apply_temperature
from .quantiles import QuantileSpec
from .tokenizer import PHT
from .vocab import TokenClass, Vocabulary, fnv1a_64

BINARY = "binary"
MULTICLASS = "multiclass"
REGRESSION = "regression"

CENSORED = object()


@dataclass(frozen=True)
class InferenceTask:
    kind: str
    anchor: str  # token surface at which prefixes are cut (last occurrence)
    horizon: int = 200  # max new tokens per trajectory
    trajectories: int = 100
    temperature: float = 1.0
    positive: frozenset[str] = frozenset()  # binary
    classes: dict[str, frozenset[str]] = field(default_factory=dict)  # multiclass
    variable: str = ""  # regression: event name whose quantile token is decoded

    def __post_init__(self):
        if self.kind not in (BINARY, MULTICLASS, REGRESSION):
            raise BadConfig(f"unknown task kind {self.kind!r}")
        if self.horizon < 1 or self.trajectories < 1:
            raise BadConfig("horizon and trajectories must be >= 1")
        if not self.temperature > 0:
            raise BadConfig("temperature must be > 0")
        if self.kind == BINARY and not self.positive:
            raise BadConfig("binary task needs a positive token set")
        if self.kind == MULTICLASS:
            seen: set[str] = set()
            for tokens in self.classes.values():
                if seen & tokens:
                    raise BadConfig("class token sets must be disjoint")
                seen |= tokens
            if len(self.classes) < 2:
                raise BadConfig("multiclass task needs >= 2 classes")
        if self.kind == REGRESSION and not self.variable:
            raise BadConfig("regression task needs a variable name")


@dataclass(frozen=True)
class TrajectoryBundle:
    kind: str
    prefix: tuple[int, ...]
    # Per trajectory: True/False (binary), class name (multiclass), float
    # (regression), or CENSORED.
    annotations: tuple[object, ...]

    @property
    def censored_rate(self) -> float:
        return sum(1 for a in self.annotations if a is CENSORED) / len(self.annotations)


def trajectory_seed(seed: int, index: int) -> int:
    return fnv1a_64(f"{seed}:{index}".encode("utf-8"))


def simulate_fphts(
    generator: Generator,
    prefix: Sequence[int],
    task: InferenceTask,
    vocab: Vocabulary,
    seed: int,
    quantile_spec: QuantileSpec | None = None,
) -> TrajectoryBundle:
    """Sample N continuations, each stopped at its first task-relevant
    token, TIMELINE_END, or the horizon. Per-trajectory derived seeds make
    the result independent of evaluation order."""
    if task.kind == REGRESSION and quantile_spec is None:
        raise BadConfig("regression simulation needs the quantile spec")
    end_id = vocab.end_id
    if task.kind == BINARY:
        positive_ids = {vocab.id_of(s) for s in task.positive}
    elif task.kind == MULTICLASS:
        class_of = {
            vocab.id_of(s): name for name, toks in task.classes.items() for s in toks
        }
    else:
        name_id = vocab.id_of(task.variable)
    annotations: list[object] = []
    for n in range(task.trajectories):
        rng = np.random.default_rng(trajectory_seed(seed, n))
        ids = list(prefix)
        outcome: object = CENSORED
        for _ in range(task.horizon):
            dist = apply_temperature(
                generator.next_token_dist(ids), task.temperature
            )
            cdf = np.cumsum(dist)
            tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            tok = min(tok, len(dist) - 1)
            ids.append(tok)
            if task.kind == BINARY and tok in positive_ids:
                outcome = True
                break
            if task.kind == MULTICLASS and tok in class_of:
                outcome = class_of[tok]
                break
            if (
                task.kind == REGRESSION
                and len(ids) >= 2
                and ids[-2] == name_id
                and vocab.token_class(tok) is TokenClass.QUANTILE
            ):
                q = int(vocab.surface(tok).removeprefix("QNT_"))
                outcome = quantile_spec.bin_midpoint(task.variable, q)
                break
            if tok == end_id:
                break
        annotations.append(outcome)
    return TrajectoryBundle(
        kind=task.kind, prefix=tuple(prefix), annotations=tuple(annotations)
    )


@dataclass(frozen=True)
class BinaryEstimate:
    probability: float
    censored_rate: float


def estimate_binary(bundle: TrajectoryBundle) -> BinaryEstimate:
    if bundle.kind != BINARY:
        raise KindMismatch(f"expected a binary bundle, got {bundle.kind}")
    # Censored trajectories count as negatives.
    hits = sum(1 for a in bundle.annotations if a is True)
    return BinaryEstimate(
        probability=hits / len(bundle.annotations),
        censored_rate=bundle.censored_rate,
    )


@dataclass(frozen=True)
class MulticlassEstimate:
    probabilities: dict[str, float]
    censored_rate: float


def estimate_multiclass(bundle: TrajectoryBundle) -> MulticlassEstimate:
    if bundle.kind != MULTICLASS:
        raise KindMismatch(f"expected a multiclass bundle, got {bundle.kind}")
    resolved = [a for a in bundle.annotations if a is not CENSORED]
    if not resolved:
        raise AllCensored("no trajectory produced a class token")
    counts: dict[str, int] = {}
    for a in resolved:
        counts[a] = counts.get(a, 0) + 1
    probs = {c: counts.get(c, 0) / len(resolved) for c in counts}
    return MulticlassEstimate(probabilities=probs, censored_rate=bundle.censored_rate)


@dataclass(frozen=True)
class RegressionEstimate:
    value: float
    resolved: int


def estimate_regression(bundle: TrajectoryBundle) -> RegressionEstimate:
    if bundle.kind != REGRESSION:
        raise KindMismatch(f"expected a regression bundle, got {bundle.kind}")
    values = [a for a in bundle.annotations if a is not CENSORED]
    if not values:
        raise AllCensored("no trajectory produced a value")
    return RegressionEstimate(value=float(np.mean(values)), resolved=len(values))


@dataclass(frozen=True)
class TaskInstance:
    patient_id: str
    prefix: tuple[int, ...]
    label: object


def build_task_instances(
    phts: Sequence[PHT],
    task: InferenceTask,
    vocab: Vocabulary,
    label_oracle: Callable[[PHT], object],
) -> tuple[list[TaskInstance], int]:
    """Cut each timeline at the LAST anchor occurrence (inclusive) and pair
    the prefix with its ground-truth label. Returns (instances, skipped)."""
    anchor_id = vocab.id_of(task.anchor)
    instances: list[TaskInstance] = []
    skipped = 0
    for pht in phts:
        positions = [j for j, t in enumerate(pht.token_ids) if t == anchor_id]
        if not positions:
            skipped += 1
            continue
        prefix = pht.token_ids[: positions[-1] + 1]
        instances.append(
            TaskInstance(pht.patient_id, tuple(prefix), label_oracle(pht))
        )
    if not instances:
        raise NoInstances(f"no timeline contains the anchor {task.anchor!r}")
    return instances, skipped


def load_task(path: str) -> InferenceTask:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return task_from_dict(doc)


def task_from_dict(doc: dict) -> InferenceTask:
    try:
        t = doc["task"]
        return InferenceTask(
            kind=t["kind"],
            anchor=t["anchor"],
            horizon=int(t.get("horizon", 200)),
            trajectories=int(t.get("trajectories", 100)),
            temperature=float(t.get("temperature", 1.0)),
            positive=frozenset(t.get("positive", ())),
            classes={k: frozenset(v) for k, v in t.get("classes", {}).items()},
            variable=t.get("variable", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadConfig(f"bad task definition: {exc}") from exc
