"""Ground-truth cohort simulator: a semi-Markov emission process with
analytically computable hitting and absorption probabilities.

The process walks a finite state chain from a start state to a terminal
state. Each visited state emits one clinical event (name plus an optional
scalar/vector/code payload); each transition draws a log-normal inter-event
gap. Exact hitting probabilities are computed by dynamic programming over
the transition matrix, which gives every estimator in the pipeline an
independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import (
    InvalidProcess,
    NonConvergentWalk,
    OverlappingClasses,
    UnknownState,
)
from .events import ClinicalEvent, CodePayload, RawTimeline, ScalarPayload, VectorPayload

_MAX_WALK_STEPS = 100_000


@dataclass(frozen=True)
class Emission:
    """What a state emits: an event name and one payload family."""

    event_name: str
    # scalar/vector payload: per-dimension (mean, sd); variables are derived
    # as "<event_name>" (one dim) or "<event_name>[i]" (several dims).
    normal_dims: tuple[tuple[float, float], ...] = ()
    # code payload: categorical over dotted codes.
    codes: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.normal_dims and self.codes:
            raise InvalidProcess(f"emission {self.event_name!r} mixes payload kinds")
        if self.codes:
            total = sum(p for _, p in self.codes)
            if abs(total - 1.0) > 1e-9:
                raise InvalidProcess(f"code probabilities for {self.event_name!r} sum to {total}")

    def variables(self) -> tuple[str, ...]:
        if len(self.normal_dims) == 1:
            return (self.event_name,)
        return tuple(f"{self.event_name}[{i}]" for i in range(len(self.normal_dims)))


@dataclass(frozen=True)
class GroundTruthProcess:
    states: tuple[str, ...]
    start_state: str
    terminal_states: frozenset[str]
    transition_matrix: np.ndarray  # (S, S), row-stochastic
    gap_distributions: dict[tuple[str, str], tuple[float, float]]  # (mu, sigma) log-seconds
    emissions: dict[str, Emission]
    static_priors: dict[str, dict[str, float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        index = {s: i for i, s in enumerate(self.states)}
        if len(index) != len(self.states):
            raise InvalidProcess("duplicate state names")
        object.__setattr__(self, "_index", index)
        P = np.asarray(self.transition_matrix, dtype=np.float64)
        if P.shape != (len(self.states), len(self.states)):
            raise InvalidProcess("transition matrix shape does not match state count")
        row_sums = P.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-12):
            raise InvalidProcess(f"transition rows must sum to 1, got {row_sums}")
        if np.any(P < 0):
            raise InvalidProcess("negative transition probability")
        object.__setattr__(self, "transition_matrix", P)
        if self.start_state not in index:
            raise UnknownState(self.start_state)
        for t in self.terminal_states:
            if t not in index:
                raise UnknownState(t)
            if P[index[t], index[t]] != 1.0:
                raise InvalidProcess(f"terminal state {t!r} must be absorbing")
        for s in self.states:
            if s not in self.emissions:
                raise InvalidProcess(f"state {s!r} has no emission")
        for (a, b), (mu, sigma) in self.gap_distributions.items():
            if a not in index or b not in index:
                raise UnknownState(f"gap for unknown transition {a!r}->{b!r}")
            if not sigma > 0:
                raise InvalidProcess(f"gap sigma for {a!r}->{b!r} must be > 0")
        for i, s in enumerate(self.states):
            if s in self.terminal_states:
                continue
            for j in np.flatnonzero(P[i] > 0):
                pair = (s, self.states[j])
                if pair not in self.gap_distributions:
                    raise InvalidProcess(f"missing gap distribution for {pair[0]}->{pair[1]}")
        for attr, dist in self.static_priors.items():
            total = sum(dist.values())
            if abs(total - 1.0) > 1e-9:
                raise InvalidProcess(f"static prior {attr!r} sums to {total}")
        unreachable = self._states_not_reaching_terminal()
        if unreachable:
            raise InvalidProcess(
                f"states cannot reach a terminal state: {sorted(unreachable)}"
            )

    def state_index(self, state: str) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise UnknownState(state) from None

    def _states_not_reaching_terminal(self) -> set[str]:
        # Backward reachability over positive-probability edges. In a finite
        # chain with absorbing terminals, "every state reaches a terminal"
        # implies absorption with probability 1.
        P = self.transition_matrix
        reach = {self._index[t] for t in self.terminal_states}
        changed = True
        while changed:
            changed = False
            for i in range(len(self.states)):
                if i in reach:
                    continue
                if any(j in reach for j in np.flatnonzero(P[i] > 0)):
                    reach.add(i)
                    changed = True
        return {s for s, i in self._index.items() if i not in reach}

    def event_names(self) -> list[str]:
        return sorted({e.event_name for e in self.emissions.values()})


def _emit(state: str, process: GroundTruthProcess, timestamp: float, rng: np.random.Generator) -> ClinicalEvent:
    em = process.emissions[state]
    if em.codes:
        codes = [c for c, _ in em.codes]
        probs = np.asarray([p for _, p in em.codes])
        code = codes[rng.choice(len(codes), p=probs / probs.sum())]
        return ClinicalEvent(timestamp, em.event_name, CodePayload(code))
    if em.normal_dims:
        values = [float(rng.normal(mean, sd)) for mean, sd in em.normal_dims]
        variables = em.variables()
        if len(values) == 1:
            return ClinicalEvent(timestamp, em.event_name, ScalarPayload(values[0], variables[0]))
        return ClinicalEvent(timestamp, em.event_name, VectorPayload(tuple(values), variables))
    return ClinicalEvent(timestamp, em.event_name, None)


def sample_patient(process: GroundTruthProcess, patient_index: int, seed: int) -> RawTimeline:
    """One deterministic patient walk, seeded by (seed, patient index)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, patient_index)))
    statics = {}
    for attr in sorted(process.static_priors):
        values = sorted(process.static_priors[attr])
        probs = np.asarray([process.static_priors[attr][v] for v in values])
        statics[attr] = values[rng.choice(len(values), p=probs / probs.sum())]
    state = process.start_state
    t = 0.0
    events = [_emit(state, process, t, rng)]
    steps = 0
    while state not in process.terminal_states:
        steps += 1
        if steps > _MAX_WALK_STEPS:
            raise NonConvergentWalk(f"walk exceeded {_MAX_WALK_STEPS} steps")
        row = process.transition_matrix[process.state_index(state)]
        nxt = process.states[rng.choice(len(row), p=row)]
        mu, sigma = process.gap_distributions[(state, nxt)]
        t += float(rng.lognormal(mean=mu, sigma=sigma))
        state = nxt
        events.append(_emit(state, process, t, rng))
    return RawTimeline(
        patient_id=f"p{patient_index:06d}",
        static_attributes=statics,
        events=tuple(events),
    )


def sample_cohort(process: GroundTruthProcess, patient_count: int, seed: int | None = None) -> list[RawTimeline]:
    if patient_count < 1:
        raise ValueError("patient_count must be >= 1")
    seed = process.seed if seed is None else seed
    return [sample_patient(process, i, seed) for i in range(patient_count)]


def exact_event_probability(
    process: GroundTruthProcess,
    from_state: str,
    target_states: set[str] | frozenset[str],
    max_steps: int,
) -> float:
    """Exact probability that the walk hits the target set within max_steps."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    idx = [process.state_index(s) for s in target_states]
    start = process.state_index(from_state)
    if start in idx:
        return 1.0
    A = process.transition_matrix.copy()
    for i in idx:
        A[i] = 0.0
        A[i, i] = 1.0  # absorb on first hit
    v = np.zeros(len(process.states))
    v[start] = 1.0
    for _ in range(max_steps):
        v = v @ A
    return float(v[idx].sum())


def exact_class_distribution(
    process: GroundTruthProcess,
    from_state: str,
    class_state_map: dict[str, set[str]],
    max_steps: int,
) -> tuple[dict[str, float], float]:
    """Absorption probability per class within max_steps, plus censored mass.

    Class states must be pairwise disjoint and absorbing.
    """
    seen: set[str] = set()
    for cls, states in class_state_map.items():
        for s in states:
            if s in seen:
                raise OverlappingClasses(f"state {s!r} appears in more than one class")
            seen.add(s)
            i = process.state_index(s)
            if process.transition_matrix[i, i] != 1.0:
                raise OverlappingClasses(f"class state {s!r} is not absorbing")
    start = process.state_index(from_state)
    v = np.zeros(len(process.states))
    v[start] = 1.0
    P = process.transition_matrix
    for _ in range(max_steps):
        v = v @ P
    result = {
        cls: float(sum(v[process.state_index(s)] for s in states))
        for cls, states in class_state_map.items()
    }
    censored = 1.0 - sum(result.values())
    return result, max(censored, 0.0)


# --- built-in benchmark process ---

_HOUR = 3600.0
_DAY = 86400.0


def _gap(median_hours: float, sigma: float) -> tuple[float, float]:
    return (math.log(median_hours * _HOUR), sigma)


def clinic_v1(seed: int = 0) -> GroundTruthProcess:
    """Small hospital-course benchmark process.

    Fifteen states covering triage, diagnosis coding, admission, ward care,
    procedures, ICU, discharge, readmission and death. Two diagnosis states
    differ in code mix and downstream severity, so admission prefixes carry
    real predictive signal for downstream tasks; every named state has a
    unique event name, keeping the token process identifiable from short
    contexts.
    """
    states = (
        "triage", "dx_mild", "dx_severe", "admit_mild", "admit_severe",
        "ward", "procedure", "deteriorating", "icu", "icu_stay",
        "stepdown", "discharge", "home", "deceased", "recovered",
    )
    rows = {
        "triage": {"dx_mild": 0.6, "dx_severe": 0.4},
        "dx_mild": {"admit_mild": 1.0},
        "dx_severe": {"admit_severe": 1.0},
        "admit_mild": {"ward": 0.85, "deteriorating": 0.15},
        "admit_severe": {"ward": 0.35, "deteriorating": 0.40, "icu": 0.25},
        "ward": {"discharge": 0.45, "deteriorating": 0.2, "procedure": 0.2, "ward": 0.15},
        "procedure": {"ward": 0.7, "deteriorating": 0.3},
        "deteriorating": {"icu": 0.55, "ward": 0.35, "deceased": 0.10},
        "icu": {"icu_stay": 1.0},
        "icu_stay": {"icu_stay": 0.35, "stepdown": 0.45, "deceased": 0.20},
        "stepdown": {"ward": 0.5, "discharge": 0.5},
        "discharge": {"home": 1.0},
        "home": {"recovered": 0.75, "triage": 0.25},
        "deceased": {"deceased": 1.0},
        "recovered": {"recovered": 1.0},
    }
    P = np.zeros((len(states), len(states)))
    index = {s: i for i, s in enumerate(states)}
    for s, row in rows.items():
        for t, p in row.items():
            P[index[s], index[t]] = p
    gaps = {
        ("triage", "dx_mild"): _gap(0.5, 0.5),
        ("triage", "dx_severe"): _gap(0.5, 0.5),
        ("dx_mild", "admit_mild"): _gap(1.0, 0.4),
        ("dx_severe", "admit_severe"): _gap(1.0, 0.4),
        ("admit_mild", "ward"): _gap(4, 0.6),
        ("admit_mild", "deteriorating"): _gap(2, 0.6),
        ("admit_severe", "ward"): _gap(4, 0.6),
        ("admit_severe", "deteriorating"): _gap(2, 0.6),
        ("admit_severe", "icu"): _gap(1, 0.5),
        ("ward", "discharge"): _gap(26, 0.7),
        ("ward", "deteriorating"): _gap(8, 0.7),
        ("ward", "procedure"): _gap(6, 0.5),
        ("ward", "ward"): _gap(24, 0.4),
        ("procedure", "ward"): _gap(5, 0.5),
        ("procedure", "deteriorating"): _gap(3, 0.6),
        ("deteriorating", "icu"): _gap(0.75, 0.5),
        ("deteriorating", "ward"): _gap(12, 0.6),
        ("deteriorating", "deceased"): _gap(6, 0.8),
        ("icu", "icu_stay"): _gap(4, 0.5),
        ("icu_stay", "icu_stay"): _gap(8, 0.5),
        ("icu_stay", "stepdown"): _gap(30, 0.6),
        ("icu_stay", "deceased"): _gap(12, 0.8),
        ("stepdown", "ward"): _gap(22, 0.5),
        ("stepdown", "discharge"): _gap(28, 0.5),
        ("discharge", "home"): _gap(10 * 24, 0.7),
        ("home", "recovered"): _gap(45 * 24, 0.8),
        ("home", "triage"): _gap(18 * 24, 0.8),
    }
    emissions = {
        "triage": Emission("triage", normal_dims=((85, 15), (125, 20))),
        "dx_mild": Emission(
            "dx", codes=(("I10", 0.55), ("E11.9", 0.35), ("I50.3", 0.10))
        ),
        "dx_severe": Emission(
            "dx", codes=(("I50.3", 0.55), ("E11.65", 0.35), ("I10", 0.10))
        ),
        "admit_mild": Emission("admit"),
        "admit_severe": Emission("admit"),
        "ward": Emission("ward_round", normal_dims=((110, 30),)),
        "procedure": Emission(
            "proc", codes=(("P01.1", 0.5), ("P01.2", 0.3), ("P20", 0.2))
        ),
        "deteriorating": Emission("deterioration", normal_dims=((100, 18), (105, 22))),
        "icu": Emission("icu_admit"),
        "icu_stay": Emission("icu_round", normal_dims=((135, 40),)),
        "stepdown": Emission("stepdown", normal_dims=((90, 14), (120, 18))),
        "discharge": Emission("discharge"),
        "home": Emission("home_visit", normal_dims=((115, 25),)),
        "deceased": Emission("death"),
        "recovered": Emission("recovery"),
    }
    return GroundTruthProcess(
        states=states,
        start_state="triage",
        terminal_states=frozenset({"deceased", "recovered"}),
        transition_matrix=P,
        gap_distributions=gaps,
        emissions=emissions,
        static_priors={
            "sex": {"F": 0.5, "M": 0.5},
            "age": {"30s": 0.3, "50s": 0.4, "70s": 0.3},
        },
        seed=seed,
    )


# --- process specification files (TOML) ---


def load_process(path_or_name: str, seed: int = 0) -> GroundTruthProcess:
    """Load a process from a TOML file, or a built-in by name ("clinic-v1")."""
    if path_or_name == "clinic-v1":
        return clinic_v1(seed=seed)
    with open(path_or_name, "rb") as fh:
        doc = tomllib.load(fh)
    return process_from_dict(doc, seed=seed)


def process_from_dict(doc: dict, seed: int = 0) -> GroundTruthProcess:
    try:
        head = doc["process"]
        states = tuple(head["states"])
        start = head["start"]
        terminal = frozenset(head["terminal"])
        index = {s: i for i, s in enumerate(states)}
        P = np.zeros((len(states), len(states)))
        for s, row in doc["transitions"].items():
            for t, p in row.items():
                P[index[s], index[t]] = float(p)
        for t in terminal:
            P[index[t], index[t]] = 1.0
        gaps = {}
        for key, g in doc.get("gaps", {}).items():
            a, b = key.split("->")
            gaps[(a, b)] = _gap(float(g["median_hours"]), float(g["sigma"]))
        emissions = {}
        for s, e in doc["emissions"].items():
            kind = e.get("kind", "none")
            if kind == "codes":
                emissions[s] = Emission(
                    e["event"], codes=tuple(zip(e["codes"], map(float, e["probs"])))
                )
            elif kind in ("scalar", "vector"):
                dims = tuple(zip(map(float, e["means"]), map(float, e["sds"])))
                emissions[s] = Emission(e["event"], normal_dims=dims)
            else:
                emissions[s] = Emission(e["event"])
        priors = {
            attr: {k: float(v) for k, v in dist.items()}
            for attr, dist in doc.get("statics", {}).items()
        }
    except (KeyError, ValueError) as exc:
        raise InvalidProcess(f"bad process specification: {exc}") from exc
    return GroundTruthProcess(
        states=states,
        start_state=start,
        terminal_states=terminal,
        transition_matrix=P,
        gap_distributions=gaps,
        emissions=emissions,
        static_priors=priors,
        seed=seed,
    )


def reachability_report(process: GroundTruthProcess) -> str:
    """Human-readable diagnostics for the CLI validator."""
    lines = [
        f"states: {len(process.states)}",
        f"start: {process.start_state}",
        f"terminal: {', '.join(sorted(process.terminal_states))}",
    ]
    for cls in sorted(process.terminal_states):
        p = exact_event_probability(process, process.start_state, {cls}, max_steps=500)
        lines.append(f"P(absorb in {cls} within 500 steps) = {p:.6f}")
    return "\n".join(lines)
