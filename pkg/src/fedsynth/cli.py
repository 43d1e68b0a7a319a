"""Command-line surface for the whole pipeline.

Subcommands: simulate -> tokenize -> train / federate -> infer -> evaluate
-> score. Every command is deterministic given its seed, exits 0 on
success, and on failure prints a single machine-parseable line
"ERROR <category>: <message>" to stderr (exit code 2 for configuration and
I/O problems, 1 for domain errors). Set FTS_LOG=debug|info|warning for
verbosity.
"""

from __future__ import annotations

import csv
import functools
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import click

from .cohort import load_process, reachability_report, sample_cohort
from .corpus import read_corpus, write_corpus
from .errors import BadConfig, FedsynthError, IoFailure
from .events import (
    ScalarPayload,
    VectorPayload,
    read_event_stream,
    write_event_stream,
)
from .federation import load_scenario, run_fts, train_config_from_dict
from .intervals import default_ladder
from .metrics import accuracy, auc, brier_and_calibration
from .models import deserialize, serialize, train_local
from .quantiles import fit_quantiles, read_quantiles, write_quantiles
from .scoring import overall_score
from .metrics import MetricResult
from .tokenizer import TokenizationConfig, tokenize_timeline
from .vocab import build_vocabulary, read_vocabulary, write_vocabulary
from .zeroshot import (
    estimate_binary,
    estimate_multiclass,
    estimate_regression,
    load_task,
    simulate_fphts,
)

log = logging.getLogger("fedsynth")

_CONFIG_EXIT = 2
_DOMAIN_EXIT = 1


def _setup_logging() -> None:
    level = os.environ.get("FTS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _reporting(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (BadConfig, IoFailure, FileNotFoundError, OSError) as exc:
            click.echo(f"ERROR {type(exc).__name__}: {exc}", err=True)
            sys.exit(_CONFIG_EXIT)
        except FedsynthError as exc:
            click.echo(f"ERROR {type(exc).__name__}: {exc}", err=True)
            sys.exit(_DOMAIN_EXIT)

    return wrapper


@click.group()
def main() -> None:
    """Federated synthesis of tokenized event timelines."""
    _setup_logging()


@main.command()
@click.option("--process", "process_ref", default="clinic-v1", show_default=True,
              help="Built-in process name or a process TOML file.")
@click.option("--count", type=int, required=True, help="Number of patients.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--report", is_flag=True, help="Print reachability diagnostics.")
@_reporting
def simulate(process_ref: str, count: int, seed: int, out: str, report: bool) -> None:
    """Sample a ground-truth cohort into an event-stream file."""
    process = load_process(process_ref, seed=seed)
    if report:
        click.echo(reachability_report(process))
    cohort = sample_cohort(process, count, seed=seed)
    with open(out, "w", encoding="utf-8") as fh:
        write_event_stream(cohort, fh)
    log.info("wrote %d patients to %s", count, out)


@main.command()
@click.option("--events", "events_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML with a [tokenize] table (num_quantiles).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_reporting
def tokenize(events_path: str, config_path: str | None, out: str) -> None:
    """Build the vocabulary and the binary token corpus from raw events."""
    num_quantiles = 10
    if config_path:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
        num_quantiles = int(doc.get("tokenize", {}).get("num_quantiles", 10))
    with open(events_path, "r", encoding="utf-8") as fh:
        cohort = read_event_stream(fh)
    ladder = default_ladder()
    vocab = build_vocabulary(cohort, ladder, num_quantiles=num_quantiles)
    values: dict[str, list[float]] = {}
    for t in cohort:
        for e in t.events:
            if isinstance(e.payload, ScalarPayload):
                values.setdefault(e.payload.variable, []).append(e.payload.value)
            elif isinstance(e.payload, VectorPayload):
                for v, var in zip(e.payload.values, e.payload.variables):
                    values.setdefault(var, []).append(v)
    spec = fit_quantiles(values, num_quantiles) if values else None
    config = TokenizationConfig(ladder=ladder) if spec is None else TokenizationConfig(
        ladder=ladder, quantile_spec=spec
    )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "vocab.tsv", "w", encoding="utf-8") as fh:
        write_vocabulary(vocab, fh)
    phts = [tokenize_timeline(t, config, vocab) for t in cohort]
    with open(out_dir / "corpus.pht1", "wb") as fh:
        write_corpus(phts, vocab.fingerprint(), fh)
    if spec is not None:
        with open(out_dir / "quantiles.json", "w", encoding="utf-8") as fh:
            write_quantiles(spec, fh)
    log.info("tokenized %d patients, |V|=%d", len(phts), len(vocab))


def _load_train_config(config_path: str | None, seed: int):
    doc = {}
    if config_path:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh).get("train", {})
    doc.setdefault("seed", seed)
    return train_config_from_dict(doc)


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML with a [train] table (TrainConfig fields).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_reporting
def train(corpus_path: str, vocab_path: str, config_path: str | None,
          seed: int, out: str) -> None:
    """Train one generator on one corpus and write its checkpoint."""
    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocab = read_vocabulary(fh)
    with open(corpus_path, "rb") as fh:
        corpus, fp = read_corpus(fh, expected_fingerprint=vocab.fingerprint())
    config = _load_train_config(config_path, seed)
    generator = train_local(corpus, config, vocab, corpus_fingerprint=fp)
    Path(out).write_bytes(serialize(generator))
    log.info("trained %s generator on %d timelines", config.backend, len(corpus))


@main.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@_reporting
def federate(scenario_path: str, out: str, jobs: int) -> None:
    """Run the full two-stage federation described by a scenario file."""
    scenario = load_scenario(scenario_path)
    artifacts = run_fts(scenario, out, jobs=jobs)
    click.echo(f"artifacts in {artifacts.out_dir}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--task", "task_path", type=click.Path(exists=True), required=True)
@click.option("--quantiles", "quantiles_path", type=click.Path(exists=True), default=None,
              help="quantiles.json from tokenize (needed for regression tasks).")
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None,
              help="CSV patient_id,label with ground-truth labels.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_reporting
def infer(checkpoint_path: str, corpus_path: str, vocab_path: str, task_path: str,
          quantiles_path: str | None, labels_path: str | None,
          seed: int, out: str) -> None:
    """Monte Carlo zero-shot estimates for every anchored timeline."""
    from .zeroshot import build_task_instances

    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocab = read_vocabulary(fh)
    with open(corpus_path, "rb") as fh:
        corpus, _ = read_corpus(fh, expected_fingerprint=vocab.fingerprint())
    generator = deserialize(
        Path(checkpoint_path).read_bytes(), expected_fingerprint=vocab.fingerprint()
    )
    task = load_task(task_path)
    spec = None
    if quantiles_path:
        with open(quantiles_path, "r", encoding="utf-8") as fh:
            spec = read_quantiles(fh)
    labels: dict[str, str] = {}
    if labels_path:
        with open(labels_path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                labels[row["patient_id"]] = row["label"]
    instances, skipped = build_task_instances(
        corpus, task, vocab, lambda p: labels.get(p.patient_id, "")
    )
    log.info("%d instances (%d skipped, no anchor)", len(instances), skipped)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "kind", "estimate", "censored_rate", "label"])
        for inst in instances:
            bundle = simulate_fphts(
                generator, inst.prefix, task, vocab, seed=seed, quantile_spec=spec
            )
            if task.kind == "binary":
                est = estimate_binary(bundle)
                value, censored = est.probability, est.censored_rate
            elif task.kind == "multiclass":
                est = estimate_multiclass(bundle)
                value = ";".join(
                    f"{c}={p:.6f}" for c, p in sorted(est.probabilities.items())
                )
                censored = est.censored_rate
            else:
                est = estimate_regression(bundle)
                value, censored = est.value, bundle.censored_rate
            writer.writerow([inst.patient_id, task.kind, value, censored, inst.label])


@main.command()
@click.option("--estimates", "estimates_path", type=click.Path(exists=True), required=True,
              help="CSV produced by `infer` for a binary task.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_reporting
def evaluate(estimates_path: str, out: str, seed: int) -> None:
    """Task metrics (AUC, accuracy, Brier, calibration) from estimates."""
    probs: list[float] = []
    labels: list[int] = []
    with open(estimates_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] != "binary":
                raise BadConfig("evaluate currently scores binary estimate files")
            if row["label"] == "":
                raise BadConfig("estimates file has no ground-truth labels")
            probs.append(float(row["estimate"]))
            labels.append(int(row["label"]))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [
        auc(probs, labels, seed=seed),
        accuracy([p >= 0.5 for p in probs], [bool(y) for y in labels], seed=seed),
    ]
    brier, table = brier_and_calibration(probs, labels)
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value", "ci_low", "ci_high", "higher_is_better"])
        for r in results:
            writer.writerow([r.name, r.value, r.ci_low, r.ci_high, int(r.higher_is_better)])
        writer.writerow(["brier", brier, brier, brier, 0])
    with open(out_dir / "calibration.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mean_prob", "event_rate", "count"])
        writer.writerows(table)


@main.command()
@click.option("--metrics", "metric_files", multiple=True, required=True,
              help="method=path pairs of metrics.csv files, one per method.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_reporting
def score(metric_files: tuple[str, ...], out: str) -> None:
    """Combine per-method metric files into the overall score report."""
    per_method: dict[str, list[MetricResult]] = {}
    for item in metric_files:
        if "=" not in item:
            raise BadConfig(f"--metrics expects method=path, got {item!r}")
        method, path = item.split("=", 1)
        rows = []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(
                    MetricResult(
                        row["name"],
                        float(row["value"]),
                        float(row["ci_low"]),
                        float(row["ci_high"]),
                        bool(int(row.get("higher_is_better", 1))),
                    )
                )
        per_method[method] = rows
    try:
        report = overall_score(per_method)
    except ValueError as exc:
        raise BadConfig(str(exc)) from exc
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "score.csv").write_text(report.to_csv())
    (out_dir / "score.md").write_text(report.render_markdown())
    click.echo(report.render_markdown())


if __name__ == "__main__":
    main()
