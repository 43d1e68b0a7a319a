"""Client-side training and orchestration of the two-stage federation.

Stage one trains a local generator per client on that client's corpus and
persists only the serialized checkpoint. Stage two (see server module)
samples a synthetic corpus from the checkpoints and trains the global
generator. Artifacts land under out/<scenario>/ with SHA-256 digests in a
manifest so reruns are verifiable.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import read_corpus, write_corpus
from .errors import BadConfig
from .models import serialize, train_local
from .models.training import TrainConfig
from .server import (
    Conditioning,
    SynthesisManifest,
    sha256_hex,
    synthesize_corpus,
    train_global,
)
from .tokenizer import PHT
from .vocab import Vocabulary, read_vocabulary


@dataclass(frozen=True)
class ClientSpec:
    client_id: str
    corpus_path: str
    train: TrainConfig


@dataclass(frozen=True)
class SynthesisSpec:
    samples_per_client: int = 100
    temperature: float = 1.0
    max_new_tokens: int = 512
    conditioning: Conditioning = field(default_factory=Conditioning)
    per_client_samples: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.samples_per_client < 1:
            raise BadConfig("samples_per_client must be >= 1")
        if not self.temperature > 0:
            raise BadConfig("temperature must be > 0")

    def samples_for(self, client_id: str) -> int:
        return self.per_client_samples.get(client_id, self.samples_per_client)


@dataclass(frozen=True)
class FederationScenario:
    name: str
    vocabulary_path: str
    clients: tuple[ClientSpec, ...]
    synthesis: SynthesisSpec
    global_train: TrainConfig
    master_seed: int = 0

    def __post_init__(self):
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise BadConfig("client ids must be unique")
        if not ids:
            raise BadConfig("scenario needs at least one client")


@dataclass(frozen=True)
class FtsArtifacts:
    checkpoints: dict[str, bytes]
    pseudo_corpus: list[PHT]
    manifest: SynthesisManifest
    global_checkpoint: bytes
    out_dir: Path


def train_config_from_dict(doc: dict) -> TrainConfig:
    valid = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(doc) - valid
    if unknown:
        raise BadConfig(f"unknown training options: {sorted(unknown)}")
    if "betas" in doc:
        doc = {**doc, "betas": tuple(doc["betas"])}
    try:
        return TrainConfig(**doc)
    except TypeError as exc:
        raise BadConfig(f"bad training options: {exc}") from exc


def load_scenario(path: str) -> FederationScenario:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return scenario_from_dict(doc, base_dir=Path(path).parent)


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> FederationScenario:
    base = base_dir or Path(".")

    def resolve(p: str) -> str:
        return str(p) if Path(p).is_absolute() else str(base / p)

    try:
        head = doc["scenario"]
        clients = tuple(
            ClientSpec(
                client_id=str(c["id"]),
                corpus_path=resolve(c["corpus"]),
                train=train_config_from_dict(c.get("train", {})),
            )
            for c in doc["clients"]
        )
        syn = doc.get("synthesis", {})
        conditioning = Conditioning(
            mode=syn.get("conditioning", "unconditional"),
            static_histogram=syn.get("static_histogram", {}),
            prefix=tuple(syn.get("prefix", ())),
        )
        synthesis = SynthesisSpec(
            samples_per_client=int(syn.get("samples_per_client", 100)),
            temperature=float(syn.get("temperature", 1.0)),
            max_new_tokens=int(syn.get("max_new_tokens", 512)),
            conditioning=conditioning,
            per_client_samples={
                str(k): int(v) for k, v in syn.get("per_client_samples", {}).items()
            },
        )
        return FederationScenario(
            name=str(head["name"]),
            vocabulary_path=resolve(head["vocabulary"]),
            clients=clients,
            synthesis=synthesis,
            global_train=train_config_from_dict(doc.get("global", {}).get("train", {})),
            master_seed=int(head.get("seed", 0)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise BadConfig(f"bad scenario: {exc}") from exc


def run_client(
    client_id: str, corpus_path: str, config: TrainConfig, vocab: Vocabulary
) -> bytes:
    """One client's whole contribution: train locally, emit a checkpoint.

    The checkpoint bytes are the only output; raw timelines never leave
    this function.
    """
    with open(corpus_path, "rb") as fh:
        corpus, fingerprint = read_corpus(fh, expected_fingerprint=vocab.fingerprint())
    generator = train_local(corpus, config, vocab, corpus_fingerprint=fingerprint)
    return serialize(generator)


def run_fts(
    scenario: FederationScenario, out_root: str | Path, jobs: int = 1
) -> FtsArtifacts:
    """Execute the full two-stage protocol and persist all artifacts.

    Client trainings may run in parallel; every sampling seed is derived
    from (master seed, client id, sample index), so the artifact digests do
    not depend on scheduling.
    """
    with open(scenario.vocabulary_path, "r", encoding="utf-8") as fh:
        vocab = read_vocabulary(fh)
    out_dir = Path(out_root) / scenario.name
    (out_dir / "clients").mkdir(parents=True, exist_ok=True)

    def one_client(spec: ClientSpec) -> tuple[str, bytes]:
        return spec.client_id, run_client(
            spec.client_id, spec.corpus_path, spec.train, vocab
        )

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            checkpoints = dict(pool.map(one_client, scenario.clients))
    else:
        checkpoints = dict(one_client(c) for c in scenario.clients)
    for client_id, blob in checkpoints.items():
        (out_dir / "clients" / f"{client_id}.ftsg").write_bytes(blob)

    # Server stage: checkpoints in, synthetic corpus and global model out.
    pseudo, records = synthesize_corpus(
        checkpoints,
        vocab,
        {c.client_id: scenario.synthesis.samples_for(c.client_id) for c in scenario.clients},
        scenario.synthesis.temperature,
        scenario.synthesis.conditioning,
        scenario.master_seed,
        scenario.synthesis.max_new_tokens,
    )
    synthetic_path = out_dir / "synthetic.pht1"
    with open(synthetic_path, "wb") as fh:
        write_corpus(pseudo, vocab.fingerprint(), fh)
    manifest = SynthesisManifest(
        clients=records, corpus_digest=sha256_hex(synthetic_path.read_bytes())
    )
    global_blob = train_global(pseudo, scenario.global_train, vocab)
    (out_dir / "global.ftsg").write_bytes(global_blob)
    manifest_text = manifest.render() + f"global {sha256_hex(global_blob)}\n"
    (out_dir / "manifest").write_text(manifest_text)
    return FtsArtifacts(
        checkpoints=checkpoints,
        pseudo_corpus=pseudo,
        manifest=manifest,
        global_checkpoint=global_blob,
        out_dir=out_dir,
    )
