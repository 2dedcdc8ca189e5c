"""Core data model: triples, knowledge bases, run configuration and run records.

A knowledge base is an ordered, deduplicated collection of (subject,
predicate, object) facts. Every other module works against the types
defined here; category derivation is pure and shared by the metrics and
export layers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

# Separator used when a whole triple is flattened to a single set element.
# U+241F (symbol for unit separator) never occurs in natural labels, so the
# flattening stays injective.
TRIPLE_SEP = "␟"

INSTANCE_OF = "instanceOf"

_WS_RUN = re.compile(r"\s+")


def normalize_label(raw: str) -> str:
    """Strip surrounding whitespace and collapse internal runs to one space.

    Case is preserved. May return an empty string; callers decide whether
    empties are acceptable.
    """
    return _WS_RUN.sub(" ", raw.strip())


class TermKind(Enum):
    """Whether a triple object is a named entity or a literal value."""

    NAMED_ENTITY = "ne"
    LITERAL = "lit"

    @classmethod
    def from_code(cls, code: str) -> "TermKind":
        for kind in cls:
            if kind.value == code:
                return kind
        raise ValueError(f"unknown term kind code: {code!r}")


class StructuralCategory(Enum):
    """The five element families a knowledge base decomposes into."""

    NAMED_ENTITIES = "named_entities"
    LITERALS = "literals"
    PREDICATES = "predicates"
    CLASSES = "classes"
    TRIPLES = "triples"


@dataclass(frozen=True)
class Triple:
    """One (subject, predicate, object) fact with crawl provenance."""

    subject: str
    predicate: str
    object: str
    object_kind: TermKind
    layer: int
    run_id: str = ""

    def __post_init__(self) -> None:
        if not self.subject or not self.predicate:
            raise ValueError("subject and predicate must be non-empty")
        if self.layer < 0:
            raise ValueError("layer must be non-negative")

    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    def flat(self) -> str:
        return TRIPLE_SEP.join(self.key())


def make_triple(
    subject: str,
    predicate: str,
    obj: str,
    object_kind: TermKind,
    layer: int,
    run_id: str = "",
) -> Triple:
    """Build a Triple with all three labels whitespace-normalized."""
    return Triple(
        subject=normalize_label(subject),
        predicate=normalize_label(predicate),
        object=normalize_label(obj),
        object_kind=object_kind,
        layer=layer,
        run_id=run_id,
    )


class KnowledgeBase:
    """A run's accumulated facts, deduplicated on normalized (s, p, o).

    Mutation is single-writer: the crawler commits one layer at a time from
    its main thread. Reads and category derivation are safe once a layer has
    been committed.
    """

    def __init__(self) -> None:
        self.triples: list[Triple] = []
        self.visited_subjects: set[str] = set()
        self._keys: set[tuple[str, str, str]] = set()

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, key: tuple[str, str, str]) -> bool:
        return key in self._keys

    @property
    def layer_count(self) -> int:
        if not self.triples:
            return 0
        return max(t.layer for t in self.triples) + 1

    def add(self, triple: Triple) -> bool:
        """Insert a triple unless an identical (s, p, o) is already present.

        Returns True when the triple was actually added.
        """
        key = triple.key()
        if key in self._keys:
            return False
        self._keys.add(key)
        self.triples.append(triple)
        return True

    def add_all(self, triples: Iterable[Triple]) -> int:
        return sum(1 for t in triples if self.add(t))

    def subjects(self) -> set[str]:
        return {t.subject for t in self.triples}


def derive_categories(kb: KnowledgeBase) -> dict[StructuralCategory, set[str]]:
    """Split a knowledge base into its five structural category sets.

    Named entities are all subjects plus objects marked as entities;
    literals are the remaining objects; classes are the distinct objects of
    "instanceOf" facts; the triples category holds each fact flattened to a
    single separator-joined string. Pure and insensitive to triple order.
    """
    named: set[str] = set()
    literals: set[str] = set()
    predicates: set[str] = set()
    classes: set[str] = set()
    flat: set[str] = set()
    for t in kb.triples:
        named.add(t.subject)
        predicates.add(t.predicate)
        if t.object_kind is TermKind.NAMED_ENTITY:
            named.add(t.object)
        else:
            literals.add(t.object)
        if t.predicate == INSTANCE_OF:
            classes.add(t.object)
        flat.add(t.flat())
    return {
        StructuralCategory.NAMED_ENTITIES: named,
        StructuralCategory.LITERALS: literals,
        StructuralCategory.PREDICATES: predicates,
        StructuralCategory.CLASSES: classes,
        StructuralCategory.TRIPLES: flat,
    }


@dataclass
class Caps:
    """Hard limits that bound a crawl."""

    max_layers: int = 30
    max_wall_seconds: int = 345_600
    max_triples: int = 5_000_000

    def validate(self) -> None:
        if self.max_layers <= 0 or self.max_wall_seconds <= 0 or self.max_triples <= 0:
            raise ValueError("all caps must be positive")


@dataclass
class RunConfig:
    """Parameters of one crawl run."""

    topic: str
    seed_entity: str
    prompt_language: str = "en"
    temperature: float = 0.0
    model_id: str = "gpt-4.1-mini"
    caps: Caps = field(default_factory=Caps)
    parallelism: int = 4

    def validate(self) -> None:
        if not normalize_label(self.seed_entity):
            raise ValueError("seed_entity must be non-empty")
        if not self.topic:
            raise ValueError("topic must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature outside accepted range [0, 2]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be positive")
        self.caps.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        caps = Caps(**data.get("caps", {}))
        fields = {k: v for k, v in data.items() if k != "caps"}
        return cls(caps=caps, **fields)


class Termination(Enum):
    """How a crawl ended: frontier exhaustion, or the first cap that fired."""

    ORGANIC = "organic"
    CAPPED_LAYERS = "capped_layers"
    CAPPED_TIME = "capped_time"
    CAPPED_TRIPLES = "capped_triples"


@dataclass
class DegeneracyEvent:
    """A pathological entity name rejected from the frontier."""

    kind: str  # one of "q_identifier", "repetition_loop", "overlong_label"
    entity: str
    layer: int


@dataclass
class LayerStats:
    layer: int
    new_entities: int
    new_triples: int


@dataclass
class RunRecord:
    """Outcome of one crawl: configuration, KB, and termination telemetry."""

    run_id: str
    config: RunConfig
    kb: KnowledgeBase
    termination: Termination
    wall_seconds: float
    deepest_layer: int
    per_layer_counts: list[LayerStats] = field(default_factory=list)
    degeneracy_events: list[DegeneracyEvent] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""


MANIFEST_NAME = "manifest.json"
TRIPLES_NAME = "triples.ndjson"


def save_run(record: RunRecord, run_dir: Path) -> None:
    """Persist a run as manifest.json plus one JSON object per triple.

    Timestamps live only in the manifest so the triples file stays stable
    across reruns of a deterministic backend.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "run_id": record.run_id,
        "config": record.config.to_dict(),
        "termination": record.termination.value,
        "wall_seconds": record.wall_seconds,
        "deepest_layer": record.deepest_layer,
        "per_layer_counts": [
            [s.layer, s.new_entities, s.new_triples] for s in record.per_layer_counts
        ],
        "degeneracy_events": [
            {"kind": e.kind, "entity": e.entity, "layer": e.layer}
            for e in record.degeneracy_events
        ],
        "visited_subjects": len(record.kb.visited_subjects),
        "triple_count": len(record.kb),
        "started_at": record.started_at,
        "finished_at": record.finished_at,
    }
    (run_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    with (run_dir / TRIPLES_NAME).open("w", encoding="utf-8") as fh:
        for t in record.kb.triples:
            fh.write(
                json.dumps(
                    {
                        "s": t.subject,
                        "p": t.predicate,
                        "o": t.object,
                        "o_kind": t.object_kind.value,
                        "layer": t.layer,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_triples(path: Path, run_id: str = "") -> list[Triple]:
    triples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            triples.append(
                Triple(
                    subject=obj["s"],
                    predicate=obj["p"],
                    object=obj["o"],
                    object_kind=TermKind.from_code(obj["o_kind"]),
                    layer=int(obj["layer"]),
                    run_id=run_id,
                )
            )
    return triples


def load_run(run_dir: Path) -> RunRecord:
    """Rebuild a RunRecord from a persisted run directory.

    The visited-subject set is not persisted per entity; for loaded runs it
    is approximated by the subjects that produced triples, which is all the
    downstream metrics need.
    """
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    run_id = manifest["run_id"]
    kb = KnowledgeBase()
    kb.add_all(load_triples(run_dir / TRIPLES_NAME, run_id=run_id))
    kb.visited_subjects = kb.subjects()
    return RunRecord(
        run_id=run_id,
        config=RunConfig.from_dict(manifest["config"]),
        kb=kb,
        termination=Termination(manifest["termination"]),
        wall_seconds=manifest["wall_seconds"],
        deepest_layer=manifest["deepest_layer"],
        per_layer_counts=[
            LayerStats(layer=c[0], new_entities=c[1], new_triples=c[2])
            for c in manifest["per_layer_counts"]
        ],
        degeneracy_events=[
            DegeneracyEvent(kind=e["kind"], entity=e["entity"], layer=e["layer"])
            for e in manifest["degeneracy_events"]
        ],
        started_at=manifest.get("started_at", ""),
        finished_at=manifest.get("finished_at", ""),
    )


def run_failed(run_dir: Path) -> Optional[str]:
    """Return the error message if the directory records a failed run."""
    marker = Path(run_dir) / "FAILED"
    if marker.exists():
        return marker.read_text(encoding="utf-8").strip()
    return None
