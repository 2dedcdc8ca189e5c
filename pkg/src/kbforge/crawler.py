"""Recursive knowledge materialization: BFS over subjects elicited from a model.

Layer 0 holds the seed entity. Each layer elicits facts for every frontier
subject, classifies unseen object labels, and admits new named entities to
the next frontier unless they look degenerate (bare Q-identifiers,
trailing-syllable repetition, absurdly long labels). The crawl ends
organically when the frontier empties, or with the first cap that fires.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .gateway import (
    ElicitationRequest,
    ElicitationResponse,
    MalformedOutputError,
    NerRequest,
)
from .model import (
    Caps,
    DegeneracyEvent,
    KnowledgeBase,
    LayerStats,
    RunConfig,
    RunRecord,
    Termination,
    TermKind,
    Triple,
    normalize_label,
    save_run,
)

logger = logging.getLogger(__name__)

SUITE_DIMENSIONS = ("base", "seed", "language", "temperature", "model")

Q_IDENTIFIER = re.compile(r"Q[0-9]+")
_TOKEN_SPLIT = re.compile(r"[-\s]+")

# Detector thresholds. Labels may legitimately repeat a syllable twice
# (reduplicated names exist); three consecutive trailing repeats is the
# point where generation loops, not language, is the credible explanation.
DEFAULT_MAX_REPEATS = 3
DEFAULT_OVERLONG_THRESHOLD = 200


def detect_q_identifier(label: str) -> bool:
    """True for a bare Wikidata-style identifier: 'Q' plus digits, nothing else."""
    return Q_IDENTIFIER.fullmatch(label) is not None


def detect_repetition_loop(label: str, max_repeats: int = DEFAULT_MAX_REPEATS) -> bool:
    """True when the label ends in >= max_repeats consecutive copies of a token.

    Tokens are split on hyphens and whitespace; only the trailing run counts.
    """
    if max_repeats < 2:
        raise ValueError("max_repeats must be >= 2")
    tokens = [t for t in _TOKEN_SPLIT.split(label) if t]
    if not tokens:
        return False
    run = 1
    for prev, cur in zip(reversed(tokens[:-1]), reversed(tokens[1:])):
        if prev != cur:
            break
        run += 1
    return run >= max_repeats


def detect_overlong_label(label: str, threshold: int = DEFAULT_OVERLONG_THRESHOLD) -> bool:
    return len(label) > threshold


def classify_degeneracy(
    label: str,
    max_repeats: int = DEFAULT_MAX_REPEATS,
    overlong_threshold: int = DEFAULT_OVERLONG_THRESHOLD,
) -> Optional[str]:
    """Name the first degeneracy a label exhibits, or None for a clean label."""
    if detect_q_identifier(label):
        return "q_identifier"
    if detect_repetition_loop(label, max_repeats):
        return "repetition_loop"
    if detect_overlong_label(label, overlong_threshold):
        return "overlong_label"
    return None


@dataclass
class Frontier:
    """The not-yet-expanded subjects of one BFS layer, in discovery order."""

    layer_index: int
    subjects: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.subjects)


def default_run_id(config: RunConfig) -> str:
    digest = hashlib.sha1(
        "|".join(
            [
                config.topic,
                config.seed_entity,
                config.prompt_language,
                str(config.temperature),
                config.model_id,
            ]
        ).encode("utf-8")
    ).hexdigest()
    return f"run-{digest[:10]}"


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def crawl(
    config: RunConfig,
    gateway,
    run_id: str = "",
    clock: Callable[[], float] = time.monotonic,
    max_repeats: int = DEFAULT_MAX_REPEATS,
    overlong_threshold: int = DEFAULT_OVERLONG_THRESHOLD,
) -> RunRecord:
    """Run one bounded knowledge crawl and return its full record.

    Caps are checked at every layer boundary; the wall clock is additionally
    checked before each request, so a timed-out run loses at most the
    remainder of its current layer. A subject whose elicitation output stays
    malformed after retries contributes zero triples but counts as visited.
    Degenerate entity names keep their triples but never enter the frontier.
    """
    config.validate()
    run_id = run_id or default_run_id(config)
    started_at = _utcnow()
    start = clock()
    deadline = start + config.caps.max_wall_seconds

    kb = KnowledgeBase()
    kinds: dict[str, TermKind] = {}
    events: list[DegeneracyEvent] = []
    per_layer: list[LayerStats] = []

    seed = normalize_label(config.seed_entity)
    kinds[seed] = TermKind.NAMED_ENTITY
    frontier = Frontier(layer_index=0, subjects=[seed])
    termination: Optional[Termination] = None
    deepest_layer = 0

    def fetch(subject: str) -> Optional[ElicitationResponse]:
        if clock() >= deadline:
            return None
        try:
            return gateway.elicit(
                ElicitationRequest(subject, config.topic, config.prompt_language)
            )
        except MalformedOutputError as exc:
            logger.warning("subject %r failed elicitation: %s", subject, exc)
            return ElicitationResponse(triples=[], raw_payload="")

    while frontier:
        if clock() >= deadline:
            termination = Termination.CAPPED_TIME
            break
        if len(kb) >= config.caps.max_triples:
            termination = Termination.CAPPED_TRIPLES
            break
        if frontier.layer_index >= config.caps.max_layers:
            termination = Termination.CAPPED_LAYERS
            break

        layer = frontier.layer_index
        deepest_layer = layer
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            responses = list(pool.map(fetch, frontier.subjects))

        timed_out = False
        pending: list[tuple[str, str, str]] = []
        new_labels: list[str] = []
        seen_now: set[str] = set()
        for subject, response in zip(frontier.subjects, responses):
            if response is None:
                timed_out = True
                continue
            kb.visited_subjects.add(subject)
            for s, p, o in response.triples:
                p2, o2 = normalize_label(p), normalize_label(o)
                if not p2 or not o2:
                    continue
                pending.append((subject, p2, o2))
                if o2 not in kinds and o2 not in seen_now:
                    seen_now.add(o2)
                    new_labels.append(o2)

        if new_labels:
            if clock() >= deadline:
                timed_out = True
                for label in new_labels:
                    kinds[label] = TermKind.LITERAL
            else:
                ner = gateway.classify_ner(
                    NerRequest(new_labels, config.topic, config.prompt_language)
                )
                for label, verdict in zip(new_labels, ner.verdicts):
                    kinds[label] = (
                        TermKind.NAMED_ENTITY if verdict else TermKind.LITERAL
                    )

        added = kb.add_all(
            Triple(
                subject=s,
                predicate=p,
                object=o,
                object_kind=kinds[o],
                layer=layer,
                run_id=run_id,
            )
            for s, p, o in pending
        )

        next_subjects: list[str] = []
        for label in new_labels:
            if kinds[label] is not TermKind.NAMED_ENTITY:
                continue
            if label in kb.visited_subjects:
                continue
            kind = classify_degeneracy(label, max_repeats, overlong_threshold)
            if kind is not None:
                events.append(DegeneracyEvent(kind=kind, entity=label, layer=layer + 1))
                continue
            next_subjects.append(label)

        per_layer.append(
            LayerStats(layer=layer, new_entities=len(next_subjects), new_triples=added)
        )
        if timed_out:
            termination = Termination.CAPPED_TIME
            break
        frontier = Frontier(layer_index=layer + 1, subjects=next_subjects)

    if termination is None:
        termination = Termination.ORGANIC

    return RunRecord(
        run_id=run_id,
        config=config,
        kb=kb,
        termination=termination,
        wall_seconds=clock() - start,
        deepest_layer=deepest_layer,
        per_layer_counts=per_layer,
        degeneracy_events=events,
        started_at=started_at,
        finished_at=_utcnow(),
    )


SUITE_MANIFEST = "suite.json"


def run_suite(
    configs: Sequence[RunConfig],
    gateway,
    suite_dir: Path,
    dimension: str = "base",
    clock: Callable[[], float] = time.monotonic,
) -> list[Optional[RunRecord]]:
    """Execute several crawls independently and persist them under one suite.

    Runs share nothing but the gateway. A run that raises is recorded as
    failed in the suite manifest (and with a FAILED marker in its directory)
    without aborting its siblings.
    """
    if not configs:
        raise ValueError("suite needs at least one run config")
    if dimension not in SUITE_DIMENSIONS:
        raise ValueError(f"unknown suite dimension {dimension!r}")
    suite_dir = Path(suite_dir)
    suite_dir.mkdir(parents=True, exist_ok=True)
    started_at = _utcnow()

    records: list[Optional[RunRecord]] = []
    run_ids: list[str] = []
    failed: dict[str, str] = {}
    for index, config in enumerate(configs):
        run_id = f"run-{index:03d}"
        run_ids.append(run_id)
        run_dir = suite_dir / run_id
        try:
            record = crawl(config, gateway, run_id=run_id, clock=clock)
            save_run(record, run_dir)
            records.append(record)
        except Exception as exc:  # noqa: BLE001 - a bad run must not kill the suite
            logger.error("run %s failed: %s", run_id, exc)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "FAILED").write_text(f"{exc}\n", encoding="utf-8")
            failed[run_id] = str(exc)
            records.append(None)

    manifest = {
        "dimension": dimension,
        "run_ids": run_ids,
        "failed": failed,
        "started_at": started_at,
        "finished_at": _utcnow(),
    }
    (suite_dir / SUITE_MANIFEST).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return records
