"""Intersection ensembling over repeated runs of the same topic.

A triple survives at threshold k when it appears in at least k of the n
runs. The shared-triple curve over k = 1..n is monotonically non-increasing;
the elbow heuristic picks the k whose point lies farthest from the straight
line through the curve's endpoints.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .model import KnowledgeBase, RunRecord, TermKind, Triple

TripleKey = tuple[str, str, str]


@dataclass
class SharedTripleCurve:
    """Points (k, count of triples shared by >= k runs) for k = 1..n."""

    points: list[tuple[int, int]]

    def validate(self) -> None:
        if not self.points:
            raise ValueError("curve has no points")
        ks = [k for k, _ in self.points]
        if ks != list(range(1, len(ks) + 1)):
            raise ValueError("curve must cover k = 1..n contiguously")
        counts = [c for _, c in self.points]
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise ValueError("shared counts must be non-increasing in k")


def _occurrences(records: Sequence[RunRecord]) -> Counter:
    counts: Counter = Counter()
    for record in records:
        for triple in record.kb.triples:
            counts[triple.key()] += 1
    return counts


def shared_triples_at_k(records: Sequence[RunRecord], k: int) -> set[TripleKey]:
    """Keys of triples present in at least k distinct runs."""
    if not records:
        raise ValueError("no runs given")
    if not 1 <= k <= len(records):
        raise ValueError(f"k must lie in 1..{len(records)}, got {k}")
    return {key for key, count in _occurrences(records).items() if count >= k}


def shared_triple_curve(records: Sequence[RunRecord]) -> SharedTripleCurve:
    if not records:
        raise ValueError("no runs given")
    counts = _occurrences(records)
    tally = Counter(counts.values())
    n = len(records)
    points = []
    running = 0
    # Counting down lets each point be a suffix sum of the occurrence tally.
    per_k = [0] * (n + 1)
    for occurrence, how_many in tally.items():
        per_k[min(occurrence, n)] += how_many
    for k in range(n, 0, -1):
        running += per_k[k]
        points.append((k, running))
    points.reverse()
    curve = SharedTripleCurve(points=points)
    curve.validate()
    return curve


def curve_from_counts(counts: Sequence[int]) -> SharedTripleCurve:
    """Build a curve directly from shared counts listed for k = 1..n."""
    curve = SharedTripleCurve(points=[(k, c) for k, c in enumerate(counts, start=1)])
    curve.validate()
    return curve


def elbow_k(curve: SharedTripleCurve) -> int:
    """The k whose curve point lies farthest from the endpoint chord.

    Distance is perpendicular distance to the line through the first and
    last points; ties (including a perfectly straight curve) go to the
    smallest k.
    """
    curve.validate()
    points = curve.points
    if len(points) < 3:
        raise ValueError("elbow needs at least three points")
    (x1, y1), (x2, y2) = points[0], points[-1]
    dx, dy = x2 - x1, y2 - y1
    length = math.hypot(dx, dy)
    best_k = points[0][0]
    best_distance = -1.0
    for x, y in points:
        distance = abs(dx * (y1 - y) - (x1 - x) * dy) / length
        if distance > best_distance:
            best_distance = distance
            best_k = x
    return best_k


def build_ensemble_kb(records: Sequence[RunRecord], k: int) -> KnowledgeBase:
    """KB of all triples shared by >= k runs, with reconciled attributes.

    object_kind takes the majority vote across contributing runs (ties go
    to NamedEntity); layer takes the minimum across contributing runs.
    """
    keep = shared_triples_at_k(records, k)
    votes: dict[TripleKey, list[TermKind]] = {key: [] for key in keep}
    layers: dict[TripleKey, int] = {}
    for record in records:
        for triple in record.kb.triples:
            key = triple.key()
            if key not in votes:
                continue
            votes[key].append(triple.object_kind)
            prior = layers.get(key)
            layers[key] = triple.layer if prior is None else min(prior, triple.layer)

    kb = KnowledgeBase()
    for key in sorted(keep):
        kinds = votes[key]
        ne_votes = sum(1 for kind in kinds if kind is TermKind.NAMED_ENTITY)
        lit_votes = len(kinds) - ne_votes
        kind = TermKind.NAMED_ENTITY if ne_votes >= lit_votes else TermKind.LITERAL
        subject, predicate, obj = key
        kb.add(
            Triple(
                subject=subject,
                predicate=predicate,
                object=obj,
                object_kind=kind,
                layer=layers[key],
            )
        )
    return kb


ELBOW_CSV = "elbow.csv"


def write_elbow_csv(curve: SharedTripleCurve, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "shared_count"])
        for k, count in curve.points:
            writer.writerow([k, count])
    return path


def write_curve_json(curve: SharedTripleCurve, path: Path) -> Path:
    """Plot-friendly dump of the curve for external tooling."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"k": [k for k, _ in curve.points], "shared_count": [c for _, c in curve.points]}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path
