"""Chat-completion gateways: a remote OpenAI-compatible backend and a mock.

Both gateways expose the same two operations, ``elicit`` (facts about one
subject) and ``classify_ner`` (entity verdicts for a batch of phrases).
The remote backend declares a strict JSON schema for the response, retries
transport failures and rate limits with exponential backoff, and appends
every request/response pair to an audit log. The mock backend answers from
a world fixture file and is a pure function of (world, request), which is
what makes crawl determinism testable.
"""

from __future__ import annotations

import datetime
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import requests

from .prompts import render_elicitation_prompt, render_ner_prompt

logger = logging.getLogger(__name__)

API_KEY_ENV = "KBFORGE_API_KEY"


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Network failure or non-retryable HTTP error from the backend."""


class RateLimitedError(GatewayError):
    """HTTP 429 from the backend; retried with backoff before surfacing."""


class MalformedOutputError(GatewayError):
    """The model's response did not match the declared schema."""


@dataclass
class ElicitationRequest:
    subject: str
    topic: str
    language: str = "en"

    def __post_init__(self) -> None:
        if not self.subject:
            raise ValueError("subject must be non-empty")


@dataclass
class ElicitationResponse:
    triples: list[tuple[str, str, str]]
    raw_payload: str = ""


@dataclass
class NerRequest:
    phrases: list[str]
    topic: str
    language: str = "en"

    def __post_init__(self) -> None:
        if not self.phrases:
            raise ValueError("phrases must be a non-empty list")


@dataclass
class NerResponse:
    verdicts: list[bool]


@dataclass
class BackendDescriptor:
    """Connection parameters for a chat backend."""

    kind: str = "mock"  # "remote" or "mock"
    endpoint_url: str = ""
    model_id: str = "gpt-4.1-mini"
    temperature: float = 0.0
    request_timeout_seconds: int = 60
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")


ELICITATION_SCHEMA = {
    "type": "object",
    "properties": {
        "triples": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "subject": {"type": "string"},
                    "predicate": {"type": "string"},
                    "object": {"type": "string"},
                },
                "required": ["subject", "predicate", "object"],
                "additionalProperties": False,
            },
        }
    },
    "required": ["triples"],
    "additionalProperties": False,
}

NER_SCHEMA = {
    "type": "object",
    "properties": {"verdicts": {"type": "array", "items": {"type": "boolean"}}},
    "required": ["verdicts"],
    "additionalProperties": False,
}


def parse_elicitation_payload(text: str) -> list[tuple[str, str, str]]:
    """Strictly parse a JSON elicitation payload into raw (s, p, o) tuples."""
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedOutputError(f"response is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "triples" not in data:
        raise MalformedOutputError("response lacks a 'triples' object")
    items = data["triples"]
    if not isinstance(items, list):
        raise MalformedOutputError("'triples' is not an array")
    triples = []
    for item in items:
        if not isinstance(item, dict):
            raise MalformedOutputError("triple entry is not an object")
        try:
            s, p, o = item["subject"], item["predicate"], item["object"]
        except KeyError as exc:
            raise MalformedOutputError(f"triple entry missing key {exc}") from exc
        if not all(isinstance(x, str) for x in (s, p, o)):
            raise MalformedOutputError("triple fields must all be strings")
        triples.append((s, p, o))
    return triples


def parse_ner_payload(text: str, expected: int) -> list[bool]:
    """Strictly parse a JSON NER payload; verdict count must match the batch."""
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedOutputError(f"response is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "verdicts" not in data:
        raise MalformedOutputError("response lacks a 'verdicts' array")
    verdicts = data["verdicts"]
    if not isinstance(verdicts, list) or not all(isinstance(v, bool) for v in verdicts):
        raise MalformedOutputError("'verdicts' must be an array of booleans")
    if len(verdicts) != expected:
        raise MalformedOutputError(
            f"verdict count {len(verdicts)} does not match {expected} phrases"
        )
    return verdicts


def _force_subject(
    raw: list[tuple[str, str, str]], subject: str
) -> list[tuple[str, str, str]]:
    # The BFS graph stays well-formed only if every returned fact hangs off
    # the requested subject; divergent subjects are overwritten, not dropped.
    forced = []
    for s, p, o in raw:
        if s != subject:
            logger.debug("divergent subject %r forced to %r", s, subject)
        forced.append((subject, p, o))
    return forced


class AuditLog:
    """Append-only NDJSON record of every remote request/response pair."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, entry: dict) -> None:
        entry = dict(entry)
        entry["ts"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        line = json.dumps(entry, ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def replay_audit(path: Path) -> list[ElicitationResponse]:
    """Re-parse every logged elicitation response.

    Running the recorded payloads back through the parser must reproduce
    the responses the crawl saw, which makes remote runs auditable.
    """
    responses = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry.get("kind") != "elicit" or entry.get("status") != "ok":
                continue
            raw = entry["response_text"]
            triples = _force_subject(parse_elicitation_payload(raw), entry["subject"])
            responses.append(ElicitationResponse(triples=triples, raw_payload=raw))
    return responses


class RemoteChatGateway:
    """OpenAI-compatible chat-completions client with structured output."""

    def __init__(
        self,
        descriptor: BackendDescriptor,
        api_key: Optional[str] = None,
        audit_path: Optional[Path] = None,
        ner_batch_size: int = 100,
        template_dir: Optional[Path] = None,
        pool_size: int = 8,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
    ) -> None:
        if descriptor.kind != "remote":
            raise ValueError("RemoteChatGateway requires a 'remote' descriptor")
        if not descriptor.endpoint_url:
            raise ValueError("remote backend needs an endpoint_url")
        self.descriptor = descriptor
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not self.api_key:
            raise GatewayError(
                f"no API key: set the {API_KEY_ENV} environment variable"
            )
        self.audit = AuditLog(audit_path) if audit_path else None
        self.ner_batch_size = ner_batch_size
        self.template_dir = template_dir
        self._sleep = sleep
        self._backoff_base = backoff_base
        self.session = requests.Session()
        adapter = requests.adapters.HTTPAdapter(
            pool_connections=pool_size, pool_maxsize=pool_size
        )
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)

    def _post_chat(self, instruction: str, payload: str, schema_name: str, schema: dict) -> str:
        body = {
            "model": self.descriptor.model_id,
            "temperature": self.descriptor.temperature,
            "messages": [
                {"role": "system", "content": instruction},
                {"role": "user", "content": payload},
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": schema_name, "strict": True, "schema": schema},
            },
        }
        url = self.descriptor.endpoint_url.rstrip("/") + "/chat/completions"
        try:
            resp = self.session.post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.descriptor.request_timeout_seconds,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimitedError("rate limited by backend")
        if resp.status_code >= 400:
            raise TransportError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedOutputError(f"unexpected completion envelope: {exc}") from exc

    def _with_retries(self, fn: Callable[[], object]) -> object:
        attempts = self.descriptor.max_retries + 1
        last: Exception = GatewayError("no attempt made")
        for attempt in range(attempts):
            try:
                return fn()
            except (RateLimitedError, TransportError, MalformedOutputError) as exc:
                last = exc
                if attempt < attempts - 1:
                    delay = self._backoff_base * (2**attempt) * (1 + random.random() * 0.1)
                    if isinstance(exc, (RateLimitedError, TransportError)):
                        self._sleep(delay)
        raise last

    def elicit(self, req: ElicitationRequest) -> ElicitationResponse:
        instruction = render_elicitation_prompt(req.topic, req.language, self.template_dir)

        def attempt() -> ElicitationResponse:
            content = self._post_chat(instruction, req.subject, "elicitation_triples", ELICITATION_SCHEMA)
            triples = parse_elicitation_payload(content)
            return ElicitationResponse(
                triples=_force_subject(triples, req.subject), raw_payload=content
            )

        try:
            response = self._with_retries(attempt)
        except GatewayError as exc:
            if self.audit:
                self.audit.append(
                    {"kind": "elicit", "subject": req.subject, "status": type(exc).__name__, "error": str(exc)}
                )
            raise
        if self.audit:
            self.audit.append(
                {
                    "kind": "elicit",
                    "subject": req.subject,
                    "status": "ok",
                    "response_text": response.raw_payload,
                }
            )
        return response

    def classify_ner(self, req: NerRequest) -> NerResponse:
        instruction = render_ner_prompt(req.topic, req.language, self.template_dir)
        verdicts: list[bool] = []
        for start in range(0, len(req.phrases), self.ner_batch_size):
            batch = req.phrases[start : start + self.ner_batch_size]
            payload = "\n".join(batch)

            def attempt(batch=batch, payload=payload) -> list[bool]:
                content = self._post_chat(instruction, payload, "ner_verdicts", NER_SCHEMA)
                return parse_ner_payload(content, len(batch))

            try:
                batch_verdicts = self._with_retries(attempt)
            except MalformedOutputError as exc:
                # Conservative fallback: an unparseable batch stops expansion
                # instead of admitting unvetted phrases to the frontier.
                logger.warning("NER batch of %d defaulted to non-entity: %s", len(batch), exc)
                batch_verdicts = [False] * len(batch)
            if self.audit:
                self.audit.append(
                    {"kind": "ner", "phrases": batch, "status": "ok", "verdicts": batch_verdicts}
                )
            verdicts.extend(batch_verdicts)
        return NerResponse(verdicts=verdicts)


@dataclass
class SuffixLoopInjector:
    """Generates an unbounded family of entity names by appending syllables.

    Every subject in the family answers with one child per syllable, so the
    name tree grows without bound; names whose trailing syllable repeats are
    exactly what the crawler's repetition detector must contain.
    """

    root: str
    syllables: list[str] = field(default_factory=lambda: ["mu", "ma"])

    def in_domain(self, label: str) -> bool:
        if label == self.root:
            return True
        if not label.startswith(self.root + "-"):
            return False
        tail = label[len(self.root) + 1 :]
        return all(tok in self.syllables for tok in tail.split("-"))

    def children(self, label: str) -> list[str]:
        return [f"{label}-{syl}" for syl in self.syllables]


@dataclass
class QIdInjector:
    """Emits bare Q-identifier entities from one host subject."""

    host: str
    qids: list[str]


class MockWorldGateway:
    """Deterministic gateway backed by a world fixture file.

    The world maps each known subject to its facts and carries the ground
    truth of which phrases count as named entities. Identical requests get
    identical responses regardless of call order.
    """

    def __init__(self, world_path: Path, descriptor: Optional[BackendDescriptor] = None) -> None:
        self.world_path = Path(world_path)
        self.descriptor = descriptor or BackendDescriptor(kind="mock")
        world = json.loads(self.world_path.read_text(encoding="utf-8"))
        self.facts: dict[str, list[tuple[str, str]]] = {
            subject: [(p, o) for p, o in pairs] for subject, pairs in world.get("facts", {}).items()
        }
        self.entities: set[str] = set(world.get("entities", []))
        self.off_topic: set[str] = set(world.get("off_topic", []))
        injectors = world.get("injectors", {})
        self.suffix_loop: Optional[SuffixLoopInjector] = None
        if "suffix_loop" in injectors:
            cfg = injectors["suffix_loop"]
            self.suffix_loop = SuffixLoopInjector(
                root=cfg["root"], syllables=list(cfg.get("syllables", ["mu", "ma"]))
            )
        self.q_id: Optional[QIdInjector] = None
        if "q_id" in injectors:
            cfg = injectors["q_id"]
            self.q_id = QIdInjector(host=cfg["host"], qids=list(cfg["qids"]))

    def _is_entity(self, phrase: str) -> bool:
        if phrase in self.entities:
            return True
        if self.suffix_loop and self.suffix_loop.in_domain(phrase):
            return True
        if self.q_id and phrase in self.q_id.qids:
            return True
        return False

    def elicit(self, req: ElicitationRequest) -> ElicitationResponse:
        subject = req.subject
        triples: list[tuple[str, str, str]] = []
        if subject in self.off_topic:
            logger.warning("off-topic subject elicited: %r", subject)
        for p, o in self.facts.get(subject, []):
            triples.append((subject, p, o))
        if self.suffix_loop and self.suffix_loop.in_domain(subject):
            for child in self.suffix_loop.children(subject):
                triples.append((subject, "alsoKnownAs", child))
        if self.q_id and subject == self.q_id.host:
            for qid in self.q_id.qids:
                triples.append((subject, "relatedEntity", qid))
        payload = json.dumps(
            {"triples": [{"subject": s, "predicate": p, "object": o} for s, p, o in triples]},
            ensure_ascii=False,
        )
        return ElicitationResponse(triples=triples, raw_payload=payload)

    def classify_ner(self, req: NerRequest) -> NerResponse:
        return NerResponse(verdicts=[self._is_entity(p) for p in req.phrases])


def build_gateway(
    descriptor: BackendDescriptor,
    world_path: Optional[Path] = None,
    **remote_kwargs,
):
    if descriptor.kind == "mock":
        if world_path is None:
            raise ValueError("mock backend requires a world file path")
        return MockWorldGateway(world_path, descriptor)
    return RemoteChatGateway(descriptor, **remote_kwargs)
