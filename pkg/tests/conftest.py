from pathlib import Path

import pytest

from kbforge.gateway import MockWorldGateway
from kbforge.model import Caps, KnowledgeBase, RunConfig, TermKind, Triple

import acceptance_log

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def babylon_world_path() -> Path:
    return DATA_DIR / "babylon_world.json"


@pytest.fixture
def loop_world_path() -> Path:
    return DATA_DIR / "loop_world.json"


@pytest.fixture
def babylon_gateway(babylon_world_path) -> MockWorldGateway:
    return MockWorldGateway(babylon_world_path)


@pytest.fixture
def babylon_config() -> RunConfig:
    return RunConfig(topic="babylon", seed_entity="Hammurabi", parallelism=2)


@pytest.fixture
def loop_config() -> RunConfig:
    return RunConfig(
        topic="babylon",
        seed_entity="Nabu-mukin-zeri",
        caps=Caps(max_layers=5),
        parallelism=2,
    )


# Twelve triples whose category memberships are easy to enumerate by hand:
# 10 named entities, 3 literals, 8 predicates, 5 classes ("Title" is both a
# class and a literal on purpose).
FIXTURE_ROWS = [
    ("Hammurabi", "instanceOf", "King", TermKind.NAMED_ENTITY, 0),
    ("Hammurabi", "ruledOver", "Babylon", TermKind.NAMED_ENTITY, 0),
    ("Hammurabi", "reignStart", "1792 BC", TermKind.LITERAL, 0),
    ("Babylon", "instanceOf", "City", TermKind.NAMED_ENTITY, 1),
    ("Babylon", "locatedIn", "Mesopotamia", TermKind.NAMED_ENTITY, 1),
    ("Babylon", "patronDeity", "Marduk", TermKind.NAMED_ENTITY, 1),
    ("Babylon", "onRiver", "Euphrates", TermKind.NAMED_ENTITY, 1),
    ("King", "instanceOf", "Title", TermKind.LITERAL, 1),
    ("Marduk", "instanceOf", "Deity", TermKind.NAMED_ENTITY, 2),
    ("Marduk", "defeated", "Tiamat", TermKind.NAMED_ENTITY, 2),
    ("Mesopotamia", "instanceOf", "Region", TermKind.NAMED_ENTITY, 2),
    ("Tiamat", "epithet", "the primordial sea", TermKind.LITERAL, 3),
]


def build_fixture_kb() -> KnowledgeBase:
    kb = KnowledgeBase()
    for s, p, o, kind, layer in FIXTURE_ROWS:
        kb.add(Triple(subject=s, predicate=p, object=o, object_kind=kind, layer=layer))
    kb.visited_subjects = kb.subjects()
    return kb


@pytest.fixture
def fixture_kb() -> KnowledgeBase:
    return build_fixture_kb()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance_log.RESULTS):
        status, description = acceptance_log.RESULTS[number]
        terminalreporter.write_line(f"CRITERION {number} {status}: {description}")
