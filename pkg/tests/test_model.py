import json

import pytest

from kbforge.model import (
    Caps,
    KnowledgeBase,
    RunConfig,
    StructuralCategory,
    TermKind,
    Triple,
    derive_categories,
    load_run,
    load_triples,
    make_triple,
    normalize_label,
    run_failed,
    save_run,
)
from kbforge.model import RunRecord, Termination

from conftest import build_fixture_kb


class TestNormalizeLabel:
    def test_strips_and_collapses_whitespace(self):
        assert normalize_label("  Temple   of\tMarduk ") == "Temple of Marduk"

    def test_preserves_case(self):
        assert normalize_label("Ishtar Gate") == "Ishtar Gate"

    def test_newlines_become_single_spaces(self):
        assert normalize_label("a\n\nb") == "a b"

    def test_empty_and_whitespace_only(self):
        assert normalize_label("") == ""
        assert normalize_label("   \t\n") == ""


class TestTriple:
    def test_rejects_empty_fields(self):
        with pytest.raises(ValueError):
            Triple(subject="", predicate="p", object="o", object_kind=TermKind.LITERAL, layer=0)
        with pytest.raises(ValueError):
            Triple(subject="s", predicate="p", object="o", object_kind=TermKind.LITERAL, layer=-1)

    def test_make_triple_normalizes(self):
        t = make_triple(" Hammurabi ", "ruled  Over", "Babylon\n", TermKind.NAMED_ENTITY, 0)
        assert t.key() == ("Hammurabi", "ruled Over", "Babylon")

    def test_flat_uses_unit_separator(self):
        t = make_triple("s", "p", "o", TermKind.LITERAL, 0)
        assert t.flat() == "s␟p␟o"

    def test_kind_codes_round_trip(self):
        assert TermKind.from_code("ne") is TermKind.NAMED_ENTITY
        assert TermKind.from_code("lit") is TermKind.LITERAL
        with pytest.raises(ValueError):
            TermKind.from_code("bogus")


class TestKnowledgeBase:
    def test_deduplicates_on_spo(self):
        kb = KnowledgeBase()
        first = make_triple("s", "p", "o", TermKind.LITERAL, 0)
        dupe = make_triple("s", "p", "o", TermKind.LITERAL, 3)
        assert kb.add(first) is True
        assert kb.add(dupe) is False
        assert len(kb) == 1
        assert kb.triples[0].layer == 0

    def test_contains_and_subjects(self):
        kb = build_fixture_kb()
        assert ("Hammurabi", "instanceOf", "King") in kb
        assert ("Hammurabi", "instanceOf", "Queen") not in kb
        assert "Tiamat" in kb.subjects()

    def test_layer_count(self):
        kb = build_fixture_kb()
        assert kb.layer_count == 4
        assert KnowledgeBase().layer_count == 0


class TestDeriveCategories:
    def test_empty_kb_all_empty(self):
        cats = derive_categories(KnowledgeBase())
        assert all(len(v) == 0 for v in cats.values())

    def test_fixture_hand_counts(self, fixture_kb):
        cats = derive_categories(fixture_kb)
        assert len(cats[StructuralCategory.NAMED_ENTITIES]) == 10
        assert cats[StructuralCategory.LITERALS] == {"1792 BC", "Title", "the primordial sea"}
        assert len(cats[StructuralCategory.PREDICATES]) == 8
        assert cats[StructuralCategory.CLASSES] == {"King", "City", "Deity", "Title", "Region"}
        assert len(cats[StructuralCategory.TRIPLES]) == 12

    def test_single_instance_of_gives_one_class(self):
        kb = KnowledgeBase()
        kb.add(make_triple("a", "instanceOf", "b", TermKind.NAMED_ENTITY, 0))
        cats = derive_categories(kb)
        assert cats[StructuralCategory.CLASSES] == {"b"}


class TestConfigs:
    def test_caps_validate(self):
        with pytest.raises(ValueError):
            Caps(max_layers=0).validate()
        Caps().validate()

    def test_run_config_validate(self):
        cfg = RunConfig(topic="babylon", seed_entity="Hammurabi")
        cfg.validate()
        with pytest.raises(ValueError):
            RunConfig(topic="babylon", seed_entity="   ").validate()
        with pytest.raises(ValueError):
            RunConfig(topic="babylon", seed_entity="x", temperature=3.0).validate()

    def test_config_dict_round_trip(self):
        cfg = RunConfig(
            topic="babylon",
            seed_entity="Hammurabi",
            temperature=0.5,
            caps=Caps(max_layers=7),
        )
        clone = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert clone == cfg


class TestPersistence:
    def _record(self, kb):
        return RunRecord(
            run_id="run-test",
            config=RunConfig(topic="babylon", seed_entity="Hammurabi"),
            kb=kb,
            termination=Termination.ORGANIC,
            wall_seconds=0.25,
            deepest_layer=3,
            started_at="2024-01-01T00:00:00+00:00",
            finished_at="2024-01-01T00:00:01+00:00",
        )

    def test_save_and_load_round_trip(self, tmp_path, fixture_kb):
        record = self._record(fixture_kb)
        save_run(record, tmp_path / "run")
        loaded = load_run(tmp_path / "run")
        assert loaded.run_id == "run-test"
        assert loaded.termination is Termination.ORGANIC
        assert loaded.deepest_layer == 3
        assert [t.key() for t in loaded.kb.triples] == [t.key() for t in fixture_kb.triples]
        assert [t.object_kind for t in loaded.kb.triples] == [
            t.object_kind for t in fixture_kb.triples
        ]

    def test_triples_file_has_no_timestamps(self, tmp_path, fixture_kb):
        save_run(self._record(fixture_kb), tmp_path / "run")
        rows = (tmp_path / "run" / "triples.ndjson").read_text(encoding="utf-8")
        for line in rows.splitlines():
            assert set(json.loads(line)) == {"s", "p", "o", "o_kind", "layer"}

    def test_load_triples_preserves_order(self, tmp_path, fixture_kb):
        save_run(self._record(fixture_kb), tmp_path / "run")
        triples = load_triples(tmp_path / "run" / "triples.ndjson")
        assert [t.key() for t in triples] == [t.key() for t in fixture_kb.triples]

    def test_run_failed_marker(self, tmp_path):
        assert run_failed(tmp_path) is None
        (tmp_path / "FAILED").write_text("boom\n", encoding="utf-8")
        assert run_failed(tmp_path) == "boom"
