"""Sanity checks for the generated fixture corpora, plus a guard that the
checked-in fixtures/ tree matches regeneration."""
import hashlib
from collections import Counter
from pathlib import Path

from namecountry import fixtures
from namecountry.core import name_key, register_taxonomy
from namecountry.extraction import NormalizationTable, build_labeled_corpus


def test_disjoint_corpus_alphabets_do_not_overlap():
    alphabets = list(fixtures.DISJOINT_ALPHABETS.values())
    for i, a in enumerate(alphabets):
        for b in alphabets[i + 1:]:
            assert not set(a) & set(b)


def test_disjoint_corpus_shape_and_determinism():
    corpus = fixtures.make_disjoint_corpus(per_country=30, seed=2)
    counts = Counter(r.label for r in corpus)
    assert counts == {c: 30 for c in fixtures.DISJOINT_ALPHABETS}
    assert len({r.key for r in corpus}) == len(corpus)
    for record in corpus:
        assert set(record.key.replace(" ", "")) <= set(
            fixtures.DISJOINT_ALPHABETS[record.label])
    again = fixtures.make_disjoint_corpus(per_country=30, seed=2)
    assert corpus == again


def test_head_tail_corpus_shape():
    corpus = fixtures.make_head_tail_corpus(head_per_country=40,
                                            tail_per_country=5, seed=0)
    counts = Counter(r.label for r in corpus)
    for country in fixtures.HEAD_COUNTRIES:
        assert counts[country] == 40
    for country in fixtures.TAIL_COUNTRIES:
        assert counts[country] == 5


def test_tail_test_set_disjoint_from_exclusions():
    corpus = fixtures.make_head_tail_corpus(head_per_country=20,
                                            tail_per_country=20, seed=0)
    exclude = [r.full_name for r in corpus]
    held_out = fixtures.make_tail_test_set(per_country=15, exclude=exclude)
    assert len(held_out) == 15 * len(fixtures.TAIL_COUNTRIES)
    taken = {name_key(n) for n in exclude}
    keys = [r.key for r in held_out]
    assert not taken & set(keys)
    assert len(set(keys)) == len(keys)


def test_extraction_case_table_is_consistent():
    assert len(fixtures.EXTRACTION_CASES) == 50
    ids = [case[0] for case in fixtures.EXTRACTION_CASES]
    assert len(set(ids)) == 50


def test_pipeline_affiliations_extract_back_to_corpus():
    fixture_tax = register_taxonomy(
        "fixture4", sorted(fixtures.DISJOINT_ALPHABETS))
    table = NormalizationTable.from_pairs(fixtures.PIPELINE_ALIASES.items())
    affiliations = fixtures.make_pipeline_affiliations()
    corpus, stats = build_labeled_corpus(affiliations, table, fixture_tax)
    assert stats.raw == sum(fixtures.PIPELINE_SIZES.values())
    assert stats.retained == stats.raw  # every row resolves and is unique
    expected = fixtures.make_disjoint_corpus(sizes=fixtures.PIPELINE_SIZES)
    assert {(r.key, r.label) for r in corpus} == \
        {(r.key, r.label) for r in expected}


def test_bias_records_shape():
    records = fixtures.make_bias_records(per_country=10)
    assert len(records) == 40
    incorrect = [r for r in records if not r["correct"]]
    assert len(incorrect) == 16  # 4 of 10 per country
    for record in incorrect:
        assert record["answered_name"] != record["gold_name"]
    for record in records:
        assert set(record) == {"gold_name", "answered_name", "correct"}


def test_checked_in_fixture_tree_matches_regeneration(tmp_path):
    fixtures.write_fixture_tree(tmp_path)
    checked_in = Path(__file__).resolve().parent.parent / "fixtures"
    regenerated = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                   for p in tmp_path.iterdir()}
    existing = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in checked_in.iterdir()}
    assert regenerated == existing
