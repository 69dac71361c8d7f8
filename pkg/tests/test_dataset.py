from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from medvqa_eval.dataset import (
    DuplicateIdError,
    MalformedRecordError,
    MissingFieldError,
    Modality,
    NormalizationRuleSet,
    QuestionType,
    Split,
    UnknownEnumError,
    classify_question,
    filter_samples,
    load_count_spec,
    load_manifest,
    normalize_question,
    save_manifest,
    validate_counts,
)
from medvqa_eval.fixtures import (
    benchmark_count_spec_records,
    build_benchmark_manifest,
    write_dataset_tree,
)
from medvqa_eval.records import write_records


def _record(i: int, **overrides) -> dict:
    rec = {
        "id": f"s{i}",
        "image": f"images/s{i}.png",
        "modality": "MRI",
        "organ": "lung",
        "question": "Is the lung healthy?",
        "answer": "No, the lung looks abnormal. There is an opacity in the upper lobe.",
        "split": "TRAIN",
    }
    rec.update(overrides)
    return rec


def _write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


class TestLoadManifest:
    def test_three_line_manifest_counts(self, tmp_path):
        path = _write_manifest(
            tmp_path / "m.jsonl",
            [_record(1), _record(2), _record(3, split="TEST")],
        )
        manifest = load_manifest(path)
        assert len(manifest) == 3
        assert manifest.counts_by_split() == {Split.TRAIN: 2, Split.TEST: 1}

    def test_unknown_modality_names_line(self, tmp_path):
        path = _write_manifest(
            tmp_path / "m.jsonl", [_record(1), _record(2, modality="PET")]
        )
        with pytest.raises(UnknownEnumError) as exc:
            load_manifest(path)
        assert "line 2" in str(exc.value)

    def test_duplicate_id(self, tmp_path):
        path = _write_manifest(
            tmp_path / "m.jsonl", [_record(1), _record(2, id="s1")]
        )
        with pytest.raises(DuplicateIdError):
            load_manifest(path)

    def test_missing_field(self, tmp_path):
        rec = _record(1)
        del rec["answer"]
        path = _write_manifest(tmp_path / "m.jsonl", [rec])
        with pytest.raises(MissingFieldError):
            load_manifest(path)

    def test_bad_json_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(_record(1)) + "\n{not json\n")
        with pytest.raises(MalformedRecordError) as exc:
            load_manifest(path)
        assert "line 2" in str(exc.value)

    def test_audio_must_be_wav(self, tmp_path):
        path = _write_manifest(tmp_path / "m.jsonl", [_record(1, audio="a.mp3")])
        with pytest.raises(MalformedRecordError):
            load_manifest(path)

    def test_open_answer_needs_two_sentences(self, tmp_path):
        rec = _record(
            1,
            question="What diseases are present?",
            question_type="OPEN",
            answer="Lung cancer",
        )
        path = _write_manifest(tmp_path / "m.jsonl", [rec])
        with pytest.raises(MalformedRecordError):
            load_manifest(path)

    def test_extra_fields_survive_round_trip(self, tmp_path):
        rec = _record(1, bbox=[1, 2, 3, 4])
        path = _write_manifest(tmp_path / "m.jsonl", [rec])
        manifest = load_manifest(path)
        assert manifest.samples[0].extra == {"bbox": [1, 2, 3, 4]}

    def test_round_trip_structural_equality(self, tmp_path):
        path = _write_manifest(
            tmp_path / "m.jsonl",
            [_record(1), _record(2, modality="x-ray", audio="q.wav")],
        )
        manifest = load_manifest(path)
        out = tmp_path / "out.jsonl"
        save_manifest(manifest, out)
        again = load_manifest(out, name=manifest.name)
        assert again == manifest

    def test_strict_mode_requires_images(self, tmp_path):
        path = _write_manifest(tmp_path / "m.jsonl", [_record(1)])
        with pytest.raises(MalformedRecordError):
            load_manifest(path, strict=True, dataset_root=tmp_path)

    def test_strict_mode_ok_when_images_exist(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "images" / "s1.png").write_bytes(b"png")
        path = _write_manifest(tmp_path / "m.jsonl", [_record(1)])
        manifest = load_manifest(path, strict=True, dataset_root=tmp_path)
        assert len(manifest) == 1


@pytest.fixture(scope="module")
def benchmark():
    return build_benchmark_manifest()


@pytest.fixture(scope="module")
def checks(tmp_path_factory):
    path = tmp_path_factory.mktemp("spec") / "counts.jsonl"
    write_records(path, benchmark_count_spec_records())
    return load_count_spec(path)


class TestValidateCounts:
    def test_benchmark_tallies_pass(self, benchmark, checks):
        report = validate_counts(benchmark, checks)
        assert report.ok
        by_check = {
            (r.check.check, r.check.split, r.check.modality): r for r in report.results
        }
        assert by_check[("total", None, None)].actual == 866
        assert by_check[("modality", None, Modality.MRI)].actual_pct == 22.4
        assert by_check[("modality", None, Modality.CT)].actual_pct == 16.5
        assert by_check[("modality", None, Modality.XRAY)].actual_pct == 61.1
        assert by_check[("split", Split.TRAIN, None)].actual == 716
        assert by_check[("split", Split.TEST, None)].actual == 150
        assert by_check[("split_modality", Split.TEST, Modality.CT)].actual == 21

    def test_moved_sample_fails_split_checks(self, benchmark, checks):
        samples = list(benchmark.samples)
        # move one TRAIN sample to TEST
        idx = next(i for i, s in enumerate(samples) if s.split is Split.TRAIN)
        from dataclasses import replace

        samples[idx] = replace(samples[idx], split=Split.TEST)
        moved = benchmark.with_samples(samples)
        report = validate_counts(moved, checks)
        assert not report.ok
        failing = {
            (r.check.check, r.check.split): r.actual - r.check.expected
            for r in report.results
            if not r.passed and r.check.check == "split"
        }
        assert failing == {("split", Split.TRAIN): -1, ("split", Split.TEST): 1}


class TestNormalizeQuestion:
    def test_whitespace_collapse(self):
        assert normalize_question("Is  the  lung healthy?") == "Is the lung healthy?"

    def test_abbreviation_expansion(self):
        rules = NormalizationRuleSet(abbreviation_map={"CT": "C T scan"})
        assert (
            normalize_question("Any lesions on the CT?", rules)
            == "Any lesions on the C T scan?"
        )

    def test_expansion_respects_word_boundaries(self):
        rules = NormalizationRuleSet(abbreviation_map={"CT": "C T"})
        assert normalize_question("doCTor", rules) == "doCTor"

    def test_number_spelling(self):
        assert (
            normalize_question("Are there 2 lesions?")
            == "Are there two lesions?"
        )

    def test_markup_stripped(self):
        assert normalize_question("Is the <b>lung</b> clear?") == "Is the lung clear?"

    def test_already_normalized_is_identical(self):
        text = "Is the lung healthy?"
        assert normalize_question(text) == text

    def test_rule_validation_rejects_self_triggering_maps(self):
        with pytest.raises(ValueError):
            NormalizationRuleSet(abbreviation_map={"CT": "CT scan"})
        with pytest.raises(ValueError):
            NormalizationRuleSet(abbreviation_map={"ct": "x", "CT": "y"})

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1))
    def test_idempotent_with_default_rules(self, text):
        once = normalize_question(text)
        if once:  # fully-whitespace input normalizes to the empty string
            assert normalize_question(once) == once


class TestClassifyQuestion:
    def test_leading_auxiliary_is_closed(self):
        assert classify_question("Is the lung healthy?") is QuestionType.CLOSED

    def test_enumerated_options_is_closed(self):
        assert (
            classify_question("Which organ is abnormal: liver or kidney?")
            is QuestionType.CLOSED
        )

    def test_free_form_is_open(self):
        assert (
            classify_question("What diseases are present in the image?")
            is QuestionType.OPEN
        )

    def test_or_inside_word_does_not_trigger(self):
        assert classify_question("What organ is shown?") is QuestionType.OPEN

    @given(st.sampled_from(list(QuestionType)), st.text(min_size=1).filter(str.strip))
    def test_override_always_wins(self, override, text):
        assert classify_question(text, override) is override


class TestFilterSamples:
    def test_test_split_count(self, benchmark):
        assert len(filter_samples(benchmark, lambda s: s.split is Split.TEST)) == 150

    def test_ct_and_test(self, benchmark):
        got = filter_samples(
            benchmark, lambda s: s.modality is Modality.CT and s.split is Split.TEST
        )
        assert len(got) == 21

    def test_always_false(self, benchmark):
        assert filter_samples(benchmark, lambda s: False) == []

    def test_order_is_stable(self, benchmark):
        got = filter_samples(benchmark, lambda s: s.split is Split.TEST)
        ids = [s.id for s in got]
        assert ids == sorted(ids, key=lambda i: [s.id for s in benchmark.samples].index(i))


def test_dataset_tree_written_images_resolve(tmp_path):
    manifest = build_benchmark_manifest()
    paths = write_dataset_tree(manifest, tmp_path, with_count_spec=True)
    loaded = load_manifest(paths["manifest"], strict=True, dataset_root=paths["root"])
    assert len(loaded) == 866
