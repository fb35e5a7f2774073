import json
import unicodedata

import pytest
from hypothesis import given, strategies as st

from reclaimnet.corpus import (
    CorpusError,
    Label,
    class_distribution,
    load_corpus,
    load_manifest,
    stratified_split,
    write_corpus,
    write_manifest,
)

from conftest import make_instance, make_labeled_corpus


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n", encoding="utf-8")


class TestLoadCorpus:
    def test_roundtrip(self, tmp_path):
        original = [
            make_instance(0, 0, tweet="plain tweet", bio="plain bio"),
            make_instance(1, 1, tweet="another tweet", bio=""),
        ]
        path = tmp_path / "corpus.jsonl"
        write_corpus(original, path)
        assert load_corpus(path) == original

    def test_label_token_variants(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_jsonl(
            path,
            [
                {"id": "a", "tweet": "t1", "bio": "b", "label": 0, "language": "IT"},
                {"id": "b", "tweet": "t2", "bio": "b", "label": "1", "language": "IT"},
                {"id": "c", "tweet": "t3", "bio": "b", "label": "non_reclamatory", "language": "it"},
                {"id": "d", "tweet": "t4", "bio": "b", "label": "RECLAMATORY", "language": "IT"},
            ],
        )
        labels = [inst.label for inst in load_corpus(path)]
        assert labels == [Label.NON_RECLAMATORY, Label.RECLAMATORY, Label.NON_RECLAMATORY, Label.RECLAMATORY]

    def test_missing_bio_becomes_empty(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_jsonl(path, [{"id": "a", "tweet": "t", "label": 1, "language": "ES"}])
        (inst,) = load_corpus(path)
        assert inst.bio == ""
        assert inst.language == "ES"

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError, match="not found"):
            load_corpus(tmp_path / "nope.jsonl")

    def test_bad_rows_reported_with_line_numbers(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            "\n".join(
                [
                    json.dumps({"id": "a", "tweet": "ok", "bio": "", "label": 0, "language": "IT"}),
                    "{not json",
                    json.dumps({"id": "b", "tweet": "x", "bio": "", "label": "maybe", "language": "IT"}),
                    json.dumps({"id": "a", "tweet": "dup", "bio": "", "label": 1, "language": "IT"}),
                    json.dumps({"id": "c", "tweet": "   ", "bio": "", "label": 1, "language": "IT"}),
                ]
            )
            + "\n",
            encoding="utf-8",
        )
        with pytest.raises(CorpusError) as exc_info:
            load_corpus(path)
        message = str(exc_info.value)
        assert "4 invalid record(s)" in message
        for fragment in ("line 2", "line 3", "line 4", "line 5", "duplicate id"):
            assert fragment in message

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "corpus.jsonl"
        path.write_text("", encoding="utf-8")
        with caplog.at_level("WARNING"):
            assert load_corpus(path) == []
        assert any("no instances" in record.message for record in caplog.records)

    def test_language_filter(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_jsonl(
            path,
            [
                {"id": "a", "tweet": "t", "bio": "", "label": 0, "language": "IT"},
                {"id": "b", "tweet": "t", "bio": "", "label": 0, "language": "ES"},
            ],
        )
        assert [i.id for i in load_corpus(path, language="es")] == ["b"]
        assert len(load_corpus(path)) == 2

    def test_nfc_normalization_no_lowercasing(self, tmp_path):
        decomposed = "Frocio é"  # e + combining acute
        path = tmp_path / "corpus.jsonl"
        write_jsonl(path, [{"id": "a", "tweet": decomposed, "bio": "", "label": 0, "language": "IT"}])
        (inst,) = load_corpus(path)
        assert inst.tweet == unicodedata.normalize("NFC", decomposed)
        assert inst.tweet.startswith("Frocio")  # casing preserved
        assert inst.tweet.endswith("é")


class TestClassDistribution:
    def test_italian_table_counts(self):
        corpus = make_labeled_corpus(879, 207)
        dist = class_distribution(corpus)
        assert dist[Label.NON_RECLAMATORY][0] == 879
        assert dist[Label.RECLAMATORY][0] == 207
        assert dist[Label.NON_RECLAMATORY][1] == pytest.approx(879 / 1086)
        assert dist[Label.NON_RECLAMATORY][1] == pytest.approx(0.8095, abs=2e-3)
        assert dist[Label.RECLAMATORY][1] == pytest.approx(0.1905, abs=2e-3)

    def test_spanish_table_counts(self):
        dist = class_distribution(make_labeled_corpus(743, 133, language="ES"))
        assert dist[Label.NON_RECLAMATORY][0] == 743
        assert dist[Label.RECLAMATORY][0] == 133
        assert dist[Label.NON_RECLAMATORY][1] == pytest.approx(0.8483, abs=2e-3)
        assert dist[Label.RECLAMATORY][1] == pytest.approx(0.1517, abs=2e-3)

    def test_fractions_sum_to_one(self):
        dist = class_distribution(make_labeled_corpus(33, 11))
        assert sum(f for _, f in dist.values()) == pytest.approx(1.0, abs=1e-9)

    def test_empty(self):
        assert class_distribution([]) == {}


def split_class_counts(instances):
    return {label: count for label, (count, _) in class_distribution(instances).items()}


class TestStratifiedSplit:
    def test_italian_scale_sizes(self):
        corpus = make_labeled_corpus(879, 207)
        split = stratified_split(corpus, seed=13)
        # Two-draw arithmetic: round(n * 0.7) to train, remainder halved.
        assert split_class_counts(split.train) == {Label.NON_RECLAMATORY: 615, Label.RECLAMATORY: 145}
        assert split_class_counts(split.validation) == {Label.NON_RECLAMATORY: 132, Label.RECLAMATORY: 31}
        assert split_class_counts(split.test) == {Label.NON_RECLAMATORY: 132, Label.RECLAMATORY: 31}
        assert (len(split.train), len(split.validation), len(split.test)) == (760, 163, 163)

    @pytest.mark.parametrize("counts", [(879, 207), (743, 133)])
    @pytest.mark.parametrize("seed", [0, 1, 99])
    def test_per_class_proportions_within_one_instance(self, counts, seed):
        corpus = make_labeled_corpus(*counts)
        total = len(corpus)
        global_fractions = {label: n / total for label, (n, _) in class_distribution(corpus).items()}
        split = stratified_split(corpus, seed=seed)
        for part in split.parts().values():
            counts_here = split_class_counts(part)
            for label, fraction in global_fractions.items():
                assert abs(counts_here.get(label, 0) - fraction * len(part)) <= 1.0

    def test_partition(self):
        corpus = make_labeled_corpus(50, 20)
        split = stratified_split(corpus, seed=3)
        all_ids = [i.id for part in split.parts().values() for i in part]
        assert len(all_ids) == len(corpus)
        assert set(all_ids) == {i.id for i in corpus}

    def test_deterministic_and_order_independent(self):
        corpus = make_labeled_corpus(40, 12)
        split_a = stratified_split(corpus, seed=5)
        split_b = stratified_split(list(reversed(corpus)), seed=5)
        for name in ("train", "validation", "test"):
            assert [i.id for i in split_a.parts()[name]] == [i.id for i in split_b.parts()[name]]
        split_c = stratified_split(corpus, seed=6)
        assert [i.id for i in split_a.train] != [i.id for i in split_c.train]

    def test_single_class_ratio_exact(self):
        corpus = [make_instance(i, 0) for i in range(100)]
        split = stratified_split(corpus, seed=1)
        assert (len(split.train), len(split.validation), len(split.test)) == (70, 15, 15)

    def test_minimum_class_size(self):
        corpus = make_labeled_corpus(10, 2)
        with pytest.raises(CorpusError, match="at least 3"):
            stratified_split(corpus, seed=0)

    def test_three_member_class_reaches_every_split(self):
        corpus = make_labeled_corpus(30, 3)
        split = stratified_split(corpus, seed=0)
        for part in split.parts().values():
            assert split_class_counts(part).get(Label.RECLAMATORY, 0) >= 1

    def test_bad_ratios(self):
        corpus = make_labeled_corpus(10, 10)
        with pytest.raises(ValueError, match="sum to 1"):
            stratified_split(corpus, ratios=(0.5, 0.2, 0.2), seed=0)
        with pytest.raises(ValueError):
            stratified_split(corpus, ratios=(0.8, 0.2), seed=0)

    @given(
        n_neg=st.integers(min_value=5, max_value=300),
        # A 3-member class is forced to 1/1/1 (one per split beats
        # proportional rounding); the bound below holds from 4 up.
        n_pos=st.integers(min_value=4, max_value=120),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_stratification_bound_property(self, n_neg, n_pos, seed):
        corpus = make_labeled_corpus(n_neg, n_pos)
        total = len(corpus)
        split = stratified_split(corpus, seed=seed)
        assert sum(len(p) for p in split.parts().values()) == total
        for part in split.parts().values():
            counts_here = split_class_counts(part)
            for label, (n, _) in class_distribution(corpus).items():
                assert abs(counts_here.get(label, 0) / len(part) - n / total) <= 1.0 / len(part) + 1e-12


class TestManifest:
    def test_roundtrip_and_byte_identical(self, tmp_path):
        corpus = make_labeled_corpus(40, 12)
        split = stratified_split(corpus, seed=21)
        path_a, path_b = tmp_path / "a.json", tmp_path / "b.json"
        write_manifest(split, path_a)
        write_manifest(stratified_split(corpus, seed=21), path_b)
        assert path_a.read_bytes() == path_b.read_bytes()

        loaded = load_manifest(path_a, corpus)
        assert loaded.seed == 21
        assert loaded.ratios == split.ratios
        for name in ("train", "validation", "test"):
            assert [i.id for i in loaded.parts()[name]] == [i.id for i in split.parts()[name]]

    def test_mismatched_corpus_rejected(self, tmp_path):
        corpus = make_labeled_corpus(20, 10)
        split = stratified_split(corpus, seed=2)
        path = tmp_path / "m.json"
        write_manifest(split, path)
        with pytest.raises(CorpusError, match="unknown ids"):
            load_manifest(path, corpus[:20])
        with pytest.raises(CorpusError, match="covers"):
            load_manifest(path, corpus + [make_instance(999, 0)])
