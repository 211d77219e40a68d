"""Score filtering, uid selection, dedup, and mixture accounting tests."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_sample
from mmpack.curation import (
    AttachStats,
    CoverageStats,
    FilterStats,
    QualityScore,
    attach_scores,
    filter_by_threshold,
    load_score_table,
    load_uid_set,
    mixture_report,
    save_uid_set,
    select_by_uid_set,
    union_dedup,
)
from mmpack.errors import ContractViolation, StructuralError
from mmpack.ingest import Shard


def scored(uid: str, su: float):
    return make_sample(uid, scores={"su": su})


class TestFilterByThreshold:
    def test_boundary_is_inclusive(self):
        samples = [scored("a", 85), scored("b", 84), scored("c", 100)]
        kept = list(filter_by_threshold(samples, "su", 85))
        assert [s.uid for s in kept] == ["a", "c"]

    def test_threshold_zero_keeps_all_scored(self):
        samples = [scored(f"u{i}", i) for i in range(10)]
        assert list(filter_by_threshold(samples, "su", 0)) == samples

    def test_missing_metric_dropped_and_counted(self):
        samples = [scored("a", 90), make_sample("b"), scored("c", 10)]
        stats = FilterStats()
        kept = list(filter_by_threshold(samples, "su", 50, stats))
        assert [s.uid for s in kept] == ["a"]
        assert (stats.kept, stats.dropped, stats.missing) == (1, 1, 1)

    def test_brute_force_count_on_random_scores(self):
        rng = random.Random(11)
        samples = [scored(f"u{i}", rng.uniform(0, 100)) for i in range(1000)]
        threshold = 37.5
        expected = sum(1 for s in samples if s.scores["su"] >= threshold)
        assert len(list(filter_by_threshold(samples, "su", threshold))) == expected

    def test_idempotent_at_fixed_threshold(self):
        rng = random.Random(5)
        samples = [scored(f"u{i}", rng.uniform(0, 100)) for i in range(200)]
        once = list(filter_by_threshold(samples, "su", 60))
        assert list(filter_by_threshold(once, "su", 60)) == once

    @given(
        values=st.lists(st.floats(min_value=0, max_value=100, allow_nan=False), max_size=40),
        t1=st.floats(min_value=0, max_value=100),
        t2=st.floats(min_value=0, max_value=100),
    )
    def test_threshold_monotonicity(self, values, t1, t2):
        t1, t2 = min(t1, t2), max(t1, t2)
        samples = [scored(f"u{i}", v) for i, v in enumerate(values)]
        loose = {s.uid for s in filter_by_threshold(samples, "su", t1)}
        strict = {s.uid for s in filter_by_threshold(samples, "su", t2)}
        assert strict <= loose


class TestSelectByUidSet:
    def shards(self):
        return [
            Shard(0, [make_sample(u) for u in "abcde"]),
            Shard(1, [make_sample(u) for u in "fghij"]),
        ]

    def test_empty_keep(self):
        stats = CoverageStats()
        assert list(select_by_uid_set(self.shards(), set(), stats)) == []
        assert stats.matched == 0
        assert stats.keep_size == 0

    def test_keep_superset_is_identity(self):
        keep = set("abcdefghij") | {"extra"}
        out = list(select_by_uid_set(self.shards(), keep))
        assert [s.uid for s in out] == list("abcdefghij")

    def test_partial_selection_and_coverage(self):
        stats = CoverageStats()
        out = list(select_by_uid_set(self.shards(), {"c", "f", "q"}, stats))
        assert [s.uid for s in out] == ["c", "f"]
        assert stats.keep_size == 3
        assert stats.matched == 2
        assert stats.unmatched == {"q"}


class TestUnionDedup:
    def test_empty_first_stream(self):
        b = [make_sample("x"), make_sample("y"), make_sample("x", "dup")]
        out = list(union_dedup([], b))
        assert [s.uid for s in out] == ["x", "y"]

    def test_disjoint_streams_concatenate(self):
        a = [make_sample(f"a{i}") for i in range(3)]
        b = [make_sample(f"b{i}") for i in range(4)]
        assert len(list(union_dedup(a, b))) == 7

    def test_scaled_corpus_ratio(self):
        # 150 + 80 with 31 overlapping uids -> 199 unique samples.
        a = [make_sample(f"u{i:04d}") for i in range(150)]
        b = [make_sample(f"u{i:04d}") for i in range(119, 199)]
        assert len(b) == 80
        out = list(union_dedup(a, b))
        assert len(out) == 199
        assert len({s.uid for s in out}) == 199

    def test_first_stream_wins(self):
        a = [make_sample("u", "from a")]
        b = [make_sample("u", "from b")]
        out = list(union_dedup(a, b))
        assert out[0].caption == "from a"

    @given(
        a_ids=st.lists(st.integers(min_value=0, max_value=50), max_size=30),
        b_ids=st.lists(st.integers(min_value=0, max_value=50), max_size=30),
    )
    def test_output_uids_are_the_set_union(self, a_ids, b_ids):
        a = [make_sample(f"u{i}") for i in a_ids]
        b = [make_sample(f"u{i}") for i in b_ids]
        out = list(union_dedup(a, b))
        uids = [s.uid for s in out]
        assert len(uids) == len(set(uids))
        assert set(uids) == {f"u{i}" for i in a_ids} | {f"u{i}" for i in b_ids}

    @given(
        a_ids=st.sets(st.integers(min_value=0, max_value=200), max_size=60),
        b_ids=st.sets(st.integers(min_value=0, max_value=200), max_size=60),
    )
    def test_inclusion_exclusion_for_duplicate_free_inputs(self, a_ids, b_ids):
        a = [make_sample(f"u{i}") for i in sorted(a_ids)]
        b = [make_sample(f"u{i}") for i in sorted(b_ids)]
        out = list(union_dedup(a, b))
        assert len(out) == len(a_ids) + len(b_ids) - len(a_ids & b_ids)


class TestAttachScores:
    def test_empty_table_is_identity(self):
        samples = [make_sample("a"), make_sample("b")]
        assert list(attach_scores(samples, {})) == samples

    def test_single_row(self):
        out = list(attach_scores([make_sample("u1")], {"u1": [QualityScore("su", 90)]}))
        assert out[0].scores == {"su": 90.0}

    def test_new_value_overwrites_metric(self):
        sample = make_sample("u1", scores={"su": 10.0})
        out = list(attach_scores([sample], {"u1": [QualityScore("su", 90)]}))
        assert out[0].scores == {"su": 90.0}
        assert sample.scores == {"su": 10.0}  # input not mutated

    def test_unmatched_rows_counted(self):
        stats = AttachStats()
        table = {"u1": [QualityScore("su", 1)], "ghost": [QualityScore("su", 2)]}
        list(attach_scores([make_sample("u1")], table, stats))
        assert stats.attached == 1
        assert stats.unmatched_rows == 1

    def test_payload_preserved(self):
        sample = make_sample("u1")
        out = list(attach_scores([sample], {"u1": [QualityScore("itm", 5)]}))
        assert out[0].image.data is sample.image.data
        assert out[0].caption == sample.caption


class TestQualityScore:
    def test_mlm_metric_range_enforced(self):
        with pytest.raises(ContractViolation):
            QualityScore("su", 101)
        with pytest.raises(ContractViolation):
            QualityScore("itm", -0.5)

    def test_non_mlm_metric_unbounded(self):
        assert QualityScore("clip", 0.31).value == 0.31
        assert QualityScore("myscore", 1234.5).metric == "myscore"

    def test_metric_normalized_to_lowercase(self):
        assert QualityScore("SU", 85).metric == "su"


class TestMixtureReport:
    def test_single_source(self):
        report = mixture_report([("only", 100)])
        assert report.rows == [("only", 100.0, 1.0)]

    def test_two_source_corpus_fractions(self):
        report = mixture_report([("ccs", 8.5), ("datacomp", 19.9)])
        fractions = [round(f, 4) for _, _, f in report.rows]
        assert fractions == [0.2993, 0.7007]
        assert report.total == pytest.approx(28.4)

    def test_three_equal_sources(self):
        report = mixture_report([("a", 7), ("b", 7), ("c", 7)])
        for _, _, fraction in report.rows:
            assert fraction == pytest.approx(1 / 3)

    def test_fractions_sum_to_one(self):
        report = mixture_report([("a", 3), ("b", 11), ("c", 0.5), ("d", 97)])
        assert sum(f for _, _, f in report.rows) == pytest.approx(1.0, abs=1e-9)

    def test_negative_count_rejected(self):
        with pytest.raises(ContractViolation):
            mixture_report([("bad", -1)])

    def test_render_mentions_every_source(self):
        text = mixture_report([("alpha", 1), ("beta", 3)]).render()
        assert "alpha" in text and "beta" in text and "fraction" in text


class TestUidSetFiles:
    def test_text_round_trip(self, tmp_path):
        ids = {"a", "b", "longer-uid-0001"}
        path = tmp_path / "keep.txt"
        save_uid_set(ids, path)
        assert load_uid_set(path) == ids

    def test_binary_round_trip(self, tmp_path):
        ids = {f"u{i:05d}" for i in range(1000)} | {"ünïcode"}
        path = tmp_path / "keep.bin"
        save_uid_set(ids, path, binary=True)
        assert load_uid_set(path) == ids

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "keep.bin"
        save_uid_set({"abc", "def"}, path, binary=True)
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(StructuralError):
            load_uid_set(path)


class TestScoreTable:
    def test_load_and_attach(self, tmp_path):
        path = tmp_path / "scores.ndjson"
        rows = [
            {"uid": "u1", "su_score": 91.0, "itm_score": 40.0},
            {"uid": "u2", "su_score": 12.0},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        table = load_score_table(path)
        out = list(attach_scores([make_sample("u1"), make_sample("u2")], table))
        assert out[0].scores == {"su": 91.0, "itm": 40.0}
        assert out[1].scores == {"su": 12.0}

    def test_bad_row_names_line(self, tmp_path):
        path = tmp_path / "scores.ndjson"
        path.write_text('{"uid": "u1", "su_score": 50}\n{"su_score": 10}\n')
        with pytest.raises(StructuralError, match=":2"):
            load_score_table(path)


def test_binary_garbage_uid_file_rejected(tmp_path):
    path = tmp_path / "keep.bin"
    path.write_bytes(b"\xff\xfe\x00garbage\x80\x81")
    with pytest.raises(StructuralError):
        load_uid_set(path)
