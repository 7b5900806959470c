"""Relation ingestion, target sampling, and negative resampling."""

import collections

import numpy as np
import pytest

from gaussembed.corpus import build_sampling_tables, build_vocabulary
from gaussembed.relations import (
    DEFAULT_RELATION_WHITELIST,
    NO_RELATION,
    SENTINEL_WORD,
    load_relations,
    resample_negatives,
    sample_target,
    sample_targets_block,
)


@pytest.fixture
def vocab():
    words = "cat dog animal pet oak tree plant good fine run running"
    return build_vocabulary([(words + " ") * 3], min_count=1)


def write_tsv(path, rows):
    path.write_text("".join(f"{r}\t{a}\t{b}\n" for r, a, b in rows), encoding="utf-8")
    return str(path)


class TestLoadRelations:
    def test_single_isa_triple(self, tmp_path, vocab):
        path = write_tsv(tmp_path / "r.tsv", [("IsA", "cat", "animal")])
        store, report = load_relations(path, vocab)
        assert store.entries(vocab.id_of["cat"]) == [("IsA", vocab.id_of["animal"])]
        assert report.kept == 1 and report.drop_oov == 0

    def test_isa_is_directional(self, tmp_path, vocab):
        path = write_tsv(tmp_path / "r.tsv", [("IsA", "cat", "animal")])
        store, _ = load_relations(path, vocab)
        assert store.entries(vocab.id_of["animal"]) == []

    def test_symmetric_relations_are_mirrored(self, tmp_path, vocab):
        path = write_tsv(tmp_path / "r.tsv", [("Synonym", "good", "fine")])
        store, report = load_relations(path, vocab)
        assert store.entries(vocab.id_of["good"]) == [("Synonym", vocab.id_of["fine"])]
        assert store.entries(vocab.id_of["fine"]) == [("Synonym", vocab.id_of["good"])]
        assert report.kept == 1

    def test_oov_endpoint_dropped(self, tmp_path, vocab):
        path = write_tsv(tmp_path / "r.tsv", [("IsA", "cat", "zyzzyva")])
        store, report = load_relations(path, vocab)
        assert store.n_edges == 0
        assert report.drop_oov == 1

    def test_off_whitelist_dropped(self, tmp_path, vocab):
        path = write_tsv(tmp_path / "r.tsv", [("UsedFor", "cat", "pet")])
        _, report = load_relations(path, vocab)
        assert report.drop_rel == 1 and report.kept == 0

    def test_malformed_lines_counted(self, tmp_path, vocab):
        path = tmp_path / "r.tsv"
        path.write_bytes(
            b"IsA\tcat\tanimal\n"
            b"not a tsv line\n"
            b"IsA\tcat\n"
            b"\n"
            b"IsA\tcat\tanimal\textra\n"
            b"IsA\t\xff\xfe\tanimal\n"  # invalid utf-8
        )
        store, report = load_relations(str(path), vocab)
        assert report.kept == 1
        # short line / too few fields / empty / too many fields / bad utf-8
        assert report.drop_malformed == 5
        assert store.n_edges == 1

    def test_duplicates_collapse_to_one_edge(self, tmp_path, vocab):
        rows = [("IsA", "cat", "animal")] * 3
        store, report = load_relations(write_tsv(tmp_path / "r.tsv", rows), vocab)
        assert report.kept == 3
        assert store.entries(vocab.id_of["cat"]) == [("IsA", vocab.id_of["animal"])]

    def test_idempotent(self, tmp_path, vocab):
        rows = [("IsA", "cat", "animal"), ("Synonym", "good", "fine"), ("FormOf", "running", "run")]
        path = write_tsv(tmp_path / "r.tsv", rows)
        s1, r1 = load_relations(path, vocab)
        s2, r2 = load_relations(path, vocab)
        assert r1.as_line() == r2.as_line()
        for w in range(len(vocab)):
            assert s1.entries(w) == s2.entries(w)

    def test_report_line_format(self, tmp_path, vocab):
        rows = [("IsA", "cat", "animal"), ("IsA", "cat", "zyzzyva"), ("UsedFor", "cat", "pet")]
        _, report = load_relations(write_tsv(tmp_path / "r.tsv", rows), vocab)
        assert report.as_line() == "kept=1 drop_oov=1 drop_rel=1 drop_malformed=0"

    def test_kept_dropped_counts_match_filter_oracle(self, tmp_path, vocab):
        rng = np.random.default_rng(9)
        all_rels = sorted(DEFAULT_RELATION_WHITELIST) + ["UsedFor", "PartOf"]
        words = list(vocab.words) + ["oovword", "missing"]
        rows = [
            (
                all_rels[int(rng.integers(0, len(all_rels)))],
                words[int(rng.integers(0, len(words)))],
                words[int(rng.integers(0, len(words)))],
            )
            for _ in range(1000)
        ]
        path = write_tsv(tmp_path / "big.tsv", rows)
        _, report = load_relations(path, vocab)

        kept = oov = rel = 0
        for r, a, b in rows:
            if r not in DEFAULT_RELATION_WHITELIST:
                rel += 1
            elif a not in vocab.id_of or b not in vocab.id_of:
                oov += 1
            else:
                kept += 1
        assert (report.kept, report.drop_oov, report.drop_rel, report.drop_malformed) == (
            kept, oov, rel, 0,
        )

    def test_sentinel_id_is_outside_vocab(self, tmp_path, vocab):
        store, _ = load_relations(write_tsv(tmp_path / "r.tsv", []), vocab)
        assert store.sentinel_id == len(vocab)
        assert store.sentinel_id not in vocab.id_of.values()
        assert SENTINEL_WORD not in vocab


class TestSampleTarget:
    def test_no_entries_gives_sentinel(self, tmp_path, vocab):
        store, _ = load_relations(write_tsv(tmp_path / "r.tsv", []), vocab)
        tag, target = sample_target(store, vocab.id_of["cat"], "all", np.random.default_rng(0))
        assert (tag, target) == (NO_RELATION, store.sentinel_id)

    def test_sole_isa_entry_always_returned(self, tmp_path, vocab):
        rows = [("IsA", "cat", "animal"), ("Synonym", "cat", "pet")]
        store, _ = load_relations(write_tsv(tmp_path / "r.tsv", rows), vocab)
        rng = np.random.default_rng(1)
        for _ in range(50):
            tag, target = sample_target(store, vocab.id_of["cat"], "isa", rng)
            assert tag == "IsA" and target == vocab.id_of["animal"]

    def test_isa_mode_never_returns_other_tags(self, tmp_path, vocab):
        rows = [("Synonym", "cat", "pet"), ("FormOf", "running", "run")]
        store, _ = load_relations(write_tsv(tmp_path / "r.tsv", rows), vocab)
        rng = np.random.default_rng(2)
        for word in ("cat", "pet", "running"):
            tag, target = sample_target(store, vocab.id_of[word], "isa", rng)
            assert tag == NO_RELATION and target == store.sentinel_id

    def test_uniform_over_three_entries(self, tmp_path, vocab):
        rows = [("IsA", "cat", "animal"), ("Synonym", "cat", "pet"), ("SimilarTo", "cat", "dog")]
        store, _ = load_relations(write_tsv(tmp_path / "r.tsv", rows), vocab)
        rng = np.random.default_rng(3)
        n = 100_000
        counts = collections.Counter(
            sample_target(store, vocab.id_of["cat"], "all", rng)[1] for _ in range(n)
        )
        assert len(counts) == 3
        p = 1.0 / 3.0
        bound = 3.0 * np.sqrt(n * p * (1 - p))
        for c in counts.values():
            assert abs(c - n * p) <= bound

    def test_block_sampler_matches_distribution(self, tmp_path, vocab):
        rows = [("IsA", "cat", "animal"), ("Synonym", "cat", "pet")]
        store, _ = load_relations(write_tsv(tmp_path / "r.tsv", rows), vocab)
        rng = np.random.default_rng(4)
        ids = np.full(50_000, vocab.id_of["cat"], dtype=np.int32)
        out = sample_targets_block(store, ids, "all", rng)
        counts = collections.Counter(out.tolist())
        assert set(counts) == {vocab.id_of["animal"], vocab.id_of["pet"]}
        n, p = len(ids), 0.5
        for c in counts.values():
            assert abs(c - n * p) <= 3.0 * np.sqrt(n * p * (1 - p))
        # words with no entries get the sentinel
        none = sample_targets_block(
            store, np.full(10, vocab.id_of["oak"], dtype=np.int32), "all", rng
        )
        assert np.all(none == store.sentinel_id)


class TestResampleNegatives:
    def test_degenerate_vocabulary_returns_sole_word(self):
        solo = build_vocabulary(["solo solo"], min_count=1)
        tables = build_sampling_tables(solo, table_size=4)
        out = resample_negatives(tables, 3, (0, 0), np.random.default_rng(0))
        assert list(out) == [0, 0, 0]

    def test_avoids_excluded_when_alternatives_exist(self, vocab):
        tables = build_sampling_tables(vocab, table_size=10_000)
        rng = np.random.default_rng(1)
        w, e = vocab.id_of["cat"], vocab.id_of["animal"]
        for _ in range(200):
            out = resample_negatives(tables, 5, (w, e), rng)
            assert w not in out and e not in out

    def test_draw_distribution(self, vocab):
        tables = build_sampling_tables(vocab, table_size=1_000_000)
        rng = np.random.default_rng(2)
        n = 200_000
        # Exclusions never collide here, so draws follow the table weights.
        out = resample_negatives(tables, 5, (len(vocab) + 5, len(vocab) + 6), rng)
        draws = np.concatenate(
            [resample_negatives(tables, 5, (len(vocab) + 5, len(vocab) + 6), rng)
             for _ in range(n // 5)]
        )
        got = np.bincount(draws, minlength=len(vocab)).astype(float)
        weights = vocab.counts.astype(float) ** 0.75
        probs = weights / weights.sum()
        m = len(draws)
        sigma = np.sqrt(m * probs * (1 - probs))
        assert np.all(np.abs(got - m * probs) <= 3.0 * sigma + 1.0)
        assert len(out) == 5
