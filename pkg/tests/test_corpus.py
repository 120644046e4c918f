"""Corpus generation: determinism, constructive guarantees, and the file format."""

import numpy as np
import pytest
from conftest import small_corpus_config

from glint.corpus import (
    REGION_TYPES,
    SKETCH_DIM,
    CorpusConfig,
    PageSpec,
    Region,
    TokenLayout,
    descriptor_path,
    generate_corpus,
    generate_descriptor,
    layout_features,
    load_corpus,
    parse_pattern,
    patch_feature_dim,
    pattern_satisfied,
    render_patch_features,
    save_corpus,
    validate_corpus,
)
from glint.errors import ConfigurationError

_HASH_MULT = 2654435761


def _page_2x2() -> PageSpec:
    layout = TokenLayout(2, 2)
    return PageSpec(
        page_id=0,
        n_rows=2,
        n_cols=2,
        regions=[
            Region("figure", 1, 0, 1, 1, [layout.content_base], word_count=5),
            Region("text", 0, 0, 1, 1, [layout.content_base + 1], word_count=10),
        ],
    )


class TestConfigValidation:
    def test_minimum_sizes(self):
        with pytest.raises(ConfigurationError):
            CorpusConfig(n_pages=5, n_queries=40)
        with pytest.raises(ConfigurationError):
            CorpusConfig(n_pages=40, n_queries=5)

    def test_grid_and_fraction_bounds(self):
        with pytest.raises(ConfigurationError):
            CorpusConfig(grid_rows=1)
        with pytest.raises(ConfigurationError):
            CorpusConfig(local_fraction=1.5)
        with pytest.raises(ConfigurationError):
            CorpusConfig(tokens_per_group=3)

    def test_vocab_must_cover_the_content_pool(self):
        # 4x4 structural ids end at 21; a pool below 3 groups is refused.
        with pytest.raises(ConfigurationError, match="vocab too small"):
            generate_corpus(small_corpus_config(vocab_size=44))


class TestTokenLayout:
    def test_offsets_partition_the_id_space(self):
        layout = TokenLayout(4, 4)
        assert layout.row_base == 5
        assert layout.col_base == 9
        assert layout.hgt_base == 13
        assert layout.wid_base == 17
        assert layout.content_base == 21

    def test_sketch_hash_is_injective_on_the_pool(self):
        base = TokenLayout(4, 4).content_base
        buckets = {(t * _HASH_MULT) % (2**32) % SKETCH_DIM for t in range(base, base + SKETCH_DIM)}
        assert len(buckets) == SKETCH_DIM


class TestGeneration:
    def test_determinism_is_byte_exact(self, tmp_path):
        cfg = small_corpus_config()
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_corpus(generate_corpus(cfg), a)
        save_corpus(generate_corpus(cfg), b)
        assert a.read_bytes() == b.read_bytes()
        assert descriptor_path(a).read_bytes() == descriptor_path(b).read_bytes()

    def test_seed_changes_the_corpus(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_corpus(generate_corpus(small_corpus_config(seed=3)), a)
        save_corpus(generate_corpus(small_corpus_config(seed=4)), b)
        assert a.read_bytes() != b.read_bytes()

    def test_requested_counts_are_met(self, small_corpus):
        cfg = small_corpus.config
        assert len(small_corpus.pages) == cfg.n_pages
        assert len(small_corpus.queries) == cfg.n_queries
        n_local = sum(1 for q in small_corpus.queries.values() if q.qtype == "local")
        assert n_local == round(cfg.n_queries * cfg.local_fraction)

    def test_referential_integrity(self, small_corpus):
        for q in small_corpus.queries.values():
            assert q.relevant_page_ids
            for pid in q.relevant_page_ids + q.distractor_page_ids:
                assert pid in small_corpus.pages

    def test_global_queries_separate_twin_from_distractor(self, small_corpus):
        layout = small_corpus.config.token_layout
        n_checked = 0
        for q in small_corpus.queries.values():
            if q.qtype != "global":
                continue
            clauses = parse_pattern(q.tokens, layout)
            assert clauses, "global query carries no structural clauses"
            for pid in q.relevant_page_ids:
                assert pattern_satisfied(small_corpus.pages[pid], clauses)
            for pid in q.distractor_page_ids:
                distractor = small_corpus.pages[pid]
                assert not pattern_satisfied(distractor, clauses)
                q_content = {t for t in q.tokens if t >= layout.content_base}
                assert q_content & distractor.content_token_set()
            n_checked += 1
        assert n_checked > 0

    def test_local_queries_are_decisive(self, small_corpus):
        n_checked = 0
        for q in small_corpus.queries.values():
            if q.qtype != "local":
                continue
            toks = set(q.tokens)
            host = q.relevant_page_ids[0]
            assert toks <= small_corpus.pages[host].content_token_set()
            for pid, page in small_corpus.pages.items():
                if pid != host:
                    assert not toks <= page.content_token_set()
            n_checked += 1
        assert n_checked > 0

    def test_content_tokens_recur_across_pages(self, small_corpus):
        # The shared pool keeps every content id in circulation, so held-out
        # pages reuse ids that the train split already exercises.
        layout = small_corpus.config.token_layout
        train = set()
        for pid in small_corpus.splits["train"].page_ids:
            train |= small_corpus.pages[pid].content_token_set()
        test_tokens = set()
        for pid in small_corpus.splits["test"].page_ids:
            test_tokens |= small_corpus.pages[pid].content_token_set()
        assert all(t >= layout.content_base for t in train | test_tokens)
        overlap = len(test_tokens & train) / len(test_tokens)
        assert overlap > 0.9

    def test_splits_partition_pages_and_queries(self, small_corpus):
        page_ids = [pid for s in small_corpus.splits.values() for pid in s.page_ids]
        query_ids = [qid for s in small_corpus.splits.values() for qid in s.query_ids]
        assert sorted(page_ids) == sorted(small_corpus.pages)
        assert sorted(query_ids) == sorted(small_corpus.queries)

    def test_split_queries_stay_inside_their_split(self, small_corpus):
        for split in small_corpus.splits.values():
            in_split = set(split.page_ids)
            for qid in split.query_ids:
                q = small_corpus.queries[qid]
                assert set(q.relevant_page_ids + q.distractor_page_ids) <= in_split

    def test_every_split_has_both_query_types(self, small_corpus):
        for name, split in small_corpus.splits.items():
            qtypes = {small_corpus.queries[qid].qtype for qid in split.query_ids}
            assert qtypes == {"local", "global"}, f"split {name} has {qtypes}"


class TestDescriptors:
    def test_structure_only(self, small_corpus):
        layout = small_corpus.config.token_layout
        for d in small_corpus.descriptors.values():
            assert d.tokens
            assert all(t < layout.content_base for t in d.tokens)

    def test_injective_in_both_directions(self, small_corpus):
        arrangement_to_desc = {}
        desc_to_arrangement = {}
        for pid, page in small_corpus.pages.items():
            desc = tuple(small_corpus.descriptors[pid].tokens)
            key = page.arrangement_key()
            assert arrangement_to_desc.setdefault(key, desc) == desc
            assert desc_to_arrangement.setdefault(desc, key) == key

    def test_reading_order_and_token_sequence(self):
        # Regions are serialized sorted by (row, col), five tokens each.
        desc = generate_descriptor(_page_2x2())
        assert desc.tokens == [0, 5, 7, 9, 11, 2, 6, 7, 9, 11]


class TestPatternParsing:
    def test_round_trip_with_content_interleaved(self):
        layout = TokenLayout(2, 2)
        tokens = [0, 5, 7, 13, 2, 6, 7]
        assert parse_pattern(tokens, layout) == [(0, 0, 0), (2, 1, 0)]

    def test_satisfaction_against_a_page(self):
        page = _page_2x2()
        assert pattern_satisfied(page, [(0, 0, 0)])
        assert pattern_satisfied(page, [(2, 1, 0), (0, 0, 0)])
        assert not pattern_satisfied(page, [(0, 1, 1)])


class TestPatchFeatures:
    def test_feature_dim(self):
        assert patch_feature_dim() == len(REGION_TYPES) + SKETCH_DIM + 2 == 71

    def test_hand_built_cell_rows(self):
        page = _page_2x2()
        feats = render_patch_features(page)
        assert feats.shape == (4, 71)
        # Cell (0, 0): text region, one content token, centered coordinates.
        tok = page.regions[1].content_tokens[0]
        bucket = (tok * _HASH_MULT) % (2**32) % SKETCH_DIM
        row = np.zeros(71)
        row[REGION_TYPES.index("text")] = 1.0
        row[len(REGION_TYPES) + bucket] = 1.0
        row[-2:] = [0.25, 0.25]
        np.testing.assert_array_equal(feats[0], row)
        # Cell (0, 1) is empty: zero type and sketch blocks, coordinates kept.
        empty = np.zeros(71)
        empty[-2:] = [0.25, 0.75]
        np.testing.assert_array_equal(feats[1], empty)

    def test_sketch_counts_multiplicity(self):
        layout = TokenLayout(2, 2)
        tok = layout.content_base
        page = PageSpec(0, 2, 2, [Region("table", 0, 0, 1, 1, [tok, tok], word_count=4)])
        feats = render_patch_features(page)
        bucket = (tok * _HASH_MULT) % (2**32) % SKETCH_DIM
        assert feats[0, len(REGION_TYPES) + bucket] == 2.0

    def test_corpus_cache_returns_consistent_shapes(self, small_corpus):
        pid = next(iter(small_corpus.pages))
        feats = small_corpus.patch_features(pid)
        cfg = small_corpus.config
        assert feats.shape == (cfg.grid_rows * cfg.grid_cols, patch_feature_dim())
        assert small_corpus.patch_features(pid) is feats


class TestLayoutFeatures:
    def test_hand_counts(self):
        page = PageSpec(
            0,
            4,
            4,
            [
                Region("text", 0, 0, 1, 1, [30], word_count=10),
                Region("text", 1, 0, 1, 1, [31], word_count=15),
                Region("figure", 2, 0, 1, 1, [32], word_count=5),
            ],
        )
        assert layout_features(page) == {
            "n_text": 2,
            "n_image": 1,
            "n_list": 0,
            "n_words": 30,
            "n_visual_elements": 1,
        }


class TestPageValidation:
    def test_overlapping_regions_rejected(self):
        page = PageSpec(
            0, 2, 2,
            [
                Region("text", 0, 0, 2, 1, [21], word_count=1),
                Region("table", 1, 0, 1, 1, [22], word_count=1),
            ],
        )
        with pytest.raises(ConfigurationError, match="overlapping"):
            page.validate()

    def test_region_outside_grid_rejected(self):
        page = PageSpec(0, 2, 2, [Region("text", 1, 1, 2, 1, [21], word_count=1)])
        with pytest.raises(ConfigurationError, match="outside"):
            page.validate()

    def test_unknown_region_type_rejected(self):
        page = PageSpec(0, 2, 2, [Region("banner", 0, 0, 1, 1, [21], word_count=1)])
        with pytest.raises(ConfigurationError, match="unknown region type"):
            page.validate()


class TestValidateCorpus:
    def test_unknown_qtype_detected(self, small_corpus):
        import copy

        broken = copy.deepcopy(small_corpus)
        qid = next(iter(broken.queries))
        broken.queries[qid].qtype = "fuzzy"
        with pytest.raises(ConfigurationError, match="unknown qtype"):
            validate_corpus(broken)

    def test_foreign_local_token_detected(self, small_corpus):
        import copy

        broken = copy.deepcopy(small_corpus)
        q = next(q for q in broken.queries.values() if q.qtype == "local")
        q.tokens = list(q.tokens) + [broken.config.vocab_size - 1]
        with pytest.raises(ConfigurationError, match="lacks some query tokens"):
            validate_corpus(broken)

    def test_descriptor_page_mismatch_detected(self, small_corpus):
        import copy

        broken = copy.deepcopy(small_corpus)
        del broken.descriptors[next(iter(broken.descriptors))]
        with pytest.raises(ConfigurationError, match="descriptor set"):
            validate_corpus(broken)

    def test_content_token_in_descriptor_detected(self, small_corpus):
        import copy

        broken = copy.deepcopy(small_corpus)
        pid = next(iter(broken.descriptors))
        broken.descriptors[pid].tokens = list(broken.descriptors[pid].tokens) + [
            broken.config.token_layout.content_base
        ]
        with pytest.raises(ConfigurationError, match="content tokens"):
            validate_corpus(broken)


class TestSerialization:
    def test_round_trip_preserves_everything(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        loaded = load_corpus(path, with_descriptors=True)
        assert loaded.config == small_corpus.config
        assert set(loaded.pages) == set(small_corpus.pages)
        for pid in small_corpus.pages:
            assert loaded.pages[pid] == small_corpus.pages[pid]
        assert loaded.queries == small_corpus.queries
        assert loaded.splits == small_corpus.splits
        assert loaded.descriptors == small_corpus.descriptors

    def test_descriptors_live_in_a_sibling_file(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        assert descriptor_path(path) == tmp_path / "corpus.desc.jsonl"
        assert descriptor_path(path).exists()

    def test_load_without_descriptors_leaves_them_unread(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        descriptor_path(path).unlink()
        loaded = load_corpus(path)
        assert loaded.descriptors is None

    def test_missing_descriptor_file_is_an_error_when_requested(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        descriptor_path(path).unlink()
        with pytest.raises(ConfigurationError, match="descriptors required"):
            load_corpus(path, with_descriptors=True)

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_corpus(tmp_path / "nope.jsonl")

    def test_invalid_json_reported_with_line(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        lines = path.read_text().splitlines()
        lines[3] = "{broken"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigurationError, match=":4:"):
            load_corpus(path)

    def test_missing_header_rejected(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[1:]) + "\n")
        with pytest.raises(ConfigurationError, match="header"):
            load_corpus(path)

    def test_wrong_schema_version_rejected(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace('"schema_version": 1', '"schema_version": 9')
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigurationError, match="schema_version"):
            load_corpus(path)

    def test_unknown_record_kind_rejected(self, small_corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        with open(path, "a") as fh:
            fh.write('{"kind": "blob"}\n')
        with pytest.raises(ConfigurationError, match="unknown record kind"):
            load_corpus(path)
