import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggre.errors import ConfigurationError, DataError, LookupFailure, ParseError
from aggre.kg_store import (ContextIndex, KnowledgeGraph, Vocab, build_context_index,
                            load_dataset, load_directory)
from oracles import naive_contexts


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def labeled(kg, ctx, entity):
    i = kg.entity_vocab.id(entity)
    return [(kg.relation_vocab.label(r), kg.entity_vocab.label(e)) for r, e, _ in ctx.entity_context(i)]


def labeled_rel(kg, ctx, rel):
    j = kg.relation_vocab.id(rel)
    return [(kg.entity_vocab.label(h), kg.entity_vocab.label(t)) for h, t, _ in ctx.relation_context(j)]


class TestLoad:
    def test_simple_parse(self, tmp_path):
        train = write(tmp_path / "train.txt", ["A\tr1\tB", "B\tr2\tC"])
        kg = load_dataset(train)
        assert (kg.num_entities, kg.num_relations, len(kg.triples)) == (3, 2, 2)
        assert kg.entity_vocab.labels == ["A", "B", "C"]

    def test_duplicate_line_counted_once(self, tmp_path):
        train = write(tmp_path / "train.txt", ["A\tr1\tB", "A\tr1\tB"])
        kg = load_dataset(train)
        assert len(kg.triples) == 1
        assert kg.duplicates == 1

    def test_cross_split_duplicate_kept_in_train(self, tmp_path, caplog):
        train = write(tmp_path / "train.txt", ["A\tr1\tB"])
        test = write(tmp_path / "test.txt", ["A\tr1\tB", "B\tr1\tA"])
        kg = load_dataset(train, None, test)
        assert len(kg.split_ids("train")) == 1
        assert kg.split_triples("test").tolist() == [[1, 0, 0]]
        assert kg.cross_split_duplicates == 1
        assert "already present" in caplog.text

    def test_ids_follow_first_appearance_across_splits(self, tmp_path):
        train = write(tmp_path / "train.txt", ["B\tq\tA"])
        valid = write(tmp_path / "valid.txt", ["C\tp\tB"])
        test = write(tmp_path / "test.txt", ["D\tq\tC"])
        kg = load_dataset(train, valid, test)
        assert kg.entity_vocab.labels == ["B", "A", "C", "D"]
        assert kg.relation_vocab.labels == ["q", "p"]
        assert kg.splits.tolist() == [0, 1, 2]

    def test_blank_lines_skipped(self, tmp_path):
        train = write(tmp_path / "train.txt", ["", "A\tr\tB", "   "])
        assert len(load_dataset(train).triples) == 1

    def test_malformed_line_reports_line_number(self, tmp_path):
        train = write(tmp_path / "train.txt", ["A\tr1\tB", "A r1 B"])
        with pytest.raises(ParseError) as info:
            load_dataset(train)
        assert info.value.line_number == 2
        assert "train.txt:2" in str(info.value)

    def test_empty_train_is_configuration_error(self, tmp_path):
        train = write(tmp_path / "train.txt", [])
        with pytest.raises(ConfigurationError):
            load_dataset(train)

    def test_missing_file_named(self, tmp_path):
        write(tmp_path / "train.txt", ["A\tr\tB"])
        write(tmp_path / "test.txt", ["A\tr\tB"])
        with pytest.raises(DataError, match="valid.txt"):
            load_directory(tmp_path)

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(DataError):
            KnowledgeGraph(np.array([[0, 0, 5]]), np.array([0]), Vocab(["a"]), Vocab(["r"]))


class TestVocab:
    @given(st.lists(st.text(min_size=1), max_size=30))
    def test_round_trip(self, labels):
        vocab = Vocab(labels)
        for label in labels:
            assert vocab.label(vocab.id(label)) == label
        assert [vocab.id(lab) for lab in vocab.labels] == list(range(len(vocab)))

    def test_unknown_label_lists_prefix_matches(self):
        vocab = Vocab(["dog_1", "dog_2", "cat"])
        with pytest.raises(LookupFailure, match="dog_1"):
            vocab.id("dog_9")


class TestContextIndex:
    def test_three_triple_example(self, toy_kg, toy_ctx):
        assert labeled(toy_kg, toy_ctx, "A") == [("r1", "B"), ("r1", "C")]
        assert labeled(toy_kg, toy_ctx, "B") == [("r1", "A"), ("r2", "C")]
        assert labeled(toy_kg, toy_ctx, "C") == [("r2", "B"), ("r1", "A")]
        assert labeled_rel(toy_kg, toy_ctx, "r1") == [("A", "B"), ("A", "C")]
        assert labeled_rel(toy_kg, toy_ctx, "r2") == [("B", "C")]

    def test_self_loop_stored_once(self):
        kg = KnowledgeGraph.from_labeled([("A", "r1", "A")])
        ctx = build_context_index(kg)
        assert labeled(kg, ctx, "A") == [("r1", "A")]
        assert labeled_rel(kg, ctx, "r1") == [("A", "A")]

    def test_isolated_entity_has_empty_segment(self):
        kg = KnowledgeGraph.from_labeled([("A", "r", "B")], valid=[("X", "r", "A")])
        ctx = build_context_index(kg)
        x = kg.entity_vocab.id("X")
        assert ctx.entity_ctx_offsets[x] == ctx.entity_ctx_offsets[x + 1]

    def test_split_isolation(self):
        kg = KnowledgeGraph.from_labeled([("A", "r", "B")], valid=[("B", "r", "C")],
                                         test=[("C", "s", "A")])
        ctx = build_context_index(kg)
        train = set(kg.split_ids("train").tolist())
        assert set(ctx.entity_ctx_src.tolist()) <= train
        assert set(ctx.relation_ctx_src.tolist()) <= train
        wide = build_context_index(kg, ("train", "valid"))
        assert wide.num_relation_pairs == 2

    def test_directed_uses_inverse_slots(self, toy_kg):
        ctx = build_context_index(toy_kg, directed=True)
        assert ctx.num_relation_slots == 4
        b = toy_kg.entity_vocab.id("B")
        # (A, r1, B) reaches B through an incoming edge -> slot r1 + |R|
        assert ctx.entity_context(b)[0][0] == 0 + toy_kg.num_relations
        assert ctx.relation_context(0 + 2) == [(1, 0, 0), (2, 0, 2)]

    def test_restrict_drops_source_pairs(self, toy_kg, toy_ctx):
        sub = toy_ctx.restrict(exclude=[0])
        assert 0 not in sub.entity_ctx_src
        assert 0 not in sub.relation_ctx_src
        assert sub.num_entity_pairs == toy_ctx.num_entity_pairs - 2

    def test_restrict_cap(self, rng):
        rows = [("hub", f"r{i % 3}", f"n{i}") for i in range(20)]
        kg = KnowledgeGraph.from_labeled(rows)
        ctx = build_context_index(kg).restrict(cap=5, rng=rng)
        assert np.diff(ctx.entity_ctx_offsets).max() == 5
        assert np.diff(ctx.relation_ctx_offsets).max() == 5

    def test_bad_offsets_rejected(self):
        with pytest.raises(DataError):
            ContextIndex(1, 1, [0, 2], [0], [0], [0], [0, 0], [], [], [])

    def test_arrays_are_read_only(self, toy_ctx):
        with pytest.raises(ValueError):
            toy_ctx.entity_ctx_rel[0] = 1


@st.composite
def graphs(draw):
    ne = draw(st.integers(1, 6))
    nr = draw(st.integers(1, 3))
    rows = draw(st.lists(st.tuples(st.integers(0, ne - 1), st.integers(0, nr - 1),
                                   st.integers(0, ne - 1)), min_size=1, max_size=25))
    splits = draw(st.lists(st.sampled_from(["train", "valid", "test"]),
                           min_size=len(rows), max_size=len(rows)))
    splits[0] = "train"
    by = {s: [(f"e{h}", f"r{r}", f"e{t}") for (h, r, t), sp in zip(rows, splits) if sp == s]
          for s in ("train", "valid", "test")}
    return KnowledgeGraph.from_labeled(by["train"], by["valid"], by["test"])


class TestContextProperties:
    @settings(max_examples=60, deadline=None)
    @given(graphs())
    def test_matches_enumeration_and_counts(self, kg):
        ctx = build_context_index(kg)
        train = set(kg.split_ids("train").tolist())
        ent, rel = naive_contexts(kg.triples.tolist(), train)
        for i in range(kg.num_entities):
            assert ctx.entity_context(i) == ent.get(i, [])
        for j in range(kg.num_relations):
            assert ctx.relation_context(j) == rel.get(j, [])

        tr = kg.triples[sorted(train)]
        loops = int(np.sum(tr[:, 0] == tr[:, 2]))
        assert ctx.num_entity_pairs == 2 * (len(tr) - loops) + loops
        assert ctx.num_relation_pairs == len(tr)
        assert np.all(np.diff(ctx.entity_ctx_offsets) >= 0)
        assert set(ctx.entity_ctx_src.tolist()) <= train

    @settings(max_examples=60, deadline=None)
    @given(graphs())
    def test_each_triple_found_once_per_membership(self, kg):
        ctx = build_context_index(kg)
        for tid in kg.split_ids("train").tolist():
            h, r, t = kg.triples[tid].tolist()
            at_h = [p for p in ctx.entity_context(h) if p[2] == tid]
            at_t = [p for p in ctx.entity_context(t) if p[2] == tid]
            assert (r, t, tid) in at_h and (r, h, tid) in at_t
            assert len(at_h) == 1 and len(at_t) == 1
            assert [p for p in ctx.relation_context(r) if p[2] == tid] == [(h, t, tid)]
