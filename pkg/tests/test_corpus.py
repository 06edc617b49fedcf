"""Dataset parsing, dev splitting, statistics, and external file loading."""
from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asas.corpus import (
    ColumnMap,
    PromptCorpus,
    ScoredResponse,
    build_corpus,
    corpus_stats,
    dump_logprobs,
    load_embeddings,
    load_logprobs,
    parse_dataset,
    parse_score_table,
    prompt_seed,
    serialize_dataset,
    split_dev,
)
from asas.errors import (
    DimMismatch,
    DuplicateId,
    EmptyInput,
    HeaderMismatch,
    MalformedRow,
    MissingSecondRead,
    NonIntegerScore,
    RowLengthMismatch,
    UnknownResponseId,
)
from conftest import make_toy_responses, requires_dataset
from oracles import qwk_exact

HEADER = "Id\tEssaySet\tScore1\tScore2\tEssayText"


class TestParseDataset:
    def test_single_row(self):
        rows = parse_dataset(f"{HEADER}\n1\t1\t1\t1\tSome answer\n")
        assert rows == [
            ScoredResponse(id="1", prompt_id=1, text="Some answer", score1=1, score2=1)
        ]

    def test_empty_after_header(self):
        assert parse_dataset(f"{HEADER}\n") == []

    def test_missing_scores_map_to_none(self):
        rows = parse_dataset(f"{HEADER}\n9\t2\t\t\tno reads yet\n")
        assert rows[0].score1 is None and rows[0].score2 is None

    def test_wrong_field_count(self):
        with pytest.raises(MalformedRow):
            parse_dataset(f"{HEADER}\n1\t1\t1\tmissing a field\n")

    def test_non_integer_score(self):
        with pytest.raises(NonIntegerScore):
            parse_dataset(f"{HEADER}\n1\t1\tx\t1\ttext\n")

    def test_duplicate_id_within_prompt(self):
        body = f"{HEADER}\n1\t1\t0\t0\ta\n1\t1\t1\t1\tb\n"
        with pytest.raises(DuplicateId):
            parse_dataset(body)

    def test_same_id_in_different_prompts_is_fine(self):
        rows = parse_dataset(f"{HEADER}\n1\t1\t0\t0\ta\n1\t2\t1\t1\tb\n")
        assert len(rows) == 2

    def test_missing_column(self):
        with pytest.raises(HeaderMismatch):
            parse_dataset("Id\tScore1\n1\t2\n")

    def test_leading_comment_lines_are_skipped(self):
        rows = parse_dataset(f"#asas\tversion=0\n{HEADER}\n1\t1\t1\t\tok\n")
        assert rows[0].id == "1"

    def test_custom_column_map(self):
        cols = ColumnMap(id="rid", prompt="set", score1="s1", score2="s2", text="answer")
        rows = parse_dataset("rid\tset\ts1\ts2\tanswer\n7\t3\t2\t\thello\n", cols)
        assert rows[0].prompt_id == 3 and rows[0].score1 == 2

    def test_unlabeled_file_via_empty_score_columns(self):
        cols = ColumnMap(score1="", score2="")
        rows = parse_dataset("Id\tEssaySet\tEssayText\n5\t1\tan answer\n", cols)
        assert rows[0].score1 is None and rows[0].score2 is None
        assert rows[0].text == "an answer"

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 10_000),
                st.integers(1, 10),
                st.one_of(st.none(), st.integers(0, 3)),
                st.one_of(st.none(), st.integers(0, 3)),
                st.text(
                    alphabet=st.characters(
                        blacklist_characters="\t\n\r#", blacklist_categories=("Cs",)
                    ),
                    max_size=40,
                ),
            ),
            max_size=20,
            unique_by=lambda t: t[0],
        )
    )
    @settings(max_examples=100)
    def test_serialize_parse_round_trip(self, rows):
        responses = [
            ScoredResponse(id=str(i), prompt_id=p, text=t, score1=s1, score2=s2)
            for i, p, s1, s2, t in rows
        ]
        assert parse_dataset(serialize_dataset(responses)) == responses


class TestSplitDev:
    def test_reproduces_published_set_sizes(self):
        responses = make_toy_responses(n=1672, seed=0)
        train, dev = split_dev(responses, dev_fraction=0.2005, seed=0)
        assert (len(train), len(dev)) == (1337, 335)

    def test_same_seed_same_partition(self):
        responses = make_toy_responses(n=10)
        first = split_dev(responses, 0.2, seed=123)
        second = split_dev(responses, 0.2, seed=123)
        assert first == second

    def test_matches_reference_shuffle_for_two_seeds(self):
        responses = make_toy_responses(n=5)
        for seed in (1, 2):
            rng = random.Random(seed)
            order = list(range(5))
            for i in range(4, 0, -1):
                j = rng.randrange(i + 1)
                order[i], order[j] = order[j], order[i]
            dev_idx = set(order[: round(0.2 * 5)])
            train, dev = split_dev(responses, 0.2, seed=seed)
            assert [r.id for r in dev] == [
                r.id for i, r in enumerate(responses) if i in dev_idx
            ]
            assert [r.id for r in train] == [
                r.id for i, r in enumerate(responses) if i not in dev_idx
            ]

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            split_dev([], 0.2, seed=0)

    def test_bad_fraction(self):
        responses = make_toy_responses(n=4)
        with pytest.raises(ValueError):
            split_dev(responses, 0.0, seed=0)
        with pytest.raises(ValueError):
            split_dev(responses, 1.0, seed=0)

    @given(
        n=st.integers(1, 60),
        fraction=st.floats(0.01, 0.99),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=150)
    def test_partition_property(self, n, fraction, seed):
        responses = make_toy_responses(n=n, seed=1)
        train, dev = split_dev(responses, fraction, seed)
        assert len(dev) == round(fraction * n)
        assert sorted(r.id for r in train + dev) == sorted(r.id for r in responses)
        assert not {r.id for r in train} & {r.id for r in dev}


class TestBuildCorpus:
    def test_derives_label_range(self):
        pool = [
            ScoredResponse(id=str(i), prompt_id=1, text="t", score1=s, score2=s2)
            for i, (s, s2) in enumerate([(1, 1), (2, 3), (3, 2), (1, None), (2, 2)])
        ]
        corpus = build_corpus(pool, prompt_id=1, dev_fraction=0.2, seed=0)
        assert corpus.num_classes == 3
        assert corpus.min_score == 1
        labels = corpus.labels(corpus.train)
        assert labels.min() >= 0 and labels.max() < 3

    def test_rejects_missing_score1(self):
        pool = [ScoredResponse(id="1", prompt_id=1, text="t", score1=None)]
        with pytest.raises(MalformedRow):
            build_corpus(pool, prompt_id=1)

    def test_rejects_unknown_prompt(self):
        pool = make_toy_responses(n=5, prompt_id=2)
        with pytest.raises(EmptyInput):
            build_corpus(pool, prompt_id=1)

    def test_rejects_test_ids_colliding_with_train(self):
        pool = make_toy_responses(n=10)
        with pytest.raises(DuplicateId):
            build_corpus(pool, prompt_id=1, test=pool[:2])

    def test_per_prompt_seed_helper(self):
        assert prompt_seed(7, 3) == 10


class TestCorpusStats:
    def _corpus(self, dev):
        return PromptCorpus(
            prompt_id=1, train=[], dev=dev, test=[], num_classes=3, min_score=0
        )

    def test_identical_reads(self):
        dev = [
            ScoredResponse(id=str(i), prompt_id=1, text="a b c", score1=s, score2=s)
            for i, s in enumerate([0, 1, 2, 1])
        ]
        stats = self._corpus(dev).train, corpus_stats(self._corpus(dev))
        assert stats[1].dev_qwk == 1.0
        assert stats[1].dev_accuracy == 1.0

    def test_three_response_dev_with_one_disagreement(self):
        dev = [
            ScoredResponse(id="a", prompt_id=1, text="one two three", score1=0, score2=0),
            ScoredResponse(id="b", prompt_id=1, text="one two", score1=1, score2=1),
            ScoredResponse(id="c", prompt_id=1, text="one", score1=2, score2=1),
        ]
        stats = corpus_stats(self._corpus(dev))
        assert stats.dev_qwk == pytest.approx(
            float(qwk_exact([0, 1, 2], [0, 1, 1], 3)), abs=1e-12
        )
        assert stats.dev_accuracy == pytest.approx(2 / 3)
        assert stats.avg_length == pytest.approx((3 + 2 + 1) / 3)
        assert (stats.n_train, stats.n_dev, stats.n_test) == (0, 3, 0)

    def test_missing_second_read(self):
        dev = [ScoredResponse(id="a", prompt_id=1, text="t", score1=0, score2=None)]
        with pytest.raises(MissingSecondRead):
            corpus_stats(self._corpus(dev))

    def test_length_ignores_surrounding_whitespace(self):
        dev = [
            ScoredResponse(id="a", prompt_id=1, text="one two", score1=0, score2=0),
            ScoredResponse(id="b", prompt_id=1, text="  one two  ", score1=1, score2=1),
        ]
        stats = corpus_stats(self._corpus(dev))
        assert stats.avg_length == pytest.approx(2.0)


class TestLoadLogprobs:
    def test_rows_renormalized(self):
        data = "#model=m\tprompt=1\tk=2\nr1\t-0.105\t-2.303\n"
        matrix = load_logprobs(data)
        row = matrix.rows["r1"]
        lse = math.log(math.exp(-0.105) + math.exp(-2.303))
        assert row == pytest.approx([-0.105 - lse, -2.303 - lse], abs=1e-12)
        assert abs(math.log(sum(math.exp(v) for v in row))) <= 1e-6

    def test_zero_row_becomes_uniform(self):
        matrix = load_logprobs("#model=m\tprompt=1\tk=2\nr1\t0\t0\n")
        assert matrix.rows["r1"] == pytest.approx([-math.log(2)] * 2)

    def test_row_length_mismatch(self):
        with pytest.raises(RowLengthMismatch):
            load_logprobs("#model=m\tprompt=1\tk=2\nr1\t0\t0\t0\n")

    def test_header_mismatch(self):
        with pytest.raises(HeaderMismatch):
            load_logprobs("model m k 2\nr1\t0\t0\n")
        with pytest.raises(HeaderMismatch):
            load_logprobs("#model=m\tprompt=1\n")

    def test_duplicate_id(self):
        data = "#model=m\tprompt=1\tk=2\nr1\t0\t0\nr1\t0\t-1\n"
        with pytest.raises(DuplicateId):
            load_logprobs(data)

    def test_unknown_response_id_against_corpus(self):
        pool = make_toy_responses(n=10, k=2)
        corpus = build_corpus(pool, prompt_id=1, dev_fraction=0.2, seed=0)
        good = "#model=m\tprompt=1\tk=2\n0\t0\t-1\n"
        assert load_logprobs(good, corpus).rows
        bad = "#model=m\tprompt=1\tk=2\nnope\t0\t-1\n"
        with pytest.raises(UnknownResponseId):
            load_logprobs(bad, corpus)

    def test_k_mismatch_against_corpus(self):
        pool = make_toy_responses(n=10, k=2)
        corpus = build_corpus(pool, prompt_id=1, dev_fraction=0.2, seed=0)
        with pytest.raises(HeaderMismatch):
            load_logprobs("#model=m\tprompt=1\tk=4\n0\t0\t0\t0\t0\n", corpus)

    @given(
        row=st.lists(st.floats(-30, 30), min_size=2, max_size=6),
        shift=st.floats(-100, 100),
    )
    @settings(max_examples=100)
    def test_shift_invariance(self, row, shift):
        k = len(row)
        def render(values):
            cells = "\t".join(repr(v) for v in values)
            return f"#model=m\tprompt=1\tk={k}\nr\t{cells}\n"
        base = load_logprobs(render(row)).rows["r"]
        shifted = load_logprobs(render([v + shift for v in row])).rows["r"]
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_dump_round_trip(self):
        data = "#model=m\tprompt=2\tk=3\nr1\t-0.1\t-3\t-4\nr2\t0\t0\t0\n"
        matrix = load_logprobs(data)
        again = load_logprobs(dump_logprobs(matrix))
        assert again.model_name == "m" and again.prompt_id == 2 and again.k == 3
        for rid in matrix.rows:
            assert again.rows[rid] == pytest.approx(matrix.rows[rid], abs=0)


class TestLoadEmbeddings:
    def test_dim_from_header(self):
        table = load_embeddings("#dim=4\nr1\t0\t0\t0\t0\n")
        assert table.dim == 4
        assert table.rows["r1"] == pytest.approx([0, 0, 0, 0])

    def test_sentence_vector_width_364(self):
        rng = np.random.default_rng(0)
        rows = "\n".join(
            f"r{i}\t" + "\t".join(repr(float(v)) for v in rng.normal(size=364))
            for i in range(3)
        )
        table = load_embeddings(f"#dim=364\n{rows}\n")
        assert table.dim == 364
        assert all(vec.shape == (364,) for vec in table.rows.values())

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            load_embeddings("#dim=4\nr1\t0\t0\t0\t0\t0\n")

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            load_embeddings("#dim=1\nr1\t0\nr1\t1\n")

    def test_bad_header(self):
        with pytest.raises(HeaderMismatch):
            load_embeddings("dim 4\n")


class TestScoreTable:
    def test_comma_and_tab(self):
        assert parse_score_table("id,essay_score\na,2\n", "id", "essay_score") == {"a": 2}
        assert parse_score_table("id\tessay_score\na\t2\n", "id", "essay_score") == {"a": 2}

    def test_case_insensitive_columns(self):
        assert parse_score_table("Id,Essay_Score\na,1\n", "id", "essay_score") == {"a": 1}


@requires_dataset
def test_real_prompt_5_statistics():
    from conftest import data_dir

    pool = parse_dataset((data_dir() / "train.tsv").read_bytes())
    corpus = build_corpus(pool, prompt_id=5, dev_fraction=0.2, seed=prompt_seed(7, 5))
    stats = corpus_stats(corpus)
    assert stats.dev_qwk == pytest.approx(0.935, abs=0.03)
    assert stats.dev_accuracy == pytest.approx(0.959, abs=0.03)
    assert abs(stats.avg_length - 28) <= 5
