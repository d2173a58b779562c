import json
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from helpers import TableProvider, naive_ranking, unit
from ratatool.errors import DataError, TooFewCandidates, UnknownTool
from ratatool.llmclient import GenerationRecord
from ratatool.prefgen import (DEFAULT_EVAL_FRACTION, CandidateSet, Discard, PreferencePair, build_dataset,
                              build_pair, dump_pairs, group_candidates, rank_candidates)
from ratatool.retrieve import ToolIndex
from ratatool.tooldesc import STRATEGIES, DescriptionFormat, TaskDescription, canonical_text

TOOLS = {"A": unit((1, 0, 0)), "B": unit((0, 1, 0)), "C": unit((0, 0, 1))}
CANDIDATE_VECTORS = [(1.0, 0.0, 0.0), (0.1, 0.9, 0.3), (0.5, 0.6, 0.1), (0.2, 0.1, 0.9), (0.0, 1.0, 1.0)]


def task(tag, strategy="Greedy"):
    return TaskDescription(DescriptionFormat.JSON, f"in {tag}", f"proc {tag}", f"out {tag}", strategy)


def record(qid, tag, strategy, parsed=True):
    if not parsed:
        return GenerationRecord(qid, strategy, "garbage", parse_error="no JSON object")
    t = task(tag, strategy)
    return GenerationRecord(qid, strategy, t.raw, parsed=t)


def three_tool_index():
    return ToolIndex(list(TOOLS), list(TOOLS.values()), corpus_id="c", format="JSON", provider_id="table",
                     model_id="fixed")


def provider_for(tags_to_vectors):
    return TableProvider({canonical_text(task(tag)): vec for tag, vec in tags_to_vectors.items()})


def test_rank_candidates_against_oracle():
    tags = {f"c{i}": v for i, v in enumerate(CANDIDATE_VECTORS)}
    cset = CandidateSet("q", "A", [record("q", tag, s) for tag, s in zip(tags, STRATEGIES)])
    ranked = rank_candidates(cset, three_tool_index(), provider_for(tags))
    oracle = []
    for vec in CANDIDATE_VECTORS:
        order = [t for t, _ in naive_ranking(vec, list(TOOLS.items()))]
        oracle.append(order.index("A") + 1)
    assert oracle == [1, 3, 2, 2, 3]  # hand check: A scores 1, .1, .5, .2, 0
    assert [r for _, r in ranked] == oracle
    assert [c.strategy for c, _ in ranked] == list(STRATEGIES)


def test_rank_candidates_too_few():
    tags = {"c0": CANDIDATE_VECTORS[0]}
    recs = [record("q", "c0", STRATEGIES[0])] + [record("q", None, s, parsed=False) for s in STRATEGIES[1:]]
    with pytest.raises(TooFewCandidates):
        rank_candidates(CandidateSet("q", "A", recs), three_tool_index(), provider_for(tags))


def test_rank_candidates_unknown_gt():
    with pytest.raises(UnknownTool):
        rank_candidates(CandidateSet("q", "Z", []), three_tool_index(), provider_for({}))


def test_candidate_set_strategies_distinct():
    with pytest.raises(DataError):
        CandidateSet("q", "A", [record("q", "a", "Greedy"), record("q", "b", "Greedy")])


def ranked_list(ranks):
    return [(record("q", f"c{i}", STRATEGIES[i]), r) for i, r in enumerate(ranks)]


def test_build_pair_picks_first_best_and_reproducible():
    ranked = ranked_list([3, 1, 5, 1, 2])
    a = build_pair("q", ranked, 42)
    b = build_pair("q", ranked, 42)
    assert isinstance(a, PreferencePair)
    assert a.chosen == ranked[1][0].parsed  # candidate 2
    assert a.chosen_rank == 1
    assert a.rejected in {ranked[i][0].parsed for i in (0, 2, 3, 4)}
    assert a == b


def test_build_pair_rejected_is_uniform():
    ranked = ranked_list([3, 1, 5, 1, 2])
    rng = np.random.default_rng(42)
    counts = Counter()
    n = 10_000
    for _ in range(n):
        pair = build_pair("q", ranked, rng)
        counts[pair.rejected_strategy] += 1
    pool = [STRATEGIES[i] for i in (0, 2, 3, 4)]
    assert set(counts) == set(pool)
    for s in pool:
        assert abs(counts[s] / n - 0.25) <= 0.02
    assert chisquare([counts[s] for s in pool]).pvalue > 0.01


def test_build_pair_all_equal_discarded():
    out = build_pair("q", ranked_list([2, 2, 2, 2, 2]), 0)
    assert out == Discard("q", "all_equal")


def test_build_pair_two_candidates_forced():
    ranked = ranked_list([1, 4])
    for seed in range(5):
        pair = build_pair("q", ranked, seed)
        assert pair.chosen == ranked[0][0].parsed and pair.rejected == ranked[1][0].parsed
        assert (pair.chosen_rank, pair.rejected_rank) == (1, 4)


def test_build_pair_never_pairs_identical_text():
    same = record("q", "dup", "Greedy")
    beam = GenerationRecord("q", "Beam5", same.raw_output, parsed=task("dup", "Beam5"))
    other = record("q", "other", "SampleT07")
    for seed in range(20):
        pair = build_pair("q", [(same, 1), (beam, 1), (other, 3)], seed)
        assert pair.rejected_strategy.value == "SampleT07"


# -- dataset builds ----------------------------------------------------------

def two_tool_setup():
    index = ToolIndex(["G", "X"], [(1.0, 0.0), (0.0, 1.0)], corpus_id="c", format="JSON",
                      provider_id="table", model_id="fixed")
    provider = provider_for({"good": unit((0.9, 0.1)), "bad": unit((0.1, 0.9)), "meh": unit((0.2, 0.8))})
    return index, provider


def informative_set(qid):
    return CandidateSet(qid, "G", [record(qid, "good", "Greedy"), record(qid, "bad", "Beam5"),
                                   record(qid, "meh", "SampleT07")])


def flat_set(qid):
    return CandidateSet(qid, "G", [record(qid, "bad", "Greedy"), record(qid, "meh", "Beam5")])


def test_build_dataset_discards_all_equal():
    index, provider = two_tool_setup()
    sets = [flat_set(f"q{i}") if i in (3, 7) else informative_set(f"q{i}") for i in range(10)]
    train, held, report = build_dataset(sets, index, provider, seed=1, eval_fraction=0.0)
    assert len(train) == 8 and held == []
    assert report.pairs_emitted == 8
    assert report.sets_discarded_all_equal == 2
    assert report.pairs_emitted + report.sets_discarded_all_equal + report.sets_discarded_parse_failures == 10
    assert report.strategy_wins["Greedy"] == 8
    assert all(p.chosen_rank == 1 for p in train)


def test_build_dataset_counts_parse_failures():
    index, provider = two_tool_setup()
    broken = CandidateSet("qb", "G", [record("qb", "good", "Greedy"), record("qb", None, "Beam5", parsed=False)])
    _, _, report = build_dataset([informative_set("q0"), broken], index, provider, seed=0, eval_fraction=0.0)
    assert report.sets_discarded_parse_failures == 1
    assert report.unparsed_candidates == 1
    assert report.pairs_emitted == 1


def test_reference_split_counts():
    index, provider = two_tool_setup()
    sets = [informative_set(f"q{i:05d}") for i in range(3390)]
    train, held, report = build_dataset(sets, index, provider, seed=0, eval_fraction=DEFAULT_EVAL_FRACTION)
    assert (len(train), len(held)) == (2981, 409)
    assert {p.query_id for p in train}.isdisjoint({p.query_id for p in held})


def test_build_dataset_deterministic(tmp_path):
    index, provider = two_tool_setup()
    sets = [informative_set(f"q{i}") for i in range(40)]
    outs = []
    for name in ("a", "b"):
        train, held, _ = build_dataset(sets, index, provider, seed=9, eval_fraction=0.25)
        dump_pairs(train + held, tmp_path / f"{name}.jsonl")
        outs.append((tmp_path / f"{name}.jsonl").read_bytes())
    assert outs[0] == outs[1]
    train2, _, _ = build_dataset(sets, index, provider, seed=10, eval_fraction=0.25)
    assert [p.query_id for p in train2] != [p.query_id for p in build_dataset(sets, index, provider, 9, 0.25)[0]]


def test_pair_jsonl_schema(tmp_path):
    index, provider = two_tool_setup()
    train, _, _ = build_dataset([informative_set("q0")], index, provider, seed=0, eval_fraction=0.0)
    dump_pairs(train, tmp_path / "p.jsonl")
    rec = json.loads((tmp_path / "p.jsonl").read_text())
    assert set(rec) == {"query_id", "chosen", "rejected", "chosen_rank", "rejected_rank", "chosen_strategy",
                        "rejected_strategy"}
    assert set(rec["chosen"]) == {"input", "process", "output"}
    assert rec["chosen"]["process"] == "proc good"


def test_bad_eval_fraction():
    index, provider = two_tool_setup()
    with pytest.raises(DataError):
        build_dataset([], index, provider, seed=0, eval_fraction=1.0)


def test_group_candidates_orders_by_strategy():
    recs = [record("q1", "b", "SampleT10"), record("q2", "x", "Greedy"), record("q1", "a", "Greedy")]
    sets = group_candidates(recs, {"q1": "A", "q2": "B"})
    assert [s.query_id for s in sets] == ["q1", "q2"]
    assert [c.strategy.value for c in sets[0].candidates] == ["Greedy", "SampleT10"]
    with pytest.raises(DataError):
        group_candidates(recs, {"q1": "A"})
