import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmrec.dataset import Catalog, UserSequence, leave_one_out_split
from mmrec.errors import EmptyEvaluationError
from mmrec.evaluation import (
    MetricReport,
    average_precision,
    build_queries,
    constant_scorer,
    evaluate,
    hr_at_n,
    ndcg_at_n,
    oracle_scorer,
    rank_ground_truth,
    ranks_tsv,
)


def brute_rank(scores, gt=0):
    # sort descending; ties placed before the ground truth
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i == gt))
    return order.index(gt) + 1


def brute_ndcg(rank, n):
    # DCG of a single relevant item over the top-n list, ideal DCG 1
    gains = [1.0 if pos == rank else 0.0 for pos in range(1, n + 1)]
    return sum(g / math.log2(pos + 1) for pos, g in enumerate(gains, start=1))


def brute_ap(rank):
    precisions = [1.0 / pos for pos in range(1, 102) if pos == rank]
    return sum(precisions)


def anti_oracle(users, histories, candidates):
    out = np.ones(np.shape(candidates))
    out[:, 0] = 0.0
    return out


def test_rank_examples():
    s = np.zeros(101)
    s[0] = 1.0
    assert rank_ground_truth(s) == 1
    assert rank_ground_truth(np.ones(101)) == 101


def test_rank_counts_ties_against_ground_truth():
    assert rank_ground_truth([0.5, 0.9, 0.5, 0.1]) == 3
    assert rank_ground_truth([0.1, 0.5, 0.5], gt_index=1) == 2


@given(st.lists(st.integers(-3, 3), min_size=2, max_size=101))
def test_rank_matches_sort(values):
    scores = [float(v) for v in values]
    assert rank_ground_truth(scores) == brute_rank(scores)


def test_rank_matches_sort_on_random_scores(rng):
    for _ in range(200):
        s = rng.normal(size=101)
        assert rank_ground_truth(s) == brute_rank(list(s))


def test_metric_examples():
    assert hr_at_n(1, 1) == 1
    assert hr_at_n(11, 10) == 0
    assert hr_at_n(10, 10) == 1
    assert ndcg_at_n(1, 10) == 1.0
    assert ndcg_at_n(2, 10) == pytest.approx(0.63093, abs=1e-5)
    assert ndcg_at_n(11, 10) == 0.0
    assert average_precision(1) == 1.0
    assert average_precision(4) == 0.25
    assert MetricReport.from_ranks([1, 2], [1, 2]).map == 0.75


def test_metrics_match_definitions_for_every_rank():
    for r in range(1, 102):
        for n in (1, 5, 10):
            assert hr_at_n(r, n) == int(r in range(1, n + 1))
            assert ndcg_at_n(r, n) == brute_ndcg(r, n)
        assert average_precision(r) == brute_ap(r)


@given(st.integers(1, 101), st.integers(1, 101), st.sampled_from([1, 5, 10]))
def test_metric_order_properties(r, r2, n):
    assert hr_at_n(r, n) >= ndcg_at_n(r, n) >= 0.0
    lo, hi = min(r, r2), max(r, r2)
    assert ndcg_at_n(lo, n) >= ndcg_at_n(hi, n)
    assert hr_at_n(lo, n) >= hr_at_n(hi, n)
    assert average_precision(lo) >= average_precision(hi)


@given(st.lists(st.integers(1, 101), min_size=1, max_size=40))
def test_report_means_match_rank_list(ranks):
    rep = MetricReport.from_ranks(list(range(len(ranks))), ranks)
    n = len(ranks)
    assert rep.hr1 == pytest.approx(sum(r <= 1 for r in ranks) / n, abs=1e-15)
    assert rep.hr10 == pytest.approx(sum(r <= 10 for r in ranks) / n, abs=1e-15)
    assert rep.ndcg5 == pytest.approx(sum(brute_ndcg(r, 5) for r in ranks) / n, abs=1e-15)
    assert rep.ndcg10 == pytest.approx(sum(brute_ndcg(r, 10) for r in ranks) / n, abs=1e-15)
    assert rep.map == pytest.approx(sum(1 / r for r in ranks) / n, abs=1e-15)
    assert rep.hr1 <= rep.hr5 <= rep.hr10
    assert rep.ndcg5 <= rep.hr5 and rep.ndcg10 <= rep.hr10
    assert all(0.0 <= v <= 1.0 for v in rep.as_dict().values())


def test_empty_report_is_an_error():
    with pytest.raises(EmptyEvaluationError):
        MetricReport.from_ranks([], [])


def test_oracle_anti_oracle_constant(small_split, rng):
    rep = evaluate(oracle_scorer, small_split, 50, rng)
    assert all(v == 1.0 for v in rep.as_dict().values())
    rep = evaluate(anti_oracle, small_split, 50, np.random.default_rng(0))
    assert set(rep.ranks) == {51}
    assert rep.hr10 == 0.0
    assert rep.map == pytest.approx(1 / 51)
    rep = evaluate(constant_scorer, small_split, 50, np.random.default_rng(0))
    assert rep.ndcg10 == 0.0


def test_full_size_anti_oracle():
    # 120 items so a user can always find 100 unseen negatives
    rng = np.random.default_rng(5)
    seqs = [UserSequence(u, list(rng.choice(np.arange(1, 121), 8, replace=False))) for u in range(1, 6)]
    cat = Catalog([f"u{u}" for u in range(1, 6)], [f"i{k}" for k in range(1, 121)])
    split = leave_one_out_split(seqs, cat)
    rep = evaluate(anti_oracle, split, 100, rng)
    assert rep.ranks == [101] * 5
    assert rep.map == pytest.approx(1 / 101)


def test_queries_exclude_history_and_put_truth_first(small_split, rng):
    q = build_queries(small_split, "test", 30, rng)
    assert q.candidates.shape == (len(q.users), 31)
    for row, u in enumerate(q.users):
        seen = set(small_split.train[u]) | {small_split.valid[u], small_split.test[u]}
        assert q.candidates[row, 0] == small_split.test[u]
        negs = set(q.candidates[row, 1:].tolist())
        assert len(negs) == 30
        assert not negs & seen


def test_evaluate_is_seed_deterministic(small_split):
    def noisy(users, histories, candidates):
        return np.sin(np.asarray(candidates) * 1.7 + np.asarray(users)[:, None])

    a = evaluate(noisy, small_split, 40, np.random.default_rng(3))
    b = evaluate(noisy, small_split, 40, np.random.default_rng(3))
    assert a == b


def test_evaluate_requires_rng_and_targets(small_split):
    with pytest.raises(ValueError):
        evaluate(oracle_scorer, small_split, 10, None)
    seqs = [UserSequence(1, [1, 2])]
    split = leave_one_out_split(seqs, Catalog(["u1"], ["a", "b", "c"]))
    split.test.clear()
    with pytest.raises(EmptyEvaluationError):
        evaluate(oracle_scorer, split, 1, np.random.default_rng(0))


def test_report_serialisations_agree():
    rep = MetricReport.from_ranks([2, 1], [3, 1])
    doc = json.loads(rep.to_json())
    assert doc["n_users"] == 2
    assert doc["metrics"]["MAP"] == pytest.approx((1 / 3 + 1) / 2)
    rows = dict(line.split("\t") for line in rep.to_tsv().splitlines()[1:])
    assert float(rows["NDCG@10"]) == pytest.approx(rep.ndcg10, abs=1e-10)
    assert ranks_tsv(rep).splitlines() == ["user_id\trank", "2\t3", "1\t1"]
