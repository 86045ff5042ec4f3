import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatrec.evaluate import EvalReport, full_rank_evaluate, group_by_user, rank_metrics

from conftest import planted_dataset

INV_LOG3 = 1.0 / math.log2(3)


def fixture_scores():
    """Five users over six items (ids 5..10) with hand-computable rankings."""
    desc = np.array([6, 5, 4, 3, 2, 1], dtype=float)
    return np.stack([desc, desc, desc, np.zeros(6), desc[::-1]])


FIXTURE_TEST = ([0, 1, 2, 2, 3, 4, 4], [5, 6, 6, 10, 9, 9, 10])
FIXTURE_KNOWN = {2: np.array([5])}


def run_fixture():
    scores = fixture_scores()
    return full_rank_evaluate(lambda us: scores[us], *FIXTURE_TEST, FIXTURE_KNOWN, 5, 6, cutoff=2)


class TestRankMetrics:
    def test_first_of_one(self):
        assert rank_metrics([7, 3, 4], [7], 2) == (0.5, 1.0, 1.0)

    def test_second_of_many(self):
        p, r, n = rank_metrics([3, 7, 4, 5], [7], 2)
        assert (p, r) == (0.5, 1.0)
        assert n == pytest.approx(0.6309297535714575, abs=1e-15)

    def test_perfect_ranking_is_exactly_one(self):
        for n_rel in range(1, 30):
            for k in (1, 5, 20):
                assert rank_metrics(list(range(n_rel)) + [99], range(n_rel), k)[2] == 1.0

    def test_empty_relevant_set(self):
        with pytest.raises(ValueError):
            rank_metrics([1], [], 1)

    @settings(max_examples=200, deadline=None)
    @given(st.permutations(range(12)), st.sets(st.integers(0, 11), min_size=1, max_size=6),
           st.integers(1, 12), st.data())
    def test_moving_a_relevant_item_up_never_hurts(self, ranking, relevant, k, data):
        ranking = list(ranking)
        positions = [p for p, item in enumerate(ranking) if item in relevant and p > 0]
        if not positions:
            return
        p = data.draw(st.sampled_from(positions))
        q = data.draw(st.integers(0, p - 1))
        better = ranking[:]
        better.insert(q, better.pop(p))
        before, after = rank_metrics(ranking, relevant, k), rank_metrics(better, relevant, k)
        assert all(a >= b - 1e-15 for a, b in zip(after, before))
        assert all(0.0 <= v <= 1.0 for v in after)


class TestFullRank:
    def test_hand_computed_fixture(self):
        report = run_fixture()
        assert report.users.tolist() == [0, 1, 2, 3, 4]
        expected = np.array([
            [0.5, 1.0, 1.0],
            [0.5, 1.0, INV_LOG3],
            [0.5, 0.5, 1.0 / (1.0 + INV_LOG3)],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
        ])
        np.testing.assert_allclose(report.per_user, expected, rtol=0, atol=1e-12)
        assert report.precision == pytest.approx(0.5, abs=1e-12)
        assert report.recall == pytest.approx(0.7, abs=1e-12)
        assert report.ndcg == pytest.approx((2.0 + INV_LOG3 + 1.0 / (1.0 + INV_LOG3)) / 5, abs=1e-12)

    def test_record_order_is_irrelevant(self):
        scores = fixture_scores()
        perm = np.random.default_rng(0).permutation(len(FIXTURE_TEST[0]))
        shuffled = [np.array(c)[perm] for c in FIXTURE_TEST]
        report = full_rank_evaluate(lambda us: scores[us], *shuffled, FIXTURE_KNOWN, 5, 6, cutoff=2)
        assert report.per_user.tobytes() == run_fixture().per_user.tobytes()

    def test_batching_is_irrelevant(self):
        scores = fixture_scores()
        for batch in (1, 2, 3, 64):
            r = full_rank_evaluate(lambda us: scores[us], *FIXTURE_TEST, FIXTURE_KNOWN, 5, 6,
                                   cutoff=2, batch=batch)
            assert r.per_user.tobytes() == run_fixture().per_user.tobytes()

    def test_known_items_never_rank(self):
        scores = np.array([[10.0, 9.0, 1.0, 0.0]])
        r = full_rank_evaluate(lambda us: scores[us], [0], [3], {0: np.array([1, 2])}, 1, 4,
                               cutoff=1)
        # items 1 and 2 are excluded, so item 3 outranks item 4
        assert r.per_user.tolist() == [[1.0, 1.0, 1.0]]

    def test_user_without_candidates_is_skipped(self):
        scores = np.zeros((2, 2))
        known = {0: np.array([2, 3])}
        r = full_rank_evaluate(lambda us: scores[us], [0, 1], [2, 2], known, 2, 2, cutoff=1)
        assert r.skipped == 0 and r.users.tolist() == [1]
        known = {0: np.array([2])}
        r = full_rank_evaluate(lambda us: scores[us], [0, 1], [3, 2], known, 2, 2, cutoff=1)
        assert r.users.tolist() == [0, 1]

    def test_cutoff_must_be_positive(self):
        with pytest.raises(ValueError):
            full_rank_evaluate(lambda us: None, [0], [1], {}, 1, 1, cutoff=0)

    def test_per_user_csv(self):
        text = run_fixture().per_user_csv(lambda u: f"user{u}")
        assert text.splitlines()[0] == "user,precision,recall,ndcg"
        assert text.splitlines()[1] == "user0,0.5,1.0,1.0"

    def test_random_scorer_matches_analytic_baseline(self):
        _, ds = planted_dataset(0)
        g = ds.graph
        rng = np.random.default_rng(2024)
        report = full_rank_evaluate(lambda us: rng.random((len(us), g.n_items)), *ds.test,
                                    ds.known, g.n_users, g.n_items, cutoff=20)
        tests = group_by_user(*ds.test)
        mean, var = [], []
        for u in report.users:
            t = len(np.setdiff1d(tests[int(u)], ds.known.get(int(u), [])))
            n = g.n_items - len(ds.known.get(int(u), []))
            # hits among the top 20 are hypergeometric
            mean.append(20 * t / n / t)
            var.append(20 * (t / n) * (1 - t / n) * (n - 20) / (n - 1) / t ** 2)
        expected = float(np.mean(mean))
        sigma = math.sqrt(sum(var)) / len(var)
        assert abs(report.recall - expected) <= 3 * sigma


def test_group_by_user():
    grouped = group_by_user([2, 0, 2, 2], [7, 5, 6, 7])
    assert {k: v.tolist() for k, v in grouped.items()} == {0: [5], 2: [6, 7]}


def test_report_row():
    row = run_fixture().as_row()
    assert row["k"] == 2 and row["users"] == 5 and row["skipped"] == 0
    assert isinstance(run_fixture(), EvalReport)
