"""Metric oracles and suite evaluation behavior."""

import numpy as np
import pytest

from l3prune import build_synth_suite, evaluate
from l3prune.errors import DataError, L3PruneError
from l3prune.evaluation import (
    EvalReport,
    EvalSuite,
    best_threshold_accuracy,
    mrr,
    ndcg_at_k,
    recall_at_k,
    spearman_sts,
    variants_table,
)
from l3prune.model import TokenBatch
from l3prune import embed, prune_layers
from l3prune.prune import PruneSpec

from helpers import tiny_model


class TestRecall:
    def test_self_retrieval(self):
        rng = np.random.default_rng(0)
        docs = rng.normal(size=(10, 8))
        gold = {i: i for i in range(10)}
        assert recall_at_k(docs, docs, gold, k=1) == 1.0

    def test_k_equals_corpus(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(5, 8))
        d = rng.normal(size=(20, 8))
        assert recall_at_k(q, d, {i: i for i in range(5)}, k=20) == 1.0

    def test_k_beyond_corpus_rejected(self):
        with pytest.raises(L3PruneError):
            recall_at_k(np.ones((1, 4)), np.ones((3, 4)), {0: 0}, k=4)

    def test_random_embeddings_near_k_over_n(self):
        """Monte-Carlo estimate with a fixed seed: recall ~ k/N within 3 sigma."""
        rng = np.random.default_rng(123)
        n_docs, n_queries, k = 400, 600, 10
        q = rng.normal(size=(n_queries, 64))
        d = rng.normal(size=(n_docs, 64))
        gold = {i: int(rng.integers(n_docs)) for i in range(n_queries)}
        got = recall_at_k(q, d, gold, k=k)
        expected = k / n_docs
        sigma = (expected * (1 - expected) / n_queries) ** 0.5
        assert abs(got - expected) < 3 * sigma


class TestNdcg:
    def test_gold_first_is_one(self):
        docs = np.eye(4)
        assert ndcg_at_k(docs, docs, {i: i for i in range(4)}, k=3) == 1.0

    def test_gold_at_rank_three(self):
        # query prefers docs 0 and 1 over gold doc 2: dcg = 1/log2(4) = 0.5
        q = np.array([[1.0, 0.5, 0.25]])
        d = np.eye(3)
        assert abs(ndcg_at_k(q, d, {0: 2}, k=3) - 0.5) < 1e-12

    def test_gold_outside_top_k_scores_zero(self):
        q = np.array([[1.0, 0.5, 0.25]])
        d = np.eye(3)
        assert ndcg_at_k(q, d, {0: 2}, k=2) == 0.0


class TestMrr:
    def test_hand_case(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        cands = np.array(
            [
                [[1.0, 0.0], [0.5, 0.5]],   # gold 0 at rank 1 -> 1
                [[1.0, 0.0], [0.0, 1.0]],   # gold 0 at rank 2 -> 1/2
            ]
        )
        got = mrr(q, cands, np.array([0, 0]))
        assert abs(got - (1.0 + 0.5) / 2) < 1e-12


class TestSpearman:
    def test_identical(self):
        assert spearman_sts([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0

    def test_reversed(self):
        assert spearman_sts([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_hand_case(self):
        assert abs(spearman_sts([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12

    def test_constant_rejected(self):
        with pytest.raises(L3PruneError):
            spearman_sts([1, 1, 1], [1, 2, 3])


class TestBestThreshold:
    def test_separable(self):
        sims = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        assert best_threshold_accuracy(sims, labels) == 1.0

    def test_one_mistake(self):
        sims = np.array([0.9, 0.3, 0.8, 0.1])
        labels = np.array([1, 1, 0, 0])
        assert best_threshold_accuracy(sims, labels) == 0.75

    def test_all_negative(self):
        sims = np.array([0.5, 0.6])
        labels = np.array([0, 0])
        assert best_threshold_accuracy(sims, labels) == 1.0


class TestEvaluate:
    def _suite(self, vocab_size=64):
        return build_synth_suite(vocab_size, seed=1, n_topics=4,
                                 queries_per_task=8, corpus_size=24)

    def test_deterministic(self):
        m = tiny_model()
        suite = self._suite()
        a = evaluate(m, suite)
        b = evaluate(m, suite)
        assert a == b

    def test_scores_in_unit_interval_and_aggregate_is_mean(self):
        m = tiny_model()
        report = evaluate(m, self._suite())
        values = list(report.per_task.values())
        assert len(values) == 5
        assert all(0.0 <= v <= 1.0 for v in values)
        assert abs(report.aggregate - sum(values) / len(values)) < 1e-12

    def test_layers_and_params_tracked(self):
        m = tiny_model(n_layers=4)
        pruned, report_p = prune_layers(m, PruneSpec.by_layers(2))
        report = evaluate(pruned, self._suite())
        assert report.layers == 2
        assert report.model_params == report_p.params_after

    def test_vocab_mismatch_rejected(self):
        m = tiny_model()  # vocab 64
        suite = build_synth_suite(128, seed=1, n_topics=4,
                                  queries_per_task=4, corpus_size=12)
        with pytest.raises(DataError, match="vocab"):
            evaluate(m, suite)

    def test_instruction_exclusion_is_observable(self):
        """The pooled embedding is exactly the weighted mean of the content
        rows of the hidden states: instruction positions carry no weight.

        (The instruction still steers the content representations through
        attention, which is what makes instructed embeddings task-aware; the
        exclusion applies to the pooling itself.)
        """
        from l3prune import forward_all, weighted_mean_pool
        from l3prune.pooling import PoolingMask

        m = tiny_model()
        content = [3, 1, 4, 1, 5]
        batch = TokenBatch.from_sequences([[9, 9] + content])
        hidden = forward_all(m, batch).per_layer[-1]
        excluded = weighted_mean_pool(
            hidden, PoolingMask.from_lengths(batch.lengths, 2, batch.width)
        )
        content_rows = hidden.data[:, 2:, :]
        ranks = np.arange(1, len(content) + 1, dtype=float)
        by_hand = (content_rows[0] * (ranks / ranks.sum())[:, None]).sum(axis=0)
        np.testing.assert_allclose(excluded.data[0], by_hand, atol=1e-15)
        # and it differs from pooling that includes the instruction tokens
        included = weighted_mean_pool(
            hidden, PoolingMask.from_lengths(batch.lengths, 0, batch.width)
        )
        assert not np.array_equal(excluded.data, included.data)

    def test_suite_round_trip(self, tmp_path):
        suite = self._suite()
        path = tmp_path / "suite.json"
        suite.save(path)
        loaded = EvalSuite.load(path)
        m = tiny_model()
        assert evaluate(m, loaded) == evaluate(m, suite)

    def test_report_csv_round_trip(self):
        report = EvalReport(
            per_task={"a": 0.5, "b": 0.7}, aggregate=0.6, model_params=123, layers=4
        )
        parsed = EvalReport.from_csv(report.to_csv())
        assert parsed.model_params == 123 and parsed.layers == 4
        assert abs(parsed.aggregate - 0.6) < 1e-9


class TestVariantsTable:
    def test_deltas_in_parentheses(self):
        reports = {
            "base": EvalReport({"t": 0.8}, 0.8, 1000, 8),
            "large": EvalReport({"t": 0.77}, 0.77, 800, 6),
            "small": EvalReport({"t": 0.6}, 0.6, 300, 2),
        }
        table = variants_table(reports, "base", {"large": 12.5})
        assert "(-2)" in table and "(-6)" in table
        assert "(80%)" in table and "(30%)" in table
        assert "(-3.0)" in table and "(-20.0)" in table
        assert "12.5s" in table

    def test_missing_baseline_rejected(self):
        with pytest.raises(DataError):
            variants_table({"a": EvalReport({}, 0.0, 1, 1)}, "nope")
