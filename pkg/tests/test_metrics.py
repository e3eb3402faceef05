import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mecpe.corpus import Emotion, EmotionCausePair
from mecpe.metrics import MetricsError, pair_metrics, stage_metrics


class TestStageMetrics:
    def test_perfect_predictions(self):
        m = stage_metrics([0, 1, 2, 1], [0, 1, 2, 1], n_classes=3)
        assert m.weighted_precision == m.weighted_recall == m.weighted_f1 == 1.0
        assert m.macro_f1 == 1.0

    def test_hand_computed_binary(self):
        m = stage_metrics([0, 1, 1, 1], [0, 0, 1, 1], n_classes=2)
        assert m.precision[0] == 1.0 and m.recall[0] == 0.5
        assert m.f1[0] == pytest.approx(2 / 3, abs=1e-15)
        assert m.precision[1] == pytest.approx(2 / 3, abs=1e-15)
        assert m.recall[1] == 1.0
        assert m.f1[1] == pytest.approx(0.8, abs=1e-15)
        assert m.weighted_f1 == pytest.approx(0.5 * (2 / 3) + 0.5 * 0.8, abs=1e-15)
        assert m.weighted_f1 == pytest.approx(0.7333333333333333, abs=1e-12)

    def test_all_one_class_uniform_gold(self):
        gold = list(range(7)) * 3
        predicted = [2] * len(gold)
        m = stage_metrics(predicted, gold, n_classes=7)
        # class 2: P = 1/7, R = 1 -> F1 = 0.25; all other classes 0
        assert m.f1[2] == pytest.approx(0.25, abs=1e-15)
        assert m.weighted_f1 == pytest.approx((1 / 7) * 0.25, abs=1e-15)

    def test_zero_support_classes_excluded(self):
        m = stage_metrics([0, 0, 1], [0, 0, 1], n_classes=4)
        assert m.support == (2, 1, 0, 0)
        assert m.macro_f1 == 1.0  # classes 2,3 skipped
        assert m.weighted_f1 == 1.0

    def test_f1_zero_when_degenerate(self):
        m = stage_metrics([1, 1], [0, 0], n_classes=2)
        assert m.f1[0] == 0.0 and m.f1[1] == 0.0
        assert m.weighted_f1 == 0.0

    def test_weighted_equals_support_weighted_mean(self):
        rng = np.random.default_rng(0)
        gold = rng.integers(0, 5, size=200)
        predicted = rng.integers(0, 5, size=200)
        m = stage_metrics(predicted, gold, n_classes=5)
        support = np.asarray(m.support, dtype=float)
        expected = float(np.sum(support / support.sum() * np.asarray(m.f1)))
        assert m.weighted_f1 == pytest.approx(expected, rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(MetricsError, match="length mismatch"):
            stage_metrics([0, 1], [0], n_classes=2)

    @settings(max_examples=30, deadline=None)
    @given(st.data())
    def test_permutation_invariance(self, data):
        n = data.draw(st.integers(1, 30))
        gold = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
        predicted = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
        perm = data.draw(st.permutations(range(n)))
        base = stage_metrics(predicted, gold, n_classes=4)
        shuffled = stage_metrics([predicted[i] for i in perm], [gold[i] for i in perm], 4)
        assert base == shuffled


JOY, ANGER, FEAR = Emotion.JOY, Emotion.ANGER, Emotion.FEAR


def pairs(*triples):
    return [EmotionCausePair(e, emo, c) for e, emo, c in triples]


class TestPairMetrics:
    def test_perfect(self):
        gold = {1: pairs((3, JOY, 2), (5, ANGER, 5))}
        m = pair_metrics(gold, gold)
        assert m.weighted_f1 == 1.0 and m.macro_f1 == 1.0

    def test_empty_predictions(self):
        gold = {1: pairs((3, JOY, 2))}
        m = pair_metrics({1: []}, gold)
        assert m.weighted_f1 == 0.0 and m.macro_f1 == 0.0
        assert m.per_emotion["joy"]["recall"] == 0.0

    def test_hand_computed(self):
        gold = {1: pairs((3, JOY, 2), (3, JOY, 3), (5, ANGER, 5))}
        predicted = {1: pairs((3, JOY, 2), (5, ANGER, 4))}
        m = pair_metrics(predicted, gold)
        assert m.per_emotion["joy"]["precision"] == 1.0
        assert m.per_emotion["joy"]["recall"] == 0.5
        assert m.per_emotion["joy"]["f1"] == pytest.approx(2 / 3, abs=1e-15)
        assert m.per_emotion["anger"]["f1"] == 0.0
        assert m.weighted_f1 == pytest.approx(4 / 9, abs=1e-12)
        assert m.macro_f1 == pytest.approx(1 / 3, abs=1e-12)

    def test_same_ids_wrong_emotion_not_matched(self):
        gold = {1: pairs((3, JOY, 2))}
        predicted = {1: pairs((3, ANGER, 2))}
        m = pair_metrics(predicted, gold)
        assert m.weighted_f1 == 0.0

    def test_conversation_id_part_of_identity(self):
        gold = {1: pairs((3, JOY, 2)), 2: []}
        predicted = {1: [], 2: pairs((3, JOY, 2))}
        m = pair_metrics(predicted, gold)
        assert m.weighted_f1 == 0.0

    def test_duplicates_do_not_help(self):
        gold = {1: pairs((3, JOY, 2), (4, JOY, 4))}
        once = pair_metrics({1: pairs((3, JOY, 2))}, gold)
        doubled = pair_metrics({1: pairs((3, JOY, 2), (3, JOY, 2))}, gold)
        assert doubled == once

    def test_neutral_pair_rejected(self):
        bad = {1: [EmotionCausePair(1, Emotion.NEUTRAL, 1)]}
        with pytest.raises(MetricsError, match="neutral"):
            pair_metrics(bad, {1: []})
        with pytest.raises(MetricsError, match="neutral"):
            pair_metrics({1: []}, bad)

    def test_disjoint_sets_zero_everywhere(self):
        gold = {1: pairs((3, JOY, 2), (5, FEAR, 5))}
        predicted = {1: pairs((3, JOY, 3), (5, FEAR, 4))}
        m = pair_metrics(predicted, gold)
        for stats in m.per_emotion.values():
            assert stats["precision"] == stats["recall"] == stats["f1"] == 0.0

    def test_predicted_only_emotion_zero_weight_in_weighted(self):
        gold = {1: pairs((3, JOY, 2))}
        predicted = {1: pairs((3, JOY, 2), (4, ANGER, 4))}
        m = pair_metrics(predicted, gold)
        # anger has no gold pairs: weight 0 in weighted F1, F1 0 in macro
        assert m.weighted_f1 == 1.0
        assert m.macro_f1 == pytest.approx(0.5, abs=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.data())
    def test_conversation_permutation_invariance(self, data):
        def draw_side(tag):
            side = {}
            for cid in (1, 2, 3):
                triples = data.draw(st.lists(st.tuples(
                    st.integers(1, 4),
                    st.sampled_from([JOY, ANGER, FEAR]),
                    st.integers(1, 4),
                ), max_size=4), label=f"{tag}{cid}")
                side[cid] = pairs(*triples)
            return side

        gold = draw_side("g")
        predicted = draw_side("p")
        base = pair_metrics(predicted, gold)
        reordered = pair_metrics(
            {k: list(reversed(v)) for k, v in reversed(predicted.items())},
            {k: list(reversed(v)) for k, v in reversed(gold.items())},
        )
        assert base == reordered
