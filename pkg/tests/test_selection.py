import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from influence_select.dataset import synth_generate
from influence_select.harness import retrain_with
from influence_select.influence import InfluenceMatrix, influence_matrix
from influence_select.model import TrainConfig, accuracy, train
from influence_select.selection import (
    ScoreVector,
    SelectionConfig,
    desired_direction,
    random_baseline,
    run_method,
    score_method1,
    score_method2,
    score_method3,
    score_method4,
    score_method5,
    score_method6,
    select,
    write_scores_csv,
)

THRESH = SelectionConfig(direction_mode="threshold")
LITERAL_THRESH = SelectionConfig(direction_mode="threshold", scoring_mode="literal")


def make_infl(values, base_probs, val_labels, cand_labels=None, cand_probs=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    M, V = values.shape
    return InfluenceMatrix(
        values, tuple(range(M)), tuple(range(V)), np.asarray(base_probs, dtype=float),
        np.asarray(val_labels, dtype=np.int64),
        np.asarray(cand_labels if cand_labels is not None else [1] * M, dtype=np.int64),
        np.asarray(cand_probs if cand_probs is not None else [0.5] * M, dtype=float))


influence_cases = st.integers(1, 8).flatmap(lambda M: st.integers(1, 8).flatmap(lambda V: st.tuples(
    arrays(np.float64, (M, V), elements=st.floats(-0.5, 0.5)),
    arrays(np.float64, (V,), elements=st.floats(0.01, 0.99)),
    arrays(np.int64, (V,), elements=st.integers(0, 1)),
)))


class TestDirection:
    def test_wrong_side_point(self):
        assert desired_direction(0.4, 1, 0.5, "threshold") == 1
        assert desired_direction(0.4, 1, 0.5, "label") == 1

    def test_modes_diverge_on_confident_correct(self):
        assert desired_direction(0.9, 1, 0.5, "label") == 1
        assert desired_direction(0.9, 1, 0.5, "threshold") == -1

    def test_boundary(self):
        assert desired_direction(0.5, 0, 0.5, "threshold") == 1


class TestMethod1:
    def test_literal_vs_rectified(self):
        infl = make_infl([[0.1, -0.2]], [0.4, 0.7], [1, 0])
        assert score_method1(infl, cfg=LITERAL_THRESH).scores[0] == pytest.approx(-0.1)
        assert score_method1(infl, cfg=THRESH).scores[0] == pytest.approx(0.3)
        assert select(score_method1(infl, cfg=LITERAL_THRESH)).selected_ids == ()
        assert select(score_method1(infl, cfg=THRESH)).selected_ids == (0,)

    def test_zero_row(self):
        infl = make_infl([[0.0, 0.0]], [0.4, 0.7], [1, 0])
        for cfg in (THRESH, LITERAL_THRESH, SelectionConfig()):
            sv = score_method1(infl, cfg=cfg)
            assert sv.scores[0] == 0 and select(sv).selected_ids == ()

    @settings(max_examples=50, deadline=None)
    @given(influence_cases)
    def test_rectified_is_odd_and_decomposes(self, case):
        values, probs, labels = case
        infl = make_infl(values, probs, labels)
        neg = make_infl(-values, probs, labels)
        s = score_method1(infl).scores
        np.testing.assert_array_equal(score_method1(neg).scores, -s)
        dirs = np.where(labels == 1, 1.0, -1.0)
        aligned = np.sign(values) == dirs
        split = np.where(aligned, np.abs(values), 0).sum(1) - np.where(aligned, 0, np.abs(values)).sum(1)
        np.testing.assert_allclose(s, split, atol=1e-12)


class TestMethod2:
    def test_weighting(self):
        infl = make_infl([[0.2]], [0.4], [1], cand_labels=[1], cand_probs=[0.3])
        assert score_method2(infl).scores[0] == pytest.approx(0.14)

    def test_exact_prediction_has_no_weight(self):
        infl = make_infl([[0.2]], [0.4], [1], cand_labels=[1], cand_probs=[1.0])
        assert score_method2(infl).scores[0] == 0

    def test_negative_discrepancy_excludes(self):
        infl = make_infl([[0.2]], [0.4], [1], cand_labels=[0], cand_probs=[0.8])
        sv = score_method2(infl)
        assert sv.scores[0] == pytest.approx(-0.16)
        assert select(sv).selected_ids == ()
        mag = score_method2(infl, cfg=SelectionConfig(method2_weight="magnitude"))
        assert mag.scores[0] == pytest.approx(0.16)

    def test_pool_and_model_route(self, synth_splits):
        tr, pool, val = synth_splits
        m = train(tr, TrainConfig(lam=0.1))
        infl = influence_matrix(m, tr, pool, val)
        np.testing.assert_allclose(score_method2(infl, pool, m).scores, score_method2(infl).scores,
                                   rtol=0, atol=0)


class TestMethod3:
    def test_quantile_cap(self):
        M = 2768
        rng = np.random.default_rng(0)
        infl = make_infl(rng.uniform(0, 1e-3, size=(M, 3)), [0.4, 0.6, 0.3], [1, 1, 0])
        sv, sel = score_method3(infl)
        assert len(sel) <= 277 == math.ceil(0.1 * M)
        assert len(sel) == 277

    def test_non_positive_scores(self):
        infl = make_infl([[-0.1, 0.2], [0.0, 0.0]], [0.4, 0.7], [1, 0])
        sv, sel = score_method3(infl)
        assert sel.selected_ids == ()

    def test_tie_break_by_id(self):
        infl = make_infl([[0.2], [0.5], [0.2], [0.2]], [0.4], [1])
        _, sel = score_method3(infl, cfg=SelectionConfig(method3_quantile=0.5))
        assert sel.selected_ids == (0, 1)

    def test_counts_only_aligned_influence(self):
        infl = make_infl([[0.1, 0.2]], [0.4, 0.7], [1, 0])
        sv, _ = score_method3(infl)
        assert sv.scores[0] == pytest.approx(0.1)

    def test_subset_of_method1_when_all_aligned(self):
        rng = np.random.default_rng(2)
        labels = np.array([1, 0, 1, 1, 0])
        dirs = np.where(labels == 1, 1.0, -1.0)
        values = rng.uniform(0, 1, size=(40, 5)) * dirs * rng.integers(0, 2, size=(40, 1))
        infl = make_infl(values, rng.uniform(0.1, 0.9, 5), labels)
        _, m3 = score_method3(infl)
        m1 = select(score_method1(infl))
        assert set(m3.selected_ids) <= set(m1.selected_ids)


class TestMethod4:
    def test_flip_count(self):
        infl = make_infl([[0.15, -0.05]], [0.4, 0.7], [1, 0])
        sv = score_method4(infl)
        assert sv.scores[0] == 1
        assert select(sv).selected_ids == (0,)

    def test_no_crossings(self):
        probs = np.array([0.3, 0.8, 0.45])
        gap = np.abs(0.5 - probs).min()
        infl = make_infl([[gap * 0.9, -gap * 0.9, gap * 0.5]], probs, [1, 0, 1])
        assert score_method4(infl).scores[0] == 0

    def test_cancellation(self):
        # point 0 right -> wrong, point 1 wrong -> right
        infl = make_infl([[-0.2, 0.2]], [0.6, 0.4], [1, 1])
        sv = score_method4(infl)
        assert sv.scores[0] == 0 and select(sv).selected_ids == ()


class TestMethod5:
    def test_penalised(self):
        infl = make_infl([[0.1, -0.2]], [0.4, 0.4], [1, 1])
        sv = score_method5(infl)
        assert sv.scores[0] == pytest.approx(-0.3)
        assert select(sv).selected_ids == ()

    def test_fully_aligned(self):
        infl = make_infl([[0.1, -0.2]], [0.4, 0.7], [1, 0])
        assert score_method5(infl).scores[0] == pytest.approx(0.3)

    @settings(max_examples=60, deadline=None)
    @given(influence_cases, st.sampled_from(["label", "threshold"]))
    def test_unit_weights_equal_rectified_method1(self, case, mode):
        infl = make_infl(*case)
        cfg = SelectionConfig(direction_mode=mode, method5_misaligned_weight=1.0)
        a, b = score_method5(infl, cfg=cfg).scores, score_method1(infl, cfg=cfg).scores
        assert np.array_equal(a, b)


class TestMethod6:
    def test_threshold_case(self):
        # val point 0: 0.9 -> 0.6 (stays correct); val point 1: 0.4 -> 0.6 (flips to correct)
        infl = make_infl([[-0.3, 0.2]], [0.9, 0.4], [1, 1])
        assert score_method1(infl, cfg=LITERAL_THRESH).scores[0] == pytest.approx(-0.1)
        sv = score_method6(infl)
        assert sv.scores[0] == pytest.approx(0.1)
        assert select(sv).selected_ids == (0,)

    def test_no_crossings(self):
        infl = make_infl([[0.01, -0.01]], [0.3, 0.8], [1, 1])
        assert score_method6(infl).scores[0] == 0

    def test_symmetric_cancellation(self):
        infl = make_infl([[-0.2, 0.2]], [0.6, 0.4], [1, 1])
        assert score_method6(infl).scores[0] == 0

    @settings(max_examples=50, deadline=None)
    @given(influence_cases)
    def test_crossing_gate_shared_with_method4(self, case):
        infl = make_infl(*case)
        probs, labels = case[1], case[2]
        moved = ((probs + case[0]) >= 0.5) != (probs >= 0.5)
        quiet = ~moved.any(axis=1)
        assert np.all(score_method4(infl).scores[quiet] == 0)
        assert np.all(score_method6(infl).scores[quiet] == 0)
        # a single crossing row is nonzero for both, unless it starts exactly on tau
        single = (moved.sum(axis=1) == 1) & ~(moved & (probs == 0.5)).any(axis=1)
        assert np.all((score_method4(infl).scores[single] != 0) == (score_method6(infl).scores[single] != 0))


class TestSelect:
    def test_strict_positive(self):
        sv = ScoreVector((0, 1, 2), np.array([0.1, -0.1, 0.0]), "m1")
        assert select(sv).selected_ids == (0,)

    def test_full_quantile(self):
        sv = ScoreVector((0, 1, 2), np.array([0.1, -0.1, 0.3]), "m1")
        assert select(sv, "top_quantile", 1.0).selected_ids == (0, 2)

    def test_empty_pool(self):
        sel = select(ScoreVector((), np.zeros(0), "m1"))
        assert sel.selected_ids == () and sel.added_fraction == 0.0

    def test_bad_rule(self):
        with pytest.raises(ValueError):
            select(ScoreVector((0,), np.ones(1), "m1"), "best")

    @settings(max_examples=40, deadline=None)
    @given(influence_cases)
    def test_every_method_selects_from_pool(self, case):
        infl = make_infl(*case)
        for method in ("m1", "m2", "m3", "m4", "m5", "m6"):
            _, sel = run_method(method, infl)
            assert set(sel.selected_ids) <= set(infl.candidate_ids)
            assert 0.0 <= sel.added_fraction <= 1.0


class TestRandomBaseline:
    def test_extremes(self):
        pool = synth_generate(10, 2, 0)
        assert random_baseline(pool, 10, 1).selected_ids == pool.ids
        assert random_baseline(pool, 0, 1).selected_ids == ()
        with pytest.raises(ValueError):
            random_baseline(pool, 11, 1)

    def test_seeded(self):
        ids = list(range(100))
        assert random_baseline(ids, 30, 5) == random_baseline(ids, 30, 5)
        assert random_baseline(ids, 30, 5).selected_ids != random_baseline(ids, 30, 6).selected_ids


def test_scores_csv(tmp_path):
    infl = make_infl([[0.1, -0.2], [0.0, 0.0]], [0.4, 0.7], [1, 0])
    sv, sel = run_method("m1", infl)
    write_scores_csv(sv, sel, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "candidate_id,method,score,selected"
    assert lines[1].startswith("0,m1,") and lines[1].endswith(",1")
    assert lines[2].endswith(",0")


def test_method4_finds_oracle_best_single_candidate():
    """Best single addition by retraining ranks in Method 4's top 3 on most seeds."""
    hits = []
    cfg = TrainConfig(lam=0.05)
    for seed in range(20):
        tr = synth_generate(20, 5, 1000 + seed, label_noise=0.1)
        pool = synth_generate(12, 5, 2000 + seed, label_noise=0.1)
        val = synth_generate(40, 5, 3000 + seed, label_noise=0.1)
        base = train(tr, cfg)
        scores = score_method4(influence_matrix(base, tr, pool, val)).scores
        a0 = accuracy(base, val)
        gains = np.array([accuracy(retrain_with(base, tr, pool, [i], cfg), val) - a0
                          for i in range(len(pool))])
        best = set(np.flatnonzero(gains == gains.max()).tolist())
        top3 = sorted(range(len(pool)), key=lambda i: (-scores[i], i))[:3]
        hits.append(bool(best & set(top3)))
    assert np.mean(hits) >= 0.8
