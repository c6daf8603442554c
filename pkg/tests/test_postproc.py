"""Blob extraction, region features, random forest and interval voting."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.core import reference
from src.core.errors import ConfigError, ShapeError
from src.postproc.blobs import box_iou, extract_blobs
from src.postproc.features import box_features, feature_matrix
from src.postproc.forest import (
    ForestParams,
    Node,
    RandomForest,
    forest_predict,
    forest_train,
    tree_predict,
)
from src.postproc.video import MISSING, NOT_MISSING, IntervalDecision, eval_video, video_decide


class TestBlobs:
    def test_single_block(self):
        prob = np.zeros((16, 16))
        prob[5:8, 6:8] = 0.9
        blobs = extract_blobs(prob, 0.5, min_area=1)
        assert len(blobs) == 1
        assert blobs[0].box == (6, 5, 2, 3)
        assert blobs[0].area == 6

    def test_empty_map(self):
        assert extract_blobs(np.zeros((8, 8))) == []

    def test_diagonal_pixels_are_separate(self):
        prob = np.zeros((4, 4))
        prob[1, 1] = prob[2, 2] = 1.0 - 1e-9
        assert len(extract_blobs(prob, 0.5, min_area=1)) == 2

    def test_min_area_drops_specks(self):
        prob = np.zeros((10, 10))
        prob[0, 0] = 0.9
        prob[4:7, 4:7] = 0.9
        blobs = extract_blobs(prob, 0.5, min_area=4)
        assert [b.area for b in blobs] == [9]

    def test_box_is_tight(self, rng):
        for _ in range(100):
            blobs = extract_blobs(rng.random((12, 12)), 0.6, min_area=1)
            for blob in blobs:
                x, y, w, h = blob.box
                rows, cols = np.nonzero(blob.pixels)
                assert (rows.min(), cols.min()) == (y, x)
                assert (rows.max() + 1, cols.max() + 1) == (y + h, x + w)

    def test_matches_flood_fill(self, rng):
        for _ in range(100):
            prob = rng.random((9, 11))
            got = sorted((b.box, b.area) for b in extract_blobs(prob, 0.55, min_area=2))
            expected = sorted(reference.blob_boxes_loop(prob > 0.55, min_area=2))
            assert got == expected

    def test_ordering_largest_first(self):
        prob = np.zeros((10, 10))
        prob[0:2, 0:2] = 0.9
        prob[5:9, 5:9] = 0.9
        assert [b.area for b in extract_blobs(prob, min_area=1)] == [16, 4]

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1])
    def test_tau_range(self, tau):
        with pytest.raises(ConfigError):
            extract_blobs(np.zeros((4, 4)), tau)

    def test_not_two_dimensional(self):
        with pytest.raises(ShapeError):
            extract_blobs(np.zeros((2, 4, 4)))

    def test_iou_of_empty_rasters(self):
        assert box_iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 0.0


class TestFeatures:
    def test_full_frame_box_is_centered(self):
        assert box_features((0, 0, 64, 48), 48, 64).dist_center == 0.0

    def test_corner_box_distance(self):
        f = box_features((0, 0, 2, 2), 64, 64)
        assert f.dist_center == pytest.approx(np.hypot(31, 31))
        assert (f.cx, f.cy) == (1.0, 1.0)

    def test_square_aspect(self):
        assert box_features((3, 4, 7, 7), 64, 64).aspect == 1.0

    def test_wide_aspect(self):
        f = box_features((0, 0, 8, 2), 64, 64)
        assert (f.w, f.h, f.aspect) == (8.0, 2.0, 4.0)

    def test_empty_side(self):
        with pytest.raises(ShapeError):
            box_features((1, 1, 0, 3), 64, 64)

    def test_matrix_shapes(self):
        assert feature_matrix([]).shape == (0, 6)
        rows = [box_features((i, i, 2, 3), 32, 32) for i in range(4)]
        assert feature_matrix(rows).shape == (4, 6)


def separable_set(rng, n):
    """Label 1 iff dist_center (column 4) < 10, with a margin around the boundary."""
    x = rng.uniform(0, 64, size=(n, 6))
    near = rng.random(n) < 0.5
    x[:, 4] = np.where(near, rng.uniform(0, 8, n), rng.uniform(12, 40, n))
    return x, near.astype(int)


class TestForest:
    def test_separable_rule(self, rng):
        x, y = separable_set(rng, 300)
        forest = forest_train(x, y, ForestParams(n_trees=15, max_features=6, seed=1))
        x_test, y_test = separable_set(rng, 200)
        labels, _ = forest_predict(forest, x_test)
        assert (labels == y_test).mean() == 1.0

    def test_depth_zero_predicts_bootstrap_majority(self, rng):
        x = rng.normal(size=(31, 6))
        y = (rng.random(31) > 0.4).astype(int)
        forest = forest_train(x, y, ForestParams(n_trees=1, max_depth=0, seed=4))
        sample = y[forest.bootstraps[0]]
        majority = int(sample.sum() > len(sample) - sample.sum())
        labels, _ = forest_predict(forest, x)
        assert np.all(labels == majority)

    def test_deterministic(self, rng):
        x, y = separable_set(rng, 80)
        a = forest_train(x, y, ForestParams(n_trees=5, seed=9))
        b = forest_train(x, y, ForestParams(n_trees=5, seed=9))
        assert a.to_dict() == b.to_dict()

    def test_serialization_keeps_predictions(self, rng):
        x, y = separable_set(rng, 80)
        forest = forest_train(x, y, ForestParams(n_trees=7, seed=2))
        restored = RandomForest.from_dict(forest.to_dict())
        assert np.array_equal(forest_predict(forest, x)[0], forest_predict(restored, x)[0])

    def test_oob_error_in_range(self, rng):
        x, y = separable_set(rng, 60)
        forest = forest_train(x, y, ForestParams(n_trees=10, seed=0))
        assert forest.oob_error is not None and 0.0 <= forest.oob_error <= 1.0

    def test_oob_error_at_most_worst_tree(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x, y = separable_set(rng, 120)
            flip = rng.random(len(y)) < 0.1
            y = np.where(flip, 1 - y, y)
            forest = forest_train(x, y, ForestParams(n_trees=15, seed=seed))
            tree_errors = []
            for tree, sample in zip(forest.trees, forest.bootstraps):
                out_of_bag = np.ones(len(y), dtype=bool)
                out_of_bag[sample] = False
                tree_errors.append((tree_predict(tree, x[out_of_bag]) != y[out_of_bag]).mean())
            assert forest.oob_error <= max(tree_errors)

    def test_depth_bounded(self, rng):
        x = rng.normal(size=(100, 6))
        y = (rng.random(100) > 0.5).astype(int)
        forest = forest_train(x, y, ForestParams(n_trees=4, max_depth=3, seed=0))
        assert all(t.depth() <= 3 for t in forest.trees)

    def test_split_vote_goes_to_not_missing(self):
        forest = RandomForest(ForestParams(n_trees=2), trees=[Node((0, 3)), Node((3, 0))])
        labels, fraction = forest_predict(forest, np.zeros((1, 6)))
        assert labels[0] == 0 and fraction[0] == 0.5

    def test_leaf_tie_goes_to_zero(self):
        assert Node((2, 2)).label == 0

    def test_single_class_warns(self, rng, capsys):
        forest = forest_train(rng.normal(size=(10, 6)), np.ones(10, dtype=int), ForestParams(n_trees=2))
        assert "Warning" in capsys.readouterr().err
        assert np.all(forest_predict(forest, rng.normal(size=(3, 6)))[0] == 1)

    def test_bad_labels(self, rng):
        with pytest.raises(ConfigError):
            forest_train(rng.normal(size=(4, 6)), np.array([0, 1, 2, 0]))

    def test_empty_training_set(self):
        with pytest.raises(ShapeError):
            forest_train(np.zeros((0, 6)), np.zeros(0, dtype=int))

    def test_bad_params(self):
        with pytest.raises(ConfigError):
            ForestParams(n_trees=0).validate()


class TestVideoDecide:
    def test_two_of_three(self):
        assert video_decide([[True], [True], [False]]).final == MISSING

    def test_tie_is_not_missing(self):
        assert video_decide([[True], [False]]).final == NOT_MISSING

    def test_frame_without_regions(self):
        decision = video_decide([[], [True, False], [False, True]], "S2-000")
        assert decision.missing_frames == 2 and decision.total_frames == 3
        assert decision.is_missing and decision.interval_id == "S2-000"

    def test_empty_interval(self):
        with pytest.raises(ShapeError):
            video_decide([])

    def test_counting_oracle(self, rng):
        for _ in range(100):
            frames = [list(rng.random(rng.integers(0, 3)) > 0.5) for _ in range(rng.integers(1, 9))]
            hits = 0
            for frame in frames:
                if True in frame:
                    hits += 1
            expected = MISSING if hits > len(frames) - hits else NOT_MISSING
            assert video_decide(frames).final == expected

    @given(st.lists(st.lists(st.booleans(), max_size=3), min_size=1, max_size=12), st.randoms())
    def test_frame_order_irrelevant(self, frames, random):
        shuffled = list(frames)
        random.shuffle(shuffled)
        assert video_decide(frames).final == video_decide(shuffled).final


def decisions_from_counts(tp, fp, fn, tn):
    finals = [MISSING] * (tp + fp) + [NOT_MISSING] * (fn + tn)
    truth = [True] * tp + [False] * fp + [True] * fn + [False] * tn
    return [IntervalDecision(str(i), final=f) for i, f in enumerate(finals)], truth


class TestEvalVideo:
    @pytest.mark.parametrize("counts,expected_f", [
        ((3, 5, 3, 4), 42.857),
        ((177, 123, 118, 50), 59.49),
    ])
    def test_reference_rows(self, counts, expected_f):
        decisions, truth = decisions_from_counts(*counts)
        assert 100 * eval_video(decisions, truth).f_score == pytest.approx(expected_f, abs=0.01)

    def test_all_correct(self):
        decisions, truth = decisions_from_counts(4, 0, 0, 3)
        report = eval_video(decisions, truth)
        assert (report.precision, report.recall, report.f_score) == (1.0, 1.0, 1.0)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            eval_video([IntervalDecision("0")], [True, False])
