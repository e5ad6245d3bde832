import os

import numpy as np
import pytest

from src.encoders import (
    AlignmentScore,
    FoldSpec,
    ResponseMatrix,
    Standardizer,
    decompose_weights,
    fit_ridge,
    layer_means,
    load_encoding_model,
    load_responses,
    make_folds,
    nested_cv,
    pearson_per_voxel,
    read_alignment_scores,
    ridge_path,
    save_encoding_model,
    save_responses,
    select_lambda,
    select_layers,
    write_alignment_scores,
)
from src.errors import DependencyError, InternalConsistencyError, NumericalError, RejectedInputError

LAMBDAS = [0.01, 1.0, 100.0]


def _linear_data(rng, n=80, p=6, v=5, noise=0.1):
    X = rng.standard_normal((n, p))
    W = rng.standard_normal((p, v))
    return X, X @ W + noise * rng.standard_normal((n, v))


class TestRidge:
    """Tests for closed-form ridge and Pearson scoring."""

    def test_matches_normal_equations(self, rng):
        X, Y = _linear_data(rng, n=30, p=5, v=3)
        for lam in (0.5, 10.0):
            expected = np.linalg.solve(X.T @ X + lam * np.eye(5), X.T @ Y)
            np.testing.assert_allclose(fit_ridge(X, Y, lam), expected, atol=1e-10)

    def test_solution_is_stationary(self, rng):
        X, Y = _linear_data(rng, n=40, p=8, v=2)
        lam = 3.0
        W = fit_ridge(X, Y, lam)
        gradient = X.T @ (X @ W - Y) + lam * W
        np.testing.assert_allclose(gradient, 0.0, atol=1e-9)

    def test_matches_gradient_descent_minimizer(self, rng):
        X, Y = _linear_data(rng, n=40, p=4, v=2)
        lam = 5.0
        step = 1.0 / (np.linalg.norm(X, 2) ** 2 + lam)
        W = np.zeros((4, 2))
        for _ in range(5000):
            W -= step * (X.T @ (X @ W - Y) + lam * W)
        np.testing.assert_allclose(fit_ridge(X, Y, lam), W, atol=1e-6)

    def test_path_matches_individual_fits(self, rng):
        X, Y = _linear_data(rng, n=20, p=4, v=2)
        path = ridge_path(X, Y, LAMBDAS)
        for i, lam in enumerate(LAMBDAS):
            np.testing.assert_allclose(path[i], fit_ridge(X, Y, lam), atol=1e-12)

    def test_wide_design_is_fine_with_regularization(self, rng):
        X, Y = _linear_data(rng, n=5, p=12, v=2)
        assert np.isfinite(fit_ridge(X, Y, 1.0)).all()

    def test_singular_design_without_regularization(self, rng):
        X = rng.standard_normal((10, 3))
        X = np.hstack([X, X[:, :1]])
        with pytest.raises(NumericalError) as excinfo:
            fit_ridge(X, rng.standard_normal((10, 2)), 0.0)
        assert excinfo.value.condition_estimate is not None

    def test_negative_lambda_rejected(self, rng):
        X, Y = _linear_data(rng, n=10, p=2, v=1)
        with pytest.raises(RejectedInputError):
            ridge_path(X, Y, [-1.0])

    def test_row_mismatch_rejected(self, rng):
        with pytest.raises(RejectedInputError):
            fit_ridge(rng.standard_normal((5, 2)), rng.standard_normal((4, 2)), 1.0)

    def test_pearson_matches_numpy(self, rng):
        a, b = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
        expected = [np.corrcoef(a[:, i], b[:, i])[0, 1] for i in range(3)]
        np.testing.assert_allclose(pearson_per_voxel(a, b), expected, atol=1e-12)

    def test_pearson_constant_column_is_zero(self, rng):
        a = rng.standard_normal((10, 2))
        b = np.column_stack([rng.standard_normal(10), np.full(10, 3.0)])
        assert pearson_per_voxel(a, b)[1] == 0.0

    def test_pearson_needs_two_rows(self):
        with pytest.raises(RejectedInputError):
            pearson_per_voxel(np.ones((1, 2)), np.ones((1, 2)))

    def test_standardizer_constant_column(self):
        norm = Standardizer.fit(np.array([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_allclose(norm.scale, [1.0, 1.0])
        np.testing.assert_allclose(norm.transform(np.array([[2.0, 5.0]])), [[0.0, 0.0]])
        np.testing.assert_allclose(norm.inverse(norm.transform(np.array([[7.0, 1.0]]))), [[7.0, 1.0]])


class TestFolds:
    """Tests for fold layout helpers."""

    def test_contiguous_partition(self):
        folds = make_folds(10, 4, 3)
        assert [list(f) for f in folds.outer] == [[0, 1, 2], [3, 4, 5], [6, 7], [8, 9]]
        folds.validate(10)

    def test_train_rows_keep_fold_order(self):
        folds = FoldSpec((np.array([4, 5]), np.array([0, 1]), np.array([2, 3])), 2)
        np.testing.assert_array_equal(folds.train_rows(0), [0, 1, 2, 3])
        np.testing.assert_array_equal(folds.train_rows(1), [4, 5, 2, 3])

    def test_too_few_rows(self):
        with pytest.raises(RejectedInputError):
            make_folds(3, 4, 3)

    def test_partition_checked(self):
        with pytest.raises(RejectedInputError):
            FoldSpec((np.array([0, 1]), np.array([1, 2])), 2).validate(3)

    def test_decomposition_concatenates_back(self, rng):
        weights = rng.standard_normal((12, 3))
        blocks = decompose_weights(weights, 4)
        assert all(b.shape == (3, 3) for b in blocks)
        np.testing.assert_array_equal(np.concatenate(blocks), weights)

    def test_decomposition_shape_checked(self, rng):
        with pytest.raises(RejectedInputError):
            decompose_weights(rng.standard_normal((10, 3)), 4)

    def test_lambda_ties_go_to_larger(self):
        assert select_lambda(np.array([0.5, 0.7, 0.7]), [0.1, 1.0, 10.0]) == 10.0
        assert select_lambda(np.array([0.9, 0.7, 0.7]), [0.1, 1.0, 10.0]) == 0.1


class TestNestedCV:
    """Tests for nested cross-validated encoding models."""

    def setup_method(self):
        self.rng = np.random.default_rng(21)
        self.X, self.Y = _linear_data(self.rng, n=80, p=6, v=5, noise=0.1)

    def test_recovers_linear_signal(self):
        model, score = nested_cv(self.X, self.Y, make_folds(80, 4, 3), LAMBDAS, delays=2, layer=1, subject=0)
        assert len(model.folds) == 4
        assert score.mean_r > 0.95
        assert score.layer == 1 and score.r.shape == (5,)

    def test_noise_only_responses_score_near_zero(self):
        means = []
        for seed in range(5):
            rng = np.random.default_rng([5, seed])
            X = rng.standard_normal((200, 6))
            Y = rng.standard_normal((200, 20))
            _, score = nested_cv(X, Y, make_folds(200, 4, 3), LAMBDAS)
            assert abs(score.mean_r) < 0.1
            means.append(score.mean_r)
        assert abs(np.mean(means)) < 0.1

    def test_heads_reproduce_predictions(self):
        model, _ = nested_cv(self.X, self.Y, make_folds(80, 4, 3), LAMBDAS, delays=2)
        fold = model.folds[1]
        expected = fold.x_norm.transform(self.X[:3]) @ fold.weights
        np.testing.assert_allclose(fold.predict(self.X[:3]), expected, atol=1e-10)
        assert len(fold.heads) == 2

    def test_test_rows_do_not_leak(self):
        folds = make_folds(80, 4, 3)
        model, _ = nested_cv(self.X, self.Y, folds, LAMBDAS)
        tampered = self.Y.copy()
        tampered[folds.outer[0]] += 100.0 * self.rng.standard_normal((len(folds.outer[0]), 5))
        again, _ = nested_cv(self.X, tampered, folds, LAMBDAS)
        np.testing.assert_array_equal(model.folds[0].weights, again.folds[0].weights)
        assert model.folds[0].lam == again.folds[0].lam

    def test_row_permutation_with_remapped_folds(self):
        folds = make_folds(80, 4, 3)
        _, score = nested_cv(self.X, self.Y, folds, LAMBDAS)
        order = self.rng.permutation(80)
        new_position = np.argsort(order)
        remapped = FoldSpec(tuple(new_position[rows] for rows in folds.outer), folds.inner_folds)
        _, permuted = nested_cv(self.X[order], self.Y[order], remapped, LAMBDAS)
        np.testing.assert_allclose(permuted.r, score.r, atol=1e-10)

    def test_fold_for_row(self):
        folds = make_folds(80, 4, 3)
        model, _ = nested_cv(self.X, self.Y, folds, LAMBDAS)
        assert model.fold_for_row(int(folds.outer[2][0])).fold == 2

    def test_tiny_fold_skipped(self):
        folds = FoldSpec((np.arange(0, 39), np.arange(39, 79), np.array([79])), 2)
        model, _ = nested_cv(self.X, self.Y, folds, LAMBDAS)
        assert [f.fold for f in model.folds] == [0, 1]

    def test_row_mismatch(self):
        with pytest.raises(RejectedInputError):
            nested_cv(self.X, self.Y[:-1], make_folds(80, 4, 3), LAMBDAS)

    def test_model_round_trip(self, tmp_path):
        model, _ = nested_cv(self.X, self.Y, make_folds(80, 4, 3), LAMBDAS, delays=2, layer=3, subject=1)
        path = os.path.join(tmp_path, "model.npz")
        save_encoding_model(path, model)
        loaded = load_encoding_model(path)
        assert loaded.layer == 3 and loaded.subject == 1 and loaded.lambdas == model.lambdas
        np.testing.assert_array_equal(loaded.folds[2].weights, model.folds[2].weights)
        np.testing.assert_array_equal(loaded.folds[2].test_rows, model.folds[2].test_rows)

    def test_missing_model_names_producer(self, tmp_path):
        with pytest.raises(DependencyError) as excinfo:
            load_encoding_model(os.path.join(tmp_path, "none.npz"))
        assert excinfo.value.producer == "fit"


class TestResponsesAndScores:
    """Tests for response alignment and score files."""

    def test_align_by_keys(self):
        responses = ResponseMatrix(np.arange(6.0).reshape(3, 2), np.array([[0, 1], [0, 2], [1, 1]]))
        np.testing.assert_array_equal(responses.align(np.array([[1, 1], [0, 1]])), [[4.0, 5.0], [0.0, 1.0]])

    def test_align_missing_key(self):
        responses = ResponseMatrix(np.zeros((1, 2)), np.array([[0, 1]]))
        with pytest.raises(InternalConsistencyError):
            responses.align(np.array([[0, 2]]))

    def test_response_round_trip(self, tmp_path):
        responses = ResponseMatrix(np.ones((2, 3)), np.array([[0, 3], [0, 4]]), subject=2)
        path = os.path.join(tmp_path, "subject_2.npz")
        save_responses(path, responses)
        loaded = load_responses(path)
        assert loaded.subject == 2
        np.testing.assert_array_equal(loaded.row_keys, responses.row_keys)

    def test_alignment_scores_round_trip(self, tmp_path):
        scores = [AlignmentScore(0, 0, np.array([0.1, 0.2])), AlignmentScore(1, 0, np.array([0.3, 0.5]))]
        path = os.path.join(tmp_path, "alignment_scores.csv")
        write_alignment_scores(path, scores)
        loaded = read_alignment_scores(path)
        assert [(s.layer, s.subject) for s in loaded] == [(0, 0), (1, 0)]
        np.testing.assert_allclose(loaded[1].r, [0.3, 0.5])


class TestLayerSelection:
    """Tests for early/middle/late layer selection."""

    def test_best_layer_per_third(self):
        selection = select_layers([0.1, 0.5, 0.2, 0.3, 0.3, 0.9], 6)
        assert selection.as_list() == [1, 3, 5]

    def test_ties_go_to_shallower(self):
        assert select_layers([0.2, 0.2, 0.2], 3).as_list() == [0, 1, 2]
        assert select_layers([0.1, 0.1, 0.4, 0.4, 0.3, 0.3], 6).middle == 2

    def test_needs_three_layers(self):
        with pytest.raises(RejectedInputError):
            select_layers([0.1, 0.2], 2)

    def test_layer_means_average_subjects(self):
        scores = [
            AlignmentScore(0, 0, np.array([0.2, 0.4])),
            AlignmentScore(0, 1, np.array([0.0, 0.2])),
            AlignmentScore(1, 0, np.array([0.5, 0.5])),
        ]
        assert layer_means(scores) == pytest.approx({0: 0.2, 1: 0.5})
