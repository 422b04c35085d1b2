"""Activity-detection model: classifier, losses, training, scores, traces."""

import math

import numpy as np
import pytest

from uasd.activity import (
    ActivityTrainConfig,
    ClipWindows,
    activity_trace,
    anomaly_score_sad,
    classify,
    clip_windows,
    detection_loss,
    embed,
    init_activity_model,
    overall_cost,
    trace_accuracy,
    train_activity_model,
)
from uasd.errors import ContractError, DegenerateInputError
from uasd.features import FeatureMatrix, windows
from uasd.nn import Parameter

L = 5
TINY = ActivityTrainConfig(epochs=2, channels=4, blocks=1, embedding_dim=8,
                           windows_per_epoch=64, log_cost_every=1)


def _features(T, F=12, seed=0, labels=None, clip_id="clip"):
    rng = np.random.default_rng(seed)
    lab = labels
    if lab is None:
        lab = (np.arange(T) % 3 > 0).astype(int)
    return FeatureMatrix(rng.normal(0, 1, (T, F)), 1024, 512,
                         frame_labels=lab, clip_id=clip_id)


def _model(F=12, seed=0, random_classifier=False):
    params = init_activity_model(F, TINY, L, seed)
    if random_classifier:
        rng = np.random.default_rng(seed + 99)
        params.classifier.value[:] = rng.normal(0, 0.3, params.classifier.shape)
    return params


class TestClassify:
    def test_equal_weights_give_half_half(self, rng):
        w = rng.normal(0, 1, 8)
        post = classify(rng.normal(0, 1, (4, 8)), np.stack([w, w]))
        np.testing.assert_array_equal(post, 0.5)

    def test_zero_embedding_gives_half_half(self, rng):
        post = classify(np.zeros((3, 8)), rng.normal(0, 1, (2, 8)))
        np.testing.assert_array_equal(post, 0.5)

    def test_log3_logit_gap_gives_three_quarters(self):
        """w1.x - w2.x = ln 3 puts 75% mass on the first class."""
        w = np.stack([np.array([math.log(3.0)]), np.array([0.0])])
        post = classify(np.ones((1, 1)), w)
        np.testing.assert_allclose(post[0], [0.75, 0.25], atol=1e-12)

    def test_rows_are_posteriors(self, rng):
        post = classify(rng.normal(0, 2, (10, 8)), rng.normal(0, 1, (2, 8)))
        np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((post > 0) & (post < 1))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ContractError):
            classify(np.zeros((2, 7)), rng.normal(0, 1, (2, 8)))


class TestDetectionLoss:
    def test_uniform_posteriors_cost_L_ln2(self):
        loss = detection_loss(np.full((5, 2), 0.5), np.array([0, 1, 1, 0, 1]))
        assert loss == pytest.approx(5 * math.log(2.0), abs=1e-12)

    def test_single_frame_quarter_three_quarter(self):
        loss = detection_loss(np.array([[0.25, 0.75]]), np.array([1]))
        assert loss == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_near_one_hot_posteriors_drive_loss_to_zero(self):
        p = np.array([[1e-9, 1 - 1e-9]] * 5)
        labels = np.ones(5, dtype=int)
        assert detection_loss(p, labels) < 1e-8

    def test_permutation_equivariance(self, rng):
        post = classify(rng.normal(0, 1, (7, 8)), rng.normal(0, 1, (2, 8)))
        labels = rng.integers(0, 2, 7)
        perm = rng.permutation(7)
        assert detection_loss(post, labels) == pytest.approx(
            detection_loss(post[perm], labels[perm]), abs=1e-12
        )

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            detection_loss(np.full((3, 2), 0.5), np.array([0, 1]))


class TestEmbed:
    def test_shapes_and_determinism(self):
        params = _model()
        feats = _features(T=9)
        ws = windows(feats, L)
        e1 = embed(ws[0].data, params)
        e2 = embed(ws[0].data, params)
        assert e1.shape == (L, TINY.embedding_dim)
        np.testing.assert_array_equal(e1, e2)

    def test_batch_shape(self):
        params = _model()
        batch = np.stack([w.data for w in windows(_features(T=9), L)])
        assert embed(batch, params).shape == (5, L, TINY.embedding_dim)

    def test_window_length_contract(self):
        with pytest.raises(ContractError):
            embed(np.zeros((3, 12)), _model())

    def test_zeroed_projection_gives_zero_embeddings(self):
        params = _model()
        head = params.embedder.layers[-1]
        for p in head.params():
            p.value[:] = 0.0
        out = embed(np.random.default_rng(0).normal(0, 1, (L, 12)), params)
        np.testing.assert_array_equal(out, 0.0)


class TestAnomalyScoreSad:
    def test_symmetric_classifier_scores_L_ln2(self):
        """Zero (symmetric) classifier: score is exactly L*ln2, any input."""
        params = _model()  # classifier initialized to zero
        score = anomaly_score_sad(_features(T=17, seed=3), params)
        assert score == pytest.approx(5 * math.log(2.0), abs=1e-9)

    def test_matches_brute_force_window_mean(self):
        """Mean over windows of the per-window cross entropy, recomputed
        with the public single-window ops."""
        params = _model(random_classifier=True)
        feats = _features(T=11, seed=4)
        expected = np.mean(
            [
                detection_loss(classify(embed(w.data, params), params.classifier),
                               w.labels)
                for w in windows(feats, L)
            ]
        )
        assert anomaly_score_sad(feats, params) == pytest.approx(expected, abs=1e-12)

    def test_single_window_clip(self):
        params = _model(random_classifier=True)
        feats = _features(T=L, seed=5)
        w = windows(feats, L)[0]
        expected = detection_loss(
            classify(embed(w.data, params), params.classifier), w.labels
        )
        assert anomaly_score_sad(feats, params) == pytest.approx(expected, abs=1e-12)

    def test_missing_labels_redirects_to_outlier_score(self):
        params = _model()
        feats = _features(T=9)
        feats.frame_labels = None
        with pytest.raises(ContractError):
            anomaly_score_sad(feats, params)

    def test_constant_embedding_shift_in_weight_nullspace(self, rng):
        """Adding c with (w1-w2).c = 0 leaves posteriors unchanged."""
        w = rng.normal(0, 1, (2, 8))
        emb = rng.normal(0, 1, (6, 8))
        diff = w[0] - w[1]
        c = rng.normal(0, 1, 8)
        c -= diff * (c @ diff) / (diff @ diff)
        np.testing.assert_allclose(
            classify(emb + c, w), classify(emb, w), atol=1e-9
        )
        c_bad = diff  # maximally aligned shift must move the posteriors
        assert not np.allclose(classify(emb + c_bad, w), classify(emb, w))


class TestTraining:
    def _clips(self, n_clips=6, T=14, F=12):
        clips = []
        for k in range(n_clips):
            feats = _features(T=T, F=F, seed=k, clip_id=f"c{k}")
            clips.append(clip_windows(feats, L, need_labels=True))
        return clips

    def test_initial_cost_is_L_ln2(self):
        params = init_activity_model(12, TINY, L, seed=0)
        cost = overall_cost(self._clips(), params)
        assert cost == pytest.approx(5 * math.log(2.0), abs=1e-9)

    def test_training_reduces_cost_and_separates_weights(self):
        clips = self._clips()
        config = ActivityTrainConfig(epochs=4, channels=4, blocks=1,
                                     embedding_dim=8, windows_per_epoch=128)
        params, log = train_activity_model(clips, config, 12, L, seed=1)
        costs = log.costs()
        assert len(costs) == 4
        assert costs[-1] < 5 * math.log(2.0)
        assert np.linalg.norm(params.w1 - params.w2) > 0

    def test_single_clip_cost_is_plain_window_mean(self):
        """With one clip the per-clip weighting reduces to the flat mean."""
        clips = self._clips(n_clips=1)
        params = _model(random_classifier=True)
        per_window = [
            detection_loss(classify(embed(w.data, params), params.classifier),
                           w.labels)
            for w in windows(_features(T=14, seed=0, clip_id="c0"), L)
        ]
        assert overall_cost(clips, params) == pytest.approx(
            np.mean(per_window), abs=1e-12
        )

    def test_training_requires_labels(self):
        feats = _features(T=14)
        feats.frame_labels = None
        clip = clip_windows(feats, L, need_labels=False)
        with pytest.raises(ContractError):
            train_activity_model([clip], TINY, 12, L, seed=0)

    def test_deterministic_given_seed(self):
        clips = self._clips(n_clips=3)
        a, _ = train_activity_model(clips, TINY, 12, L, seed=7)
        b, _ = train_activity_model(clips, TINY, 12, L, seed=7)
        np.testing.assert_array_equal(a.classifier.value, b.classifier.value)
        for (na, pa), (nb, pb) in zip(
            [(n, p.value) for n, p in _named(a)], [(n, p.value) for n, p in _named(b)]
        ):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)


def _named(params):
    from uasd.nn.netspec import named_params

    return named_params(params.embedder)


class TestActivityTrace:
    def test_row_count_and_ranges(self):
        params = _model(random_classifier=True)
        feats = _features(T=11)
        trace = activity_trace(feats, params)
        n_windows = 11 - L + 1
        assert trace.shape == (n_windows * L, 3)
        assert np.all((trace[:, 2] > 0) & (trace[:, 2] < 1))
        assert set(trace[:, 0].astype(int)) == set(range(n_windows))
        assert set(trace[:, 1].astype(int)) == set(range(L))

    def test_trace_accuracy_against_known_labels(self):
        feats = _features(T=11)
        n_windows = 11 - L + 1
        rows = []
        for t in range(n_windows):
            for offset in range(L):
                p = 0.9 if feats.frame_labels[t + offset] == 1 else 0.1
                rows.append((t, offset, p))
        assert trace_accuracy(np.array(rows), feats.frame_labels) == 1.0
