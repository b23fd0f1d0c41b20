import math
from unittest import TestCase

import numpy as np

from temporalot.core import TokenMatrix
from temporalot.exceptions import ConfigError, DimensionMismatchError, TemporalOTValueError
from temporalot.similarity import SimilarityConfig, frame_word_matrix, log_sum_exp, fine_grained_similarity, \
    pooled_vectors, pooled_matrix, clip_caption_matrix
from temporalot.tests.util import make_video, single_token_video, unit_tokens


class TestSimilarityConfig(TestCase):
    def test_defaults(self):
        cfg = SimilarityConfig()
        assert (cfg.alpha, cfg.mode) == (1.0, 'fine_grained')

    def test_alpha_must_be_positive(self):
        with self.assertRaises(ConfigError) as err:
            SimilarityConfig(alpha=0)
        assert 'alpha must be positive' in str(err.exception)
        cfg = SimilarityConfig()
        with self.assertRaises(ConfigError):
            cfg.alpha = -1
        assert cfg.alpha == 1.0

    def test_unknown_mode(self):
        with self.assertRaises(ConfigError):
            SimilarityConfig(mode='attention')


class TestFrameWordMatrix(TestCase):
    def test_basis(self):
        assert frame_word_matrix(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0], [0, 1]])).tolist() == [[1, 0]]
        assert frame_word_matrix(TokenMatrix([[0.6, 0.8]]), TokenMatrix([[0.6, 0.8]])).round(6).tolist() == [[1.0]]

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            frame_word_matrix(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0, 0]]))


class TestLogSumExp(TestCase):
    def test_examples(self):
        assert log_sum_exp([2.0], 1.0) == 2.0
        assert math.isclose(log_sum_exp([0.0, 0.0], 1.0), math.log(2), abs_tol=1e-12)
        assert abs(log_sum_exp([1.0, 0.0], 0.001) - 1.0) <= 1e-6

    def test_no_overflow(self):
        assert math.isclose(log_sum_exp([700.0, 699.0], 1.0), 700 + math.log1p(math.exp(-1)), rel_tol=1e-12)
        assert log_sum_exp([0.7, -0.7], 0.001) == 0.7

    def test_agrees_with_scipy(self):
        from scipy.special import logsumexp
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.normal(size=rng.integers(1, 12))
            alpha = rng.uniform(0.01, 2)
            assert math.isclose(log_sum_exp(x, alpha), alpha * logsumexp(x / alpha), rel_tol=1e-12, abs_tol=1e-12)
        for value in (0.3, -1.7, 1e-3):
            assert log_sum_exp([value], 0.1) == value

    def test_bounds_monotonicity_shift(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=rng.integers(1, 10))
            alpha = rng.uniform(0.05, 3)
            value = log_sum_exp(x, alpha)
            assert x.max() - 1e-12 <= value <= x.max() + alpha * math.log(x.size) + 1e-12
            assert log_sum_exp(x, alpha / 3) <= value + 1e-12
            assert math.isclose(log_sum_exp(x + 2.5, alpha), value + 2.5, abs_tol=1e-9)

    def test_errors(self):
        with self.assertRaises(TemporalOTValueError):
            log_sum_exp([], 1.0)
        with self.assertRaises(ConfigError):
            log_sum_exp([1.0], 0.0)


class TestFineGrainedSimilarity(TestCase):
    def test_single_tokens(self):
        clip, caption = TokenMatrix([[0.6, 0.8]]), TokenMatrix([[1.0, 0.0]])
        assert math.isclose(fine_grained_similarity(clip, caption), 0.6, abs_tol=1e-7)

    def test_hand_evaluation(self):
        value = fine_grained_similarity(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0], [0, 1]]))
        expected = 0.5 * (math.log(math.e + 1) + 0.5)
        assert math.isclose(value, expected, abs_tol=1e-12)
        assert round(value, 6) == 0.906631

    def test_symmetry_and_permutation(self):
        rng = np.random.default_rng(5)
        clip, caption = unit_tokens(rng, 4, 6), unit_tokens(rng, 3, 6)
        value = fine_grained_similarity(clip, caption)
        assert math.isclose(value, fine_grained_similarity(caption, clip), abs_tol=1e-12)
        shuffled = TokenMatrix(clip.values[[2, 0, 3, 1]])
        assert math.isclose(value, fine_grained_similarity(shuffled, caption), abs_tol=1e-12)

    def test_small_alpha_is_max_pool(self):
        rng = np.random.default_rng(6)
        clip, caption = unit_tokens(rng, 5, 8), unit_tokens(rng, 4, 8)
        frame_word = frame_word_matrix(clip, caption)
        hard = 0.5 * (frame_word.max(axis=1).mean() + frame_word.max(axis=0).mean())
        assert abs(fine_grained_similarity(clip, caption, SimilarityConfig(alpha=1e-4)) - hard) <= 1e-3
        assert math.isclose(fine_grained_similarity(clip, caption, SimilarityConfig(mode='max_pool')), hard,
                            abs_tol=1e-12)

    def test_mean_pool_mode_is_rejected(self):
        with self.assertRaises(ConfigError):
            fine_grained_similarity(TokenMatrix([[1]]), TokenMatrix([[1]]), SimilarityConfig(mode='mean_pool'))


class TestClipCaptionMatrix(TestCase):
    def test_shape(self):
        video = make_video('a', [2, 3], dim=4, seed=1)
        paragraph = make_video('b', [1, 2, 2], dim=4, seed=2)
        S = clip_caption_matrix(video, paragraph)
        assert S.shape == (2, 3)
        assert math.isclose(S.values[1, 2], fine_grained_similarity(video.clip_tokens[1], paragraph.caption_tokens[2]))

    def test_caption_list(self):
        video = make_video('a', [2, 3], dim=4, seed=1)
        captions = make_video('b', [1], dim=4, seed=2).caption_tokens
        assert clip_caption_matrix(video, captions).shape == (2, 1)

    def test_single_token_modes_agree(self):
        rng = np.random.default_rng(7)
        video = single_token_video('a', unit_tokens(rng, 3, 5).values, unit_tokens(rng, 3, 5).values)
        fine = clip_caption_matrix(video, video, SimilarityConfig(mode='fine_grained')).values
        mean = clip_caption_matrix(video, video, SimilarityConfig(mode='mean_pool')).values
        np.testing.assert_allclose(fine, mean, atol=1e-12)

    def test_self_similarity(self):
        rng = np.random.default_rng(8)
        vectors = unit_tokens(rng, 3, 5).values
        video = single_token_video('a', vectors)
        np.testing.assert_allclose(np.diag(clip_caption_matrix(video, video, SimilarityConfig(mode='mean_pool')).values),
                                   1, atol=1e-6)

    def test_pooled(self):
        tokens = TokenMatrix([[1, 0], [0, 1]])
        assert pooled_vectors(tokens).tolist() == [0.5, 0.5]
        assert pooled_matrix([tokens, TokenMatrix([[2, 2]])]).tolist() == [[0.5, 0.5], [2, 2]]

    def test_errors(self):
        video = make_video('a', [1], dim=4)
        with self.assertRaises(TemporalOTValueError):
            clip_caption_matrix(video, [])
        with self.assertRaises(DimensionMismatchError):
            clip_caption_matrix(video, make_video('b', [1], dim=3).caption_tokens)
