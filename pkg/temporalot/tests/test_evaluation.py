import json
from unittest import TestCase

import numpy as np
from deepdiff import DeepDiff

from temporalot.bucket import BucketConfig, estimate_prompt_value, norton_distance
from temporalot.core import Dataset, TokenMatrix
from temporalot.exceptions import RetrievalConfigError, RecallInputError, GroundTruthError, ConfigError, \
    DimensionMismatchError
from temporalot.evaluation import RetrievalConfig, RecallReport, GroundTruthSegments, score_videos, rank_videos, \
    recall_at_k, evaluate_retrieval, sliding_window_similarity, alignment_recall, prompt_values, rank_clips, \
    evaluate_clip_retrieval
from temporalot.similarity import clip_caption_matrix
from temporalot.synthetic import self_copy_dataset
from temporalot.tests.util import single_token_video, make_dataset, TempDirTestCase


class TestRetrievalConfig(TestCase):
    def test_defaults(self):
        cfg = RetrievalConfig()
        assert cfg.measure == 'ot_norton'
        assert cfg.ks == [1, 5, 10]
        assert cfg.sim_cfg.mode == 'mean_pool'
        assert cfg.solver.epsilon == 0.1
        assert cfg.bucket.quantile == 0.3
        assert (cfg.prompt_scope, cfg.capavg_scope) == ('dataset', 'global')
        assert not cfg.dtw_normalize and not cfg.record_runtime
        assert cfg.batch_size is None and cfg.clip_retrieval

    def test_errors(self):
        for kwargs in ({'measure': 'soft_dtw'}, {'ks': []}, {'ks': [5, 1]}, {'ks': [0, 1]}, {'ks': [True]},
                       {'ks': [1.5]}, {'prompt_scope': 'video'}, {'capavg_scope': 'local'},
                       {'bucket': BucketConfig(p=0.2), 'prompt_scope': 'batch'}, {'batch_size': 0},
                       {'batch_size': True}, {'batch_size': 1.5}):
            with self.assertRaises(RetrievalConfigError):
                RetrievalConfig(**kwargs)


class TestRecall(TestCase):
    def test_recall_at_k(self):
        report = recall_at_k([1, 3, 12], [1, 5, 10], 'dtw')
        assert isinstance(report, RecallReport)
        assert report.per_k == {1: 1 / 3, 5: 2 / 3, 10: 2 / 3}
        assert report.mean_rank == 16 / 3
        assert report.runtime_s is None
        assert recall_at_k([1, 1]).per_k == {1: 1.0, 5: 1.0, 10: 1.0}

    def test_errors(self):
        with self.assertRaises(RecallInputError):
            recall_at_k([])
        with self.assertRaises(RecallInputError):
            recall_at_k([0, 1])
        with self.assertRaises(RecallInputError):
            recall_at_k([1.5])

    def test_to_dict(self):
        report = RecallReport('capavg', {1: 0.5, 5: 1.0}, [1, 2], query_ids=['a', 'b'], score='votes')
        data = json.loads(report.to_json())
        assert data == {'measure': 'capavg', 'recall': {'1': 0.5, '5': 1.0}, 'ranks': [1, 2], 'runtime_s': None,
                        'query_ids': ['a', 'b'], 'score': 'votes', 'caption_to_clip': None}
        report.clip_report = RecallReport('caption_to_clip', {1: 1.0}, [1])
        assert json.loads(report.to_json())['caption_to_clip']['ranks'] == [1]


class TestSelfCopyRetrieval(TestCase):
    def setUp(self):
        self.dataset = self_copy_dataset(n_videos=4, n_clips=3, dim=16, seed=0)

    def test_every_measure_ranks_the_true_video_first(self):
        for measure in ('capavg', 'dtw', 'otam', 'ot_norton'):
            assert rank_videos(self.dataset, RetrievalConfig(measure)) == [1, 1, 1, 1], measure

    def test_capavg_scores_caption_count(self):
        scores = score_videos(self.dataset, RetrievalConfig('capavg'))
        assert scores.shape == (4, 4)
        assert np.diag(scores).tolist() == [3.0] * 4
        assert scores.sum(axis=1).tolist() == [3.0] * 4

    def test_warping_scores(self):
        for measure in ('dtw', 'otam'):
            scores = score_videos(self.dataset, RetrievalConfig(measure))
            assert np.all(np.abs(np.diag(scores)) <= 1e-6)
            assert np.all(scores <= 1e-6)

    def test_report(self):
        report = evaluate_retrieval(self.dataset, RetrievalConfig('dtw', ks=[1, 2]))
        assert report.per_k == {1: 1.0, 2: 1.0}
        assert report.query_ids == self.dataset.ids
        assert report.measure == 'dtw'
        assert 'dtw' in report.score
        assert report.runtime_s is None
        timed = evaluate_retrieval(self.dataset, RetrievalConfig('dtw', record_runtime=True))
        assert timed.runtime_s >= 0

    def test_batch_prompt_scope(self):
        ranks = rank_videos(self.dataset, RetrievalConfig('ot_norton', prompt_scope='batch'))
        assert len(ranks) == 4
        assert all(1 <= rank <= 4 for rank in ranks)

    def test_threads_are_reproducible(self):
        single = evaluate_retrieval(self.dataset, RetrievalConfig('ot_norton', threads=1))
        threaded = evaluate_retrieval(self.dataset, RetrievalConfig('ot_norton', threads=4))
        assert single.to_json() == threaded.to_json()

    def test_needs_two_videos(self):
        single = Dataset([self.dataset.videos[0]])
        with self.assertRaises(RetrievalConfigError):
            rank_videos(single, RetrievalConfig('dtw'))
        assert score_videos(single, RetrievalConfig('dtw')).shape == (1, 1)


class TestRankTies(TestCase):
    def test_equal_scores_prefer_lower_index(self):
        vectors = np.eye(3)[:2]
        dataset = Dataset([single_token_video('a', vectors), single_token_video('b', vectors)])
        for measure in ('capavg', 'dtw', 'otam', 'ot_norton'):
            assert rank_videos(dataset, RetrievalConfig(measure)) == [1, 2], measure


class TestPromptValues(TestCase):
    def setUp(self):
        self.dataset = make_dataset(n_videos=4, n_clips=3, dim=8, seed=5)
        self.diagonals = [video.diagonal(RetrievalConfig().sim_cfg) for video in self.dataset]

    def test_dataset_scope(self):
        values = prompt_values(self.dataset, RetrievalConfig())
        assert values == [estimate_prompt_value(np.concatenate(self.diagonals), 0.3)] * 4
        assert prompt_values(self.dataset, RetrievalConfig(prompt_scope='batch')) == values

    def test_batches(self):
        values = prompt_values(self.dataset, RetrievalConfig(prompt_scope='batch', batch_size=2))
        first = estimate_prompt_value(np.concatenate(self.diagonals[:2]), 0.3)
        second = estimate_prompt_value(np.concatenate(self.diagonals[2:]), 0.3)
        assert values == [first, first, second, second]
        values = prompt_values(self.dataset, RetrievalConfig(prompt_scope='batch', batch_size=3))
        assert values[:3] == [estimate_prompt_value(np.concatenate(self.diagonals[:3]), 0.3)] * 3
        assert values[3] == estimate_prompt_value(self.diagonals[3], 0.3)

    def test_fixed_and_other_measures(self):
        assert prompt_values(self.dataset, RetrievalConfig(bucket=BucketConfig(p=0.25))) == [0.25] * 4
        assert prompt_values(self.dataset, RetrievalConfig('dtw')) == [None] * 4

    def test_every_candidate_shares_the_prompt_value(self):
        cfg = RetrievalConfig(prompt_scope='batch', batch_size=2)
        scores = score_videos(self.dataset, cfg)
        videos = list(self.dataset)
        for query, p in enumerate(prompt_values(self.dataset, cfg)):
            for candidate, video in enumerate(videos):
                S = clip_caption_matrix(video, videos[query], cfg.sim_cfg).values
                _, expected = norton_distance(S, BucketConfig(p=p), cfg.solver)
                assert abs(scores[query, candidate] - expected) <= 1e-12, (query, candidate)


class TestClipRetrieval(TestCase):
    def test_orthogonal_clips(self):
        vectors = np.eye(4)
        dataset = Dataset([single_token_video('a', vectors[:2]), single_token_video('b', vectors[2:])])
        assert rank_clips(dataset) == [1, 1, 1, 1]
        report = evaluate_clip_retrieval(dataset, [1])
        assert report.measure == 'caption_to_clip'
        assert report.per_k == {1: 1.0}
        assert report.query_ids == ['a#0', 'a#1', 'b#0', 'b#1']

    def test_ties_prefer_lower_index(self):
        vectors = np.eye(3)
        dataset = Dataset([single_token_video('a', [vectors[0], vectors[0]]), single_token_video('b', [vectors[1]])])
        assert rank_clips(dataset) == [1, 2, 1]
        assert evaluate_clip_retrieval(dataset, [1, 2]).per_k == {1: 2 / 3, 2: 1.0}

    def test_captions_can_miss(self):
        vectors = np.eye(3)
        dataset = Dataset([single_token_video('a', vectors[:2], [vectors[1], vectors[0]]),
                           single_token_video('b', vectors[2:])])
        assert rank_clips(dataset) == [2, 2, 1]

    def test_needs_two_clips(self):
        with self.assertRaises(RetrievalConfigError):
            rank_clips(Dataset([single_token_video('a', np.eye(2)[:1])]))

    def test_in_retrieval_report(self):
        dataset = self_copy_dataset(n_videos=3, n_clips=2, dim=16, seed=1)
        report = evaluate_retrieval(dataset, RetrievalConfig('dtw'))
        assert report.clip_report.to_dict() == evaluate_clip_retrieval(dataset).to_dict()
        assert json.loads(report.to_json())['caption_to_clip']['measure'] == 'caption_to_clip'
        assert evaluate_retrieval(dataset, RetrievalConfig('dtw', clip_retrieval=False)).clip_report is None


class TestShuffledIngestion(TestCase):
    @staticmethod
    def keyed(report):
        return {'recall': report.per_k, 'ranks': dict(zip(report.query_ids, report.ranks)),
                'clips': dict(zip(report.clip_report.query_ids, report.clip_report.ranks)),
                'clip_recall': report.clip_report.per_k}

    def test_report_follows_video_ids(self):
        dataset = make_dataset(n_videos=5, n_clips=3, dim=8, seed=11)
        order = [3, 0, 4, 1, 2]
        shuffled = Dataset([dataset.videos[index] for index in order])
        for measure in ('ot_norton', 'dtw', 'otam'):
            cfg = RetrievalConfig(measure, ks=[1, 2, 3])
            report, shuffled_report = evaluate_retrieval(dataset, cfg), evaluate_retrieval(shuffled, cfg)
            assert shuffled_report.query_ids == [f'video{index}' for index in order]
            assert not DeepDiff(self.keyed(report), self.keyed(shuffled_report)), measure


class TestReportFile(TempDirTestCase):
    def test_write(self):
        report = recall_at_k([1, 2], [1], 'otam')
        report.write(self.path / 'report.json')
        data = json.loads((self.path / 'report.json').read_text())
        assert data['recall'] == {'1': 0.5}
        assert data['ranks'] == [1, 2]


class TestSlidingWindow(TestCase):
    def test_overlapping_windows(self):
        frames = TokenMatrix([[k] for k in range(1, 11)])
        sims = sliding_window_similarity(frames, [1.0], window_s=4, step_s=2, fps=1)
        assert sims.tolist() == [2.5, 2.5, 3.5, 3.5, 5.5, 5.5, 7.5, 7.5, 8.5, 8.5]

    def test_last_window_reaches_the_end(self):
        frames = TokenMatrix([[k] for k in range(1, 12)])
        sims = sliding_window_similarity(frames, [1.0], window_s=4, step_s=3, fps=1)
        assert sims.tolist() == [2.5, 2.5, 2.5, 4.0, 5.5, 5.5, 7.0, 9.0, 9.0, 9.0, 9.5]

    def test_short_video_is_one_window(self):
        frames = TokenMatrix([[1.0, 0.0], [3.0, 0.0], [5.0, 0.0]])
        sims = sliding_window_similarity(frames, [0.5, 1.0])
        assert sims.tolist() == [1.5, 1.5, 1.5]

    def test_fps(self):
        frames = TokenMatrix([[k] for k in range(1, 9)])
        sims = sliding_window_similarity(frames, [1.0], window_s=2, step_s=2, fps=2)
        assert sims.tolist() == [2.5, 2.5, 2.5, 2.5, 6.5, 6.5, 6.5, 6.5]

    def test_errors(self):
        frames = TokenMatrix([[1.0, 0.0]])
        with self.assertRaises(ConfigError):
            sliding_window_similarity(frames, [1.0, 0.0], step_s=0.5)
        with self.assertRaises(ConfigError):
            sliding_window_similarity(frames, [1.0, 0.0], window_s=4, step_s=8)
        with self.assertRaises(ConfigError):
            sliding_window_similarity(frames, [1.0, 0.0], fps=0)
        with self.assertRaises(DimensionMismatchError):
            sliding_window_similarity(frames, [1.0, 0.0, 0.0])


class TestAlignmentRecall(TestCase):
    def test_segments(self):
        gt = GroundTruthSegments([(0, 1), None, (2.5, 4)])
        assert len(gt) == 3
        assert gt.alignable == [True, False, True]
        assert gt.spans == [(0.0, 1.0), None, (2.5, 4.0)]
        with self.assertRaises(GroundTruthError):
            GroundTruthSegments([(2, 2)])

    def test_recall(self):
        assert alignment_recall([[0.1, 0.9, 0.2], [0.8, 0.1, 0.1]], GroundTruthSegments([(1, 2), (1, 2)])) == 0.5
        gt = GroundTruthSegments([(0, 1), None, (2.5, 4)])
        sims = [[0.9, 0.1, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.2, 0.3]]
        assert alignment_recall(sims, gt) == 1.0
        assert alignment_recall([[0.0, 0.0, 1.0, 0.0]], GroundTruthSegments([(1, 1.5)]), fps=2) == 1.0

    def test_earliest_frame_on_ties(self):
        assert alignment_recall([[0.5, 0.5]], GroundTruthSegments([(0, 0.5)])) == 1.0

    def test_errors(self):
        with self.assertRaises(GroundTruthError):
            alignment_recall([[0.1]], GroundTruthSegments([None]))
        with self.assertRaises(GroundTruthError):
            alignment_recall([[0.1]], GroundTruthSegments([(0, 1), (0, 1)]))
