"""
Retrieval and alignment evaluation.

Every paragraph of a dataset queries all its videos. Candidates are scored so that larger is better: Cap. Avg. counts
(or mean best similarities), bucketed transport similarity for ``ot_norton`` and negated warping cost for ``dtw`` and
``otam``. The rank of the true video is one plus the number of candidates with a higher score plus the number of
candidates with an equal score and a lower index.

At clip level every caption of the dataset queries all its clips through the mean pooled clip-caption matrix, with the
same tie rule.
"""
import logging
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from quicktions import Fraction

from temporalot.bucket import BucketConfig, norton_distance, estimate_prompt_value
from temporalot.config import MEASURES, RECALL_KS, PROMPT_SCOPES, CAPAVG_SCOPES, EPSILON_VIDEO, WINDOW_S, STEP_S, \
    FPS
from temporalot.core import Dataset, TokenMatrix
from temporalot.exceptions import RetrievalConfigError, RecallInputError, GroundTruthError, ConfigError, \
    DimensionMismatchError
from temporalot.similarity import SimilarityConfig, clip_caption_matrix
from temporalot.sinkhorn import SolverConfig
from temporalot.tempalign import cost_from_similarity, dtw, otam, cap_avg_scores
from temporalot.util import PathLike, parallel_map, to_json

__all__ = ['RetrievalConfig', 'RecallReport', 'GroundTruthSegments', 'prompt_values', 'score_videos',
           'rank_videos', 'rank_clips', 'recall_at_k', 'evaluate_retrieval', 'evaluate_clip_retrieval',
           'sliding_window_similarity', 'alignment_recall']

logger = logging.getLogger(__name__)

SCORE_DESCRIPTIONS = {
    'capavg': 'matched clip count (higher is better)',
    'dtw': 'negated dtw distance of cost 1 - similarity',
    'otam': 'negated otam distance of cost 1 - similarity',
    'ot_norton': 'bucketed transport similarity sum(Q_in * S)',
}


class RetrievalConfig:
    """
    :param measure: one of ``capavg``, ``dtw``, ``otam``, ``ot_norton``
    :param sim_cfg: clip-caption similarity, defaults to mean pooling
    :param solver: transport solver of ``ot_norton``
    :param bucket: prompt bucket of ``ot_norton``
    :param ks: recall cut-offs, ascending and positive
    :param prompt_scope: ``dataset`` estimates one prompt value from the originally aligned pairs of all videos,
                         ``batch`` estimates one per batch of ``batch_size`` consecutive videos from the aligned pairs
                         of that batch and uses it for every candidate of the batch's paragraphs
    :param batch_size: videos per batch of the ``batch`` scope, ``None`` for a single batch
    :param capavg_scope: ``global`` or ``per_candidate``
    :param dtw_normalize: divide warping distances by the path length
    :param threads: worker threads, defaults to ``NORTON_THREADS`` or 1
    :param record_runtime: store the wall clock runtime in the report (reports are then no longer reproducible byte
                           by byte)
    :param clip_retrieval: add caption to clip recall to the report
    """

    def __init__(self, measure: str = 'ot_norton', sim_cfg: SimilarityConfig = None, solver: SolverConfig = None,
                 bucket: BucketConfig = None, ks: Sequence[int] = RECALL_KS, prompt_scope: str = 'dataset',
                 capavg_scope: str = 'global', dtw_normalize: bool = False, threads: Optional[int] = None,
                 record_runtime: bool = False, batch_size: Optional[int] = None, clip_retrieval: bool = True):
        if measure not in MEASURES:
            raise RetrievalConfigError(f'unknown measure {measure!r}; valid measures: {", ".join(MEASURES)}')
        ks = list(ks)
        if not ks or any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks) or ks != sorted(ks):
            raise RetrievalConfigError(f'ks must be ascending positive integers, got {ks}')
        if prompt_scope not in PROMPT_SCOPES:
            raise RetrievalConfigError(f'unknown prompt scope {prompt_scope!r}; valid scopes: '
                                       f'{", ".join(PROMPT_SCOPES)}')
        if capavg_scope not in CAPAVG_SCOPES:
            raise RetrievalConfigError(f'unknown cap_avg scope {capavg_scope!r}; valid scopes: '
                                       f'{", ".join(CAPAVG_SCOPES)}')
        if bucket is not None and bucket.p is not None and prompt_scope == 'batch':
            raise RetrievalConfigError('a fixed prompt value p cannot be combined with the batch prompt scope.')
        if batch_size is not None and (isinstance(batch_size, bool) or int(batch_size) != batch_size or
                                       batch_size < 1):
            raise RetrievalConfigError(f'batch_size must be a positive integer, got {batch_size!r}')
        self.measure = measure
        self.sim_cfg = sim_cfg if sim_cfg is not None else SimilarityConfig(mode='mean_pool')
        self.solver = solver if solver is not None else SolverConfig(epsilon=EPSILON_VIDEO)
        self.bucket = bucket if bucket is not None else BucketConfig()
        self.ks = ks
        self.prompt_scope = prompt_scope
        self.capavg_scope = capavg_scope
        self.dtw_normalize = bool(dtw_normalize)
        self.threads = threads
        self.record_runtime = bool(record_runtime)
        self.batch_size = int(batch_size) if batch_size is not None else None
        self.clip_retrieval = bool(clip_retrieval)

    def __repr__(self):
        return f'RetrievalConfig(measure={self.measure!r}, ks={self.ks})'


class RecallReport:
    """
    Recall of one measure. ``clip_report`` holds the caption to clip recall of the same dataset, if computed.
    """

    def __init__(self, measure: str, per_k: Dict[int, float], ranks: Sequence[int], runtime_s: Optional[float] = None,
                 query_ids: Optional[Sequence[str]] = None, score: Optional[str] = None,
                 clip_report: Optional['RecallReport'] = None):
        self.measure = measure
        self.per_k = dict(per_k)
        self.ranks = [int(rank) for rank in ranks]
        self.runtime_s = runtime_s
        self.query_ids = list(query_ids) if query_ids is not None else None
        self.score = score
        self.clip_report = clip_report

    def __repr__(self):
        return f'RecallReport(measure={self.measure!r}, per_k={self.per_k})'

    @property
    def mean_rank(self) -> float:
        return float(np.mean(self.ranks))

    def to_dict(self) -> dict:
        return {'measure': self.measure, 'recall': {str(k): v for k, v in self.per_k.items()}, 'ranks': self.ranks,
                'runtime_s': self.runtime_s, 'query_ids': self.query_ids, 'score': self.score,
                'caption_to_clip': self.clip_report.to_dict() if self.clip_report is not None else None}

    def to_json(self) -> str:
        return to_json(self.to_dict())

    def write(self, path: PathLike) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_json())


def _pair_matrices(dataset: Dataset, cfg: RetrievalConfig) -> List[List[np.ndarray]]:
    videos = list(dataset.videos)
    size = len(videos)
    flat = parallel_map(lambda vp: clip_caption_matrix(videos[vp[0]], videos[vp[1]], cfg.sim_cfg).values,
                        [(v, q) for q in range(size) for v in range(size)], cfg.threads)
    # matrices[q][v]: clips of video v against the captions of query paragraph q
    return [flat[q * size:(q + 1) * size] for q in range(size)]


def _query_scores(matrices: List[np.ndarray], cfg: RetrievalConfig, p: Optional[float]) -> np.ndarray:
    if cfg.measure == 'capavg':
        return cap_avg_scores(matrices, cfg.capavg_scope)
    if cfg.measure == 'ot_norton':
        bucket = BucketConfig(p=p, marginal_scheme=cfg.bucket.marginal_scheme)
        return np.array([norton_distance(S, bucket, cfg.solver)[1] for S in matrices])
    scores = []
    for S in matrices:
        if cfg.measure == 'dtw':
            distance, _ = dtw(cost_from_similarity(S), cfg.dtw_normalize)
        else:
            distance, _ = otam(cost_from_similarity(S.T), cfg.dtw_normalize)
        scores.append(-distance)
    return np.array(scores)


def _prompt_values(diagonals: List[np.ndarray], cfg: RetrievalConfig) -> List[Optional[float]]:
    size = len(diagonals)
    if cfg.measure != 'ot_norton':
        return [None] * size
    if cfg.bucket.p is not None:
        return [cfg.bucket.p] * size
    width = size if cfg.prompt_scope == 'dataset' or cfg.batch_size is None else cfg.batch_size
    values = []
    for start in range(0, size, width):
        members = range(start, min(size, start + width))
        p = estimate_prompt_value(np.concatenate([diagonals[index] for index in members]), cfg.bucket.quantile)
        logger.info(f'{cfg.prompt_scope} prompt value p={p:.6g} for videos {start}..{members[-1]} at quantile '
                    f'{cfg.bucket.quantile}')
        values.extend([p] * len(members))
    return values


def prompt_values(dataset: Dataset, cfg: RetrievalConfig) -> List[Optional[float]]:
    """
    :return: for every query paragraph the prompt value shared by all its candidates, ``None`` unless the measure
             is ``ot_norton``
    """
    diagonals = parallel_map(lambda video: video.diagonal(cfg.sim_cfg), list(dataset.videos), cfg.threads)
    return _prompt_values(diagonals, cfg)


def score_videos(dataset: Dataset, cfg: RetrievalConfig) -> np.ndarray:
    """
    :return: N x N matrix; entry (q, v) scores video v for query paragraph q (larger is better)
    """
    if len(dataset) < 1:
        raise RetrievalConfigError('cannot score an empty dataset.')
    matrices = _pair_matrices(dataset, cfg)
    values = _prompt_values([np.diag(matrices[index][index]) for index in range(len(dataset))], cfg)
    rows = parallel_map(lambda query: _query_scores(matrices[query], cfg, values[query]), range(len(dataset)),
                        cfg.threads)
    return np.vstack(rows)


def _rank(scores: np.ndarray, true_index: int) -> int:
    true_score = scores[true_index]
    return 1 + int(np.sum(scores > true_score)) + int(np.sum(scores[:true_index] == true_score))


def rank_videos(dataset: Dataset, cfg: RetrievalConfig) -> List[int]:
    """
    :return: for every paragraph the 1-based rank of its own video among all videos of ``dataset``
    """
    if len(dataset) < 2:
        raise RetrievalConfigError(f'retrieval needs at least two videos, dataset has {len(dataset)}')
    scores = score_videos(dataset, cfg)
    return [_rank(scores[query], query) for query in range(len(dataset))]


def recall_at_k(ranks: Sequence[int], ks: Sequence[int] = RECALL_KS, measure: str = '') -> RecallReport:
    """
    >>> recall_at_k([1, 3, 12], [1, 5, 10]).per_k
    {1: 0.3333333333333333, 5: 0.6666666666666666, 10: 0.6666666666666666}
    """
    ranks = list(ranks)
    if not ranks:
        raise RecallInputError('recall needs at least one rank.')
    if any(int(rank) != rank or rank < 1 for rank in ranks):
        raise RecallInputError(f'ranks must be positive integers, got {ranks}')
    per_k = {int(k): sum(1 for rank in ranks if rank <= k) / len(ranks) for k in ks}
    return RecallReport(measure, per_k, ranks)


def rank_clips(dataset: Dataset) -> List[int]:
    """
    :return: for every caption of ``dataset`` (videos in order, clips in order) the 1-based rank of its own clip
             among all clips, by the dot product of mean pooled tokens
    """
    clips = [clip.clip_tokens for video in dataset for clip in video.clips]
    if len(clips) < 2:
        raise RetrievalConfigError(f'clip retrieval needs at least two clips, dataset has {len(clips)}')
    captions = [clip.caption_tokens for video in dataset for clip in video.clips]
    S = clip_caption_matrix(clips, captions, SimilarityConfig(mode='mean_pool')).values
    return [_rank(S[:, caption], caption) for caption in range(S.shape[1])]


def evaluate_clip_retrieval(dataset: Dataset, ks: Sequence[int] = RECALL_KS) -> RecallReport:
    report = recall_at_k(rank_clips(dataset), ks, 'caption_to_clip')
    report.query_ids = [f'{video.id}#{index}' for video in dataset for index in range(len(video))]
    report.score = 'dot product of mean pooled clip and caption tokens'
    logger.info(f'caption to clip retrieval over {len(report.ranks)} clips: '
                f'{", ".join(f"R@{k}={v:.3f}" for k, v in report.per_k.items())}')
    return report


def evaluate_retrieval(dataset: Dataset, cfg: RetrievalConfig) -> RecallReport:
    start = time.perf_counter()
    ranks = rank_videos(dataset, cfg)
    report = recall_at_k(ranks, cfg.ks, cfg.measure)
    report.query_ids = dataset.ids
    report.score = SCORE_DESCRIPTIONS[cfg.measure]
    if cfg.clip_retrieval:
        report.clip_report = evaluate_clip_retrieval(dataset, cfg.ks)
    if cfg.record_runtime:
        report.runtime_s = time.perf_counter() - start
    logger.info(f'{cfg.measure} retrieval over {len(dataset)} videos: '
                f'{", ".join(f"R@{k}={v:.3f}" for k, v in report.per_k.items())}')
    return report


def _frames(seconds: float, fps: float) -> int:
    return max(1, math.floor(Fraction(str(seconds)) * Fraction(str(fps))))


def sliding_window_similarity(frame_tokens: TokenMatrix, sentence_vec, window_s: float = WINDOW_S,
                              step_s: float = STEP_S, fps: float = FPS) -> np.ndarray:
    """
    Scores windows of ``window_s`` seconds every ``step_s`` seconds by the dot product of the mean window frame and
    ``sentence_vec``; a last window ends at the last frame. Every frame gets the mean score of the windows covering
    it. A video shorter than one window is a single window.

    :return: one similarity per frame
    """
    if not (step_s >= 1 and window_s >= step_s):
        raise ConfigError(f'sliding windows need window_s >= step_s >= 1, got window_s={window_s}, step_s={step_s}')
    if not fps > 0:
        raise ConfigError(f'fps must be positive, got {fps}')
    frames = frame_tokens.as_float64()
    sentence_vec = np.asarray(sentence_vec, dtype=np.float64).ravel()
    if sentence_vec.size != frames.shape[1]:
        raise DimensionMismatchError(f'dimension mismatch between frames ({frames.shape[1]}) and sentence '
                                     f'({sentence_vec.size})')
    count = frames.shape[0]
    window = _frames(window_s, fps)
    step = _frames(step_s, fps)
    if count <= window:
        starts = [0]
        window = count
    else:
        starts = list(range(0, count - window + 1, step))
        if starts[-1] + window < count:
            starts.append(count - window)
    totals = np.zeros(count)
    covered = np.zeros(count)
    for start in starts:
        score = float(frames[start:start + window].mean(axis=0) @ sentence_vec)
        totals[start:start + window] += score
        covered[start:start + window] += 1
    return totals / covered


class GroundTruthSegments:
    """
    Annotated (start_s, end_s) span of every sentence. Sentences annotated with ``None`` are not alignable.
    """

    def __init__(self, spans: Sequence[Optional[Tuple[float, float]]]):
        spans = list(spans)
        for index, span in enumerate(spans):
            if span is not None and not span[0] < span[1]:
                raise GroundTruthError(f'sentence {index}: segment must satisfy start_s < end_s, got {span}')
        self._spans = [None if span is None else (float(span[0]), float(span[1])) for span in spans]

    def __repr__(self):
        return f'GroundTruthSegments(sentences={len(self)}, alignable={sum(self.alignable)})'

    def __len__(self):
        return len(self._spans)

    @property
    def spans(self) -> List[Optional[Tuple[float, float]]]:
        return self._spans

    @property
    def alignable(self) -> List[bool]:
        return [span is not None for span in self._spans]


def alignment_recall(sentence_frame_sims: Sequence, gt: GroundTruthSegments, fps: float = FPS) -> float:
    """
    Fraction of alignable sentences whose most similar frame (earliest on ties) lies inside the annotated segment.

    >>> alignment_recall([[0.1, 0.9, 0.2], [0.8, 0.1, 0.1]], GroundTruthSegments([(1, 2), (1, 2)]))
    0.5
    """
    if len(sentence_frame_sims) < len(gt):
        raise GroundTruthError(f'similarities cover {len(sentence_frame_sims)} sentences, ground truth has {len(gt)}')
    hits, alignable = 0, 0
    for sims, span in zip(sentence_frame_sims, gt.spans):
        if span is None:
            continue
        alignable += 1
        time_s = int(np.argmax(np.asarray(sims, dtype=np.float64))) / fps
        if span[0] <= time_s <= span[1]:
            hits += 1
    if alignable == 0:
        raise GroundTruthError('no alignable sentences.')
    return hits / alignable
