"""
Clip-caption similarities.

Three modes are available:

* ``fine_grained``: the frame-word log-sum-exp soft maximum, averaged over frames and over words.
* ``mean_pool``: dot product of the token-averaged clip and caption vectors.
* ``max_pool``: the hard maximum limit of ``fine_grained``, where every frame (word) is scored by its most similar word
  (frame).
"""
import logging
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp

from temporalot.config import ALPHA, SIMILARITY_MODES
from temporalot.core import TokenMatrix, VideoDocument, SimilarityMatrix, token_list
from temporalot.exceptions import ConfigError, DimensionMismatchError, NonFiniteValueError, TemporalOTValueError

__all__ = ['SimilarityConfig', 'frame_word_matrix', 'log_sum_exp', 'fine_grained_similarity', 'pooled_vectors',
           'pooled_matrix', 'clip_caption_matrix']

logger = logging.getLogger(__name__)

TokensOrVideo = Union[VideoDocument, Sequence[TokenMatrix]]


class SimilarityConfig:
    """
    :param alpha: smoothness of the log-sum-exp soft maximum. Must be positive.
    :param mode: one of ``fine_grained``, ``mean_pool`` or ``max_pool``
    """

    def __init__(self, alpha: float = ALPHA, mode: str = 'fine_grained'):
        self._alpha = None
        self._mode = None
        self.alpha = alpha
        self.mode = mode

    def __repr__(self):
        return f'SimilarityConfig(alpha={self.alpha}, mode={self.mode!r})'

    @property
    def alpha(self) -> float:
        return self._alpha

    @alpha.setter
    def alpha(self, val):
        val = float(val)
        if not np.isfinite(val) or val <= 0:
            raise ConfigError(f'alpha must be positive, got {val}')
        self._alpha = val

    @property
    def mode(self) -> str:
        return self._mode

    @mode.setter
    def mode(self, val):
        if val not in SIMILARITY_MODES:
            raise ConfigError(f'unknown similarity mode {val!r}; valid modes: {", ".join(SIMILARITY_MODES)}')
        self._mode = val


def _check_dims(clip: TokenMatrix, caption: TokenMatrix) -> None:
    if clip.dim != caption.dim:
        raise DimensionMismatchError(f'dimension mismatch between clip ({clip.dim}) and caption ({caption.dim})')


def frame_word_matrix(clip: TokenMatrix, caption: TokenMatrix) -> np.ndarray:
    """
    :return: f x w matrix of dot products between the frames of ``clip`` and the words of ``caption``

    >>> frame_word_matrix(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0], [0, 1]])).tolist()
    [[1.0, 0.0]]
    """
    _check_dims(clip, caption)
    return clip.as_float64() @ caption.as_float64().T


def _row_log_sum_exp(matrix: np.ndarray, alpha: float) -> np.ndarray:
    shift = matrix.max(axis=1)
    return shift + alpha * logsumexp((matrix - shift[:, None]) / alpha, axis=1)


def log_sum_exp(x, alpha: float = ALPHA) -> float:
    """
    Smooth maximum ``alpha * log(sum(exp(x / alpha)))``, shifted by ``max(x)`` before exponentiating.

    >>> log_sum_exp([2.0])
    2.0
    >>> round(log_sum_exp([0.0, 0.0]), 6)
    0.693147
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise TemporalOTValueError('log_sum_exp needs a nonempty vector.')
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError('log_sum_exp input must be finite.')
    if not alpha > 0:
        raise ConfigError(f'alpha must be positive, got {alpha}')
    return float(_row_log_sum_exp(x[None, :], float(alpha))[0])


def _fine_grained_from_matrix(frame_word: np.ndarray, alpha: float) -> float:
    frames_to_words = np.mean(_row_log_sum_exp(frame_word, alpha))
    words_to_frames = np.mean(_row_log_sum_exp(np.ascontiguousarray(frame_word.T), alpha))
    return float(0.5 * (frames_to_words + words_to_frames))


def _max_pool_from_matrix(frame_word: np.ndarray) -> float:
    return float(0.5 * (np.mean(frame_word.max(axis=1)) + np.mean(frame_word.max(axis=0))))


def fine_grained_similarity(clip: TokenMatrix, caption: TokenMatrix, cfg: SimilarityConfig = None) -> float:
    """
    Half the sum of the mean soft maximum of every frame over the words and the mean soft maximum of every word over
    the frames. In ``max_pool`` mode the soft maximum is replaced by the hard one.

    >>> round(fine_grained_similarity(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0], [0, 1]])), 6)
    0.906631
    """
    if cfg is None:
        cfg = SimilarityConfig()
    frame_word = frame_word_matrix(clip, caption)
    if cfg.mode == 'max_pool':
        return _max_pool_from_matrix(frame_word)
    if cfg.mode != 'fine_grained':
        raise ConfigError(f'fine_grained_similarity cannot be computed in mode {cfg.mode!r}')
    return _fine_grained_from_matrix(frame_word, cfg.alpha)


def pooled_vectors(tokens: TokenMatrix) -> np.ndarray:
    """
    :return: the token average of ``tokens`` (not renormalized)
    """
    return tokens.as_float64().mean(axis=0)


def pooled_matrix(tokens: Sequence[TokenMatrix]) -> np.ndarray:
    """
    :return: k x d matrix with the pooled vector of every token matrix as a row
    """
    return np.stack([pooled_vectors(token_matrix) for token_matrix in tokens])


def clip_caption_matrix(video: TokensOrVideo, paragraph: TokensOrVideo, cfg: SimilarityConfig = None) -> \
        SimilarityMatrix:
    """
    :param video: a :obj:`~temporalot.core.VideoDocument` (its clips are used) or a list of clip token matrices
    :param paragraph: a :obj:`~temporalot.core.VideoDocument` (its captions are used) or a list of caption token
                      matrices
    :return: n x m :obj:`~temporalot.core.SimilarityMatrix`
    """
    if cfg is None:
        cfg = SimilarityConfig()
    clips = token_list(video, captions=False)
    captions = token_list(paragraph, captions=True)
    if not clips or not captions:
        raise TemporalOTValueError('clip_caption_matrix needs a nonempty video and a nonempty paragraph.')
    dims = {token_matrix.dim for token_matrix in clips + captions}
    if len(dims) > 1:
        raise DimensionMismatchError(f'dimension mismatch between clips and captions: {sorted(dims)}')
    if cfg.mode == 'mean_pool':
        return SimilarityMatrix(pooled_matrix(clips) @ pooled_matrix(captions).T)
    values = np.empty((len(clips), len(captions)), dtype=np.float64)
    for a, clip in enumerate(clips):
        for b, caption in enumerate(captions):
            values[a, b] = fine_grained_similarity(clip, caption, cfg)
    return SimilarityMatrix(values)
