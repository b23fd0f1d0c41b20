"""
Contrastive losses over similarity logits with analytic gradients with respect to the similarity entries.

* :obj:`video_paragraph_loss`: symmetric cross-entropy over the transport similarities ``<Q_ij, S_ij> / tau`` of an
  N x N grid of (video i, paragraph j) pairs. Plans are constants.
* :obj:`clip_caption_loss`: symmetric soft target cross-entropy over ``S_hat / tau``.
* :obj:`faulty_negative_targets`: soft targets blending the identity with a transport realignment of the batch.
"""
import logging
import math
import warnings
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from temporalot.bucket import BucketConfig, norton_distance, estimate_prompt_value
from temporalot.config import TAU, BETA, LAMBDA, EPSILON_CLIP, EPSILON_VIDEO, SINKHORN_ITERS, FD_STEP
from temporalot.core import Dataset, as_matrix
from temporalot.exceptions import ConfigError, LossInputError, ShapeMismatchError, NonFiniteValueError
from temporalot.oracle import finite_difference_gradient
from temporalot.similarity import SimilarityConfig, clip_caption_matrix, pooled_matrix
from temporalot.sinkhorn import SolverConfig, sinkhorn_plan, uniform_marginals, ot_similarity
from temporalot.util import parallel_map

__all__ = ['LossConfig', 'TargetMatrix', 'LossReport', 'BatchLosses', 'video_paragraph_loss',
           'faulty_negative_targets', 'clip_caption_loss', 'combined_loss', 'mine_hard_negatives',
           'batch_losses', 'relative_gradient_error', 'gradient_check']

logger = logging.getLogger(__name__)


def _positive(name, val):
    val = float(val)
    if not math.isfinite(val) or val <= 0:
        raise ConfigError(f'{name} must be positive, got {val}')
    return val


class LossConfig:
    """
    :param tau: temperature, positive
    :param beta: weight of the realigned targets in [0, 1]
    :param lambda_: weight of the video-paragraph loss, nonnegative
    :param epsilon_clip: regularization of the batch realignment
    :param epsilon_video: regularization of the sequence transport
    :param max_iters: Sinkhorn iterations of both solves
    :param literal_targets: blend the identity with the raw plan (rows then sum to ``1 - beta + beta / B``) instead of
                            the plan rescaled by the batch size
    """

    def __init__(self, tau: float = TAU, beta: float = BETA, lambda_: float = LAMBDA,
                 epsilon_clip: float = EPSILON_CLIP, epsilon_video: float = EPSILON_VIDEO,
                 max_iters: int = SINKHORN_ITERS, literal_targets: bool = False):
        self._tau = None
        self._beta = None
        self._lambda_ = None
        self._epsilon_clip = None
        self._epsilon_video = None
        self.tau = tau
        self.beta = beta
        self.lambda_ = lambda_
        self.epsilon_clip = epsilon_clip
        self.epsilon_video = epsilon_video
        self.max_iters = SolverConfig(max_iters=max_iters).max_iters
        self.literal_targets = bool(literal_targets)

    def __repr__(self):
        return f'LossConfig(tau={self.tau}, beta={self.beta}, lambda_={self.lambda_}, ' \
               f'epsilon_clip={self.epsilon_clip}, epsilon_video={self.epsilon_video})'

    @property
    def tau(self) -> float:
        return self._tau

    @tau.setter
    def tau(self, val):
        self._tau = _positive('tau', val)

    @property
    def beta(self) -> float:
        return self._beta

    @beta.setter
    def beta(self, val):
        val = float(val)
        if not 0 <= val <= 1:
            raise ConfigError(f'beta must lie in [0, 1], got {val}')
        self._beta = val

    @property
    def lambda_(self) -> float:
        return self._lambda_

    @lambda_.setter
    def lambda_(self, val):
        val = float(val)
        if not math.isfinite(val) or val < 0:
            raise ConfigError(f'lambda must be nonnegative, got {val}')
        self._lambda_ = val

    @property
    def epsilon_clip(self) -> float:
        return self._epsilon_clip

    @epsilon_clip.setter
    def epsilon_clip(self, val):
        self._epsilon_clip = _positive('epsilon_clip', val)

    @property
    def epsilon_video(self) -> float:
        return self._epsilon_video

    @epsilon_video.setter
    def epsilon_video(self, val):
        self._epsilon_video = _positive('epsilon_video', val)


class TargetMatrix:
    """
    B x B nonnegative soft contrastive targets.
    """

    def __init__(self, values):
        array = np.array(values, dtype=np.float64, ndmin=2)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ShapeMismatchError(f'targets must be a square matrix, got shape {array.shape}')
        if not np.all(np.isfinite(array)) or np.any(array < 0):
            raise LossInputError('targets must be finite and nonnegative.')
        array.flags.writeable = False
        self._values = array

    def __repr__(self):
        return f'TargetMatrix({self.size}x{self.size})'

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def size(self) -> int:
        return self._values.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self._values.sum(axis=1)


class LossReport:
    """
    Loss value and its gradient with respect to the similarity entries. For :obj:`video_paragraph_loss` the gradient
    is an N x N nested list with one matrix per (video, paragraph) pair.
    """

    def __init__(self, value: float, grad, logits: np.ndarray = None):
        self.value = float(value)
        self.grad = grad
        self.logits = logits

    def __repr__(self):
        return f'LossReport(value={self.value!r})'

    def to_dict(self, grad_path: str = None) -> dict:
        return {'value': self.value, 'grad_path': grad_path}


def _soft_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    log_rows = log_softmax(logits, axis=1)
    log_cols = log_softmax(logits, axis=0)
    value = 0.0 - (np.sum(targets * log_rows) + np.sum(targets * log_cols))
    grad = np.exp(log_rows) * targets.sum(axis=1)[:, None] - targets + \
        np.exp(log_cols) * targets.sum(axis=0)[None, :] - targets
    return float(value), grad


def _check_tau(tau):
    if not tau > 0:
        raise LossInputError(f'tau must be positive, got {tau}')


def video_paragraph_loss(pairwise: Sequence[Sequence[Tuple[object, object]]], tau: float = TAU) -> LossReport:
    """
    :param pairwise: N x N grid; cell (i, j) holds (S_ij, Q_ij), the similarity matrix of video i against paragraph
                     j and its transport plan
    :param tau: temperature
    :return: :obj:`LossReport` whose ``grad[i][j]`` is the gradient with respect to ``S_ij``

    >>> video_paragraph_loss([[([[0.5]], [[1.0]])]]).value
    0.0
    """
    _check_tau(tau)
    size = len(pairwise)
    if size < 1:
        raise LossInputError('video_paragraph_loss needs at least one video.')
    similarities, plans = [], []
    for i, row in enumerate(pairwise):
        if len(row) != size:
            raise ShapeMismatchError(f'pairwise grid must be {size}x{size}, row {i} has {len(row)} cells')
        similarities.append([as_matrix(S, 'S') for S, _ in row])
        plans.append([as_matrix(Q, 'Q') for _, Q in row])
    logits = np.array([[ot_similarity(plans[i][j], similarities[i][j]) for j in range(size)]
                       for i in range(size)]) / tau
    value, grad_logits = _soft_cross_entropy(logits, np.eye(size))
    grad = [[plans[i][j] * (grad_logits[i, j] / tau) for j in range(size)] for i in range(size)]
    return LossReport(value, grad, logits)


def faulty_negative_targets(S_hat, cfg: LossConfig = None) -> TargetMatrix:
    """
    ``(1 - beta) I + beta B Q`` where ``Q`` is the uniform marginal transport plan of ``S_hat`` at ``epsilon_clip``.
    Rows sum to one.

    >>> faulty_negative_targets([[0.0, 0.0], [0.0, 0.0]], LossConfig(beta=0.5)).values.round(12).tolist()
    [[0.75, 0.25], [0.25, 0.75]]
    """
    if cfg is None:
        cfg = LossConfig()
    S_hat = as_matrix(S_hat, 'S_hat')
    if S_hat.shape[0] != S_hat.shape[1] or S_hat.shape[0] < 1:
        raise ShapeMismatchError(f'S_hat must be a nonempty square matrix, got shape {S_hat.shape}')
    if not np.all(np.isfinite(S_hat)):
        raise NonFiniteValueError('S_hat must be finite.')
    size = S_hat.shape[0]
    identity = np.eye(size)
    if cfg.beta == 0:
        return TargetMatrix(identity)
    plan, _ = sinkhorn_plan(S_hat, uniform_marginals(size, size),
                            SolverConfig(epsilon=cfg.epsilon_clip, max_iters=cfg.max_iters))
    if cfg.literal_targets:
        warnings.warn('literal faulty negative targets are not row-stochastic.')
        return TargetMatrix((1 - cfg.beta) * identity + cfg.beta * plan.values)
    return TargetMatrix((1 - cfg.beta) * identity + cfg.beta * (size * plan.values))


def clip_caption_loss(S_hat, T: TargetMatrix, tau: float = TAU) -> LossReport:
    """
    Soft target symmetric cross-entropy over rows and columns of ``S_hat / tau``.

    >>> round(clip_caption_loss([[1.0, 0.0], [0.0, 1.0]], TargetMatrix([[1, 0], [0, 1]]), 1.0).value, 6)
    1.253047
    """
    _check_tau(tau)
    S_hat = as_matrix(S_hat, 'S_hat')
    targets = T.values if isinstance(T, TargetMatrix) else TargetMatrix(T).values
    if S_hat.shape != targets.shape:
        raise ShapeMismatchError(f'S_hat shape {S_hat.shape} does not match targets {targets.shape}')
    logits = S_hat / tau
    value, grad_logits = _soft_cross_entropy(logits, targets)
    return LossReport(value, grad_logits / tau, logits)


def combined_loss(clip_loss: float, video_loss: float, lambda_: float = LAMBDA) -> float:
    """
    >>> combined_loss(1.0, 2.0, 0.1)
    1.2
    """
    for name, val in (('clip_loss', clip_loss), ('video_loss', video_loss), ('lambda', lambda_)):
        if not math.isfinite(val):
            raise LossInputError(f'{name} must be finite, got {val}')
    return clip_loss + lambda_ * video_loss


def mine_hard_negatives(video_reps, k: int) -> List[List[int]]:
    """
    :param video_reps: N pooled video vectors
    :param k: neighbours per video, less than N
    :return: for every video the indices of its ``k`` most cosine similar other videos (lower index on ties)

    >>> mine_hard_negatives([[1, 0], [1, 0], [0, 1]], 1)
    [[1], [0], [0]]
    """
    reps = np.asarray(video_reps, dtype=np.float64)
    if reps.ndim != 2:
        raise ShapeMismatchError(f'video representations must form a N x d matrix, got shape {reps.shape}')
    size = reps.shape[0]
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 0 or k >= size:
        raise LossInputError(f'k must be an integer in [0, {size}), got {k!r}')
    norms = np.linalg.norm(reps, axis=1)
    if np.any(norms == 0):
        raise LossInputError('video representations must be nonzero.')
    unit = reps / norms[:, None]
    cosine = unit @ unit.T
    np.fill_diagonal(cosine, -np.inf)
    return [np.argsort(-cosine[i], kind='stable')[:k].tolist() for i in range(size)]


def relative_gradient_error(analytic, numeric) -> float:
    """
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12)``
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradient_check(loss: Callable[[np.ndarray], float], analytic, at, h: float = FD_STEP,
                   entries: Optional[Sequence[Tuple[int, ...]]] = None) -> float:
    """
    Compares ``analytic`` with central differences of ``loss`` around ``at``.

    :param entries: entries to compare; all entries if ``None``
    :return: :obj:`relative_gradient_error` over the compared entries
    """
    if entries is not None:
        entries = [tuple(int(k) for k in index) for index in entries]
    numeric = finite_difference_gradient(loss, at, h, entries)
    analytic = np.asarray(analytic, dtype=np.float64)
    if entries is None:
        return relative_gradient_error(analytic, numeric)
    indices = tuple(np.array(entries).T)
    return relative_gradient_error(analytic[indices], numeric[indices])


class BatchLosses:
    """
    Both losses of a dataset treated as a single batch.

    ``clip_similarities`` is the B x B matrix of pooled clip and caption vectors of all B clips; ``targets`` its soft
    targets. ``grid`` holds for every (video i, paragraph j) the similarity matrix and the filtered plan.
    """

    def __init__(self, clip: LossReport, video: LossReport, total: float, clip_similarities: np.ndarray,
                 targets: TargetMatrix, grid: List[List[Tuple[np.ndarray, np.ndarray]]], cfg: LossConfig):
        self.clip = clip
        self.video = video
        self.total = total
        self.clip_similarities = clip_similarities
        self.targets = targets
        self.grid = grid
        self.cfg = cfg

    def __repr__(self):
        return f'BatchLosses(clip={self.clip.value!r}, video={self.video.value!r}, total={self.total!r})'

    def clip_loss_function(self) -> Callable[[np.ndarray], float]:
        """
        :return: the clip loss as a function of the B x B similarities (targets held constant)
        """
        return lambda S_hat: clip_caption_loss(S_hat, self.targets, self.cfg.tau).value

    def video_loss_function(self) -> Callable[[np.ndarray], float]:
        """
        :return: the video loss as a function of the flattened grid similarities (plans held constant)
        """
        shapes = [[S.shape for S, _ in row] for row in self.grid]
        plans = [[Q for _, Q in row] for row in self.grid]

        def _loss(flat):
            similarities = _unflatten(flat, shapes)
            pairwise = [[(similarities[i][j], plans[i][j]) for j in range(len(plans))] for i in range(len(plans))]
            return video_paragraph_loss(pairwise, self.cfg.tau).value

        return _loss

    def flat_video_similarities(self) -> np.ndarray:
        return np.concatenate([S.ravel() for row in self.grid for S, _ in row])

    def flat_video_grad(self) -> np.ndarray:
        return np.concatenate([grad.ravel() for row in self.video.grad for grad in row])

    def to_dict(self) -> dict:
        return {'clip_loss': self.clip.value, 'video_loss': self.video.value, 'total': self.total}


def _unflatten(flat: np.ndarray, shapes) -> List[List[np.ndarray]]:
    out, offset = [], 0
    for row in shapes:
        out_row = []
        for shape in row:
            size = shape[0] * shape[1]
            out_row.append(flat[offset:offset + size].reshape(shape))
            offset += size
        out.append(out_row)
    return out


def batch_losses(dataset: Dataset, cfg: LossConfig = None, bucket: BucketConfig = None,
                 sim_cfg: SimilarityConfig = None, threads: int = None) -> BatchLosses:
    """
    Clip loss over all clips of ``dataset`` (pooled vectors, faulty negative targets) and video loss over all its
    (video, paragraph) pairs (``sim_cfg`` similarities, bucketed plans at ``epsilon_video``, prompt value estimated
    from the originally aligned pairs of the whole dataset).
    """
    if cfg is None:
        cfg = LossConfig()
    if bucket is None:
        bucket = BucketConfig()
    if sim_cfg is None:
        sim_cfg = SimilarityConfig()
    clips = [clip.clip_tokens for video in dataset for clip in video.clips]
    captions = [clip.caption_tokens for video in dataset for clip in video.clips]
    clip_similarities = pooled_matrix(clips) @ pooled_matrix(captions).T
    targets = faulty_negative_targets(clip_similarities, cfg)
    clip_report = clip_caption_loss(clip_similarities, targets, cfg.tau)

    videos = list(dataset.videos)
    size = len(videos)
    matrices = parallel_map(lambda ij: clip_caption_matrix(videos[ij[0]], videos[ij[1]], sim_cfg).values,
                            [(i, j) for i in range(size) for j in range(size)], threads)
    diagonal = np.concatenate([np.diag(matrices[i * size + i]) for i in range(size)])
    p = bucket.p if bucket.p is not None else estimate_prompt_value(diagonal, bucket.quantile)
    fixed = BucketConfig(p=p, marginal_scheme=bucket.marginal_scheme)
    solver = SolverConfig(epsilon=cfg.epsilon_video, max_iters=cfg.max_iters)
    plans = parallel_map(lambda S: norton_distance(S, fixed, solver)[0].values, matrices, threads)
    grid = [[(matrices[i * size + j], plans[i * size + j]) for j in range(size)] for i in range(size)]
    video_report = video_paragraph_loss(grid, cfg.tau)
    total = combined_loss(clip_report.value, video_report.value, cfg.lambda_)
    logger.info(f'batch losses over {size} videos / {len(clips)} clips: clip {clip_report.value:.6g}, '
                f'video {video_report.value:.6g}, total {total:.6g}')
    return BatchLosses(clip_report, video_report, total, clip_similarities, targets, grid, cfg)
