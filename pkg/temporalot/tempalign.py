"""
Order preserving sequence measures: dynamic time warping, its boundary relaxed variant OTAM and the caption average
(Cap. Avg.) retrieval count.

Paths are lists of 0-based (row, column) cells. Ties in the backtracking prefer the diagonal move, then the vertical
move, then the horizontal one.
"""
import logging
from typing import List, Sequence, Tuple, Union

import numpy as np

from temporalot.config import CAPAVG_SCOPES
from temporalot.core import TokenMatrix, VideoDocument, Dataset, as_matrix
from temporalot.exceptions import CostMatrixError, ConfigError, TemporalAlignmentException
from temporalot.similarity import SimilarityConfig, clip_caption_matrix

__all__ = ['CostMatrix', 'AlignPath', 'cost_from_similarity', 'dtw', 'otam', 'cap_avg', 'cap_avg_scores',
           'DTW_MOVES', 'OTAM_MOVES']

logger = logging.getLogger(__name__)

DIAGONAL, VERTICAL, HORIZONTAL = (1, 1), (1, 0), (0, 1)
DTW_MOVES = (DIAGONAL, VERTICAL, HORIZONTAL)
#: Moves between real cells of an OTAM path. Horizontal moves only happen in the padding rows.
OTAM_MOVES = (DIAGONAL, VERTICAL)


class CostMatrix:
    def __init__(self, values):
        array = np.array(values, dtype=np.float64, ndmin=2)
        if array.ndim != 2 or array.size == 0:
            raise CostMatrixError(f'cost matrix must be a nonempty two dimensional matrix, got shape {array.shape}')
        if not np.all(np.isfinite(array)):
            raise CostMatrixError('cost matrix must be finite.')
        if np.any(array < 0):
            raise CostMatrixError('cost matrix must be nonnegative.')
        array.flags.writeable = False
        self._values = array

    def __repr__(self):
        return f'CostMatrix({self.n}x{self.m})'

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def m(self) -> int:
        return self._values.shape[1]


class AlignPath:
    """
    Monotone path of 0-based cells. Consecutive cells must differ by one of ``moves``.
    """

    def __init__(self, steps: Sequence[Tuple[int, int]], moves: Sequence[Tuple[int, int]] = DTW_MOVES):
        steps = [(int(i), int(j)) for i, j in steps]
        if not steps:
            raise TemporalAlignmentException('a path needs at least one step.')
        for (i0, j0), (i1, j1) in zip(steps, steps[1:]):
            if (i1 - i0, j1 - j0) not in moves:
                raise TemporalAlignmentException(f'invalid move from ({i0}, {j0}) to ({i1}, {j1})')
        self._steps = steps
        self._moves = tuple(moves)

    def __repr__(self):
        return f'AlignPath({self._steps})'

    def __len__(self):
        return len(self._steps)

    def __iter__(self):
        return iter(self._steps)

    def __eq__(self, other):
        if isinstance(other, AlignPath):
            return self._steps == other.steps
        return self._steps == [tuple(step) for step in other]

    @property
    def steps(self) -> List[Tuple[int, int]]:
        return self._steps

    @property
    def moves(self) -> tuple:
        return self._moves

    def to_list(self) -> List[List[int]]:
        return [[i, j] for i, j in self._steps]


def _as_cost(cost) -> CostMatrix:
    return cost if isinstance(cost, CostMatrix) else CostMatrix(cost)


def cost_from_similarity(S) -> CostMatrix:
    """
    ``1 - S`` clipped at 0.

    >>> cost_from_similarity([[1.0, 0.25]]).values.tolist()
    [[0.0, 0.75]]
    """
    return CostMatrix(np.clip(1.0 - as_matrix(S, 'S'), 0.0, None))


def _backtrack(table: List[List[float]], end: Tuple[int, int], allowed) -> List[Tuple[int, int]]:
    i, j = end
    steps = [(i, j)]
    while (i, j) != (0, 0):
        best = None
        for di, dj in DTW_MOVES:
            pi, pj = i - di, j - dj
            if pi < 0 or pj < 0 or not allowed(pi, pj, di, dj):
                continue
            if best is None or table[pi][pj] < table[best[0]][best[1]]:
                best = (pi, pj)
        i, j = best
        steps.append(best)
    steps.reverse()
    return steps


def dtw(cost, normalize: bool = False) -> Tuple[float, AlignPath]:
    """
    Dynamic time warping from cell (0, 0) to cell (n - 1, m - 1) with moves (1, 0), (0, 1) and (1, 1).

    :param normalize: divide the accumulated cost by the path length
    :return: (distance, path)

    >>> dtw([[0, 1], [1, 0]])
    (0.0, AlignPath([(0, 0), (1, 1)]))
    """
    c = _as_cost(cost).values.tolist()
    n, m = len(c), len(c[0])
    table = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                table[i][j] = c[0][0]
                continue
            candidates = []
            if i > 0 and j > 0:
                candidates.append(table[i - 1][j - 1])
            if i > 0:
                candidates.append(table[i - 1][j])
            if j > 0:
                candidates.append(table[i][j - 1])
            table[i][j] = min(candidates) + c[i][j]
    path = AlignPath(_backtrack(table, (n - 1, m - 1), lambda *_: True), DTW_MOVES)
    distance = table[n - 1][m - 1]
    if normalize:
        distance /= len(path)
    return distance, path


def otam(cost, normalize: bool = False) -> Tuple[float, AlignPath]:
    """
    Boundary relaxed dynamic time warping. Rows are the query, columns the candidate. The cost matrix is padded with a
    zero cost row above and below; horizontal moves are only allowed inside the padding rows, so the query can enter
    and leave the candidate anywhere. Only real cells are charged and returned in the path.

    :return: (distance, path over the real cells)

    >>> otam([[5, 0, 5]])[0]
    0.0
    """
    real = _as_cost(cost).values.tolist()
    n, m = len(real), len(real[0])
    padded = [[0.0] * m] + real + [[0.0] * m]
    last = n + 1
    table = [[0.0] * m for _ in range(n + 2)]
    for j in range(1, m):
        table[0][j] = table[0][j - 1]
    for i in range(1, n + 2):
        for j in range(m):
            candidates = [table[i - 1][j]]
            if j > 0:
                candidates.append(table[i - 1][j - 1])
                if i == last:
                    candidates.append(table[i][j - 1])
            table[i][j] = min(candidates) + padded[i][j]

    def allowed(pi, pj, di, dj):
        return (di, dj) != HORIZONTAL or pi in (0, last)

    padded_steps = _backtrack(table, (last, m - 1), allowed)
    path = AlignPath([(i - 1, j) for i, j in padded_steps if 0 < i < last], OTAM_MOVES)
    distance = table[last][m - 1]
    if normalize:
        distance /= len(path)
    return distance, path


def cap_avg_scores(matrices: Sequence[np.ndarray], scope: str = 'global') -> np.ndarray:
    """
    :param matrices: for every candidate video the (clips x query captions) similarity matrix
    :param scope: ``global``: every caption votes for its most similar clip across all candidates (lowest (video,
                  clip) index on ties) and a candidate scores its number of votes. ``per_candidate``: a candidate
                  scores the mean over captions of its best clip similarity.
    :return: one score per candidate
    """
    matrices = [as_matrix(matrix, 'similarity') for matrix in matrices]
    if not matrices:
        raise TemporalAlignmentException('cap_avg needs at least one candidate video.')
    if len({matrix.shape[1] for matrix in matrices}) > 1:
        raise TemporalAlignmentException('all candidate matrices must cover the same query captions.')
    if scope == 'global':
        owners = np.concatenate([np.full(matrix.shape[0], index) for index, matrix in enumerate(matrices)])
        winners = owners[np.argmax(np.vstack(matrices), axis=0)]
        return np.bincount(winners, minlength=len(matrices)).astype(np.float64)
    elif scope == 'per_candidate':
        return np.array([matrix.max(axis=0).mean() for matrix in matrices])
    else:
        raise ConfigError(f'unknown cap_avg scope {scope!r}; valid scopes: {", ".join(CAPAVG_SCOPES)}')


def cap_avg(query_captions: Union[VideoDocument, Sequence[TokenMatrix]],
            candidate_videos: Union[Dataset, Sequence[VideoDocument]], sim_cfg: SimilarityConfig = None,
            scope: str = 'global') -> np.ndarray:
    """
    Caption average retrieval scores of ``candidate_videos`` for the paragraph ``query_captions``.
    """
    candidates = list(candidate_videos)
    if not candidates:
        raise TemporalAlignmentException('cap_avg needs at least one candidate video.')
    return cap_avg_scores([clip_caption_matrix(video, query_captions, sim_cfg).values for video in candidates], scope)
