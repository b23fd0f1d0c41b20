"""
Alignable prompt bucket.

The similarity matrix is augmented with one extra row and one extra column of constant similarity ``p``. Transport
mass routed into them marks clips and captions that have no counterpart. Dropping the extra row and column leaves the
filtered plan used as the sequence-level similarity.
"""
import json
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from quicktions import Fraction

from temporalot.config import PROMPT_QUANTILE, MARGINAL_SCHEMES, EPSILON_VIDEO
from temporalot.core import Marginals, SimilarityMatrix, TransportPlan, as_matrix
from temporalot.exceptions import ConfigError, PromptEstimationError, NonFiniteValueError, MarginalsError, \
    ShapeMismatchError, NegativePlanEntryError
from temporalot.sinkhorn import SolverConfig, SolverState, sinkhorn_plan, uniform_marginals
from temporalot.tempalign import cost_from_similarity, dtw, otam
from temporalot.util import PathLike, to_json

__all__ = ['BucketConfig', 'AugmentedSimilarity', 'FilteredPlan', 'AlignmentMap', 'estimate_prompt_value',
           'augment_similarity', 'augmented_marginals', 'norton_distance', 'extract_realignment',
           'vanilla_realignment', 'realign']

logger = logging.getLogger(__name__)

REALIGNMENT_METHODS = ('ot', 'vanilla', 'dtw', 'otam')
REALIGNMENT_STRATEGIES = ('row_argmax', 'threshold')


class BucketConfig:
    """
    :param p: fixed prompt value. Cannot be combined with ``quantile``.
    :param quantile: fraction in (0, 1) of the originally aligned pair similarities from which ``p`` is estimated.
                     Used with its default 0.3 when neither ``p`` nor ``quantile`` is given.
    :param marginal_scheme: ``matched_mass`` (default) weights the bucket row and column with the count of the
                            opposite side, ``uniform`` gives every row and column the same weight.
    """

    def __init__(self, p: Optional[float] = None, quantile: Optional[float] = None,
                 marginal_scheme: str = 'matched_mass'):
        if p is not None and quantile is not None:
            raise ConfigError('BucketConfig takes either p or quantile, not both.')
        self._p = None
        self._quantile = None
        self._marginal_scheme = None
        if p is not None:
            self.p = p
        else:
            self.quantile = PROMPT_QUANTILE if quantile is None else quantile
        self.marginal_scheme = marginal_scheme

    def __repr__(self):
        driver = f'p={self.p}' if self.p is not None else f'quantile={self.quantile}'
        return f'BucketConfig({driver}, marginal_scheme={self.marginal_scheme!r})'

    @property
    def p(self) -> Optional[float]:
        return self._p

    @p.setter
    def p(self, val):
        val = float(val)
        if not math.isfinite(val):
            raise ConfigError(f'prompt value must be finite, got {val}')
        self._p = val
        self._quantile = None

    @property
    def quantile(self) -> Optional[float]:
        return self._quantile

    @quantile.setter
    def quantile(self, val):
        _check_quantile(val)
        self._quantile = float(val)
        self._p = None

    @property
    def marginal_scheme(self) -> str:
        return self._marginal_scheme

    @marginal_scheme.setter
    def marginal_scheme(self, val):
        if val not in MARGINAL_SCHEMES:
            raise ConfigError(f'unknown marginal scheme {val!r}; valid schemes: {", ".join(MARGINAL_SCHEMES)}')
        self._marginal_scheme = val

    def resolve_p(self, diagonal_sims) -> float:
        """
        :return: the fixed prompt value or the one estimated from ``diagonal_sims``
        """
        if self.p is not None:
            return self.p
        return estimate_prompt_value(diagonal_sims, self.quantile)


def _check_quantile(quantile):
    if isinstance(quantile, bool) or not isinstance(quantile, (int, float)) or not 0 < quantile < 1:
        raise PromptEstimationError(f'quantile must lie in (0, 1), got {quantile!r}')


def estimate_prompt_value(diagonal_sims, quantile: float = PROMPT_QUANTILE) -> float:
    """
    Nearest rank lower quantile: the sorted similarities are indexed at ``ceil(quantile * len) - 1``.

    >>> estimate_prompt_value([1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1], 0.3)
    0.3
    >>> estimate_prompt_value([0.7], 0.9)
    0.7
    """
    _check_quantile(quantile)
    values = np.asarray(diagonal_sims, dtype=np.float64).ravel()
    if values.size == 0:
        raise PromptEstimationError('cannot estimate a prompt value from no similarities.')
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError('similarities used for prompt estimation must be finite.')
    rank = math.ceil(Fraction(str(quantile)) * values.size) - 1
    return float(np.sort(values, kind='stable')[rank])


class AugmentedSimilarity:
    """
    (n + 1) x (m + 1) matrix whose last row and last column hold ``p`` and whose interior is the base matrix.
    """

    def __init__(self, base: SimilarityMatrix, p: float):
        if not math.isfinite(p):
            raise NonFiniteValueError(f'prompt value must be finite, got {p}')
        values = np.full((base.n + 1, base.m + 1), float(p))
        values[:base.n, :base.m] = base.values
        values.flags.writeable = False
        self._base = base
        self._p = float(p)
        self._values = values

    def __repr__(self):
        return f'AugmentedSimilarity({self.n}x{self.m}, p={self.p})'

    @property
    def base(self) -> SimilarityMatrix:
        return self._base

    @property
    def p(self) -> float:
        return self._p

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._base.n

    @property
    def m(self) -> int:
        return self._base.m


def augment_similarity(S, p: float) -> AugmentedSimilarity:
    """
    >>> augment_similarity([[1, 2], [3, 4]], 0.5).values.tolist()
    [[1.0, 2.0, 0.5], [3.0, 4.0, 0.5], [0.5, 0.5, 0.5]]
    """
    if not isinstance(S, SimilarityMatrix):
        S = SimilarityMatrix(as_matrix(S, 'S'))
    return AugmentedSimilarity(S, p)


def augmented_marginals(n: int, m: int, scheme: str = 'matched_mass') -> Marginals:
    """
    >>> marginals = augmented_marginals(2, 3)
    >>> marginals.mu.tolist(), marginals.nu.tolist()
    ([0.2, 0.2, 0.6], [0.2, 0.2, 0.2, 0.4])
    """
    if n < 1 or m < 1:
        raise MarginalsError(f'marginals need positive counts, got ({n}, {m})')
    if scheme == 'matched_mass':
        return Marginals(np.append(np.ones(n), m) / (n + m), np.append(np.ones(m), n) / (n + m))
    elif scheme == 'uniform':
        return uniform_marginals(n + 1, m + 1)
    else:
        raise ConfigError(f'unknown marginal scheme {scheme!r}; valid schemes: {", ".join(MARGINAL_SCHEMES)}')


class FilteredPlan:
    """
    Interior n x m block of a plan solved on an :obj:`AugmentedSimilarity`, together with the mass the bucket took
    from every clip (``bucket_col``) and from every caption (``bucket_row``).
    """

    def __init__(self, augmented_plan: TransportPlan, augmented: AugmentedSimilarity, scheme: str,
                 state: Optional[SolverState] = None):
        n, m = augmented.n, augmented.m
        if augmented_plan.shape != (n + 1, m + 1):
            raise ShapeMismatchError(f'augmented plan shape {augmented_plan.shape} does not match ({n + 1}, {m + 1})')
        full = augmented_plan.values
        self._augmented_plan = augmented_plan
        self._augmented = augmented
        self._values = full[:n, :m]
        self._bucket_col = full[:n, m]
        self._bucket_row = full[n, :m]
        self._corner = float(full[n, m])
        self._scheme = scheme
        self._state = state

    def __repr__(self):
        return f'FilteredPlan({self.n}x{self.m}, p={self.p}, interior_mass={self.interior_mass:.6g})'

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def augmented_plan(self) -> TransportPlan:
        return self._augmented_plan

    @property
    def bucket_col(self) -> np.ndarray:
        """
        Mass every clip sends to the bucket column.
        """
        return self._bucket_col

    @property
    def bucket_row(self) -> np.ndarray:
        """
        Mass every caption receives from the bucket row.
        """
        return self._bucket_row

    @property
    def corner(self) -> float:
        return self._corner

    @property
    def p(self) -> float:
        return self._augmented.p

    @property
    def scheme(self) -> str:
        return self._scheme

    @property
    def epsilon(self) -> float:
        return self._augmented_plan.epsilon

    @property
    def state(self) -> Optional[SolverState]:
        return self._state

    @property
    def shape(self) -> tuple:
        return self._values.shape

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def m(self) -> int:
        return self._values.shape[1]

    @property
    def interior_mass(self) -> float:
        return float(self._values.sum())

    @property
    def bucket_mass(self) -> float:
        """
        Total mass in the bucket row and column, corner included.
        """
        return float(self._bucket_col.sum() + self._bucket_row.sum() + self._corner)

    @property
    def distance(self) -> float:
        """
        ``sum(interior * S)``; bucket cells contribute nothing.
        """
        return float(np.sum(self._values * self._augmented.base.values))

    @property
    def normalized_distance(self) -> float:
        """
        :obj:`distance` divided by :obj:`interior_mass`, 0 if the bucket took everything.
        """
        mass = self.interior_mass
        return self.distance / mass if mass > 0 else 0.0


def norton_distance(S, bucket: BucketConfig = None, solver: SolverConfig = None,
                    diagonal_sims=None) -> Tuple[FilteredPlan, float]:
    """
    Solves entropic transport on the bucket augmented matrix and drops the bucket row and column.

    :param S: n x m similarity matrix
    :param bucket: defaults to ``BucketConfig()`` (prompt value at the 0.3 quantile, matched mass marginals)
    :param solver: defaults to ``SolverConfig(epsilon=0.1)``
    :param diagonal_sims: originally aligned pair similarities for prompt estimation. Defaults to the diagonal of
                          ``S``. Ignored if ``bucket.p`` is set.
    :return: (filtered plan, ``sum(interior * S)``)
    """
    if not isinstance(S, SimilarityMatrix):
        S = SimilarityMatrix(as_matrix(S, 'S'))
    if bucket is None:
        bucket = BucketConfig()
    if solver is None:
        solver = SolverConfig(epsilon=EPSILON_VIDEO)
    p = bucket.resolve_p(np.diag(S.values) if diagonal_sims is None else diagonal_sims)
    augmented = augment_similarity(S, p)
    marginals = augmented_marginals(S.n, S.m, bucket.marginal_scheme)
    # a constant added to a whole row or column leaves the plan unchanged
    shift = (float(np.mean(S.values)) - p) / 2
    shifted = augmented.values.copy()
    shifted[S.n, :] += shift
    shifted[:, S.m] += shift
    plan, state = sinkhorn_plan(shifted, marginals, solver)
    state.log_kappa1[S.n] += shift / solver.epsilon
    state.log_kappa2[S.m] += shift / solver.epsilon
    filtered = FilteredPlan(plan, augmented, bucket.marginal_scheme, state)
    logger.debug(f'norton_distance {S.n}x{S.m}: p={p:.6g}, interior mass {filtered.interior_mass:.6g}')
    return filtered, filtered.distance


class AlignmentMap:
    """
    Extracted clip-caption correspondence: ``pairs`` of (clip, caption, mass) in row-major order and the clips and
    captions the bucket dominated.
    """

    def __init__(self, pairs: Sequence[Tuple[int, int, float]], dropped_clips: Sequence[int],
                 dropped_captions: Sequence[int], n: int, m: int):
        pairs = [(int(a), int(b), float(mass)) for a, b, mass in pairs]
        for a, b, mass in pairs:
            if not (0 <= a < n and 0 <= b < m):
                raise ShapeMismatchError(f'pair ({a}, {b}) out of range for a {n}x{m} plan')
            if mass < 0:
                raise NegativePlanEntryError(f'pair ({a}, {b}) has negative mass {mass}')
        self._pairs = pairs
        self._dropped_clips = [int(a) for a in dropped_clips]
        self._dropped_captions = [int(b) for b in dropped_captions]
        self._n = n
        self._m = m

    def __repr__(self):
        return f'AlignmentMap(pairs={len(self.pairs)}, dropped_clips={self.dropped_clips}, ' \
               f'dropped_captions={self.dropped_captions})'

    @property
    def pairs(self) -> List[Tuple[int, int, float]]:
        return self._pairs

    @property
    def dropped_clips(self) -> List[int]:
        return self._dropped_clips

    @property
    def dropped_captions(self) -> List[int]:
        return self._dropped_captions

    @property
    def n(self) -> int:
        return self._n

    @property
    def m(self) -> int:
        return self._m

    def pair_indices(self) -> List[Tuple[int, int]]:
        return [(a, b) for a, b, _ in self._pairs]

    def to_dict(self) -> dict:
        return {'pairs': [[a, b, mass] for a, b, mass in self._pairs], 'dropped_clips': list(self._dropped_clips),
                'dropped_captions': list(self._dropped_captions)}

    def to_json(self) -> str:
        return to_json(self.to_dict())

    def write(self, path: PathLike) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_json())

    @classmethod
    def from_json(cls, text: str, n: int, m: int) -> 'AlignmentMap':
        data = json.loads(text)
        return cls(data['pairs'], data['dropped_clips'], data['dropped_captions'], n, m)


def _dominated(masses: np.ndarray, bucket: np.ndarray, axis: int) -> np.ndarray:
    best = masses.max(axis=axis)
    return (bucket > best) | (best <= 0)


def extract_realignment(plan, strategy: str = 'row_argmax', threshold: float = 0.0) -> AlignmentMap:
    """
    :param plan: :obj:`FilteredPlan` or any nonnegative n x m matrix (then no bucket mass is known and only clips or
                 captions without any mass are dropped)
    :param strategy: ``row_argmax`` maps every kept clip to its caption of largest mass (lowest index on ties);
                     ``threshold`` lists every cell with mass at least ``threshold`` and above zero.
    :param threshold: used by the ``threshold`` strategy

    >>> extract_realignment([[0.5, 0.0], [0.0, 0.5]]).to_dict()
    {'pairs': [[0, 0, 0.5], [1, 1, 0.5]], 'dropped_clips': [], 'dropped_captions': []}
    """
    values = as_matrix(plan, 'plan')
    if np.any(values < 0):
        raise NegativePlanEntryError('cannot extract a realignment from a plan with negative entries.')
    n, m = values.shape
    if isinstance(plan, FilteredPlan):
        bucket_col, bucket_row = plan.bucket_col, plan.bucket_row
    else:
        bucket_col, bucket_row = np.zeros(n), np.zeros(m)
    dropped_clips = np.flatnonzero(_dominated(values, bucket_col, axis=1))
    dropped_captions = np.flatnonzero(_dominated(values, bucket_row, axis=0))
    if strategy == 'row_argmax':
        dropped = set(dropped_clips.tolist())
        pairs = [(a, int(np.argmax(values[a])), values[a, int(np.argmax(values[a]))]) for a in range(n)
                 if a not in dropped]
    elif strategy == 'threshold':
        threshold = float(threshold)
        if not math.isfinite(threshold) or threshold < 0:
            raise ConfigError(f'threshold must be a nonnegative number, got {threshold}')
        rows, cols = np.nonzero((values >= threshold) & (values > 0))
        pairs = [(a, b, values[a, b]) for a, b in zip(rows.tolist(), cols.tolist())]
    else:
        raise ConfigError(f'unknown strategy {strategy!r}; valid strategies: {", ".join(REALIGNMENT_STRATEGIES)}')
    return AlignmentMap(pairs, dropped_clips.tolist(), dropped_captions.tolist(), n, m)


def vanilla_realignment(S, solver: SolverConfig = None, strategy: str = 'row_argmax',
                        threshold: float = 0.0) -> Tuple[AlignmentMap, np.ndarray]:
    """
    Realignment from plain uniform marginal transport without a bucket: every clip keeps a caption.
    """
    plan, _ = sinkhorn_plan(S, None, solver or SolverConfig(epsilon=EPSILON_VIDEO))
    return extract_realignment(plan.values, strategy, threshold), plan.values


def realign(S, method: str = 'ot', bucket: BucketConfig = None, solver: SolverConfig = None,
            strategy: str = 'row_argmax', threshold: float = 0.0,
            diagonal_sims=None) -> Tuple[AlignmentMap, np.ndarray]:
    """
    Realigns the clips (rows) and captions (columns) of ``S``.

    :param method: ``ot`` (bucketed transport), ``vanilla`` (transport without bucket), ``dtw`` or ``otam`` (the
                   cells of the optimal warping path, cost ``1 - S``)
    :return: (alignment map, n x m plan). For ``dtw`` and ``otam`` the plan is the 0/1 path indicator.
    """
    if method == 'ot':
        filtered, _ = norton_distance(S, bucket, solver, diagonal_sims)
        return extract_realignment(filtered, strategy, threshold), filtered.values
    elif method == 'vanilla':
        return vanilla_realignment(S, solver, strategy, threshold)
    elif method in ('dtw', 'otam'):
        S = as_matrix(S, 'S')
        _, path = (dtw if method == 'dtw' else otam)(cost_from_similarity(S))
        indicator = np.zeros(S.shape)
        for i, j in path.steps:
            indicator[i, j] = 1.0
        return extract_realignment(indicator, strategy, threshold), indicator
    else:
        raise ConfigError(f'unknown realignment method {method!r}; valid methods: {", ".join(REALIGNMENT_METHODS)}')
