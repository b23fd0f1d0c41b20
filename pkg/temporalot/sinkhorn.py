"""
Entropic optimal transport in maximization form: the plan maximizing ``<Q, S> + epsilon * H(Q)`` under marginals
``mu`` and ``nu`` is ``Q = diag(kappa1) exp(S / epsilon) diag(kappa2)``. The scalings are found by alternately fitting
the columns and then the rows. The log domain iteration is over-relaxed once a few plain iterations have shown how
fast it contracts, and can be warm started from a decreasing sequence of larger epsilons. The reported error is the
larger of the row and column violations. Every solve ends on an exact row fit.
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import entr, logsumexp

from temporalot.config import EPSILON_VIDEO, SINKHORN_ITERS, SINKHORN_TOL, MOMENTUM_FROM, MOMENTUM_WINDOW, \
    EPSILON_SCALING_DECAY, SCALING_STAGE_ITERS, SCALING_STAGE_TOL
from temporalot.core import Marginals, TransportPlan, as_matrix
from temporalot.exceptions import ConfigError, MarginalsError, NonFiniteValueError, SolverBreakdownError, \
    ShapeMismatchError, NegativePlanEntryError

__all__ = ['SolverConfig', 'SolverState', 'uniform_marginals', 'sinkhorn_plan', 'transport_objective',
           'ot_similarity']

logger = logging.getLogger(__name__)


class SolverConfig:
    """
    :param epsilon: entropic regularization, positive
    :param max_iters: iteration cap, at least 1. With ``epsilon_start`` it caps the final stage only.
    :param tol: L-inf marginal violation at which iteration stops early, positive
    :param log_domain: iterate the log scalings (default). If ``False`` the scalings themselves are iterated.
    :param momentum: over-relaxation weight in (0, 2) of the log domain updates. ``None`` (default) estimates the
                     weight from the contraction of the first iterations, ``1.0`` is plain Sinkhorn. The direct domain
                     solver always iterates plainly.
    :param epsilon_start: if larger than ``epsilon``, the log domain solve is warm started by stages at
                          ``epsilon_start``, ``epsilon_start / 2``, ... down to ``epsilon``
    """

    def __init__(self, epsilon: float = EPSILON_VIDEO, max_iters: int = SINKHORN_ITERS, tol: float = SINKHORN_TOL,
                 log_domain: bool = True, momentum: Optional[float] = None, epsilon_start: Optional[float] = None):
        self._epsilon = None
        self._max_iters = None
        self._tol = None
        self._momentum = None
        self._epsilon_start = None
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.tol = tol
        self.log_domain = bool(log_domain)
        self.momentum = momentum
        self.epsilon_start = epsilon_start

    def __repr__(self):
        return f'SolverConfig(epsilon={self.epsilon}, max_iters={self.max_iters}, tol={self.tol}, ' \
               f'log_domain={self.log_domain}, momentum={self.momentum}, epsilon_start={self.epsilon_start})'

    @property
    def epsilon(self) -> float:
        return self._epsilon

    @epsilon.setter
    def epsilon(self, val):
        val = float(val)
        if not np.isfinite(val) or val <= 0:
            raise ConfigError(f'epsilon must be positive, got {val}')
        self._epsilon = val

    @property
    def max_iters(self) -> int:
        return self._max_iters

    @max_iters.setter
    def max_iters(self, val):
        if isinstance(val, bool) or int(val) != val or val < 1:
            raise ConfigError(f'max_iters must be a positive integer, got {val!r}')
        self._max_iters = int(val)

    @property
    def tol(self) -> float:
        return self._tol

    @tol.setter
    def tol(self, val):
        val = float(val)
        if not np.isfinite(val) or val <= 0:
            raise ConfigError(f'tol must be positive, got {val}')
        self._tol = val

    @property
    def momentum(self) -> Optional[float]:
        return self._momentum

    @momentum.setter
    def momentum(self, val):
        if val is not None:
            val = float(val)
            if not 0 < val < 2:
                raise ConfigError(f'momentum must lie in (0, 2), got {val}')
        self._momentum = val

    @property
    def epsilon_start(self) -> Optional[float]:
        return self._epsilon_start

    @epsilon_start.setter
    def epsilon_start(self, val):
        if val is not None:
            val = float(val)
            if not np.isfinite(val) or val <= 0:
                raise ConfigError(f'epsilon_start must be positive, got {val}')
        self._epsilon_start = val


class SolverState:
    """
    Result of a solve besides the plan. The scalings are kept as logarithms; :obj:`kappa1` and :obj:`kappa2`
    exponentiate them.
    """

    def __init__(self, log_kappa1: np.ndarray, log_kappa2: np.ndarray, iterations_run: int,
                 final_marginal_error: float, converged: bool):
        self.log_kappa1 = log_kappa1
        self.log_kappa2 = log_kappa2
        self.iterations_run = iterations_run
        self.final_marginal_error = final_marginal_error
        self.converged = converged

    def __repr__(self):
        return f'SolverState(iterations_run={self.iterations_run}, ' \
               f'final_marginal_error={self.final_marginal_error:.3g}, converged={self.converged})'

    @property
    def kappa1(self) -> np.ndarray:
        return np.exp(self.log_kappa1)

    @property
    def kappa2(self) -> np.ndarray:
        return np.exp(self.log_kappa2)


def uniform_marginals(n: int, m: int) -> Marginals:
    """
    >>> uniform_marginals(1, 4).nu.tolist()
    [0.25, 0.25, 0.25, 0.25]
    """
    if n < 1 or m < 1:
        raise MarginalsError(f'marginals need positive counts, got ({n}, {m})')
    return Marginals(np.full(n, 1 / n), np.full(m, 1 / m))


def _lse(matrix: np.ndarray, axis: int) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return logsumexp(matrix, axis=axis)


def _log(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(weights)


def _column_error(plan: np.ndarray, nu: np.ndarray) -> float:
    return float(np.max(np.abs(plan.sum(axis=0) - nu)))


def _marginal_error(plan: np.ndarray, marginals: Marginals) -> float:
    return max(float(np.max(np.abs(plan.sum(axis=1) - marginals.mu))), _column_error(plan, marginals.nu))


def _relax(old: np.ndarray, new: np.ndarray, omega: float) -> np.ndarray:
    """
    ``new + (1 - omega) * (old - new)`` per coordinate where this does not raise the dual objective above its value
    at ``old``, ``new`` elsewhere. Along one coordinate the objective exceeds its minimum by a positive multiple of
    ``e^t - 1 - t`` at distance ``t`` from ``new``.
    """
    if omega == 1.0:
        return new
    with np.errstate(invalid='ignore', over='ignore'):
        before = old - new
        after = (1 - omega) * before
        keep = np.expm1(after) - after <= np.expm1(before) - before
        return np.where(keep, new + after, new)


class _Momentum:
    """
    Over-relaxation weight of the log domain iteration. The first :obj:`MOMENTUM_FROM` iterations are plain; the
    weight is then ``2 / (1 + sqrt(1 - r))`` for the observed plain contraction rate ``r``. While the relaxed iteration
    contracts clearly slower than ``omega - 1`` the weight is too small, and the plain rate is recovered from
    ``lambda + omega - 1 = omega * sqrt(lambda * r)``. A window without contraction falls back to plain iterations.
    """

    def __init__(self, fixed: Optional[float]):
        self.fixed = fixed
        self.value = 1.0
        self.changed_at = 0
        self.frozen = False

    def __repr__(self):
        return f'_Momentum(value={self.value}, changed_at={self.changed_at}, frozen={self.frozen})'

    @staticmethod
    def optimal(rate: float) -> float:
        return 2 / (1 + math.sqrt(1 - rate))

    def _set(self, value: float, count: int) -> None:
        logger.debug(f'sinkhorn momentum {self.value:.4g} -> {value:.4g} after {count} iterations')
        self.value = value
        self.changed_at = count

    def update(self, errors: List[float]) -> float:
        count = len(errors)
        if self.frozen or count < max(MOMENTUM_FROM, 3):
            return self.value
        if self.fixed is not None:
            self.value = self.fixed
            return self.value
        if self.value == 1.0:
            rate = min(errors[-1] / errors[-2], errors[-2] / errors[-3])
            if 0 < rate < 1:
                self._set(self.optimal(rate), count)
            return self.value
        if count - self.changed_at <= MOMENTUM_WINDOW:
            return self.value
        observed = (errors[-1] / errors[-1 - MOMENTUM_WINDOW]) ** (1 / MOMENTUM_WINDOW)
        omega = self.value
        if not observed < 1:
            self.value, self.frozen = 1.0, True
            logger.debug(f'sinkhorn momentum {omega:.4g} stalled after {count} iterations, back to plain updates')
        elif observed > math.sqrt(omega - 1):
            rate = ((observed + omega - 1) / (omega * math.sqrt(observed))) ** 2
            if rate < 1 and self.optimal(rate) > omega:
                self._set(self.optimal(rate), count)
            else:
                self.changed_at = count
        return self.value


def _iterate(S: np.ndarray, marginals: Marginals, epsilon: float, max_iters: int, tol: float,
             momentum: Optional[float], f: np.ndarray, g: np.ndarray):
    """
    Log domain iterations from the potentials ``f``, ``g`` (similarity units, ``log kappa = f / epsilon``). The
    returned plan always ends on an exact row fit.
    """
    kernel = S / epsilon
    log_mu, log_nu = _log(marginals.mu), _log(marginals.nu)
    u, v = f / epsilon, g / epsilon
    relaxation = _Momentum(momentum)
    errors = []
    iteration = 0
    converged = False
    for iteration in range(1, max_iters + 1):
        omega = relaxation.update(errors)
        v = _relax(v, log_nu - _lse(kernel + u[:, None], axis=0), omega)
        u = _relax(u, log_mu - _lse(kernel + v[None, :], axis=1), omega)
        errors.append(_marginal_error(np.exp(kernel + u[:, None] + v[None, :]), marginals))
        if errors[-1] <= tol:
            u = log_mu - _lse(kernel + v[None, :], axis=1)
            errors[-1] = _marginal_error(np.exp(kernel + u[:, None] + v[None, :]), marginals)
            if errors[-1] <= tol:
                converged = True
                break
    if not converged:
        u = log_mu - _lse(kernel + v[None, :], axis=1)
    plan = np.exp(kernel + u[:, None] + v[None, :])
    return plan, u * epsilon, v * epsilon, iteration, _marginal_error(plan, marginals)


def _epsilon_schedule(cfg: SolverConfig) -> List[float]:
    schedule = []
    epsilon = cfg.epsilon_start
    while epsilon is not None and epsilon > cfg.epsilon:
        schedule.append(epsilon)
        epsilon *= EPSILON_SCALING_DECAY
    return schedule


def _solve_log_domain(S: np.ndarray, marginals: Marginals, cfg: SolverConfig):
    f = np.zeros(S.shape[0])
    g = np.zeros(S.shape[1])
    warm_start = 0
    for epsilon in _epsilon_schedule(cfg):
        _, f, g, iterations, _ = _iterate(S, marginals, epsilon, SCALING_STAGE_ITERS, max(cfg.tol, SCALING_STAGE_TOL),
                                          cfg.momentum, f, g)
        warm_start += iterations
    plan, f, g, iterations, error = _iterate(S, marginals, cfg.epsilon, cfg.max_iters, cfg.tol, cfg.momentum, f, g)
    return plan, f / cfg.epsilon, g / cfg.epsilon, warm_start + iterations, error


def _solve_direct(S: np.ndarray, marginals: Marginals, cfg: SolverConfig):
    shift = S.max()
    kernel = np.exp((S - shift) / cfg.epsilon)
    mu, nu = marginals.mu, marginals.nu
    a = np.ones(S.shape[0])
    b = np.ones(S.shape[1])
    error = np.inf
    iteration = 0
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        for iteration in range(1, cfg.max_iters + 1):
            b = nu / (kernel.T @ a)
            a = mu / (kernel @ b)
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))) or np.any(a[mu > 0] <= 0) or \
                    np.any(b[nu > 0] <= 0):
                raise SolverBreakdownError(
                    f'direct domain scalings broke down at iteration {iteration} (epsilon={cfg.epsilon}); '
                    f'use the log domain solver')
            plan = a[:, None] * kernel * b[None, :]
            error = _marginal_error(plan, marginals)
            if error <= cfg.tol:
                break
        log_a = np.log(a) - shift / cfg.epsilon
        log_b = np.log(b)
    plan = a[:, None] * kernel * b[None, :]
    return plan, log_a, log_b, iteration, error


def sinkhorn_plan(S, marginals: Marginals = None, cfg: SolverConfig = None) -> Tuple[TransportPlan, SolverState]:
    """
    :param S: n x m similarity matrix (:obj:`~temporalot.core.SimilarityMatrix` or array like)
    :param marginals: defaults to uniform marginals
    :param cfg: defaults to ``SolverConfig()``
    :return: the plan and the solver state. Iteration stops as soon as the larger of the row and column violations
             is at most ``cfg.tol`` or after ``cfg.max_iters`` iterations.
    :raises ConfigError: ``cfg.epsilon_start`` is set for the direct domain solver

    >>> plan, state = sinkhorn_plan([[0.0, 0.0], [0.0, 0.0]])
    >>> plan.values.round(12).tolist()
    [[0.25, 0.25], [0.25, 0.25]]
    """
    S = as_matrix(S, 'S')
    if not np.all(np.isfinite(S)):
        raise NonFiniteValueError('similarity matrix must be finite.')
    if marginals is None:
        marginals = uniform_marginals(*S.shape)
    if (marginals.n, marginals.m) != S.shape:
        raise ShapeMismatchError(f'marginals ({marginals.n}, {marginals.m}) do not match S {S.shape}')
    if cfg is None:
        cfg = SolverConfig()
    if cfg.epsilon_start is not None and not cfg.log_domain:
        raise ConfigError('epsilon scaling needs the log domain solver.')
    if cfg.log_domain:
        plan, log_kappa1, log_kappa2, iterations, error = _solve_log_domain(S, marginals, cfg)
    else:
        plan, log_kappa1, log_kappa2, iterations, error = _solve_direct(S, marginals, cfg)
    converged = error <= cfg.tol
    if converged:
        logger.debug(f'sinkhorn {S.shape} converged after {iterations} iterations, error {error:.3g}')
    else:
        logger.info(f'sinkhorn {S.shape} stopped after {iterations} iterations with marginal error {error:.3g} '
                    f'(tol {cfg.tol:.3g}, epsilon {cfg.epsilon})')
    state = SolverState(log_kappa1, log_kappa2, iterations, error, converged)
    return TransportPlan(plan, marginals, cfg.epsilon), state


def _check_pair(Q, S):
    Q = as_matrix(Q, 'Q')
    S = as_matrix(S, 'S')
    if Q.shape != S.shape:
        raise ShapeMismatchError(f'plan shape {Q.shape} does not match similarity shape {S.shape}')
    return Q, S


def transport_objective(Q, S, epsilon: float) -> float:
    """
    ``<Q, S> + epsilon * H(Q)`` with ``H(Q) = -sum(Q log Q)`` and ``0 log 0 = 0``.

    >>> round(transport_objective([[0.25, 0.25], [0.25, 0.25]], [[0, 0], [0, 0]], 0.1), 6)
    0.138629
    """
    Q, S = _check_pair(Q, S)
    if np.any(Q < 0):
        raise NegativePlanEntryError('transport plan has a negative entry.')
    return float(np.sum(Q * S) + epsilon * np.sum(entr(Q)))


def ot_similarity(Q, S) -> float:
    """
    ``sum(Q * S)``
    """
    Q, S = _check_pair(Q, S)
    return float(np.sum(Q * S))
