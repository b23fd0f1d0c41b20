"""
Slow reference implementations and the acceptance suites built on them.

The oracles share no code with the production solvers: permutations and paths are enumerated explicitly and the
reference Sinkhorn runs plain, unrelaxed updates of its own potentials with its own stopping rule.
"""
import itertools
import logging
import math
import time
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from temporalot.config import ORACLE_MAX_N, ORACLE_MAX_N_LIMIT, ORACLE_MAX_PATH_CELLS, FD_STEP, REFERENCE_TOL, \
    REFERENCE_ITERS
from temporalot.core import Marginals, TransportPlan, as_matrix
from temporalot.exceptions import ConfigError, OracleSizeError, OracleConvergenceError, OracleEvaluationError, \
    ShapeMismatchError

__all__ = ['OracleConfig', 'brute_force_assignment', 'brute_force_dtw', 'brute_force_otam', 'reference_sinkhorn',
           'finite_difference_gradient', 'run_oracle_suites', 'failed_suites', 'SUITES']

logger = logging.getLogger(__name__)


class OracleConfig:
    """
    :param max_n: size cap of the permutation enumeration, at most 8
    :param fd_step: central difference step
    :param ref_tol: marginal tolerance of :obj:`reference_sinkhorn`
    :param ref_iters: iteration cap of :obj:`reference_sinkhorn`
    :param seed: seed of every random instance drawn by the suites
    """

    def __init__(self, max_n: int = ORACLE_MAX_N, fd_step: float = FD_STEP, ref_tol: float = REFERENCE_TOL,
                 ref_iters: int = REFERENCE_ITERS, seed: int = 0):
        if isinstance(max_n, bool) or not isinstance(max_n, int) or not 1 <= max_n <= ORACLE_MAX_N_LIMIT:
            raise ConfigError(f'max_n must be an integer in [1, {ORACLE_MAX_N_LIMIT}], got {max_n!r}')
        if not fd_step > 0:
            raise ConfigError(f'fd_step must be positive, got {fd_step}')
        if not ref_tol > 0:
            raise ConfigError(f'ref_tol must be positive, got {ref_tol}')
        if isinstance(ref_iters, bool) or not isinstance(ref_iters, int) or ref_iters < 1:
            raise ConfigError(f'ref_iters must be a positive integer, got {ref_iters!r}')
        self.max_n = max_n
        self.fd_step = float(fd_step)
        self.ref_tol = float(ref_tol)
        self.ref_iters = ref_iters
        self.seed = int(seed)

    def __repr__(self):
        return f'OracleConfig(max_n={self.max_n}, fd_step={self.fd_step}, ref_tol={self.ref_tol}, ' \
               f'ref_iters={self.ref_iters}, seed={self.seed})'


def brute_force_assignment(S, cfg: OracleConfig = None) -> Tuple[Tuple[int, ...], float]:
    """
    Scans all permutations in lexicographic order and keeps the first one with the largest mean.

    >>> brute_force_assignment([[0, 0, 1], [0, 1, 0], [1, 0, 0]])
    ((2, 1, 0), 1.0)
    """
    if cfg is None:
        cfg = OracleConfig()
    rows = as_matrix(S, 'S').tolist()
    n = len(rows)
    if any(len(row) != n for row in rows):
        raise ShapeMismatchError(f'brute_force_assignment needs a square matrix, got {n}x{len(rows[0])}')
    if n > cfg.max_n:
        raise OracleSizeError(f'{n}! permutations exceed the oracle cap max_n={cfg.max_n}')
    best_permutation, best_total = None, -math.inf
    for permutation in itertools.permutations(range(n)):
        total = 0.0
        for a in range(n):
            total += rows[a][permutation[a]]
        if total > best_total:
            best_permutation, best_total = permutation, total
    return best_permutation, best_total / n


def _check_path_size(n: int, m: int) -> None:
    if n + m > ORACLE_MAX_PATH_CELLS:
        raise OracleSizeError(f'path enumeration on {n}x{m} exceeds the oracle cap n + m <= {ORACLE_MAX_PATH_CELLS}')


def brute_force_dtw(cost) -> float:
    """
    Minimum over all monotone paths from the first to the last cell with moves (1, 0), (0, 1), (1, 1); every path is
    summed in path order.

    >>> brute_force_dtw([[0, 1], [1, 0]])
    0.0
    """
    rows = as_matrix(cost, 'cost').tolist()
    n, m = len(rows), len(rows[0])
    _check_path_size(n, m)
    best = [math.inf]

    def walk(i, j, total):
        total = total + rows[i][j]
        if (i, j) == (n - 1, m - 1):
            best[0] = min(best[0], total)
            return
        if i + 1 < n:
            walk(i + 1, j, total)
        if j + 1 < m:
            walk(i, j + 1, total)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    return best[0]


def brute_force_otam(cost) -> float:
    """
    Minimum over all paths of the boundary relaxed move set: a zero row is added above and below the cost matrix,
    horizontal steps are only taken inside these two rows, vertical and diagonal steps anywhere.

    >>> brute_force_otam([[5, 0, 5]])
    0.0
    """
    rows = as_matrix(cost, 'cost').tolist()
    n, m = len(rows), len(rows[0])
    _check_path_size(n, m)
    last = n + 1
    best = [math.inf]

    def charge(i, j):
        return rows[i - 1][j] if 0 < i < last else 0.0

    def walk(i, j, total):
        total = total + charge(i, j)
        if (i, j) == (last, m - 1):
            best[0] = min(best[0], total)
            return
        if i in (0, last) and j + 1 < m:
            walk(i, j + 1, total)
        if i + 1 <= last:
            walk(i + 1, j, total)
            if j + 1 < m:
                walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    return best[0]


def reference_sinkhorn(S, marginals: Marginals = None, epsilon: float = 0.1,
                       cfg: OracleConfig = None) -> TransportPlan:
    """
    Log domain Sinkhorn run until both marginal violations are at most ``cfg.ref_tol``.

    :raises OracleConvergenceError: if the tolerance is not reached within ``cfg.ref_iters`` iterations
    """
    if cfg is None:
        cfg = OracleConfig()
    S = as_matrix(S, 'S')
    n, m = S.shape
    if marginals is None:
        marginals = Marginals(np.full(n, 1 / n), np.full(m, 1 / m))
    with np.errstate(divide='ignore'):
        log_mu = np.log(marginals.mu)
        log_nu = np.log(marginals.nu)
    f = np.zeros(n)
    g = np.zeros(m)
    for iteration in range(cfg.ref_iters):
        f = epsilon * (log_mu - logsumexp((S + g[None, :]) / epsilon, axis=1))
        g = epsilon * (log_nu - logsumexp((S + f[:, None]) / epsilon, axis=0))
        plan = np.exp((S + f[:, None] + g[None, :]) / epsilon)
        row_error = np.max(np.abs(plan.sum(axis=1) - marginals.mu))
        column_error = np.max(np.abs(plan.sum(axis=0) - marginals.nu))
        if max(row_error, column_error) <= cfg.ref_tol:
            return TransportPlan(plan, marginals, epsilon)
    raise OracleConvergenceError(f'reference sinkhorn did not reach {cfg.ref_tol} within {cfg.ref_iters} iterations '
                                 f'(row error {row_error:.3g}, column error {column_error:.3g})')


def finite_difference_gradient(loss: Callable[[np.ndarray], float], at, h: float = FD_STEP,
                               entries: Optional[Iterable[Tuple[int, ...]]] = None) -> np.ndarray:
    """
    Central differences ``(f(x + h e) - f(x - h e)) / 2h``.

    :param entries: indices to differentiate; all entries if ``None``. Other entries of the result are 0.

    >>> finite_difference_gradient(lambda x: float(np.sum(3 * x)), np.zeros((1, 2))).round(6).tolist()
    [[3.0, 3.0]]
    """
    if not h > 0:
        raise ConfigError(f'finite difference step must be positive, got {h}')
    point = np.array(at, dtype=np.float64)
    grad = np.zeros_like(point)
    indices = np.ndindex(point.shape) if entries is None else entries
    for index in indices:
        index = tuple(index)
        original = point[index]
        point[index] = original + h
        plus = loss(point)
        point[index] = original - h
        minus = loss(point)
        point[index] = original
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise OracleEvaluationError(f'loss is not finite around entry {index}')
        grad[index] = (plus - minus) / (2 * h)
    return grad


# Acceptance suites

def _sinkhorn_feasibility(rng, cfg, count=200, max_size=64):
    from temporalot.sinkhorn import SolverConfig, sinkhorn_plan
    worst_converged, worst_default = 0.0, 0.0
    for _ in range(count):
        n, m = (int(size) for size in rng.integers(1, max_size + 1, size=2))
        S = rng.uniform(-1, 1, size=(n, m))
        for epsilon in (0.05, 0.1, 1.0):
            _, state = sinkhorn_plan(S, None, SolverConfig(epsilon=epsilon, max_iters=500))
            worst_converged = max(worst_converged, state.final_marginal_error)
        _, state = sinkhorn_plan(S, None, SolverConfig(epsilon=0.1, max_iters=50))
        worst_default = max(worst_default, state.final_marginal_error)
    return {'passed': worst_converged <= 1e-9 and worst_default <= 1e-4, 'worst_error_500_iters': worst_converged,
            'worst_error_50_iters': worst_default}


def _assignment_limit(rng, cfg, count=50, budget_s=30.0):
    from temporalot.sinkhorn import SolverConfig, sinkhorn_plan, ot_similarity
    solver = SolverConfig(epsilon=1e-3, max_iters=5000, tol=1e-8, epsilon_start=1.0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(2, cfg.max_n + 1))
        S = rng.uniform(0, 1, size=(n, n))
        plan, _ = sinkhorn_plan(S, None, solver)
        _, best_mean = brute_force_assignment(S, cfg)
        worst = max(worst, abs(n * ot_similarity(plan, S) - n * best_mean) / n)
    elapsed = time.perf_counter() - start
    return {'passed': worst <= 1e-3 and elapsed < budget_s, 'worst_gap': worst, 'runtime_budget_s': budget_s}


def _closed_forms(rng, cfg):
    from temporalot.sinkhorn import SolverConfig, sinkhorn_plan
    product, _ = sinkhorn_plan(np.full((3, 4), 0.7), None, SolverConfig(max_iters=500))
    product_error = float(np.max(np.abs(product.values - 1 / 12)))
    symmetric, _ = sinkhorn_plan(np.eye(2), None, SolverConfig(epsilon=0.1, max_iters=500))
    diagonal = 0.5 * math.exp(10) / (math.exp(10) + 1)
    symmetric_error = float(np.max(np.abs(symmetric.values - [[diagonal, 0.5 - diagonal], [0.5 - diagonal, diagonal]])))
    S = rng.uniform(-1, 1, size=(5, 6))
    shifted = S + rng.uniform(-2, 2, size=(5, 1)) + rng.uniform(-2, 2, size=(1, 6))
    solver = SolverConfig(epsilon=0.1, max_iters=2000, tol=1e-13)
    plan, _ = sinkhorn_plan(S, None, solver)
    shifted_plan, _ = sinkhorn_plan(shifted, None, solver)
    shift_error = float(np.max(np.abs(plan.values - shifted_plan.values)))
    return {'passed': product_error <= 1e-12 and symmetric_error <= 1e-10 and shift_error <= 1e-8,
            'product_error': product_error, 'symmetric_error': symmetric_error, 'shift_error': shift_error}


def _dtw_equivalence(rng, cfg, count=100):
    from temporalot.tempalign import dtw, otam
    mismatches = 0
    for _ in range(count):
        n, m = (int(size) for size in rng.integers(1, 7, size=2))
        cost = rng.uniform(0, 1, size=(n, m))
        if dtw(cost)[0] != brute_force_dtw(cost):
            mismatches += 1
    for shape in [(1, int(m)) for m in rng.integers(1, 9, size=count // 2)] + \
                 [tuple(int(size) for size in rng.integers(1, 6, size=2)) for _ in range(count - count // 2)]:
        cost = rng.uniform(0, 1, size=shape)
        if otam(cost)[0] != brute_force_otam(cost):
            mismatches += 1
    return {'passed': mismatches == 0, 'mismatches': mismatches}


def _lse_properties(rng, cfg, count=1000):
    from temporalot.similarity import log_sum_exp
    failures = 0
    for _ in range(count):
        x = rng.normal(size=int(rng.integers(1, 20)))
        alpha = float(rng.uniform(0.01, 5))
        value = log_sum_exp(x, alpha)
        if not (x.max() - 1e-12 <= value <= x.max() + alpha * math.log(x.size) + 1e-12):
            failures += 1
        if log_sum_exp(x, alpha / 2) > value + 1e-12:
            failures += 1
        shift = float(rng.uniform(-10, 10))
        if abs(log_sum_exp(x + shift, alpha) - (value + shift)) > 1e-9:
            failures += 1
        if abs(log_sum_exp(x, 1e-3) - x.max()) > 1e-2:
            failures += 1
    return {'passed': failures == 0, 'failures': failures}


def _gradient_checks(rng, cfg, count=20):
    from temporalot.losses import clip_caption_loss, video_paragraph_loss, faulty_negative_targets, LossConfig, \
        relative_gradient_error
    worst = 0.0
    for _ in range(count):
        size = int(rng.integers(1, 7))
        S_hat = rng.uniform(-1, 1, size=(size, size))
        targets = faulty_negative_targets(S_hat, LossConfig())
        report = clip_caption_loss(S_hat, targets, 0.07)
        numeric = finite_difference_gradient(lambda x: clip_caption_loss(x, targets, 0.07).value, S_hat, cfg.fd_step)
        worst = max(worst, relative_gradient_error(report.grad, numeric))

        size = int(rng.integers(1, 4))
        shapes = [[tuple(int(k) for k in rng.integers(1, 4, size=2)) for _ in range(size)] for _ in range(size)]
        similarities = [[rng.uniform(-1, 1, size=shape) for shape in row] for row in shapes]
        plans = [[rng.dirichlet(np.ones(shape[0] * shape[1])).reshape(shape) for shape in row] for row in shapes]
        report = video_paragraph_loss([[(similarities[i][j], plans[i][j]) for j in range(size)]
                                       for i in range(size)], 0.07)
        for i in range(size):
            for j in range(size):
                def loss(x, i=i, j=j):
                    grid = [[(x if (a, b) == (i, j) else similarities[a][b], plans[a][b]) for b in range(size)]
                            for a in range(size)]
                    return video_paragraph_loss(grid, 0.07).value

                numeric = finite_difference_gradient(loss, similarities[i][j], cfg.fd_step)
                worst = max(worst, relative_gradient_error(report.grad[i][j], numeric))
    return {'passed': worst <= 1e-4, 'worst_relative_error': worst}


def _target_matrix(rng, cfg):
    from temporalot.losses import faulty_negative_targets, clip_caption_loss, LossConfig, TargetMatrix
    worst_row, worst_identity, bitwise = 0.0, 0.0, True
    for size in range(1, 9):
        S_hat = rng.uniform(-1, 1, size=(size, size))
        for beta in (0.0, 0.3, 1.0):
            targets = faulty_negative_targets(S_hat, LossConfig(beta=beta))
            worst_row = max(worst_row, float(np.max(np.abs(targets.row_sums - 1))))
        zero_beta = clip_caption_loss(S_hat, faulty_negative_targets(S_hat, LossConfig(beta=0.0)), 0.07).value
        identity = clip_caption_loss(S_hat, TargetMatrix(np.eye(size)), 0.07).value
        bitwise = bitwise and zero_beta == identity
        dominant = faulty_negative_targets(100 * np.eye(size), LossConfig(beta=0.3, epsilon_clip=1.0))
        worst_identity = max(worst_identity, float(np.max(np.abs(dominant.values - np.eye(size)))))
    return {'passed': worst_row <= 1e-9 and worst_identity <= 1e-6 and bitwise, 'worst_row_sum_error': worst_row,
            'worst_identity_error': worst_identity, 'beta_zero_bitwise': bitwise}


def _bucket_behaviour(rng, cfg, count=20):
    from temporalot.bucket import BucketConfig, norton_distance
    from temporalot.sinkhorn import SolverConfig, sinkhorn_plan, ot_similarity
    solver = SolverConfig(epsilon=0.1, max_iters=5000, tol=1e-12)
    violations = 0
    for _ in range(count):
        S = rng.uniform(0, 1, size=(4, 6))
        for scheme in ('matched_mass', 'uniform'):
            masses = [norton_distance(S, BucketConfig(p=p, marginal_scheme=scheme), solver)[0].bucket_mass
                      for p in np.linspace(S.min() - 1, S.max() + 1, 10)]
            violations += sum(1 for low, high in zip(masses, masses[1:]) if high < low - 1e-9)
    worst_gap = 0.0
    for _ in range(count):
        S = rng.uniform(0, 1, size=(4, 4))
        filtered, distance = norton_distance(S, BucketConfig(p=float(S.min()) - 1e3), solver)
        plain, _ = sinkhorn_plan(S, None, solver)
        worst_gap = max(worst_gap, abs(filtered.normalized_distance - ot_similarity(plain, S)))
    return {'passed': violations == 0 and worst_gap <= 1e-6, 'monotonicity_violations': violations,
            'worst_no_bucket_gap': worst_gap}


def _synthetic_end_to_end(rng, cfg):
    from temporalot.bucket import BucketConfig, norton_distance, extract_realignment, estimate_prompt_value
    from temporalot.evaluation import RetrievalConfig, evaluate_retrieval
    from temporalot.similarity import SimilarityConfig, clip_caption_matrix
    from temporalot.synthetic import generate_noisy_benchmark
    dataset, truths = generate_noisy_benchmark(seed=7)
    bucket = BucketConfig(quantile=0.3)
    ot_report = evaluate_retrieval(dataset, RetrievalConfig('ot_norton', bucket=bucket))
    dtw_report = evaluate_retrieval(dataset, RetrievalConfig('dtw'))
    sim_cfg = SimilarityConfig(mode='mean_pool')
    matrices = [clip_caption_matrix(video, video, sim_cfg).values for video in dataset]
    p = estimate_prompt_value(np.concatenate([np.diag(S) for S in matrices]), 0.3)
    planted, recovered, noise, dropped = 0, 0, 0, 0
    for S, truth in zip(matrices, truths):
        filtered, _ = norton_distance(S, BucketConfig(p=p))
        alignment = extract_realignment(filtered)
        pairs = set(alignment.pair_indices())
        planted += len(truth.planted_pairs)
        recovered += sum(1 for pair in truth.planted_pairs if pair in pairs)
        noise += len(truth.noise_captions)
        dropped += sum(1 for caption in truth.noise_captions if caption in alignment.dropped_captions)
    recovery = recovered / planted
    dropped_fraction = dropped / noise if noise else 1.0
    return {'passed': ot_report.per_k[1] > dtw_report.per_k[1] and recovery >= 0.8 and dropped_fraction >= 0.6,
            'ot_recall_at_1': ot_report.per_k[1], 'dtw_recall_at_1': dtw_report.per_k[1],
            'planted_pair_recovery': recovery, 'noise_captions_dropped': dropped_fraction}


SUITES = {
    'sinkhorn_feasibility': _sinkhorn_feasibility,
    'assignment_limit': _assignment_limit,
    'closed_forms': _closed_forms,
    'dtw_equivalence': _dtw_equivalence,
    'lse_properties': _lse_properties,
    'gradient_checks': _gradient_checks,
    'target_matrix': _target_matrix,
    'bucket_behaviour': _bucket_behaviour,
    'synthetic_end_to_end': _synthetic_end_to_end,
}


def run_oracle_suites(cfg: OracleConfig = None, suites: Optional[Sequence[str]] = None) -> Dict[str, dict]:
    """
    Runs the named acceptance suites (all if ``None``), each with its own generator seeded by ``cfg.seed``.

    :return: {suite: {'passed': bool, 'runtime_s': float, ...details}}
    """
    if cfg is None:
        cfg = OracleConfig()
    names = list(SUITES) if suites is None else list(suites)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ConfigError(f'unknown oracle suites {unknown}; valid suites: {", ".join(SUITES)}')
    results = {}
    for name in names:
        start = time.perf_counter()
        result = SUITES[name](np.random.default_rng(cfg.seed), cfg)
        result['passed'] = bool(result['passed'])
        result['runtime_s'] = time.perf_counter() - start
        logger.info(f'oracle suite {name}: {"passed" if result["passed"] else "FAILED"} '
                    f'in {result["runtime_s"]:.2f} s')
        results[name] = result
    return results


def failed_suites(results: Dict[str, dict]) -> List[str]:
    return [name for name, result in results.items() if not result['passed']]
