"""
Command line interface: ``temporalot <command> [options]``.

Commands read manifests and csv matrices and write csv, json or pgm files. Human readable summaries go to stdout,
logging to stderr. Exit codes: 0 on success, 1 on invalid input or options, 2 on file system errors.
"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

import numpy as np

from temporalot.bucket import BucketConfig, norton_distance, realign, REALIGNMENT_METHODS, REALIGNMENT_STRATEGIES
from temporalot.config import EPSILON_VIDEO, EPSILON_CLIP, SINKHORN_ITERS, SINKHORN_TOL, ALPHA, TAU, BETA, LAMBDA, \
    RECALL_KS, PROMPT_SCOPES, CAPAVG_SCOPES, ORACLE_MAX_N, FD_STEP
from temporalot.core import load_dataset
from temporalot.evaluation import RetrievalConfig, evaluate_retrieval
from temporalot.exceptions import ConfigError, TemporalOTException
from temporalot.losses import LossConfig, batch_losses, gradient_check
from temporalot.oracle import OracleConfig, run_oracle_suites, failed_suites, SUITES
from temporalot.similarity import SimilarityConfig, clip_caption_matrix
from temporalot.sinkhorn import SolverConfig, sinkhorn_plan, ot_similarity
from temporalot.util import read_csv, write_csv, write_json, write_pgm, resolve_threads

__all__ = ['main', 'build_parser']

logger = logging.getLogger(__name__)

MODES = {'fine': 'fine_grained', 'mean': 'mean_pool', 'max': 'max_pool'}
SCHEMES = {'matched': 'matched_mass', 'uniform': 'uniform'}
#: ``ot`` is the command line name of the bucketed transport measure.
MEASURE_NAMES = {'capavg': 'capavg', 'dtw': 'dtw', 'otam': 'otam', 'ot': 'ot_norton', 'ot_norton': 'ot_norton'}


class ArgumentParser(argparse.ArgumentParser):
    """
    Raises :obj:`ConfigError` instead of exiting, so that usage errors share the exit code of invalid values.
    """

    def error(self, message):
        raise ConfigError(f'{self.prog}: {message}')


def _mode(value: str) -> str:
    if value in MODES:
        return MODES[value]
    if value in MODES.values():
        return value
    raise ConfigError(f'unknown mode {value!r}; valid modes: {", ".join(MODES)}')


def _measure(value: str) -> str:
    try:
        return MEASURE_NAMES[value]
    except KeyError:
        raise ConfigError(f'unknown measure {value!r}; valid measures: capavg, dtw, otam, ot')


def _ks(value: str) -> List[int]:
    try:
        return [int(k) for k in value.split(',')]
    except ValueError:
        raise ConfigError(f'--recall must be a comma separated list of integers, got {value!r}')


def _sim_cfg(args, default_mode: str) -> SimilarityConfig:
    return SimilarityConfig(alpha=args.alpha, mode=_mode(args.mode or default_mode))


def _solver(args, default_epsilon: float = EPSILON_VIDEO) -> SolverConfig:
    epsilon = default_epsilon if args.epsilon is None else args.epsilon
    return SolverConfig(epsilon=epsilon, max_iters=args.iters, tol=args.tol)


def _bucket(args) -> Optional[BucketConfig]:
    if getattr(args, 'no_bucket', False):
        return None
    return BucketConfig(p=args.bucket_p, quantile=args.bucket_quantile, marginal_scheme=SCHEMES[args.marginals])


def _dataset_diagonals(dataset, sim_cfg: SimilarityConfig) -> np.ndarray:
    return np.concatenate([video.diagonal(sim_cfg) for video in dataset])


# Commands

def run_sim(args) -> int:
    sim_cfg = _sim_cfg(args, 'fine')
    dataset = load_dataset(args.manifest)
    video = dataset.get_video(args.video_id)
    paragraph = dataset.get_video(args.paragraph_id or args.video_id)
    S = clip_caption_matrix(video, paragraph, sim_cfg)
    write_csv(args.out, S.values)
    print(f'{video.id} x {paragraph.id}: {S.n}x{S.m} {sim_cfg.mode} similarities written to {args.out}')
    return 0


def run_ot(args) -> int:
    solver = _solver(args)
    bucket = _bucket(args)
    S = read_csv(args.sim)
    if bucket is None:
        plan, state = sinkhorn_plan(S, None, solver)
        values, distance = plan.values, ot_similarity(plan, S)
    else:
        filtered, _ = norton_distance(S, bucket, solver)
        state = filtered.state
        values, distance = filtered.values, filtered.normalized_distance
    write_csv(args.out_plan, values)
    with open(args.out_distance, 'w', encoding='utf-8') as f:
        f.write(f'{distance:.17g}\n')
    print(f'{S.shape[0]}x{S.shape[1]} plan after {state.iterations_run} iterations, marginal error '
          f'{state.final_marginal_error:.3g}, distance {distance:.9g}')
    return 0


def run_align(args) -> int:
    sim_cfg = _sim_cfg(args, 'fine')
    solver = _solver(args)
    bucket = _bucket(args)
    if args.threshold < 0:
        raise ConfigError(f'threshold must be nonnegative, got {args.threshold}')
    dataset = load_dataset(args.manifest)
    video = dataset.get_video(args.video_id)
    paragraph = dataset.get_video(args.paragraph_id or args.video_id)
    S = clip_caption_matrix(video, paragraph, sim_cfg)
    diagonal = None
    if args.method == 'ot' and bucket.p is None:
        # the batch of one alignment is its video and its paragraph
        batch = dataset if args.prompt_scope == 'dataset' else list(dict.fromkeys([video, paragraph]))
        diagonal = _dataset_diagonals(batch, sim_cfg)
    alignment, plan = realign(S, args.method, bucket, solver, args.strategy, args.threshold, diagonal)
    alignment.write(args.out)
    if args.out_plan:
        write_csv(args.out_plan, plan)
    print(f'{video.id} x {paragraph.id} ({args.method}): {len(alignment.pairs)} pairs, '
          f'{len(alignment.dropped_clips)} dropped clips, {len(alignment.dropped_captions)} dropped captions')
    return 0


def run_retrieve(args) -> int:
    cfg = RetrievalConfig(measure=_measure(args.measure), sim_cfg=_sim_cfg(args, 'mean'), solver=_solver(args),
                          bucket=_bucket(args), ks=_ks(args.recall), prompt_scope=args.prompt_scope,
                          capavg_scope=args.capavg_scope, dtw_normalize=args.dtw_normalize,
                          threads=resolve_threads(args.threads), record_runtime=args.record_runtime,
                          batch_size=args.batch_size, clip_retrieval=not args.no_clip_retrieval)
    dataset = load_dataset(args.manifest)
    report = evaluate_retrieval(dataset, cfg)
    report.write(args.out)
    summary = ', '.join(f'R@{k} {value:.4f}' for k, value in report.per_k.items())
    print(f'{cfg.measure} on {len(dataset)} videos: {summary}')
    if report.clip_report is not None:
        clip_summary = ', '.join(f'R@{k} {value:.4f}' for k, value in report.clip_report.per_k.items())
        print(f'caption to clip on {len(report.clip_report.ranks)} clips: {clip_summary}')
    return 0


def _sample_entries(shape, count: int, rng: np.random.Generator) -> List[tuple]:
    size = int(np.prod(shape))
    flat = np.sort(rng.choice(size, size=min(count, size), replace=False))
    return [tuple(int(k) for k in index) for index in zip(*np.unravel_index(flat, shape))]


def run_loss(args) -> int:
    cfg = LossConfig(tau=args.tau, beta=args.beta, lambda_=args.lambda_, epsilon_clip=args.epsilon_clip,
                     epsilon_video=args.epsilon_video, max_iters=args.iters)
    sim_cfg = _sim_cfg(args, 'fine')
    bucket = _bucket(args)
    threads = resolve_threads(args.threads)
    if args.check_entries < 1:
        raise ConfigError(f'--check-entries must be positive, got {args.check_entries}')
    dataset = load_dataset(args.manifest)
    losses = batch_losses(dataset, cfg, bucket, sim_cfg, threads)
    result = losses.to_dict()
    if args.check_grad:
        rng = np.random.default_rng(args.seed)
        clip_entries = _sample_entries(losses.clip_similarities.shape, args.check_entries, rng)
        clip_error = gradient_check(losses.clip_loss_function(), losses.clip.grad, losses.clip_similarities,
                                    FD_STEP, clip_entries)
        flat = losses.flat_video_similarities()
        video_entries = _sample_entries(flat.shape, args.check_entries, rng)
        video_error = gradient_check(losses.video_loss_function(), losses.flat_video_grad(), flat, FD_STEP,
                                     video_entries)
        result['gradient_check'] = {'clip_relative_error': clip_error, 'video_relative_error': video_error,
                                    'max_relative_error': max(clip_error, video_error),
                                    'entries': args.check_entries, 'seed': args.seed}
    write_json(args.out, result)
    print(f'clip loss {result["clip_loss"]:.9g}, video loss {result["video_loss"]:.9g}, total {result["total"]:.9g}')
    if args.check_grad:
        print(f'max relative gradient error {result["gradient_check"]["max_relative_error"]:.3g}')
    return 0


def run_oracle_check(args) -> int:
    cfg = OracleConfig(max_n=args.max_n, seed=args.seed)
    results = run_oracle_suites(cfg, args.suite)
    if args.out:
        write_json(args.out, results)
    for name, result in results.items():
        print(f'{name}: {"passed" if result["passed"] else "FAILED"}')
    return 1 if failed_suites(results) else 0


def run_heatmap(args) -> int:
    plan = read_csv(args.plan)
    write_pgm(args.out, plan)
    print(f'{plan.shape[0]}x{plan.shape[1]} heatmap written to {args.out}')
    return 0


# Parser

def _similarity_arguments(parser):
    parser.add_argument('--mode', choices=sorted(list(MODES) + list(MODES.values())), default=None,
                        help='clip-caption similarity: fine (log-sum-exp), mean (pooled dot product) or max')
    parser.add_argument('--alpha', type=float, default=ALPHA, help='log-sum-exp temperature')


def _solver_arguments(parser):
    parser.add_argument('--epsilon', type=float, default=None, help=f'entropic weight (default {EPSILON_VIDEO})')
    parser.add_argument('--iters', type=int, default=SINKHORN_ITERS, help='sinkhorn iterations')
    parser.add_argument('--tol', type=float, default=SINKHORN_TOL, help='marginal tolerance for early stopping')


def _bucket_arguments(parser, allow_none: bool = False):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--bucket-quantile', type=float, default=None,
                       help='prompt value as quantile of the originally aligned similarities (default 0.3)')
    group.add_argument('--bucket-p', type=float, default=None, help='fixed prompt value')
    if allow_none:
        group.add_argument('--no-bucket', action='store_true', help='plain transport with uniform marginals')
    parser.add_argument('--marginals', choices=sorted(SCHEMES), default='matched',
                        help='marginals of the bucket augmented problem')


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0, help='-v for info, -vv for debug logging')

    parser = ArgumentParser(prog='temporalot', description='Noise robust temporal alignment of clips and captions.')
    commands = parser.add_subparsers(dest='command', metavar='command', parser_class=ArgumentParser)
    commands.required = True

    sim = commands.add_parser('sim', parents=[common], help='clip-caption similarity matrix of a video and paragraph')
    sim.add_argument('--manifest', required=True)
    sim.add_argument('--video-id', required=True)
    sim.add_argument('--paragraph-id', default=None, help='defaults to the video id')
    _similarity_arguments(sim)
    sim.add_argument('--out', required=True, help='csv file')
    sim.set_defaults(func=run_sim)

    ot = commands.add_parser('ot', parents=[common], help='transport plan and distance of a similarity csv')
    ot.add_argument('--sim', required=True, help='similarity csv')
    _solver_arguments(ot)
    _bucket_arguments(ot, allow_none=True)
    ot.add_argument('--out-plan', required=True, help='csv file of the filtered plan')
    ot.add_argument('--out-distance', required=True, help='text file of the mass normalized distance')
    ot.set_defaults(func=run_ot)

    align = commands.add_parser('align', parents=[common], help='realign the clips and captions of a video')
    align.add_argument('--manifest', required=True)
    align.add_argument('--video-id', required=True)
    align.add_argument('--paragraph-id', default=None, help='defaults to the video id')
    align.add_argument('--method', choices=REALIGNMENT_METHODS, default='ot')
    align.add_argument('--strategy', choices=REALIGNMENT_STRATEGIES, default='row_argmax')
    align.add_argument('--threshold', type=float, default=0.0, help='minimum mass of the threshold strategy')
    align.add_argument('--prompt-scope', choices=PROMPT_SCOPES, default='dataset')
    _similarity_arguments(align)
    _solver_arguments(align)
    _bucket_arguments(align)
    align.add_argument('--out', required=True, help='json file of the alignment')
    align.add_argument('--out-plan', default=None, help='csv file of the plan')
    align.set_defaults(func=run_align)

    retrieve = commands.add_parser('retrieve', parents=[common], help='video-paragraph retrieval recall')
    retrieve.add_argument('--manifest', required=True)
    retrieve.add_argument('--measure', default='ot', help='capavg, dtw, otam or ot')
    retrieve.add_argument('--recall', default=','.join(str(k) for k in RECALL_KS), help='comma separated cut-offs')
    retrieve.add_argument('--prompt-scope', choices=PROMPT_SCOPES, default='dataset')
    retrieve.add_argument('--batch-size', type=int, default=None, help='videos per batch of the batch prompt scope')
    retrieve.add_argument('--no-clip-retrieval', action='store_true', help='skip caption to clip recall')
    retrieve.add_argument('--capavg-scope', choices=CAPAVG_SCOPES, default='global')
    retrieve.add_argument('--dtw-normalize', action='store_true', help='divide warping distances by path length')
    retrieve.add_argument('--threads', type=int, default=None, help='worker threads (default NORTON_THREADS or 1)')
    retrieve.add_argument('--record-runtime', action='store_true', help='store the runtime in the report')
    _similarity_arguments(retrieve)
    _solver_arguments(retrieve)
    _bucket_arguments(retrieve)
    retrieve.add_argument('--out', required=True, help='json report')
    retrieve.set_defaults(func=run_retrieve)

    loss = commands.add_parser('loss', parents=[common], help='clip and video losses of a dataset as one batch')
    loss.add_argument('--manifest', required=True)
    loss.add_argument('--tau', type=float, default=TAU)
    loss.add_argument('--beta', type=float, default=BETA)
    loss.add_argument('--lambda', dest='lambda_', type=float, default=LAMBDA)
    loss.add_argument('--epsilon-clip', type=float, default=EPSILON_CLIP)
    loss.add_argument('--epsilon-video', type=float, default=EPSILON_VIDEO)
    loss.add_argument('--check-grad', action='store_true', help='compare gradients with finite differences')
    loss.add_argument('--check-entries', type=int, default=20, help='sampled entries per gradient check')
    loss.add_argument('--seed', type=int, default=0, help='seed of the sampled entries')
    loss.add_argument('--threads', type=int, default=None)
    _similarity_arguments(loss)
    loss.add_argument('--iters', type=int, default=SINKHORN_ITERS, help='sinkhorn iterations')
    _bucket_arguments(loss)
    loss.add_argument('--out', required=True, help='json file')
    loss.set_defaults(func=run_loss)

    oracle = commands.add_parser('oracle-check', parents=[common], help='run the brute force acceptance suites')
    oracle.add_argument('--suite', action='append', choices=list(SUITES), default=None,
                        help='suite to run, repeatable (default all)')
    oracle.add_argument('--seed', type=int, default=0)
    oracle.add_argument('--max-n', type=int, default=ORACLE_MAX_N)
    oracle.add_argument('--out', default=None, help='json file')
    oracle.set_defaults(func=run_oracle_check)

    heatmap = commands.add_parser('heatmap', parents=[common], help='draw a plan csv as a pgm image')
    heatmap.add_argument('--plan', required=True)
    heatmap.add_argument('--out', required=True, help='pgm file')
    heatmap.set_defaults(func=run_heatmap)
    return parser


def _configure_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        return args.func(args)
    except OSError as err:
        print(f'temporalot: {err}', file=sys.stderr)
        return 2
    except (TemporalOTException, ValueError) as err:
        print(f'temporalot: {err}', file=sys.stderr)
        return 1
