import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, TypeVar, Union

import numpy as np

from temporalot.config import THREADS_ENV, CSV_FORMAT
from temporalot.exceptions import ConfigError, TemporalOTValueError

__all__ = ['resolve_threads', 'parallel_map', 'write_csv', 'read_csv', 'pgm_bytes', 'write_pgm', 'write_json',
           'to_json']

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

PathLike = Union[str, os.PathLike]


def resolve_threads(threads: Optional[int] = None) -> int:
    """
    :param threads: explicit worker count. If ``None`` the environment variable ``NORTON_THREADS`` is read; if that is
                    not set either, one worker is used.
    :return: positive worker count
    :rtype: int

    >>> resolve_threads(3)
    3
    """
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw.strip() == '':
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f'{THREADS_ENV} must be a positive integer, got {raw!r}')
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ConfigError(f'threads must be a positive integer, got {threads!r}')
    return threads


def parallel_map(function: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Applies ``function`` to every item. Results keep the order of ``items`` whatever the number of workers.
    """
    items = list(items)
    workers = min(resolve_threads(threads), max(len(items), 1))
    if workers == 1:
        return [function(item) for item in items]
    logger.debug(f'parallel_map: {len(items)} items on {workers} threads')
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, items))


def write_csv(path: PathLike, matrix) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    np.savetxt(path, matrix, fmt=CSV_FORMAT, delimiter=',')


def read_csv(path: PathLike) -> np.ndarray:
    """
    Reads a comma separated real matrix.

    :raises TemporalOTValueError: if the file is empty, ragged, non numeric or contains non finite values.
    """
    text = Path(path).read_text()
    if not text.strip():
        raise TemporalOTValueError(f'{path} is empty.')
    try:
        matrix = np.loadtxt(text.splitlines(), delimiter=',', ndmin=2, dtype=np.float64)
    except ValueError as err:
        raise TemporalOTValueError(f'{path} is not a numeric csv matrix: {err}')
    if matrix.size == 0:
        raise TemporalOTValueError(f'{path} is empty.')
    if not np.all(np.isfinite(matrix)):
        raise TemporalOTValueError(f'{path} contains non finite values.')
    return matrix


def pgm_bytes(matrix) -> bytes:
    """
    Binary PGM (P5) with one pixel per cell. Values are min-max scaled to 0-255; a constant matrix is drawn as 128.

    >>> pgm_bytes([[1, 0], [0, 1]])[-4:]
    b'\\xff\\x00\\x00\\xff'
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.size == 0:
        raise TemporalOTValueError('cannot draw an empty matrix.')
    low, high = matrix.min(), matrix.max()
    if high == low:
        pixels = np.full(matrix.shape, 128, dtype=np.uint8)
    else:
        pixels = np.rint((matrix - low) / (high - low) * 255).astype(np.uint8)
    height, width = matrix.shape
    return f'P5\n{width} {height}\n255\n'.encode('ascii') + pixels.tobytes()


def write_pgm(path: PathLike, matrix) -> None:
    data = pgm_bytes(matrix)
    with open(path, 'wb') as f:
        f.write(data)


def to_json(obj) -> str:
    return json.dumps(obj, indent=2) + '\n'


def write_json(path: PathLike, obj) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(to_json(obj))
