"""
Data model shared by all modules: token matrices read from NRTN blobs, clips and captions paired by timestamps,
videos, datasets, marginals, similarity matrices and transport plans.

All types are immutable after construction. Arrays handed out by their properties are read-only views.
"""
import json
import logging
import math
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from temporalot.config import TOKEN_FILE_MAGIC, TOKEN_FILE_HEADER, TOKEN_FILE_DTYPE, TOKEN_FILE_MAX_VALUES, \
    MARGINAL_SUM_TOLERANCE
from temporalot.exceptions import TokenFileBadMagicError, TokenFileTruncatedError, TokenFileOverflowError, \
    TokenFileCorruptHeaderError, TokenFileError, TokenMatrixZeroRowError, DimensionMismatchError, ManifestError, \
    MissingTokenFileError, TimestampOrderError, UnknownVideoIdError, MarginalsError, NonFiniteValueError, \
    ShapeMismatchError, NegativePlanEntryError, DatasetException, TemporalOTValueError
from temporalot.util import PathLike

__all__ = ['TokenMatrix', 'ClipRecord', 'VideoDocument', 'Dataset', 'Marginals', 'SimilarityMatrix',
           'TransportPlan', 'as_matrix', 'load_token_matrix', 'save_token_matrix', 'l2_normalize_rows',
           'load_dataset', 'write_manifest', 'token_list']

logger = logging.getLogger(__name__)

_HEADER_SIZE = struct.calcsize(TOKEN_FILE_HEADER)


def _read_only(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def as_matrix(value, name: str = 'matrix') -> np.ndarray:
    """
    :param value: :obj:`SimilarityMatrix`, :obj:`TransportPlan`, ``AugmentedSimilarity`` or anything numpy can turn
                  into a two dimensional real array.
    :return: float64 two dimensional array (not copied if it already is one)
    """
    values = getattr(value, 'values', value)
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeMismatchError(f'{name} must be two dimensional, got shape {array.shape}')
    return array


class TokenMatrix:
    """
    A sequence of embedding rows: the frames of a clip or the words of a caption.

    Values are kept in float32, the precision of the token blobs, so that saving and loading is lossless. Use
    :obj:`as_float64` for computations.

    >>> TokenMatrix([[3, 4]]).rows, TokenMatrix([[3, 4]]).dim
    (1, 2)
    """

    def __init__(self, values, normalized: bool = False):
        array = np.array(values, dtype=np.float32, order='C', ndmin=2)
        if array.ndim != 2:
            raise ShapeMismatchError(f'TokenMatrix values must be two dimensional, got shape {array.shape}')
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise ShapeMismatchError(f'TokenMatrix needs at least one row and one column, got shape {array.shape}')
        if not np.all(np.isfinite(array)):
            raise NonFiniteValueError('TokenMatrix values must be finite.')
        self._values = _read_only(array)
        self._float64 = None
        self._normalized = bool(normalized)

    def __repr__(self):
        return f'TokenMatrix(rows={self.rows}, dim={self.dim}, normalized={self.normalized})'

    def __len__(self):
        return self.rows

    @property
    def rows(self) -> int:
        return self._values.shape[0]

    @property
    def dim(self) -> int:
        return self._values.shape[1]

    @property
    def values(self) -> np.ndarray:
        """
        :rtype: read-only float32 array of shape (rows, dim)
        """
        return self._values

    @property
    def normalized(self) -> bool:
        """
        ``True`` if this matrix has been produced by :obj:`l2_normalize_rows`.
        """
        return self._normalized

    def as_float64(self) -> np.ndarray:
        if self._float64 is None:
            self._float64 = _read_only(self._values.astype(np.float64))
        return self._float64


def load_token_matrix(path: PathLike) -> TokenMatrix:
    """
    Reads a NRTN v1 blob: ``b'NRTN'``, uint32 row count, uint32 dim (little-endian), then rows * dim little-endian
    float32 values in row-major order.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER_SIZE:
        if len(data) >= 4 and data[:4] != TOKEN_FILE_MAGIC:
            raise TokenFileBadMagicError(path, data[:4])
        raise TokenFileCorruptHeaderError(f'corrupt header in {path}: {len(data)} bytes, header needs {_HEADER_SIZE}')
    magic, rows, dim = struct.unpack_from(TOKEN_FILE_HEADER, data)
    if magic != TOKEN_FILE_MAGIC:
        raise TokenFileBadMagicError(path, magic)
    if rows == 0 or dim == 0:
        raise TokenFileCorruptHeaderError(f'corrupt header in {path}: rows={rows}, dim={dim}')
    if rows * dim > TOKEN_FILE_MAX_VALUES:
        raise TokenFileOverflowError(f'rows*dim overflow in {path}: {rows}*{dim} exceeds {TOKEN_FILE_MAX_VALUES}')
    expected = rows * dim * 4
    payload = data[_HEADER_SIZE:]
    if len(payload) < expected:
        raise TokenFileTruncatedError(
            f'truncated token file {path}: header claims {rows}x{dim} ({expected} bytes), payload has {len(payload)}')
    if len(payload) > expected:
        raise TokenFileError(f'trailing bytes in token file {path}: {len(payload) - expected} after payload')
    values = np.frombuffer(payload, dtype=TOKEN_FILE_DTYPE, count=rows * dim).reshape(rows, dim)
    try:
        return TokenMatrix(values)
    except NonFiniteValueError:
        raise NonFiniteValueError(f'token file {path} contains non finite values')


def save_token_matrix(path: PathLike, tokens: TokenMatrix) -> None:
    header = struct.pack(TOKEN_FILE_HEADER, TOKEN_FILE_MAGIC, tokens.rows, tokens.dim)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(tokens.values.astype(TOKEN_FILE_DTYPE).tobytes(order='C'))


def l2_normalize_rows(tokens: TokenMatrix) -> TokenMatrix:
    """
    Scales each row to unit Euclidean norm. Normalized input is returned unchanged.

    >>> l2_normalize_rows(TokenMatrix([[3, 4]])).values.tolist()
    [[0.6000000238418579, 0.800000011920929]]
    """
    if tokens.normalized:
        return tokens
    values = tokens.as_float64()
    norms = np.linalg.norm(values, axis=1)
    zero_rows = np.flatnonzero(norms == 0)
    if zero_rows.size:
        raise TokenMatrixZeroRowError(int(zero_rows[0]))
    return TokenMatrix(values / norms[:, None], normalized=True)


class ClipRecord:
    """
    A clip and the caption originally paired with it by its timestamps.
    """

    def __init__(self, clip_tokens: TokenMatrix, caption_tokens: TokenMatrix, start_s: float, end_s: float):
        if clip_tokens.dim != caption_tokens.dim:
            raise DimensionMismatchError(
                f'dimension mismatch between clip ({clip_tokens.dim}) and caption ({caption_tokens.dim})')
        start_s, end_s = float(start_s), float(end_s)
        if not (math.isfinite(start_s) and math.isfinite(end_s)) or start_s >= end_s:
            raise TimestampOrderError(f'clip span must satisfy start_s < end_s, got [{start_s}, {end_s}]')
        self._clip_tokens = clip_tokens
        self._caption_tokens = caption_tokens
        self._start_s = start_s
        self._end_s = end_s

    def __repr__(self):
        return f'ClipRecord([{self.start_s}, {self.end_s}], frames={self.clip_tokens.rows}, ' \
               f'words={self.caption_tokens.rows})'

    @property
    def clip_tokens(self) -> TokenMatrix:
        return self._clip_tokens

    @property
    def caption_tokens(self) -> TokenMatrix:
        return self._caption_tokens

    @property
    def start_s(self) -> float:
        return self._start_s

    @property
    def end_s(self) -> float:
        return self._end_s

    @property
    def dim(self) -> int:
        return self._clip_tokens.dim


class VideoDocument:
    """
    A video as an ordered list of :obj:`ClipRecord`. Its captions in clip order form the video's paragraph.
    """

    def __init__(self, id: str, clips: Sequence[ClipRecord]):
        clips = tuple(clips)
        if not clips:
            raise DatasetException(f'video {id!r} has no clips.')
        dims = {clip.dim for clip in clips}
        if len(dims) > 1:
            raise DimensionMismatchError(f'dimension mismatch inside video {id!r}: {sorted(dims)}')
        for previous, current in zip(clips, clips[1:]):
            if not current.start_s > previous.start_s:
                raise TimestampOrderError(
                    f'non-monotone timestamps in video {id!r}: {current.start_s} follows {previous.start_s}')
        self._id = str(id)
        self._clips = clips

    def __repr__(self):
        return f'VideoDocument({self.id!r}, clips={len(self.clips)})'

    def __len__(self):
        return len(self._clips)

    @property
    def id(self) -> str:
        return self._id

    @property
    def clips(self) -> tuple:
        return self._clips

    @property
    def dim(self) -> int:
        return self._clips[0].dim

    @property
    def clip_tokens(self) -> List[TokenMatrix]:
        return [clip.clip_tokens for clip in self._clips]

    @property
    def caption_tokens(self) -> List[TokenMatrix]:
        """
        The paragraph of this video: its captions in timestamp order.
        """
        return [clip.caption_tokens for clip in self._clips]

    def diagonal(self, cfg=None) -> np.ndarray:
        """
        Similarities of the originally aligned pairs, clip ``a`` with caption ``a``: the pool from which prompt values
        are estimated.

        :param cfg: a :obj:`~temporalot.similarity.SimilarityConfig`, fine grained by default
        """
        from temporalot.similarity import clip_caption_matrix
        return np.diag(clip_caption_matrix(self, self, cfg).values).copy()


class Dataset:
    def __init__(self, videos: Sequence[VideoDocument], dim: Optional[int] = None):
        videos = tuple(videos)
        if not videos:
            raise DatasetException('a dataset needs at least one video.')
        if dim is None:
            dim = videos[0].dim
        for video in videos:
            if video.dim != dim:
                raise DimensionMismatchError(f'dimension mismatch: video {video.id!r} has dim {video.dim}, '
                                             f'dataset has dim {dim}')
        ids = [video.id for video in videos]
        if len(set(ids)) != len(ids):
            raise DatasetException(f'video ids must be unique: {ids}')
        self._videos = videos
        self._dim = int(dim)
        self._index = {video_id: index for index, video_id in enumerate(ids)}

    def __repr__(self):
        return f'Dataset(videos={len(self.videos)}, dim={self.dim})'

    def __len__(self):
        return len(self._videos)

    def __iter__(self):
        return iter(self._videos)

    @property
    def videos(self) -> tuple:
        return self._videos

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def ids(self) -> List[str]:
        return [video.id for video in self._videos]

    @property
    def n_clips(self) -> int:
        return sum(len(video) for video in self._videos)

    def index_of(self, video_id: str) -> int:
        try:
            return self._index[video_id]
        except KeyError:
            raise UnknownVideoIdError(video_id)

    def get_video(self, video_id: str) -> VideoDocument:
        return self._videos[self.index_of(video_id)]


class Marginals:
    """
    Row weights ``mu`` and column weights ``nu`` of a transport problem. Both are nonnegative and sum to one.
    """

    def __init__(self, mu, nu):
        mu = np.array(mu, dtype=np.float64, ndmin=1)
        nu = np.array(nu, dtype=np.float64, ndmin=1)
        for name, weights in (('mu', mu), ('nu', nu)):
            if weights.ndim != 1 or weights.size == 0:
                raise MarginalsError(f'{name} must be a nonempty vector.')
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise MarginalsError(f'{name} entries must be finite and nonnegative.')
            if abs(weights.sum() - 1) > MARGINAL_SUM_TOLERANCE:
                raise MarginalsError(f'{name} must sum to 1, sums to {weights.sum()!r}')
        self._mu = _read_only(mu)
        self._nu = _read_only(nu)

    def __repr__(self):
        return f'Marginals(n={self.n}, m={self.m})'

    @property
    def mu(self) -> np.ndarray:
        return self._mu

    @property
    def nu(self) -> np.ndarray:
        return self._nu

    @property
    def n(self) -> int:
        return self._mu.size

    @property
    def m(self) -> int:
        return self._nu.size


class SimilarityMatrix:
    """
    n x m clip-caption similarities.
    """

    def __init__(self, values):
        array = np.array(values, dtype=np.float64, ndmin=2)
        if array.ndim != 2 or array.size == 0:
            raise ShapeMismatchError(f'SimilarityMatrix must be a nonempty two dimensional matrix, got {array.shape}')
        if not np.all(np.isfinite(array)):
            raise NonFiniteValueError('SimilarityMatrix values must be finite.')
        self._values = _read_only(array)

    def __repr__(self):
        return f'SimilarityMatrix({self.n}x{self.m})'

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> tuple:
        return self._values.shape

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def m(self) -> int:
        return self._values.shape[1]


class TransportPlan:
    """
    Nonnegative n x m plan with the marginals it was solved for and the regularization strength used.
    """

    def __init__(self, values, marginals: Marginals, epsilon: float):
        array = np.array(values, dtype=np.float64, ndmin=2)
        if array.shape != (marginals.n, marginals.m):
            raise ShapeMismatchError(f'plan shape {array.shape} does not match marginals ({marginals.n}, {marginals.m})')
        if not np.all(np.isfinite(array)):
            raise NonFiniteValueError('TransportPlan values must be finite.')
        if np.any(array < 0):
            raise NegativePlanEntryError('TransportPlan values must be nonnegative.')
        self._values = _read_only(array)
        self._marginals = marginals
        self._epsilon = float(epsilon)

    def __repr__(self):
        return f'TransportPlan({self.n}x{self.m}, epsilon={self.epsilon})'

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def marginals(self) -> Marginals:
        return self._marginals

    @property
    def epsilon(self) -> float:
        return self._epsilon

    @property
    def shape(self) -> tuple:
        return self._values.shape

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def m(self) -> int:
        return self._values.shape[1]

    def marginal_errors(self) -> tuple:
        """
        :return: (L-inf row marginal violation, L-inf column marginal violation)
        """
        row_error = float(np.max(np.abs(self._values.sum(axis=1) - self._marginals.mu)))
        column_error = float(np.max(np.abs(self._values.sum(axis=0) - self._marginals.nu)))
        return row_error, column_error


def _require(entry: dict, key: str, types, where: str):
    try:
        value = entry[key]
    except (KeyError, TypeError):
        raise ManifestError(f'corrupt manifest: {where} has no {key!r}')
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ManifestError(f'corrupt manifest: {where}.{key} has wrong type')
    if not isinstance(value, types):
        raise ManifestError(f'corrupt manifest: {where}.{key} has wrong type {type(value).__name__}')
    return value


def load_dataset(manifest_path: PathLike) -> Dataset:
    """
    Reads a JSON manifest ``{"dim": int, "normalize": bool, "videos": [{"id": str, "clips": [{"clip": path,
    "caption": path, "start_s": float, "end_s": float}]}]}``. Token paths are relative to the manifest's directory.
    Rows are normalized if the manifest's ``normalize`` flag is set.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as err:
        raise ManifestError(f'corrupt manifest {manifest_path}: {err}')
    if not isinstance(manifest, dict):
        raise ManifestError(f'corrupt manifest {manifest_path}: top level must be an object')
    dim = _require(manifest, 'dim', int, 'manifest')
    normalize = _require(manifest, 'normalize', bool, 'manifest')
    video_entries = _require(manifest, 'videos', list, 'manifest')
    if dim < 1:
        raise ManifestError(f'corrupt manifest: dim must be positive, got {dim}')
    root = manifest_path.parent

    def _load(relative_path):
        path = root / relative_path
        if not path.is_file():
            raise MissingTokenFileError(path)
        tokens = load_token_matrix(path)
        if tokens.dim != dim:
            raise DimensionMismatchError(f'dimension mismatch: {path} has dim {tokens.dim}, manifest declares {dim}')
        return l2_normalize_rows(tokens) if normalize else tokens

    videos = []
    for video_index, video_entry in enumerate(video_entries):
        where = f'videos[{video_index}]'
        video_id = _require(video_entry, 'id', str, where)
        clip_entries = _require(video_entry, 'clips', list, where)
        clips = []
        for clip_index, clip_entry in enumerate(clip_entries):
            clip_where = f'{where}.clips[{clip_index}]'
            clips.append(ClipRecord(_load(_require(clip_entry, 'clip', str, clip_where)),
                                    _load(_require(clip_entry, 'caption', str, clip_where)),
                                    _require(clip_entry, 'start_s', (int, float), clip_where),
                                    _require(clip_entry, 'end_s', (int, float), clip_where)))
        videos.append(VideoDocument(video_id, clips))
    dataset = Dataset(videos, dim=dim)
    logger.info(f'loaded {manifest_path}: {len(dataset)} videos, {dataset.n_clips} clips, dim {dim}')
    return dataset


def write_manifest(dataset: Dataset, directory: PathLike, normalize: bool = False,
                   name: str = 'manifest.json') -> Path:
    """
    Writes every token matrix of ``dataset`` as a NRTN blob into ``directory`` together with a manifest that
    :obj:`load_dataset` reads back.

    :return: path of the manifest
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    video_entries = []
    for video_index, video in enumerate(dataset.videos):
        clip_entries = []
        for clip_index, clip in enumerate(video.clips):
            stem = f'v{video_index:04d}_c{clip_index:04d}'
            save_token_matrix(directory / f'{stem}_clip.nrtn', clip.clip_tokens)
            save_token_matrix(directory / f'{stem}_caption.nrtn', clip.caption_tokens)
            clip_entries.append({'clip': f'{stem}_clip.nrtn', 'caption': f'{stem}_caption.nrtn',
                                 'start_s': clip.start_s, 'end_s': clip.end_s})
        video_entries.append({'id': video.id, 'clips': clip_entries})
    manifest_path = directory / name
    manifest_path.write_text(json.dumps({'dim': dataset.dim, 'normalize': bool(normalize), 'videos': video_entries},
                                        indent=2), encoding='utf-8')
    return manifest_path


def token_list(value: Union[VideoDocument, Sequence[TokenMatrix]], captions: bool) -> List[TokenMatrix]:
    if isinstance(value, VideoDocument):
        return value.caption_tokens if captions else value.clip_tokens
    tokens = list(value)
    for token_matrix in tokens:
        if not isinstance(token_matrix, TokenMatrix):
            raise TemporalOTValueError(f'expected TokenMatrix, got {type(token_matrix).__name__}')
    return tokens
