import json
import struct

import numpy as np

from temporalot.config import NORM_TOLERANCE
from temporalot.core import TokenMatrix, ClipRecord, VideoDocument, Dataset, Marginals, TransportPlan, \
    SimilarityMatrix, load_token_matrix, save_token_matrix, l2_normalize_rows, load_dataset, write_manifest, \
    token_list, as_matrix
from temporalot.exceptions import TokenFileBadMagicError, TokenFileTruncatedError, TokenFileOverflowError, \
    TokenFileCorruptHeaderError, TokenFileError, TokenMatrixZeroRowError, DimensionMismatchError, ManifestError, \
    MissingTokenFileError, TimestampOrderError, UnknownVideoIdError, MarginalsError, NonFiniteValueError, \
    ShapeMismatchError, NegativePlanEntryError, DatasetException, TemporalOTValueError
from temporalot.tests.util import TempDirTestCase, make_video, make_dataset


def _blob(magic=b'NRTN', rows=1, dim=2, values=(1.0, 2.0)):
    return struct.pack('<4sII', magic, rows, dim) + struct.pack(f'<{len(values)}f', *values)


class TestTokenFiles(TempDirTestCase):
    def _write(self, data, name='tokens.nrtn'):
        path = self.path / name
        path.write_bytes(data)
        return path

    def test_load(self):
        tokens = load_token_matrix(self._write(_blob(rows=2, dim=2, values=(1, 2, 3, 4))))
        assert (tokens.rows, tokens.dim) == (2, 2)
        assert tokens.values.tolist() == [[1, 2], [3, 4]]
        assert tokens.values.dtype == np.float32

    def test_save_and_load_is_lossless(self):
        values = np.random.default_rng(1).standard_normal((3, 5)).astype(np.float32)
        path = self.path / 'saved.nrtn'
        save_token_matrix(path, TokenMatrix(values))
        assert path.read_bytes()[:4] == b'NRTN'
        assert len(path.read_bytes()) == 12 + 3 * 5 * 4
        np.testing.assert_array_equal(load_token_matrix(path).values, values)

    def test_bad_magic(self):
        with self.assertRaises(TokenFileBadMagicError) as err:
            load_token_matrix(self._write(_blob(magic=b'XXXX')))
        assert 'bad magic' in str(err.exception)

    def test_truncated(self):
        with self.assertRaises(TokenFileTruncatedError) as err:
            load_token_matrix(self._write(_blob(rows=2, dim=2, values=(1, 2, 3))))
        assert 'truncated' in str(err.exception)

    def test_trailing_bytes(self):
        with self.assertRaises(TokenFileError) as err:
            load_token_matrix(self._write(_blob(rows=1, dim=2, values=(1, 2, 3))))
        assert 'trailing bytes' in str(err.exception)

    def test_overflow(self):
        with self.assertRaises(TokenFileOverflowError) as err:
            load_token_matrix(self._write(struct.pack('<4sII', b'NRTN', 2 ** 31, 4)))
        assert 'overflow' in str(err.exception)

    def test_corrupt_header(self):
        with self.assertRaises(TokenFileCorruptHeaderError):
            load_token_matrix(self._write(b'NRTN\x01\x00'))
        with self.assertRaises(TokenFileCorruptHeaderError):
            load_token_matrix(self._write(_blob(rows=0, dim=2, values=())))

    def test_non_finite_values(self):
        with self.assertRaises(NonFiniteValueError):
            load_token_matrix(self._write(_blob(values=(1.0, float('nan')))))

    def test_token_file_errors_are_value_errors(self):
        with self.assertRaises(ValueError):
            load_token_matrix(self._write(_blob(magic=b'ABCD')))


class TestTokenMatrix(TempDirTestCase):
    def test_values_are_read_only(self):
        tokens = TokenMatrix([[1, 2]])
        with self.assertRaises(ValueError):
            tokens.values[0, 0] = 5
        assert tokens.as_float64().dtype == np.float64

    def test_shape(self):
        with self.assertRaises(ShapeMismatchError):
            TokenMatrix(np.zeros((0, 3)))
        with self.assertRaises(ShapeMismatchError):
            TokenMatrix(np.zeros((2, 2, 2)))

    def test_normalize(self):
        tokens = l2_normalize_rows(TokenMatrix([[3, 4], [0, 2]]))
        assert tokens.normalized
        np.testing.assert_allclose(np.linalg.norm(tokens.as_float64(), axis=1), 1, atol=NORM_TOLERANCE)
        np.testing.assert_allclose(tokens.values, [[0.6, 0.8], [0, 1]], atol=1e-7)

    def test_normalize_is_idempotent(self):
        tokens = l2_normalize_rows(TokenMatrix(np.random.default_rng(0).standard_normal((4, 6))))
        assert l2_normalize_rows(tokens) is tokens
        np.testing.assert_allclose(l2_normalize_rows(TokenMatrix(tokens.values)).values, tokens.values, atol=1e-7)

    def test_zero_row(self):
        with self.assertRaises(TokenMatrixZeroRowError) as err:
            l2_normalize_rows(TokenMatrix([[1, 0], [0, 0]]))
        assert 'zero row' in str(err.exception)
        assert 'index 1' in str(err.exception)


class TestDocuments(TempDirTestCase):
    def test_clip_record(self):
        with self.assertRaises(DimensionMismatchError):
            ClipRecord(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0, 0]]), 0, 1)
        with self.assertRaises(TimestampOrderError):
            ClipRecord(TokenMatrix([[1, 0]]), TokenMatrix([[1, 0]]), 1, 1)

    def test_video_order(self):
        video = make_video('a', [1, 2, 3])
        assert len(video) == 3
        assert [tokens.rows for tokens in video.clip_tokens] == [1, 2, 3]
        assert len(video.caption_tokens) == 3
        clips = list(video.clips)
        with self.assertRaises(TimestampOrderError) as err:
            VideoDocument('b', [clips[1], clips[0]])
        assert 'non-monotone' in str(err.exception)
        with self.assertRaises(DatasetException):
            VideoDocument('c', [])

    def test_dataset(self):
        dataset = make_dataset(n_videos=3, n_clips=2)
        assert len(dataset) == 3
        assert dataset.ids == ['video0', 'video1', 'video2']
        assert dataset.n_clips == 6
        assert dataset.index_of('video2') == 2
        assert dataset.get_video('video1').id == 'video1'
        with self.assertRaises(UnknownVideoIdError) as err:
            dataset.get_video('bogus')
        assert 'bogus' in str(err.exception)
        with self.assertRaises(DatasetException):
            Dataset([make_video('a', [1]), make_video('a', [1])])
        with self.assertRaises(DimensionMismatchError):
            Dataset([make_video('a', [1], dim=4), make_video('b', [1], dim=8)])

    def test_diagonal(self):
        from temporalot.similarity import SimilarityConfig, clip_caption_matrix
        video = make_video('a', [1, 2, 3])
        for mode in ('fine_grained', 'mean_pool'):
            cfg = SimilarityConfig(mode=mode)
            diagonal = video.diagonal(cfg)
            assert diagonal.shape == (3,)
            assert diagonal.tolist() == np.diag(clip_caption_matrix(video, video, cfg).values).tolist()
        np.testing.assert_array_equal(video.diagonal(), video.diagonal(SimilarityConfig()))

    def test_token_list(self):
        video = make_video('a', [1, 2])
        assert token_list(video, captions=False) == video.clip_tokens
        assert token_list(video, captions=True) == video.caption_tokens
        with self.assertRaises(TemporalOTValueError):
            token_list([np.zeros((1, 2))], captions=True)


class TestMatrices(TempDirTestCase):
    def test_marginals(self):
        marginals = Marginals([0.5, 0.5], [1.0])
        assert (marginals.n, marginals.m) == (2, 1)
        with self.assertRaises(MarginalsError):
            Marginals([0.5, 0.4], [1.0])
        with self.assertRaises(MarginalsError):
            Marginals([1.5, -0.5], [1.0])
        with self.assertRaises(MarginalsError):
            Marginals([], [1.0])

    def test_transport_plan(self):
        plan = TransportPlan([[0.5, 0.0], [0.0, 0.5]], Marginals([0.5, 0.5], [0.5, 0.5]), 0.1)
        assert plan.marginal_errors() == (0.0, 0.0)
        with self.assertRaises(NegativePlanEntryError):
            TransportPlan([[0.6, -0.1], [0.0, 0.5]], Marginals([0.5, 0.5], [0.5, 0.5]), 0.1)
        with self.assertRaises(ShapeMismatchError):
            TransportPlan([[1.0]], Marginals([0.5, 0.5], [1.0]), 0.1)

    def test_similarity_matrix(self):
        S = SimilarityMatrix([[1, 2, 3]])
        assert (S.n, S.m) == (1, 3)
        assert as_matrix(S) is S.values
        with self.assertRaises(NonFiniteValueError):
            SimilarityMatrix([[np.inf]])
        with self.assertRaises(ShapeMismatchError):
            as_matrix([1, 2, 3])


class TestManifest(TempDirTestCase):
    def test_write_and_load(self):
        dataset = make_dataset(n_videos=2, n_clips=3, dim=4)
        loaded = load_dataset(self.write_dataset(dataset))
        assert loaded.ids == dataset.ids
        assert loaded.dim == 4
        for original, video in zip(dataset, loaded):
            assert [clip.start_s for clip in video.clips] == [clip.start_s for clip in original.clips]
            for a, b in zip(original.clip_tokens + original.caption_tokens, video.clip_tokens + video.caption_tokens):
                np.testing.assert_array_equal(a.values, b.values)

    def test_manifest_example(self):
        video = make_video('only', [2, 2], dim=4)
        loaded = load_dataset(self.write_dataset(Dataset([video])))
        assert (len(loaded), loaded.dim, len(loaded.videos[0].clips)) == (1, 4, 2)

    def test_normalize_flag(self):
        video = VideoDocument('a', [ClipRecord(TokenMatrix([[3, 4]]), TokenMatrix([[0, 2]]), 0, 1)])
        loaded = load_dataset(self.write_dataset(Dataset([video]), normalize=True))
        assert loaded.videos[0].clips[0].clip_tokens.normalized
        np.testing.assert_allclose(loaded.videos[0].clip_tokens[0].values, [[0.6, 0.8]], atol=1e-7)
        raw = load_dataset(self.write_dataset(Dataset([video]), name='raw'))
        assert raw.videos[0].clip_tokens[0].values.tolist() == [[3, 4]]

    def test_missing_token_file(self):
        manifest = self.write_dataset(make_dataset(n_videos=1, n_clips=1))
        (manifest.parent / 'v0000_c0000_caption.nrtn').unlink()
        with self.assertRaises(MissingTokenFileError) as err:
            load_dataset(manifest)
        assert 'missing token file' in str(err.exception)
        with self.assertRaises(FileNotFoundError):
            load_dataset(manifest)

    def test_dimension_mismatch(self):
        manifest = self.write_dataset(make_dataset(n_videos=1, n_clips=2, dim=4))
        save_token_matrix(manifest.parent / 'v0000_c0001_clip.nrtn', TokenMatrix(np.ones((2, 8))))
        with self.assertRaises(DimensionMismatchError) as err:
            load_dataset(manifest)
        assert 'dimension mismatch' in str(err.exception)

    def test_corrupt_manifest(self):
        path = self.path / 'manifest.json'
        path.write_text('{not json')
        with self.assertRaises(ManifestError):
            load_dataset(path)
        path.write_text(json.dumps({'dim': 4, 'normalize': 1, 'videos': []}))
        with self.assertRaises(ManifestError):
            load_dataset(path)
        path.write_text(json.dumps({'dim': 4, 'normalize': False, 'videos': [{'id': 'a'}]}))
        with self.assertRaises(ManifestError):
            load_dataset(path)

    def test_non_monotone_timestamps(self):
        manifest = self.write_dataset(make_dataset(n_videos=1, n_clips=2))
        data = json.loads(manifest.read_text())
        data['videos'][0]['clips'][1]['start_s'] = 0.0
        data['videos'][0]['clips'][1]['end_s'] = 4.0
        manifest.write_text(json.dumps(data))
        with self.assertRaises(TimestampOrderError):
            load_dataset(manifest)
