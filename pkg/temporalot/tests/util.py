import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from temporalot.core import TokenMatrix, ClipRecord, VideoDocument, Dataset, l2_normalize_rows, write_manifest


def unit_tokens(rng, rows, dim):
    return l2_normalize_rows(TokenMatrix(rng.standard_normal((rows, dim))))


def make_video(video_id, clip_rows, caption_rows=None, dim=4, seed=0, start=0.0, length=8.0):
    """
    Video of ``len(clip_rows)`` clips with random unit tokens. ``clip_rows`` and ``caption_rows`` give the number of
    frames and words of every clip.
    """
    rng = np.random.default_rng(seed)
    if caption_rows is None:
        caption_rows = clip_rows
    clips = []
    for index, (frames, words) in enumerate(zip(clip_rows, caption_rows)):
        clips.append(ClipRecord(unit_tokens(rng, frames, dim), unit_tokens(rng, words, dim),
                                start + index * length, start + (index + 1) * length))
    return VideoDocument(video_id, clips)


def make_dataset(n_videos=3, n_clips=3, dim=4, seed=0, rows=2):
    return Dataset([make_video(f'video{index}', [rows] * n_clips, dim=dim, seed=seed + index)
                    for index in range(n_videos)])


def single_token_video(video_id, vectors, caption_vectors=None):
    if caption_vectors is None:
        caption_vectors = vectors
    clips = [ClipRecord(TokenMatrix([clip]), TokenMatrix([caption]), index, index + 1)
             for index, (clip, caption) in enumerate(zip(vectors, caption_vectors))]
    return VideoDocument(video_id, clips)


class TempDirTestCase(TestCase):
    def setUp(self):
        self._tempdir = tempfile.TemporaryDirectory()
        self.path = Path(self._tempdir.name)

    def tearDown(self):
        self._tempdir.cleanup()

    def write_dataset(self, dataset, name='data', normalize=False):
        return write_manifest(dataset, self.path / name, normalize=normalize)
