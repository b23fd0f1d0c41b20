"""
Seeded synthetic datasets.

:obj:`generate_noisy_benchmark` plants noisy correspondence in Gaussian cluster embeddings. Every video has a topic
and every clip shows one step of it. Tokens of a clip and of the caption describing the same step are noisy copies of
``0.6 topic + 0.8 step``, so that pooled clip-caption similarities are about 0.8 for the same step, about 0.3 for
another step of the same topic and about 0 for unrelated tokens. The paragraph of every video swaps one pair of
adjacent captions and replaces two further captions by random noise tokens.

Videos come in pairs: the second video of a pair shows the steps of the first in the order of the first video's
paragraph, with one step exchanged for a new step of the same topic. An order preserving measure therefore prefers
the second video when queried with the first paragraph, while transport still finds the true video.
These sibling hard negatives are an addition to planting noise in independent videos.
"""
import logging
from typing import List, Tuple

import numpy as np

from temporalot.core import TokenMatrix, ClipRecord, VideoDocument, Dataset, l2_normalize_rows
from temporalot.exceptions import ConfigError

__all__ = ['BenchmarkTruth', 'generate_noisy_benchmark', 'self_copy_dataset']

logger = logging.getLogger(__name__)

TOPIC_WEIGHT = 0.6
STEP_WEIGHT = 0.8
NOISE_WEIGHT = 0.5
CLIP_SECONDS = 8.0


class BenchmarkTruth:
    """
    Planted correspondence of one video: the (clip, caption) pairs that describe the same step, the captions that are
    pure noise and the position of the swapped caption pair.
    """

    def __init__(self, video_id: str, planted_pairs: List[Tuple[int, int]], noise_captions: List[int], swap: int):
        self.video_id = video_id
        self.planted_pairs = planted_pairs
        self.noise_captions = noise_captions
        self.swap = swap

    def __repr__(self):
        return f'BenchmarkTruth({self.video_id!r}, planted_pairs={self.planted_pairs}, ' \
               f'noise_captions={self.noise_captions})'


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    vector = rng.standard_normal(dim)
    return vector / np.linalg.norm(vector)


def _tokens(rng: np.random.Generator, centre: np.ndarray, count: int) -> TokenMatrix:
    dim = centre.size
    values = centre[None, :] + NOISE_WEIGHT * rng.standard_normal((count, dim)) / np.sqrt(dim)
    return l2_normalize_rows(TokenMatrix(values))


def _noise_tokens(rng: np.random.Generator, dim: int, count: int) -> TokenMatrix:
    return l2_normalize_rows(TokenMatrix(rng.standard_normal((count, dim))))


def _paragraph(rng: np.random.Generator, steps: List[int], n_noise: int) -> Tuple[List[int], List[int], int]:
    """
    :return: (step shown by every caption position or -1 for noise, noise positions, swap position)
    """
    n_clips = len(steps)
    swap = int(rng.integers(0, n_clips - 1))
    order = list(range(n_clips))
    order[swap], order[swap + 1] = order[swap + 1], order[swap]
    free = [position for position in range(n_clips) if position not in (swap, swap + 1)]
    noise = sorted(int(position) for position in rng.choice(free, size=min(n_noise, len(free)), replace=False))
    described = [-1 if position in noise else order[position] for position in range(n_clips)]
    return described, noise, swap


def _video(rng, video_id, topic, step_centres, steps, tokens_per_clip, tokens_per_caption, n_noise, dim):
    clip_tokens = [_tokens(rng, TOPIC_WEIGHT * topic + STEP_WEIGHT * step_centres[step], tokens_per_clip)
                   for step in steps]
    described, noise, swap = _paragraph(rng, steps, n_noise)
    clips, planted = [], []
    for position, clip_index in enumerate(described):
        if clip_index < 0:
            caption = _noise_tokens(rng, dim, tokens_per_caption)
        else:
            caption = _tokens(rng, TOPIC_WEIGHT * topic + STEP_WEIGHT * step_centres[steps[clip_index]],
                              tokens_per_caption)
            planted.append((clip_index, position))
        clips.append(ClipRecord(clip_tokens[position], caption, position * CLIP_SECONDS,
                                (position + 1) * CLIP_SECONDS))
    truth = BenchmarkTruth(video_id, sorted(planted), noise, swap)
    return VideoDocument(video_id, clips), truth, described, clip_tokens


def generate_noisy_benchmark(n_videos: int = 50, n_clips: int = 8, dim: int = 32, seed: int = 7,
                             tokens_per_clip: int = 4, tokens_per_caption: int = 4,
                             n_noise: int = 2) -> Tuple[Dataset, List[BenchmarkTruth]]:
    """
    :return: the dataset and the planted truth of every video
    """
    if n_clips < 4:
        raise ConfigError(f'the benchmark needs at least 4 clips per video, got {n_clips}')
    rng = np.random.default_rng(seed)
    videos, truths = [], []
    while len(videos) < n_videos:
        topic = _unit(rng, dim)
        step_centres = [_unit(rng, dim) for _ in range(n_clips + 1)]
        first_id = f'video{len(videos):03d}'
        first, truth, described, _ = _video(rng, first_id, topic, step_centres, list(range(n_clips)),
                                            tokens_per_clip, tokens_per_caption, n_noise, dim)
        videos.append(first)
        truths.append(truth)
        if len(videos) == n_videos:
            break
        # sibling: the first paragraph's step order with one kept step exchanged for the spare step
        order = list(range(n_clips))
        order[truth.swap], order[truth.swap + 1] = order[truth.swap + 1], order[truth.swap]
        candidates = [position for position in range(n_clips)
                      if position not in (truth.swap, truth.swap + 1) and described[position] >= 0]
        replaced = int(rng.choice(candidates))
        order[replaced] = n_clips
        second, second_truth, _, _ = _video(rng, f'video{len(videos):03d}', topic, step_centres, order,
                                            tokens_per_clip, tokens_per_caption, n_noise, dim)
        videos.append(second)
        truths.append(second_truth)
    dataset = Dataset(videos)
    logger.info(f'generated noisy benchmark: {n_videos} videos of {n_clips} clips, dim {dim}, seed {seed}')
    return dataset, truths


def self_copy_dataset(n_videos: int = 4, n_clips: int = 3, dim: int = 16, seed: int = 0) -> Dataset:
    """
    Videos of single token unit clips whose captions copy the clip tokens.
    """
    rng = np.random.default_rng(seed)
    videos = []
    for index in range(n_videos):
        clips = []
        for position in range(n_clips):
            tokens = _noise_tokens(rng, dim, 1)
            clips.append(ClipRecord(tokens, tokens, position * CLIP_SECONDS, (position + 1) * CLIP_SECONDS))
        videos.append(VideoDocument(f'video{index:03d}', clips))
    return Dataset(videos)
