from temporalot import *

"""
Realigning one noisy video with its paragraph.
"""
"""
Generate a small benchmark with planted pairs, a swapped pair and noise captions:
"""
dataset, truths = generate_noisy_benchmark(n_videos=4, seed=7)
"""
Similarity of the first video and its own paragraph:
"""
video = dataset.videos[0]
S = clip_caption_matrix(video, video)
"""
Transport with the prompt bucket:
"""
filtered, distance = norton_distance(S, BucketConfig(quantile=0.3))
"""
... and extract the realignment
"""
alignment = extract_realignment(filtered)
print('distance', distance)
print('pairs', alignment.pair_indices(), 'planted', truths[0].planted_pairs)
print('dropped captions', alignment.dropped_captions, 'noise', truths[0].noise_captions)
