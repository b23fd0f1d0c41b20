from pathlib import Path

from temporalot import *

"""
Comparing the retrieval measures on a synthetic benchmark.
"""
"""
Write the benchmark to disk:
"""
dataset, _ = generate_noisy_benchmark(n_videos=20, seed=3)
manifest = write_manifest(dataset, Path(__file__).parent / 'benchmark')
"""
Load it again:
"""
dataset = load_dataset(manifest)
"""
... and evaluate every measure
"""
for measure in ('capavg', 'dtw', 'otam', 'ot_norton'):
    report = evaluate_retrieval(dataset, RetrievalConfig(measure, ks=[1, 5]))
    print(measure, report.per_k)
