"""Small Monte-Carlo comparison of HFR against seven baselines.

``python demos/benchmark.py [spec] [runs]`` (defaults: spec a, 50 runs).
Each run draws train, validation and test samples, tunes every method on the
validation split and scores it on the test split.
"""

import sys

from hfreg.simulation import run_benchmark

spec = sys.argv[1] if len(sys.argv) > 1 else "a"
runs = int(sys.argv[2]) if len(sys.argv) > 2 else 50

(report,) = run_benchmark([spec], runs=runs, seed=2024)
print(report.table())
best = min(report.rows(), key=lambda r: r["median_mse"])
print(f"lowest median test MSE: {best['method']}")
