#!/usr/bin/env python3
"""Independent statistics reference for cross-checking the harness.

Computes mean, CV and relative CI95 half-width straight from scipy,
without importing srv6kit. Used by the test suite as the brute-force
oracle for the summary statistics.

Usage: stats_reference.py < samples.json > stats.json
   or: stats_reference.py 2 4
Input JSON: a list of sample lists, e.g. [[2, 4], [1.0, 1.1, 0.9]].
"""

import json
import math
import sys

from scipy import stats as sstats


def reference_stats(samples):
    n = len(samples)
    if n < 2:
        raise ValueError("need >= 2 samples")
    mean = math.fsum(samples) / n
    var = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    s = math.sqrt(var)
    t = float(sstats.t.ppf(0.975, n - 1))
    return {
        "mean": mean,
        "cv_pct": s / mean * 100.0,
        "ci95_rel_pct": t * s / (math.sqrt(n) * mean) * 100.0,
        "n": n,
    }


def main():
    if len(sys.argv) > 1:
        sample_sets = [[float(x) for x in sys.argv[1:]]]
    else:
        sample_sets = json.load(sys.stdin)
    print(json.dumps([reference_stats(s) for s in sample_sets]))


if __name__ == "__main__":
    main()
