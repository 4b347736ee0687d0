"""Time the numba kernels against the pure-numpy fallback.

The backend is fixed at import, so each backend runs in its own
interpreter; this script re-invokes itself with AVGEMB_BACKEND set and
compares wall-clock times and results.

    python3 benchmarks/bench_backends.py --items 500000 --threads 1
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = ("topk", "mc_curve", "analytic_curve")


def _best_of(fn, repeats):
    fn()  # warm-up pays for JIT compilation and page faults
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_worker(args):
    import numpy as np

    from avgemb import _backend, analytic, datasets, evaluator
    from avgemb.stats_core import DistributionSpec, RandomSeed

    _backend.set_threads(args.threads)
    results = {"backend": _backend.BACKEND, "threads": _backend.get_threads()}

    m = datasets.synth(DistributionSpec.normal(), args.items, args.dim, RandomSeed(1), dtype=np.float32)
    q = RandomSeed(2).generator().standard_normal(args.dim)
    secs, idx = _best_of(lambda: evaluator.top_k(q, m, 50), args.repeats)
    results["topk"] = {"seconds": secs, "checksum": int(np.sum(idx * np.arange(1, 51)))}

    small = datasets.synth(DistributionSpec.normal(), 1000, 128, RandomSeed(3))
    ks = [2, 5, 10, 20, 30, 40, 50]
    secs, curve = _best_of(lambda: evaluator.consistency_curve_mc(small, ks, args.trials, RandomSeed(4)), 1)
    results["mc_curve"] = {"seconds": secs, "checksum": list(curve.scores)}

    ms = DistributionSpec.normal().moments
    secs, curve = _best_of(lambda: analytic.consistency_curve(ms, range(2, 51), 1000, 128), 1)
    results["analytic_curve"] = {"seconds": secs, "checksum": list(curve.scores)}
    print(json.dumps(results))


def _spawn(backend, argv):
    env = dict(os.environ, AVGEMB_BACKEND=backend)
    proc = subprocess.run([sys.executable, __file__, "--worker", *argv], env=env, capture_output=True, text=True)
    if proc.returncode:
        sys.exit(f"{backend} worker failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def _agree(a, b):
    if isinstance(a, list):
        return all(abs(x - y) <= 1e-9 for x, y in zip(a, b))
    return a == b


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--items", type=int, default=500_000, help="catalog rows for the top-k query")
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--trials", type=int, default=300, help="Monte Carlo trials per k")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.worker:
        run_worker(args)
        return 0

    forwarded = [f"--items={args.items}", f"--dim={args.dim}", f"--trials={args.trials}",
                 f"--repeats={args.repeats}", f"--threads={args.threads}"]
    fast = _spawn("numba", forwarded)
    slow = _spawn("numpy", forwarded)
    print(f"threads: numba {fast['threads']}, numpy {slow['threads']}")
    print(f"{'workload':<16}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  results")
    for name in WORKLOADS:
        a, b = fast[name], slow[name]
        same = "agree" if _agree(a["checksum"], b["checksum"]) else "DIFFER"
        print(f"{name:<16}{a['seconds']:>10.4f}{b['seconds']:>10.4f}{b['seconds'] / a['seconds']:>8.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
