"""Time the numba and numpy kernel backends on the stacked matrix work.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Prints a CSV table on stdout: kernel, n, nodes, numpy_ms, numba_ms, speedup.
Each timing is the best of ``--repeat`` runs after one warm-up call, so numba
compile time is excluded. ``--end-to-end`` also times one synthesis in a
fresh interpreter per backend (that number includes import and compile).
"""

import argparse
import csv
import os
import subprocess
import sys
import time

import numpy as np

from stabkit import _kernels

SIZES = (2, 6, 12, 24)
NODES = (65, 257, 1025)


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return 1e3 * min(times)


def kernel_rows(repeat, rng):
    fast = _kernels.numba_kernels()
    slow = _kernels.NUMPY_KERNELS
    for n in SIZES:
        M = rng.standard_normal((n, n)) / np.sqrt(n)
        X = rng.standard_normal((n, n))
        X = X @ X.T
        for k in NODES:
            ts = np.linspace(0.0, 2.0, k)
            E = slow["expm_stack"](M, ts)
            for name, args in (("expm_stack", (M, ts)), ("congruence_stack", (E, X))):
                a = best_of(slow[name], args, repeat)
                b = best_of(fast[name], args, repeat)
                yield [name, n, k, f"{a:.3f}", f"{b:.3f}", f"{a / b:.2f}"]


END_TO_END = """
import time
from stabkit import make_example, ObservabilityCertificate
from stabkit.feedback import synthesize_main
start = time.perf_counter()
sys_ = make_example("wave-chain", masses=6, damping=0.2)
synthesize_main(sys_, ObservabilityCertificate(1.0, 4.0, 2.0), 2.0)
print(time.perf_counter() - start)
"""


def end_to_end():
    for backend in ("numpy", "numba"):
        env = dict(os.environ, STABKIT_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        print(f"# end-to-end {backend}: {1e3 * float(out.stdout):.1f} ms", file=sys.stderr)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args()

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["kernel", "n", "nodes", "numpy_ms", "numba_ms", "speedup"])
    for row in kernel_rows(args.repeat, np.random.default_rng(args.seed)):
        writer.writerow(row)
        sys.stdout.flush()
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
