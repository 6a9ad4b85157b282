"""Compare the coagulation integrator backends and worker scaling.

Runs the same batch of initial conditions through every available kernel
backend, reports per-trajectory timings plus the worst relative deviation
between backends, then times full dataset generation at several worker
counts.  Worker speedup needs real cores; on a single-core machine the
parallel rows mostly measure process overhead.

Usage::

    python3 benchmarks/bench_kernels.py [--trajectories N] [--samples N]
                                        [--workers 1,4] [--seed S]
"""

import argparse
import time

import numpy as np

import romuq.dataset as ds
from romuq import _kernels


def bench_backends(n_trajectories: int, seed: int) -> None:
    grid = ds.BinGrid()
    time_grid = ds.TimeGrid()
    kernel = ds.CoalescenceKernel()
    params = ds.InitialConditionParams()
    initials = [
        ds.sample_initial_dsd(np.random.SeedSequence([seed, i]), params, grid)
        for i in range(n_trajectories)
    ]

    results = {}
    for name in _kernels.available_backends():
        backend = _kernels.get_backend(name)
        start = time.perf_counter()
        trajectories = [
            ds.simulate_coalescence(row, grid, kernel, time_grid, backend=backend)
            for row in initials
        ]
        elapsed = time.perf_counter() - start
        results[name] = (elapsed, trajectories)
        print(
            f"  {name:<8} {elapsed:8.3f} s total   "
            f"{1e3 * elapsed / n_trajectories:8.3f} ms/trajectory"
        )

    names = list(results)
    if len(names) == 2:
        slow, fast = sorted(names, key=lambda n: -results[n][0])
        print(f"  speedup {results[slow][0] / results[fast][0]:.1f}x ({fast} over {slow})")
        worst = 0.0
        for a, b in zip(results[names[0]][1], results[names[1]][1]):
            scale = np.abs(a.masses).max()
            worst = max(worst, float(np.abs(a.masses - b.masses).max() / scale))
        print(f"  worst relative deviation between backends {worst:.2e}")


def bench_workers(n_samples: int, worker_counts, seed: int) -> None:
    baseline = None
    for workers in worker_counts:
        start = time.perf_counter()
        data = ds.generate_dataset(n_samples, seed=seed, workers=workers)
        elapsed = time.perf_counter() - start
        if baseline is None:
            baseline = elapsed
        print(
            f"  workers={workers:<3} {elapsed:8.3f} s   "
            f"speedup {baseline / elapsed:5.2f}x   "
            f"({len(data.trajectories)} trajectories)"
        )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trajectories", type=int, default=200, metavar="N")
    parser.add_argument("--samples", type=int, default=618, metavar="N")
    parser.add_argument(
        "--workers",
        default="1,4",
        metavar="LIST",
        help="comma-separated worker counts for the generation benchmark",
    )
    parser.add_argument("--seed", type=int, default=0, metavar="S")
    args = parser.parse_args(argv)

    print(f"kernel backends ({args.trajectories} trajectories, seed {args.seed}):")
    bench_backends(args.trajectories, args.seed)
    worker_counts = [int(w) for w in args.workers.split(",") if w]
    print(f"dataset generation ({args.samples} samples):")
    bench_workers(args.samples, worker_counts, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
