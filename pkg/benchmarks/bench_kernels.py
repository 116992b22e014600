"""Compare the compiled kinematics kernels against the pure-Python fallback.

Runs the same public-API workloads with each kernel module swapped in and
prints the best-of-N wall time per workload plus the speedup.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

from __future__ import annotations

import argparse
import importlib
import timeit

import numpy as np

import rvasim.kinematics as kin
from rvasim.procedure import needle_rotation


def workloads(chain, rng):
    lo, hi = chain.limits
    qs = chain.q_home + rng.uniform(-0.3, 0.3, (200, 9))
    qs[:, 6:] = lo[6:] + rng.random((200, 3)) * (hi[6:] - lo[6:])
    qs = np.clip(qs, lo, hi)
    targets = [kin.forward_kinematics(chain, q) for q in qs[:50]]
    rot = needle_rotation(np.radians(20.0))
    start = kin.forward_kinematics(chain, chain.q_home).translation
    path = start + np.outer(np.linspace(0.0, 8.0, 400), rot[:, 2])

    return {
        "forward_kinematics x200": lambda: [kin.forward_kinematics(chain, q) for q in qs],
        "jacobian x200": lambda: [kin.jacobian(chain, q) for q in qs],
        "inverse_kinematics x50": lambda: [kin.inverse_kinematics(chain, t, chain.q_home) for t in targets],
        "track_path 400 pts": lambda: kin.track_path(chain, rot, path, chain.q_home),
        "frame_positions x200": lambda: kin.frame_positions(chain, qs),
    }


def time_with(module, repeat):
    kin._k = module
    jobs = workloads(kin.default_chain(), np.random.default_rng(0))
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in jobs.items()}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    py = importlib.import_module("rvasim.kinematics._kernels_py")
    try:
        cy = importlib.import_module("rvasim.kinematics._kernels")
    except ImportError:
        print("compiled kernels not built; only the fallback is available")
        cy = None

    original = kin._k
    try:
        slow = time_with(py, args.repeat)
        fast = time_with(cy, args.repeat) if cy else {}
    finally:
        kin._k = original

    print(f"{'workload':<26} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, t_py in slow.items():
        t_cy = fast.get(name)
        cy_col = f"{t_cy * 1e3:10.2f}" if t_cy else f"{'-':>10}"
        ratio = f"{t_py / t_cy:7.1f}x" if t_cy else f"{'-':>8}"
        print(f"{name:<26} {t_py * 1e3:10.2f} {cy_col} {ratio}")


if __name__ == "__main__":
    main()
