#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Runs the three hot paths (recursion sampling, sign-ladder, renewal
walk) on each available backend and prints a throughput table.  The
first numba call includes JIT compilation; a warmup run keeps it out of
the timings.

    python3 benchmarks/bench_backends.py --samples 2000000
"""

import argparse
import math
import time

import numpy as np

from crittail import _backend, models, regvar, simulate
from crittail.renewal import build_renewal


def build_cases():
    coeff = models.calibrate_coeff("two-point", 1.0, a1=2.0, a2=math.exp(-1))
    noise = regvar.HeavyTailLaw(
        alpha=1.0, sv=regvar.SlowlyVaryingSpec("constant"), x_b=1.0
    )
    model = models.PerpetuityModel.build("affine", coeff, noise)
    signed = models.calibrate_coeff("signed-lognormal", 1.0, sigma=1.0, flip=0.5)
    snoise = regvar.HeavyTailLaw(
        alpha=1.0,
        sv=regvar.SlowlyVaryingSpec("constant"),
        x_b=1.0,
        p_right=0.5,
        left_eta=0.0,
    )
    step = models.make_tilted(coeff, 1.0)
    return model, (signed, snoise), step


def bench(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    model, (signed, snoise), step = build_cases()
    grid = np.exp(np.linspace(6.0, 9.0, 7))
    backends = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])

    jobs = {
        "recursion": lambda be: simulate.run_batch(
            model, args.samples, grid, seed=1, backend=be
        ),
        "sign-ladder": lambda be: simulate.run_ladder_batch(
            signed, snoise, args.samples, seed=1, backend=be
        ),
        "renewal-walk": lambda be: build_renewal(
            step,
            method="monte-carlo",
            paths=args.samples,
            seed=1,
            x_min=-8.0,
            x_max=40.0,
            backend=be,
        ),
    }

    print(f"n = {args.samples:,}, best of {args.repeats}")
    print(f"{'job':<14}{'backend':<9}{'seconds':>9}{'Mops/s':>9}")
    base = {}
    for job, runner in jobs.items():
        for be in backends:
            runner(be)  # warmup (JIT compile + caches)
            dt = bench(lambda: runner(be), args.repeats)
            rate = args.samples / dt / 1e6
            note = ""
            if be == "numpy":
                base[job] = dt
            else:
                note = f"  ({base[job] / dt:.1f}x vs numpy)"
            print(f"{job:<14}{be:<9}{dt:>9.3f}{rate:>9.2f}{note}")


if __name__ == "__main__":
    main()
