#!/usr/bin/env python3
"""Benchmark the compiled propagation core against the pure-NumPy fallback.

Runs the same trajectory through both engine implementations and reports
wall time per trajectory plus the relative speedup.  Usage:

    python benchmarks/bench_engine.py [--t-max 7.0] [--dt 0.001] [--repeat 3]
"""
import argparse
import time

import numpy as np


def run(args) -> None:
    import npsim._engine as engine_mod
    from npsim._engine import available_implementations
    from npsim.dynamics import evolve, prepare
    from npsim.model import default_config
    from npsim.noise import sample_trajectory

    cfg = default_config(mode="bath-rtn", dt=args.dt).with_(t_max=args.t_max)
    frame, kernels = prepare(cfg)
    traj = sample_trajectory(cfg.noise, cfg.t_max, 20260810)

    impls = available_implementations()
    results = {}
    reference = None
    original = engine_mod.rk4_sigma_chunk
    try:
        for name, impl in impls.items():
            engine_mod.rk4_sigma_chunk = impl
            evolve(None, traj, cfg, frame, kernels)  # warm-up
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                series = evolve(None, traj, cfg, frame, kernels)
                best = min(best, time.perf_counter() - t0)
            results[name] = best
            pops = series.populations()
            if reference is None:
                reference = pops
            else:
                drift = np.abs(pops - reference).max()
                print(f"  cross-check vs first engine: max population diff {drift:.2e}")
            print(f"{name:8s}: {best * 1e3:8.1f} ms per trajectory "
                  f"({cfg.t_max} ps, dt={cfg.dt})")
    finally:
        engine_mod.rk4_sigma_chunk = original
    if len(results) == 2:
        numpy_t, cython_t = results.get("numpy"), results.get("cython")
        if numpy_t and cython_t:
            print(f"speedup: {numpy_t / cython_t:.1f}x (compiled over fallback)")
    else:
        print("compiled engine not available; only the fallback was benchmarked")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--t-max", type=float, default=7.0)
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--repeat", type=int, default=3)
    run(parser.parse_args())
