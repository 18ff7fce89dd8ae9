#!/usr/bin/env python3
"""Compare the jit and pure-numpy stepping kernels.

Two levels:

* raw kernel calls, with both backend modules imported side by side, and
* an end-to-end equilibrium march run in a subprocess per backend, because
  the package picks its backend once at import time via TICSOLVE_BACKEND.

The two backends share their arithmetic, so the value tables they produce
must match bit for bit; the end-to-end section prints both checksums.

Usage: python3 benchmarks/bench_kernels.py [--nx 385] [--nt 400]
       [--controls 65] [--repeat 50] [--skip-full]
"""
from __future__ import annotations

import argparse
import hashlib
import os
import subprocess
import sys
import time

import numpy as np

from ticsolve.kernels import HAS_NUMBA, numpy_backend

_FULL_SNIPPET = """
import hashlib, time
from ticsolve import Grid, SchemeConfig, diagonal_march_solve, get_preset
from ticsolve.kernels import BACKEND
spec = get_preset("two-rate-discount")
warm = Grid(-6.0, 6.0, 21, 1.0, 40)
diagonal_march_solve(spec, warm, SchemeConfig(control_points=5), tau_keep=[0.0])
grid = Grid(-6.0, 6.0, {nx}, 1.0, {nt})
scheme = SchemeConfig(control_points={nu})
t0 = time.perf_counter()
sol = diagonal_march_solve(spec, grid, scheme, tau_keep=[0.0])
elapsed = time.perf_counter() - t0
digest = hashlib.sha256(sol.value.values.tobytes()).hexdigest()
print(f"RESULT {{BACKEND}} {{elapsed:.3f}} {{digest}}")
"""


def time_calls(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_raw(nx, nu, repeat):
    try:
        from ticsolve.kernels import numba_backend
    except ImportError:
        print("raw kernels: numba backend unavailable, nothing to compare")
        return
    rng = np.random.default_rng(0)
    dt = 1e-3
    # hjb_step: one time level, per-control coefficient tables
    hjb_args = (rng.standard_normal(nx), rng.standard_normal(nx),
                *(rng.standard_normal((nx, nu)) for _ in range(4)), dt)
    # frozen_step: a batch of hosted slices advanced with the fixed strategy
    m = 16
    frozen_args = (*(rng.standard_normal((m, nx)) for _ in range(6)), dt)
    print(f"raw kernels (nx={nx}, controls={nu}, batch={m}, best of {repeat})")
    for name, args in (("hjb_step", hjb_args), ("frozen_step", frozen_args)):
        fast = getattr(numba_backend, name)
        slow = getattr(numpy_backend, name)
        out_f, out_s = fast(*args), slow(*args)
        if not isinstance(out_f, tuple):
            out_f, out_s = (out_f,), (out_s,)
        diff = max(float(np.abs(np.asarray(a) - np.asarray(b)).max())
                   for a, b in zip(out_f, out_s))
        t_fast = time_calls(fast, args, repeat)
        t_slow = time_calls(slow, args, repeat)
        print(f"  {name:12s}  numba {t_fast * 1e3:7.3f} ms   "
              f"numpy {t_slow * 1e3:7.3f} ms   speedup {t_slow / t_fast:5.1f}x   "
              f"max|diff| {diff:.1e}")


def bench_full(nx, nt, nu):
    print(f"\nend-to-end diagonal march (nx={nx}, nt={nt}, controls={nu})")
    snippet = _FULL_SNIPPET.format(nx=nx, nt=nt, nu=nu)
    rows = []
    for backend in ("numba", "numpy"):
        if backend == "numba" and not HAS_NUMBA:
            print("  numba backend unavailable, skipping")
            continue
        env = dict(os.environ, TICSOLVE_BACKEND=backend)
        proc = subprocess.run([sys.executable, "-c", snippet], env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"  {backend}: FAILED\n{proc.stderr}")
            continue
        line = [l for l in proc.stdout.splitlines() if l.startswith("RESULT")][-1]
        _, name, elapsed, digest = line.split()
        rows.append((name, float(elapsed), digest))
        print(f"  {name:6s} {float(elapsed):7.3f} s   sha256 {digest[:16]}…")
    if len(rows) == 2:
        same = rows[0][2] == rows[1][2]
        print(f"  value tables {'identical' if same else 'DIFFER'}; "
              f"speedup {rows[1][1] / rows[0][1]:.1f}x")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nx", type=int, default=385)
    parser.add_argument("--nt", type=int, default=400)
    parser.add_argument("--controls", type=int, default=65)
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--skip-full", action="store_true",
                        help="only run the raw kernel comparison")
    args = parser.parse_args(argv)
    bench_raw(args.nx, args.controls, args.repeat)
    if not args.skip_full:
        bench_full(args.nx, args.nt, args.controls)
    return 0


if __name__ == "__main__":
    sys.exit(main())
